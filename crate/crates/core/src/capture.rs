//! Linear-inverted-pendulum capture point and greedy N-step capture planning.

use serde::{Deserialize, Serialize};

use crate::dynamics::CartesianBodyState;
use crate::error::{Error, Result};

/// Foot placements closer than this to the capture point count as capturing.
const CAPTURE_EPS: f64 = 1e-9;

/// Point-mass pendulum state at constant height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipState {
    /// Horizontal body position (m).
    pub x: f64,
    /// Horizontal body velocity (m/s).
    pub x_dot: f64,
    /// Constant pendulum height (m), positive.
    pub z: f64,
}

impl LipState {
    pub fn new(x: f64, x_dot: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && x_dot.is_finite() && z.is_finite()) {
            return Err(Error::NonFinite("pendulum state"));
        }
        if z <= 0.0 {
            return Err(Error::InvalidInput(format!("pendulum height must be positive, got {z}")));
        }
        Ok(Self { x, x_dot, z })
    }

    /// Horizontal handoff state of a body at the end of stance.
    pub fn from_body(body: &CartesianBodyState) -> Result<Self> {
        Self::new(body.x, body.x_dot, body.z)
    }

    /// Closed-form constant-height evolution about a fixed foothold:
    /// x'' = (g/z) (x - foot_x).
    pub fn evolve(&self, foot_x: f64, duration: f64, g: f64) -> Self {
        let omega = (g / self.z).sqrt();
        let xi = self.x - foot_x;
        let (sh, ch) = ((omega * duration).sinh(), (omega * duration).cosh());
        Self {
            x: foot_x + xi * ch + self.x_dot / omega * sh,
            x_dot: xi * omega * sh + self.x_dot * ch,
            z: self.z,
        }
    }
}

/// Selector inputs for the minimum landing speed and stepping envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureSpec {
    /// Speed amplification over the bare capture-point requirement, > 1.
    pub eta_vx: f64,
    /// Initial attack angle (rad), in (0, pi/2).
    pub alpha_0: f64,
    /// Maximum step length (m), positive.
    pub reach: f64,
}

impl CaptureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_vx.is_finite() && self.alpha_0.is_finite() && self.reach.is_finite()) {
            return Err(Error::NonFinite("capture spec"));
        }
        if self.eta_vx <= 1.0 {
            return Err(Error::InvalidInput(format!(
                "speed amplification must exceed 1, got {}",
                self.eta_vx
            )));
        }
        if self.reach <= 0.0 {
            return Err(Error::InvalidInput(format!("reach must be positive, got {}", self.reach)));
        }
        min_horizontal_speed(self.alpha_0, self.eta_vx).map(|_| ())
    }
}

/// One greedy foothold: the body state at placement time and where the foot lands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureStep {
    pub foot_x: f64,
    pub x: f64,
    pub x_dot: f64,
}

/// Foot placement sequence and whether it ends over the capture point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturePlan {
    pub steps: Vec<CaptureStep>,
    pub captured: bool,
}

/// Where the pendulum must step to come to rest: x + x_dot * sqrt(z/g).
pub fn capture_point(s: &LipState, g: f64) -> Result<f64> {
    if s.z <= 0.0 {
        return Err(Error::InvalidInput(format!("pendulum height must be positive, got {}", s.z)));
    }
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::InvalidInput(format!("gravity must be positive, got {g}")));
    }
    Ok(s.x + s.x_dot * (s.z / g).sqrt())
}

/// Minimum non-dimensional landing speed that keeps the capture point
/// reachable from the touchdown geometry: eta_vx * cos(alpha_0) / sqrt(sin(alpha_0)).
pub fn min_horizontal_speed(alpha_0: f64, eta_vx: f64) -> Result<f64> {
    if !(alpha_0.is_finite() && eta_vx.is_finite()) {
        return Err(Error::NonFinite("speed selector input"));
    }
    if alpha_0 <= 0.0 || alpha_0 >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Precondition(format!(
            "attack angle must lie strictly between 0 and pi/2, got {alpha_0}"
        )));
    }
    if eta_vx <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "speed amplification must be positive, got {eta_vx}"
        )));
    }
    Ok(eta_vx * alpha_0.cos() / alpha_0.sin().sqrt())
}

/// Greedy capture with at most `max_steps` placements of length <= `reach`,
/// starting from a stance foot at the origin. Each non-capturing step lands at
/// full reach toward the capture point and the pendulum evolves for
/// 0.5 sqrt(z/g) before the next decision.
pub fn n_step_capture(s: &LipState, max_steps: usize, reach: f64, g: f64) -> Result<CapturePlan> {
    let s = LipState::new(s.x, s.x_dot, s.z)?;
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::InvalidInput(format!("gravity must be positive, got {g}")));
    }
    if !(reach.is_finite() && reach > 0.0) {
        return Err(Error::InvalidInput(format!("reach must be positive, got {reach}")));
    }

    let step_time = 0.5 * (s.z / g).sqrt();
    let mut foot = 0.0f64;
    let mut state = s;
    let mut steps = Vec::new();
    loop {
        let cp = capture_point(&state, g)?;
        if (cp - foot).abs() < CAPTURE_EPS {
            return Ok(CapturePlan { steps, captured: true });
        }
        if steps.len() == max_steps {
            return Ok(CapturePlan { steps, captured: false });
        }
        if (cp - foot).abs() <= reach {
            steps.push(CaptureStep { foot_x: cp, x: state.x, x_dot: state.x_dot });
            return Ok(CapturePlan { steps, captured: true });
        }
        foot += (cp - foot).signum() * reach;
        steps.push(CaptureStep { foot_x: foot, x: state.x, x_dot: state.x_dot });
        state = state.evolve(foot, step_time, g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    const G: f64 = 9.8;

    /// Fixed-step RK4 on x'' = (g/z)(x - foot), the oracle for the closed form.
    fn rk4_pendulum(s: &LipState, foot: f64, duration: f64, g: f64, n_steps: usize) -> LipState {
        let h = duration / n_steps as f64;
        let accel = |x: f64| g / s.z * (x - foot);
        let (mut x, mut v) = (s.x, s.x_dot);
        for _ in 0..n_steps {
            let (k1x, k1v) = (v, accel(x));
            let (k2x, k2v) = (v + 0.5 * h * k1v, accel(x + 0.5 * h * k1x));
            let (k3x, k3v) = (v + 0.5 * h * k2v, accel(x + 0.5 * h * k2x));
            let (k4x, k4v) = (v + h * k3v, accel(x + h * k3x));
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        LipState { x, x_dot: v, z: s.z }
    }

    #[test]
    fn closed_form_evolution_matches_integrated_pendulum() {
        let cases = [
            (0.3, -0.8, 1.0, 0.1, 0.25),
            (-0.5, 1.7, 0.7, -0.2, 0.4),
            (0.0, 0.9, 1.3, 0.6, 0.15),
            (1.2, -2.1, 0.9, 0.9, 0.3),
        ];
        for (x, x_dot, z, foot, duration) in cases {
            let s = LipState::new(x, x_dot, z).unwrap();
            let exact = s.evolve(foot, duration, G);
            let numeric = rk4_pendulum(&s, foot, duration, G, 4000);
            assert_abs_diff_eq!(exact.x, numeric.x, epsilon = 1e-9);
            assert_abs_diff_eq!(exact.x_dot, numeric.x_dot, epsilon = 1e-9);
        }
    }

    #[test]
    fn capture_point_offset_scales_with_velocity_and_height() {
        let s = LipState::new(0.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(capture_point(&s, G).unwrap(), 0.31944, epsilon = 1e-5);

        let resting = LipState::new(0.4, 0.0, 1.0).unwrap();
        assert_eq!(capture_point(&resting, G).unwrap(), 0.4);

        let doubled = LipState::new(0.0, 2.0, 1.0).unwrap();
        assert_eq!(capture_point(&doubled, G).unwrap(), 2.0 * capture_point(&s, G).unwrap());
    }

    #[test]
    fn capture_point_rejects_bad_geometry() {
        assert!(LipState::new(0.0, 1.0, 0.0).is_err());
        assert!(LipState::new(0.0, 1.0, -0.2).is_err());
        let s = LipState { x: 0.0, x_dot: 1.0, z: -1.0 };
        assert!(capture_point(&s, G).is_err());
        let ok = LipState::new(0.0, 1.0, 1.0).unwrap();
        assert!(capture_point(&ok, 0.0).is_err());
    }

    #[test]
    fn min_speed_matches_published_two_decimal_spans() {
        for (deg, printed) in [(60.0, 0.80), (55.0, 0.95), (50.0, 1.10)] {
            let v = min_horizontal_speed((deg as f64).to_radians(), 1.5).unwrap();
            assert_eq!((v * 100.0).floor() / 100.0, printed);
            assert!((v - printed).abs() <= 0.01);
        }
    }

    #[test]
    fn min_speed_rejects_out_of_range_angles() {
        assert!(min_horizontal_speed(0.0, 1.5).is_err());
        assert!(min_horizontal_speed(std::f64::consts::FRAC_PI_2, 1.5).is_err());
        assert!(min_horizontal_speed(-0.3, 1.5).is_err());
        assert!(min_horizontal_speed(0.5, 0.0).is_err());
    }

    #[test]
    fn capture_spec_validates_amplification() {
        let good = CaptureSpec { eta_vx: 1.5, alpha_0: 1.0, reach: 0.9 };
        assert!(good.validate().is_ok());
        assert!(CaptureSpec { eta_vx: 1.0, ..good }.validate().is_err());
        assert!(CaptureSpec { reach: 0.0, ..good }.validate().is_err());
        assert!(CaptureSpec { alpha_0: 2.0, ..good }.validate().is_err());
    }

    #[test]
    fn resting_over_foot_needs_no_steps() {
        let s = LipState::new(0.0, 0.0, 1.0).unwrap();
        let plan = n_step_capture(&s, 3, 0.9, G).unwrap();
        assert!(plan.captured);
        assert!(plan.steps.is_empty());
    }

    #[test]
    fn capture_point_on_reach_boundary_takes_one_step() {
        let reach = 0.5;
        let s = LipState::new(0.1, 0.4 * G.sqrt(), 1.0).unwrap();
        assert_relative_eq!(capture_point(&s, G).unwrap(), reach, epsilon = 1e-12);
        let plan = n_step_capture(&s, 3, reach, G).unwrap();
        assert!(plan.captured);
        assert_eq!(plan.steps.len(), 1);
        assert_relative_eq!(plan.steps[0].foot_x, reach, epsilon = 1e-12);
    }

    #[test]
    fn fast_state_is_captured_after_several_shrinking_steps() {
        let s = LipState::new(0.0, 2.2, 1.0).unwrap();
        let plan = n_step_capture(&s, 5, 0.6, G).unwrap();
        assert!(plan.captured);
        assert!(plan.steps.len() > 1);
        for w in plan.steps.windows(2) {
            assert!(w[1].foot_x > w[0].foot_x);
            assert!(w[1].x_dot < w[0].x_dot);
        }
    }

    #[test]
    fn allowing_more_steps_never_loses_capture() {
        let s = LipState::new(0.0, 2.2, 1.0).unwrap();
        let mut first_captured = None;
        for n in 0..8 {
            let plan = n_step_capture(&s, n, 0.6, G).unwrap();
            if plan.captured && first_captured.is_none() {
                first_captured = Some((n, plan.clone()));
            }
            if let Some((k, ref base)) = first_captured {
                if n >= k {
                    assert!(plan.captured);
                    assert_eq!(plan.steps, base.steps);
                }
            }
        }
        assert!(first_captured.is_some());
    }

    #[test]
    fn handoff_from_body_state_keeps_height_and_speed() {
        let body = CartesianBodyState { x: -0.2, z: 0.95, x_dot: 1.4, z_dot: 0.0 };
        let s = LipState::from_body(&body).unwrap();
        assert_eq!((s.x, s.x_dot, s.z), (-0.2, 1.4, 0.95));
        let sunk = CartesianBodyState { x: 0.0, z: -0.1, x_dot: 1.0, z_dot: 0.0 };
        assert!(LipState::from_body(&sunk).is_err());
    }
}
