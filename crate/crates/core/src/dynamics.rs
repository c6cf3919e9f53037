//! Planar inverted pendulum with flywheel: a point-mass body with rotational
//! inertia on a massless telescoping leg, foot pinned during stance.
//!
//! Generalized coordinates are `Q = [r, beta, gamma]`: leg length, hip angle
//! and body pitch. The leg angle from the ground is `alpha = beta + gamma`.
//! Controls are `U = [F, tau]`: leg force along the leg and hip torque.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) type StateVec = SVector<f64, 6>;
pub(crate) type CtrlVec = SVector<f64, 2>;
pub(crate) type StateJac = SMatrix<f64, 6, 6>;
pub(crate) type CtrlJac = SMatrix<f64, 6, 2>;

/// Physical parameters. `leg_length` is the leg's rest length at touchdown
/// and doubles as the model's length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Body mass [kg].
    pub mass: f64,
    /// Body rotational inertia about its center [kg m^2].
    pub inertia: f64,
    /// Gravitational acceleration [m/s^2].
    pub gravity: f64,
    /// Leg rest length [m].
    pub leg_length: f64,
}

impl ModelParams {
    pub fn new(mass: f64, inertia: f64, gravity: f64, leg_length: f64) -> Result<Self> {
        let p = Self { mass, inertia, gravity, leg_length };
        for (v, name) in [
            (mass, "mass"),
            (inertia, "inertia"),
            (gravity, "gravity"),
            (leg_length, "leg_length"),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if v <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(p)
    }

    /// Unit-scale model (`m = g = r0 = 1`) with the given dimensionless
    /// inertia. Trajectories of any model map onto one of these.
    pub fn unit_from_inertia_nd(inertia_nd: f64) -> Result<Self> {
        Self::new(1.0, inertia_nd, 1.0, 1.0)
    }

    /// Dimensionless body inertia `I / (m r0^2)`.
    pub fn inertia_nd(&self) -> f64 {
        self.inertia / (self.mass * self.leg_length * self.leg_length)
    }

    /// Characteristic time `sqrt(r0 / g)`.
    pub fn time_scale(&self) -> f64 {
        (self.leg_length / self.gravity).sqrt()
    }
}

/// Stance state at time `t`. Angles in radians, lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipfState {
    pub t: f64,
    pub r: f64,
    pub beta: f64,
    pub gamma: f64,
    pub r_dot: f64,
    pub beta_dot: f64,
    pub gamma_dot: f64,
}

impl PipfState {
    /// Leg angle from the ground plane.
    pub fn alpha(&self) -> f64 {
        self.beta + self.gamma
    }

    pub fn alpha_dot(&self) -> f64 {
        self.beta_dot + self.gamma_dot
    }

    pub fn is_finite(&self) -> bool {
        [self.t, self.r, self.beta, self.gamma, self.r_dot, self.beta_dot, self.gamma_dot]
            .iter()
            .all(|v| v.is_finite())
    }

    pub(crate) fn to_vec(self) -> StateVec {
        StateVec::from([self.r, self.beta, self.gamma, self.r_dot, self.beta_dot, self.gamma_dot])
    }

    pub(crate) fn from_vec(t: f64, x: &StateVec) -> Self {
        Self { t, r: x[0], beta: x[1], gamma: x[2], r_dot: x[3], beta_dot: x[4], gamma_dot: x[5] }
    }
}

/// Actuation: leg force along the leg axis and hip torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub force: f64,
    pub torque: f64,
}

impl ControlInput {
    pub(crate) fn to_vec(self) -> CtrlVec {
        CtrlVec::from([self.force, self.torque])
    }

    pub(crate) fn from_vec(u: &CtrlVec) -> Self {
        Self { force: u[0], torque: u[1] }
    }
}

/// Pinned foot position on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FootState {
    pub x: f64,
    pub z: f64,
}

/// Body center position and velocity in the sagittal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianBodyState {
    pub x: f64,
    pub z: f64,
    pub x_dot: f64,
    pub z_dot: f64,
}

impl CartesianBodyState {
    /// Angle of the velocity vector below the horizontal; positive while
    /// descending.
    pub fn velocity_angle(&self) -> f64 {
        (-self.z_dot).atan2(self.x_dot)
    }
}

/// Ground reaction force acting on the foot [N].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundReaction {
    pub fx: f64,
    pub fz: f64,
}

impl GroundReaction {
    /// Friction coefficient required to realize this contact force.
    pub fn required_friction(&self) -> f64 {
        (self.fx / self.fz).abs()
    }
}

/// Manipulator-form terms of the equations of motion
/// `M(Q) Qdd + b(Q, Qd) + g(Q) = [F, tau, -tau]`.
pub fn eom_terms(
    q: &Vector3<f64>,
    q_dot: &Vector3<f64>,
    params: &ModelParams,
) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
    let (m, g) = (params.mass, params.gravity);
    let r = q[0];
    let alpha = q[1] + q[2];
    let alpha_dot = q_dot[1] + q_dot[2];

    let mass_matrix = Matrix3::new(
        m, 0.0, 0.0, //
        0.0, m * r * r, m * r * r, //
        0.0, 0.0, params.inertia,
    );
    let velocity_bias = Vector3::new(
        -m * r * alpha_dot * alpha_dot,
        2.0 * m * r * q_dot[0] * alpha_dot,
        0.0,
    );
    let gravity_vec = Vector3::new(g * m * alpha.sin(), g * m * r * alpha.cos(), 0.0);
    (mass_matrix, velocity_bias, gravity_vec)
}

/// Generalized force vector for the actuation `U`.
pub fn generalized_force(u: &ControlInput) -> Vector3<f64> {
    Vector3::new(u.force, u.torque, -u.torque)
}

/// Joint accelerations `[rdd, betadd, gammadd]` from the equations of motion.
pub fn forward_dynamics(
    state: &PipfState,
    u: &ControlInput,
    params: &ModelParams,
) -> Result<Vector3<f64>> {
    if !state.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    if !(u.force.is_finite() && u.torque.is_finite()) {
        return Err(Error::NonFinite("control"));
    }
    if state.r.abs() < 1e-12 {
        return Err(Error::SingularMass { r: state.r });
    }
    let x = state.to_vec();
    let uv = u.to_vec();
    let dx = state_derive(&x, &uv, params);
    Ok(Vector3::new(dx[3], dx[4], dx[5]))
}

/// Time derivative of `[r, beta, gamma, rd, betad, gammad]`. The mass matrix
/// is block triangular, so the accelerations are solved in closed form.
pub(crate) fn state_derive(x: &StateVec, u: &CtrlVec, params: &ModelParams) -> StateVec {
    let (m, g, inertia) = (params.mass, params.gravity, params.inertia);
    let (r, r_dot) = (x[0], x[3]);
    let alpha = x[1] + x[2];
    let alpha_dot = x[4] + x[5];
    let (sin_a, cos_a) = alpha.sin_cos();

    let r_dd = u[0] / m + r * alpha_dot * alpha_dot - g * sin_a;
    // alpha_dd from the hip row, divided through by m r^2.
    let alpha_dd = u[1] / (m * r * r) - 2.0 * r_dot * alpha_dot / r - g * cos_a / r;
    let gamma_dd = -u[1] / inertia;

    StateVec::from([x[3], x[4], x[5], r_dd, alpha_dd - gamma_dd, gamma_dd])
}

/// Jacobians of `state_derive` with respect to state and control.
pub(crate) fn state_derive_jac(
    x: &StateVec,
    u: &CtrlVec,
    params: &ModelParams,
) -> (StateJac, CtrlJac) {
    let (m, g, inertia) = (params.mass, params.gravity, params.inertia);
    let (r, r_dot) = (x[0], x[3]);
    let alpha = x[1] + x[2];
    let alpha_dot = x[4] + x[5];
    let (sin_a, cos_a) = alpha.sin_cos();
    let r2 = r * r;

    let mut fx = StateJac::zeros();
    fx[(0, 3)] = 1.0;
    fx[(1, 4)] = 1.0;
    fx[(2, 5)] = 1.0;

    // d(rdd)/d(.)
    let drdd_dr = alpha_dot * alpha_dot;
    let drdd_dangle = -g * cos_a;
    let drdd_dadot = 2.0 * r * alpha_dot;
    fx[(3, 0)] = drdd_dr;
    fx[(3, 1)] = drdd_dangle;
    fx[(3, 2)] = drdd_dangle;
    fx[(3, 4)] = drdd_dadot;
    fx[(3, 5)] = drdd_dadot;

    // d(alphadd)/d(.)
    let dadd_dr = -2.0 * u[1] / (m * r2 * r) + 2.0 * r_dot * alpha_dot / r2 + g * cos_a / r2;
    let dadd_dangle = g * sin_a / r;
    let dadd_drdot = -2.0 * alpha_dot / r;
    let dadd_dadot = -2.0 * r_dot / r;
    // gammadd has no state dependence, so the beta row equals the alpha row.
    fx[(4, 0)] = dadd_dr;
    fx[(4, 1)] = dadd_dangle;
    fx[(4, 2)] = dadd_dangle;
    fx[(4, 3)] = dadd_drdot;
    fx[(4, 4)] = dadd_dadot;
    fx[(4, 5)] = dadd_dadot;

    let mut fu = CtrlJac::zeros();
    fu[(3, 0)] = 1.0 / m;
    fu[(4, 1)] = 1.0 / (m * r2) + 1.0 / inertia;
    fu[(5, 1)] = -1.0 / inertia;
    (fx, fu)
}

/// Body center position and velocity from the stance state and foot pin.
pub fn cartesian_body_state(state: &PipfState, foot: &FootState) -> CartesianBodyState {
    let alpha = state.alpha();
    let alpha_dot = state.alpha_dot();
    let (sin_a, cos_a) = alpha.sin_cos();
    CartesianBodyState {
        x: foot.x - state.r * cos_a,
        z: foot.z + state.r * sin_a,
        x_dot: -(state.r_dot * cos_a - state.r * alpha_dot * sin_a),
        z_dot: state.r_dot * sin_a + state.r * alpha_dot * cos_a,
    }
}

/// Ground reaction force from Newton's second law applied to the body
/// center: `F_f = m (a - g_vec)` with `a` obtained by differentiating the
/// foot-to-body kinematics twice.
pub fn ground_reaction(
    state: &PipfState,
    u: &ControlInput,
    params: &ModelParams,
) -> Result<GroundReaction> {
    let q_dd = forward_dynamics(state, u, params)?;
    let (r_dd, alpha_dd) = (q_dd[0], q_dd[1] + q_dd[2]);
    let (r, r_dot) = (state.r, state.r_dot);
    let alpha = state.alpha();
    let alpha_dot = state.alpha_dot();
    let (sin_a, cos_a) = alpha.sin_cos();

    let x_dd = -r_dd * cos_a
        + 2.0 * r_dot * alpha_dot * sin_a
        + r * alpha_dd * sin_a
        + r * alpha_dot * alpha_dot * cos_a;
    let z_dd = r_dd * sin_a + 2.0 * r_dot * alpha_dot * cos_a + r * alpha_dd * cos_a
        - r * alpha_dot * alpha_dot * sin_a;
    Ok(GroundReaction {
        fx: params.mass * x_dd,
        fz: params.mass * (z_dd + params.gravity),
    })
}

/// Total mechanical energy with the foot pinned at the origin.
pub fn mechanical_energy(state: &PipfState, params: &ModelParams) -> f64 {
    let cart = cartesian_body_state(state, &FootState::default());
    let v2 = cart.x_dot * cart.x_dot + cart.z_dot * cart.z_dot;
    0.5 * params.mass * v2
        + 0.5 * params.inertia * state.gamma_dot * state.gamma_dot
        + params.mass * params.gravity * cart.z
}

/// One integration step and whether the leg length left `(0, r0]` at any
/// evaluation point. The event is reported, never clipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationStep {
    pub state: PipfState,
    pub r_event: bool,
}

pub(crate) fn rk4_step(x: &StateVec, u: &CtrlVec, h: f64, params: &ModelParams) -> StateVec {
    let k1 = state_derive(x, u, params);
    let k2 = state_derive(&(x + k1 * (h / 2.0)), u, params);
    let k3 = state_derive(&(x + k2 * (h / 2.0)), u, params);
    let k4 = state_derive(&(x + k3 * h), u, params);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// `rk4_step` together with the step transition Jacobians `A = d x_next / d x`
/// and `B = d x_next / d u`, chained through the four stages.
pub(crate) fn rk4_step_jac(
    x: &StateVec,
    u: &CtrlVec,
    h: f64,
    params: &ModelParams,
) -> (StateVec, StateJac, CtrlJac) {
    let id = StateJac::identity();

    let k1 = state_derive(x, u, params);
    let (f1x, f1u) = state_derive_jac(x, u, params);

    let x2 = x + k1 * (h / 2.0);
    let k2 = state_derive(&x2, u, params);
    let (f2x, f2u) = state_derive_jac(&x2, u, params);
    let k2x = f2x * (id + f1x * (h / 2.0));
    let k2u = f2x * f1u * (h / 2.0) + f2u;

    let x3 = x + k2 * (h / 2.0);
    let k3 = state_derive(&x3, u, params);
    let (f3x, f3u) = state_derive_jac(&x3, u, params);
    let k3x = f3x * (id + k2x * (h / 2.0));
    let k3u = f3x * k2u * (h / 2.0) + f3u;

    let x4 = x + k3 * h;
    let k4 = state_derive(&x4, u, params);
    let (f4x, f4u) = state_derive_jac(&x4, u, params);
    let k4x = f4x * (id + k3x * h);
    let k4u = f4x * k3u * h + f4u;

    let x_next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let a = id + (f1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
    let b = (f1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
    (x_next, a, b)
}

/// Advance the stance dynamics by `dt` with zero-order-hold controls
/// (classical fourth-order Runge-Kutta).
pub fn integrate_step(
    state: &PipfState,
    u: &ControlInput,
    dt: f64,
    params: &ModelParams,
) -> Result<IntegrationStep> {
    if !state.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    if !(u.force.is_finite() && u.torque.is_finite()) {
        return Err(Error::NonFinite("control"));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }

    let x = state.to_vec();
    let uv = u.to_vec();
    let h = dt;
    let r_ok = |v: &StateVec| v[0] > 0.0 && v[0] <= params.leg_length;

    let k1 = state_derive(&x, &uv, params);
    let x2 = x + k1 * (h / 2.0);
    let k2 = state_derive(&x2, &uv, params);
    let x3 = x + k2 * (h / 2.0);
    let k3 = state_derive(&x3, &uv, params);
    let x4 = x + k3 * h;
    let k4 = state_derive(&x4, &uv, params);
    let x_next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);

    let r_event = !(r_ok(&x) && r_ok(&x2) && r_ok(&x3) && r_ok(&x4) && r_ok(&x_next));
    Ok(IntegrationStep { state: PipfState::from_vec(state.t + dt, &x_next), r_event })
}

/// Touchdown stance state from Cartesian touchdown conditions: body velocity
/// `(vx, vz)`, leg angle `alpha`, body pitch `gamma`, full leg extension.
/// The velocity rows of the foot-to-body kinematics are inverted for
/// `(r_dot, alpha_dot)`; the 2x2 system has determinant `-r` and is
/// nonsingular for any extended leg.
pub fn touchdown_state(
    vx: f64,
    vz: f64,
    alpha: f64,
    gamma: f64,
    gamma_dot: f64,
    params: &ModelParams,
) -> Result<PipfState> {
    for (v, name) in [(vx, "vx"), (vz, "vz"), (alpha, "alpha"), (gamma, "gamma"), (gamma_dot, "gamma_dot")]
    {
        if !v.is_finite() {
            return Err(Error::NonFinite(name));
        }
    }
    let r = params.leg_length;
    let (sin_a, cos_a) = alpha.sin_cos();
    let r_dot = vz * sin_a - vx * cos_a;
    let alpha_dot = (vz * cos_a + vx * sin_a) / r;
    Ok(PipfState {
        t: 0.0,
        r,
        beta: alpha - gamma,
        gamma,
        r_dot,
        beta_dot: alpha_dot - gamma_dot,
        gamma_dot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn reference_params() -> ModelParams {
        // 80 kg body at 1 m leg length, I = 0.04 * m * r0^2.
        ModelParams::new(80.0, 3.2, 9.8, 1.0).unwrap()
    }

    fn sample_state() -> PipfState {
        PipfState {
            t: 0.0,
            r: 0.8,
            beta: 1.0,
            gamma: 0.3,
            r_dot: -0.5,
            beta_dot: 2.0,
            gamma_dot: -1.0,
        }
    }

    #[test]
    fn mass_matrix_structure_upright() {
        let p = reference_params();
        let q = Vector3::new(1.0, std::f64::consts::FRAC_PI_2, 0.0);
        let (m, b, g) = eom_terms(&q, &Vector3::zeros(), &p);
        let expected = Matrix3::new(80.0, 0.0, 0.0, 0.0, 80.0, 80.0, 0.0, 0.0, 3.2);
        assert_abs_diff_eq!(m, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(b, Vector3::zeros(), epsilon = 1e-12);
        // Gravity acts purely along the leg when the body is overhead.
        assert_abs_diff_eq!(g, Vector3::new(784.0, 0.0, 0.0), epsilon = 1e-10);
    }

    #[test]
    fn gravity_vector_horizontal_leg() {
        let p = reference_params();
        let q = Vector3::new(1.0, 0.0, 0.0);
        let (_, _, g) = eom_terms(&q, &Vector3::zeros(), &p);
        assert_abs_diff_eq!(g, Vector3::new(0.0, 784.0, 0.0), epsilon = 1e-10);
    }

    #[test]
    fn bias_terms_at_reference_state() {
        let p = reference_params();
        let s = sample_state();
        let q = Vector3::new(s.r, s.beta, s.gamma);
        let qd = Vector3::new(s.r_dot, s.beta_dot, s.gamma_dot);
        let (_, b, g) = eom_terms(&q, &qd, &p);
        // alpha_dot = 1: b = [-m r, 2 m r rdot, 0].
        assert_abs_diff_eq!(b, Vector3::new(-64.0, -64.0, 0.0), epsilon = 1e-12);
        let alpha: f64 = 1.3;
        assert_relative_eq!(g[0], 784.0 * alpha.sin(), epsilon = 1e-12);
        assert_relative_eq!(g[1], 9.8 * 80.0 * 0.8 * alpha.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(g[2], 0.0);
    }

    #[test]
    fn forward_dynamics_matches_matrix_solve() {
        let p = reference_params();
        let states = [
            sample_state(),
            PipfState { t: 0.0, r: 0.55, beta: 2.1, gamma: -0.7, r_dot: 1.2, beta_dot: -3.0, gamma_dot: 2.5 },
            PipfState { t: 0.0, r: 0.97, beta: 0.4, gamma: 0.9, r_dot: -2.0, beta_dot: 0.1, gamma_dot: -0.2 },
        ];
        let u = ControlInput { force: 410.0, torque: -130.0 };
        for s in states {
            let q = Vector3::new(s.r, s.beta, s.gamma);
            let qd = Vector3::new(s.r_dot, s.beta_dot, s.gamma_dot);
            let (m, b, g) = eom_terms(&q, &qd, &p);
            let expected = m.try_inverse().unwrap() * (generalized_force(&u) - b - g);
            let got = forward_dynamics(&s, &u, &p).unwrap();
            assert_relative_eq!(got, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn static_hover_has_zero_acceleration() {
        let p = reference_params();
        let s = PipfState {
            t: 0.0,
            r: 1.0,
            beta: std::f64::consts::FRAC_PI_2,
            gamma: 0.0,
            r_dot: 0.0,
            beta_dot: 0.0,
            gamma_dot: 0.0,
        };
        let u = ControlInput { force: 80.0 * 9.8, torque: 0.0 };
        let q_dd = forward_dynamics(&s, &u, &p).unwrap();
        assert_abs_diff_eq!(q_dd, Vector3::zeros(), epsilon = 1e-10);
    }

    #[test]
    fn singular_leg_is_rejected() {
        let p = reference_params();
        let mut s = sample_state();
        s.r = 0.0;
        assert!(matches!(
            forward_dynamics(&s, &ControlInput { force: 0.0, torque: 0.0 }, &p),
            Err(Error::SingularMass { .. })
        ));
    }

    #[test]
    fn cartesian_map_at_sixty_degrees() {
        let s = PipfState {
            t: 0.0,
            r: 1.0,
            beta: 60f64.to_radians(),
            gamma: 0.0,
            r_dot: 0.0,
            beta_dot: 0.0,
            gamma_dot: 0.0,
        };
        let c = cartesian_body_state(&s, &FootState::default());
        assert_relative_eq!(c.x, -0.5, epsilon = 1e-12);
        assert_relative_eq!(c.z, 0.86603, epsilon = 1e-5);
    }

    #[test]
    fn cartesian_velocity_overhead_sweep() {
        // Pure angular sweep at the neutral angle moves the body forward only.
        let s = PipfState {
            t: 0.0,
            r: 1.0,
            beta: std::f64::consts::FRAC_PI_2,
            gamma: 0.0,
            r_dot: 0.0,
            beta_dot: 1.0,
            gamma_dot: 0.0,
        };
        let c = cartesian_body_state(&s, &FootState::default());
        assert_relative_eq!(c.x_dot, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.z_dot, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn velocity_angle_positive_when_descending() {
        let c = CartesianBodyState { x: 0.0, z: 1.0, x_dot: 1.2, z_dot: -0.3 };
        assert_relative_eq!(c.velocity_angle(), (0.3f64 / 1.2).atan(), epsilon = 1e-12);
    }

    #[test]
    fn touchdown_state_reproduces_cartesian_velocity() {
        let p = reference_params();
        let cases = [
            (3.75, -0.94, 60f64.to_radians(), 0.2450, 9.39),
            (2.5, -1.5, 100f64.to_radians(), -0.1, 2.0),
            (1.0, -0.1, 55f64.to_radians(), 0.0, 0.0),
        ];
        for (vx, vz, alpha, gamma, gamma_dot) in cases {
            let s = touchdown_state(vx, vz, alpha, gamma, gamma_dot, &p).unwrap();
            assert_relative_eq!(s.r, p.leg_length);
            assert_relative_eq!(s.alpha(), alpha, epsilon = 1e-12);
            assert_relative_eq!(s.gamma_dot, gamma_dot);
            let c = cartesian_body_state(&s, &FootState::default());
            assert_relative_eq!(c.x_dot, vx, epsilon = 1e-10);
            assert_relative_eq!(c.z_dot, vz, epsilon = 1e-10);
        }
    }

    #[test]
    fn ground_reaction_matches_leg_wrench() {
        // Independent route: the massless leg transmits the axial force and
        // the hip torque couple, so the contact force resolves to
        // fx = -F cos(a) + tau sin(a) / r, fz = F sin(a) + tau cos(a) / r.
        let p = reference_params();
        let u = ControlInput { force: 600.0, torque: -45.0 };
        for s in [
            sample_state(),
            PipfState { t: 0.0, r: 0.62, beta: 1.9, gamma: 0.4, r_dot: 0.8, beta_dot: 1.1, gamma_dot: -2.2 },
        ] {
            let grf = ground_reaction(&s, &u, &p).unwrap();
            let (sin_a, cos_a) = s.alpha().sin_cos();
            assert_relative_eq!(grf.fx, -u.force * cos_a + u.torque * sin_a / s.r, epsilon = 1e-9);
            assert_relative_eq!(grf.fz, u.force * sin_a + u.torque * cos_a / s.r, epsilon = 1e-9);
        }
    }

    #[test]
    fn state_jacobians_match_finite_differences() {
        let p = reference_params();
        let s = sample_state();
        let x0 = s.to_vec();
        let u0 = CtrlVec::from([230.0, -60.0]);
        let (fx, fu) = state_derive_jac(&x0, &u0, &p);
        let eps = 1e-6;
        for j in 0..6 {
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += eps;
            xm[j] -= eps;
            let col = (state_derive(&xp, &u0, &p) - state_derive(&xm, &u0, &p)) / (2.0 * eps);
            for i in 0..6 {
                assert_abs_diff_eq!(fx[(i, j)], col[i], epsilon = 1e-5);
            }
        }
        for j in 0..2 {
            let mut up = u0;
            let mut um = u0;
            up[j] += eps;
            um[j] -= eps;
            let col = (state_derive(&x0, &up, &p) - state_derive(&x0, &um, &p)) / (2.0 * eps);
            for i in 0..6 {
                assert_abs_diff_eq!(fu[(i, j)], col[i], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn rk4_jacobians_match_finite_differences() {
        let p = reference_params();
        let x0 = sample_state().to_vec();
        let u0 = CtrlVec::from([230.0, -60.0]);
        let h = 0.01;
        let (_, a, b) = rk4_step_jac(&x0, &u0, h, &p);
        let eps = 1e-6;
        for j in 0..6 {
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += eps;
            xm[j] -= eps;
            let col = (rk4_step(&xp, &u0, h, &p) - rk4_step(&xm, &u0, h, &p)) / (2.0 * eps);
            for i in 0..6 {
                assert_abs_diff_eq!(a[(i, j)], col[i], epsilon = 1e-6);
            }
        }
        for j in 0..2 {
            let mut up = u0;
            let mut um = u0;
            up[j] += eps;
            um[j] -= eps;
            let col = (rk4_step(&x0, &up, h, &p) - rk4_step(&x0, &um, h, &p)) / (2.0 * eps);
            for i in 0..6 {
                assert_abs_diff_eq!(b[(i, j)], col[i], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn integrator_exhibits_fourth_order_convergence() {
        let p = reference_params();
        let s = sample_state();
        let u = ControlInput { force: 500.0, torque: 30.0 };
        // Local error probe: one full step versus two half steps shrinks by
        // ~2^5 when the step halves.
        let defect = |dt: f64| {
            let full = integrate_step(&s, &u, dt, &p).unwrap().state;
            let half = integrate_step(&s, &u, dt / 2.0, &p).unwrap().state;
            let two = integrate_step(&half, &u, dt / 2.0, &p).unwrap().state;
            ((full.r - two.r).powi(2)
                + (full.beta - two.beta).powi(2)
                + (full.gamma - two.gamma).powi(2)
                + (full.r_dot - two.r_dot).powi(2)
                + (full.beta_dot - two.beta_dot).powi(2)
                + (full.gamma_dot - two.gamma_dot).powi(2))
            .sqrt()
        };
        let d1 = defect(0.02);
        let d2 = defect(0.01);
        assert!(d2 > 0.0, "probe too small to measure");
        assert!(d1 / d2 > 16.0, "order too low: ratio {}", d1 / d2);
    }

    #[test]
    fn passive_motion_conserves_energy() {
        let p = reference_params();
        let mut s = PipfState {
            t: 0.0,
            r: 1.0,
            beta: std::f64::consts::FRAC_PI_3,
            gamma: 0.2,
            r_dot: 0.5,
            beta_dot: 2.5,
            gamma_dot: -1.0,
        };
        let u = ControlInput { force: 0.0, torque: 0.0 };
        let e0 = mechanical_energy(&s, &p);
        let mut max_drift = 0f64;
        for _ in 0..1000 {
            s = integrate_step(&s, &u, 1e-3, &p).unwrap().state;
            max_drift = max_drift.max(((mechanical_energy(&s, &p) - e0) / e0).abs());
        }
        assert!(s.r > 0.05, "trajectory left the probe's valid range: r = {}", s.r);
        assert!(max_drift < 1e-5, "energy drift {max_drift}");
    }

    #[test]
    fn unforced_flywheel_rate_is_constant() {
        let p = reference_params();
        let mut s = sample_state();
        let u = ControlInput { force: 300.0, torque: 0.0 };
        for _ in 0..200 {
            s = integrate_step(&s, &u, 1e-3, &p).unwrap().state;
            assert_abs_diff_eq!(s.gamma_dot, -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn leg_range_event_is_flagged_not_clipped() {
        let p = reference_params();
        let mut s = sample_state();
        s.r = 0.995;
        s.r_dot = 2.0;
        let step = integrate_step(&s, &ControlInput { force: 900.0, torque: 0.0 }, 0.01, &p).unwrap();
        assert!(step.r_event);
        assert!(step.state.r > p.leg_length, "state must keep the raw integration result");
    }
}
