//! Dimensionless scaling. Lengths scale by the leg rest length `r0`, linear
//! velocities by `sqrt(g r0)`, angular velocities by `sqrt(g / r0)`, forces
//! by `m g`, torques by `m g r0`, inertia by `m r0^2`, time by
//! `T_C = sqrt(r0 / g)`. Angles are already dimensionless.
//!
//! Two models with equal dimensionless inertia produce identical
//! dimensionless trajectories under identical dimensionless controls, so the
//! solvers in this crate run on the unit model internally.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, ModelParams, PipfState};

/// Physical quantity kinds covered by the scale transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    Length,
    LinearVelocity,
    AngularVelocity,
    Force,
    Torque,
    Inertia,
    Angle,
    Time,
}

fn scale_factor(q: Quantity, p: &ModelParams) -> f64 {
    let (m, g, r0) = (p.mass, p.gravity, p.leg_length);
    match q {
        Quantity::Length => r0,
        Quantity::LinearVelocity => (g * r0).sqrt(),
        Quantity::AngularVelocity => (g / r0).sqrt(),
        Quantity::Force => m * g,
        Quantity::Torque => m * g * r0,
        Quantity::Inertia => m * r0 * r0,
        Quantity::Angle => 1.0,
        Quantity::Time => (r0 / g).sqrt(),
    }
}

/// Strip units from a dimensional value.
pub fn nondimensionalize(value: f64, q: Quantity, params: &ModelParams) -> f64 {
    value / scale_factor(q, params)
}

/// Restore units to a dimensionless value.
pub fn dimensionalize(value: f64, q: Quantity, params: &ModelParams) -> f64 {
    value * scale_factor(q, params)
}

/// Stance state of the unit model equivalent to `s` under `params`.
pub fn state_to_nondim(s: &PipfState, params: &ModelParams) -> PipfState {
    PipfState {
        t: nondimensionalize(s.t, Quantity::Time, params),
        r: nondimensionalize(s.r, Quantity::Length, params),
        beta: s.beta,
        gamma: s.gamma,
        r_dot: nondimensionalize(s.r_dot, Quantity::LinearVelocity, params),
        beta_dot: nondimensionalize(s.beta_dot, Quantity::AngularVelocity, params),
        gamma_dot: nondimensionalize(s.gamma_dot, Quantity::AngularVelocity, params),
    }
}

/// Inverse of [`state_to_nondim`].
pub fn state_to_dim(s: &PipfState, params: &ModelParams) -> PipfState {
    PipfState {
        t: dimensionalize(s.t, Quantity::Time, params),
        r: dimensionalize(s.r, Quantity::Length, params),
        beta: s.beta,
        gamma: s.gamma,
        r_dot: dimensionalize(s.r_dot, Quantity::LinearVelocity, params),
        beta_dot: dimensionalize(s.beta_dot, Quantity::AngularVelocity, params),
        gamma_dot: dimensionalize(s.gamma_dot, Quantity::AngularVelocity, params),
    }
}

pub fn control_to_nondim(u: &ControlInput, params: &ModelParams) -> ControlInput {
    ControlInput {
        force: nondimensionalize(u.force, Quantity::Force, params),
        torque: nondimensionalize(u.torque, Quantity::Torque, params),
    }
}

pub fn control_to_dim(u: &ControlInput, params: &ModelParams) -> ControlInput {
    ControlInput {
        force: dimensionalize(u.force, Quantity::Force, params),
        torque: dimensionalize(u.torque, Quantity::Torque, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ModelParams {
        ModelParams::new(80.0, 3.2, 9.8, 1.0).unwrap()
    }

    #[test]
    fn leg_rest_length_maps_to_one() {
        let p = params();
        assert_relative_eq!(nondimensionalize(p.leg_length, Quantity::Length, &p), 1.0);
        assert_relative_eq!(nondimensionalize(p.mass * p.gravity, Quantity::Force, &p), 1.0);
        assert_relative_eq!(nondimensionalize(p.inertia, Quantity::Inertia, &p), 0.04);
    }

    #[test]
    fn round_trip_is_identity() {
        let p = ModelParams::new(30.0, 0.243, 9.8, 0.45).unwrap();
        let kinds = [
            Quantity::Length,
            Quantity::LinearVelocity,
            Quantity::AngularVelocity,
            Quantity::Force,
            Quantity::Torque,
            Quantity::Inertia,
            Quantity::Angle,
            Quantity::Time,
        ];
        for q in kinds {
            for v in [-3.7, 0.0, 0.41, 12.9] {
                let w = dimensionalize(nondimensionalize(v, q, &p), q, &p);
                assert_relative_eq!(w, v, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn angular_velocity_uses_inverse_time_scale() {
        let p = params();
        let w = nondimensionalize(3.0, Quantity::AngularVelocity, &p);
        assert_relative_eq!(w, 3.0 * p.time_scale(), epsilon = 1e-12);
    }

    #[test]
    fn state_round_trip() {
        let p = ModelParams::new(55.0, 1.1, 9.81, 0.8).unwrap();
        let s = PipfState {
            t: 0.37,
            r: 0.61,
            beta: 1.2,
            gamma: -0.4,
            r_dot: -1.9,
            beta_dot: 4.2,
            gamma_dot: 0.3,
        };
        let back = state_to_dim(&state_to_nondim(&s, &p), &p);
        assert_relative_eq!(back.t, s.t, epsilon = 1e-12);
        assert_relative_eq!(back.r, s.r, epsilon = 1e-12);
        assert_relative_eq!(back.r_dot, s.r_dot, epsilon = 1e-12);
        assert_relative_eq!(back.beta_dot, s.beta_dot, epsilon = 1e-12);
    }
}
