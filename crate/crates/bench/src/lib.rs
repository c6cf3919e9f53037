//! Shared fixtures for the benchmark targets.

use pipf_core::{
    touchdown_state, ConstraintConfig, CostConfig, HorizonSpec, ModelParams, PipfState,
};

/// Unit-scale model used throughout the solver benchmarks.
pub fn unit_model() -> ModelParams {
    ModelParams::new(1.0, 0.04, 1.0, 1.0).unwrap()
}

/// Aggressive touchdown on the unit model: fast, spinning, tilted.
pub fn aggressive_touchdown(params: &ModelParams) -> PipfState {
    let theta0 = (0.3f64).atan2(1.2);
    touchdown_state(1.2, -0.3, 60f64.to_radians(), theta0, -3.0, params).unwrap()
}

/// One pitch-style receding-horizon window on the unit model.
pub fn window_setup(params: &ModelParams) -> (PipfState, HorizonSpec, CostConfig, ConstraintConfig) {
    let x0 = aggressive_touchdown(params);
    let horizon = HorizonSpec { t0: x0.t, duration: 0.2 / 1.2, knots: 20 };
    let cost = CostConfig {
        weight_z_dot: 0.0,
        weight_gamma: 1e4,
        weight_gamma_dot: 1e5,
        ..CostConfig::default()
    };
    (x0, horizon, cost, ConstraintConfig::default())
}
