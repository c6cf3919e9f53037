//! Planar inverted pendulum with flywheel: stance dynamics, receding-horizon
//! trajectory optimization, landing stabilization, capturability analysis,
//! and batch sweep tooling for aggressive landing studies.

pub mod capture;
pub mod dynamics;
pub mod error;
pub mod scale;
pub mod stabilizer;
pub mod sweep;
pub mod trajopt;

pub use capture::{
    capture_point, min_horizontal_speed, n_step_capture, CapturePlan, CaptureSpec, CaptureStep,
    LipState,
};
pub use dynamics::{
    cartesian_body_state, forward_dynamics, ground_reaction, integrate_step, mechanical_energy,
    touchdown_state, CartesianBodyState, ControlInput, FootState, GroundReaction, IntegrationStep,
    ModelParams, PipfState,
};
pub use error::{Error, Result};
pub use stabilizer::{
    first_stance_step, pitch_stabilize, vertical_feasibility, vertical_stabilize,
    FeasibilityReport, LandingCase, LandingOutcome, Phase, PhaseExit, PhaseResult,
    PhaseTrajectory, StabilizerConfig,
};
pub use sweep::{
    attach_boundary, build_grid, factor_study, fit_boundary, grf_summary, rod_inertia, run_sweep,
    select_boundary_neighbors, BoundaryFit, FactorCell, GrfFactorEntry, GrfFactorSummary,
    PerformanceMap, SweepSpec,
};
pub use trajopt::{
    cost, discount_sequence, solve_iteration, ConstraintConfig, CostConfig, DiscountKind,
    HorizonSpec, IterationResult, SolveStatus,
};
