//! First-stance-step stabilization: a pitch phase that burns off body
//! rotation while the leg sweeps past vertical, a closed-form feasibility
//! check for the remaining vertical deceleration, and a vertical phase that
//! kills the descent rate. Each phase iterates short receding-horizon
//! windows and terminates by scanning the newest knots.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    cartesian_body_state, ground_reaction, touchdown_state, ControlInput, FootState, ModelParams,
    PipfState,
};
use crate::error::{Error, Result};
use crate::trajopt::{
    solve_iteration, ConstraintConfig, CostConfig, DiscountKind, HorizonSpec, SolveStatus,
};

/// Phase controller settings. Angles in radians, thresholds and weights
/// dimensionless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilizerConfig {
    /// Fraction of the relevant time scale used per window.
    pub eta: f64,
    /// Leg-angle feasibility window; leaving it fails the phase.
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Termination thresholds on pitch, pitch rate, vertical speed.
    pub eps_gamma: f64,
    pub eps_gamma_dot: f64,
    pub eps_z_dot: f64,
    /// Vertical-speed weight candidates, tried in ascending order.
    pub pitch_k1_ladder: Vec<f64>,
    pub vertical_k1_ladder: Vec<f64>,
    /// Companion weights on pitch and pitch rate per phase.
    pub pitch_gamma_weights: (f64, f64),
    pub vertical_gamma_weights: (f64, f64),
    /// Desired dimensionless terminal values.
    pub z_dot_des: f64,
    pub gamma_des: f64,
    pub gamma_dot_des: f64,
    /// Window cap per phase attempt; exceeding it exits Exhausted.
    pub max_iterations: usize,
    /// Control intervals per window.
    pub knots: usize,
    pub constraints: ConstraintConfig,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        Self {
            eta: 0.2,
            alpha_min: 10f64.to_radians(),
            alpha_max: 170f64.to_radians(),
            eps_gamma: 0.05,
            eps_gamma_dot: 0.05,
            eps_z_dot: 0.02,
            pitch_k1_ladder: vec![1.0, 10.0, 100.0, 1000.0],
            vertical_k1_ladder: vec![1e6, 1e7, 1e8],
            pitch_gamma_weights: (1e4, 1e5),
            vertical_gamma_weights: (1e3, 1e3),
            z_dot_des: 0.01,
            gamma_des: 0.0,
            gamma_dot_des: 0.0,
            max_iterations: 50,
            knots: 20,
            constraints: ConstraintConfig::default(),
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha_min
            && self.alpha_min < std::f64::consts::FRAC_PI_2
            && std::f64::consts::FRAC_PI_2 < self.alpha_max
            && self.alpha_max < std::f64::consts::PI)
        {
            return Err(Error::InvalidInput(format!(
                "leg-angle window must satisfy 0 < min < pi/2 < max < pi, got ({}, {})",
                self.alpha_min, self.alpha_max
            )));
        }
        if self.eps_gamma <= 0.0 || self.eps_gamma_dot <= 0.0 || self.eps_z_dot <= 0.0 {
            return Err(Error::InvalidInput("stabilization thresholds must be positive".into()));
        }
        if self.pitch_k1_ladder.is_empty() || self.vertical_k1_ladder.is_empty() {
            return Err(Error::InvalidInput("weight ladders must be nonempty".into()));
        }
        Ok(())
    }

    fn pitch_cost(&self, k1: f64) -> CostConfig {
        CostConfig {
            weight_z_dot: k1,
            weight_gamma: self.pitch_gamma_weights.0,
            weight_gamma_dot: self.pitch_gamma_weights.1,
            z_dot_des: self.z_dot_des,
            gamma_des: self.gamma_des,
            gamma_dot_des: self.gamma_dot_des,
            discount_z_dot: DiscountKind::ReversedPoisson { lambda: 1.0 },
            discount_gamma: DiscountKind::ReversedPoisson { lambda: 1.0 },
            discount_gamma_dot: DiscountKind::ReversedPoisson { lambda: 1.0 },
        }
    }

    /// Vertical-phase weights: the pitch terms drop to uniform attention and
    /// small weight; the vertical term dominates.
    fn vertical_cost(&self, k1: f64) -> CostConfig {
        CostConfig {
            weight_z_dot: k1,
            weight_gamma: self.vertical_gamma_weights.0,
            weight_gamma_dot: self.vertical_gamma_weights.1,
            z_dot_des: self.z_dot_des,
            gamma_des: self.gamma_des,
            gamma_dot_des: self.gamma_dot_des,
            discount_z_dot: DiscountKind::ReversedPoisson { lambda: 1.0 },
            discount_gamma: DiscountKind::Uniform,
            discount_gamma_dot: DiscountKind::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    PitchStab,
    VerticalStab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseExit {
    Success,
    Failure,
    Exhausted,
}

/// Knot trajectory stitched across windows; controls hold over each knot
/// interval, so there is one fewer control than states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PhaseTrajectory {
    pub states: Vec<PipfState>,
    pub controls: Vec<ControlInput>,
}

impl PhaseTrajectory {
    /// Ground reactions per control interval, evaluated at the interval's
    /// starting knot.
    pub fn reactions(&self, params: &ModelParams) -> Result<Vec<crate::dynamics::GroundReaction>> {
        self.controls
            .iter()
            .enumerate()
            .map(|(i, u)| ground_reaction(&self.states[i], u, params))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: Phase,
    pub exit: PhaseExit,
    pub trajectory: PhaseTrajectory,
    /// Stance time covered by this phase [s].
    pub duration: f64,
    /// Receding-horizon windows solved.
    pub iterations: usize,
    pub diagnostic: Option<String>,
}

/// Closed-form bounds on the vertical-phase duration, evaluated at the
/// pitch-phase exit state. Times in seconds, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Time to cancel the descent at full net upward force.
    pub t_lb: f64,
    /// Time until the leg sweeps past the last angle with nonnegative net
    /// upward force, under the worst-case sweep acceleration.
    pub t_ub: f64,
    /// Leg angle at which maximum leg force yields zero net vertical force.
    pub alpha_ub_vs: f64,
    /// Worst-case (lowest) leg-sweep acceleration [rad/s^2].
    pub alpha_ddot_lb_vs: f64,
    pub feasible: bool,
}

/// One touchdown condition, all fields dimensionless (angle in radians):
/// body spin, horizontal and vertical speed, body inertia, leg angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandingCase {
    pub omega0: f64,
    pub vx0: f64,
    pub vz0: f64,
    pub inertia_nd: f64,
    pub alpha0: f64,
}

impl Default for LandingCase {
    fn default() -> Self {
        Self { omega0: 3.0, vx0: 1.2, vz0: -0.3, inertia_nd: 0.04, alpha0: 60f64.to_radians() }
    }
}

/// Full record of one landing attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandingOutcome {
    pub success: bool,
    pub pitch: PhaseResult,
    pub vertical: Option<PhaseResult>,
    pub feasibility: Option<FeasibilityReport>,
    /// Achieved vertical-phase duration on success [s].
    pub t_vs_star: Option<f64>,
    pub terminal: Option<PipfState>,
    /// Smallest dimensionless vertical ground reaction over the stance.
    pub min_f_fz_nd: Option<f64>,
    /// Largest required friction ratio over the stance.
    pub max_mu_req: Option<f64>,
    pub diagnostic: Option<String>,
}

impl LandingOutcome {
    /// Failure record for attempts that never produced a trajectory
    /// (construction errors, worker panics).
    pub fn from_diagnostic(diagnostic: String) -> Self {
        Self {
            success: false,
            pitch: PhaseResult {
                phase: Phase::PitchStab,
                exit: PhaseExit::Failure,
                trajectory: PhaseTrajectory::default(),
                duration: 0.0,
                iterations: 0,
                diagnostic: Some(diagnostic.clone()),
            },
            vertical: None,
            feasibility: None,
            t_vs_star: None,
            terminal: None,
            min_f_fz_nd: None,
            max_mu_req: None,
            diagnostic: Some(diagnostic),
        }
    }
}

/// Window length for the pitch phase: a fraction of the time an inverted
/// pendulum at the initial horizontal speed needs to cross its own leg.
pub fn pitch_horizon(
    vx0_nd: f64,
    eta: f64,
    knots: usize,
    params: &ModelParams,
) -> Result<HorizonSpec> {
    if !(vx0_nd.is_finite() && vx0_nd > 0.0) {
        return Err(Error::InvalidInput(format!(
            "pitch horizon needs positive horizontal speed, got {vx0_nd}"
        )));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    Ok(HorizonSpec { t0: 0.0, duration: eta * params.time_scale() / vx0_nd, knots })
}

/// Window length for the vertical phase: a fraction of the lower duration
/// bound.
pub fn vertical_horizon(report: &FeasibilityReport, eta: f64, knots: usize) -> Result<HorizonSpec> {
    if !report.feasible {
        return Err(Error::Precondition("vertical horizon requires a feasible report".into()));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    Ok(HorizonSpec { t0: 0.0, duration: eta * report.t_lb, knots })
}

/// Duration bounds for the vertical phase at its entry state.
///
/// The lower bound assumes full leg force acts vertically from now on; the
/// upper bound is the time for the leg, decelerating at its worst-case sweep
/// rate, to pass the last angle that still admits net upward force. The
/// entry state must descend forward with the leg past vertical and sweeping
/// forward.
pub fn vertical_feasibility(
    x1: &PipfState,
    params: &ModelParams,
    f_max_nd: f64,
) -> Result<FeasibilityReport> {
    if !x1.is_finite() {
        return Err(Error::NonFinite("x1"));
    }
    if !(f_max_nd.is_finite() && f_max_nd > 0.0) {
        return Err(Error::InvalidInput(format!("f_max_nd must be positive, got {f_max_nd}")));
    }
    let cart = cartesian_body_state(x1, &FootState::default());
    let alpha = x1.alpha();
    let alpha_dot = x1.alpha_dot();
    if cart.x_dot <= 0.0 {
        return Err(Error::Precondition(format!("need forward motion, vx = {}", cart.x_dot)));
    }
    if cart.z_dot >= 0.0 {
        return Err(Error::Precondition(format!("need descent, vz = {}", cart.z_dot)));
    }
    if alpha <= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Precondition(format!("need leg past vertical, alpha = {alpha}")));
    }
    if alpha_dot <= 0.0 {
        return Err(Error::Precondition(format!(
            "need forward leg sweep, alpha_dot = {alpha_dot}"
        )));
    }

    let t_c = params.time_scale();
    let vz_nd = cart.z_dot / (params.gravity * params.leg_length).sqrt();
    // Net upward specific force at full leg thrust; nonpositive means the
    // descent cannot be cancelled at this leg angle at all.
    let net = f_max_nd * alpha.sin() - 1.0;
    let t_lb = if net > 0.0 { -vz_nd / net * t_c } else { f64::INFINITY };

    let alpha_ub_vs = std::f64::consts::FRAC_PI_2 + (1.0 / f_max_nd).acos();
    let r_nd = x1.r / params.leg_length;
    let add_lb_nd = -alpha.cos() * r_nd / (1.0 + params.inertia_nd());
    let adot_nd = alpha_dot * t_c;
    let radicand = adot_nd * adot_nd + 2.0 * add_lb_nd * (alpha_ub_vs - alpha);
    let t_ub = if radicand >= 0.0 && add_lb_nd > 0.0 {
        (-adot_nd + radicand.sqrt()) / add_lb_nd * t_c
    } else {
        f64::NAN
    };

    let feasible = t_lb > 0.0 && t_ub > 0.0 && t_lb < t_ub;
    Ok(FeasibilityReport {
        t_lb,
        t_ub,
        alpha_ub_vs,
        alpha_ddot_lb_vs: add_lb_nd / (t_c * t_c),
        feasible,
    })
}

/// Dimensionless pitch rate and vertical speed of a state.
fn phase_measurements(s: &PipfState, params: &ModelParams) -> (f64, f64) {
    let cart = cartesian_body_state(s, &FootState::default());
    let gamma_dot_nd = s.gamma_dot * params.time_scale();
    let z_dot_nd = cart.z_dot / (params.gravity * params.leg_length).sqrt();
    (gamma_dot_nd, z_dot_nd)
}

struct PhaseRules<'a> {
    phase: Phase,
    cfg: &'a StabilizerConfig,
    alpha_hi: f64,
    window: f64,
}

impl PhaseRules<'_> {
    fn stabilized(&self, s: &PipfState, params: &ModelParams) -> bool {
        let (gamma_dot_nd, z_dot_nd) = phase_measurements(s, params);
        match self.phase {
            Phase::PitchStab => {
                (s.gamma - self.cfg.gamma_des).abs() < self.cfg.eps_gamma
                    && (gamma_dot_nd - self.cfg.gamma_dot_des).abs() < self.cfg.eps_gamma_dot
                    && s.alpha() >= std::f64::consts::FRAC_PI_2
            }
            Phase::VerticalStab => {
                // The window alone admits exits while still descending, which
                // leaves the fall uncancelled; require the sign flip too.
                (z_dot_nd - self.cfg.z_dot_des).abs() < self.cfg.eps_z_dot && z_dot_nd >= 0.0
            }
        }
    }

    fn leg_infeasible(&self, s: &PipfState) -> bool {
        let alpha = s.alpha();
        alpha <= self.cfg.alpha_min || alpha >= self.alpha_hi
    }
}

/// Iterate windows from `x0` until the phase terminates. Each window is
/// seeded with the previous window's final knot, so the stitched trajectory
/// is continuous by construction.
fn run_phase(
    rules: &PhaseRules,
    x0: &PipfState,
    cost_cfg: &CostConfig,
    params: &ModelParams,
) -> PhaseResult {
    let mut traj = PhaseTrajectory { states: vec![*x0], controls: Vec::new() };
    let done = |exit, traj: PhaseTrajectory, iters, diag| {
        let duration = traj.states.last().unwrap().t - x0.t;
        PhaseResult {
            phase: rules.phase,
            exit,
            trajectory: traj,
            duration,
            iterations: iters,
            diagnostic: diag,
        }
    };

    if rules.stabilized(x0, params) {
        return done(PhaseExit::Success, traj, 0, None);
    }
    if rules.leg_infeasible(x0) {
        return done(PhaseExit::Failure, traj, 0, Some("leg angle infeasible at entry".into()));
    }

    let mut current = *x0;
    let mut warm = None;
    for iter in 1..=rules.cfg.max_iterations {
        let horizon = HorizonSpec { t0: current.t, duration: rules.window, knots: rules.cfg.knots };
        let res = match solve_iteration(
            &current,
            &horizon,
            cost_cfg,
            &rules.cfg.constraints,
            warm.as_ref(),
            params,
        ) {
            Ok(res) => res,
            Err(e) => {
                return done(PhaseExit::Failure, traj, iter, Some(format!("window solve: {e}")))
            }
        };
        if res.status != SolveStatus::Converged {
            return done(
                PhaseExit::Failure,
                traj,
                iter,
                Some(format!("window solve ended {:?}", res.status)),
            );
        }

        for j in 1..=rules.cfg.knots {
            let s = res.states[j];
            let hit_success = rules.stabilized(&s, params);
            let hit_failure = !hit_success && rules.leg_infeasible(&s);
            if hit_success || hit_failure {
                traj.states.extend_from_slice(&res.states[1..=j]);
                traj.controls.extend_from_slice(&res.controls[..j]);
                return if hit_success {
                    done(PhaseExit::Success, traj, iter, None)
                } else {
                    done(
                        PhaseExit::Failure,
                        traj,
                        iter,
                        Some(format!("leg angle left window at alpha = {:.4}", s.alpha())),
                    )
                };
            }
        }

        traj.states.extend_from_slice(&res.states[1..]);
        traj.controls.extend_from_slice(&res.controls);
        current = *res.states.last().unwrap();
        warm = Some(res);
    }
    done(PhaseExit::Exhausted, traj, rules.cfg.max_iterations, Some("window cap reached".into()))
}

/// Run one phase, trying the weight ladder in ascending order from the same
/// entry state and keeping the first success (or the last attempt).
fn run_phase_ladder(
    phase: Phase,
    x0: &PipfState,
    ladder: &[f64],
    window: f64,
    alpha_hi: f64,
    cfg: &StabilizerConfig,
    params: &ModelParams,
) -> PhaseResult {
    let mut last = None;
    for &k1 in ladder {
        let cost_cfg = match phase {
            Phase::PitchStab => cfg.pitch_cost(k1),
            Phase::VerticalStab => cfg.vertical_cost(k1),
        };
        let rules = PhaseRules { phase, cfg, alpha_hi, window };
        let attempt = run_phase(&rules, x0, &cost_cfg, params);
        if attempt.exit == PhaseExit::Success {
            return attempt;
        }
        last = Some(attempt);
    }
    last.expect("ladder validated nonempty")
}

/// Pitch phase from the touchdown state: stabilize body pitch and rate while
/// the leg is past vertical, before the leg angle leaves its window.
pub fn pitch_stabilize(
    x0: &PipfState,
    cfg: &StabilizerConfig,
    params: &ModelParams,
) -> Result<PhaseResult> {
    cfg.validate()?;
    let cart = cartesian_body_state(x0, &FootState::default());
    if cart.x_dot <= 0.0 {
        return Err(Error::Precondition(format!(
            "pitch phase needs forward touchdown motion, vx = {}",
            cart.x_dot
        )));
    }
    let vx0_nd = cart.x_dot / (params.gravity * params.leg_length).sqrt();
    let window = pitch_horizon(vx0_nd, cfg.eta, cfg.knots, params)?.duration;
    Ok(run_phase_ladder(
        Phase::PitchStab,
        x0,
        &cfg.pitch_k1_ladder,
        window,
        cfg.alpha_max,
        cfg,
        params,
    ))
}

/// Vertical phase from the pitch-exit state: drive the descent rate to the
/// small desired value before the leg loses net upward force authority.
pub fn vertical_stabilize(
    x1: &PipfState,
    report: &FeasibilityReport,
    cfg: &StabilizerConfig,
    params: &ModelParams,
) -> Result<PhaseResult> {
    cfg.validate()?;
    let window = vertical_horizon(report, cfg.eta, cfg.knots)?.duration;
    let alpha_hi = cfg.alpha_max.min(report.alpha_ub_vs);
    Ok(run_phase_ladder(
        Phase::VerticalStab,
        x1,
        &cfg.vertical_k1_ladder,
        window,
        alpha_hi,
        cfg,
        params,
    ))
}

/// Stance GRF extremes over the stitched phase trajectories.
fn grf_extremes(
    phases: &[&PhaseTrajectory],
    params: &ModelParams,
) -> Result<(f64, f64)> {
    let mut min_fz = f64::INFINITY;
    let mut max_mu = 0.0f64;
    let weight = params.mass * params.gravity;
    for traj in phases {
        for grf in traj.reactions(params)? {
            min_fz = min_fz.min(grf.fz / weight);
            max_mu = max_mu.max(grf.required_friction());
        }
    }
    Ok((min_fz, max_mu))
}

/// How far through the pipeline a failed ladder rung got. Later rungs with
/// equal progress win, so the reported outcome is the most informative one.
fn keep_better(slot: &mut Option<(u8, LandingOutcome)>, rank: u8, out: LandingOutcome) {
    match slot {
        Some((r, _)) if rank < *r => {}
        _ => *slot = Some((rank, out)),
    }
}

/// Evaluate one touchdown condition end to end: pitch phase, feasibility
/// check, vertical phase. The pitch weight ladder is retried when a rung
/// stabilizes pitch but hands the vertical stage an unusable state; a weight
/// that dooms the downstream phases is as bad a selection as one that never
/// settles pitch. Any construction or phase error is recorded in the outcome
/// rather than raised, so batch sweeps never abort.
pub fn first_stance_step(
    case: &LandingCase,
    cfg: &StabilizerConfig,
    params: &ModelParams,
) -> LandingOutcome {
    let fail = |pitch: PhaseResult, diag: String| LandingOutcome {
        success: false,
        pitch,
        vertical: None,
        feasibility: None,
        t_vs_star: None,
        terminal: None,
        min_f_fz_nd: None,
        max_mu_req: None,
        diagnostic: Some(diag),
    };

    // The case's own inertia overrides the template's.
    let eff_params = match ModelParams::new(
        params.mass,
        case.inertia_nd * params.mass * params.leg_length * params.leg_length,
        params.gravity,
        params.leg_length,
    ) {
        Ok(p) => p,
        Err(e) => return LandingOutcome::from_diagnostic(format!("model construction: {e}")),
    };

    let v_scale = (eff_params.gravity * eff_params.leg_length).sqrt();
    let vx = case.vx0 * v_scale;
    let vz = case.vz0 * v_scale;
    // Touchdown pitch equals the velocity tilt-down angle; the body spin
    // opposes it, so braking the flywheel carries the pitch toward zero.
    let gamma0 = (-vz).atan2(vx);
    let gamma_dot0 = -case.omega0 / eff_params.time_scale();
    let x0 = match touchdown_state(vx, vz, case.alpha0, gamma0, gamma_dot0, &eff_params) {
        Ok(s) => s,
        Err(e) => {
            return LandingOutcome::from_diagnostic(format!("touchdown construction: {e}"))
        }
    };

    if let Err(e) = cfg.validate() {
        return LandingOutcome::from_diagnostic(format!("stabilizer config: {e}"));
    }
    let cart = cartesian_body_state(&x0, &FootState::default());
    if cart.x_dot <= 0.0 {
        return LandingOutcome::from_diagnostic(format!(
            "pitch phase: precondition violated: pitch phase needs forward touchdown motion, vx = {}",
            cart.x_dot
        ));
    }
    let vx0_nd = cart.x_dot / v_scale;
    let pitch_window = match pitch_horizon(vx0_nd, cfg.eta, cfg.knots, &eff_params) {
        Ok(h) => h.duration,
        Err(e) => return LandingOutcome::from_diagnostic(format!("pitch phase: {e}")),
    };
    let f_max_nd = cfg.constraints.u_upper[0];

    let mut fallback: Option<(u8, LandingOutcome)> = None;
    for &k1 in &cfg.pitch_k1_ladder {
        let rules =
            PhaseRules { phase: Phase::PitchStab, cfg, alpha_hi: cfg.alpha_max, window: pitch_window };
        let pitch = run_phase(&rules, &x0, &cfg.pitch_cost(k1), &eff_params);
        if pitch.exit != PhaseExit::Success {
            let d = pitch.diagnostic.clone().map_or_else(
                || "pitch phase did not stabilize".into(),
                |m| format!("pitch phase: {m}"),
            );
            keep_better(&mut fallback, 0, fail(pitch, d));
            continue;
        }

        let x1 = *pitch.trajectory.states.last().unwrap();
        let report = match vertical_feasibility(&x1, &eff_params, f_max_nd) {
            Ok(r) => r,
            Err(e) => {
                keep_better(&mut fallback, 1, fail(pitch, format!("feasibility check: {e}")));
                continue;
            }
        };
        if !report.feasible {
            let mut out = fail(pitch, "vertical phase infeasible at handoff".into());
            out.feasibility = Some(report);
            keep_better(&mut fallback, 2, out);
            continue;
        }

        let vertical = match vertical_stabilize(&x1, &report, cfg, &eff_params) {
            Ok(r) => r,
            Err(e) => {
                let mut out = fail(pitch, format!("vertical phase: {e}"));
                out.feasibility = Some(report);
                keep_better(&mut fallback, 3, out);
                continue;
            }
        };
        let terminal = *vertical.trajectory.states.last().unwrap();
        if vertical.exit == PhaseExit::Success {
            let (min_fz, max_mu) =
                match grf_extremes(&[&pitch.trajectory, &vertical.trajectory], &eff_params) {
                    Ok((fz, mu)) => (Some(fz), Some(mu)),
                    Err(_) => (None, None),
                };
            return LandingOutcome {
                success: true,
                t_vs_star: Some(vertical.duration),
                pitch,
                vertical: Some(vertical),
                feasibility: Some(report),
                terminal: Some(terminal),
                min_f_fz_nd: min_fz,
                max_mu_req: max_mu,
                diagnostic: None,
            };
        }
        let d = vertical.diagnostic.clone().map_or_else(
            || "vertical phase did not stabilize".into(),
            |m| format!("vertical phase: {m}"),
        );
        let out = LandingOutcome {
            success: false,
            pitch,
            vertical: Some(vertical),
            feasibility: Some(report),
            t_vs_star: None,
            terminal: Some(terminal),
            min_f_fz_nd: None,
            max_mu_req: None,
            diagnostic: Some(d),
        };
        keep_better(&mut fallback, 3, out);
    }
    fallback.expect("weight ladder validated nonempty").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params() -> ModelParams {
        ModelParams::new(80.0, 3.2, 9.8, 1.0).unwrap()
    }

    #[test]
    fn pitch_horizon_inverse_in_speed() {
        let p = params();
        let h1 = pitch_horizon(1.0, 1.0, 20, &p).unwrap();
        assert_relative_eq!(h1.duration, p.time_scale(), epsilon = 1e-12);
        assert_abs_diff_eq!(h1.duration, 0.3194, epsilon = 1e-4);
        let h2 = pitch_horizon(2.0, 0.2, 20, &p).unwrap();
        assert_relative_eq!(h2.duration, 0.1 * p.time_scale(), epsilon = 1e-12);
        let single = pitch_horizon(0.7, 0.2, 20, &p).unwrap();
        let double = pitch_horizon(1.4, 0.2, 20, &p).unwrap();
        assert_relative_eq!(single.duration, 2.0 * double.duration, epsilon = 1e-12);
        assert!(pitch_horizon(0.0, 0.2, 20, &p).is_err());
        assert!(pitch_horizon(-1.0, 0.2, 20, &p).is_err());
    }

    fn feasibility_entry_state() -> PipfState {
        // Leg at 100 deg, dimensionless sweep rate 0.5, dimensionless
        // descent 0.2, compressed leg at 0.8.
        let p = params();
        let t_c = p.time_scale();
        let alpha = 100f64.to_radians();
        let alpha_dot = 0.5 / t_c;
        let z_dot = -0.2 * (p.gravity * p.leg_length).sqrt();
        let r = 0.8;
        let r_dot = (z_dot - r * alpha_dot * alpha.cos()) / alpha.sin();
        let gamma = 0.02;
        PipfState {
            t: 0.0,
            r,
            beta: alpha - gamma,
            gamma,
            r_dot,
            beta_dot: alpha_dot,
            gamma_dot: 0.0,
        }
    }

    #[test]
    fn feasibility_bounds_match_hand_calculation() {
        let p = params();
        let rep = vertical_feasibility(&feasibility_entry_state(), &p, 2.0).unwrap();
        let t_c = p.time_scale();
        assert_abs_diff_eq!(rep.t_lb / t_c, 0.20627, epsilon = 1e-4);
        assert_abs_diff_eq!(rep.t_ub / t_c, 1.4605, epsilon = 1e-4);
        assert_abs_diff_eq!(rep.alpha_ddot_lb_vs * t_c * t_c, 0.13357, epsilon = 1e-4);
        assert_abs_diff_eq!(
            rep.alpha_ub_vs,
            5.0 * std::f64::consts::PI / 6.0,
            epsilon = 1e-12
        );
        assert!(rep.feasible);
    }

    #[test]
    fn feasibility_requires_descending_forward_sweep() {
        let p = params();
        let base = feasibility_entry_state();

        let mut ascending = base;
        ascending.r_dot = -base.r_dot; // flips z_dot positive at this geometry
        assert!(matches!(
            vertical_feasibility(&ascending, &p, 2.0),
            Err(Error::Precondition(_))
        ));

        let mut upright = base;
        upright.beta = 80f64.to_radians() - upright.gamma;
        // keep the same rates; only the angle precondition should trip
        let err = vertical_feasibility(&upright, &p, 2.0);
        assert!(matches!(err, Err(Error::Precondition(_))));

        let mut backward_sweep = base;
        backward_sweep.beta_dot = -1.0;
        backward_sweep.gamma_dot = 0.0;
        // recompute r_dot so the body still descends
        backward_sweep.r_dot = -0.5;
        let err = vertical_feasibility(&backward_sweep, &p, 2.0);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn feasibility_without_thrust_authority_is_reported_not_raised() {
        // Leg angle so late that even full thrust cannot push upward.
        let p = params();
        let alpha = 178f64.to_radians();
        let s = PipfState {
            t: 0.0,
            r: 0.8,
            beta: alpha - 0.01,
            gamma: 0.01,
            r_dot: 0.1,
            beta_dot: 1.0,
            gamma_dot: 0.0,
        };
        let rep = vertical_feasibility(&s, &p, 2.0).unwrap();
        assert!(!rep.feasible);
        assert!(rep.t_lb.is_infinite());
    }

    #[test]
    fn vertical_horizon_scales_with_eta() {
        let p = params();
        let rep = vertical_feasibility(&feasibility_entry_state(), &p, 2.0).unwrap();
        let h = vertical_horizon(&rep, 0.2, 20).unwrap();
        assert_relative_eq!(h.duration, 0.2 * rep.t_lb, epsilon = 1e-12);
        let h1 = vertical_horizon(&rep, 1.0, 20).unwrap();
        assert_relative_eq!(h1.duration, rep.t_lb, epsilon = 1e-12);
        let infeasible = FeasibilityReport { feasible: false, ..rep };
        assert!(vertical_horizon(&infeasible, 0.2, 20).is_err());
    }

    fn touchdown_for(case: &LandingCase, p: &ModelParams) -> PipfState {
        let v = (p.gravity * p.leg_length).sqrt();
        let (vx, vz) = (case.vx0 * v, case.vz0 * v);
        let gamma0 = (-vz).atan2(vx);
        touchdown_state(vx, vz, case.alpha0, gamma0, -case.omega0 / p.time_scale(), p).unwrap()
    }

    #[test]
    fn stabilized_entry_exits_without_solving() {
        let p = params();
        let cfg = StabilizerConfig::default();
        let x0 = PipfState {
            t: 0.0,
            r: 0.95,
            beta: 95f64.to_radians(),
            gamma: 0.0,
            r_dot: -0.1,
            beta_dot: 0.2,
            gamma_dot: 0.0,
        };
        let res = pitch_stabilize(&x0, &cfg, &p).unwrap();
        assert_eq!(res.exit, PhaseExit::Success);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.trajectory.states.len(), 1);
        assert_eq!(res.duration, 0.0);
    }

    #[test]
    fn infeasible_entry_angle_fails_without_solving() {
        let p = params();
        let cfg = StabilizerConfig::default();
        let x0 = PipfState {
            t: 0.0,
            r: 1.0,
            beta: 5f64.to_radians(),
            gamma: 0.0,
            r_dot: -0.5,
            beta_dot: 1.0,
            gamma_dot: 0.0,
        };
        let res = pitch_stabilize(&x0, &cfg, &p).unwrap();
        assert_eq!(res.exit, PhaseExit::Failure);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn reference_touchdown_first_window_converges_within_bounds() {
        let cfg = StabilizerConfig::default();
        let case = LandingCase::default();
        let eff = ModelParams::new(80.0, case.inertia_nd * 80.0, 9.8, 1.0).unwrap();
        let x0 = touchdown_for(&case, &eff);
        let horizon = pitch_horizon(case.vx0, cfg.eta, cfg.knots, &eff).unwrap();
        let res = solve_iteration(
            &x0,
            &horizon,
            &cfg.pitch_cost(cfg.pitch_k1_ladder[0]),
            &cfg.constraints,
            None,
            &eff,
        )
        .unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        let weight = eff.mass * eff.gravity;
        for u in &res.controls {
            let f_nd = u.force / weight;
            let tau_nd = u.torque / (weight * eff.leg_length);
            assert!((0.0..=2.0).contains(&f_nd), "force {f_nd}");
            assert!((-1.0..=1.0).contains(&tau_nd), "torque {tau_nd}");
        }
        assert!(res.max_defect <= 1e-6);
    }

    #[test]
    fn reference_touchdown_lands_successfully() {
        let p = params();
        let cfg = StabilizerConfig::default();
        let out = first_stance_step(&LandingCase::default(), &cfg, &p);
        assert!(out.success, "diagnostic: {:?}", out.diagnostic);
        assert_eq!(out.pitch.exit, PhaseExit::Success);
        let vertical = out.vertical.as_ref().unwrap();
        assert_eq!(vertical.exit, PhaseExit::Success);
        let report = out.feasibility.unwrap();
        assert!(report.feasible);

        // Pitch settled past vertical with the body pitch inside its box.
        let x1 = vertical.trajectory.states[0];
        assert!(x1.alpha() >= std::f64::consts::FRAC_PI_2);
        let eff = ModelParams::new(80.0, 0.04 * 80.0, 9.8, 1.0).unwrap();
        let (_, z_dot_nd) = phase_measurements(out.terminal.as_ref().unwrap(), &eff);
        assert!((z_dot_nd - cfg.z_dot_des).abs() < cfg.eps_z_dot, "z_dot {z_dot_nd}");
        for s in out.pitch.trajectory.states.iter().chain(&vertical.trajectory.states) {
            assert!(s.gamma.abs() <= std::f64::consts::FRAC_PI_2 + 1e-9);
        }
        assert!(out.t_vs_star.unwrap() > 0.0);
        assert!(report.t_lb <= out.t_vs_star.unwrap());
        // Vertical exit landed before the pessimistic deadline.
        assert!(out.t_vs_star.unwrap() <= report.t_ub);
    }

    #[test]
    fn phase_windows_stitch_continuously() {
        let cfg = StabilizerConfig::default();
        let case = LandingCase::default();
        let eff = ModelParams::new(80.0, case.inertia_nd * 80.0, 9.8, 1.0).unwrap();
        let x0 = touchdown_for(&case, &eff);
        let res = pitch_stabilize(&x0, &cfg, &eff).unwrap();
        assert_eq!(res.exit, PhaseExit::Success);
        assert_eq!(res.trajectory.states.len(), res.trajectory.controls.len() + 1);
        let horizon = pitch_horizon(case.vx0, cfg.eta, cfg.knots, &eff).unwrap();
        let step = horizon.step();
        for w in res.trajectory.states.windows(2) {
            assert_relative_eq!(w[1].t - w[0].t, step, epsilon = 1e-9);
        }
        assert_relative_eq!(
            res.duration,
            res.trajectory.states.last().unwrap().t - x0.t,
            epsilon = 1e-12
        );
    }

    #[test]
    fn window_reseed_preserves_state_bitwise() {
        let cfg = StabilizerConfig::default();
        let case = LandingCase::default();
        let eff = ModelParams::new(80.0, case.inertia_nd * 80.0, 9.8, 1.0).unwrap();
        let x0 = touchdown_for(&case, &eff);
        let horizon = pitch_horizon(case.vx0, cfg.eta, cfg.knots, &eff).unwrap();
        let cost_cfg = cfg.pitch_cost(1.0);
        let first = solve_iteration(&x0, &horizon, &cost_cfg, &cfg.constraints, None, &eff).unwrap();
        let seed = *first.states.last().unwrap();
        let mut h2 = horizon;
        h2.t0 = seed.t;
        let second =
            solve_iteration(&seed, &h2, &cost_cfg, &cfg.constraints, Some(&first), &eff).unwrap();
        assert_eq!(second.states[0], seed);
    }

    #[test]
    fn aggressive_spin_fast_run_fails() {
        let p = params();
        let cfg = StabilizerConfig::default();
        let case = LandingCase { omega0: 5.0, vx0: 2.0, ..LandingCase::default() };
        let out = first_stance_step(&case, &cfg, &p);
        assert!(!out.success);
        assert!(out.diagnostic.is_some());
    }

    #[test]
    fn gentle_case_succeeds() {
        let p = params();
        let cfg = StabilizerConfig::default();
        let case = LandingCase { omega0: 1.0, vx0: 0.8, ..LandingCase::default() };
        let out = first_stance_step(&case, &cfg, &p);
        assert!(out.success, "diagnostic: {:?}", out.diagnostic);
        assert!(out.min_f_fz_nd.is_some() && out.max_mu_req.is_some());
    }

    #[test]
    fn outcome_success_implies_full_record() {
        let p = params();
        let out = first_stance_step(&LandingCase::default(), &StabilizerConfig::default(), &p);
        assert!(out.success);
        assert_eq!(out.pitch.exit, PhaseExit::Success);
        assert_eq!(out.vertical.as_ref().unwrap().exit, PhaseExit::Success);
        assert!(out.feasibility.unwrap().feasible);
        assert!(out.t_vs_star.is_some());
        assert!(out.terminal.is_some());
        assert!(out.min_f_fz_nd.is_some());
        assert!(out.max_mu_req.is_some());
        assert!(out.diagnostic.is_none());
    }

    #[test]
    fn invalid_case_is_encoded_as_failure() {
        let p = params();
        let cfg = StabilizerConfig::default();
        let case = LandingCase { inertia_nd: -0.1, ..LandingCase::default() };
        let out = first_stance_step(&case, &cfg, &p);
        assert!(!out.success);
        assert!(out.diagnostic.as_deref().unwrap().contains("model construction"));

        let case = LandingCase { vx0: -1.0, ..LandingCase::default() };
        let out = first_stance_step(&case, &cfg, &p);
        assert!(!out.success);
    }
}
