//! Plot-ready serialization: CSV via the shortest round-trip float format
//! (absent values are empty cells) and JSON documents tagged `schema = 1`.

use std::path::Path;

use serde::Serialize;

use pipf_core::dynamics::{cartesian_body_state, FootState};
use pipf_core::scale::{nondimensionalize, Quantity};
use pipf_core::stabilizer::{FeasibilityReport, PhaseExit, PhaseResult};
use pipf_core::{
    BoundaryFit, CapturePlan, LandingOutcome, ModelParams, PerformanceMap, PipfState,
};

use crate::CliResult;

pub const SCHEMA_VERSION: u32 = 1;
pub const MAP_HEADER: [&str; 8] =
    ["omega0", "vx0", "success", "t_lb", "t_ub", "t_vs_star", "min_f_fz_nd", "max_mu_req"];
const HISTOGRAM_BINS: usize = 20;

/// Shortest decimal that parses back to the same bits.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// JSON cannot carry non-finite numbers; they become null.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Per-knot state, control and ground-reaction rows for the stance phases.
/// Terminal knots of each phase have no control interval and leave the
/// control and reaction cells empty.
pub fn write_trajectory_csv(
    path: &Path,
    outcome: &LandingOutcome,
    params: &ModelParams,
) -> CliResult<()> {
    let header = [
        "phase", "t", "r", "beta", "gamma", "r_dot", "beta_dot", "gamma_dot", "alpha", "force",
        "torque", "force_nd", "torque_nd", "f_fx_nd", "f_fz_nd", "mu_req",
    ];
    let mut phases: Vec<(&str, &PhaseResult)> = vec![("pitch", &outcome.pitch)];
    if let Some(v) = &outcome.vertical {
        phases.push(("vertical", v));
    }
    let mut rows = Vec::new();
    for (name, phase) in phases {
        let traj = &phase.trajectory;
        if traj.states.is_empty() {
            continue;
        }
        let reactions = traj
            .reactions(params)
            .map_err(|e| crate::CliError::Internal(format!("ground reaction: {e}")))?;
        for (i, s) in traj.states.iter().enumerate() {
            let mut row = vec![
                name.to_string(),
                fmt_num(s.t),
                fmt_num(s.r),
                fmt_num(s.beta),
                fmt_num(s.gamma),
                fmt_num(s.r_dot),
                fmt_num(s.beta_dot),
                fmt_num(s.gamma_dot),
                fmt_num(s.alpha()),
            ];
            match traj.controls.get(i) {
                Some(u) => {
                    let grf = &reactions[i];
                    row.extend([
                        fmt_num(u.force),
                        fmt_num(u.torque),
                        fmt_num(nondimensionalize(u.force, Quantity::Force, params)),
                        fmt_num(nondimensionalize(u.torque, Quantity::Torque, params)),
                        fmt_num(nondimensionalize(grf.fx, Quantity::Force, params)),
                        fmt_num(nondimensionalize(grf.fz, Quantity::Force, params)),
                        fmt_num(grf.required_friction()),
                    ]);
                }
                None => row.extend(std::iter::repeat_with(String::new).take(7)),
            }
            rows.push(row);
        }
    }
    write_csv(path, &header, rows)
}

/// One row per lattice case, spin slowest, matching the grid order.
pub fn write_map_csv(path: &Path, map: &PerformanceMap) -> CliResult<()> {
    let rows = map.cases.iter().zip(&map.outcomes).map(|(case, o)| {
        let (t_lb, t_ub) = match &o.feasibility {
            Some(f) => (Some(f.t_lb), Some(f.t_ub)),
            None => (None, None),
        };
        vec![
            fmt_num(case.omega0),
            fmt_num(case.vx0),
            o.success.to_string(),
            fmt_opt(t_lb),
            fmt_opt(t_ub),
            fmt_opt(o.t_vs_star),
            fmt_opt(o.min_f_fz_nd),
            fmt_opt(o.max_mu_req),
        ]
    });
    write_csv(path, &MAP_HEADER, rows)
}

/// A parsed performance-map row; empty cells are absent values.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRow {
    pub omega0: f64,
    pub vx0: f64,
    pub success: bool,
    pub t_lb: Option<f64>,
    pub t_ub: Option<f64>,
    pub t_vs_star: Option<f64>,
    pub min_f_fz_nd: Option<f64>,
    pub max_mu_req: Option<f64>,
}

pub fn read_map_csv(path: &Path) -> CliResult<Vec<MapRow>> {
    let bad = |msg: String| crate::CliError::Input(format!("map {}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| crate::CliError::Input(format!("map {}: {e}", path.display())))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(MAP_HEADER) {
        return Err(bad(format!("unexpected header {:?}", header)));
    }
    let parse_num = |field: &str, name: &str| {
        field.parse::<f64>().map_err(|_| bad(format!("bad {name} value {field:?}")))
    };
    let parse_opt = |field: &str, name: &str| {
        if field.is_empty() {
            Ok(None)
        } else {
            parse_num(field, name).map(Some)
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != MAP_HEADER.len() {
            return Err(bad(format!("expected {} fields, got {}", MAP_HEADER.len(), record.len())));
        }
        rows.push(MapRow {
            omega0: parse_num(&record[0], "omega0")?,
            vx0: parse_num(&record[1], "vx0")?,
            success: match &record[2] {
                "true" => true,
                "false" => false,
                other => return Err(bad(format!("bad success value {other:?}"))),
            },
            t_lb: parse_opt(&record[3], "t_lb")?,
            t_ub: parse_opt(&record[4], "t_ub")?,
            t_vs_star: parse_opt(&record[5], "t_vs_star")?,
            min_f_fz_nd: parse_opt(&record[6], "min_f_fz_nd")?,
            max_mu_req: parse_opt(&record[7], "max_mu_req")?,
        });
    }
    Ok(rows)
}

pub fn write_capture_csv(path: &Path, plan: &CapturePlan) -> CliResult<()> {
    let rows = plan.steps.iter().enumerate().map(|(i, s)| {
        vec![i.to_string(), fmt_num(s.foot_x), fmt_num(s.x), fmt_num(s.x_dot)]
    });
    write_csv(path, &["step", "foot_x", "x", "x_dot"], rows)
}

#[derive(Debug, Serialize)]
pub struct PhaseSummary {
    pub exit: PhaseExit,
    pub duration: f64,
    pub iterations: usize,
    pub knots: usize,
    pub diagnostic: Option<String>,
}

impl PhaseSummary {
    fn from_result(r: &PhaseResult) -> Self {
        Self {
            exit: r.exit,
            duration: r.duration,
            iterations: r.iterations,
            knots: r.trajectory.states.len(),
            diagnostic: r.diagnostic.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FeasibilitySummary {
    pub feasible: bool,
    pub t_lb: Option<f64>,
    pub t_ub: Option<f64>,
    pub alpha_ub_vs: f64,
    pub alpha_ddot_lb_vs: Option<f64>,
}

impl FeasibilitySummary {
    fn from_report(f: &FeasibilityReport) -> Self {
        Self {
            feasible: f.feasible,
            t_lb: finite(f.t_lb),
            t_ub: finite(f.t_ub),
            alpha_ub_vs: f.alpha_ub_vs,
            alpha_ddot_lb_vs: finite(f.alpha_ddot_lb_vs),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CaptureSummary {
    pub captured: bool,
    pub steps_taken: usize,
    pub reach: f64,
    pub final_x_dot: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub schema: u32,
    pub success: bool,
    pub pitch: PhaseSummary,
    pub vertical: Option<PhaseSummary>,
    pub feasibility: Option<FeasibilitySummary>,
    pub t_vs_star: Option<f64>,
    pub terminal: Option<PipfState>,
    pub terminal_body_z: Option<f64>,
    pub min_f_fz_nd: Option<f64>,
    pub max_mu_req: Option<f64>,
    pub capture: Option<CaptureSummary>,
    pub diagnostic: Option<String>,
}

pub fn run_summary(
    outcome: &LandingOutcome,
    capture: Option<(&CapturePlan, f64)>,
) -> RunSummary {
    let terminal_body_z = outcome
        .terminal
        .as_ref()
        .map(|s| cartesian_body_state(s, &FootState::default()).z);
    RunSummary {
        schema: SCHEMA_VERSION,
        success: outcome.success,
        pitch: PhaseSummary::from_result(&outcome.pitch),
        vertical: outcome.vertical.as_ref().map(PhaseSummary::from_result),
        feasibility: outcome.feasibility.as_ref().map(FeasibilitySummary::from_report),
        t_vs_star: outcome.t_vs_star,
        terminal: outcome.terminal,
        terminal_body_z,
        min_f_fz_nd: outcome.min_f_fz_nd,
        max_mu_req: outcome.max_mu_req,
        capture: capture.map(|(plan, reach)| CaptureSummary {
            captured: plan.captured,
            steps_taken: plan.steps.len(),
            reach,
            final_x_dot: plan.steps.last().map(|s| s.x_dot),
        }),
        diagnostic: outcome.diagnostic.clone(),
    }
}

#[derive(Debug, Serialize)]
pub struct MapRecord {
    pub file: String,
    pub inertia_nd: f64,
    pub vz0: f64,
    pub alpha0_deg: f64,
    pub n_cases: usize,
    pub n_success: usize,
    pub neighbor_set: Vec<usize>,
    pub boundary: Option<BoundaryFit>,
    /// Successes sitting above a failure in their column, reported verbatim.
    pub non_monotone: Vec<usize>,
}

impl MapRecord {
    pub fn new(file: String, inertia_nd: f64, vz0: f64, alpha0_deg: f64, map: &PerformanceMap) -> Self {
        Self {
            file,
            inertia_nd,
            vz0,
            alpha0_deg,
            n_cases: map.outcomes.len(),
            n_success: map.outcomes.iter().filter(|o| o.success).count(),
            neighbor_set: map.neighbor_set.clone(),
            boundary: map.boundary,
            non_monotone: map.non_monotone_successes(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct BoundaryDoc {
    pub schema: u32,
    pub maps: Vec<MapRecord>,
}

/// Successful-case duration bounds sorted by the lower bound.
pub fn write_tvs_series_csv(path: &Path, rows: &[(f64, f64, f64)]) -> CliResult<()> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    write_csv(
        path,
        &["t_lb", "t_ub", "t_vs_star"],
        sorted.iter().map(|(lb, ub, star)| vec![fmt_num(*lb), fmt_num(*ub), fmt_num(*star)]),
    )
}

pub fn write_bound_ratio_csv(path: &Path, rows: &[(f64, f64, f64)]) -> CliResult<()> {
    write_csv(
        path,
        &["omega0", "vx0", "eta_t"],
        rows.iter().map(|(w, v, eta)| vec![fmt_num(*w), fmt_num(*v), fmt_num(*eta)]),
    )
}

/// Equal-width bins over the data range; a constant sample collapses to one
/// bin, an empty one to a bare header.
pub fn write_histogram_csv(path: &Path, values: &[f64]) -> CliResult<()> {
    let header = ["bin_lo", "bin_hi", "count"];
    if values.is_empty() {
        return write_csv(path, &header, std::iter::empty::<Vec<String>>());
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let row = vec![fmt_num(lo), fmt_num(hi), values.len().to_string()];
        return write_csv(path, &header, std::iter::once(row));
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[idx] += 1;
    }
    let rows = counts.iter().enumerate().map(|(i, &c)| {
        let bin_lo = lo + i as f64 * width;
        let bin_hi = if i + 1 == HISTOGRAM_BINS { hi } else { lo + (i + 1) as f64 * width };
        vec![fmt_num(bin_lo), fmt_num(bin_hi), c.to_string()]
    });
    write_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn absent_values_are_empty_cells() {
        assert_eq!(fmt_opt(None), "");
        assert_eq!(fmt_opt(Some(1.5)), "1.5");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
    }

    proptest! {
        /// The emitted decimal form re-parses to the identical bits.
        #[test]
        fn float_format_round_trips_exactly(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let parsed: f64 = fmt_num(v).parse().unwrap();
            prop_assert_eq!(parsed.to_bits(), v.to_bits());
        }
    }
}
