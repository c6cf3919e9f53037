//! Initial-condition grids, parallel landing sweeps, success-boundary
//! regression, and the inertia/descent/attack-angle factor study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::min_horizontal_speed;
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::stabilizer::{first_stance_step, LandingCase, LandingOutcome, StabilizerConfig};

/// Derived horizontal-speed spans use this amplification over the bare
/// capture-point minimum.
const SPEED_AMPLIFICATION: f64 = 1.5;
/// Width of the derived horizontal-speed span (non-dimensional).
const SPEED_SPAN: f64 = 1.2;
/// Frontier fits need at least this many points.
const MIN_FIT_POINTS: usize = 3;

/// Lattice description for one performance map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    /// Touchdown spin magnitude span (non-dimensional), low then high.
    pub omega0_range: [f64; 2],
    /// Horizontal speed span (non-dimensional); derived from the capture-point
    /// minimum at `alpha_0` when absent.
    pub vx0_range: Option<[f64; 2]>,
    /// Descent speed (non-dimensional), shared by every case.
    pub vz0: f64,
    /// Flywheel inertia (non-dimensional), shared by every case.
    pub inertia_nd: f64,
    /// Attack angle (rad), shared by every case.
    pub alpha_0: f64,
    /// Spin-axis sample count, >= 2.
    pub n_omega: usize,
    /// Speed-axis sample count, >= 2.
    pub n_vx: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            omega0_range: [1.0, 5.0],
            vx0_range: None,
            vz0: -0.3,
            inertia_nd: 0.04,
            alpha_0: 60f64.to_radians(),
            n_omega: 21,
            n_vx: 13,
        }
    }
}

impl SweepSpec {
    /// Coarse lattice sized for quick runs.
    pub fn desk() -> Self {
        Self { n_omega: 9, n_vx: 7, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.omega0_range.iter().all(|v| v.is_finite())
            && self.vz0.is_finite()
            && self.inertia_nd.is_finite()
            && self.alpha_0.is_finite()
            && self.vx0_range.map_or(true, |r| r.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("sweep spec"));
        }
        if self.n_omega < 2 || self.n_vx < 2 {
            return Err(Error::InvalidInput(format!(
                "lattice needs at least 2 samples per axis, got {}x{}",
                self.n_omega, self.n_vx
            )));
        }
        if self.omega0_range[0] >= self.omega0_range[1] {
            return Err(Error::InvalidInput(format!(
                "spin range is empty: [{}, {}]",
                self.omega0_range[0], self.omega0_range[1]
            )));
        }
        if let Some([lo, hi]) = self.vx0_range {
            if lo >= hi {
                return Err(Error::InvalidInput(format!("speed range is empty: [{lo}, {hi}]")));
            }
        }
        if self.inertia_nd <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "inertia must be positive, got {}",
                self.inertia_nd
            )));
        }
        // Attack angle must admit a capture-point speed selector.
        min_horizontal_speed(self.alpha_0, SPEED_AMPLIFICATION).map(|_| ())
    }

    /// Speed span in effect: the stored one, or the capture-point minimum
    /// truncated to two decimals plus the standard span width.
    pub fn speed_range(&self) -> Result<[f64; 2]> {
        if let Some(r) = self.vx0_range {
            return Ok(r);
        }
        let lo = (min_horizontal_speed(self.alpha_0, SPEED_AMPLIFICATION)? * 100.0).floor() / 100.0;
        Ok([lo, lo + SPEED_SPAN])
    }
}

/// Least-squares line through the success frontier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Sweep results on the lattice, row-major with the spin axis slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMap {
    pub n_omega: usize,
    pub n_vx: usize,
    pub cases: Vec<LandingCase>,
    pub outcomes: Vec<LandingOutcome>,
    /// Present only when the frontier offers at least three points.
    pub boundary: Option<BoundaryFit>,
    /// Indices of the frontier cases behind `boundary`.
    pub neighbor_set: Vec<usize>,
}

impl PerformanceMap {
    fn index(&self, i_omega: usize, i_vx: usize) -> usize {
        i_omega * self.n_vx + i_vx
    }

    /// Successes sitting above a failure in their speed column. The published
    /// maps are nearly monotone; these are reported, never asserted away.
    pub fn non_monotone_successes(&self) -> Vec<usize> {
        let mut flagged = Vec::new();
        for j in 0..self.n_vx {
            for i in 1..self.n_omega {
                let here = self.index(i, j);
                if self.outcomes[here].success
                    && (0..i).any(|k| !self.outcomes[self.index(k, j)].success)
                {
                    flagged.push(here);
                }
            }
        }
        flagged
    }
}

/// Friction demand and support extremes, recorded per successful case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfFactorEntry {
    pub case_index: usize,
    pub min_f_fz_nd: f64,
    pub max_mu_req: f64,
}

/// GRF extremes across the successful cases of one map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GrfFactorSummary {
    pub entries: Vec<GrfFactorEntry>,
}

/// One factor-study combination and its map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCell {
    pub inertia_nd: f64,
    pub vz0: f64,
    pub alpha_0: f64,
    pub map: PerformanceMap,
}

/// Inertia of a uniform rod whose length is `eta_l` body lengths: eta_l^2/12.
pub fn rod_inertia(eta_l: f64) -> Result<f64> {
    if !(eta_l.is_finite() && eta_l > 0.0) {
        return Err(Error::InvalidInput(format!("length factor must be positive, got {eta_l}")));
    }
    Ok(eta_l * eta_l / 12.0)
}

/// Uniform lattice over (spin, speed), row-major with spin slowest. Both axis
/// endpoints land exactly on the range bounds.
pub fn build_grid(spec: &SweepSpec) -> Result<Vec<LandingCase>> {
    spec.validate()?;
    let [w_lo, w_hi] = spec.omega0_range;
    let [v_lo, v_hi] = spec.speed_range()?;
    let sample = |lo: f64, hi: f64, i: usize, n: usize| {
        if i + 1 == n {
            hi
        } else {
            lo + i as f64 * ((hi - lo) / (n - 1) as f64)
        }
    };
    let mut cases = Vec::with_capacity(spec.n_omega * spec.n_vx);
    for i in 0..spec.n_omega {
        for j in 0..spec.n_vx {
            cases.push(LandingCase {
                omega0: sample(w_lo, w_hi, i, spec.n_omega),
                vx0: sample(v_lo, v_hi, j, spec.n_vx),
                vz0: spec.vz0,
                inertia_nd: spec.inertia_nd,
                alpha0: spec.alpha_0,
            });
        }
    }
    Ok(cases)
}

/// Evaluates every case on a fixed-size worker pool. Results are ordered by
/// case index regardless of completion order, and a panicking case is
/// recorded as a failure rather than aborting the sweep.
pub fn run_sweep(
    cases: &[LandingCase],
    cfg: &StabilizerConfig,
    params: &ModelParams,
    worker_count: usize,
) -> Result<PerformanceMap> {
    run_sweep_with(cases, worker_count, |case| first_stance_step(case, cfg, params))
}

fn panic_outcome(payload: Box<dyn std::any::Any + Send>) -> LandingOutcome {
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "opaque panic payload".to_string());
    LandingOutcome::from_diagnostic(format!("worker panic: {msg}"))
}

fn run_sweep_with<F>(cases: &[LandingCase], worker_count: usize, eval: F) -> Result<PerformanceMap>
where
    F: Fn(&LandingCase) -> LandingOutcome + Sync,
{
    if cases.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one case".into()));
    }
    if worker_count == 0 {
        return Err(Error::InvalidInput("worker count must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count)
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    let outcomes: Vec<LandingOutcome> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| eval(case)))
                    .unwrap_or_else(panic_outcome)
            })
            .collect()
    });
    // The lattice shape is recovered from the case list when it is one of
    // ours; foreign case lists degrade to a single row.
    let n_vx = lattice_row_width(cases);
    Ok(PerformanceMap {
        n_omega: cases.len() / n_vx,
        n_vx,
        cases: cases.to_vec(),
        outcomes,
        boundary: None,
        neighbor_set: Vec::new(),
    })
}

/// Width of the fastest-varying axis: consecutive cases share a spin value
/// within a row and change it across rows.
fn lattice_row_width(cases: &[LandingCase]) -> usize {
    let width = cases
        .iter()
        .position(|c| c.omega0 != cases[0].omega0)
        .unwrap_or(cases.len());
    if width > 0 && cases.len() % width == 0 {
        width
    } else {
        cases.len()
    }
}

/// Frontier selection: per speed column, the success with the largest spin
/// whose immediate upward neighbor failed. All-success and all-failure
/// columns contribute nothing.
pub fn select_boundary_neighbors(map: &PerformanceMap) -> Vec<usize> {
    let mut picked = Vec::new();
    for j in 0..map.n_vx {
        for i in (0..map.n_omega.saturating_sub(1)).rev() {
            let here = map.index(i, j);
            let above = map.index(i + 1, j);
            if map.outcomes[here].success && !map.outcomes[above].success {
                picked.push(here);
                break;
            }
        }
    }
    picked
}

/// Ordinary least squares of spin on speed over frontier points (speed, spin).
/// A flat response returns slope 0 with R^2 = 0.
pub fn fit_boundary(points: &[(f64, f64)]) -> Result<BoundaryFit> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::InvalidInput(format!(
            "boundary fit needs at least {MIN_FIT_POINTS} points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("boundary points"));
    }
    if points.iter().all(|(x, _)| *x == points[0].0) {
        return Err(Error::DegenerateFit("all abscissae coincide"));
    }
    if points.iter().all(|(_, y)| *y == points[0].1) {
        return Ok(BoundaryFit { slope: 0.0, intercept: points[0].1, r_squared: 0.0 });
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let (sxx, sxy) = points.iter().fold((0.0, 0.0), |(sxx, sxy), (x, y)| {
        (sxx + (x - mx) * (x - mx), sxy + (x - mx) * (y - my))
    });
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (ss_res, ss_tot) = points.iter().fold((0.0, 0.0), |(sr, st), (x, y)| {
        let e = y - (slope * x + intercept);
        (sr + e * e, st + (y - my) * (y - my))
    });
    let r_squared = (1.0 - ss_res / ss_tot).clamp(0.0, 1.0);
    Ok(BoundaryFit { slope, intercept, r_squared })
}

/// Fills the frontier indices and, when they support a fit, the boundary.
pub fn attach_boundary(map: &mut PerformanceMap) {
    map.neighbor_set = select_boundary_neighbors(map);
    let points: Vec<(f64, f64)> = map
        .neighbor_set
        .iter()
        .map(|&i| (map.cases[i].vx0, map.cases[i].omega0))
        .collect();
    map.boundary = fit_boundary(&points).ok();
}

/// GRF extremes of the successful cases, in case-index order.
pub fn grf_summary(map: &PerformanceMap) -> GrfFactorSummary {
    let entries = map
        .outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.success)
        .filter_map(|(i, o)| {
            Some(GrfFactorEntry {
                case_index: i,
                min_f_fz_nd: o.min_f_fz_nd?,
                max_mu_req: o.max_mu_req?,
            })
        })
        .collect();
    GrfFactorSummary { entries }
}

/// One map per (inertia, descent speed, attack angle) combination, inertia
/// slowest. Combinations whose frontier cannot support a fit carry no
/// boundary rather than failing the study.
pub fn factor_study(
    base: &SweepSpec,
    i_levels: &[f64],
    vz0_levels: &[f64],
    alpha0_levels: &[f64],
    cfg: &StabilizerConfig,
    params: &ModelParams,
    worker_count: usize,
) -> Result<Vec<FactorCell>> {
    if i_levels.is_empty() || vz0_levels.is_empty() || alpha0_levels.is_empty() {
        return Err(Error::InvalidInput("factor levels must be nonempty".into()));
    }
    let mut cells = Vec::with_capacity(i_levels.len() * vz0_levels.len() * alpha0_levels.len());
    for &inertia_nd in i_levels {
        for &vz0 in vz0_levels {
            for &alpha_0 in alpha0_levels {
                let spec = SweepSpec { inertia_nd, vz0, alpha_0, vx0_range: None, ..*base };
                let cases = build_grid(&spec)?;
                let mut map = run_sweep(&cases, cfg, params, worker_count)?;
                attach_boundary(&mut map);
                cells.push(FactorCell { inertia_nd, vz0, alpha_0, map });
            }
        }
    }
    Ok(cells)
}
