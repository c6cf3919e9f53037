//! Subcommand drivers: single-case simulation, lattice sweeps with optional
//! factor studies, and offline analysis of saved performance maps.

use std::path::{Path, PathBuf};

use pipf_core::dynamics::{cartesian_body_state, FootState};
use pipf_core::{
    attach_boundary, build_grid, factor_study, first_stance_step, n_step_capture, run_sweep,
    CapturePlan, LipState,
};

use crate::config::RunConfig;
use crate::output::{
    self, BoundaryDoc, MapRecord, MapRow, RunSummary, SCHEMA_VERSION,
};
use crate::{CliError, CliResult};

fn ensure_out_dir(out_dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Internal(format!("create {}: {e}", out_dir.display())))
}

/// Run one landing case and write `trajectory.csv`, `summary.json` and,
/// when footstep planning is requested on a stabilized landing,
/// `capture_steps.csv`.
pub fn cmd_simulate(cfg: &RunConfig, nsteps: usize, out_dir: &Path) -> CliResult<()> {
    ensure_out_dir(out_dir)?;
    let params = cfg.model.params()?;
    let outcome = first_stance_step(&cfg.case, &cfg.stabilizer, &params);
    output::write_trajectory_csv(&out_dir.join("trajectory.csv"), &outcome, &params)?;

    let mut capture: Option<(CapturePlan, f64)> = None;
    if nsteps > 0 && outcome.success {
        if let Some(terminal) = &outcome.terminal {
            let body = cartesian_body_state(terminal, &FootState::default());
            let lip = LipState::from_body(&body)
                .map_err(|e| CliError::Internal(format!("capture handoff: {e}")))?;
            let reach = cfg.capture_reach();
            let plan = n_step_capture(&lip, nsteps, reach, params.gravity)
                .map_err(|e| CliError::Internal(format!("capture plan: {e}")))?;
            output::write_capture_csv(&out_dir.join("capture_steps.csv"), &plan)?;
            capture = Some((plan, reach));
        }
    }

    let summary = output::run_summary(&outcome, capture.as_ref().map(|(p, r)| (p, *r)));
    output::write_json(&out_dir.join("summary.json"), &summary)?;
    report_simulate(&summary);
    Ok(())
}

fn report_simulate(summary: &RunSummary) {
    let verdict = if summary.success { "stabilized" } else { "failed" };
    match &summary.diagnostic {
        Some(d) => println!("landing {verdict}: {d}"),
        None => println!("landing {verdict}"),
    }
}

/// Factor levels parsed from repeated `--factors KEY=V1,V2,...` occurrences.
#[derive(Debug, Default, PartialEq)]
pub struct FactorLevels {
    pub inertia: Option<Vec<f64>>,
    pub vz0: Option<Vec<f64>>,
    pub alpha0_deg: Option<Vec<f64>>,
}

impl FactorLevels {
    pub fn is_empty(&self) -> bool {
        self.inertia.is_none() && self.vz0.is_none() && self.alpha0_deg.is_none()
    }
}

pub fn parse_factors(specs: &[String]) -> CliResult<FactorLevels> {
    let mut levels = FactorLevels::default();
    for spec in specs {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("factor {spec:?} is not KEY=V1,V2,...")))?;
        let parsed: Vec<f64> = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| CliError::Input(format!("factor {key}: bad value {v:?}")))
            })
            .collect::<CliResult<_>>()?;
        if parsed.is_empty() {
            return Err(CliError::Input(format!("factor {key}: no values")));
        }
        let slot = match key.trim() {
            "I" => &mut levels.inertia,
            "vz0" => &mut levels.vz0,
            "alpha0" => &mut levels.alpha0_deg,
            other => {
                return Err(CliError::Input(format!(
                    "unknown factor {other:?}; expected I, vz0 or alpha0"
                )))
            }
        };
        if slot.is_some() {
            return Err(CliError::Input(format!("factor {key} given twice")));
        }
        *slot = Some(parsed);
    }
    Ok(levels)
}

/// File tags reuse the values exactly as parsed, inertia first.
fn cell_tags(
    levels: &FactorLevels,
    base_inertia: f64,
    base_vz0: f64,
    base_alpha0_deg: f64,
) -> Vec<String> {
    let part = |given: &Option<Vec<f64>>, base: f64| -> Vec<(bool, f64)> {
        match given {
            Some(vs) => vs.iter().map(|&v| (true, v)).collect(),
            None => vec![(false, base)],
        }
    };
    let inertias = part(&levels.inertia, base_inertia);
    let vz0s = part(&levels.vz0, base_vz0);
    let alphas = part(&levels.alpha0_deg, base_alpha0_deg);
    let mut tags = Vec::new();
    for (i_given, i) in &inertias {
        for (v_given, v) in &vz0s {
            for (a_given, a) in &alphas {
                let mut tag = String::new();
                if *i_given {
                    tag.push_str(&format!("_I{i}"));
                }
                if *v_given {
                    tag.push_str(&format!("_vz0{v}"));
                }
                if *a_given {
                    tag.push_str(&format!("_alpha0{a}"));
                }
                tags.push(tag);
            }
        }
    }
    tags
}

/// Sweep the touchdown lattice. Without factors this writes `map.csv`;
/// each factor combination gets its own `map<tag>.csv`. The frontier fits
/// land in `boundary.json`.
pub fn cmd_sweep(cfg: &RunConfig, factors: &[String], out_dir: &Path) -> CliResult<()> {
    ensure_out_dir(out_dir)?;
    let params = cfg.model.params()?;
    let levels = parse_factors(factors)?;
    let base = &cfg.sweep;

    let mut records = Vec::new();
    if levels.is_empty() {
        let cases = build_grid(base).map_err(|e| CliError::Input(e.to_string()))?;
        let mut map = run_sweep(&cases, &cfg.stabilizer, &params, cfg.workers)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        attach_boundary(&mut map);
        output::write_map_csv(&out_dir.join("map.csv"), &map)?;
        records.push(MapRecord::new(
            "map.csv".into(),
            base.inertia_nd,
            base.vz0,
            base.alpha_0.to_degrees(),
            &map,
        ));
    } else {
        let i_levels = levels.inertia.clone().unwrap_or_else(|| vec![base.inertia_nd]);
        let vz_levels = levels.vz0.clone().unwrap_or_else(|| vec![base.vz0]);
        let alpha_deg = levels
            .alpha0_deg
            .clone()
            .unwrap_or_else(|| vec![base.alpha_0.to_degrees()]);
        let alpha_rad: Vec<f64> = alpha_deg.iter().map(|a| a.to_radians()).collect();
        let cells = factor_study(
            base,
            &i_levels,
            &vz_levels,
            &alpha_rad,
            &cfg.stabilizer,
            &params,
            cfg.workers,
        )
        .map_err(|e| CliError::Input(e.to_string()))?;
        let tags = cell_tags(&levels, base.inertia_nd, base.vz0, base.alpha_0.to_degrees());
        debug_assert_eq!(tags.len(), cells.len());
        for (cell, tag) in cells.iter().zip(tags) {
            let file = format!("map{tag}.csv");
            output::write_map_csv(&out_dir.join(&file), &cell.map)?;
            records.push(MapRecord::new(
                file,
                cell.inertia_nd,
                cell.vz0,
                cell.alpha_0.to_degrees(),
                &cell.map,
            ));
        }
    }

    for rec in &records {
        let frontier = rec.neighbor_set.len();
        match &rec.boundary {
            Some(fit) => println!(
                "{}: {}/{} stabilized, boundary slope {:.3} intercept {:.3} r2 {:.3}",
                rec.file, rec.n_success, rec.n_cases, fit.slope, fit.intercept, fit.r_squared
            ),
            None => println!(
                "{}: {}/{} stabilized, no boundary fit ({} frontier points)",
                rec.file, rec.n_success, rec.n_cases, frontier
            ),
        }
    }
    let doc = BoundaryDoc { schema: SCHEMA_VERSION, maps: records };
    output::write_json(&out_dir.join("boundary.json"), &doc)
}

/// Merge saved maps and emit duration-bound series, bound ratios, and GRF
/// histograms for the stabilized cases.
pub fn cmd_analyze(maps: &[PathBuf], out_dir: &Path) -> CliResult<()> {
    ensure_out_dir(out_dir)?;
    let mut rows: Vec<MapRow> = Vec::new();
    for path in maps {
        rows.extend(output::read_map_csv(path)?);
    }
    let successes: Vec<&MapRow> = rows.iter().filter(|r| r.success).collect();

    let tvs: Vec<(f64, f64, f64)> = successes
        .iter()
        .filter_map(|r| Some((r.t_lb?, r.t_ub?, r.t_vs_star?)))
        .collect();
    output::write_tvs_series_csv(&out_dir.join("tvs_series.csv"), &tvs)?;

    let ratios: Vec<(f64, f64, f64)> = successes
        .iter()
        .filter_map(|r| {
            let (lb, ub) = (r.t_lb?, r.t_ub?);
            (lb > 0.0).then(|| (r.omega0, r.vx0, ub / lb))
        })
        .collect();
    output::write_bound_ratio_csv(&out_dir.join("bound_ratio.csv"), &ratios)?;

    let fz: Vec<f64> = successes.iter().filter_map(|r| r.min_f_fz_nd).collect();
    output::write_histogram_csv(&out_dir.join("grf_fz_hist.csv"), &fz)?;
    let mu: Vec<f64> = successes.iter().filter_map(|r| r.max_mu_req).collect();
    output::write_histogram_csv(&out_dir.join("grf_mu_hist.csv"), &mu)?;

    println!(
        "analyzed {} cases ({} stabilized) from {} map(s)",
        rows.len(),
        successes.len(),
        maps.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_strings_parse_into_levels() {
        let specs = vec!["I=0.04,0.08,0.12".to_string(), "alpha0=55,60".to_string()];
        let levels = parse_factors(&specs).unwrap();
        assert_eq!(levels.inertia, Some(vec![0.04, 0.08, 0.12]));
        assert_eq!(levels.vz0, None);
        assert_eq!(levels.alpha0_deg, Some(vec![55.0, 60.0]));
    }

    #[test]
    fn malformed_factors_are_input_errors() {
        for bad in ["I", "I=", "I=a", "spin=1", "vz0=1,,2", "I=inf"] {
            let err = parse_factors(&[bad.to_string()]).unwrap_err();
            assert_eq!(err.exit_code(), crate::EXIT_INPUT, "{bad}");
        }
        let dup = vec!["I=0.04".to_string(), "I=0.08".to_string()];
        assert_eq!(parse_factors(&dup).unwrap_err().exit_code(), crate::EXIT_INPUT);
    }

    #[test]
    fn tags_enumerate_specified_factors_inertia_slowest() {
        let levels = FactorLevels {
            inertia: Some(vec![0.04, 0.08]),
            vz0: None,
            alpha0_deg: Some(vec![55.0, 60.0]),
        };
        let tags = cell_tags(&levels, 0.04, -0.3, 60.0);
        assert_eq!(
            tags,
            vec!["_I0.04_alpha055", "_I0.04_alpha060", "_I0.08_alpha055", "_I0.08_alpha060"]
        );
    }

    #[test]
    fn untouched_factors_leave_the_tag_empty() {
        let tags = cell_tags(&FactorLevels::default(), 0.04, -0.3, 60.0);
        assert_eq!(tags, vec![""]);
    }
}
