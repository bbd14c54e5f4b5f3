//! Subcommand drivers: apply flag overrides, run the pipeline, write
//! report files, and map outcomes to exit codes.
//!
//! Exit-code contract: `0` when a bound was certified, `2` when the
//! pipeline ran but could not certify one (report files are still
//! written), `1` on usage, parse, or I/O errors. Given identical inputs,
//! seeds, and backend, every output file is reproduced byte for byte:
//! reports carry no timestamps or timings, and all randomness is seeded.

use crate::problem_file::{
    parse_grid, parse_matrix_flag, positive_trials, set_solver_tol, LoadedProblem,
    ProblemFileError, SimSpec,
};
use sbc_core::pipeline_report::{
    attach_simulation, curve_csv, render_text, sweep, sweep_rows, to_report_json,
    verify_unbounded, BoundReport,
};
use sbc_core::simulator::{simulate, InitialSampler, SimConfig, SimResult};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_CERTIFIED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CERTIFIED: i32 = 2;

/// Fallback simulation horizon when neither the problem file nor a
/// verified cut time provides one; long enough that the exponential
/// decay regimes of interest have played out.
const DEFAULT_SIM_HORIZON: f64 = 20.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Problem(#[from] ProblemFileError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

/// Command-line overrides applied on top of the problem file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub t: Option<f64>,
    pub t_grid: Option<String>,
    pub epsilon: Option<f64>,
    pub deg_exp: Option<u32>,
    pub deg_timedep: Option<u32>,
    pub lambda: Option<String>,
    pub m_matrix: Option<String>,
    pub seed: Option<u64>,
    pub trials: Option<i64>,
    pub solver_tol: Option<f64>,
}

pub fn apply_overrides(loaded: &mut LoadedProblem, ov: &Overrides) -> Result<(), CliError> {
    if ov.t.is_some() && ov.t_grid.is_some() {
        return Err(CliError::Usage(
            "--T and --T-grid are mutually exclusive".to_string(),
        ));
    }
    if let Some(src) = &ov.lambda {
        loaded.config.lambda = parse_matrix_flag(src)?;
    }
    if let Some(src) = &ov.m_matrix {
        loaded.config.m_override = Some(parse_matrix_flag(src)?);
    }
    if let Some(eps) = ov.epsilon {
        loaded.config.epsilon = eps;
    }
    if let Some(d) = ov.deg_exp {
        loaded.config.deg_exp = d;
    }
    if let Some(d) = ov.deg_timedep {
        loaded.config.deg_timedep = d;
    }
    if let Some(tol) = ov.solver_tol {
        set_solver_tol(&mut loaded.config, tol)?;
    }
    if let Some(t) = ov.t {
        loaded.config.t_override = Some(t);
        loaded.t_grid = None;
    }
    if let Some(grid) = &ov.t_grid {
        loaded.t_grid = Some(parse_grid(grid)?);
        loaded.config.t_override = None;
    }
    if ov.seed.is_some() || ov.trials.is_some() {
        let spec = loaded.sim.get_or_insert_with(SimSpec::default);
        if let Some(seed) = ov.seed {
            spec.seed = seed;
        }
        if let Some(trials) = ov.trials {
            spec.trials = positive_trials(trials)?;
        }
    }
    Ok(())
}

fn sim_config(spec: &SimSpec, horizon: f64) -> SimConfig {
    SimConfig {
        dt: spec.dt,
        horizon,
        trials: spec.trials,
        seed: spec.seed,
        initial_sampler: match &spec.x0 {
            Some(x0) => InitialSampler::PointMass(x0.clone()),
            None => InitialSampler::UniformInitial,
        },
    }
}

fn write_file(
    out_dir: &Path,
    name: &str,
    contents: &str,
    written: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    let io_err = |path: &Path, source| CliError::Write {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let path = out_dir.join(name);
    std::fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    written.push(path);
    Ok(())
}

fn write_report_files(
    report: &BoundReport,
    out_dir: &Path,
    always_curve: bool,
    written: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    let name = &report.name;
    write_file(
        out_dir,
        &format!("{name}.report.txt"),
        &render_text(report),
        written,
    )?;
    let json = serde_json::to_string_pretty(&to_report_json(report))
        .expect("report serialization is infallible");
    write_file(out_dir, &format!("{name}.report.json"), &(json + "\n"), written)?;
    if always_curve || !report.curve.is_empty() {
        write_file(
            out_dir,
            &format!("{name}.curve.csv"),
            &curve_csv(report),
            written,
        )?;
    }
    Ok(())
}

fn outcome(report: &BoundReport, certified: bool, written: &[PathBuf]) -> (i32, String) {
    let mut out = String::new();
    let name = &report.name;
    if certified {
        if let Some(total) = report.total {
            let _ = writeln!(out, "{name}: certified, P(ever unsafe) <= {total}");
        } else {
            let _ = writeln!(out, "{name}: certified");
        }
    } else if let Some(f) = &report.failure {
        let _ = writeln!(out, "{name}: not certified (stage `{}` failed)", f.stage);
    } else {
        let _ = writeln!(out, "{name}: not certified");
    }
    for path in written {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    let code = if certified {
        EXIT_CERTIFIED
    } else {
        EXIT_NOT_CERTIFIED
    };
    (code, out)
}

/// Certify an unbounded-horizon bound; with a cut-time grid, also attach
/// the sweep curve; with a `[simulate]` section (or simulation flags),
/// attach the Monte-Carlo oracle.
pub fn cmd_verify(loaded: &LoadedProblem, out_dir: &Path) -> Result<(i32, String), CliError> {
    let mut report = verify_unbounded(&loaded.problem, &loaded.config);
    if let (Some(grid), Some(model)) = (&loaded.t_grid, &report.tail_model) {
        report.curve = sweep_rows(&loaded.problem, &loaded.config, model, grid);
    }
    if let Some(spec) = &loaded.sim {
        if report.failure.is_none() {
            let horizon = spec.horizon.unwrap_or_else(|| {
                report
                    .horizon
                    .unwrap_or(DEFAULT_SIM_HORIZON)
                    .max(DEFAULT_SIM_HORIZON)
            });
            attach_simulation(&mut report, &loaded.problem, &sim_config(spec, horizon));
        }
    }
    let mut written = Vec::new();
    write_report_files(&report, out_dir, false, &mut written)?;
    Ok(outcome(&report, report.is_certified(), &written))
}

/// Bounded+tail curve over a grid of cut times.
pub fn cmd_sweep(loaded: &LoadedProblem, out_dir: &Path) -> Result<(i32, String), CliError> {
    let grid = loaded.t_grid.as_ref().ok_or_else(|| {
        CliError::Usage(
            "sweep needs a cut-time grid: pass --T-grid a:b:step or set run.T_grid".to_string(),
        )
    })?;
    if grid.is_empty() {
        return Err(CliError::Usage("the cut-time grid is empty".to_string()));
    }
    let report = sweep(&loaded.problem, &loaded.config, grid);
    let mut written = Vec::new();
    write_report_files(&report, out_dir, true, &mut written)?;
    let certified = report.failure.is_none() && report.curve.iter().any(|r| r.total.is_some());
    Ok(outcome(&report, certified, &written))
}

fn sim_csv(config: &SimConfig, result: &SimResult) -> String {
    let mut s = String::from(
        "trials,hits,empirical_rate,cp95_lower,cp95_upper,mean_stop_time,blowups,dt,horizon,seed\n",
    );
    let _ = writeln!(
        s,
        "{},{},{},{},{},{},{},{},{},{}",
        result.trials,
        result.hit_count,
        result.empirical_rate,
        result.clopper_pearson_95.0,
        result.clopper_pearson_95.1,
        result.mean_stop_time,
        result.blowup_count,
        config.dt,
        config.horizon,
        config.seed
    );
    s
}

/// Monte-Carlo estimate of the failure rate (a sanity oracle for the
/// certified bounds, not itself a bound).
pub fn cmd_simulate(loaded: &LoadedProblem, out_dir: &Path) -> Result<(i32, String), CliError> {
    let default_spec;
    let spec = match &loaded.sim {
        Some(s) => s,
        None => {
            default_spec = SimSpec::default();
            &default_spec
        }
    };
    let config = sim_config(spec, spec.horizon.unwrap_or(DEFAULT_SIM_HORIZON));
    let result =
        simulate(&loaded.problem, &config).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut written = Vec::new();
    let name = &loaded.problem.name;
    write_file(
        out_dir,
        &format!("{name}.sim.csv"),
        &sim_csv(&config, &result),
        &mut written,
    )?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{name}: {}/{} hits (empirical rate {}), 95% Clopper-Pearson [{}, {}]",
        result.hit_count,
        result.trials,
        result.empirical_rate,
        result.clopper_pearson_95.0,
        result.clopper_pearson_95.1
    );
    for path in &written {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok((EXIT_CERTIFIED, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem_file::parse_problem;

    const POPULATION: &str = r#"
name = "population"

[system]
n = 1
m_w = 1
drift = ["-x1"]
diffusion = [["0.7071067811865476*x1"]]

[sets]
domain = ["x1 >= 0"]
initial = ["x1 = 1"]
unsafe = ["x1 - 2 >= 0"]
boundary = ["x1"]
window = { lo = [0.0], hi = [10.0] }

[certificates]
m = 1
lambda = [[1.0]]
deg_exp = 4
deg_timedep = 4
"#;

    fn loaded() -> LoadedProblem {
        parse_problem(POPULATION, "population.prob").unwrap()
    }

    #[test]
    fn overrides_rewire_the_config() {
        let mut l = loaded();
        let ov = Overrides {
            t: Some(2.5),
            epsilon: Some(1e-2),
            deg_exp: Some(6),
            deg_timedep: Some(8),
            lambda: Some("0.5".to_string()),
            m_matrix: Some("0.25".to_string()),
            seed: Some(9),
            trials: Some(50),
            solver_tol: Some(1e-7),
            ..Overrides::default()
        };
        apply_overrides(&mut l, &ov).unwrap();
        assert_eq!(l.config.t_override, Some(2.5));
        assert_eq!(l.config.epsilon, 1e-2);
        assert_eq!(l.config.deg_exp, 6);
        assert_eq!(l.config.deg_timedep, 8);
        assert_eq!(l.config.lambda[(0, 0)], 0.5);
        assert_eq!(l.config.m_override.as_ref().unwrap()[(0, 0)], 0.25);
        assert_eq!(l.config.exp_settings.solver.tol_gap, 1e-7);
        assert_eq!(l.config.timedep_settings.solver.tol_feas, 1e-7);
        let sim = l.sim.as_ref().unwrap();
        assert_eq!((sim.seed, sim.trials), (9, 50));
    }

    #[test]
    fn conflicting_cut_time_flags_are_rejected() {
        let mut l = loaded();
        let ov = Overrides {
            t: Some(2.0),
            t_grid: Some("1:8:1".to_string()),
            ..Overrides::default()
        };
        assert!(matches!(
            apply_overrides(&mut l, &ov),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn nonpositive_trials_are_a_usage_error() {
        let mut l = loaded();
        let ov = Overrides {
            trials: Some(0),
            ..Overrides::default()
        };
        assert!(apply_overrides(&mut l, &ov).is_err());
    }

    #[test]
    fn sweep_without_a_grid_is_a_usage_error() {
        let l = loaded();
        let dir = tempfile::tempdir().unwrap();
        match cmd_sweep(&l, dir.path()) {
            Err(CliError::Usage(msg)) => assert!(msg.contains("--T-grid"), "{msg}"),
            other => panic!("expected a usage error, got {other:?}"),
        }
    }

    #[test]
    fn simulate_writes_a_deterministic_csv() {
        let mut l = loaded();
        apply_overrides(
            &mut l,
            &Overrides {
                trials: Some(500),
                seed: Some(42),
                ..Overrides::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (code, out) = cmd_simulate(&l, dir.path()).unwrap();
        assert_eq!(code, EXIT_CERTIFIED);
        assert!(out.contains("population:"), "{out}");
        let path = dir.path().join("population.sim.csv");
        let first = std::fs::read(&path).unwrap();
        cmd_simulate(&l, dir.path()).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with("trials,hits,"), "{text}");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn verify_writes_reports_and_certifies() {
        let l = loaded();
        let dir = tempfile::tempdir().unwrap();
        let (code, out) = cmd_verify(&l, dir.path()).unwrap();
        assert_eq!(code, EXIT_CERTIFIED, "stdout: {out}");
        assert!(out.contains("certified, P(ever unsafe) <="), "{out}");
        let txt = std::fs::read_to_string(dir.path().join("population.report.txt")).unwrap();
        assert!(txt.contains("status: certified"), "{txt}");
        let json = std::fs::read_to_string(dir.path().join("population.report.json")).unwrap();
        assert!(json.ends_with('\n'));
        // No grid requested, so no curve file.
        assert!(!dir.path().join("population.curve.csv").exists());

        // Identical inputs reproduce the files byte for byte.
        let again = tempfile::tempdir().unwrap();
        cmd_verify(&loaded(), again.path()).unwrap();
        assert_eq!(
            txt,
            std::fs::read_to_string(again.path().join("population.report.txt")).unwrap()
        );
        assert_eq!(
            json,
            std::fs::read_to_string(again.path().join("population.report.json")).unwrap()
        );
    }

    #[test]
    fn sweep_writes_the_curve() {
        let mut l = loaded();
        apply_overrides(
            &mut l,
            &Overrides {
                t_grid: Some("1:4:1".to_string()),
                ..Overrides::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (code, _) = cmd_sweep(&l, dir.path()).unwrap();
        assert_eq!(code, EXIT_CERTIFIED);
        let csv = std::fs::read_to_string(dir.path().join("population.curve.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "T,bounded,tail,total");
        assert_eq!(lines.len(), 5);
    }
}
