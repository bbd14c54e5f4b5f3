//! The `.prob` problem-file format.
//!
//! A problem file is a TOML document:
//!
//! ```toml
//! name = "population"
//!
//! [system]
//! n = 1
//! m_w = 1
//! drift = ["-x1"]
//! diffusion = [["0.7071067811865476*x1"]]
//!
//! [sets]
//! domain = ["x1 >= 0"]
//! initial = ["x1 = 1"]
//! unsafe = ["x1 - 2 >= 0"]
//! boundary = ["x1"]
//! window = { lo = [0.0], hi = [10.0] }
//!
//! [certificates]
//! m = 1
//! lambda = [[1.0]]
//! deg_exp = 4
//! deg_timedep = 4
//!
//! [run]
//! epsilon = 1e-3
//!
//! [simulate]
//! dt = 1e-3
//! trials = 100000
//! seed = 0
//! ```
//!
//! Entries of `domain`/`initial`/`unsafe` are constraints in the forms
//! `p >= q`, `p <= q`, `p = q`, or a bare polynomial meaning `p >= 0`.
//! `boundary` entries are bare polynomials naming domain faces
//! `{h_k = 0}`. Polynomials use the `x1, x2, …` core syntax. The
//! `[certificates]` table optionally carries an `M` matrix (tail decay
//! override, default Λ/2) and `complement_index` (which `unsafe`
//! inequality is flipped to express `X \ X_u`). `[run]` holds `epsilon`,
//! a fixed cut time `T` or a grid `T_grid = "a:b:step"`, and
//! `solver_tol`. `[simulate]` enables the Monte-Carlo oracle.

use nalgebra::DMatrix;
use sbc_core::pipeline_report::VerifyConfig;
use sbc_core::polynomial::parse::parse_polynomial;
use sbc_core::polynomial::{F64Poly, PolyMatrix, PolyVector, VarContext};
use sbc_core::sde_model::{SafetyProblem, SampleBox, SdeSystem, SemialgebraicSet};
use serde::Deserialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// TOML syntax errors; the inner error carries line/column context.
    #[error("{path}: {source}")]
    Syntax {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("in `{field}`, cannot parse `{src}`: {detail}")]
    BadPolynomial {
        field: String,
        src: String,
        detail: String,
    },
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ProblemFileError {
    ProblemFileError::Invalid(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    name: Option<String>,
    system: SystemSection,
    sets: SetsSection,
    certificates: CertSection,
    run: Option<RunSection>,
    simulate: Option<SimSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    n: usize,
    m_w: usize,
    drift: Vec<String>,
    diffusion: Vec<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetsSection {
    domain: Vec<String>,
    initial: Vec<String>,
    #[serde(rename = "unsafe")]
    unsafe_set: Vec<String>,
    #[serde(default)]
    boundary: Vec<String>,
    window: WindowSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowSection {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertSection {
    m: usize,
    lambda: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    m_matrix: Option<Vec<Vec<f64>>>,
    deg_exp: u32,
    deg_timedep: u32,
    complement_index: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    epsilon: Option<f64>,
    #[serde(rename = "T")]
    t: Option<f64>,
    #[serde(rename = "T_grid")]
    t_grid: Option<String>,
    solver_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    dt: Option<f64>,
    horizon: Option<f64>,
    trials: Option<i64>,
    seed: Option<u64>,
    x0: Option<Vec<f64>>,
}

/// `[simulate]` section after defaulting; `horizon = None` means "pick
/// from the verification cut time" (`max(T, 20)`).
#[derive(Clone, Debug)]
pub struct SimSpec {
    pub dt: f64,
    pub horizon: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    /// Point-mass start; `None` samples the initial set uniformly.
    pub x0: Option<Vec<f64>>,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            dt: 1e-3,
            horizon: None,
            trials: 10_000,
            seed: 0,
            x0: None,
        }
    }
}

/// A parsed problem file, ready for the pipeline.
#[derive(Debug)]
pub struct LoadedProblem {
    pub problem: SafetyProblem<f64>,
    pub config: VerifyConfig,
    pub t_grid: Option<Vec<f64>>,
    pub sim: Option<SimSpec>,
}

/// Parse `src` (TOML) into a problem; `origin` labels error messages and
/// provides the fallback problem name.
pub fn parse_problem(src: &str, origin: &str) -> Result<LoadedProblem, ProblemFileError> {
    let doc: ProblemDoc = toml::from_str(src).map_err(|e| ProblemFileError::Syntax {
        path: origin.to_string(),
        source: Box::new(e),
    })?;
    build(doc, origin)
}

/// Read and parse a problem file.
pub fn load_problem(path: &Path) -> Result<LoadedProblem, ProblemFileError> {
    let src = std::fs::read_to_string(path).map_err(|e| ProblemFileError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_problem(&src, &path.display().to_string())
}

fn build(doc: ProblemDoc, origin: &str) -> Result<LoadedProblem, ProblemFileError> {
    let sys = &doc.system;
    if sys.n == 0 {
        return Err(invalid("system.n must be at least 1"));
    }
    let ctx = VarContext::state(sys.n);

    let poly = |field: &str, src: &str| -> Result<F64Poly, ProblemFileError> {
        parse_polynomial::<f64>(src, &ctx).map_err(|e| ProblemFileError::BadPolynomial {
            field: field.to_string(),
            src: src.to_string(),
            detail: e.to_string(),
        })
    };

    if sys.drift.len() != sys.n {
        return Err(invalid(format!(
            "system.drift has {} entries, expected n = {}",
            sys.drift.len(),
            sys.n
        )));
    }
    if sys.diffusion.len() != sys.n || sys.diffusion.iter().any(|row| row.len() != sys.m_w) {
        return Err(invalid(format!(
            "system.diffusion must be an n x m_w = {} x {} array of polynomials",
            sys.n, sys.m_w
        )));
    }
    let drift: Vec<F64Poly> = sys
        .drift
        .iter()
        .map(|s| poly("system.drift", s))
        .collect::<Result<_, _>>()?;
    let diffusion: Vec<F64Poly> = sys
        .diffusion
        .iter()
        .flatten()
        .map(|s| poly("system.diffusion", s))
        .collect::<Result<_, _>>()?;
    let system = SdeSystem::new(
        PolyVector::new(drift),
        PolyMatrix::new(sys.n, sys.m_w, diffusion),
    )
    .map_err(|e| invalid(format!("system: {e}")))?;

    let sets = &doc.sets;
    let domain = parse_set("sets.domain", &sets.domain, &ctx, &poly)?;
    let initial = parse_set("sets.initial", &sets.initial, &ctx, &poly)?;
    let unsafe_set = parse_set("sets.unsafe", &sets.unsafe_set, &ctx, &poly)?;
    let boundary_pieces: Vec<F64Poly> = sets
        .boundary
        .iter()
        .map(|s| poly("sets.boundary", s))
        .collect::<Result<_, _>>()?;
    if sets.window.lo.len() != sys.n || sets.window.hi.len() != sys.n {
        return Err(invalid(format!(
            "sets.window lo/hi must each have n = {} entries",
            sys.n
        )));
    }
    let window = SampleBox::new(sets.window.lo.clone(), sets.window.hi.clone())
        .map_err(|e| invalid(format!("sets.window: {e}")))?;

    let name = doc.name.unwrap_or_else(|| {
        Path::new(origin)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "problem".to_string())
    });
    let problem = SafetyProblem {
        name,
        system,
        domain,
        initial,
        unsafe_set,
        boundary_pieces,
        window,
    };

    let certs = &doc.certificates;
    let lambda = matrix_from_rows(&certs.lambda, "certificates.lambda")?;
    if lambda.nrows() != certs.m {
        return Err(invalid(format!(
            "certificates.lambda is {}x{} but m = {}",
            lambda.nrows(),
            lambda.ncols(),
            certs.m
        )));
    }
    let mut config = VerifyConfig::new(lambda, certs.deg_exp, certs.deg_timedep);
    if let Some(rows) = &certs.m_matrix {
        config.m_override = Some(matrix_from_rows(rows, "certificates.M")?);
    }
    config.timedep_settings.complement_index = certs.complement_index;

    let mut t_grid = None;
    if let Some(run) = &doc.run {
        if run.t.is_some() && run.t_grid.is_some() {
            return Err(invalid("run.T and run.T_grid are mutually exclusive"));
        }
        if let Some(eps) = run.epsilon {
            config.epsilon = eps;
        }
        config.t_override = run.t;
        if let Some(grid) = &run.t_grid {
            t_grid = Some(parse_grid(grid).map_err(|e| invalid(format!("run.T_grid: {e}")))?);
        }
        if let Some(tol) = run.solver_tol {
            set_solver_tol(&mut config, tol)?;
        }
    }

    let sim = match &doc.simulate {
        None => None,
        Some(s) => {
            let mut spec = SimSpec::default();
            if let Some(dt) = s.dt {
                spec.dt = dt;
            }
            spec.horizon = s.horizon;
            if let Some(trials) = s.trials {
                spec.trials = positive_trials(trials)?;
            }
            if let Some(seed) = s.seed {
                spec.seed = seed;
            }
            if let Some(x0) = &s.x0 {
                if x0.len() != sys.n {
                    return Err(invalid(format!(
                        "simulate.x0 must have n = {} entries",
                        sys.n
                    )));
                }
                spec.x0 = Some(x0.clone());
            }
            Some(spec)
        }
    };

    Ok(LoadedProblem {
        problem,
        config,
        t_grid,
        sim,
    })
}

/// Trial counts arrive signed so `trials = 0` and negatives fail loudly
/// instead of wrapping.
pub fn positive_trials(trials: i64) -> Result<u64, ProblemFileError> {
    if trials <= 0 {
        return Err(invalid(format!("trials must be positive, got {trials}")));
    }
    Ok(trials as u64)
}

pub fn set_solver_tol(config: &mut VerifyConfig, tol: f64) -> Result<(), ProblemFileError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(invalid(format!(
            "solver tolerance must be a positive number, got {tol}"
        )));
    }
    for solver in [
        &mut config.exp_settings.solver,
        &mut config.timedep_settings.solver,
    ] {
        solver.tol_gap = tol;
        solver.tol_feas = tol;
    }
    Ok(())
}

type PolyParser<'a> = dyn Fn(&str, &str) -> Result<F64Poly, ProblemFileError> + 'a;

/// One constraint list → semialgebraic set. Each entry is `p >= q`,
/// `p <= q`, `p = q` (or `==`), or a bare polynomial meaning `p >= 0`.
fn parse_set(
    field: &str,
    entries: &[String],
    ctx: &VarContext,
    poly: &PolyParser<'_>,
) -> Result<SemialgebraicSet<f64>, ProblemFileError> {
    let mut ineqs = Vec::new();
    let mut eqs = Vec::new();
    for entry in entries {
        if let Some((lhs, rhs)) = entry.split_once(">=") {
            ineqs.push(poly(field, lhs)?.sub(&poly(field, rhs)?));
        } else if let Some((lhs, rhs)) = entry.split_once("<=") {
            ineqs.push(poly(field, rhs)?.sub(&poly(field, lhs)?));
        } else if let Some((lhs, rhs)) = entry.split_once("==") {
            eqs.push(poly(field, lhs)?.sub(&poly(field, rhs)?));
        } else if let Some((lhs, rhs)) = entry.split_once('=') {
            eqs.push(poly(field, lhs)?.sub(&poly(field, rhs)?));
        } else {
            ineqs.push(poly(field, entry)?);
        }
    }
    Ok(SemialgebraicSet::new(*ctx, ineqs, eqs))
}

/// Row-major nested arrays → square matrix.
pub fn matrix_from_rows(
    rows: &[Vec<f64>],
    field: &str,
) -> Result<DMatrix<f64>, ProblemFileError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(format!("{field} must be a non-empty square matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

/// Inline matrix syntax for flags: rows separated by `;`, entries by `,`
/// (e.g. `0.45,0.1;0.1,0.45`).
pub fn parse_matrix_flag(src: &str) -> Result<DMatrix<f64>, ProblemFileError> {
    let rows: Vec<Vec<f64>> = src
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|cell| {
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|_| invalid(format!("bad matrix entry `{}`", cell.trim())))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    matrix_from_rows(&rows, "matrix flag")
}

/// Cut-time grid `a:b:step`, inclusive of both endpoints up to a relative
/// rounding slack.
pub fn parse_grid(src: &str) -> Result<Vec<f64>, ProblemFileError> {
    let parts: Vec<&str> = src.split(':').collect();
    let [a, b, step] = parts.as_slice() else {
        return Err(invalid(format!("grid `{src}` is not of the form a:b:step")));
    };
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| invalid(format!("bad grid number `{}`", s.trim())))
    };
    let (a, b, step) = (parse(a)?, parse(b)?, parse(step)?);
    if !(step > 0.0 && step.is_finite() && a.is_finite() && b.is_finite()) {
        return Err(invalid(format!(
            "grid `{src}` needs finite endpoints and a positive step"
        )));
    }
    let mut grid = Vec::new();
    let mut k = 0u32;
    loop {
        let t = a + f64::from(k) * step;
        if t > b + step * 1e-9 {
            break;
        }
        grid.push(t);
        k += 1;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

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

[run]
epsilon = 1e-3

[simulate]
dt = 1e-3
trials = 1000
seed = 7
"#;

    #[test]
    fn population_file_parses() {
        let loaded = parse_problem(POPULATION, "population.prob").unwrap();
        assert_eq!(loaded.problem.name, "population");
        assert_eq!(loaded.problem.domain.inequalities().len(), 1);
        assert_eq!(loaded.problem.initial.equalities().len(), 1);
        assert_eq!(loaded.problem.boundary_pieces.len(), 1);
        assert_eq!(loaded.config.deg_exp, 4);
        assert_eq!(loaded.config.epsilon, 1e-3);
        let sim = loaded.sim.unwrap();
        assert_eq!(sim.trials, 1000);
        assert_eq!(sim.seed, 7);
        assert_eq!(sim.horizon, None);
    }

    #[test]
    fn name_defaults_to_the_file_stem() {
        let src = POPULATION.replace("name = \"population\"\n", "");
        let loaded = parse_problem(&src, "dir/growth.prob").unwrap();
        assert_eq!(loaded.problem.name, "growth");
    }

    #[test]
    fn constraint_forms_all_parse() {
        let src = POPULATION.replace(
            "domain = [\"x1 >= 0\"]",
            "domain = [\"0 <= x1\", \"x1 <= 10\", \"x1\"]",
        );
        let loaded = parse_problem(&src, "p.prob").unwrap();
        let ineqs = loaded.problem.domain.inequalities();
        assert_eq!(ineqs.len(), 3);
        // `0 <= x1` and bare `x1` are the same inequality.
        assert_eq!(ineqs[0], ineqs[2]);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_problem("[system\nn = 1", "broken.prob").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("broken.prob"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn bad_polynomials_name_the_field() {
        let src = POPULATION.replace("drift = [\"-x1\"]", "drift = [\"-x9\"]");
        let err = parse_problem(&src, "p.prob").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("system.drift"), "{msg}");
        assert!(msg.contains("x9"), "{msg}");
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        for (from, to, needle) in [
            (
                "diffusion = [[\"0.7071067811865476*x1\"]]",
                "diffusion = [[\"x1\", \"x1\"]]",
                "n x m_w",
            ),
            (
                "window = { lo = [0.0], hi = [10.0] }",
                "window = { lo = [0.0, 0.0], hi = [10.0, 10.0] }",
                "window",
            ),
            ("m = 1", "m = 2", "m = 2"),
            ("trials = 1000", "trials = 0", "positive"),
        ] {
            let src = POPULATION.replace(from, to);
            let err = parse_problem(&src, "p.prob").unwrap_err();
            assert!(err.to_string().contains(needle), "{err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let src = POPULATION.replace("epsilon = 1e-3", "epsilon = 1e-3\nbogus = 1");
        assert!(parse_problem(&src, "p.prob").is_err());
    }

    #[test]
    fn t_and_t_grid_conflict() {
        let src = POPULATION.replace("epsilon = 1e-3", "T = 2.0\nT_grid = \"1:8:1\"");
        let err = parse_problem(&src, "p.prob").unwrap_err();
        assert!(err.to_string().contains("mutually exclusive"), "{err}");
    }

    #[test]
    fn grids_are_inclusive_and_validated() {
        assert_eq!(parse_grid("1:8:1").unwrap().len(), 8);
        assert_eq!(parse_grid("0.5:2.0:0.5").unwrap(), vec![0.5, 1.0, 1.5, 2.0]);
        // An endpoint reached only up to rounding is still included.
        assert_eq!(parse_grid("0.1:0.3:0.1").unwrap().len(), 3);
        assert!(parse_grid("5:1:1").unwrap().is_empty());
        assert!(parse_grid("1:8:0").is_err());
        assert!(parse_grid("1:8").is_err());
        assert!(parse_grid("a:b:c").is_err());
    }

    #[test]
    fn matrix_flags_parse() {
        let m = parse_matrix_flag("0.45,0.1;0.1,0.45").unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m[(0, 1)], 0.1);
        assert_eq!(parse_matrix_flag("1.5").unwrap().nrows(), 1);
        assert!(parse_matrix_flag("1,2;3").is_err());
        assert!(parse_matrix_flag("1,x;3,4").is_err());
    }
}
