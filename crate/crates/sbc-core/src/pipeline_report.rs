//! End-to-end verification pipeline and reporting.
//!
//! The unbounded-horizon failure probability splits at any cut time `T`:
//!
//! ```text
//! P(∃ t ≥ 0: X̃_t ∈ X_u) ≤ P(∃ t ∈ [0,T]: X̃_t ∈ X_u) + P(∃ t ≥ T: X̃_t ∈ X_u)
//! ```
//!
//! [`verify_unbounded`] certifies the second term with an exponential
//! certificate (choosing `T = T̃` so the tail drops below a budget `ε`,
//! unless the caller fixes `T`), the first with a time-dependent
//! certificate on `[0, T]`, and combines them into
//! `total = min(1, bounded + tail)`. [`sweep`] reuses one exponential
//! certificate across a grid of cut times and synthesizes one bounded
//! certificate per grid point, producing the `(T, bounded, tail, total)`
//! curve.
//!
//! Every stage failure is carried in the report — the failed stage, the
//! retry ladder that was attempted, and whatever stages did succeed — so a
//! partial result is still inspectable. Reports render as text, as a
//! JSON document whose certificates can be reloaded and re-checked, and
//! as a CSV curve.

use crate::exp_certificate::{
    check_certificate_sampling, synthesize_exp, validate_lambda, ExpCertificate, LambdaSpec,
    SynthSettings,
};
use crate::polynomial::{F64Poly, Monomial, VarContext};
use crate::sde_model::SafetyProblem;
use crate::simulator::{simulate, SimConfig, SimResult};
use crate::tail_bound::{find_T_tilde, tail_bound_at, tail_bound_raw, TailBoundModel};
use crate::timedep_certificate::{
    bounded_bound, check_timedep_sampling, synthesize_timedep, TimeDepCertificate,
    TimedepSettings,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Sample count for the in-pipeline certificate sampling checks (the
/// heavier 10^4-point sweep lives in the test suites).
const PIPELINE_SAMPLES: usize = 2_000;
const PIPELINE_SAMPLING_SEED: u64 = 0x5bc;

/// Everything [`verify_unbounded`] needs besides the problem itself.
#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub lambda: DMatrix<f64>,
    pub m_override: Option<DMatrix<f64>>,
    pub deg_exp: u32,
    pub deg_timedep: u32,
    /// Tail budget used to choose `T̃` when `t_override` is absent.
    pub epsilon: f64,
    /// Fix the cut time instead of solving for `T̃`.
    pub t_override: Option<f64>,
    pub exp_settings: SynthSettings,
    pub timedep_settings: TimedepSettings,
    /// Attach a Monte-Carlo run to the report.
    pub sim: Option<SimConfig>,
}

impl VerifyConfig {
    pub fn new(lambda: DMatrix<f64>, deg_exp: u32, deg_timedep: u32) -> VerifyConfig {
        VerifyConfig {
            lambda,
            m_override: None,
            deg_exp,
            deg_timedep,
            epsilon: 1e-3,
            t_override: None,
            exp_settings: SynthSettings::default(),
            timedep_settings: TimedepSettings::default(),
            sim: None,
        }
    }
}

/// Which stage of the pipeline failed, and how.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub detail: String,
}

/// One row of the cut-time sweep. `tail`/`total` are `None` below `T*`
/// (flagged) and on per-row failures (recorded in `note`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    pub bounded: Option<f64>,
    pub tail: Option<f64>,
    pub total: Option<f64>,
    pub below_t_star: bool,
    pub note: Option<String>,
}

/// Complete (possibly partial) verification result.
#[derive(Clone, Debug)]
pub struct BoundReport {
    pub name: String,
    pub exp: Option<ExpCertificate>,
    pub tail_model: Option<TailBoundModel>,
    pub t_star: Option<f64>,
    /// Auto-selected cut time (absent when the user fixed `T`).
    pub t_tilde: Option<f64>,
    pub epsilon: Option<f64>,
    /// The cut time actually used for the bounded certificate.
    pub horizon: Option<f64>,
    pub timedep: Option<TimeDepCertificate>,
    pub tail_raw: Option<f64>,
    pub tail: Option<f64>,
    pub bounded_raw: Option<f64>,
    pub bounded: Option<f64>,
    pub total_raw: Option<f64>,
    pub total: Option<f64>,
    pub failure: Option<StageFailure>,
    pub curve: Vec<SweepRow>,
    pub sim: Option<SimResult>,
    pub diagnostics: Vec<String>,
    pub caveats: Vec<String>,
}

impl BoundReport {
    pub fn is_certified(&self) -> bool {
        self.failure.is_none() && self.total.is_some()
    }

    fn empty(name: &str) -> BoundReport {
        BoundReport {
            name: name.to_string(),
            exp: None,
            tail_model: None,
            t_star: None,
            t_tilde: None,
            epsilon: None,
            horizon: None,
            timedep: None,
            tail_raw: None,
            tail: None,
            bounded_raw: None,
            bounded: None,
            total_raw: None,
            total: None,
            failure: None,
            curve: Vec::new(),
            sim: None,
            diagnostics: Vec::new(),
            caveats: base_caveats(),
        }
    }

    fn fail(mut self, stage: &str, detail: impl ToString) -> BoundReport {
        self.failure = Some(StageFailure {
            stage: stage.to_string(),
            detail: detail.to_string(),
        });
        self
    }
}

fn base_caveats() -> Vec<String> {
    vec![
        "Certificates come from a floating-point interior-point SDP solve; Gram matrices are \
         projected onto the PSD cone and decomposition residuals are re-checked, but no \
         interval-arithmetic certification is performed."
            .to_string(),
        "The envelope supremum behind T* is evaluated on a finite grid with a local Lipschitz \
         inflation; T* is therefore conservative up to that slack."
            .to_string(),
    ]
}

const SIM_CAVEAT: &str = "Monte-Carlo hit detection happens only at Euler–Maruyama grid \
                          points, which biases the empirical rate low; it is a sanity oracle, \
                          not a bound.";

/// Synthesize the exponential certificate and package it with `M`/`T*`.
/// Shared head of [`verify_unbounded`] and [`sweep`].
fn solve_exp_stage(
    problem: &SafetyProblem<f64>,
    config: &VerifyConfig,
    report: &mut BoundReport,
) -> Option<(LambdaSpec, TailBoundModel)> {
    let lambda = match validate_lambda(config.lambda.clone()) {
        Ok(l) => l,
        Err(e) => {
            report.failure = Some(StageFailure {
                stage: "validate_lambda".to_string(),
                detail: e.to_string(),
            });
            return None;
        }
    };
    let cert = match synthesize_exp(problem, &lambda, config.deg_exp, &config.exp_settings) {
        Ok(c) => c,
        Err(e) => {
            report.failure = Some(StageFailure {
                stage: "synthesize_exp".to_string(),
                detail: e.to_string(),
            });
            return None;
        }
    };
    for item in &cert.witnesses {
        match item.witness.validate(&item.target) {
            Ok(w) => report.diagnostics.push(format!(
                "witness `{}`: min gram eigenvalue {:.3e}, identity residual {:.3e}",
                item.label, w.min_gram_eigenvalue, w.identity_residual
            )),
            Err(e) => {
                report.failure = Some(StageFailure {
                    stage: "witness_validation".to_string(),
                    detail: e.to_string(),
                });
                return None;
            }
        }
    }
    match check_certificate_sampling(&cert, problem, PIPELINE_SAMPLES, PIPELINE_SAMPLING_SEED) {
        Ok(rep) => {
            let worst = rep
                .families
                .iter()
                .map(|f| f.worst)
                .fold(f64::NEG_INFINITY, f64::max);
            report.diagnostics.push(format!(
                "exponential certificate sampling ({} points/family): worst relative violation {:.3e}",
                PIPELINE_SAMPLES, worst
            ));
        }
        Err(e) => {
            report.failure = Some(StageFailure {
                stage: "certificate_sampling".to_string(),
                detail: e.to_string(),
            });
            return None;
        }
    }
    report.exp = Some(cert.clone());
    let model = match TailBoundModel::new(cert, config.m_override.clone()) {
        Ok(m) => m,
        Err(e) => {
            report.failure = Some(StageFailure {
                stage: "find_T_star".to_string(),
                detail: e.to_string(),
            });
            return None;
        }
    };
    report.t_star = Some(model.t_star);
    report.tail_model = Some(model.clone());
    Some((lambda, model))
}

/// Full unbounded-horizon verification; failures are carried in the
/// returned report, never raised.
pub fn verify_unbounded(problem: &SafetyProblem<f64>, config: &VerifyConfig) -> BoundReport {
    let mut report = BoundReport::empty(&problem.name);
    let Some((_, model)) = solve_exp_stage(problem, config, &mut report) else {
        return report;
    };

    let horizon = match config.t_override {
        Some(t) => t,
        None => {
            report.epsilon = Some(config.epsilon);
            match find_T_tilde(&model, config.epsilon) {
                Ok(t) => {
                    report.t_tilde = Some(t);
                    t
                }
                Err(e) => return report.fail("find_T_tilde", e),
            }
        }
    };
    report.horizon = Some(horizon);

    let (tail_raw, tail) = match (tail_bound_raw(&model, horizon), tail_bound_at(&model, horizon))
    {
        (Ok(raw), Ok(clamped)) => (raw, clamped),
        (Err(e), _) | (_, Err(e)) => return report.fail("tail_bound", e),
    };
    report.tail_raw = Some(tail_raw);
    report.tail = Some(tail);

    // A zero-width horizon leaves nothing for the bounded certificate to
    // do: the tail bound alone covers [0, ∞).
    let timedep = if horizon > 0.0 {
        match synthesize_timedep(problem, horizon, config.deg_timedep, &config.timedep_settings)
        {
            Ok(c) => Some(c),
            Err(e) => return report.fail("synthesize_timedep", e),
        }
    } else {
        None
    };
    let (bounded_raw, bounded) = match &timedep {
        Some(c) => {
            match check_timedep_sampling(c, problem, PIPELINE_SAMPLES, PIPELINE_SAMPLING_SEED) {
                Ok(rep) => {
                    let worst = rep
                        .families
                        .iter()
                        .map(|f| f.worst)
                        .fold(f64::NEG_INFINITY, f64::max);
                    report.diagnostics.push(format!(
                        "bounded certificate sampling ({} points/family): worst relative violation {:.3e}",
                        PIPELINE_SAMPLES, worst
                    ));
                }
                Err(e) => return report.fail("certificate_sampling", e),
            }
            (c.beta, bounded_bound(c))
        }
        None => (0.0, 0.0),
    };
    report.timedep = timedep;
    report.bounded_raw = Some(bounded_raw);
    report.bounded = Some(bounded);
    report.total_raw = Some(bounded_raw + tail_raw);
    report.total = Some((bounded + tail).min(1.0));

    if let Some(sim_config) = &config.sim {
        attach_simulation(&mut report, problem, sim_config);
    }
    report
}

/// Run a Monte-Carlo pass and fold it into the report (caveat,
/// diagnostics, failure on configuration errors). Returns whether the
/// run succeeded.
pub fn attach_simulation(
    report: &mut BoundReport,
    problem: &SafetyProblem<f64>,
    sim_config: &SimConfig,
) -> bool {
    report.caveats.push(SIM_CAVEAT.to_string());
    match simulate(problem, sim_config) {
        Ok(result) => {
            let certified = report
                .total
                .map(|t| format!("{t:.6}"))
                .unwrap_or_else(|| "n/a".to_string());
            report.diagnostics.push(format!(
                "simulation: {}/{} hits (rate {:.6}), certified total {}",
                result.hit_count, result.trials, result.empirical_rate, certified
            ));
            report.sim = Some(result);
            true
        }
        Err(e) => {
            report.failure = Some(StageFailure {
                stage: "simulate".to_string(),
                detail: e.to_string(),
            });
            false
        }
    }
}

/// Cut-time sweep: one exponential certificate, one bounded-horizon
/// synthesis per grid point (solved concurrently). `t_grid` must be sorted
/// ascending. Rows below `T*` or with failed synthesis become gaps.
pub fn sweep(
    problem: &SafetyProblem<f64>,
    config: &VerifyConfig,
    t_grid: &[f64],
) -> BoundReport {
    let mut report = BoundReport::empty(&problem.name);
    let Some((_, model)) = solve_exp_stage(problem, config, &mut report) else {
        return report;
    };
    report.curve = sweep_rows(problem, config, &model, t_grid);
    report
}

/// The per-cut-time rows of [`sweep`], against an already-solved tail
/// model (each bounded-horizon synthesis runs concurrently).
pub fn sweep_rows(
    problem: &SafetyProblem<f64>,
    config: &VerifyConfig,
    model: &TailBoundModel,
    t_grid: &[f64],
) -> Vec<SweepRow> {
    t_grid
        .par_iter()
        .map(|&t| {
            let below = t < model.t_star - 1e-12;
            let tail = if below {
                None
            } else {
                tail_bound_at(&model, t).ok()
            };
            if t <= 0.0 {
                return SweepRow {
                    t,
                    bounded: None,
                    tail,
                    total: None,
                    below_t_star: below,
                    note: Some("cut time must be positive for the bounded certificate".into()),
                };
            }
            match synthesize_timedep(problem, t, config.deg_timedep, &config.timedep_settings) {
                Ok(cert) => {
                    let bounded = bounded_bound(&cert);
                    SweepRow {
                        t,
                        bounded: Some(bounded),
                        tail,
                        total: tail.map(|tl| (bounded + tl).min(1.0)),
                        below_t_star: below,
                        note: below.then(|| "below T*: no tail bound at this cut".into()),
                    }
                }
                Err(e) => SweepRow {
                    t,
                    bounded: None,
                    tail,
                    total: None,
                    below_t_star: below,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Render the curve as CSV (`T,bounded,tail,total`; gaps are empty cells).
pub fn curve_csv(report: &BoundReport) -> String {
    let mut out = String::from("T,bounded,tail,total\n");
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in &report.curve {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.t,
            cell(row.bounded),
            cell(row.tail),
            cell(row.total)
        );
    }
    out
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Human-readable report.
pub fn render_text(report: &BoundReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "problem: {}", report.name);
    let _ = writeln!(
        s,
        "status: {}",
        if report.is_certified() {
            "certified"
        } else if report.failure.is_some() {
            "failed"
        } else {
            "partial"
        }
    );
    if let Some(f) = &report.failure {
        let _ = writeln!(s, "failed stage: {}", f.stage);
        let _ = writeln!(s, "  {}", f.detail);
    }
    if let Some(cert) = &report.exp {
        let _ = writeln!(s, "\n[exponential certificate]");
        let _ = writeln!(s, "  Lambda = {}", fmt_matrix(cert.lambda.matrix()));
        let _ = writeln!(s, "  degree = {}, alpha = {}", cert.degree, cert.alpha);
        let levels: Vec<String> = cert.level.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "  unsafe levels = [{}]", levels.join(", "));
        for (i, v) in cert.v.iter().enumerate() {
            let _ = writeln!(s, "  V_{i}(x) = {v}");
        }
        for a in &cert.attempts {
            let _ = writeln!(
                s,
                "  ladder: Lambda x {}, degree {}: {}",
                a.lambda_scale, a.degree, a.outcome
            );
        }
    }
    if let Some(model) = &report.tail_model {
        let _ = writeln!(s, "\n[tail bound]");
        if let Some(m) = &model.m_matrix {
            let _ = writeln!(s, "  M = {}", fmt_matrix(m));
        }
        let _ = writeln!(s, "  T* = {}", model.t_star);
        let _ = writeln!(s, "  bound form: {}", model.describe());
        if let (Some(eps), Some(tt)) = (report.epsilon, report.t_tilde) {
            let _ = writeln!(s, "  T~ (epsilon = {eps}) = {tt}");
        }
        if let (Some(h), Some(tail), Some(raw)) = (report.horizon, report.tail, report.tail_raw)
        {
            let _ = writeln!(s, "  tail({h}) = {tail} (raw {raw})");
        }
    }
    if let Some(cert) = &report.timedep {
        let _ = writeln!(s, "\n[bounded-horizon certificate]");
        let _ = writeln!(
            s,
            "  degree = {}, T = {}, beta = {}, eta = {}",
            cert.degree, cert.horizon, cert.beta, cert.eta
        );
        let _ = writeln!(s, "  H(t,x) = {}", cert.h);
        for a in &cert.attempts {
            let _ = writeln!(s, "  ladder: degree {}: {}", a.degree, a.outcome);
        }
    }
    if let (Some(b), Some(t), Some(total)) = (report.bounded, report.tail, report.total) {
        let _ = writeln!(s, "\n[combined]");
        let _ = writeln!(
            s,
            "  P(ever unsafe) <= {total}  (bounded {b} + tail {t}, raw sum {})",
            report.total_raw.unwrap_or(b + t)
        );
    }
    if !report.curve.is_empty() {
        let _ = writeln!(s, "\n[sweep]");
        for row in &report.curve {
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
            let mut line = format!(
                "  T = {}: bounded {}, tail {}, total {}",
                row.t,
                cell(row.bounded),
                cell(row.tail),
                cell(row.total)
            );
            if row.below_t_star {
                line.push_str("  [below T*]");
            }
            if let Some(n) = &row.note {
                let _ = write!(line, "  ({n})");
            }
            let _ = writeln!(s, "{line}");
        }
    }
    if let Some(sim) = &report.sim {
        let _ = writeln!(s, "\n[simulation]");
        let _ = writeln!(
            s,
            "  {} trials: {} hits (rate {}), {} blow-ups",
            sim.trials, sim.hit_count, sim.empirical_rate, sim.blowup_count
        );
        let _ = writeln!(
            s,
            "  Clopper-Pearson 95%: [{}, {}], mean stop time {}",
            sim.clopper_pearson_95.0, sim.clopper_pearson_95.1, sim.mean_stop_time
        );
    }
    if !report.diagnostics.is_empty() {
        let _ = writeln!(s, "\n[diagnostics]");
        for d in &report.diagnostics {
            let _ = writeln!(s, "  {d}");
        }
    }
    let _ = writeln!(s, "\n[caveats]");
    for c in &report.caveats {
        let _ = writeln!(s, "  {c}");
    }
    s
}

// ---------------------------------------------------------------------
// JSON document: stable schema, full-precision coefficients, and enough
// data to reload both certificates and re-run the sampling checkers.
// ---------------------------------------------------------------------

/// Dense-exponent polynomial: each term is (powers per variable, coeff).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyJson {
    pub terms: Vec<(Vec<u16>, f64)>,
}

impl PolyJson {
    pub fn from_poly(p: &F64Poly) -> PolyJson {
        let nv = p.ctx().num_vars();
        PolyJson {
            terms: p
                .iter()
                .map(|(m, &c)| {
                    let mut powers = vec![0u16; nv];
                    for (v, e) in m.powers() {
                        powers[v] = e;
                    }
                    (powers, c)
                })
                .collect(),
        }
    }

    pub fn to_poly(&self, ctx: VarContext) -> F64Poly {
        let mut p = F64Poly::zero(ctx);
        for (powers, c) in &self.terms {
            let mono = Monomial::from_powers(
                powers
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(v, &e)| (v, e)),
            );
            p.add_term(mono, *c);
        }
        p
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpCertJson {
    pub lambda: Vec<Vec<f64>>,
    pub alpha: f64,
    pub level: Vec<f64>,
    pub degree: u32,
    pub v: Vec<PolyJson>,
}

impl ExpCertJson {
    pub fn from_cert(cert: &ExpCertificate) -> ExpCertJson {
        let m = cert.lambda.matrix();
        ExpCertJson {
            lambda: (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect(),
            alpha: cert.alpha,
            level: cert.level.clone(),
            degree: cert.degree,
            v: cert.v.iter().map(PolyJson::from_poly).collect(),
        }
    }

    /// Rebuild a checkable certificate (witnesses are not serialized; the
    /// sampling checker needs only the polynomials and scalars).
    pub fn to_cert(&self, state_ctx: VarContext) -> Result<ExpCertificate, String> {
        let rows = self.lambda.len();
        let flat: Vec<f64> = self.lambda.iter().flatten().copied().collect();
        if flat.len() != rows * rows {
            return Err("lambda matrix is not square".to_string());
        }
        let lambda = validate_lambda(DMatrix::from_row_slice(rows, rows, &flat))
            .map_err(|e| e.to_string())?;
        Ok(ExpCertificate {
            lambda,
            v: self.v.iter().map(|p| p.to_poly(state_ctx)).collect(),
            alpha: self.alpha,
            level: self.level.clone(),
            degree: self.degree,
            witnesses: vec![],
            attempts: vec![],
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimedepCertJson {
    pub horizon: f64,
    pub eta: f64,
    pub beta: f64,
    pub degree: u32,
    pub complement_index: Option<usize>,
    pub h: PolyJson,
}

impl TimedepCertJson {
    pub fn from_cert(cert: &TimeDepCertificate) -> TimedepCertJson {
        TimedepCertJson {
            horizon: cert.horizon,
            eta: cert.eta,
            beta: cert.beta,
            degree: cert.degree,
            complement_index: cert.complement_index,
            h: PolyJson::from_poly(&cert.h),
        }
    }

    pub fn to_cert(&self, n_state: usize) -> TimeDepCertificate {
        TimeDepCertificate {
            h: self.h.to_poly(VarContext::with_time(n_state)),
            horizon: self.horizon,
            eta: self.eta,
            beta: self.beta,
            degree: self.degree,
            complement_index: self.complement_index,
            witnesses: vec![],
            attempts: vec![],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimJson {
    pub hit_count: u64,
    pub trials: u64,
    pub empirical_rate: f64,
    pub clopper_pearson_95: (f64, f64),
    pub mean_stop_time: f64,
    pub blowup_count: u64,
}

/// The machine-readable report document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportJson {
    pub name: String,
    pub status: String,
    pub failure: Option<StageFailure>,
    pub exp_certificate: Option<ExpCertJson>,
    pub m_matrix: Option<Vec<Vec<f64>>>,
    pub t_star: Option<f64>,
    pub t_tilde: Option<f64>,
    pub epsilon: Option<f64>,
    pub horizon: Option<f64>,
    pub timedep_certificate: Option<TimedepCertJson>,
    pub tail_raw: Option<f64>,
    pub tail: Option<f64>,
    pub bounded_raw: Option<f64>,
    pub bounded: Option<f64>,
    pub total_raw: Option<f64>,
    pub total: Option<f64>,
    pub curve: Vec<SweepRow>,
    pub simulation: Option<SimJson>,
    pub diagnostics: Vec<String>,
    pub caveats: Vec<String>,
}

pub fn to_report_json(report: &BoundReport) -> ReportJson {
    ReportJson {
        name: report.name.clone(),
        status: if report.is_certified() {
            "certified".to_string()
        } else if report.failure.is_some() {
            "failed".to_string()
        } else {
            "partial".to_string()
        },
        failure: report.failure.clone(),
        exp_certificate: report.exp.as_ref().map(ExpCertJson::from_cert),
        m_matrix: report.tail_model.as_ref().and_then(|m| {
            m.m_matrix.as_ref().map(|mm| {
                (0..mm.nrows())
                    .map(|i| (0..mm.ncols()).map(|j| mm[(i, j)]).collect())
                    .collect()
            })
        }),
        t_star: report.t_star,
        t_tilde: report.t_tilde,
        epsilon: report.epsilon,
        horizon: report.horizon,
        timedep_certificate: report.timedep.as_ref().map(TimedepCertJson::from_cert),
        tail_raw: report.tail_raw,
        tail: report.tail,
        bounded_raw: report.bounded_raw,
        bounded: report.bounded,
        total_raw: report.total_raw,
        total: report.total,
        curve: report.curve.clone(),
        simulation: report.sim.as_ref().map(|s| SimJson {
            hit_count: s.hit_count,
            trials: s.trials,
            empirical_rate: s.empirical_rate,
            clopper_pearson_95: s.clopper_pearson_95,
            mean_stop_time: s.mean_stop_time,
            blowup_count: s.blowup_count,
        }),
        diagnostics: report.diagnostics.clone(),
        caveats: report.caveats.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::parse::parse_polynomial;
    use crate::polynomial::{PolyMatrix, PolyVector};
    use crate::sde_model::{SampleBox, SdeSystem, SemialgebraicSet};
    use approx::assert_abs_diff_eq;

    fn fp(src: &str, ctx: &VarContext) -> F64Poly {
        parse_polynomial::<f64>(src, ctx).unwrap()
    }

    fn population_problem() -> SafetyProblem<f64> {
        let ctx = VarContext::state(1);
        let system = SdeSystem::new(
            PolyVector::new(vec![fp("-x1", &ctx)]),
            PolyMatrix::new(1, 1, vec![fp("0.7071067811865476*x1", &ctx)]),
        )
        .unwrap();
        SafetyProblem {
            name: "population".to_string(),
            system,
            domain: SemialgebraicSet::new(ctx, vec![fp("x1", &ctx)], vec![]),
            initial: SemialgebraicSet::new(ctx, vec![], vec![fp("x1 - 1", &ctx)]),
            unsafe_set: SemialgebraicSet::new(ctx, vec![fp("x1 - 2", &ctx)], vec![]),
            boundary_pieces: vec![fp("x1", &ctx)],
            window: SampleBox::new(vec![0.0], vec![10.0]).unwrap(),
        }
    }

    fn population_config() -> VerifyConfig {
        VerifyConfig::new(DMatrix::from_row_slice(1, 1, &[1.0]), 4, 4)
    }

    #[test]
    fn population_end_to_end_is_certified() {
        let problem = population_problem();
        let report = verify_unbounded(&problem, &population_config());
        assert!(report.is_certified(), "failure: {:?}", report.failure);
        let cert = report.exp.as_ref().unwrap();
        assert!(cert.alpha <= 0.15);
        assert_eq!(report.t_star, Some(0.0));
        let t_tilde = report.t_tilde.unwrap();
        assert_abs_diff_eq!(t_tilde, (cert.alpha / 1e-3).ln(), epsilon = 2e-4);
        assert!(report.tail.unwrap() <= 1e-3);
        let (b, t, total) = (
            report.bounded.unwrap(),
            report.tail.unwrap(),
            report.total.unwrap(),
        );
        assert_abs_diff_eq!(total, (b + t).min(1.0), epsilon = 0.0);
        assert!(total < cert.alpha + 1e-3 + 1e-9);
        let text = render_text(&report);
        assert!(text.contains("status: certified"));
        assert!(text.contains("[combined]"));
    }

    #[test]
    fn user_horizon_is_respected() {
        let problem = population_problem();
        let mut config = population_config();
        config.t_override = Some(2.0);
        let report = verify_unbounded(&problem, &config);
        assert!(report.is_certified(), "failure: {:?}", report.failure);
        assert_eq!(report.horizon, Some(2.0));
        assert_eq!(report.t_tilde, None);
        let alpha = report.exp.as_ref().unwrap().alpha;
        assert_abs_diff_eq!(
            report.tail.unwrap(),
            alpha * (-2.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn infeasible_synthesis_yields_partial_report() {
        // Unstable drift with no decay: no exponential certificate exists.
        let ctx = VarContext::state(1);
        let system = SdeSystem::new(
            PolyVector::new(vec![fp("x1", &ctx)]),
            PolyMatrix::new(1, 1, vec![fp("0", &ctx)]),
        )
        .unwrap();
        let problem = SafetyProblem {
            name: "unstable".to_string(),
            system,
            domain: SemialgebraicSet::new(ctx, vec![], vec![]),
            initial: SemialgebraicSet::new(ctx, vec![], vec![fp("x1 - 1", &ctx)]),
            unsafe_set: SemialgebraicSet::new(ctx, vec![fp("x1 - 2", &ctx)], vec![]),
            boundary_pieces: vec![],
            window: SampleBox::new(vec![-5.0], vec![5.0]).unwrap(),
        };
        let report = verify_unbounded(&problem, &population_config());
        assert!(!report.is_certified());
        let failure = report.failure.as_ref().unwrap();
        assert_eq!(failure.stage, "synthesize_exp");
        assert!(failure.detail.contains("attempt"), "detail: {}", failure.detail);
        assert!(report.exp.is_none());
        assert!(render_text(&report).contains("failed stage: synthesize_exp"));
    }

    #[test]
    fn sweep_has_closed_form_tail_column() {
        let problem = population_problem();
        let grid: Vec<f64> = (1..=8).map(|k| k as f64).collect();
        let report = sweep(&problem, &population_config(), &grid);
        assert!(report.failure.is_none(), "failure: {:?}", report.failure);
        assert_eq!(report.curve.len(), 8);
        let alpha = report.exp.as_ref().unwrap().alpha;
        let mut prev_tail = f64::INFINITY;
        let mut prev_bounded = 0.0f64;
        for row in &report.curve {
            assert!(!row.below_t_star);
            let tail = row.tail.unwrap();
            let bounded = row.bounded.unwrap();
            assert_abs_diff_eq!(tail, alpha * (-row.t).exp(), epsilon = 1e-15);
            assert_abs_diff_eq!(
                row.total.unwrap(),
                (bounded + tail).min(1.0),
                epsilon = 0.0
            );
            assert!(tail < prev_tail, "tail not strictly decreasing");
            assert!(
                bounded >= prev_bounded - 1e-6,
                "bounded column should not decrease: {bounded} < {prev_bounded}"
            );
            prev_tail = tail;
            prev_bounded = bounded;
        }
        let csv = curve_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("T,bounded,tail,total"));
        assert_eq!(lines.count(), 8);
    }

    #[test]
    fn noise_scale_certificate_fails_sampling_nonsilently() {
        // An empty unsafe set drives the solve to the degenerate optimum
        // V ≡ 0, so the returned V is solver noise and the sampling stage
        // must reject it — recorded as a named failure, not a panic or a
        // silently absent bound.
        let mut problem = population_problem();
        let ctx = *problem.domain.ctx();
        problem.unsafe_set = SemialgebraicSet::new(ctx, vec![fp("-1", &ctx)], vec![]);
        let report = verify_unbounded(&problem, &population_config());
        assert!(!report.is_certified());
        let failure = report.failure.as_ref().expect("failure recorded");
        assert_eq!(failure.stage, "certificate_sampling");
        assert!(failure.detail.contains("V_0 >= 0"), "{}", failure.detail);
        // The rejected certificate is not published, but the stages that
        // did run left their diagnostics behind.
        assert!(report.exp.is_none());
        assert!(report.total.is_none());
        assert!(report
            .diagnostics
            .iter()
            .any(|d| d.contains("witness")), "{:?}", report.diagnostics);
        assert!(render_text(&report).contains("failed stage"));
    }

    #[test]
    fn json_round_trip_reloads_checkable_certificates() {
        let problem = population_problem();
        let report = verify_unbounded(&problem, &population_config());
        assert!(report.is_certified());
        let doc = to_report_json(&report);
        let text = serde_json::to_string_pretty(&doc).unwrap();
        let reparsed: ReportJson = serde_json::from_str(&text).unwrap();

        let ctx = *problem.domain.ctx();
        let exp = reparsed
            .exp_certificate
            .as_ref()
            .unwrap()
            .to_cert(ctx)
            .unwrap();
        assert_eq!(exp.alpha, report.exp.as_ref().unwrap().alpha);
        check_certificate_sampling(&exp, &problem, 500, 11).unwrap();

        let timedep = reparsed
            .timedep_certificate
            .as_ref()
            .unwrap()
            .to_cert(ctx.n_state());
        assert_eq!(timedep.beta, report.timedep.as_ref().unwrap().beta);
        check_timedep_sampling(&timedep, &problem, 500, 11).unwrap();

        // Serialization is deterministic.
        let again = serde_json::to_string_pretty(&to_report_json(&report)).unwrap();
        assert_eq!(text, again);
    }
}
