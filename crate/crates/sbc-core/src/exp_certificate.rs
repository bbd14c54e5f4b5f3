//! Exponential stochastic barrier certificates.
//!
//! A vector polynomial `V: R^n → R^m` together with an essentially
//! non-negative matrix `Λ` (off-diagonal entries ≥ 0) whose spectrum lies in
//! the open right half-plane certifies safety of the stopped process when
//!
//! ```text
//! V(x) ≥ 0            on X          (componentwise)
//! A V(x) ≤ −Λ V(x)    on X
//! Λ V(x) ≤ 0          on ∂X
//! V(x) ≥ 1            on X_u
//! V(x) ≤ α·1          on X_0
//! ```
//!
//! because `exp(Λt)·V(X_t)` is then a componentwise supermartingale, which
//! the tail-bound module turns into an exponentially decaying bound on the
//! probability of reaching `X_u` after time `T`.
//!
//! All five conditions are polynomial nonnegativity constraints over
//! semialgebraic sets, so synthesis is a single SDP (minimizing `α`)
//! assembled with the SOS encoder. When the domain boundary is declared and
//! `Λ` is entrywise non-negative, `V` is sought in the form `g(x)·W(x)` with
//! `g` the product of the boundary-piece polynomials: `V` then vanishes on
//! every declared piece and the `ΛV ≤ 0` boundary rows hold identically.
//!
//! Synthesized certificates are post-processed for soundness: Gram matrices
//! are projected onto the PSD cone, decomposition identities revalidated,
//! the certified unsafe level recomputed by a secondary SDP, and the whole
//! certificate rescaled so the smallest level is exactly 1. A sampling
//! checker ([`check_certificate_sampling`]) re-tests all five inequalities
//! at random points as a defense against silently bad solver output.

use crate::polynomial::{F64Poly, Monomial};
use crate::sde_model::{sample_point, SafetyProblem, SemialgebraicSet};
use crate::sdp_backend::{
    backend_from_env, SdpProblem, SolveError, SolverSettings, SolverStatus,
};
use crate::sos_encoder::{
    encode_nonneg, lift_state_generator, Expr, NonnegHandle, NonnegWitness, TemplatePoly, VarRef,
    WitnessError,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Tolerance for the numeric spectrum check of Λ: eigenvalue real parts
/// must exceed this. At 1e-10 a genuinely singular Λ is rejected while
/// rounding noise in the eigensolver is not.
pub const SPECTRUM_TOL: f64 = 1e-10;

/// Relative slack for the sampling checker. Violations are measured
/// relative to the magnitude of the evaluated terms (floating-point
/// evaluation of a degree-8 polynomial at the window edge cannot be
/// meaningfully sharper), so 1e-6 matches the witness identity tolerance.
pub const SAMPLING_TOL: f64 = 1e-6;

/// Draw budget per requested sample point in the sampling checker.
const SAMPLE_TRIES: usize = 200;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("Λ is not essentially non-negative: entry ({row},{col}) = {value}")]
    NotEssentiallyNonneg { row: usize, col: usize, value: f64 },
    #[error("Λ has an eigenvalue with non-positive real part ({real_part})")]
    NonPositiveSpectrum { real_part: f64 },
    #[error("Λ must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("certificate degree must be at least 2, got {0}")]
    DegreeTooSmall(u32),
    #[error(
        "synthesis infeasible after {} attempt(s) ({summary}); decrease Λ (say, by a half) or increase the certificate degree",
        .attempts.len(), summary = format_attempts(.attempts)
    )]
    Infeasible { attempts: Vec<Attempt> },
    #[error("solver returned unusable status: {0}")]
    UnexpectedStatus(String),
    #[error("witness validation failed for `{label}`: {source}")]
    ValidationFailed {
        label: String,
        #[source]
        source: WitnessError,
    },
    #[error("{0}")]
    Solver(#[from] SolveError),
    #[error(
        "sampling check violated `{constraint}` at {point:?} (relative violation {violation:.3e})"
    )]
    SamplingViolation {
        constraint: String,
        point: Vec<f64>,
        violation: f64,
    },
}

fn format_attempts(attempts: &[Attempt]) -> String {
    attempts
        .iter()
        .map(|a| format!("Λ×{}, degree {}: {}", a.lambda_scale, a.degree, a.outcome))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Validated rate matrix Λ.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSpec {
    matrix: DMatrix<f64>,
}

impl LambdaSpec {
    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Scale by `k > 0` (validity is preserved: essential non-negativity
    /// and the spectrum's half-plane are invariant under positive scaling).
    pub fn scaled(&self, k: f64) -> LambdaSpec {
        assert!(k > 0.0);
        LambdaSpec {
            matrix: &self.matrix * k,
        }
    }

    pub fn is_entrywise_nonneg(&self) -> bool {
        self.matrix.iter().all(|&v| v >= 0.0)
    }
}

/// Check Λ: essential non-negativity exactly, spectrum numerically.
pub fn validate_lambda(matrix: DMatrix<f64>) -> Result<LambdaSpec, CertError> {
    if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
        return Err(CertError::NotSquare {
            rows: matrix.nrows(),
            cols: matrix.ncols(),
        });
    }
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            if i != j && matrix[(i, j)] < 0.0 {
                return Err(CertError::NotEssentiallyNonneg {
                    row: i,
                    col: j,
                    value: matrix[(i, j)],
                });
            }
        }
    }
    let worst = matrix
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::INFINITY, f64::min);
    if worst <= SPECTRUM_TOL {
        return Err(CertError::NonPositiveSpectrum { real_part: worst });
    }
    Ok(LambdaSpec { matrix })
}

/// One rung of the retry ladder.
#[derive(Clone, Debug)]
pub struct Attempt {
    pub lambda_scale: f64,
    pub degree: u32,
    pub outcome: String,
}

/// Synthesis settings: solver options plus the retry ladder extent
/// (halve Λ up to `max_lambda_halvings` times, raise the degree by 2 up to
/// `max_degree_raises` times, cheapest combinations first).
#[derive(Clone, Debug)]
pub struct SynthSettings {
    pub solver: SolverSettings,
    pub max_lambda_halvings: u32,
    pub max_degree_raises: u32,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            solver: SolverSettings::default(),
            max_lambda_halvings: 2,
            max_degree_raises: 1,
        }
    }
}

/// One validated decomposition: the constraint label, the concrete
/// certified polynomial (`target ≥ 0` on the family's set), and the witness.
#[derive(Clone, Debug)]
pub struct WitnessItem {
    pub label: String,
    pub target: F64Poly,
    pub witness: NonnegWitness,
}

/// Synthesized exponential certificate. `v` and `alpha` are normalized so
/// the smallest certified unsafe level is exactly 1 (`level` holds the
/// per-component levels, all ≥ 1 up to solver noise).
#[derive(Clone, Debug)]
pub struct ExpCertificate {
    pub lambda: LambdaSpec,
    pub v: Vec<F64Poly>,
    pub alpha: f64,
    pub level: Vec<f64>,
    pub degree: u32,
    pub witnesses: Vec<WitnessItem>,
    pub attempts: Vec<Attempt>,
}

impl ExpCertificate {
    /// `(ΛV)_i` as a concrete polynomial.
    pub fn lambda_v(&self, i: usize) -> F64Poly {
        let ctx = *self.v[0].ctx();
        let mut acc = F64Poly::zero(ctx);
        for (j, vj) in self.v.iter().enumerate() {
            acc = acc.add(&vj.scale(&self.lambda.matrix[(i, j)]));
        }
        acc
    }

    /// Re-validate every stored witness against its stored target.
    pub fn revalidate(&self) -> Result<(), CertError> {
        for item in &self.witnesses {
            item.witness
                .validate(&item.target)
                .map_err(|source| CertError::ValidationFailed {
                    label: item.label.clone(),
                    source,
                })?;
        }
        Ok(())
    }
}

struct ConstraintGroup {
    label: String,
    template: TemplatePoly,
    handle: crate::sos_encoder::NonnegHandle,
}

/// Synthesize an exponential certificate of the given degree, minimizing
/// the initial-set bound `α`. On infeasibility the retry ladder is walked
/// (halving Λ, then raising the degree by 2); the certificate records which
/// rung succeeded, and the `Infeasible` error records every rung tried.
pub fn synthesize_exp(
    problem: &SafetyProblem<f64>,
    lambda: &LambdaSpec,
    degree: u32,
    settings: &SynthSettings,
) -> Result<ExpCertificate, CertError> {
    if degree < 2 {
        return Err(CertError::DegreeTooSmall(degree));
    }
    // Solve in window-normalized coordinates y = x/s: high-degree monomials
    // over a radius-r window put r^d of dynamic range into the SDP, which
    // the interior point pays for in conditioning. The scaled program is
    // exactly equivalent (α and levels are invariant), and the certificate
    // composes back at the end.
    let scales = problem.window_scales();
    let unit = scales.iter().all(|&s| s == 1.0);
    let scaled_problem;
    let solve_problem = if unit {
        problem
    } else {
        scaled_problem = problem.dilated(&scales);
        &scaled_problem
    };
    let mut attempts: Vec<Attempt> = Vec::new();
    for raise in 0..=settings.max_degree_raises {
        for halve in 0..=settings.max_lambda_halvings {
            let scale = 0.5f64.powi(halve as i32);
            let rung_lambda = lambda.scaled(scale);
            let rung_degree = degree + 2 * raise;
            match attempt_synthesis(solve_problem, &rung_lambda, rung_degree, &settings.solver) {
                Ok(Some(mut cert)) => {
                    attempts.push(Attempt {
                        lambda_scale: scale,
                        degree: rung_degree,
                        outcome: format!("success (alpha = {:.6})", cert.alpha),
                    });
                    cert.attempts = attempts;
                    if !unit {
                        undilate_certificate(&mut cert, &scales);
                        cert.revalidate()?;
                    }
                    return Ok(cert);
                }
                Ok(None) => attempts.push(Attempt {
                    lambda_scale: scale,
                    degree: rung_degree,
                    outcome: "infeasible".to_string(),
                }),
                Err(CertError::UnexpectedStatus(msg)) => attempts.push(Attempt {
                    lambda_scale: scale,
                    degree: rung_degree,
                    outcome: format!("solver failure: {msg}"),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Err(CertError::Infeasible { attempts })
}

/// Map a certificate synthesized for the window-normalized problem back to
/// original coordinates: every polynomial is composed with `y = x/s` and
/// every Gram witness undergoes the matching diagonal congruence. `α`,
/// levels, and the decomposition identities are preserved exactly (up to
/// one multiply/divide rounding per coefficient).
fn undilate_certificate(cert: &mut ExpCertificate, scales: &[f64]) {
    let inv: Vec<f64> = scales.iter().map(|s| 1.0 / s).collect();
    for v in &mut cert.v {
        *v = v.dilate(&inv);
    }
    for item in &mut cert.witnesses {
        item.target = item.target.dilate(&inv);
        item.witness.dilate(&inv);
    }
}

/// Identity degree for one constraint row. Over a constrained set the
/// multipliers get one extra relaxation order (`degree + 2`): capping them
/// at the template degree renders genuinely feasible programs infeasible
/// (e.g. a damped oscillator at degree 4, where the decomposition needs
/// degree-4 multipliers against the degree-2 box constraints). Over an
/// unconstrained set the row is a plain SOS constraint and extra Gram rows
/// are forced to zero by the PSD structure, so `degree` suffices.
pub(crate) fn encode_degree(degree: u32, set: &SemialgebraicSet<f64>) -> u32 {
    if set.inequalities().is_empty() && set.equalities().is_empty() {
        degree
    } else {
        degree + 2
    }
}

/// Weight of the Gram-trace term added to every synthesis objective.
///
/// The optimal face of these programs is typically flat — many Gram
/// matrices represent the same polynomial identity — which stalls
/// interior-point steps short of full accuracy and returns
/// boundary-singular Grams whose eigenvalue clipping perturbs the
/// decomposition beyond the validation tolerance. Minimizing
/// `objective + TRACE_REG · Σ tr(Q)` instead selects the minimum-trace
/// representation, restoring a well-conditioned optimum at an
/// `O(TRACE_REG · Σ tr Q)` cost in the certified objective — around 1e-4
/// here, far inside every downstream acceptance margin.
pub(crate) const TRACE_REG: f64 = 1e-6;

/// Trace-regularization entries `(block, k, k, TRACE_REG)` for every Gram
/// block reachable from `handles`.
pub(crate) fn trace_terms<'a>(
    handles: impl IntoIterator<Item = &'a NonnegHandle>,
) -> Vec<(usize, usize, usize, f64)> {
    let mut terms = Vec::new();
    for handle in handles {
        for gram in handle.gram_blocks() {
            for k in 0..gram.basis.len() {
                terms.push((gram.block, k, k, TRACE_REG));
            }
        }
    }
    terms
}

/// One ladder rung: build the SDP, solve, extract, normalize, validate.
/// `Ok(None)` means cleanly infeasible at this rung.
fn attempt_synthesis(
    problem: &SafetyProblem<f64>,
    lambda: &LambdaSpec,
    degree: u32,
    solver_settings: &SolverSettings,
) -> Result<Option<ExpCertificate>, CertError> {
    let ctx = *problem.domain.ctx();
    let m = lambda.m();
    let backend = backend_from_env()?;
    let mut sdp = SdpProblem::new();
    let alpha_var = sdp.add_free_var("alpha");

    // Boundary handling: with every declared piece folded into
    // g = Π h_k and V = g·W, V vanishes identically on each declared piece,
    // so the ΛV ≤ 0 boundary rows are dropped. Otherwise the rows are
    // enforced piece by piece on {h_k = 0} ∩ X.
    let substitution = if problem.boundary_pieces.is_empty() || !lambda.is_entrywise_nonneg() {
        None
    } else {
        let mut g = F64Poly::one(ctx);
        for h in &problem.boundary_pieces {
            g = g.mul(h);
        }
        Some(g)
    };

    let mut v_templates: Vec<TemplatePoly> = Vec::with_capacity(m);
    for i in 0..m {
        let name = format!("v{i}");
        let tmpl = match &substitution {
            Some(g) => {
                let inner_deg = degree.saturating_sub(g.total_degree()).max(1);
                let (w, _) = TemplatePoly::free(&mut sdp, ctx, inner_deg, &name);
                w.mul_poly(g)
            }
            None => TemplatePoly::free(&mut sdp, ctx, degree, &name).0,
        };
        v_templates.push(tmpl);
    }

    let lambda_v = |i: usize| -> TemplatePoly {
        let mut acc = TemplatePoly::zero(ctx);
        for (j, vj) in v_templates.iter().enumerate() {
            acc = acc.add_scaled(vj, lambda.matrix[(i, j)]);
        }
        acc
    };

    let mut groups: Vec<ConstraintGroup> = Vec::new();
    let push = |sdp: &mut SdpProblem,
                    groups: &mut Vec<ConstraintGroup>,
                    label: String,
                    template: TemplatePoly,
                    set: &SemialgebraicSet<f64>| {
        let handle = encode_nonneg(sdp, &template, set, encode_degree(degree, set), &label);
        groups.push(ConstraintGroup {
            label,
            template,
            handle,
        });
    };

    for (i, v) in v_templates.iter().enumerate() {
        push(
            &mut sdp,
            &mut groups,
            format!("V_{i} >= 0 on X"),
            v.clone(),
            &problem.domain,
        );
    }
    for (i, v) in v_templates.iter().enumerate() {
        let av = lift_state_generator(&problem.system, v);
        let target = av.add(&lambda_v(i)).scale(-1.0);
        push(
            &mut sdp,
            &mut groups,
            format!("A V_{i} + (Λ V)_{i} <= 0 on X"),
            target,
            &problem.domain,
        );
    }
    if substitution.is_none() {
        for (k, h) in problem.boundary_pieces.iter().enumerate() {
            let piece = SemialgebraicSet::new(
                ctx,
                problem.domain.inequalities().to_vec(),
                vec![h.clone()],
            );
            for i in 0..m {
                push(
                    &mut sdp,
                    &mut groups,
                    format!("(Λ V)_{i} <= 0 on boundary piece {k}"),
                    lambda_v(i).scale(-1.0),
                    &piece,
                );
            }
        }
    }
    for (i, v) in v_templates.iter().enumerate() {
        let target = v.sub(&TemplatePoly::from_poly(&F64Poly::one(ctx)));
        push(
            &mut sdp,
            &mut groups,
            format!("V_{i} >= 1 on X_u"),
            target,
            &problem.unsafe_set,
        );
    }
    for (i, v) in v_templates.iter().enumerate() {
        let alpha_tmpl =
            TemplatePoly::term(ctx, Monomial::one(), Expr::var(VarRef::Free(alpha_var)));
        push(
            &mut sdp,
            &mut groups,
            format!("V_{i} <= alpha on X_0"),
            alpha_tmpl.sub(v),
            &problem.initial,
        );
    }

    sdp.set_objective(
        vec![(alpha_var, 1.0)],
        trace_terms(groups.iter().map(|g| &g.handle)),
    );
    let sol = backend.solve(&sdp, solver_settings)?;
    match sol.status {
        SolverStatus::Optimal | SolverStatus::NearOptimal => {}
        SolverStatus::Infeasible => return Ok(None),
        other => return Err(CertError::UnexpectedStatus(format!("{other:?}"))),
    }

    let alpha = sol.free_values[alpha_var];
    let v: Vec<F64Poly> = v_templates.iter().map(|t| t.instantiate(&sol)).collect();
    let debug_stages = std::env::var_os("SBC_DEBUG_WITNESS").is_some();
    let mut witnesses: Vec<WitnessItem> = groups
        .iter()
        .map(|g| {
            let mut witness = g.handle.extract(ctx, &sol);
            let target = g.template.instantiate(&sol);
            if debug_stages {
                let raw = witness.reconstruct().sub(&target).max_abs_coeff();
                let mut clipped = witness.clone();
                clipped.psd_project_all();
                let after = clipped.reconstruct().sub(&target).max_abs_coeff();
                eprintln!(
                    "[witness] {}: raw residual {raw:.3e}, after clip {after:.3e}",
                    g.label
                );
            }
            witness.psd_project_all();
            WitnessItem {
                label: g.label.clone(),
                target,
                witness,
            }
        })
        .collect();

    // Certified unsafe levels: maximize l with V_i − l nonneg on X_u,
    // per component. The main solve enforced V_i ≥ 1, so l_i ≈ ≥ 1;
    // an unbounded level solve means X_u is vacuous.
    let mut levels = Vec::with_capacity(m);
    let mut level_witnesses: Vec<Option<(f64, NonnegWitness)>> = Vec::with_capacity(m);
    for vi in &v {
        match certify_level(vi, &problem.unsafe_set, degree, solver_settings)? {
            Some((l, w)) => {
                levels.push(l);
                level_witnesses.push(Some((l, w)));
            }
            None => {
                levels.push(1.0);
                level_witnesses.push(None);
            }
        }
    }

    // Normalize: divide V and alpha by c = min level so the smallest level
    // is exactly 1. Witnesses follow: the homogeneous families scale by
    // 1/c; the X_u family is rebuilt from the level witness,
    // V_i/c − 1 = (V_i − l_i)/c + (l_i − c)/c.
    let c = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let vacuous_unsafe = level_witnesses.iter().any(Option::is_none);
    let (v, alpha, levels) = if vacuous_unsafe || !(c.is_finite() && c > 0.0) {
        (v, alpha, levels)
    } else {
        let inv = 1.0 / c;
        for item in &mut witnesses {
            if item.label.contains(">= 1 on X_u") {
                continue; // replaced below
            }
            item.witness.scale(inv);
            item.target = item.target.scale(&inv);
        }
        for (i, lw) in level_witnesses.into_iter().enumerate() {
            let (l, mut w) = lw.expect("checked non-vacuous above");
            w.scale(inv);
            w.add_constant((l - c) * inv);
            let slot = witnesses
                .iter_mut()
                .find(|it| it.label == format!("V_{i} >= 1 on X_u"))
                .expect("X_u witness present for every component");
            slot.target = v[i].scale(&inv).sub(&F64Poly::one(ctx));
            slot.witness = w;
        }
        (
            v.iter().map(|p| p.scale(&inv)).collect(),
            alpha * inv,
            levels.iter().map(|l| l * inv).collect(),
        )
    };

    let cert = ExpCertificate {
        lambda: lambda.clone(),
        v,
        alpha,
        level: levels,
        degree,
        witnesses,
        attempts: Vec::new(),
    };
    cert.revalidate()?;
    Ok(Some(cert))
}

/// Secondary SDP: the largest `l` with `V_i − l` certified nonnegative on
/// `X_u` at the given degree. `Ok(None)` when unbounded (vacuous `X_u`).
fn certify_level(
    v_i: &F64Poly,
    unsafe_set: &SemialgebraicSet<f64>,
    degree: u32,
    solver_settings: &SolverSettings,
) -> Result<Option<(f64, NonnegWitness)>, CertError> {
    let ctx = *v_i.ctx();
    let backend = backend_from_env()?;
    let mut sdp = SdpProblem::new();
    let l = sdp.add_free_var("level");
    let target = TemplatePoly::from_poly(v_i).sub(&TemplatePoly::term(
        ctx,
        Monomial::one(),
        Expr::var(VarRef::Free(l)),
    ));
    let handle = encode_nonneg(
        &mut sdp,
        &target,
        unsafe_set,
        encode_degree(degree, unsafe_set),
        "level",
    );
    sdp.set_objective(vec![(l, -1.0)], trace_terms([&handle]));
    let sol = backend.solve(&sdp, solver_settings)?;
    match sol.status {
        SolverStatus::Optimal | SolverStatus::NearOptimal => {
            let level = sol.free_values[l];
            let mut witness = handle.extract(ctx, &sol);
            witness.psd_project_all();
            witness
                .validate(&target.instantiate(&sol))
                .map_err(|source| CertError::ValidationFailed {
                    label: "unsafe level certification".to_string(),
                    source,
                })?;
            Ok(Some((level, witness)))
        }
        SolverStatus::Unbounded => Ok(None),
        other => Err(CertError::UnexpectedStatus(format!(
            "level certification: {other:?}"
        ))),
    }
}

/// Worst observed violation for one constraint family.
#[derive(Clone, Debug)]
pub struct FamilyCheck {
    pub label: String,
    pub samples: usize,
    /// Worst relative violation (≤ 0 means never violated).
    pub worst: f64,
    pub worst_point: Option<Vec<f64>>,
}

/// Sampling-check report: one entry per constraint family.
#[derive(Clone, Debug)]
pub struct SamplingReport {
    pub families: Vec<FamilyCheck>,
}

/// Sum of `|c|·|m(x)|` over the terms of `p` — the magnitude scale against
/// which a pointwise violation of `p(x) ≥ 0` is meaningful in f64.
pub(crate) fn abs_evaluate(p: &F64Poly, x: &[f64]) -> f64 {
    p.iter().map(|(m, c)| c.abs() * m.evaluate(x).abs()).sum()
}

/// Re-test the five certificate inequalities at `n_samples` random points
/// per constraint family, drawn from the respective sets inside the
/// problem's sampling window. Violations are measured relative to the
/// evaluated term magnitudes and must stay below [`SAMPLING_TOL`].
pub fn check_certificate_sampling(
    cert: &ExpCertificate,
    problem: &SafetyProblem<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<SamplingReport, CertError> {
    let ctx = *problem.domain.ctx();
    let m = cert.lambda.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let av: Vec<F64Poly> = cert
        .v
        .iter()
        .map(|vi| problem.system.apply_state_generator(vi))
        .collect();
    let lv: Vec<F64Poly> = (0..m).map(|i| cert.lambda_v(i)).collect();

    let mut families: Vec<FamilyCheck> = Vec::new();
    let mut run_family = |label: String,
                          set: &SemialgebraicSet<f64>,
                          rng: &mut ChaCha8Rng,
                          eval: &dyn Fn(&[f64]) -> f64|
     -> Result<(), CertError> {
        let mut check = FamilyCheck {
            label: label.clone(),
            samples: 0,
            worst: f64::NEG_INFINITY,
            worst_point: None,
        };
        for _ in 0..n_samples {
            let Some(x) = sample_point(set, &problem.window, rng, SAMPLE_TRIES) else {
                continue;
            };
            check.samples += 1;
            let violation = eval(&x);
            if violation > check.worst {
                check.worst = violation;
                check.worst_point = Some(x);
            }
        }
        if check.samples == 0 {
            check.worst = f64::NEG_INFINITY;
        }
        if check.worst > SAMPLING_TOL {
            return Err(CertError::SamplingViolation {
                constraint: label,
                point: check.worst_point.clone().unwrap_or_default(),
                violation: check.worst,
            });
        }
        families.push(check);
        Ok(())
    };

    for i in 0..m {
        let vi = &cert.v[i];
        run_family(
            format!("V_{i} >= 0 on X"),
            &problem.domain,
            &mut rng,
            &|x| -vi.evaluate(x) / (1.0 + abs_evaluate(vi, x)),
        )?;
    }
    for i in 0..m {
        let (avi, lvi) = (&av[i], &lv[i]);
        run_family(
            format!("A V_{i} + (Λ V)_{i} <= 0 on X"),
            &problem.domain,
            &mut rng,
            &|x| {
                (avi.evaluate(x) + lvi.evaluate(x))
                    / (1.0 + abs_evaluate(avi, x) + abs_evaluate(lvi, x))
            },
        )?;
    }
    for (k, h) in problem.boundary_pieces.iter().enumerate() {
        let piece = SemialgebraicSet::new(
            ctx,
            problem.domain.inequalities().to_vec(),
            vec![h.clone()],
        );
        for i in 0..m {
            let lvi = &lv[i];
            run_family(
                format!("(Λ V)_{i} <= 0 on boundary piece {k}"),
                &piece,
                &mut rng,
                &|x| lvi.evaluate(x) / (1.0 + abs_evaluate(lvi, x)),
            )?;
        }
    }
    for i in 0..m {
        let (vi, li) = (&cert.v[i], cert.level[i]);
        run_family(
            format!("V_{i} >= level on X_u"),
            &problem.unsafe_set,
            &mut rng,
            &|x| (li - vi.evaluate(x)) / (1.0 + abs_evaluate(vi, x) + li.abs()),
        )?;
    }
    for i in 0..m {
        let (vi, alpha) = (&cert.v[i], cert.alpha);
        run_family(
            format!("V_{i} <= alpha on X_0"),
            &problem.initial,
            &mut rng,
            &|x| (vi.evaluate(x) - alpha) / (1.0 + abs_evaluate(vi, x) + alpha.abs()),
        )?;
    }

    Ok(SamplingReport { families })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::parse::parse_polynomial;
    use crate::polynomial::{PolyMatrix, PolyVector, VarContext};
    use crate::sde_model::{SampleBox, SdeSystem};
    use approx::assert_abs_diff_eq;

    fn fp(src: &str, ctx: &VarContext) -> F64Poly {
        parse_polynomial::<f64>(src, ctx).unwrap()
    }

    /// dX = −X dt + (√2/2)X dW on X = {x ≥ 0}, X_0 = {x = 1},
    /// X_u = {x ≥ 2}, boundary piece {x = 0}.
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

    #[test]
    fn lambda_validation_accepts_paper_matrices() {
        let spec = validate_lambda(DMatrix::from_row_slice(2, 2, &[0.45, 0.1, 0.1, 0.45]))
            .unwrap();
        let mut eigs: Vec<f64> = spec
            .matrix()
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|e| e.re)
            .collect();
        eigs.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(eigs[0], 0.35, epsilon = 1e-12);
        assert_abs_diff_eq!(eigs[1], 0.55, epsilon = 1e-12);
        validate_lambda(DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
    }

    #[test]
    fn lambda_validation_rejects_bad_matrices() {
        assert!(matches!(
            validate_lambda(DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 0.3, 0.1])),
            Err(CertError::NotEssentiallyNonneg { .. })
        ));
        assert!(matches!(
            validate_lambda(DMatrix::from_row_slice(1, 1, &[-1.0])),
            Err(CertError::NonPositiveSpectrum { .. })
        ));
        assert!(matches!(
            validate_lambda(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])),
            Err(CertError::NotSquare { .. })
        ));
    }

    #[test]
    fn population_certificate_synthesizes_and_checks() {
        let problem = population_problem();
        let lambda = validate_lambda(DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let cert =
            synthesize_exp(&problem, &lambda, 4, &SynthSettings::default()).unwrap();
        assert!(cert.alpha <= 0.15, "alpha = {}", cert.alpha);
        assert!(cert.alpha > 0.0);
        assert_abs_diff_eq!(cert.level[0], 1.0, epsilon = 1e-6);
        assert_eq!(cert.attempts.len(), 1, "first rung must succeed");
        let report = check_certificate_sampling(&cert, &problem, 2_000, 7).unwrap();
        assert!(report.families.iter().all(|f| f.samples > 0));
    }

    #[test]
    fn vacuous_unsafe_set_gives_zero_certificate() {
        let mut problem = population_problem();
        let ctx = *problem.domain.ctx();
        problem.unsafe_set = SemialgebraicSet::new(ctx, vec![fp("-1", &ctx)], vec![]);
        let lambda = validate_lambda(DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let cert =
            synthesize_exp(&problem, &lambda, 4, &SynthSettings::default()).unwrap();
        assert!(cert.alpha.abs() < 1e-6, "alpha = {}", cert.alpha);
    }

    #[test]
    fn sampling_rejects_handmade_bad_certificate() {
        let problem = population_problem();
        let ctx = *problem.domain.ctx();
        let lambda = validate_lambda(DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let real =
            synthesize_exp(&problem, &lambda, 4, &SynthSettings::default()).unwrap();
        let mut bad = real.clone();
        bad.v = vec![fp("-x1^2", &ctx)];
        assert!(matches!(
            check_certificate_sampling(&bad, &problem, 500, 7),
            Err(CertError::SamplingViolation { .. })
        ));
    }

    #[test]
    fn scaling_closure_passes_sampling() {
        let problem = population_problem();
        let lambda = validate_lambda(DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let cert =
            synthesize_exp(&problem, &lambda, 4, &SynthSettings::default()).unwrap();
        let c = 2.5;
        let scaled = ExpCertificate {
            v: cert.v.iter().map(|p| p.scale(&c)).collect(),
            alpha: cert.alpha * c,
            level: cert.level.iter().map(|l| l * c).collect(),
            ..cert
        };
        check_certificate_sampling(&scaled, &problem, 1_000, 11).unwrap();
    }
}
