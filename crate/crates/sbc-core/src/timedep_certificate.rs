//! Time-dependent stochastic barrier certificates for a bounded horizon.
//!
//! A polynomial `H(t, x)` certifies `P(∃ t ∈ [0,T]: X̃_t ∈ X_u) ≤ β` (with
//! the normalization `η = 1`) when
//!
//! ```text
//! H(t,x) ≥ 0          on [0,T] × X
//! A H(t,x) ≤ 0        on [0,T] × (X \ X_u)
//! ∂H/∂t (t,x) ≤ 0     on [0,T] × ∂X
//! H(t,x) ≥ 1          on [0,T] × X_u
//! H(0,x) ≤ β          on X_0
//! ```
//!
//! where `A = ∂/∂t + L` adds the time derivative to the state generator.
//! Synthesis minimizes `β` subject to SOS relaxations of all five
//! conditions, with time adjoined to the polynomial context as an ordinary
//! variable and the interval `[0,T]` encoded as `t(T−t) ≥ 0`.
//!
//! Internally the encoding uses the rescaled time `τ = t/T ∈ [0,1]`, which
//! keeps the SDP coefficients O(1) for long horizons: with
//! `Ĥ(τ,x) = H(τT, x)` the generator condition becomes
//! `Ĥ_τ + T·LĤ ≤ 0` (after multiplying through by `T > 0`). The returned
//! certificate is expanded back to real time, so `H`, its witnesses'
//! targets excepted, is directly evaluable at `(t, x)`.
//!
//! `X \ X_u` is not semialgebraic-representable in general; it is encoded
//! by flipping one designated inequality of `X_u` (the closure of the
//! complement), or soundly overapproximated by all of `X` when no single
//! flip is designated — enlarging the set only strengthens the constraint.

use crate::exp_certificate::{
    abs_evaluate, encode_degree, trace_terms, FamilyCheck, SamplingReport, WitnessItem,
};
use crate::polynomial::{F64Poly, Monomial, VarContext};
use crate::sde_model::{sample_point, SafetyProblem, SemialgebraicSet};
use crate::sdp_backend::{backend_from_env, SdpProblem, SolveError, SolverSettings, SolverStatus};
use crate::sos_encoder::{
    encode_nonneg, lift_state_generator, Expr, TemplatePoly, VarRef, WitnessError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Relative slack for the sampling checker; see the twin constant on the
/// exponential-certificate side for the rationale.
pub const SAMPLING_TOL: f64 = 1e-6;

/// Draw budget per requested sample point in the sampling checker.
const SAMPLE_TRIES: usize = 200;

#[derive(Debug, Error)]
pub enum TimedepError {
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("certificate degree must be at least 2, got {0}")]
    DegreeTooSmall(u32),
    #[error("complement index {index} out of range: the unsafe set has {len} inequalities")]
    BadComplementIndex { index: usize, len: usize },
    #[error(
        "synthesis infeasible after {} attempt(s) ({summary}); increase the certificate degree",
        .attempts.len(), summary = format_attempts(.attempts)
    )]
    Infeasible { attempts: Vec<TimedepAttempt> },
    #[error("solver returned unusable status: {0}")]
    UnexpectedStatus(String),
    #[error("witness validation failed: {0}")]
    ValidationFailed(#[from] WitnessError),
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

fn format_attempts(attempts: &[TimedepAttempt]) -> String {
    attempts
        .iter()
        .map(|a| format!("degree {}: {}", a.degree, a.outcome))
        .collect::<Vec<_>>()
        .join("; ")
}

/// One rung of the degree-raising retry ladder.
#[derive(Clone, Debug)]
pub struct TimedepAttempt {
    pub degree: u32,
    pub outcome: String,
}

/// Synthesis settings: solver options, how often to raise the degree by 2
/// on infeasibility, and which unsafe-set inequality to flip for
/// `X \ X_u` (`None` flips a sole inequality automatically and otherwise
/// falls back to the sound overapproximation by `X`).
#[derive(Clone, Debug, Default)]
pub struct TimedepSettings {
    pub solver: SolverSettings,
    pub max_degree_raises: u32,
    pub complement_index: Option<usize>,
}

impl TimedepSettings {
    pub fn with_raises(raises: u32) -> Self {
        TimedepSettings {
            max_degree_raises: raises,
            ..Self::default()
        }
    }
}

/// Synthesized bounded-horizon certificate. `h` lives over the
/// state-plus-time context with real time `t ∈ [0, horizon]`; the stored
/// witnesses certify the equivalent rescaled-time (`τ = t/horizon`)
/// inequalities used by the encoder.
#[derive(Clone, Debug)]
pub struct TimeDepCertificate {
    pub h: F64Poly,
    pub horizon: f64,
    pub eta: f64,
    pub beta: f64,
    pub degree: u32,
    /// Index of the unsafe inequality flipped for `X \ X_u`, if any.
    pub complement_index: Option<usize>,
    pub witnesses: Vec<WitnessItem>,
    pub attempts: Vec<TimedepAttempt>,
}

impl TimeDepCertificate {
    /// Re-validate every stored witness against its stored target.
    pub fn revalidate(&self) -> Result<(), TimedepError> {
        for item in &self.witnesses {
            item.witness.validate(&item.target)?;
        }
        Ok(())
    }
}

/// `P(∃ t ∈ [0,T]: X̃_t ∈ X_u) ≤ min(1, β/η)`; `beta` keeps the raw value.
pub fn bounded_bound(cert: &TimeDepCertificate) -> f64 {
    (cert.beta / cert.eta).clamp(0.0, 1.0)
}

/// Resolve which unsafe inequality to flip for `X \ X_u`.
fn resolve_complement(
    problem: &SafetyProblem<f64>,
    settings: &TimedepSettings,
) -> Result<Option<usize>, TimedepError> {
    let ineqs = problem.unsafe_set.inequalities();
    match settings.complement_index {
        Some(i) if i < ineqs.len() => Ok(Some(i)),
        Some(i) => Err(TimedepError::BadComplementIndex {
            index: i,
            len: ineqs.len(),
        }),
        None if ineqs.len() == 1 && problem.unsafe_set.equalities().is_empty() => Ok(Some(0)),
        None => Ok(None),
    }
}

/// Synthesize a time-dependent certificate over `[0, T]`, minimizing `β`.
/// On infeasibility the degree is raised by 2 up to
/// `settings.max_degree_raises` times.
pub fn synthesize_timedep(
    problem: &SafetyProblem<f64>,
    horizon: f64,
    degree: u32,
    settings: &TimedepSettings,
) -> Result<TimeDepCertificate, TimedepError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(TimedepError::BadHorizon(horizon));
    }
    if degree < 2 {
        return Err(TimedepError::DegreeTooSmall(degree));
    }
    let complement = resolve_complement(problem, settings)?;
    // Window-normalized coordinates, exactly as in exponential synthesis:
    // the scaled program is equivalent (β and η are invariant) and much
    // better conditioned at high degree; the certificate composes back.
    let scales = problem.window_scales();
    let unit = scales.iter().all(|&s| s == 1.0);
    let scaled_problem;
    let solve_problem = if unit {
        problem
    } else {
        scaled_problem = problem.dilated(&scales);
        &scaled_problem
    };
    let mut attempts: Vec<TimedepAttempt> = Vec::new();
    for raise in 0..=settings.max_degree_raises {
        let rung_degree = degree + 2 * raise;
        match attempt_synthesis(solve_problem, horizon, rung_degree, complement, &settings.solver) {
            Ok(Some(mut cert)) => {
                attempts.push(TimedepAttempt {
                    degree: rung_degree,
                    outcome: format!("success (beta = {:.6})", cert.beta),
                });
                cert.attempts = attempts;
                if !unit {
                    undilate_certificate(&mut cert, &scales);
                    cert.revalidate()?;
                }
                return Ok(cert);
            }
            Ok(None) => attempts.push(TimedepAttempt {
                degree: rung_degree,
                outcome: "infeasible".to_string(),
            }),
            Err(TimedepError::UnexpectedStatus(msg)) => attempts.push(TimedepAttempt {
                degree: rung_degree,
                outcome: format!("solver failure: {msg}"),
            }),
            Err(e) => return Err(e),
        }
    }
    Err(TimedepError::Infeasible { attempts })
}

/// Map a certificate synthesized in window-normalized coordinates back to
/// the original ones. State variables are rescaled; the time variable is
/// untouched (the time axis is never dilated).
fn undilate_certificate(cert: &mut TimeDepCertificate, scales: &[f64]) {
    let time_ctx = *cert.h.ctx();
    let mut inv: Vec<f64> = scales.iter().map(|s| 1.0 / s).collect();
    inv.push(1.0);
    assert_eq!(inv.len(), time_ctx.num_vars(), "state scales plus time");
    cert.h = cert.h.dilate(&inv);
    for item in &mut cert.witnesses {
        item.target = item.target.dilate(&inv);
        item.witness.dilate(&inv);
    }
}

fn attempt_synthesis(
    problem: &SafetyProblem<f64>,
    horizon: f64,
    degree: u32,
    complement: Option<usize>,
    solver_settings: &SolverSettings,
) -> Result<Option<TimeDepCertificate>, TimedepError> {
    let state_ctx = *problem.domain.ctx();
    let ctx = VarContext::with_time(state_ctx.n_state());
    let tau = ctx.time_index().expect("context has time");
    let lift = |p: &F64Poly| p.with_ctx(ctx);
    // τ ∈ [0, 1] as the single inequality τ(1 − τ) ≥ 0.
    let time_box = F64Poly::var(ctx, tau).sub(&F64Poly::var(ctx, tau).mul(&F64Poly::var(ctx, tau)));
    let lift_set = |set: &SemialgebraicSet<f64>,
                    extra_ineqs: Vec<F64Poly>,
                    extra_eqs: Vec<F64Poly>| {
        let mut ineqs: Vec<F64Poly> = set.inequalities().iter().map(lift).collect();
        ineqs.extend(extra_ineqs);
        let mut eqs: Vec<F64Poly> = set.equalities().iter().map(lift).collect();
        eqs.extend(extra_eqs);
        SemialgebraicSet::new(ctx, ineqs, eqs)
    };

    let backend = backend_from_env()?;
    let mut sdp = SdpProblem::new();
    let beta_var = sdp.add_free_var("beta");
    let (h_hat, _) = TemplatePoly::free(&mut sdp, ctx, degree, "H");
    let h_tau = h_hat.differentiate(tau);
    let generator = h_tau.add_scaled(&lift_state_generator(&problem.system, &h_hat), horizon);

    let mut groups: Vec<(String, TemplatePoly, crate::sos_encoder::NonnegHandle)> = Vec::new();
    let push = |sdp: &mut SdpProblem,
                groups: &mut Vec<(String, TemplatePoly, crate::sos_encoder::NonnegHandle)>,
                    label: String,
                    template: TemplatePoly,
                    set: &SemialgebraicSet<f64>| {
        let handle = encode_nonneg(sdp, &template, set, encode_degree(degree, set), &label);
        groups.push((label, template, handle));
    };

    let time_domain = lift_set(&problem.domain, vec![time_box.clone()], vec![]);
    push(
        &mut sdp,
        &mut groups,
        "H >= 0 on [0,T] x X".to_string(),
        h_hat.clone(),
        &time_domain,
    );

    let off_unsafe = match complement {
        Some(i) => {
            let flip = problem.unsafe_set.inequalities()[i].scale(&-1.0);
            lift_set(&problem.domain, vec![time_box.clone(), lift(&flip)], vec![])
        }
        None => time_domain.clone(),
    };
    push(
        &mut sdp,
        &mut groups,
        "A H <= 0 on [0,T] x (X \\ X_u)".to_string(),
        generator.scale(-1.0),
        &off_unsafe,
    );

    for (k, h) in problem.boundary_pieces.iter().enumerate() {
        let piece = lift_set(&problem.domain, vec![time_box.clone()], vec![lift(h)]);
        push(
            &mut sdp,
            &mut groups,
            format!("dH/dt <= 0 on [0,T] x boundary piece {k}"),
            h_tau.scale(-1.0),
            &piece,
        );
    }

    let time_unsafe = lift_set(&problem.unsafe_set, vec![time_box.clone()], vec![]);
    push(
        &mut sdp,
        &mut groups,
        "H >= 1 on [0,T] x X_u".to_string(),
        h_hat.sub(&TemplatePoly::from_poly(&F64Poly::one(ctx))),
        &time_unsafe,
    );

    // H(0, ·) ≤ β is encoded on {τ = 0} × X_0 through the equality
    // multiplier for the polynomial τ.
    let initial_slice = lift_set(&problem.initial, vec![], vec![F64Poly::var(ctx, tau)]);
    let beta_tmpl = TemplatePoly::term(ctx, Monomial::one(), Expr::var(VarRef::Free(beta_var)));
    push(
        &mut sdp,
        &mut groups,
        "H(0,.) <= beta on X_0".to_string(),
        beta_tmpl.sub(&h_hat),
        &initial_slice,
    );

    sdp.set_objective(
        vec![(beta_var, 1.0)],
        trace_terms(groups.iter().map(|(_, _, h)| h)),
    );
    let sol = backend.solve(&sdp, solver_settings)?;
    match sol.status {
        SolverStatus::Optimal | SolverStatus::NearOptimal => {}
        SolverStatus::Infeasible => return Ok(None),
        other => return Err(TimedepError::UnexpectedStatus(format!("{other:?}"))),
    }

    let beta = sol.free_values[beta_var];
    let witnesses: Vec<WitnessItem> = groups
        .iter()
        .map(|(label, template, handle)| {
            let mut witness = handle.extract(ctx, &sol);
            witness.psd_project_all();
            WitnessItem {
                label: label.clone(),
                target: template.instantiate(&sol),
                witness,
            }
        })
        .collect();

    // Expand Ĥ(τ, x) back to real time: H(t, x) = Ĥ(t/T, x).
    let h_hat_poly = h_hat.instantiate(&sol);
    let t_over_horizon = F64Poly::var(ctx, tau).scale(&(1.0 / horizon));
    let h = h_hat_poly.substitute(tau, &t_over_horizon);

    let cert = TimeDepCertificate {
        h,
        horizon,
        eta: 1.0,
        beta,
        degree,
        complement_index: complement,
        witnesses,
        attempts: Vec::new(),
    };
    cert.revalidate()?;
    Ok(Some(cert))
}

/// Re-test the five certificate inequalities at `n_samples` random
/// `(t, x)` points per constraint family, with `t` uniform on
/// `[0, horizon]` (pinned to 0 for the initial-set family) and `x` drawn
/// from the family's set. Violations are relative to the evaluated term
/// magnitudes and must stay below [`SAMPLING_TOL`].
pub fn check_timedep_sampling(
    cert: &TimeDepCertificate,
    problem: &SafetyProblem<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<SamplingReport, TimedepError> {
    let state_ctx = *problem.domain.ctx();
    let ctx = *cert.h.ctx();
    let tau = ctx.time_index().expect("certificate context has time");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = &cert.h;
    let h_t = h.differentiate(tau);
    let ah = h_t.add(&problem.system.apply_state_generator(h));

    let mut families: Vec<FamilyCheck> = Vec::new();
    let mut run_family = |label: String,
                          set: &SemialgebraicSet<f64>,
                          time: Option<f64>,
                          rng: &mut ChaCha8Rng,
                          eval: &dyn Fn(&[f64]) -> f64|
     -> Result<(), TimedepError> {
        let mut check = FamilyCheck {
            label: label.clone(),
            samples: 0,
            worst: f64::NEG_INFINITY,
            worst_point: None,
        };
        for _ in 0..n_samples {
            let Some(mut point) = sample_point(set, &problem.window, rng, SAMPLE_TRIES) else {
                continue;
            };
            point.push(time.unwrap_or_else(|| rng.random_range(0.0..=cert.horizon)));
            check.samples += 1;
            let violation = eval(&point);
            if violation > check.worst {
                check.worst = violation;
                check.worst_point = Some(point);
            }
        }
        if check.worst > SAMPLING_TOL {
            return Err(TimedepError::SamplingViolation {
                constraint: label,
                point: check.worst_point.clone().unwrap_or_default(),
                violation: check.worst,
            });
        }
        families.push(check);
        Ok(())
    };

    run_family(
        "H >= 0 on [0,T] x X".to_string(),
        &problem.domain,
        None,
        &mut rng,
        &|p| -h.evaluate(p) / (1.0 + abs_evaluate(h, p)),
    )?;

    let off_unsafe = match cert.complement_index {
        Some(i) => {
            let mut ineqs = problem.domain.inequalities().to_vec();
            ineqs.push(problem.unsafe_set.inequalities()[i].scale(&-1.0));
            SemialgebraicSet::new(state_ctx, ineqs, problem.domain.equalities().to_vec())
        }
        None => problem.domain.clone(),
    };
    run_family(
        "A H <= 0 on [0,T] x (X \\ X_u)".to_string(),
        &off_unsafe,
        None,
        &mut rng,
        &|p| ah.evaluate(p) / (1.0 + abs_evaluate(&ah, p)),
    )?;

    for (k, hp) in problem.boundary_pieces.iter().enumerate() {
        let piece = SemialgebraicSet::new(
            state_ctx,
            problem.domain.inequalities().to_vec(),
            vec![hp.clone()],
        );
        run_family(
            format!("dH/dt <= 0 on [0,T] x boundary piece {k}"),
            &piece,
            None,
            &mut rng,
            &|p| h_t.evaluate(p) / (1.0 + abs_evaluate(&h_t, p)),
        )?;
    }

    run_family(
        "H >= 1 on [0,T] x X_u".to_string(),
        &problem.unsafe_set,
        None,
        &mut rng,
        &|p| (1.0 - h.evaluate(p)) / (2.0 + abs_evaluate(h, p)),
    )?;

    run_family(
        "H(0,.) <= beta on X_0".to_string(),
        &problem.initial,
        Some(0.0),
        &mut rng,
        &|p| (h.evaluate(p) - cert.beta) / (1.0 + abs_evaluate(h, p) + cert.beta.abs()),
    )?;

    Ok(SamplingReport { families })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::parse::parse_polynomial;
    use crate::polynomial::{PolyMatrix, PolyVector};
    use crate::sde_model::{SampleBox, SdeSystem};

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

    #[test]
    fn population_bounded_horizon_certificate() {
        let problem = population_problem();
        let cert =
            synthesize_timedep(&problem, 1.0, 4, &TimedepSettings::default()).unwrap();
        assert!(
            cert.beta > 0.0 && cert.beta < 0.12498,
            "beta = {}",
            cert.beta
        );
        assert_eq!(cert.eta, 1.0);
        assert_eq!(cert.complement_index, Some(0));
        assert_eq!(bounded_bound(&cert), cert.beta);
        let report = check_timedep_sampling(&cert, &problem, 2_000, 7).unwrap();
        assert!(report.families.iter().all(|f| f.samples > 0));
    }

    #[test]
    fn vacuous_unsafe_set_gives_zero_beta() {
        let mut problem = population_problem();
        let ctx = *problem.domain.ctx();
        problem.unsafe_set = SemialgebraicSet::new(ctx, vec![fp("-1", &ctx)], vec![]);
        let cert =
            synthesize_timedep(&problem, 2.0, 4, &TimedepSettings::default()).unwrap();
        assert!(cert.beta.abs() < 1e-6, "beta = {}", cert.beta);
        assert!(bounded_bound(&cert) < 1e-6);
    }

    #[test]
    fn bounded_bound_clamps_to_one() {
        let problem = population_problem();
        let cert =
            synthesize_timedep(&problem, 1.0, 4, &TimedepSettings::default()).unwrap();
        let inflated = TimeDepCertificate {
            beta: 3.2,
            ..cert
        };
        assert_eq!(bounded_bound(&inflated), 1.0);
    }

    #[test]
    fn complement_index_is_validated() {
        let problem = population_problem();
        let settings = TimedepSettings {
            complement_index: Some(5),
            ..TimedepSettings::default()
        };
        assert!(matches!(
            synthesize_timedep(&problem, 1.0, 4, &settings),
            Err(TimedepError::BadComplementIndex { index: 5, len: 1 })
        ));
    }

    /// A time-independent function satisfying the unbounded-horizon
    /// conditions (V ≥ 0, LV ≤ 0 off the unsafe set, V ≥ 1 on it) passes
    /// the bounded-horizon checker at any horizon as H(t,x) = V(x).
    #[test]
    fn time_independent_certificate_passes_sampling() {
        let problem = population_problem();
        let ctx = VarContext::with_time(1);
        let cert = TimeDepCertificate {
            h: fp("0.25*x1^2", &ctx),
            horizon: 5.0,
            eta: 1.0,
            beta: 0.25,
            degree: 2,
            complement_index: Some(0),
            witnesses: vec![],
            attempts: vec![],
        };
        check_timedep_sampling(&cert, &problem, 2_000, 13).unwrap();
    }

    #[test]
    fn sampling_rejects_growing_h() {
        let problem = population_problem();
        let ctx = VarContext::with_time(1);
        // H grows in time on the boundary piece and violates dH/dt ≤ 0.
        let cert = TimeDepCertificate {
            h: fp("0.25*x1^2 + 0.1*t", &ctx),
            horizon: 5.0,
            eta: 1.0,
            beta: 0.25,
            degree: 2,
            complement_index: Some(0),
            witnesses: vec![],
            attempts: vec![],
        };
        assert!(matches!(
            check_timedep_sampling(&cert, &problem, 500, 13),
            Err(TimedepError::SamplingViolation { .. })
        ));
    }
}
