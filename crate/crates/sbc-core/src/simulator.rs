//! Monte-Carlo simulation of the stopped process, as an empirical oracle
//! for certified bounds.
//!
//! Trajectories follow the Euler–Maruyama discretization
//! `X_{k+1} = X_k + b(X_k)·dt + σ(X_k)·√dt·ξ_k` with standard-normal
//! `ξ_k`, frozen at the first grid point outside the domain `X` (the
//! stopped process `X̃`). A trial is a *hit* when the trajectory visits the
//! unsafe set at any grid point before stopping; the unsafe check runs
//! before the exit check at each point, so landing in `X_u` on the way out
//! still counts. Non-finite or exploding states are counted as hits and
//! tallied separately — both choices keep the empirical rate conservative
//! from the certificate's point of view, as does the grid-only hit check
//! (no correction for excursions between grid points, which biases the
//! rate low; certified bounds must dominate the rate *plus* confidence
//! radius, never the other way around).
//!
//! Reproducibility: trial `k` draws exclusively from stream `k` of a
//! counter-based generator seeded by the run seed, so results are
//! identical no matter how trials are scheduled across threads.

use crate::polynomial::F64Poly;
use crate::sde_model::{sample_point, SafetyProblem, SemialgebraicSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

/// A state coordinate beyond this magnitude counts as numerical blow-up.
pub const BLOWUP_LIMIT: f64 = 1e8;

/// Draw budget for each rejection-sampled initial point.
const INITIAL_SAMPLE_TRIES: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step size must be positive and finite, got {0}")]
    BadDt(f64),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("at least one trial is required")]
    ZeroTrials,
    #[error("initial point has dimension {got}, the system has {expected}")]
    InitialDimension { expected: usize, got: usize },
    #[error("could not draw an initial point from X_0 (is it inside the sampling window?)")]
    InitialSampleFailed,
}

/// How each trial picks its starting state.
#[derive(Clone, Debug)]
pub enum InitialSampler {
    /// Every trial starts at the same point.
    PointMass(Vec<f64>),
    /// Rejection-sample the initial set inside the problem's window
    /// (equality constraints are handled by projection).
    UniformInitial,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub trials: u64,
    pub seed: u64,
    pub initial_sampler: InitialSampler,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub hit_count: u64,
    pub trials: u64,
    /// `hit_count / trials`.
    pub empirical_rate: f64,
    /// Two-sided 95% Clopper–Pearson interval for the hit probability.
    pub clopper_pearson_95: (f64, f64),
    /// Mean of `min(first exit or blow-up time, horizon)` across trials.
    pub mean_stop_time: f64,
    /// Trials that left f64 range and were conservatively counted as hits.
    pub blowup_count: u64,
}

/// Flat monomial list for the hot loop: `Σ c · Π x_i^p` without the
/// ordered-map overhead of the algebraic representation.
struct CompiledPoly {
    terms: Vec<(f64, Vec<(usize, u32)>)>,
}

impl CompiledPoly {
    fn new(p: &F64Poly) -> CompiledPoly {
        CompiledPoly {
            terms: p
                .iter()
                .map(|(m, &c)| (c, m.powers().map(|(v, e)| (v, u32::from(e))).collect()))
                .collect(),
        }
    }

    #[inline]
    fn evaluate(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, powers) in &self.terms {
            let mut term = *c;
            for &(v, e) in powers {
                term *= if e == 1 { x[v] } else { x[v].powi(e as i32) };
            }
            acc += term;
        }
        acc
    }
}

fn compile_set(set: &SemialgebraicSet<f64>) -> (Vec<CompiledPoly>, Vec<CompiledPoly>) {
    (
        set.inequalities().iter().map(CompiledPoly::new).collect(),
        set.equalities().iter().map(CompiledPoly::new).collect(),
    )
}

/// Problem data compiled for fast stepping.
struct CompiledSim<'a> {
    problem: &'a SafetyProblem<f64>,
    n: usize,
    m_w: usize,
    drift: Vec<CompiledPoly>,
    diffusion: Vec<CompiledPoly>,
    domain_ineqs: Vec<CompiledPoly>,
    unsafe_ineqs: Vec<CompiledPoly>,
    unsafe_eqs: Vec<CompiledPoly>,
}

impl<'a> CompiledSim<'a> {
    fn new(problem: &'a SafetyProblem<f64>) -> CompiledSim<'a> {
        let n = problem.system.n();
        let m_w = problem.system.m_w();
        let mut diffusion = Vec::with_capacity(n * m_w);
        for i in 0..n {
            for j in 0..m_w {
                diffusion.push(CompiledPoly::new(problem.system.diffusion().at(i, j)));
            }
        }
        // Membership in X is decided by inequalities alone: a simulated
        // path leaves a variety `h = 0` immediately almost surely, so
        // domain equalities would stop every trajectory at step one.
        let (domain_ineqs, _) = compile_set(&problem.domain);
        let (unsafe_ineqs, unsafe_eqs) = compile_set(&problem.unsafe_set);
        CompiledSim {
            problem,
            n,
            m_w,
            drift: problem
                .system
                .drift()
                .entries()
                .iter()
                .map(CompiledPoly::new)
                .collect(),
            diffusion,
            domain_ineqs,
            unsafe_ineqs,
            unsafe_eqs,
        }
    }

    #[inline]
    fn in_domain(&self, x: &[f64]) -> bool {
        self.domain_ineqs.iter().all(|p| p.evaluate(x) >= 0.0)
    }

    #[inline]
    fn in_unsafe(&self, x: &[f64]) -> bool {
        self.unsafe_ineqs.iter().all(|p| p.evaluate(x) >= 0.0)
            && self.unsafe_eqs.iter().all(|p| p.evaluate(x) == 0.0)
    }
}

struct TrialOutcome {
    first_hit: Option<f64>,
    stop_time: f64,
    blew_up: bool,
}

fn run_trial(sim: &CompiledSim, config: &SimConfig, trial: u64) -> Result<TrialOutcome, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial);
    let x0 = match &config.initial_sampler {
        InitialSampler::PointMass(p) => p.clone(),
        InitialSampler::UniformInitial => sample_point(
            &sim.problem.initial,
            &sim.problem.window,
            &mut rng,
            INITIAL_SAMPLE_TRIES,
        )
        .ok_or(SimError::InitialSampleFailed)?,
    };

    let steps = (config.horizon / config.dt).ceil() as u64;
    let sqrt_dt = config.dt.sqrt();
    let mut x = x0;
    let mut xi = vec![0.0f64; sim.m_w];
    let mut next = vec![0.0f64; sim.n];
    let mut outcome = TrialOutcome {
        first_hit: None,
        stop_time: config.horizon,
        blew_up: false,
    };
    for k in 0..=steps {
        let t = (k as f64 * config.dt).min(config.horizon);
        if x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT) {
            outcome.blew_up = true;
            outcome.first_hit.get_or_insert(t);
            outcome.stop_time = t;
            return Ok(outcome);
        }
        if outcome.first_hit.is_none() && sim.in_unsafe(&x) {
            outcome.first_hit = Some(t);
        }
        if !sim.in_domain(&x) {
            outcome.stop_time = t;
            return Ok(outcome);
        }
        if k == steps {
            break;
        }
        for j in 0..sim.m_w {
            xi[j] = StandardNormal.sample(&mut rng);
        }
        for i in 0..sim.n {
            let mut dx = sim.drift[i].evaluate(&x) * config.dt;
            for j in 0..sim.m_w {
                dx += sim.diffusion[i * sim.m_w + j].evaluate(&x) * sqrt_dt * xi[j];
            }
            next[i] = x[i] + dx;
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(outcome)
}

fn check_config(problem: &SafetyProblem<f64>, config: &SimConfig) -> Result<(), SimError> {
    if !(config.dt > 0.0 && config.dt.is_finite()) {
        return Err(SimError::BadDt(config.dt));
    }
    if !(config.horizon > 0.0 && config.horizon.is_finite()) {
        return Err(SimError::BadHorizon(config.horizon));
    }
    if config.trials == 0 {
        return Err(SimError::ZeroTrials);
    }
    if let InitialSampler::PointMass(p) = &config.initial_sampler {
        if p.len() != problem.system.n() {
            return Err(SimError::InitialDimension {
                expected: problem.system.n(),
                got: p.len(),
            });
        }
    }
    Ok(())
}

fn run_all(
    problem: &SafetyProblem<f64>,
    config: &SimConfig,
) -> Result<Vec<TrialOutcome>, SimError> {
    check_config(problem, config)?;
    let sim = CompiledSim::new(problem);
    (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(&sim, config, trial))
        .collect()
}

/// Exact (Clopper–Pearson) upper confidence limit for a binomial
/// proportion at the given one-sided confidence level.
pub fn clopper_pearson_upper(hits: u64, trials: u64, confidence: f64) -> f64 {
    assert!(trials > 0 && hits <= trials && (0.0..1.0).contains(&(1.0 - confidence)));
    if hits == trials {
        return 1.0;
    }
    Beta::new((hits + 1) as f64, (trials - hits) as f64)
        .expect("valid Beta parameters")
        .inverse_cdf(confidence)
}

/// Exact lower confidence limit, the mirror of [`clopper_pearson_upper`].
pub fn clopper_pearson_lower(hits: u64, trials: u64, confidence: f64) -> f64 {
    assert!(trials > 0 && hits <= trials && (0.0..1.0).contains(&(1.0 - confidence)));
    if hits == 0 {
        return 0.0;
    }
    Beta::new(hits as f64, (trials - hits + 1) as f64)
        .expect("valid Beta parameters")
        .inverse_cdf(1.0 - confidence)
}

/// Run `config.trials` independent trajectories and count unsafe hits.
pub fn simulate(problem: &SafetyProblem<f64>, config: &SimConfig) -> Result<SimResult, SimError> {
    let outcomes = run_all(problem, config)?;
    let trials = config.trials;
    let hit_count = outcomes.iter().filter(|o| o.first_hit.is_some()).count() as u64;
    let blowup_count = outcomes.iter().filter(|o| o.blew_up).count() as u64;
    let mean_stop_time = outcomes.iter().map(|o| o.stop_time).sum::<f64>() / trials as f64;
    Ok(SimResult {
        hit_count,
        trials,
        empirical_rate: hit_count as f64 / trials as f64,
        clopper_pearson_95: (
            clopper_pearson_lower(hit_count, trials, 0.975),
            clopper_pearson_upper(hit_count, trials, 0.975),
        ),
        mean_stop_time,
        blowup_count,
    })
}

/// One simulation pass, bucketing trials by first-hit time: for each grid
/// `T` the reported rate is the fraction of trials whose first hit occurs
/// at or after `T` — non-increasing in `T` by construction.
pub fn empirical_curve(
    problem: &SafetyProblem<f64>,
    config: &SimConfig,
    t_grid: &[f64],
) -> Result<Vec<(f64, f64)>, SimError> {
    let outcomes = run_all(problem, config)?;
    let mut hits: Vec<f64> = outcomes.iter().filter_map(|o| o.first_hit).collect();
    hits.sort_by(f64::total_cmp);
    Ok(t_grid
        .iter()
        .map(|&t| {
            let later = hits.len() - hits.partition_point(|&h| h < t);
            (t, later as f64 / config.trials as f64)
        })
        .collect())
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

    fn decay_problem(sigma: &str) -> SafetyProblem<f64> {
        let ctx = VarContext::state(1);
        let system = SdeSystem::new(
            PolyVector::new(vec![fp("-x1", &ctx)]),
            PolyMatrix::new(1, 1, vec![fp(sigma, &ctx)]),
        )
        .unwrap();
        SafetyProblem {
            name: "decay".to_string(),
            system,
            domain: SemialgebraicSet::new(ctx, vec![fp("x1", &ctx)], vec![]),
            initial: SemialgebraicSet::new(ctx, vec![], vec![fp("x1 - 1", &ctx)]),
            unsafe_set: SemialgebraicSet::new(ctx, vec![fp("x1 - 2", &ctx)], vec![]),
            boundary_pieces: vec![fp("x1", &ctx)],
            window: SampleBox::new(vec![0.0], vec![10.0]).unwrap(),
        }
    }

    fn base_config() -> SimConfig {
        SimConfig {
            dt: 1e-3,
            horizon: 5.0,
            trials: 200,
            seed: 42,
            initial_sampler: InitialSampler::PointMass(vec![1.0]),
        }
    }

    #[test]
    fn noiseless_decay_follows_the_ode_and_never_hits() {
        let problem = decay_problem("0");
        let config = base_config();
        let result = simulate(&problem, &config).unwrap();
        assert_eq!(result.hit_count, 0);
        assert_eq!(result.blowup_count, 0);
        assert_eq!(result.empirical_rate, 0.0);
        assert_abs_diff_eq!(result.mean_stop_time, 5.0, epsilon = 1e-12);

        // One explicit trajectory: Euler on dx = −x dt stays within O(dt)
        // of e^{−t}.
        let mut x = 1.0f64;
        for _ in 0..5000 {
            x += -x * 1e-3;
        }
        assert_abs_diff_eq!(x, (-5.0f64).exp(), epsilon = 5e-3 * (-5.0f64).exp() + 1e-5);
    }

    #[test]
    fn config_validation_rejects_degenerate_inputs() {
        let problem = decay_problem("0");
        let mut config = base_config();
        config.trials = 0;
        assert!(matches!(simulate(&problem, &config), Err(SimError::ZeroTrials)));
        let mut config = base_config();
        config.dt = 0.0;
        assert!(matches!(simulate(&problem, &config), Err(SimError::BadDt(_))));
        let mut config = base_config();
        config.initial_sampler = InitialSampler::PointMass(vec![1.0, 2.0]);
        assert!(matches!(
            simulate(&problem, &config),
            Err(SimError::InitialDimension { .. })
        ));
    }

    #[test]
    fn seed_determinism_and_seed_sensitivity() {
        let problem = decay_problem("0.7071067811865476*x1");
        let mut config = base_config();
        config.trials = 2_000;
        let a = simulate(&problem, &config).unwrap();
        let b = simulate(&problem, &config).unwrap();
        assert_eq!(a, b);
        config.seed = 43;
        let c = simulate(&problem, &config).unwrap();
        assert!(a.mean_stop_time != c.mean_stop_time || a.hit_count != c.hit_count);
    }

    #[test]
    fn unstable_drift_blows_up_and_counts_as_hit() {
        let ctx = VarContext::state(1);
        let system = SdeSystem::new(
            PolyVector::new(vec![fp("x1^3", &ctx)]),
            PolyMatrix::new(1, 1, vec![fp("0", &ctx)]),
        )
        .unwrap();
        let problem = SafetyProblem {
            name: "explode".to_string(),
            system,
            domain: SemialgebraicSet::new(ctx, vec![], vec![]),
            initial: SemialgebraicSet::new(ctx, vec![], vec![fp("x1 - 2", &ctx)]),
            // Unreachable unsafe set at x ≤ −10⁹: only blow-ups count.
            unsafe_set: SemialgebraicSet::new(ctx, vec![fp("-x1 - 1000000000", &ctx)], vec![]),
            boundary_pieces: vec![],
            window: SampleBox::new(vec![-1.0], vec![3.0]).unwrap(),
        };
        let config = SimConfig {
            dt: 1e-2,
            horizon: 10.0,
            trials: 8,
            seed: 1,
            initial_sampler: InitialSampler::PointMass(vec![2.0]),
        };
        let result = simulate(&problem, &config).unwrap();
        assert_eq!(result.blowup_count, 8);
        assert_eq!(result.hit_count, 8);
        assert!(result.mean_stop_time < 10.0);
    }

    #[test]
    fn exit_freezes_before_any_later_hit() {
        // Deterministic drift pushes x upward through the domain lid at
        // x = 1.5 toward the unsafe set at x ≥ 2; stopping must win.
        let ctx = VarContext::state(1);
        let system = SdeSystem::new(
            PolyVector::new(vec![fp("1", &ctx)]),
            PolyMatrix::new(1, 1, vec![fp("0", &ctx)]),
        )
        .unwrap();
        let problem = SafetyProblem {
            name: "lid".to_string(),
            system,
            domain: SemialgebraicSet::new(ctx, vec![fp("1.5 - x1", &ctx)], vec![]),
            initial: SemialgebraicSet::new(ctx, vec![], vec![fp("x1", &ctx)]),
            unsafe_set: SemialgebraicSet::new(ctx, vec![fp("x1 - 2", &ctx)], vec![]),
            boundary_pieces: vec![],
            window: SampleBox::new(vec![0.0], vec![3.0]).unwrap(),
        };
        let config = SimConfig {
            dt: 1e-3,
            horizon: 10.0,
            trials: 4,
            seed: 5,
            initial_sampler: InitialSampler::PointMass(vec![0.0]),
        };
        let result = simulate(&problem, &config).unwrap();
        assert_eq!(result.hit_count, 0);
        assert_abs_diff_eq!(result.mean_stop_time, 1.5, epsilon = 2e-3);
    }

    #[test]
    fn hit_on_the_way_out_still_counts() {
        // Unsafe band inside the domain right at the lid: the trajectory
        // enters X_u on the same step it leaves X.
        let ctx = VarContext::state(1);
        let system = SdeSystem::new(
            PolyVector::new(vec![fp("1", &ctx)]),
            PolyMatrix::new(1, 1, vec![fp("0", &ctx)]),
        )
        .unwrap();
        let problem = SafetyProblem {
            name: "band".to_string(),
            system,
            domain: SemialgebraicSet::new(ctx, vec![fp("1.5 - x1", &ctx)], vec![]),
            initial: SemialgebraicSet::new(ctx, vec![], vec![fp("x1", &ctx)]),
            unsafe_set: SemialgebraicSet::new(ctx, vec![fp("x1 - 1.4", &ctx)], vec![]),
            boundary_pieces: vec![],
            window: SampleBox::new(vec![0.0], vec![3.0]).unwrap(),
        };
        let config = SimConfig {
            dt: 1e-3,
            horizon: 10.0,
            trials: 2,
            seed: 5,
            initial_sampler: InitialSampler::PointMass(vec![0.0]),
        };
        let result = simulate(&problem, &config).unwrap();
        assert_eq!(result.hit_count, 2);
    }

    #[test]
    fn curve_is_non_increasing_and_matches_simulate() {
        let problem = decay_problem("1.1*x1");
        let config = SimConfig {
            dt: 1e-3,
            horizon: 10.0,
            trials: 3_000,
            seed: 9,
            initial_sampler: InitialSampler::UniformInitial,
        };
        let grid: Vec<f64> = (0..20).map(|k| k as f64 * 0.5).collect();
        let curve = empirical_curve(&problem, &config, &grid).unwrap();
        let result = simulate(&problem, &config).unwrap();
        assert!(result.hit_count > 0, "noise this large should produce hits");
        assert_abs_diff_eq!(curve[0].1, result.empirical_rate, epsilon = 1e-12);
        for pair in curve.windows(2) {
            assert!(pair[1].1 <= pair[0].1, "curve must be non-increasing");
        }
    }

    #[test]
    fn clopper_pearson_matches_reference_values() {
        // Binomial tail identities: for 0 hits the upper limit solves
        // (1−p)^n = 1−conf.
        let up = clopper_pearson_upper(0, 100, 0.99);
        assert_abs_diff_eq!(up, 1.0 - 0.01f64.powf(1.0 / 100.0), epsilon = 1e-12);
        let lo = clopper_pearson_lower(0, 100, 0.975);
        assert_eq!(lo, 0.0);
        assert_eq!(clopper_pearson_upper(100, 100, 0.99), 1.0);
        // Interval contains the point estimate.
        let (l, u) = (
            clopper_pearson_lower(7, 50, 0.975),
            clopper_pearson_upper(7, 50, 0.975),
        );
        assert!(l < 7.0 / 50.0 && 7.0 / 50.0 < u);
    }
}
