//! SDE systems, semialgebraic sets, and the infinitesimal generator.
//!
//! A system is `dX_t = b(X_t) dt + sigma(X_t) dW_t` with polynomial drift
//! `b : R^n -> R^n` and diffusion `sigma : R^n -> R^{n x m_w}`, driven by an
//! `m_w`-dimensional Wiener process. Drift and diffusion are time-invariant;
//! time enters only through test functions `f(t, x)`.
//!
//! The generator of a twice-differentiable `f` is
//!
//! ```text
//! Af = ∂f/∂t + Σ_i b_i ∂f/∂x_i + ½ Σ_{i,j} (σσᵀ)_{ij} ∂²f/∂x_i∂x_j
//! ```
//!
//! (the `∂f/∂t` term is present only when `f`'s context has a time
//! variable). For polynomial `f` the result is again a polynomial, computed
//! exactly in the coefficient ring.
//!
//! A [`SemialgebraicSet`] is a conjunction `{x : g_i(x) >= 0, h_j(x) = 0}`.
//! One deliberate exception to the conjunction reading: the **boundary** of
//! the state domain in a [`SafetyProblem`] is a *list of pieces* — each
//! equality polynomial describes one surface `{h = 0}`, the enforced
//! boundary is the union of the pieces (each intersected with the domain
//! inequalities). Which pieces to enforce is a modeling choice made in the
//! problem file; see the crate README.

use crate::polynomial::{Coeff, F64Poly, PolyMatrix, PolyVector, Polynomial, VarContext};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Absolute slack used when testing set membership numerically: an
/// inequality `g(x) >= 0` accepts `g(x) >= -MEMBERSHIP_TOL` and an equality
/// `h(x) = 0` accepts `|h(x)| <= MEMBERSHIP_TOL`. Large enough to absorb
/// accumulated floating-point error when evaluating degree-10 polynomials on
/// points of magnitude ~10, small enough that no fixture geometry is blurred.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("drift must have exactly n = {expected} components, got {got}")]
    DriftDimension { expected: usize, got: usize },
    #[error("diffusion must be n x m_w = {n} x {m_w}, got {rows} x {cols}")]
    DiffusionDimension {
        n: usize,
        m_w: usize,
        rows: usize,
        cols: usize,
    },
    #[error("drift and diffusion must be time-invariant (found the variable t)")]
    TimeDependentCoefficients,
    #[error("set constraint uses a different variable context than the problem")]
    ContextMismatch,
    #[error("sampling box must have one finite interval per state variable")]
    BadSampleBox,
}

/// Polynomial SDE `dX = b(X) dt + sigma(X) dW`.
#[derive(Clone, Debug)]
pub struct SdeSystem<C: Coeff> {
    drift: PolyVector<C>,
    diffusion: PolyMatrix<C>,
}

impl<C: Coeff> SdeSystem<C> {
    /// Build a system from drift (length `n`) and diffusion (`n x m_w`),
    /// both over the state-only context.
    pub fn new(drift: PolyVector<C>, diffusion: PolyMatrix<C>) -> Result<Self, ModelError> {
        let ctx = *drift.ctx();
        if ctx.has_time() {
            return Err(ModelError::TimeDependentCoefficients);
        }
        let n = ctx.n_state();
        if drift.len() != n {
            return Err(ModelError::DriftDimension {
                expected: n,
                got: drift.len(),
            });
        }
        if diffusion.nrows() != n {
            return Err(ModelError::DiffusionDimension {
                n,
                m_w: diffusion.ncols(),
                rows: diffusion.nrows(),
                cols: diffusion.ncols(),
            });
        }
        if diffusion.ctx() != &ctx {
            return Err(ModelError::ContextMismatch);
        }
        Ok(SdeSystem { drift, diffusion })
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.drift.ctx().n_state()
    }

    /// Wiener dimension `m_w`.
    pub fn m_w(&self) -> usize {
        self.diffusion.ncols()
    }

    pub fn drift(&self) -> &PolyVector<C> {
        &self.drift
    }

    pub fn diffusion(&self) -> &PolyMatrix<C> {
        &self.diffusion
    }

    /// The diffusion outer product `σσᵀ` (an `n x n` polynomial matrix).
    pub fn diffusion_outer(&self) -> PolyMatrix<C> {
        self.diffusion.mul_transpose()
    }

    /// Apply the generator to `f`, which may live over the state context or
    /// the state-plus-time context (then `∂f/∂t` is included).
    ///
    /// # Panics
    /// If `f`'s context has a different state dimension.
    pub fn apply_generator(&self, f: &Polynomial<C>) -> Polynomial<C> {
        let mut out = self.apply_state_generator(f);
        if let Some(t) = f.ctx().time_index() {
            out = out.add(&f.differentiate(t));
        }
        out
    }

    /// The drift/diffusion part of the generator only:
    /// `Σ_i b_i ∂f/∂x_i + ½ Σ_{i,j} (σσᵀ)_{ij} ∂²f/∂x_i∂x_j`,
    /// with no `∂f/∂t` term regardless of `f`'s context.
    pub fn apply_state_generator(&self, f: &Polynomial<C>) -> Polynomial<C> {
        let fctx = *f.ctx();
        assert_eq!(
            fctx.n_state(),
            self.n(),
            "generator argument has wrong state dimension"
        );
        let lift = |p: &Polynomial<C>| p.with_ctx(fctx);
        // 1/2 in the coefficient ring; exact for rationals, 0.5 for doubles.
        let half = C::from_decimal_str("0.5").expect("0.5 parses in every coefficient ring");
        let mut out = Polynomial::zero(fctx);
        for i in 0..self.n() {
            out = out.add(&lift(self.drift.entry(i)).mul(&f.differentiate(i)));
        }
        let outer = self.diffusion_outer();
        for i in 0..self.n() {
            for j in 0..self.n() {
                let a_ij = outer.at(i, j);
                if a_ij.is_zero() {
                    continue;
                }
                let second = f.differentiate(i).differentiate(j);
                if second.is_zero() {
                    continue;
                }
                out = out.add(&lift(a_ij).mul(&second).scale(&half));
            }
        }
        out
    }

    /// Apply the generator componentwise to a vector of test functions.
    pub fn apply_generator_vec(&self, f: &PolyVector<C>) -> PolyVector<C> {
        PolyVector::new(f.entries().iter().map(|p| self.apply_generator(p)).collect())
    }

    pub fn to_f64(&self) -> SdeSystem<f64> {
        SdeSystem {
            drift: self.drift.to_f64(),
            diffusion: self.diffusion.to_f64(),
        }
    }
}

/// Conjunctive semialgebraic set `{x : g_i(x) >= 0 for all i, h_j(x) = 0
/// for all j}`. An empty constraint list is the whole space.
#[derive(Clone, Debug)]
pub struct SemialgebraicSet<C: Coeff> {
    ctx: VarContext,
    inequalities: Vec<Polynomial<C>>,
    equalities: Vec<Polynomial<C>>,
}

impl<C: Coeff> SemialgebraicSet<C> {
    /// # Panics
    /// If any constraint polynomial uses a different context.
    pub fn new(
        ctx: VarContext,
        inequalities: Vec<Polynomial<C>>,
        equalities: Vec<Polynomial<C>>,
    ) -> Self {
        for p in inequalities.iter().chain(&equalities) {
            assert_eq!(
                p.ctx(),
                &ctx,
                "set constraint uses a different variable context"
            );
        }
        SemialgebraicSet {
            ctx,
            inequalities,
            equalities,
        }
    }

    /// The whole space (no constraints).
    pub fn all_space(ctx: VarContext) -> Self {
        SemialgebraicSet::new(ctx, Vec::new(), Vec::new())
    }

    pub fn ctx(&self) -> &VarContext {
        &self.ctx
    }

    pub fn inequalities(&self) -> &[Polynomial<C>] {
        &self.inequalities
    }

    pub fn equalities(&self) -> &[Polynomial<C>] {
        &self.equalities
    }

    pub fn is_all_space(&self) -> bool {
        self.inequalities.is_empty() && self.equalities.is_empty()
    }

    /// Numerical membership test with slack `tol` (see [`MEMBERSHIP_TOL`]).
    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        self.inequalities
            .iter()
            .all(|g| g.evaluate(point) >= -tol)
            && self.equalities.iter().all(|h| h.evaluate(point).abs() <= tol)
    }

    /// A copy with an extra inequality constraint.
    pub fn with_inequality(&self, g: Polynomial<C>) -> Self {
        let mut out = self.clone();
        assert_eq!(g.ctx(), &out.ctx, "set constraint context mismatch");
        out.inequalities.push(g);
        out
    }

    pub fn to_f64(&self) -> SemialgebraicSet<f64> {
        SemialgebraicSet {
            ctx: self.ctx,
            inequalities: self.inequalities.iter().map(Polynomial::to_f64).collect(),
            equalities: self.equalities.iter().map(Polynomial::to_f64).collect(),
        }
    }
}

/// Axis-aligned box used as the sampling window for membership checks,
/// containment diagnostics, and certificate spot checks.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SampleBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        if lo.len() != hi.len()
            || lo.is_empty()
            || lo
                .iter()
                .zip(&hi)
                .any(|(a, b)| !a.is_finite() || !b.is_finite() || a >= b)
        {
            return Err(ModelError::BadSampleBox);
        }
        Ok(SampleBox { lo, hi })
    }

    /// `[-10, 10]^n` — generous default window around the fixtures' scales.
    pub fn default_for(n: usize) -> Self {
        SampleBox {
            lo: vec![-10.0; n],
            hi: vec![10.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn uniform(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| rng.random_range(a..b))
            .collect()
    }
}

/// Draw a point of `set` inside `window` by rejection sampling; sets with
/// equality constraints are handled by Gauss–Newton projection onto the
/// variety followed by the membership test. Returns `None` when `max_tries`
/// draws produce no member (e.g. the set misses the window).
pub fn sample_point(
    set: &SemialgebraicSet<f64>,
    window: &SampleBox,
    rng: &mut impl Rng,
    max_tries: usize,
) -> Option<Vec<f64>> {
    assert_eq!(window.dim(), set.ctx().num_vars(), "sampling window dimension");
    for _ in 0..max_tries {
        let mut x = window.uniform(rng);
        if !set.equalities.is_empty() && !project_to_variety(&set.equalities, &mut x) {
            continue;
        }
        if set.contains(&x, MEMBERSHIP_TOL) {
            return Some(x);
        }
    }
    None
}

/// Gauss–Newton projection of `x` onto `{h_j = 0}`. Returns whether the
/// residual converged below 1e-12.
fn project_to_variety(equalities: &[F64Poly], x: &mut [f64]) -> bool {
    let n = x.len();
    let m = equalities.len();
    let grads: Vec<Vec<F64Poly>> = equalities
        .iter()
        .map(|h| (0..n).map(|i| h.differentiate(i)).collect())
        .collect();
    for _ in 0..60 {
        let res = DVector::from_iterator(m, equalities.iter().map(|h| h.evaluate(x)));
        if res.amax() <= 1e-12 {
            return true;
        }
        let jac = DMatrix::from_fn(m, n, |r, c| grads[r][c].evaluate(x));
        // Minimum-norm step: dx = Jᵀ (J Jᵀ)⁻¹ (−res), via SVD for rank safety.
        let svd = jac.clone().svd(true, true);
        match svd.solve(&(-res), 1e-12) {
            Ok(dx) => {
                for i in 0..n {
                    x[i] += dx[i];
                }
            }
            Err(_) => return false,
        }
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
    }
    equalities.iter().all(|h| h.evaluate(x).abs() <= 1e-10)
}

/// A complete infinite-horizon safety question: system, state domain `X`,
/// initial set `X_0`, unsafe set `X_u`, and optionally the enforced boundary
/// pieces of `X`.
#[derive(Clone, Debug)]
pub struct SafetyProblem<C: Coeff> {
    pub name: String,
    pub system: SdeSystem<C>,
    /// State domain `X`; the process is stopped on first exit.
    pub domain: SemialgebraicSet<C>,
    /// Initial set `X_0`.
    pub initial: SemialgebraicSet<C>,
    /// Unsafe set `X_u` (assumed to lie inside `X`).
    pub unsafe_set: SemialgebraicSet<C>,
    /// Enforced boundary pieces of `X`: each polynomial `h` is one piece
    /// `{h = 0}` (intersected with the domain inequalities). The list is a
    /// union of surfaces, not a conjunction. Empty when `X = R^n` or when no
    /// boundary condition is enforced.
    pub boundary_pieces: Vec<Polynomial<C>>,
    /// Sampling window for diagnostics and spot checks.
    pub window: SampleBox,
}

impl<C: Coeff> SafetyProblem<C> {
    /// Structural checks; returns diagnostics for conditions that are only
    /// testable by sampling.
    ///
    /// Containment of `X_0` and `X_u` in `X` is a *sample-based* check
    /// (rejection sampling inside the window): failures come back as
    /// warnings, not errors, since a finite sample cannot prove containment
    /// either way.
    pub fn validate(&self, seed: u64) -> Result<Vec<String>, ModelError> {
        let ctx = *self.domain.ctx();
        if ctx != VarContext::state(self.system.n()) {
            return Err(ModelError::ContextMismatch);
        }
        for set in [&self.initial, &self.unsafe_set] {
            if set.ctx() != &ctx {
                return Err(ModelError::ContextMismatch);
            }
        }
        for piece in &self.boundary_pieces {
            if piece.ctx() != &ctx {
                return Err(ModelError::ContextMismatch);
            }
        }
        if self.window.dim() != self.system.n() {
            return Err(ModelError::BadSampleBox);
        }

        let mut warnings = Vec::new();
        let domain = self.domain.to_f64();
        let mut check_subset = |label: &str, set: &SemialgebraicSet<C>, seed: u64| {
            use rand::SeedableRng;
            let set = set.to_f64();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut found = 0usize;
            let mut outside = 0usize;
            for _ in 0..10_000 {
                if let Some(x) = sample_point(&set, &self.window, &mut rng, 20) {
                    found += 1;
                    if !domain.contains(&x, MEMBERSHIP_TOL) {
                        outside += 1;
                    }
                }
            }
            if found == 0 {
                warnings.push(format!(
                    "could not sample any point of {label} inside the window; containment in the domain is unchecked"
                ));
            } else if outside > 0 {
                warnings.push(format!(
                    "{outside} of {found} sampled points of {label} fall outside the domain"
                ));
            }
        };
        check_subset("the initial set", &self.initial, seed ^ 0x5eed_0001);
        check_subset("the unsafe set", &self.unsafe_set, seed ^ 0x5eed_0002);
        Ok(warnings)
    }

    pub fn to_f64(&self) -> SafetyProblem<f64> {
        SafetyProblem {
            name: self.name.clone(),
            system: self.system.to_f64(),
            domain: self.domain.to_f64(),
            initial: self.initial.to_f64(),
            unsafe_set: self.unsafe_set.to_f64(),
            boundary_pieces: self.boundary_pieces.iter().map(Polynomial::to_f64).collect(),
            window: self.window.clone(),
        }
    }
}

impl SafetyProblem<f64> {
    /// Per-variable magnitudes of the sampling window, used to renormalize
    /// the problem onto (roughly) the unit box before an SDP solve.
    /// Degenerate entries fall back to 1 (no rescaling of that variable).
    pub fn window_scales(&self) -> Vec<f64> {
        self.window
            .lo()
            .iter()
            .zip(self.window.hi())
            .map(|(&lo, &hi)| {
                let s = lo.abs().max(hi.abs());
                if s.is_finite() && s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// The same safety problem expressed in scaled coordinates `y = x / s`
    /// (entrywise): substituting `x = s∘y` into every polynomial and
    /// dividing the drift and diffusion rows by `s_i`, which is exactly the
    /// dynamics of `Y_t = X_t / s`. Certificates synthesized for the scaled
    /// problem compose back with `y = x / s` to certificates for the
    /// original one; bounds and levels are invariant.
    pub fn dilated(&self, scales: &[f64]) -> SafetyProblem<f64> {
        let ctx = *self.domain.ctx();
        let n = ctx.n_state();
        assert_eq!(scales.len(), n, "one scale per state variable");
        let dil = |p: &F64Poly| p.dilate(scales);
        let dil_set = |set: &SemialgebraicSet<f64>| {
            SemialgebraicSet::new(
                ctx,
                set.inequalities().iter().map(dil).collect(),
                set.equalities().iter().map(dil).collect(),
            )
        };
        let drift = PolyVector::new(
            (0..n)
                .map(|i| {
                    self.system
                        .drift()
                        .entry(i)
                        .dilate(scales)
                        .scale(&(1.0 / scales[i]))
                })
                .collect(),
        );
        let m_w = self.system.m_w();
        let diffusion = PolyMatrix::new(
            n,
            m_w,
            (0..n)
                .flat_map(|i| {
                    (0..m_w).map(move |j| {
                        self.system
                            .diffusion()
                            .at(i, j)
                            .dilate(scales)
                            .scale(&(1.0 / scales[i]))
                    })
                })
                .collect(),
        );
        SafetyProblem {
            name: self.name.clone(),
            system: SdeSystem::new(drift, diffusion)
                .expect("dilation preserves system dimensions"),
            domain: dil_set(&self.domain),
            initial: dil_set(&self.initial),
            unsafe_set: dil_set(&self.unsafe_set),
            boundary_pieces: self.boundary_pieces.iter().map(|p| p.dilate(scales)).collect(),
            window: SampleBox::new(
                self.window.lo().iter().zip(scales).map(|(v, s)| v / s).collect(),
                self.window.hi().iter().zip(scales).map(|(v, s)| v / s).collect(),
            )
            .expect("dilation preserves window ordering"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::parse::parse_polynomial;
    use crate::polynomial::RatPoly;
    use num_rational::BigRational;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fp(src: &str, ctx: &VarContext) -> F64Poly {
        parse_polynomial(src, ctx).unwrap()
    }

    fn rp(src: &str, ctx: &VarContext) -> RatPoly {
        parse_polynomial(src, ctx).unwrap()
    }

    /// dX = -X dt + (sqrt(2)/2) X dW over one state variable.
    fn population_f64() -> SdeSystem<f64> {
        let ctx = VarContext::state(1);
        SdeSystem::new(
            PolyVector::new(vec![fp("-x1", &ctx)]),
            PolyMatrix::new(1, 1, vec![fp("0.7071067811865476*x1", &ctx)]),
        )
        .unwrap()
    }

    #[test]
    fn generator_on_quadratic() {
        // A(x^2) = (-x)(2x) + 1/2 * (x^2/2) * 2 = -1.5 x^2 (within the
        // rounding of sqrt(2)/2 as a double).
        let sys = population_f64();
        let ctx = VarContext::state(1);
        let af = sys.apply_generator(&fp("x1^2", &ctx));
        let expected = fp("-1.5*x1^2", &ctx);
        let diff = af.sub(&expected);
        assert!(diff.max_abs_coeff() < 1e-15, "A(x^2) = {af}");
    }

    #[test]
    fn generator_exact_in_rationals() {
        // With sigma = x exactly: A(x^2) = -2x^2 + x^2 = -x^2, coefficient-exact.
        let ctx = VarContext::state(1);
        let sys = SdeSystem::new(
            PolyVector::new(vec![rp("-x1", &ctx)]),
            PolyMatrix::new(1, 1, vec![rp("x1", &ctx)]),
        )
        .unwrap();
        let af = sys.apply_generator(&rp("x1^2", &ctx));
        assert_eq!(af, rp("-x1^2", &ctx));
    }

    #[test]
    fn generator_kills_constants_and_differentiates_time() {
        let sys = population_f64();
        let ctx_t = VarContext::with_time(1);
        assert!(sys.apply_generator(&fp("3", &ctx_t)).is_zero());
        // f = t: Af = 1.
        assert_eq!(sys.apply_generator(&fp("t", &ctx_t)), fp("1", &ctx_t));
    }

    #[test]
    fn generator_is_linear_exact() {
        let ctx = VarContext::state(2);
        let sys = SdeSystem::new(
            PolyVector::new(vec![rp("x2", &ctx), rp("-x1 - 7*x2", &ctx)]),
            PolyMatrix::new(2, 1, vec![rp("0", &ctx), rp("-2*x2", &ctx)]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let basis = crate::polynomial::monomial_basis(&ctx, 4);
        for _ in 0..50 {
            let rand_poly = |rng: &mut ChaCha8Rng| {
                RatPoly::from_terms(
                    ctx,
                    basis.iter().map(|m| {
                        (
                            m.clone(),
                            BigRational::new(
                                rng.random_range(-50i64..50).into(),
                                rng.random_range(1i64..10).into(),
                            ),
                        )
                    }),
                )
            };
            let f = rand_poly(&mut rng);
            let g = rand_poly(&mut rng);
            let a = BigRational::new(rng.random_range(-9i64..9).into(), 2.into());
            let b = BigRational::new(rng.random_range(-9i64..9).into(), 3.into());
            let lhs = sys.apply_generator(&f.scale(&a).add(&g.scale(&b)));
            let rhs = sys
                .apply_generator(&f)
                .scale(&a)
                .add(&sys.apply_generator(&g).scale(&b));
            assert_eq!(lhs, rhs, "generator must be linear");
        }
    }

    #[test]
    fn time_invariant_argument_stays_time_invariant() {
        let sys = population_f64();
        let ctx_t = VarContext::with_time(1);
        let f = fp("x1^3 + 2*x1", &ctx_t);
        let af = sys.apply_generator(&f);
        assert_eq!(af.degree_in(ctx_t.time_index().unwrap()), 0);
    }

    #[test]
    fn membership_on_annulus_boundary() {
        // Domain {|x1|<=3, |x2|<=3, x1^2+x2^2 >= 0.25}: the point (0.5, 0)
        // sits exactly on the inner circle and must be a member.
        let ctx = VarContext::state(2);
        let set = SemialgebraicSet::new(
            ctx,
            vec![
                fp("9 - x1^2", &ctx),
                fp("9 - x2^2", &ctx),
                fp("x1^2 + x2^2 - 0.25", &ctx),
            ],
            vec![],
        );
        assert!(set.contains(&[0.5, 0.0], MEMBERSHIP_TOL));
        assert!(!set.contains(&[0.4, 0.0], MEMBERSHIP_TOL));
        assert!(!set.contains(&[3.2, 0.0], MEMBERSHIP_TOL));
    }

    #[test]
    fn equality_set_membership() {
        let ctx = VarContext::state(1);
        let set = SemialgebraicSet::new(ctx, vec![], vec![fp("x1 - 1", &ctx)]);
        assert!(set.contains(&[1.0], MEMBERSHIP_TOL));
        assert!(set.contains(&[1.0 + 1e-10], MEMBERSHIP_TOL));
        assert!(!set.contains(&[1.001], MEMBERSHIP_TOL));
    }

    #[test]
    fn sampling_projects_onto_equalities() {
        let ctx = VarContext::state(2);
        // Unit circle: x1^2 + x2^2 = 1.
        let set = SemialgebraicSet::new(ctx, vec![], vec![fp("x1^2 + x2^2 - 1", &ctx)]);
        let window = SampleBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let x = sample_point(&set, &window, &mut rng, 50).expect("circle is reachable");
            let r = (x[0] * x[0] + x[1] * x[1] - 1.0).abs();
            assert!(r <= 1e-9, "projected point off the circle by {r}");
        }
    }

    #[test]
    fn rejection_sampling_respects_inequalities() {
        let ctx = VarContext::state(1);
        let set = SemialgebraicSet::new(ctx, vec![fp("x1 - 2", &ctx)], vec![]);
        let window = SampleBox::new(vec![-10.0], vec![10.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = sample_point(&set, &window, &mut rng, 100).unwrap();
            assert!(x[0] >= 2.0 - MEMBERSHIP_TOL);
        }
    }

    #[test]
    fn validate_flags_misplaced_initial_set() {
        let ctx = VarContext::state(1);
        let sys = SdeSystem::new(
            PolyVector::new(vec![fp("-x1", &ctx)]),
            PolyMatrix::new(1, 1, vec![fp("0.5*x1", &ctx)]),
        )
        .unwrap();
        let problem = SafetyProblem {
            name: "bad-containment".into(),
            system: sys,
            domain: SemialgebraicSet::new(ctx, vec![fp("x1", &ctx)], vec![]),
            // Initial set sits at x = -1, outside the domain {x >= 0}.
            initial: SemialgebraicSet::new(ctx, vec![], vec![fp("x1 + 1", &ctx)]),
            unsafe_set: SemialgebraicSet::new(ctx, vec![fp("x1 - 2", &ctx)], vec![]),
            boundary_pieces: vec![fp("x1", &ctx)],
            window: SampleBox::default_for(1),
        };
        let warnings = problem.validate(0).unwrap();
        assert!(
            warnings.iter().any(|w| w.contains("initial set")),
            "expected a containment warning, got {warnings:?}"
        );
    }

    #[test]
    fn dimension_errors_are_reported() {
        let ctx = VarContext::state(2);
        let bad = SdeSystem::new(
            PolyVector::new(vec![fp("x2", &ctx)]),
            PolyMatrix::new(2, 1, vec![fp("0", &ctx), fp("1", &ctx)]),
        );
        assert!(matches!(bad, Err(ModelError::DriftDimension { .. })));
    }
}
