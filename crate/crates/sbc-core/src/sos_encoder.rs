//! Sum-of-squares encoding of polynomial nonnegativity constraints.
//!
//! A polynomial `p` is certified nonnegative on a basic closed semialgebraic
//! set `{x : g_i(x) >= 0, h_j(x) = 0}` by exhibiting the decomposition
//!
//! ```text
//! p = σ_0 + Σ_i σ_i·g_i + Σ_j λ_j·h_j
//! ```
//!
//! with each `σ` a sum of squares (`σ = zᵀQz`, `Q ⪰ 0`, `z` a monomial
//! basis) and the `λ_j` free polynomials. Matching coefficients monomial by
//! monomial turns the decomposition into linear equality constraints over
//! the Gram matrices `Q` and the free multiplier coefficients — exactly the
//! [`SdpProblem`] form of the solver backend.
//!
//! The central data type is [`TemplatePoly`]: a polynomial whose
//! coefficients are affine expressions in SDP decision variables. Fixed
//! polynomials, unknown-coefficient templates, and Gram forms all live in
//! this one type, so certificate conditions are assembled with ordinary
//! polynomial arithmetic and then pinned to zero coefficient-wise.
//!
//! Encoding is deterministic: the same inputs produce the identical
//! [`SdpProblem`] (same variable order, same row order), which makes solver
//! behaviour reproducible run to run.
//!
//! Solutions are extracted back into explicit [`NonnegWitness`] values and
//! revalidated independently of the solver: Gram eigenvalues are checked
//! PSD and the decomposition identity is re-expanded and compared against
//! the target coefficient-wise.

use crate::polynomial::{monomial_basis, F64Poly, Monomial, VarContext};
use crate::sde_model::{SdeSystem, SemialgebraicSet};
use crate::sdp_backend::{EqRow, SdpProblem, SdpSolution};
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use thiserror::Error;

/// Most negative Gram eigenvalue accepted in a witness, relative to the
/// matrix magnitude. Interior-point solutions at gap tolerance 1e-8 leave
/// eigenvalue noise around 1e-9..1e-8 on the PSD boundary; 1e-7 accepts
/// that noise while rejecting genuinely indefinite matrices.
pub const GRAM_PSD_TOL: f64 = 1e-7;

/// Maximum relative coefficient residual between the target and the
/// re-expanded decomposition. Equality rows are satisfied to the solver
/// feasibility tolerance (1e-8); re-expansion in floating point adds
/// roundup, so witnesses are held to 1e-6 of the coefficient scale.
pub const IDENTITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum WitnessError {
    #[error("Gram matrix {index} is not PSD (min eigenvalue {min_eigenvalue:.3e})")]
    GramNotPsd { index: usize, min_eigenvalue: f64 },
    #[error("decomposition does not reproduce the target (relative residual {residual:.3e}, tolerance {tolerance:.1e})")]
    IdentityMismatch { residual: f64, tolerance: f64 },
}

/// Reference to one SDP decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum VarRef {
    /// Scalar variable by index.
    Free(usize),
    /// Upper-triangle entry `(block, i, j)`, `i <= j`, of a PSD block.
    Psd(usize, usize, usize),
}

/// Affine expression `constant + Σ coeff·var` over SDP decision variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expr {
    constant: f64,
    terms: BTreeMap<VarRef, f64>,
}

impl Expr {
    pub fn zero() -> Self {
        Expr::default()
    }

    pub fn constant(c: f64) -> Self {
        Expr {
            constant: c,
            ..Expr::default()
        }
    }

    pub fn var(v: VarRef) -> Self {
        Expr::var_scaled(v, 1.0)
    }

    pub fn var_scaled(v: VarRef, coeff: f64) -> Self {
        let mut e = Expr::zero();
        e.add_var(v, coeff);
        e
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    fn add_var(&mut self, v: VarRef, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let slot = self.terms.entry(v).or_insert(0.0);
        *slot += coeff;
        if *slot == 0.0 {
            self.terms.remove(&v);
        }
    }

    /// `self += k·other`.
    pub fn add_scaled(&mut self, other: &Expr, k: f64) {
        self.constant += k * other.constant;
        for (&v, &c) in &other.terms {
            self.add_var(v, k * c);
        }
    }

    /// Evaluate under an SDP solution.
    fn value(&self, sol: &SdpSolution) -> f64 {
        let mut acc = self.constant;
        for (&v, &c) in &self.terms {
            acc += c * match v {
                VarRef::Free(i) => sol.free_values[i],
                VarRef::Psd(b, i, j) => sol.psd_matrices[b][(i, j)],
            };
        }
        acc
    }

    /// Split into the [`EqRow`] representation (free part, PSD part).
    ///
    /// `EqRow` PSD coefficients are entries of a symmetric data matrix under
    /// the inner product `<A,S> = ΣA_ii·S_ii + 2Σ_{i<j}A_ij·S_ij`, while an
    /// `Expr` coefficient multiplies the raw entry value `S_ij` once — hence
    /// off-diagonal coefficients are halved at this boundary.
    #[allow(clippy::type_complexity)]
    fn to_row_parts(&self) -> (Vec<(usize, f64)>, Vec<(usize, usize, usize, f64)>) {
        let mut free = Vec::new();
        let mut psd = Vec::new();
        for (&v, &c) in &self.terms {
            match v {
                VarRef::Free(i) => free.push((i, c)),
                VarRef::Psd(b, i, j) => {
                    psd.push((b, i, j, if i == j { c } else { 0.5 * c }))
                }
            }
        }
        (free, psd)
    }
}

/// Polynomial with affine-in-decision-variable coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplatePoly {
    ctx: VarContext,
    terms: BTreeMap<Monomial, Expr>,
}

impl TemplatePoly {
    pub fn zero(ctx: VarContext) -> Self {
        TemplatePoly {
            ctx,
            terms: BTreeMap::new(),
        }
    }

    /// Embed a fixed polynomial (constant coefficients).
    pub fn from_poly(p: &F64Poly) -> Self {
        let mut t = TemplatePoly::zero(*p.ctx());
        for (m, &c) in p.iter() {
            t.accumulate(m.clone(), &Expr::constant(c), 1.0);
        }
        t
    }

    /// Single-term template `expr·mono`.
    pub fn term(ctx: VarContext, mono: Monomial, expr: Expr) -> Self {
        let mut t = TemplatePoly::zero(ctx);
        t.accumulate(mono, &expr, 1.0);
        t
    }

    /// Fresh unknown polynomial of the given total degree: one scalar SDP
    /// variable per basis monomial. Returns the template together with a
    /// [`PolyHandle`] for reading the coefficients back off a solution.
    pub fn free(
        problem: &mut SdpProblem,
        ctx: VarContext,
        degree: u32,
        name: &str,
    ) -> (Self, PolyHandle) {
        let mut t = TemplatePoly::zero(ctx);
        let mut coeffs = Vec::new();
        for (k, m) in monomial_basis(&ctx, degree).into_iter().enumerate() {
            let idx = problem.add_free_var(format!("{name}.c{k}"));
            t.accumulate(m.clone(), &Expr::var(VarRef::Free(idx)), 1.0);
            coeffs.push((m, idx));
        }
        (t, PolyHandle { ctx, coeffs })
    }

    pub fn ctx(&self) -> &VarContext {
        &self.ctx
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.total_degree()).max().unwrap_or(0)
    }

    fn accumulate(&mut self, mono: Monomial, expr: &Expr, k: f64) {
        if expr.is_zero() || k == 0.0 {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(mono) {
            Entry::Vacant(v) => {
                let mut e = Expr::zero();
                e.add_scaled(expr, k);
                if !e.is_zero() {
                    v.insert(e);
                }
            }
            Entry::Occupied(mut o) => {
                o.get_mut().add_scaled(expr, k);
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    /// `self + k·other`.
    pub fn add_scaled(&self, other: &TemplatePoly, k: f64) -> TemplatePoly {
        self.ctx.assert_same(&other.ctx);
        let mut out = self.clone();
        for (m, e) in &other.terms {
            out.accumulate(m.clone(), e, k);
        }
        out
    }

    pub fn add(&self, other: &TemplatePoly) -> TemplatePoly {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &TemplatePoly) -> TemplatePoly {
        self.add_scaled(other, -1.0)
    }

    pub fn scale(&self, k: f64) -> TemplatePoly {
        TemplatePoly::zero(self.ctx).add_scaled(self, k)
    }

    /// Multiply by a fixed polynomial.
    pub fn mul_poly(&self, p: &F64Poly) -> TemplatePoly {
        let p = p.with_ctx(self.ctx);
        let mut out = TemplatePoly::zero(self.ctx);
        for (m1, e) in &self.terms {
            for (m2, &c) in p.iter() {
                out.accumulate(m1.mul(m2), e, c);
            }
        }
        out
    }

    /// Partial derivative with respect to variable `var`.
    pub fn differentiate(&self, var: usize) -> TemplatePoly {
        let mut out = TemplatePoly::zero(self.ctx);
        for (m, e) in &self.terms {
            let k = m.degree_in(var);
            if k == 0 {
                continue;
            }
            let lowered = Monomial::from_powers(m.powers().map(|(v, p)| {
                if v == var {
                    (v, p - 1)
                } else {
                    (v, p)
                }
            }));
            out.accumulate(lowered, e, f64::from(k));
        }
        out
    }

    /// Coefficient expression of a monomial (zero if absent).
    pub fn coeff(&self, m: &Monomial) -> Expr {
        self.terms.get(m).cloned().unwrap_or_else(Expr::zero)
    }

    /// Pin every coefficient of `self` to zero by emitting equality rows.
    pub fn assert_zero(&self, problem: &mut SdpProblem) {
        for (_, expr) in &self.terms {
            let (free, psd) = expr.to_row_parts();
            if free.is_empty() && psd.is_empty() && expr.constant == 0.0 {
                continue;
            }
            problem.add_row(EqRow {
                free,
                psd,
                rhs: -expr.constant,
            });
        }
    }

    /// Instantiate the template under a solved SDP.
    pub fn instantiate(&self, sol: &SdpSolution) -> F64Poly {
        F64Poly::from_terms(
            self.ctx,
            self.terms.iter().map(|(m, e)| (m.clone(), e.value(sol))),
        )
    }
}

/// Apply the state part of the SDE generator to a template, coefficient by
/// coefficient (the generator is linear, so it acts monomial-wise):
/// `L m = Σ_i b_i ∂m/∂x_i + ½ Σ_{i,j} (σσᵀ)_{ij} ∂²m/∂x_i∂x_j`.
/// Time, if present in the template's context, is treated as a constant;
/// callers add the `∂/∂t` term explicitly where their setting requires it.
pub fn lift_state_generator(system: &SdeSystem<f64>, tmpl: &TemplatePoly) -> TemplatePoly {
    let ctx = *tmpl.ctx();
    let mut out = TemplatePoly::zero(ctx);
    for (m, e) in &tmpl.terms {
        let p = F64Poly::from_terms(ctx, [(m.clone(), 1.0)]);
        let lp = system.apply_state_generator(&p);
        for (m2, &c) in lp.iter() {
            out.accumulate(m2.clone(), e, c);
        }
    }
    out
}

/// Handle for reading a free polynomial's coefficients off a solution.
#[derive(Clone, Debug)]
pub struct PolyHandle {
    ctx: VarContext,
    coeffs: Vec<(Monomial, usize)>,
}

impl PolyHandle {
    pub fn extract(&self, sol: &SdpSolution) -> F64Poly {
        F64Poly::from_terms(
            self.ctx,
            self.coeffs
                .iter()
                .map(|(m, idx)| (m.clone(), sol.free_values[*idx])),
        )
    }
}

/// Handle to one Gram (SOS) block: PSD block index plus its monomial basis.
#[derive(Clone, Debug)]
pub struct SosHandle {
    pub block: usize,
    pub basis: Vec<Monomial>,
}

/// Allocate an SOS template `zᵀQz` with `z` the monomial basis of total
/// degree `half_degree` (so the polynomial has degree `2·half_degree`).
pub fn sos_template(
    problem: &mut SdpProblem,
    ctx: VarContext,
    half_degree: u32,
) -> (TemplatePoly, SosHandle) {
    let basis = monomial_basis(&ctx, half_degree);
    let block = problem.add_psd_block(basis.len());
    let mut t = TemplatePoly::zero(ctx);
    for i in 0..basis.len() {
        for j in i..basis.len() {
            let mono = basis[i].mul(&basis[j]);
            let w = if i == j { 1.0 } else { 2.0 };
            t.accumulate(mono, &Expr::var_scaled(VarRef::Psd(block, i, j), w), 1.0);
        }
    }
    (t, SosHandle { block, basis })
}

/// Handle to a full nonnegativity encoding: the plain SOS part, one SOS
/// multiplier per inequality, one free multiplier per equality.
#[derive(Clone, Debug)]
pub struct NonnegHandle {
    pub sigma0: SosHandle,
    pub ineq: Vec<(F64Poly, SosHandle)>,
    pub eq: Vec<(F64Poly, PolyHandle)>,
}

impl NonnegHandle {
    /// All Gram blocks of the encoding: `σ₀` first, then one per inequality
    /// multiplier.
    pub fn gram_blocks(&self) -> impl Iterator<Item = &SosHandle> {
        std::iter::once(&self.sigma0).chain(self.ineq.iter().map(|(_, h)| h))
    }
}

/// Encode `target >= 0` on `set` at total degree budget `degree` (raised to
/// the target's degree and rounded up to even internally). Multiplier
/// degrees are chosen so every product `σ_i·g_i` stays within the budget:
/// `deg σ_i = 2·⌊(D − deg g_i)/2⌋` and `deg λ_j = D − deg h_j` (degree 0
/// when the constraint polynomial already exceeds the budget).
pub fn encode_nonneg(
    problem: &mut SdpProblem,
    target: &TemplatePoly,
    set: &SemialgebraicSet<f64>,
    degree: u32,
    label: &str,
) -> NonnegHandle {
    target.ctx().assert_same(set.ctx());
    let ctx = *target.ctx();
    let d = {
        let d = degree.max(target.total_degree());
        d + (d % 2)
    };

    let (sigma0, h0) = sos_template(problem, ctx, d / 2);
    let mut residual = target.sub(&sigma0);

    let mut ineq = Vec::new();
    for g in set.inequalities() {
        let dg = g.total_degree();
        let half = if d >= dg { (d - dg) / 2 } else { 0 };
        let (sig, h) = sos_template(problem, ctx, half);
        residual = residual.sub(&sig.mul_poly(g));
        ineq.push((g.clone(), h));
    }

    let mut eq = Vec::new();
    for (j, h) in set.equalities().iter().enumerate() {
        let dh = h.total_degree();
        let deg_l = d.saturating_sub(dh);
        let (lam, handle) =
            TemplatePoly::free(problem, ctx, deg_l, &format!("{label}.eq{j}"));
        residual = residual.sub(&lam.mul_poly(h));
        eq.push((h.clone(), handle));
    }

    residual.assert_zero(problem);
    NonnegHandle {
        sigma0: h0,
        ineq,
        eq,
    }
}

/// Explicit SOS witness: `σ = zᵀQz`.
#[derive(Clone, Debug)]
pub struct SosWitness {
    pub basis: Vec<Monomial>,
    pub gram: DMatrix<f64>,
}

impl SosWitness {
    pub fn min_eigenvalue(&self) -> f64 {
        self.gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Project the Gram matrix onto the PSD cone by clipping negative
    /// eigenvalues to zero. Solver output carries O(tol) indefiniteness;
    /// projection removes it so the quadratic form is nonnegative pointwise
    /// by construction, at the cost of perturbing the represented polynomial
    /// by the same O(tol) — which the identity check in
    /// [`NonnegWitness::validate`] re-measures afterwards.
    pub fn psd_project(&mut self) {
        let eig = self.gram.clone().symmetric_eigen();
        if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
            return;
        }
        let clipped = nalgebra::DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| l.max(0.0)),
        );
        self.gram = &eig.eigenvectors
            * DMatrix::from_diagonal(&clipped)
            * eig.eigenvectors.transpose();
    }

    /// Compose the quadratic form with a diagonal variable scaling: the
    /// witness for `σ(s∘x)`. Each basis monomial picks up its scale factor,
    /// so the Gram matrix undergoes a diagonal congruence `Q ↦ DQD` — PSD
    /// is preserved exactly, only the conditioning changes.
    pub fn dilate(&mut self, scales: &[f64]) {
        let d: Vec<f64> = self
            .basis
            .iter()
            .map(|m| {
                m.powers()
                    .map(|(v, p)| scales[v].powi(i32::from(p)))
                    .product()
            })
            .collect();
        for i in 0..self.gram.nrows() {
            for j in 0..self.gram.ncols() {
                self.gram[(i, j)] *= d[i] * d[j];
            }
        }
    }

    /// Expand `zᵀQz` back into an explicit polynomial.
    pub fn to_poly(&self, ctx: VarContext) -> F64Poly {
        let mut p = F64Poly::zero(ctx);
        for i in 0..self.basis.len() {
            for j in i..self.basis.len() {
                let w = if i == j { 1.0 } else { 2.0 };
                let c = w * self.gram[(i, j)];
                if c != 0.0 {
                    let mut term = F64Poly::zero(ctx);
                    term.add_term(self.basis[i].mul(&self.basis[j]), c);
                    p = p.add(&term);
                }
            }
        }
        p
    }
}

/// Explicit decomposition witness extracted from a solved SDP.
#[derive(Clone, Debug)]
pub struct NonnegWitness {
    pub ctx: VarContext,
    pub sigma0: SosWitness,
    pub ineq: Vec<(F64Poly, SosWitness)>,
    pub eq: Vec<(F64Poly, F64Poly)>,
}

/// Validation summary of a [`NonnegWitness`].
#[derive(Clone, Copy, Debug)]
pub struct WitnessReport {
    pub min_gram_eigenvalue: f64,
    pub identity_residual: f64,
}

impl NonnegHandle {
    pub fn extract(&self, ctx: VarContext, sol: &SdpSolution) -> NonnegWitness {
        let grab = |h: &SosHandle| SosWitness {
            basis: h.basis.clone(),
            gram: sol.psd_matrices[h.block].clone(),
        };
        NonnegWitness {
            ctx,
            sigma0: grab(&self.sigma0),
            ineq: self
                .ineq
                .iter()
                .map(|(g, h)| (g.clone(), grab(h)))
                .collect(),
            eq: self
                .eq
                .iter()
                .map(|(h, lam)| (h.clone(), lam.extract(sol)))
                .collect(),
        }
    }
}

impl NonnegWitness {
    /// Project every Gram matrix onto the PSD cone (see
    /// [`SosWitness::psd_project`]).
    pub fn psd_project_all(&mut self) {
        self.sigma0.psd_project();
        for (_, s) in &mut self.ineq {
            s.psd_project();
        }
    }

    /// Scale the whole decomposition by `k > 0`: certifies `k·target ≥ 0`
    /// whenever the original certifies `target ≥ 0`.
    pub fn scale(&mut self, k: f64) {
        assert!(k > 0.0, "witness scaling requires a positive factor");
        self.sigma0.gram *= k;
        for (_, s) in &mut self.ineq {
            s.gram *= k;
        }
        for (_, lam) in &mut self.eq {
            *lam = lam.scale(&k);
        }
    }

    /// Compose the whole decomposition with a diagonal variable scaling:
    /// certifies `target(s∘x) ≥ 0` on the correspondingly dilated set
    /// whenever the original certifies `target ≥ 0`. Constraint polynomials
    /// and equality multipliers are dilated; Gram matrices undergo the
    /// exact PSD-preserving congruence of [`SosWitness::dilate`].
    pub fn dilate(&mut self, scales: &[f64]) {
        self.sigma0.dilate(scales);
        for (g, s) in &mut self.ineq {
            *g = g.dilate(scales);
            s.dilate(scales);
        }
        for (h, lam) in &mut self.eq {
            *h = h.dilate(scales);
            *lam = lam.dilate(scales);
        }
    }

    /// Add a nonnegative constant to the decomposition (certifies
    /// `target + c ≥ 0`) by bumping the constant-monomial diagonal entry of
    /// `σ_0`'s Gram matrix.
    pub fn add_constant(&mut self, c: f64) {
        assert!(c >= 0.0, "only nonnegative constants preserve the SOS form");
        let pos = self
            .sigma0
            .basis
            .iter()
            .position(|m| m.is_one())
            .expect("σ_0 basis always contains the constant monomial");
        self.sigma0.gram[(pos, pos)] += c;
    }

    /// Re-expand `σ_0 + Σ σ_i·g_i + Σ λ_j·h_j`.
    pub fn reconstruct(&self) -> F64Poly {
        let mut p = self.sigma0.to_poly(self.ctx);
        for (g, sig) in &self.ineq {
            p = p.add(&sig.to_poly(self.ctx).mul(&g.with_ctx(self.ctx)));
        }
        for (h, lam) in &self.eq {
            p = p.add(&lam.with_ctx(self.ctx).mul(&h.with_ctx(self.ctx)));
        }
        p
    }

    /// Check the witness independently of the solver: every Gram matrix PSD
    /// to [`GRAM_PSD_TOL`] (relative to its magnitude) and the re-expanded
    /// decomposition within [`IDENTITY_TOL`] of `target` coefficient-wise
    /// (relative to the coefficient scale).
    pub fn validate(&self, target: &F64Poly) -> Result<WitnessReport, WitnessError> {
        let mut min_eig = f64::INFINITY;
        let grams =
            std::iter::once(&self.sigma0).chain(self.ineq.iter().map(|(_, s)| s));
        for (index, s) in grams.enumerate() {
            let scale = 1.0 + s.gram.amax();
            let eig = s.min_eigenvalue();
            min_eig = min_eig.min(eig / scale);
            if eig < -GRAM_PSD_TOL * scale {
                return Err(WitnessError::GramNotPsd {
                    index,
                    min_eigenvalue: eig,
                });
            }
        }
        let rebuilt = self.reconstruct();
        let diff = rebuilt.sub(&target.with_ctx(self.ctx));
        let scale = 1.0 + target.max_abs_coeff().max(rebuilt.max_abs_coeff());
        let residual = diff.max_abs_coeff() / scale;
        if residual > IDENTITY_TOL {
            return Err(WitnessError::IdentityMismatch {
                residual,
                tolerance: IDENTITY_TOL,
            });
        }
        Ok(WitnessReport {
            min_gram_eigenvalue: min_eig,
            identity_residual: residual,
        })
    }
}
