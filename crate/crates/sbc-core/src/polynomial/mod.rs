//! Multivariate polynomials over exact rational or double coefficients.
//!
//! Polynomials are kept in a canonical sparse form: a sorted map from
//! monomials (graded-lexicographic order) to nonzero coefficients. All
//! arithmetic preserves that form, so structural equality is semantic
//! equality and iteration order is deterministic.
//!
//! Two coefficient rings are supported through the [`Coeff`] trait:
//! [`BigRational`] for exact construction and coefficient-exact tests, and
//! `f64` for everything that feeds the numerical pipeline. Conversion is one
//! way (rational to double) via [`Polynomial::map_coeffs`] / [`to_f64`].
//!
//! Variables are `x1..xn` plus an optional trailing time variable `t`,
//! managed by [`VarContext`]. Mixing polynomials from different contexts is
//! a programming error and panics, mirroring how dimension mismatches are
//! treated by dense linear-algebra crates.
//!
//! [`to_f64`]: Polynomial::to_f64

pub mod parse;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Coefficient ring used by [`Polynomial`].
///
/// Implemented for `f64` (numerical pipeline) and [`BigRational`] (exact
/// construction and tests).
pub trait Coeff: Clone + PartialEq + fmt::Debug + fmt::Display + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn is_negative(&self) -> bool;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn neg(&self) -> Self;
    fn from_integer(v: i64) -> Self;
    /// Parse a decimal literal (`12`, `0.5`, `1.2e-3`). Exact for rationals:
    /// `0.1` becomes 1/10, not the nearest double.
    fn from_decimal_str(s: &str) -> Option<Self>;
    fn to_f64(&self) -> f64;
}

impl Coeff for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn is_negative(&self) -> bool {
        *self < 0.0
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn neg(&self) -> Self {
        -self
    }
    fn from_integer(v: i64) -> Self {
        v as f64
    }
    fn from_decimal_str(s: &str) -> Option<Self> {
        s.parse::<f64>().ok().filter(|v| v.is_finite())
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Coeff for BigRational {
    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }
    fn one() -> Self {
        <BigRational as One>::one()
    }
    fn is_zero(&self) -> bool {
        <BigRational as Zero>::is_zero(self)
    }
    fn is_negative(&self) -> bool {
        <BigRational as Signed>::is_negative(self)
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn neg(&self) -> Self {
        -self
    }
    fn from_integer(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn from_decimal_str(s: &str) -> Option<Self> {
        parse::decimal_to_rational(s)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// The ordered variable set a polynomial lives over: state variables
/// `x1..xn` plus optionally the time variable `t` (always last).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct VarContext {
    n_state: usize,
    has_time: bool,
}

impl VarContext {
    /// Context over state variables `x1..xn` only.
    pub fn state(n_state: usize) -> Self {
        VarContext {
            n_state,
            has_time: false,
        }
    }

    /// Context over `x1..xn` and the time variable `t`.
    pub fn with_time(n_state: usize) -> Self {
        VarContext {
            n_state,
            has_time: true,
        }
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn has_time(&self) -> bool {
        self.has_time
    }

    /// Total number of variables (state plus time if present).
    pub fn num_vars(&self) -> usize {
        self.n_state + usize::from(self.has_time)
    }

    /// Index of `t`, if this context has a time variable.
    pub fn time_index(&self) -> Option<usize> {
        self.has_time.then_some(self.n_state)
    }

    /// Name of variable `idx` (`x1`..`xn`, then `t`).
    ///
    /// # Panics
    /// If `idx` is out of range.
    pub fn var_name(&self, idx: usize) -> String {
        if idx < self.n_state {
            format!("x{}", idx + 1)
        } else if Some(idx) == self.time_index() {
            "t".to_string()
        } else {
            panic!("variable index {idx} out of range for {self:?}");
        }
    }

    /// Resolve a variable name to its index.
    pub fn lookup(&self, name: &str) -> Option<usize> {
        if name == "t" {
            return self.time_index();
        }
        let num = name.strip_prefix('x')?;
        if num.is_empty() || !num.bytes().all(|b| b.is_ascii_digit()) || num.starts_with('0') {
            return None;
        }
        let k: usize = num.parse().ok()?;
        (k >= 1 && k <= self.n_state).then(|| k - 1)
    }

    /// The same context without the time variable.
    pub fn drop_time(&self) -> VarContext {
        VarContext::state(self.n_state)
    }

    /// Panic unless `other` is the identical context; combining values over
    /// different variable sets is always a programming error.
    pub fn assert_same(&self, other: &VarContext) {
        assert_eq!(
            self, other,
            "variable context mismatch: cannot combine polynomials over different variable sets"
        );
    }
}

/// A power product of variables, e.g. `x1^2*x2`. Stored sparsely as
/// `(variable index, power)` pairs sorted by variable, with no zero powers.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct Monomial {
    powers: Vec<(u16, u16)>,
}

impl Monomial {
    /// The empty product (the constant monomial 1).
    pub fn one() -> Self {
        Monomial { powers: Vec::new() }
    }

    /// The single variable `x_idx`.
    pub fn var(idx: usize) -> Self {
        Monomial::var_pow(idx, 1)
    }

    /// `x_idx^pow`.
    pub fn var_pow(idx: usize, pow: u16) -> Self {
        if pow == 0 {
            return Monomial::one();
        }
        Monomial {
            powers: vec![(idx as u16, pow)],
        }
    }

    /// Build from `(variable, power)` pairs; merges duplicates, drops zeros.
    pub fn from_powers(pairs: impl IntoIterator<Item = (usize, u16)>) -> Self {
        let mut map: BTreeMap<u16, u32> = BTreeMap::new();
        for (v, p) in pairs {
            if p > 0 {
                *map.entry(v as u16).or_insert(0) += u32::from(p);
            }
        }
        Monomial {
            powers: map
                .into_iter()
                .map(|(v, p)| (v, u16::try_from(p).expect("monomial power overflow")))
                .collect(),
        }
    }

    pub fn is_one(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn total_degree(&self) -> u32 {
        self.powers.iter().map(|&(_, p)| u32::from(p)).sum()
    }

    pub fn degree_in(&self, var: usize) -> u32 {
        self.powers
            .iter()
            .find(|&&(v, _)| usize::from(v) == var)
            .map_or(0, |&(_, p)| u32::from(p))
    }

    /// Iterate `(variable index, power)` pairs in ascending variable order.
    pub fn powers(&self) -> impl Iterator<Item = (usize, u16)> + '_ {
        self.powers.iter().map(|&(v, p)| (usize::from(v), p))
    }

    /// Product of two monomials (exponents add).
    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.powers.len() + other.powers.len());
        let (mut i, mut j) = (0, 0);
        while i < self.powers.len() && j < other.powers.len() {
            let (va, pa) = self.powers[i];
            let (vb, pb) = other.powers[j];
            match va.cmp(&vb) {
                std::cmp::Ordering::Less => {
                    out.push((va, pa));
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push((vb, pb));
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((va, pa.checked_add(pb).expect("monomial power overflow")));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.powers[i..]);
        out.extend_from_slice(&other.powers[j..]);
        Monomial { powers: out }
    }

    /// Evaluate at a point.
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        self.powers
            .iter()
            .map(|&(v, p)| point[usize::from(v)].powi(i32::from(p)))
            .product()
    }

    fn max_var(&self) -> Option<usize> {
        self.powers.last().map(|&(v, _)| usize::from(v))
    }
}

/// Graded lexicographic order: compare total degree first, then exponents
/// variable by variable (`x1` most significant, higher power is greater).
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| {
                let (mut i, mut j) = (0, 0);
                loop {
                    match (self.powers.get(i), other.powers.get(j)) {
                        (None, None) => return std::cmp::Ordering::Equal,
                        // Remaining powers on one side only: that side has a
                        // positive power on a later variable, so it is smaller
                        // on the earlier (more significant) ones.
                        (Some(_), None) => return std::cmp::Ordering::Less,
                        (None, Some(_)) => return std::cmp::Ordering::Greater,
                        (Some(&(va, pa)), Some(&(vb, pb))) => match va.cmp(&vb) {
                            // Earlier variable present on one side only: that
                            // side is greater on the most significant
                            // differing variable.
                            std::cmp::Ordering::Less => return std::cmp::Ordering::Greater,
                            std::cmp::Ordering::Greater => return std::cmp::Ordering::Less,
                            std::cmp::Ordering::Equal => {
                                if pa != pb {
                                    return pa.cmp(&pb);
                                }
                                i += 1;
                                j += 1;
                            }
                        },
                    }
                }
            })
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials over `ctx`'s variables of total degree `<= degree`,
/// sorted ascending in graded-lex order. The count is
/// `C(num_vars + degree, degree)`.
pub fn monomial_basis(ctx: &VarContext, degree: u32) -> Vec<Monomial> {
    let n = ctx.num_vars();
    let mut out = Vec::new();
    let mut exps = vec![0u16; n];
    fn rec(exps: &mut Vec<u16>, var: usize, remaining: u32, out: &mut Vec<Monomial>) {
        if var == exps.len() {
            out.push(Monomial::from_powers(
                exps.iter().enumerate().map(|(v, &p)| (v, p)),
            ));
            return;
        }
        for p in 0..=remaining {
            exps[var] = p as u16;
            rec(exps, var + 1, remaining - p, out);
        }
        exps[var] = 0;
    }
    rec(&mut exps, 0, degree, &mut out);
    out.sort();
    out
}

/// Sparse multivariate polynomial in canonical form.
#[derive(Clone, PartialEq, Debug)]
pub struct Polynomial<C: Coeff> {
    ctx: VarContext,
    terms: BTreeMap<Monomial, C>,
}

impl<C: Coeff> Polynomial<C> {
    pub fn zero(ctx: VarContext) -> Self {
        Polynomial {
            ctx,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(ctx: VarContext, c: C) -> Self {
        let mut p = Polynomial::zero(ctx);
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn one(ctx: VarContext) -> Self {
        Polynomial::constant(ctx, C::one())
    }

    /// The variable `x_idx` as a polynomial.
    ///
    /// # Panics
    /// If `idx` is out of range for the context.
    pub fn var(ctx: VarContext, idx: usize) -> Self {
        assert!(idx < ctx.num_vars(), "variable index out of range");
        let mut p = Polynomial::zero(ctx);
        p.add_term(Monomial::var(idx), C::one());
        p
    }

    /// Build from `(monomial, coefficient)` pairs; merges and normalizes.
    ///
    /// # Panics
    /// If a monomial mentions a variable outside the context.
    pub fn from_terms(ctx: VarContext, terms: impl IntoIterator<Item = (Monomial, C)>) -> Self {
        let mut p = Polynomial::zero(ctx);
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn ctx(&self) -> &VarContext {
        &self.ctx
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; 0 for the zero polynomial.
    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(Monomial::total_degree)
            .max()
            .unwrap_or(0)
    }

    pub fn degree_in(&self, var: usize) -> u32 {
        self.terms
            .keys()
            .map(|m| m.degree_in(var))
            .max()
            .unwrap_or(0)
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Coefficient of `mono` (zero if absent).
    pub fn coeff(&self, mono: &Monomial) -> C {
        self.terms.get(mono).cloned().unwrap_or_else(C::zero)
    }

    /// Iterate `(monomial, coefficient)` in ascending graded-lex order.
    pub fn iter(&self) -> impl Iterator<Item = (&Monomial, &C)> {
        self.terms.iter()
    }

    /// Add `c * mono` in place, keeping canonical form.
    ///
    /// # Panics
    /// If the monomial mentions a variable outside the context.
    pub fn add_term(&mut self, mono: Monomial, c: C) {
        if let Some(maxv) = mono.max_var() {
            assert!(
                maxv < self.ctx.num_vars(),
                "monomial variable index {maxv} out of range for context with {} variables",
                self.ctx.num_vars()
            );
        }
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(mono) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                let sum = e.get().add(&c);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.ctx.assert_same(&other.ctx);
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        Polynomial {
            ctx: self.ctx,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), c.neg()))
                .collect(),
        }
    }

    pub fn scale(&self, k: &C) -> Self {
        if k.is_zero() {
            return Polynomial::zero(self.ctx);
        }
        Polynomial {
            ctx: self.ctx,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), c.mul(k)))
                .collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.ctx.assert_same(&other.ctx);
        let mut out = Polynomial::zero(self.ctx);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca.mul(cb));
            }
        }
        out
    }

    /// `self^k` by repeated multiplication.
    pub fn pow(&self, k: u32) -> Self {
        let mut out = Polynomial::one(self.ctx);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// Partial derivative with respect to variable `var`.
    pub fn differentiate(&self, var: usize) -> Self {
        assert!(var < self.ctx.num_vars(), "variable index out of range");
        let mut out = Polynomial::zero(self.ctx);
        for (m, c) in &self.terms {
            let p = m.degree_in(var);
            if p == 0 {
                continue;
            }
            let dm = Monomial::from_powers(m.powers().map(|(v, q)| {
                if v == var {
                    (v, q - 1)
                } else {
                    (v, q)
                }
            }));
            out.add_term(dm, c.mul(&C::from_integer(i64::from(p))));
        }
        out
    }

    /// Evaluate at `point` (length = number of context variables), summing
    /// terms in canonical order with coefficients converted to `f64`.
    ///
    /// # Panics
    /// If `point.len()` differs from the number of variables.
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        assert_eq!(
            point.len(),
            self.ctx.num_vars(),
            "evaluation point dimension mismatch"
        );
        self.terms
            .iter()
            .map(|(m, c)| c.to_f64() * m.evaluate(point))
            .sum()
    }

    /// Replace variable `var` by an arbitrary polynomial.
    pub fn substitute(&self, var: usize, replacement: &Polynomial<C>) -> Self {
        self.ctx.assert_same(&replacement.ctx);
        let mut out = Polynomial::zero(self.ctx);
        for (m, c) in &self.terms {
            let mut term = Polynomial::constant(self.ctx, c.clone());
            let mut rest = Monomial::one();
            let mut sub_pow = 0u32;
            for (v, p) in m.powers() {
                if v == var {
                    sub_pow = u32::from(p);
                } else {
                    rest = rest.mul(&Monomial::var_pow(v, p));
                }
            }
            if sub_pow > 0 {
                term = term.mul(&replacement.pow(sub_pow));
            }
            for (mm, cc) in term.terms {
                out.add_term(mm.mul(&rest), cc);
            }
        }
        out
    }

    /// Convert coefficients into another ring.
    pub fn map_coeffs<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Polynomial<D> {
        Polynomial::from_terms(
            self.ctx,
            self.terms.iter().map(|(m, c)| (m.clone(), f(c))),
        )
    }

    /// Double-precision view of this polynomial.
    pub fn to_f64(&self) -> Polynomial<f64> {
        self.map_coeffs(Coeff::to_f64)
    }

    /// Largest absolute coefficient value (0 for the zero polynomial).
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms
            .values()
            .map(|c| c.to_f64().abs())
            .fold(0.0, f64::max)
    }

    /// Reinterpret over a wider context (same leading variables).
    ///
    /// # Panics
    /// If the new context does not contain all variables in use.
    pub fn with_ctx(&self, ctx: VarContext) -> Polynomial<C> {
        let used = self
            .terms
            .keys()
            .filter_map(Monomial::max_var)
            .max()
            .map_or(0, |v| v + 1);
        assert!(
            used <= ctx.num_vars(),
            "polynomial uses {used} variables but target context has {}",
            ctx.num_vars()
        );
        // Time must stay the last variable: forbid reinterpreting a
        // time-dependent polynomial into a context with a different time slot.
        if self.ctx.has_time() {
            let t = self.ctx.time_index().unwrap();
            assert!(
                self.terms.keys().all(|m| m.degree_in(t) == 0) || Some(t) == ctx.time_index(),
                "cannot move the time variable to a different slot"
            );
        }
        Polynomial {
            ctx,
            terms: self.terms.clone(),
        }
    }
}

impl Polynomial<f64> {
    /// Compose with a diagonal variable scaling: returns
    /// `x ↦ p(s_0·x_0, …, s_{k−1}·x_{k−1})`, one scale per context
    /// variable. Composing with the entrywise reciprocals inverts the map.
    /// This is how problems are renormalized onto a unit window before an
    /// SDP solve (and solutions mapped back): a linear substitution, so
    /// degrees and semialgebraic structure are preserved exactly.
    pub fn dilate(&self, scales: &[f64]) -> Self {
        assert_eq!(
            scales.len(),
            self.ctx.num_vars(),
            "one scale per context variable"
        );
        Polynomial::from_terms(
            self.ctx,
            self.terms.iter().map(|(m, c)| {
                let factor: f64 = m
                    .powers()
                    .map(|(v, p)| scales[v].powi(i32::from(p)))
                    .product();
                (m.clone(), c * factor)
            }),
        )
    }
}

impl<C: Coeff> fmt::Display for Polynomial<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        // Descending graded-lex: leading term first.
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let abs = if neg { c.neg() } else { c.clone() };
            if i == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let coeff_is_one = abs == C::one();
            if !coeff_is_one || m.is_one() {
                write!(f, "{abs}")?;
            }
            let mut first_var = true;
            for (v, p) in m.powers() {
                if !first_var || !coeff_is_one || m.is_one() {
                    write!(f, "*")?;
                }
                first_var = false;
                write!(f, "{}", self.ctx.var_name(v))?;
                if p > 1 {
                    write!(f, "^{p}")?;
                }
            }
        }
        Ok(())
    }
}

/// A column vector of polynomials sharing one context.
#[derive(Clone, PartialEq, Debug)]
pub struct PolyVector<C: Coeff> {
    entries: Vec<Polynomial<C>>,
}

impl<C: Coeff> PolyVector<C> {
    /// # Panics
    /// If `entries` is empty or contexts differ.
    pub fn new(entries: Vec<Polynomial<C>>) -> Self {
        assert!(!entries.is_empty(), "polynomial vector cannot be empty");
        for e in &entries[1..] {
            entries[0].ctx.assert_same(&e.ctx);
        }
        PolyVector { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ctx(&self) -> &VarContext {
        self.entries[0].ctx()
    }

    pub fn entry(&self, i: usize) -> &Polynomial<C> {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[Polynomial<C>] {
        &self.entries
    }

    pub fn evaluate(&self, point: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|p| p.evaluate(point)).collect()
    }

    pub fn map(&self, f: impl Fn(&Polynomial<C>) -> Polynomial<C>) -> Self {
        PolyVector {
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn to_f64(&self) -> PolyVector<f64> {
        PolyVector {
            entries: self.entries.iter().map(Polynomial::to_f64).collect(),
        }
    }
}

/// A dense row-major matrix of polynomials sharing one context.
#[derive(Clone, PartialEq, Debug)]
pub struct PolyMatrix<C: Coeff> {
    nrows: usize,
    ncols: usize,
    entries: Vec<Polynomial<C>>,
}

impl<C: Coeff> PolyMatrix<C> {
    /// # Panics
    /// If `entries.len() != nrows * ncols`, the matrix is empty, or
    /// contexts differ.
    pub fn new(nrows: usize, ncols: usize, entries: Vec<Polynomial<C>>) -> Self {
        assert_eq!(entries.len(), nrows * ncols, "matrix shape mismatch");
        assert!(!entries.is_empty(), "polynomial matrix cannot be empty");
        for e in &entries[1..] {
            entries[0].ctx.assert_same(&e.ctx);
        }
        PolyMatrix {
            nrows,
            ncols,
            entries,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn ctx(&self) -> &VarContext {
        self.entries[0].ctx()
    }

    pub fn at(&self, i: usize, j: usize) -> &Polynomial<C> {
        assert!(i < self.nrows && j < self.ncols, "matrix index out of range");
        &self.entries[i * self.ncols + j]
    }

    /// `self * self^T` — used for the diffusion outer product.
    pub fn mul_transpose(&self) -> PolyMatrix<C> {
        let ctx = *self.ctx();
        let mut out = Vec::with_capacity(self.nrows * self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.nrows {
                let mut acc = Polynomial::zero(ctx);
                for k in 0..self.ncols {
                    acc = acc.add(&self.at(i, k).mul(self.at(j, k)));
                }
                out.push(acc);
            }
        }
        PolyMatrix::new(self.nrows, self.nrows, out)
    }

    pub fn to_f64(&self) -> PolyMatrix<f64> {
        PolyMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            entries: self.entries.iter().map(Polynomial::to_f64).collect(),
        }
    }
}

/// Exact rational polynomial alias.
pub type RatPoly = Polynomial<BigRational>;
/// Double-precision polynomial alias.
pub type F64Poly = Polynomial<f64>;

#[cfg(test)]
mod tests {
    use super::*;

    fn rp(src: &str, ctx: &VarContext) -> RatPoly {
        parse::parse_polynomial(src, ctx).unwrap()
    }

    #[test]
    fn difference_of_squares() {
        let ctx = VarContext::state(1);
        let a = rp("x1 + 1", &ctx);
        let b = rp("x1 - 1", &ctx);
        assert_eq!(a.mul(&b), rp("x1^2 - 1", &ctx));
    }

    #[test]
    fn add_zero_is_identity() {
        let ctx = VarContext::state(2);
        let p = rp("3*x1^2*x2 - 0.5*x2 + 7", &ctx);
        assert_eq!(p.add(&Polynomial::zero(ctx)), p);
    }

    #[test]
    fn power_rule() {
        let ctx = VarContext::state(1);
        let p = rp("x1^4", &ctx);
        assert_eq!(p.differentiate(0), rp("4*x1^3", &ctx));
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let ctx = VarContext::state(2);
        let p = rp("5", &ctx);
        assert!(p.differentiate(1).is_zero());
    }

    #[test]
    fn evaluate_quadratic_coefficient() {
        // 0.125023372121222 * 2^2, decimal arithmetic done by hand.
        let ctx = VarContext::state(1);
        let p: F64Poly = parse::parse_polynomial("0.125023372121222*x1^2", &ctx).unwrap();
        let v = p.evaluate(&[2.0]);
        assert!((v - 0.500093488484888).abs() < 1e-15, "{v}");
    }

    #[test]
    fn basis_univariate_degree_two() {
        let ctx = VarContext::state(1);
        let basis = monomial_basis(&ctx, 2);
        assert_eq!(
            basis,
            vec![
                Monomial::one(),
                Monomial::var(0),
                Monomial::var_pow(0, 2)
            ]
        );
    }

    #[test]
    fn basis_two_vars_degree_one() {
        let ctx = VarContext::state(2);
        let basis = monomial_basis(&ctx, 1);
        assert_eq!(
            basis,
            vec![Monomial::one(), Monomial::var(1), Monomial::var(0)],
            "degree ties order lexicographically with x1 most significant"
        );
        assert_eq!(basis.len(), 3);
    }

    #[test]
    fn basis_count_matches_binomial() {
        // C(2 + 4, 4) = 15
        let ctx = VarContext::state(2);
        assert_eq!(monomial_basis(&ctx, 4).len(), 15);
    }

    #[test]
    fn graded_lex_order() {
        // 1 < x2 < x1 < x2^2 < x1*x2 < x1^2
        let one = Monomial::one();
        let x1 = Monomial::var(0);
        let x2 = Monomial::var(1);
        let x1x2 = x1.mul(&x2);
        let x1sq = x1.mul(&x1);
        let x2sq = x2.mul(&x2);
        let mut v = vec![
            x1sq.clone(),
            one.clone(),
            x1x2.clone(),
            x2.clone(),
            x2sq.clone(),
            x1.clone(),
        ];
        v.sort();
        assert_eq!(v, vec![one, x2, x1, x2sq, x1x2, x1sq]);
    }

    #[test]
    fn substitute_time_scaling() {
        // H(t) = t^2 with t -> t/2 gives t^2/4.
        let ctx = VarContext::with_time(1);
        let p = rp("t^2", &ctx);
        let half_t = rp("0.5*t", &ctx);
        let q = p.substitute(ctx.time_index().unwrap(), &half_t);
        assert_eq!(q, rp("0.25*t^2", &ctx));
    }

    #[test]
    fn display_round_trip() {
        let ctx = VarContext::state(2);
        let p: F64Poly =
            parse::parse_polynomial("-0.5*x1^3 + x2 - 1", &ctx).unwrap();
        let shown = p.to_string();
        let back: F64Poly = parse::parse_polynomial(&shown, &ctx).unwrap();
        assert_eq!(p, back, "display output parses back: {shown}");
    }

    #[test]
    #[should_panic(expected = "variable context mismatch")]
    fn context_mismatch_panics() {
        let a: RatPoly = Polynomial::one(VarContext::state(1));
        let b: RatPoly = Polynomial::one(VarContext::state(2));
        let _ = a.add(&b);
    }
}
