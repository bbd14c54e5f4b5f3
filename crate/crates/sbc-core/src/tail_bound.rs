//! Tail-probability bounds from exponential certificates.
//!
//! Given a synthesized certificate `(V, Λ, α, l)`, the supermartingale
//! property of `exp(Λt)·V(X_t)` yields a bound on ever reaching the unsafe
//! set after time `T`:
//!
//! - scalar case (`m = 1`):  `P ≤ α·e^{−ΛT}/l`, valid for every `T ≥ 0`;
//! - vector case: for any essentially non-negative `M` whose spectrum and
//!   the spectrum of `Λ − M` lie in the open right half-plane,
//!   `P ≤ min_i α/(exp(MT)·l)_i` for every `T ≥ T*`, where `T*` is the
//!   smallest time with `sup_{t≥0} exp(−Λt)·(exp(−(Λ−M)T*)·l) ≤ l`
//!   componentwise. `M = Λ/2` always qualifies and is the default.
//!
//! The cutoff `T̃ = find_T_tilde(model, ε)` is the smallest `T ≥ T*` whose
//! tail bound drops below `ε`; combining it with a finite-horizon bound on
//! `[0, T̃]` gives an unbounded-horizon safety bound.
//!
//! Matrix exponentials are computed numerically (scaling-and-squaring with
//! a degree-13 Padé approximant), and the supremum `sup_{t≥0} exp(−Λt)v`
//! is bounded on a log-spaced grid inflated by a local Lipschitz slack,
//! with a submultiplicative decay bound past the grid end — robust for
//! defective matrices, at the price of a slightly conservative `T*`.

use crate::exp_certificate::{validate_lambda, CertError, ExpCertificate, SPECTRUM_TOL};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Grid resolution for the `T*` and `T̃` searches, refined by bisection.
pub const SEARCH_GRID_STEP: f64 = 0.05;

/// Bisection stops once the bracket is narrower than this.
pub const BISECT_TOL: f64 = 1e-4;

/// Default upper limit of the `T*` grid search; exceeding it indicates an
/// invalid `M` rather than a genuinely huge `T*`.
pub const DEFAULT_T_STAR_MAX: f64 = 50.0;

/// Log-spaced grid size for the envelope supremum. 4000 points keep the
/// Lipschitz inflation below ~1e-4 relative for the rate matrices at hand.
const SUP_GRID_POINTS: usize = 4000;

/// Padé-13 scaling threshold (‖A‖₁ after scaling stays below this).
const PADE_THETA_13: f64 = 5.371920351148152;

#[derive(Debug, Error)]
pub enum TailError {
    #[error("M must be {expected}x{expected} to match Λ, got {rows}x{cols}")]
    MDimension {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("M is not a valid rate matrix: {0}")]
    InvalidM(#[source] CertError),
    #[error("Λ − M has an eigenvalue with non-positive real part ({real_part})")]
    LambdaMinusMSpectrum { real_part: f64 },
    #[error("matrix exponential out of range (‖At‖₁ = {norm:.3e})")]
    ExpRange { norm: f64 },
    #[error("no T* below {t_max} satisfies the envelope condition; M is likely invalid")]
    NoTStarWithinRange { t_max: f64 },
    #[error("tail bound requested at T = {t} below T* = {t_star}")]
    TBelowTStar { t: f64, t_star: f64 },
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
}

/// Closed form the model evaluates, for reporting.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundForm {
    /// `α·e^{−ΛT}/l` with scalar `Λ` and `l`.
    Scalar { lambda: f64 },
    /// `min_i α/(exp(MT)·l)_i`, valid for `T ≥ T*`.
    Vector,
}

/// An exponential certificate packaged with the data needed to evaluate
/// its tail bound: the matrix `M` (vector case) and the threshold `T*`
/// below which the vector bound is not valid.
#[derive(Clone, Debug)]
pub struct TailBoundModel {
    pub cert: ExpCertificate,
    /// `None` in the scalar case, where no `M` is involved.
    pub m_matrix: Option<DMatrix<f64>>,
    pub t_star: f64,
    pub form: BoundForm,
}

impl TailBoundModel {
    /// Package `cert` with `M` (default `Λ/2`) and compute `T*`.
    /// A provided `m_override` is ignored in the scalar case.
    pub fn new(
        cert: ExpCertificate,
        m_override: Option<DMatrix<f64>>,
    ) -> Result<TailBoundModel, TailError> {
        if cert.lambda.m() == 1 {
            let lambda = cert.lambda.matrix()[(0, 0)];
            return Ok(TailBoundModel {
                cert,
                m_matrix: None,
                t_star: 0.0,
                form: BoundForm::Scalar { lambda },
            });
        }
        let m = m_override.unwrap_or_else(|| cert.lambda.matrix() * 0.5);
        validate_m(&cert, &m)?;
        let t_star = find_T_star(&cert, &m, DEFAULT_T_STAR_MAX)?;
        Ok(TailBoundModel {
            cert,
            m_matrix: Some(m),
            t_star,
            form: BoundForm::Vector,
        })
    }

    /// Human-readable form of the bound for reports.
    pub fn describe(&self) -> String {
        match self.form {
            BoundForm::Scalar { lambda } => format!(
                "{:.6}·exp(−{:.6}·T)/{:.6}",
                self.cert.alpha, lambda, self.cert.level[0]
            ),
            BoundForm::Vector => format!(
                "min_i {:.6}/(exp(M·T)·l)_i for T ≥ T* = {:.4}",
                self.cert.alpha, self.t_star
            ),
        }
    }
}

/// Check that `M` qualifies for the vector tail bound: essentially
/// non-negative with spectrum in the open right half-plane, and `Λ − M`
/// likewise in the open right half-plane.
pub fn validate_m(cert: &ExpCertificate, m: &DMatrix<f64>) -> Result<(), TailError> {
    let dim = cert.lambda.m();
    if m.nrows() != dim || m.ncols() != dim {
        return Err(TailError::MDimension {
            expected: dim,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    validate_lambda(m.clone()).map_err(TailError::InvalidM)?;
    let diff = cert.lambda.matrix() - m;
    let worst = diff
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::INFINITY, f64::min);
    if worst <= SPECTRUM_TOL {
        return Err(TailError::LambdaMinusMSpectrum { real_part: worst });
    }
    Ok(())
}

/// Max absolute column sum.
fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum())
        .fold(0.0, f64::max)
}

/// Max absolute row sum — compatible with componentwise vector bounds.
fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum())
        .fold(0.0, f64::max)
}

fn inf_norm_vec(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// `exp(A·t)` by scaling-and-squaring with the `[13/13]` Padé approximant.
/// Relative error is far below 1e-12 for `‖At‖₁ ≤ 10³` whenever the result
/// is representable; a result outside f64 range is an `ExpRange` error.
pub fn matrix_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>, TailError> {
    assert_eq!(a.nrows(), a.ncols(), "matrix_exp needs a square matrix");
    let n = a.nrows();
    let b = a * t;
    let norm = one_norm(&b);
    if !norm.is_finite() || norm > 1e15 {
        return Err(TailError::ExpRange { norm });
    }
    let squarings = if norm > PADE_THETA_13 {
        (norm / PADE_THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let bs = &b / 2f64.powi(squarings as i32);

    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let id = DMatrix::<f64>::identity(n, n);
    let b2 = &bs * &bs;
    let b4 = &b2 * &b2;
    let b6 = &b2 * &b4;
    let u_inner = &b6 * (&b6 * B[13] + &b4 * B[11] + &b2 * B[9])
        + &b6 * B[7]
        + &b4 * B[5]
        + &b2 * B[3]
        + &id * B[1];
    let u = &bs * u_inner;
    let v = &b6 * (&b6 * B[12] + &b4 * B[10] + &b2 * B[8])
        + &b6 * B[6]
        + &b4 * B[4]
        + &b2 * B[2]
        + &id * B[0];
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut e = lhs
        .lu()
        .solve(&rhs)
        .ok_or(TailError::ExpRange { norm })?;
    for _ in 0..squarings {
        e = &e * &e;
    }
    if e.iter().all(|x| x.is_finite()) {
        Ok(e)
    } else {
        Err(TailError::ExpRange { norm })
    }
}

/// Componentwise upper bound on `sup_{t ≥ 0} exp(−Λt)·v`.
///
/// The supremum is bounded on a log-spaced grid over `[0, T_max]` with
/// `T_max = 50/spectral-abscissa(Λ)`: on each interval the value is bounded
/// by the endpoint average plus a Lipschitz slack from `‖f'‖ ≤ ‖Λ‖·‖f‖` and
/// Grönwall's inequality, and times past `T_max` are covered by
/// submultiplicativity through the (tiny) factor `‖exp(−Λ·T_max)‖`.
pub fn sup_envelope(lambda: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = lambda.nrows();
    assert_eq!(v.len(), n, "vector length must match Λ");
    let abscissa = lambda
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::INFINITY, f64::min);
    assert!(
        abscissa > 0.0,
        "sup_envelope requires a validated Λ (spectral abscissa {abscissa})"
    );

    let neg = -lambda;
    let mut t_max = 50.0 / abscissa;
    let mut end = matrix_exp(&neg, t_max).expect("exp(−Λt) underflows, never overflows");
    for _ in 0..8 {
        if inf_norm(&end) < 0.5 {
            break;
        }
        t_max *= 2.0;
        end = matrix_exp(&neg, t_max).expect("exp(−Λt) underflows, never overflows");
    }

    let lambda_norm = inf_norm(lambda);
    let mut ts = Vec::with_capacity(SUP_GRID_POINTS + 1);
    ts.push(0.0);
    let lo = (t_max * 1e-6).ln();
    let hi = t_max.ln();
    for j in 0..SUP_GRID_POINTS {
        ts.push((lo + (hi - lo) * j as f64 / (SUP_GRID_POINTS - 1) as f64).exp());
    }

    let mut values: Vec<DVector<f64>> = Vec::with_capacity(ts.len());
    let mut norms: Vec<f64> = Vec::with_capacity(ts.len());
    for &t in &ts {
        let e = matrix_exp(&neg, t).expect("exp(−Λt) underflows, never overflows");
        norms.push(inf_norm(&e));
        values.push(&e * v);
    }

    let mut env = DVector::from_element(n, f64::NEG_INFINITY);
    let mut norm_sup: f64 = 0.0;
    for k in 0..ts.len() - 1 {
        let dt = ts[k + 1] - ts[k];
        let grow = (lambda_norm * dt).exp();
        let fk = &values[k];
        let fk1 = &values[k + 1];
        let slack =
            0.5 * dt * lambda_norm * inf_norm_vec(fk).max(inf_norm_vec(fk1)) * grow;
        for i in 0..n {
            let b = 0.5 * (fk[i] + fk1[i]) + slack;
            if b > env[i] {
                env[i] = b;
            }
        }
        let norm_slack = 0.5 * dt * lambda_norm * norms[k].max(norms[k + 1]) * grow;
        norm_sup = norm_sup.max(0.5 * (norms[k] + norms[k + 1]) + norm_slack);
    }

    // Past T_max: exp(−Λt)v = exp(−Λ(t−T_max))·(exp(−ΛT_max)v), and
    // sup_{s≥0}‖exp(−Λs)‖ ≤ norm_sup because ‖exp(−ΛT_max)‖ < 1.
    let tail = norm_sup * inf_norm_vec(&(&end * v));
    for i in 0..n {
        env[i] = env[i].max(tail);
    }
    env
}

/// Smallest `T` (grid step 0.05, bisected to 1e-4) with
/// `sup_{t≥0} exp(−Λt)·(exp(−(Λ−M)T)·l) ≤ l` componentwise. Scalar
/// certificates need no threshold and get `T* = 0`.
#[allow(non_snake_case)]
pub fn find_T_star(
    cert: &ExpCertificate,
    m: &DMatrix<f64>,
    t_max: f64,
) -> Result<f64, TailError> {
    if cert.lambda.m() == 1 {
        return Ok(0.0);
    }
    validate_m(cert, m)?;
    let lambda = cert.lambda.matrix();
    let l = DVector::from_vec(cert.level.clone());
    let neg_diff = -(lambda - m);
    let holds = |t: f64| -> Result<bool, TailError> {
        let w = matrix_exp(&neg_diff, t)? * &l;
        let env = sup_envelope(lambda, &w);
        Ok((0..l.len()).all(|i| env[i] <= l[i]))
    };

    if holds(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = None;
    let mut t = SEARCH_GRID_STEP;
    while t <= t_max + 1e-12 {
        if holds(t)? {
            hi = Some(t);
            break;
        }
        lo = t;
        t += SEARCH_GRID_STEP;
    }
    let Some(mut hi) = hi else {
        return Err(TailError::NoTStarWithinRange { t_max });
    };
    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Unclamped tail bound (may exceed 1; the certified probability bound is
/// its clamp, see [`tail_bound_at`]).
pub fn tail_bound_raw(model: &TailBoundModel, t: f64) -> Result<f64, TailError> {
    if t < model.t_star - 1e-12 {
        return Err(TailError::TBelowTStar {
            t,
            t_star: model.t_star,
        });
    }
    match &model.form {
        BoundForm::Scalar { lambda } => {
            Ok(model.cert.alpha * (-lambda * t).exp() / model.cert.level[0])
        }
        BoundForm::Vector => {
            let m = model.m_matrix.as_ref().expect("vector form carries M");
            let l = DVector::from_vec(model.cert.level.clone());
            let denom = matrix_exp(m, t)? * l;
            Ok((0..denom.len())
                .map(|i| model.cert.alpha / denom[i])
                .fold(f64::INFINITY, f64::min))
        }
    }
}

/// Probability bound `P(∃ t ≥ T: X_t ∈ X_u) ≤ tail_bound_at(model, T)`,
/// clamped to `[0, 1]`. Requires `T ≥ T*`.
pub fn tail_bound_at(model: &TailBoundModel, t: f64) -> Result<f64, TailError> {
    Ok(tail_bound_raw(model, t)?.clamp(0.0, 1.0))
}

/// Smallest `T ≥ T*` (grid step 0.05, bisected to 1e-4) with
/// `tail_bound_at(model, T) ≤ epsilon`. Always exists: the bound decays to
/// zero as `T → ∞`.
#[allow(non_snake_case)]
pub fn find_T_tilde(model: &TailBoundModel, epsilon: f64) -> Result<f64, TailError> {
    if !(epsilon > 0.0) {
        return Err(TailError::InvalidEpsilon(epsilon));
    }
    if tail_bound_at(model, model.t_star)? <= epsilon {
        return Ok(model.t_star);
    }
    let mut lo = model.t_star;
    let mut hi = None;
    for k in 1..=2_000_000u64 {
        let t = model.t_star + k as f64 * SEARCH_GRID_STEP;
        if tail_bound_at(model, t)? <= epsilon {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let mut hi = hi.expect("exponential tail bound decays below any positive epsilon");
    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        if tail_bound_at(model, mid)? <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
