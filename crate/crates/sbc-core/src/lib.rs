//! Certified safety bounds for polynomial stochastic differential equations.
//!
//! Given an SDE `dX_t = b(X_t) dt + sigma(X_t) dW_t` with polynomial drift
//! and diffusion, a state domain `X`, an initial set `X_0`, and an unsafe set
//! `X_u`, this crate synthesizes stochastic barrier certificates by
//! sum-of-squares programming and combines them into an upper bound on the
//! probability that the process (stopped at the first exit from `X`) ever
//! enters the unsafe set — over the *infinite* time horizon.
//!
//! The bound is the sum of two pieces:
//!
//! * a **tail bound** from an exponentially decreasing certificate `V`
//!   (`AV <= -Lambda V`), which controls the probability of reaching the
//!   unsafe set after a finite cutoff `T`; and
//! * a **bounded-horizon bound** from a time-dependent certificate
//!   `H(t, x)` on `[0, T]`, which controls the probability of reaching it
//!   before `T`.
//!
//! Module map:
//!
//! * [`polynomial`] — sparse multivariate polynomials (exact rational or
//!   `f64` coefficients), parsing, monomial bases.
//! * [`sde_model`] — SDE systems, semialgebraic sets, the generator
//!   `Af = ∂f/∂t + b·∇f + ½ tr(σσᵀ ∇²f)`, safety problems.
//! * [`sos_encoder`] — sum-of-squares feasibility/optimization programs
//!   compiled to semidefinite programs; witness extraction and validation.
//! * [`sdp_backend`] — the embedded interior-point SDP solver plus a plain
//!   text exchange format for debugging.
//! * [`exp_certificate`] — synthesis of exponentially decreasing barrier
//!   certificates.
//! * [`tail_bound`] — matrix exponentials, the vector-case alignment time
//!   `T*`, tail bounds, and the cutoff search.
//! * [`timedep_certificate`] — time-dependent certificates on `[0, T]`.
//! * [`simulator`] — Euler–Maruyama simulation with hitting statistics for
//!   empirical cross-checks.
//! * [`pipeline`] — the end-to-end verification flow and reports.

pub mod exp_certificate;
pub mod pipeline_report;
pub mod polynomial;
pub mod sde_model;
pub mod sdp_backend;
pub mod simulator;
pub mod sos_encoder;
pub mod tail_bound;
pub mod timedep_certificate;

// Linked for its BLAS symbols (`system` feature): the SDP solver's PSD cone
// support calls LAPACK/BLAS provided by the preinstalled OpenBLAS.
use openblas_src as _;
