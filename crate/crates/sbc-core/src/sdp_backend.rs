//! Semidefinite programming backend.
//!
//! The problem form is
//!
//! ```text
//! minimize    c_f·f + Σ_k <C_k, S_k>
//! subject to  a_r·f + Σ_k <A_{r,k}, S_k> = b_r     (one row per r)
//!             S_k ⪰ 0,   f ∈ R^F free
//! ```
//!
//! where `<A, S> = Σ_i A_ii S_ii + 2 Σ_{i<j} A_ij S_ij` is the symmetric
//! matrix inner product (coefficients are stored as upper-triangle entries
//! of the symmetric data matrices).
//!
//! Solving is delegated to an embedded pure-Rust interior-point conic solver
//! (Clarabel) behind the [`SolverBackend`] trait; `SBC_SOLVER` selects the
//! backend by name (only `embedded` is compiled in). Results are never
//! trusted blindly: primal/dual objectives and feasibility residuals are
//! recomputed from the returned variables, and the recomputed values ship in
//! the [`SdpSolution`] next to the solver-reported ones.
//!
//! For debugging and external cross-checks, problems serialize to a plain
//! text sparse format ([`SdpProblem::to_debug_text`]) that reimports
//! losslessly ([`SdpProblem::from_debug_text`]).

use nalgebra::DMatrix;
use thiserror::Error;

/// Default iteration cap for the interior-point solver. Certificate
/// problems converge in well under 100 iterations; hitting 200 signals a
/// numerically hopeless instance rather than a patient one.
pub const DEFAULT_MAX_ITER: u32 = 200;

/// Default duality-gap and feasibility tolerance. Tight enough that Gram
/// witnesses validate at the 1e-6 identity tolerance with margin, loose
/// enough to be reliably reachable in double precision.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-8;

/// Equilibration scaling cap, the library default. Raising it was tried
/// against late step-length collapse and changed nothing — the collapse
/// traced to flat optimal faces (fixed by trace regularization of the
/// objective) — while extreme row scalings make the residuals the solver
/// reports diverge further from raw coefficient units.
const EQUILIBRATE_MAX_SCALING: f64 = 1e4;

/// Reduced-accuracy acceptance thresholds. When the interior-point step
/// collapses before the full tolerances are met, an iterate within these
/// bounds is still returned (as [`SolverStatus::NearOptimal`]) instead of
/// being discarded: every consumer re-validates Gram witnesses and runs
/// the sampling checker, so acceptance here costs tightness, not
/// soundness. The gap bound is what a late step-collapse iterate
/// realistically carries; feasibility stays well inside the 1e-6
/// identity-validation tolerance.
const REDUCED_TOL_GAP: f64 = 1e-3;
const REDUCED_TOL_FEAS: f64 = 1e-6;


#[derive(Debug, Error)]
pub enum SolveError {
    #[error("unknown solver backend '{requested}'; available: {available}")]
    UnknownBackend {
        requested: String,
        available: String,
    },
    #[error("malformed SDP: {0}")]
    BadProblem(String),
    #[error("solver internal error: {0}")]
    Internal(String),
    #[error("malformed SDP debug text at line {line}: {msg}")]
    BadDebugText { line: usize, msg: String },
}

/// One linear equality row: `Σ free coeffs + Σ <A_k, S_k> = rhs`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EqRow {
    /// `(free variable index, coefficient)`.
    pub free: Vec<(usize, f64)>,
    /// `(block, i, j, value)` with `i <= j`: entry of the symmetric data
    /// matrix paired with the block in the matrix inner product.
    pub psd: Vec<(usize, usize, usize, f64)>,
    pub rhs: f64,
}

/// Sparse SDP in equality-constrained primal form. Construction order is
/// part of the value: identical build sequences produce identical problems
/// (and identical debug text), which downstream determinism tests rely on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpProblem {
    free_names: Vec<String>,
    psd_dims: Vec<usize>,
    rows: Vec<EqRow>,
    obj_free: Vec<(usize, f64)>,
    obj_psd: Vec<(usize, usize, usize, f64)>,
}

impl SdpProblem {
    pub fn new() -> Self {
        SdpProblem::default()
    }

    /// Add a scalar decision variable; returns its index.
    pub fn add_free_var(&mut self, name: impl Into<String>) -> usize {
        self.free_names.push(name.into());
        self.free_names.len() - 1
    }

    /// Add a `dim x dim` PSD matrix variable; returns its block index.
    pub fn add_psd_block(&mut self, dim: usize) -> usize {
        assert!(dim >= 1, "PSD block must have positive dimension");
        self.psd_dims.push(dim);
        self.psd_dims.len() - 1
    }

    pub fn add_row(&mut self, row: EqRow) {
        self.rows.push(row);
    }

    /// Set the linear objective (minimized).
    pub fn set_objective(
        &mut self,
        free: Vec<(usize, f64)>,
        psd: Vec<(usize, usize, usize, f64)>,
    ) {
        self.obj_free = free;
        self.obj_psd = psd;
    }

    pub fn num_free(&self) -> usize {
        self.free_names.len()
    }

    pub fn free_names(&self) -> &[String] {
        &self.free_names
    }

    pub fn psd_dims(&self) -> &[usize] {
        &self.psd_dims
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[EqRow] {
        &self.rows
    }

    fn check(&self) -> Result<(), SolveError> {
        let bad = |msg: String| Err(SolveError::BadProblem(msg));
        let check_entry = |block: usize, i: usize, j: usize, v: f64| -> Result<(), SolveError> {
            if block >= self.psd_dims.len() {
                return bad(format!("PSD block index {block} out of range"));
            }
            let d = self.psd_dims[block];
            if i > j || j >= d {
                return bad(format!("entry ({i},{j}) invalid for {d}x{d} block {block}"));
            }
            if !v.is_finite() {
                return bad(format!("non-finite coefficient on block {block}"));
            }
            Ok(())
        };
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return bad(format!("row {r} has non-finite right-hand side"));
            }
            for &(v, c) in &row.free {
                if v >= self.free_names.len() {
                    return bad(format!("row {r} references free variable {v} out of range"));
                }
                if !c.is_finite() {
                    return bad(format!("row {r} has a non-finite coefficient"));
                }
            }
            for &(b, i, j, v) in &row.psd {
                check_entry(b, i, j, v)?;
            }
        }
        for &(v, c) in &self.obj_free {
            if v >= self.free_names.len() || !c.is_finite() {
                return bad("objective references an invalid free variable".into());
            }
        }
        for &(b, i, j, v) in &self.obj_psd {
            check_entry(b, i, j, v)?;
        }
        Ok(())
    }

    /// Serialize to the plain text exchange format (lossless, line-based).
    pub fn to_debug_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "sdp-text v1").unwrap();
        writeln!(s, "free {}", self.free_names.len()).unwrap();
        for (i, name) in self.free_names.iter().enumerate() {
            writeln!(s, "name {i} {name}").unwrap();
        }
        for &d in &self.psd_dims {
            writeln!(s, "psd {d}").unwrap();
        }
        for &(v, c) in &self.obj_free {
            writeln!(s, "obj f {v} {c:?}").unwrap();
        }
        for &(b, i, j, c) in &self.obj_psd {
            writeln!(s, "obj p {b} {i} {j} {c:?}").unwrap();
        }
        for row in &self.rows {
            writeln!(s, "row {:?}", row.rhs).unwrap();
            for &(v, c) in &row.free {
                writeln!(s, "f {v} {c:?}").unwrap();
            }
            for &(b, i, j, c) in &row.psd {
                writeln!(s, "p {b} {i} {j} {c:?}").unwrap();
            }
            writeln!(s, "end").unwrap();
        }
        s
    }

    /// Parse the text exchange format produced by [`to_debug_text`].
    ///
    /// [`to_debug_text`]: SdpProblem::to_debug_text
    pub fn from_debug_text(text: &str) -> Result<SdpProblem, SolveError> {
        let mut problem = SdpProblem::new();
        let mut current: Option<EqRow> = None;
        let err = |line: usize, msg: &str| SolveError::BadDebugText {
            line,
            msg: msg.to_string(),
        };
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            let head = tok.next().unwrap();
            let next_usize = |tok: &mut std::str::SplitWhitespace| -> Result<usize, SolveError> {
                tok.next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(lineno, "expected an integer"))
            };
            let next_f64 = |tok: &mut std::str::SplitWhitespace| -> Result<f64, SolveError> {
                tok.next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(lineno, "expected a number"))
            };
            match head {
                "sdp-text" => {
                    if idx != 0 || tok.next() != Some("v1") {
                        return Err(err(lineno, "bad header"));
                    }
                }
                "free" => {
                    let n = next_usize(&mut tok)?;
                    problem.free_names = (0..n).map(|i| format!("v{i}")).collect();
                }
                "name" => {
                    let i = next_usize(&mut tok)?;
                    let name = tok.collect::<Vec<_>>().join(" ");
                    *problem
                        .free_names
                        .get_mut(i)
                        .ok_or_else(|| err(lineno, "name index out of range"))? = name;
                }
                "psd" => {
                    let d = next_usize(&mut tok)?;
                    problem.psd_dims.push(d);
                }
                "obj" => match tok.next() {
                    Some("f") => {
                        let v = next_usize(&mut tok)?;
                        let c = next_f64(&mut tok)?;
                        problem.obj_free.push((v, c));
                    }
                    Some("p") => {
                        let (b, i, j) = (
                            next_usize(&mut tok)?,
                            next_usize(&mut tok)?,
                            next_usize(&mut tok)?,
                        );
                        let c = next_f64(&mut tok)?;
                        problem.obj_psd.push((b, i, j, c));
                    }
                    _ => return Err(err(lineno, "obj expects 'f' or 'p'")),
                },
                "row" => {
                    if current.is_some() {
                        return Err(err(lineno, "previous row not closed with 'end'"));
                    }
                    current = Some(EqRow {
                        rhs: next_f64(&mut tok)?,
                        ..EqRow::default()
                    });
                }
                "f" => {
                    let row = current.as_mut().ok_or_else(|| err(lineno, "'f' outside a row"))?;
                    let v = next_usize(&mut tok)?;
                    let c = next_f64(&mut tok)?;
                    row.free.push((v, c));
                }
                "p" => {
                    let row = current.as_mut().ok_or_else(|| err(lineno, "'p' outside a row"))?;
                    let (b, i, j) = (
                        next_usize(&mut tok)?,
                        next_usize(&mut tok)?,
                        next_usize(&mut tok)?,
                    );
                    let c = next_f64(&mut tok)?;
                    row.psd.push((b, i, j, c));
                }
                "end" => {
                    let row = current
                        .take()
                        .ok_or_else(|| err(lineno, "'end' without a row"))?;
                    problem.rows.push(row);
                }
                other => return Err(err(lineno, &format!("unknown directive '{other}'"))),
            }
        }
        if current.is_some() {
            return Err(err(text.lines().count(), "unterminated row"));
        }
        problem.check()?;
        Ok(problem)
    }
}

/// Termination status, normalized across backends.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolverStatus {
    /// Converged to the requested tolerances.
    Optimal,
    /// Converged at reduced accuracy; solutions are still extracted and must
    /// pass downstream validation before being trusted.
    NearOptimal,
    /// Primal infeasible (no PSD assignment satisfies the rows).
    Infeasible,
    /// Objective unbounded below (dual infeasible).
    Unbounded,
    /// No conclusion (iteration limit, numerical trouble, ...).
    NumericalFailure(String),
}

impl SolverStatus {
    pub fn is_solved(&self) -> bool {
        matches!(self, SolverStatus::Optimal | SolverStatus::NearOptimal)
    }
}

/// Interior-point settings exposed to callers.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub max_iter: u32,
    /// Absolute and relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Primal/dual feasibility tolerance.
    pub tol_feas: f64,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iter: DEFAULT_MAX_ITER,
            tol_gap: DEFAULT_SOLVER_TOL,
            tol_feas: DEFAULT_SOLVER_TOL,
            verbose: false,
        }
    }
}

/// Residual summary in the solver's normalization:
/// `primal = ‖Ax + s − b‖ / max(1, ‖b‖+‖x‖+‖s‖)`,
/// `dual = ‖q + Aᵀz‖ / max(1, ‖q‖+‖x‖+‖z‖)`, `gap = |primal − dual cost|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// Solver output with both solver-reported and independently recomputed
/// quality measures.
#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolverStatus,
    /// Primal objective recomputed as `c·x` from the returned variables.
    pub objective: f64,
    /// Dual objective recomputed as `−b·z` from the returned multipliers.
    pub dual_objective: f64,
    pub free_values: Vec<f64>,
    /// Recovered symmetric matrices, one per PSD block.
    pub psd_matrices: Vec<DMatrix<f64>>,
    /// Residuals recomputed from the returned solution.
    pub recomputed: Residuals,
    /// Residuals as reported by the backend.
    pub reported: Residuals,
    pub iterations: u32,
    pub solve_time: f64,
}

/// A solver capable of handling [`SdpProblem`]s.
pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SolveError>;
}

/// Embedded interior-point conic solver (Clarabel with a BLAS-backed PSD
/// cone).
pub struct EmbeddedSolver;

const BACKENDS: &[&str] = &["embedded"];

/// Resolve a backend by name; `None` or `"embedded"` selects the built-in
/// solver. Unknown names report the available set.
pub fn backend_by_name(name: Option<&str>) -> Result<Box<dyn SolverBackend>, SolveError> {
    match name.unwrap_or("embedded") {
        "embedded" => Ok(Box::new(EmbeddedSolver)),
        other => Err(SolveError::UnknownBackend {
            requested: other.to_string(),
            available: BACKENDS.join(", "),
        }),
    }
}

/// Resolve the backend from the `SBC_SOLVER` environment variable.
pub fn backend_from_env() -> Result<Box<dyn SolverBackend>, SolveError> {
    let name = std::env::var("SBC_SOLVER").ok();
    backend_by_name(name.as_deref())
}

fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Index of upper-triangle entry `(i, j)`, `i <= j`, in the column-major
/// scaled-vector layout used by the PSD cone.
fn svec_index(i: usize, j: usize) -> usize {
    j * (j + 1) / 2 + i
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

impl SolverBackend for EmbeddedSolver {
    fn name(&self) -> &'static str {
        "embedded"
    }

    fn solve(&self, problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SolveError> {
        use clarabel::algebra::CscMatrix;
        use clarabel::solver::{
            DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus as ClStatus,
            SupportedConeT,
        };

        problem.check()?;

        let f = problem.free_names.len();
        let block_offsets: Vec<usize> = problem
            .psd_dims
            .iter()
            .scan(f, |acc, &d| {
                let here = *acc;
                *acc += tri(d);
                Some(here)
            })
            .collect();
        let n_vars = f + problem.psd_dims.iter().map(|&d| tri(d)).sum::<usize>();
        if n_vars == 0 {
            // Degenerate but legal: nothing to decide.
            return Ok(SdpSolution {
                status: SolverStatus::Optimal,
                objective: 0.0,
                dual_objective: 0.0,
                free_values: vec![],
                psd_matrices: vec![],
                recomputed: Residuals { primal: 0.0, dual: 0.0, gap: 0.0 },
                reported: Residuals { primal: 0.0, dual: 0.0, gap: 0.0 },
                iterations: 0,
                solve_time: 0.0,
            });
        }

        // Variable layout: [free | svec(S_0) | svec(S_1) | ...] where svec
        // stacks the upper triangle column-major with off-diagonal entries
        // scaled by sqrt(2) — the PSD cone's native coordinates, so each
        // block constraint is just "that slice of x lies in the cone".
        let svec_var = |block: usize, i: usize, j: usize| block_offsets[block] + svec_index(i, j);
        let entry_coeff = |i: usize, j: usize, v: f64| if i == j { v } else { SQRT2 * v };

        // Objective c·x.
        let mut q = vec![0.0; n_vars];
        for &(v, c) in &problem.obj_free {
            q[v] += c;
        }
        for &(b, i, j, c) in &problem.obj_psd {
            q[svec_var(b, i, j)] += entry_coeff(i, j, c);
        }

        // Constraint matrix in Ax + s = b, s ∈ K form: equality rows first
        // (zero cone), then one identity slice per PSD block.
        let n_eq = problem.rows.len();
        let m_total = n_eq + (n_vars - f);
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b = vec![0.0; m_total];
        for (r, row) in problem.rows.iter().enumerate() {
            b[r] = row.rhs;
            for &(v, c) in &row.free {
                triplets.push((r, v, c));
            }
            for &(blk, i, j, c) in &row.psd {
                triplets.push((r, svec_var(blk, i, j), entry_coeff(i, j, c)));
            }
        }
        let mut cone_row = n_eq;
        for (blk, &d) in problem.psd_dims.iter().enumerate() {
            for t in 0..tri(d) {
                triplets.push((cone_row, block_offsets[blk] + t, -1.0));
                cone_row += 1;
            }
            let _ = blk;
        }

        // Triplets → CSC, folding duplicate (row, col) entries by summation.
        triplets.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0usize; n_vars + 1];
        let mut rowval: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut nzval: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut col_counts = vec![0usize; n_vars];
        let mut k = 0;
        while k < triplets.len() {
            let (r, c, mut v) = triplets[k];
            let mut k2 = k + 1;
            while k2 < triplets.len() && triplets[k2].0 == r && triplets[k2].1 == c {
                v += triplets[k2].2;
                k2 += 1;
            }
            rowval.push(r);
            nzval.push(v);
            col_counts[c] += 1;
            k = k2;
        }
        for c in 0..n_vars {
            colptr[c + 1] = colptr[c] + col_counts[c];
        }

        let a_mat = CscMatrix::new(m_total, n_vars, colptr, rowval, nzval);
        let p_mat = CscMatrix::zeros((n_vars, n_vars));
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if n_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(n_eq));
        }
        for &d in &problem.psd_dims {
            cones.push(SupportedConeT::PSDTriangleConeT(d));
        }

        let cl_settings = DefaultSettingsBuilder::default()
            .max_iter(settings.max_iter)
            .tol_gap_abs(settings.tol_gap)
            .tol_gap_rel(settings.tol_gap)
            .tol_feas(settings.tol_feas)
            .equilibrate_max_scaling(EQUILIBRATE_MAX_SCALING)
            .static_regularization_constant(STATIC_REGULARIZATION)
            .reduced_tol_gap_abs(REDUCED_TOL_GAP)
            .reduced_tol_gap_rel(REDUCED_TOL_GAP)
            .reduced_tol_feas(REDUCED_TOL_FEAS)
            .verbose(settings.verbose)
            .build()
            .map_err(|e| SolveError::Internal(format!("settings: {e:?}")))?;

        let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, cl_settings)
            .map_err(|e| SolveError::Internal(format!("solver construction: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;

        let status = match sol.status {
            ClStatus::Solved => SolverStatus::Optimal,
            ClStatus::AlmostSolved => SolverStatus::NearOptimal,
            ClStatus::PrimalInfeasible | ClStatus::AlmostPrimalInfeasible => SolverStatus::Infeasible,
            ClStatus::DualInfeasible | ClStatus::AlmostDualInfeasible => SolverStatus::Unbounded,
            other => SolverStatus::NumericalFailure(format!("{other:?}")),
        };

        let (free_values, psd_matrices, objective, dual_objective, recomputed) =
            if status.is_solved() {
                let x = &sol.x;
                let free_values = x[..f].to_vec();
                let psd_matrices: Vec<DMatrix<f64>> = problem
                    .psd_dims
                    .iter()
                    .enumerate()
                    .map(|(blk, &d)| {
                        DMatrix::from_fn(d, d, |i, j| {
                            let (i, j) = if i <= j { (i, j) } else { (j, i) };
                            let v = x[svec_var(blk, i, j)];
                            if i == j {
                                v
                            } else {
                                v / SQRT2
                            }
                        })
                    })
                    .collect();

                // Recompute everything the solver claims, from its variables.
                let objective: f64 = q.iter().zip(x).map(|(qi, xi)| qi * xi).sum();
                let dual_objective: f64 =
                    -b.iter().zip(&sol.z).map(|(bi, zi)| bi * zi).sum::<f64>();
                let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
                // r_p = ‖Ax + s − b‖ / max(1, ‖b‖+‖x‖+‖s‖)
                let mut ax = vec![0.0; m_total];
                let mut aty = vec![0.0; n_vars];
                // dense mat-vec through the triplet list would double-count
                // folded duplicates; reuse the CSC arrays instead
                {
                    let (cp, rv, nz) = (&a_mat.colptr, &a_mat.rowval, &a_mat.nzval);
                    for c in 0..n_vars {
                        for k in cp[c]..cp[c + 1] {
                            ax[rv[k]] += nz[k] * x[c];
                            aty[c] += nz[k] * sol.z[rv[k]];
                        }
                    }
                }
                let prim_vec: Vec<f64> = (0..m_total)
                    .map(|r| ax[r] + sol.s[r] - b[r])
                    .collect();
                let dual_vec: Vec<f64> = (0..n_vars).map(|c| q[c] + aty[c]).collect();
                let r_prim = norm2(&prim_vec)
                    / f64::max(1.0, norm2(&b) + norm2(x) + norm2(&sol.s));
                let r_dual = norm2(&dual_vec)
                    / f64::max(1.0, norm2(&q) + norm2(x) + norm2(&sol.z));
                let gap = (objective - dual_objective).abs();
                (
                    free_values,
                    psd_matrices,
                    objective,
                    dual_objective,
                    Residuals { primal: r_prim, dual: r_dual, gap },
                )
            } else {
                (
                    vec![],
                    vec![],
                    f64::NAN,
                    f64::NAN,
                    Residuals { primal: f64::NAN, dual: f64::NAN, gap: f64::NAN },
                )
            };

        Ok(SdpSolution {
            status,
            objective,
            dual_objective,
            free_values,
            psd_matrices,
            recomputed,
            reported: Residuals {
                primal: sol.r_prim,
                dual: sol.r_dual,
                gap: (sol.obj_val - sol.obj_val_dual).abs(),
            },
            iterations: sol.iterations,
            solve_time: sol.solve_time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(p: &SdpProblem) -> SdpSolution {
        EmbeddedSolver.solve(p, &SolverSettings::default()).unwrap()
    }

    #[test]
    fn minimize_scalar_psd_entry() {
        // min S_00 with S ⪰ 0 (1x1): optimum 0.
        let mut p = SdpProblem::new();
        p.add_psd_block(1);
        p.set_objective(vec![], vec![(0, 0, 0, 1.0)]);
        let sol = solve(&p);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!(sol.objective.abs() < 1e-8, "objective {}", sol.objective);
        assert!(sol.psd_matrices[0][(0, 0)] >= -1e-10);
    }

    #[test]
    fn fixed_negative_entry_is_infeasible() {
        // S ⪰ 0 (1x1) with S_00 = -1 is infeasible.
        let mut p = SdpProblem::new();
        p.add_psd_block(1);
        p.add_row(EqRow {
            free: vec![],
            psd: vec![(0, 0, 0, 1.0)],
            rhs: -1.0,
        });
        let sol = solve(&p);
        assert_eq!(sol.status, SolverStatus::Infeasible);
    }

    #[test]
    fn off_diagonal_scaling_convention() {
        // min S_00 + S_11 s.t. S_01 = 1, S ⪰ 0: optimum 2 at S = [[1,1],[1,1]].
        // A wrong sqrt(2) convention in the svec mapping would return 2√2 or √2.
        let mut p = SdpProblem::new();
        p.add_psd_block(2);
        p.add_row(EqRow {
            free: vec![],
            psd: vec![(0, 0, 1, 0.5)], // <A,S> with A_01 = A_10 = 1/2 is exactly S_01
            rhs: 1.0,
        });
        p.set_objective(vec![], vec![(0, 0, 0, 1.0), (0, 1, 1, 1.0)]);
        let sol = solve(&p);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-6, "objective {}", sol.objective);
        let s = &sol.psd_matrices[0];
        assert!((s[(0, 1)] - 1.0).abs() < 1e-6, "S_01 = {}", s[(0, 1)]);
    }

    #[test]
    fn free_variable_with_equality() {
        // min a s.t. a - S_00 = 3, S ⪰ 0 (1x1): optimum a = 3.
        let mut p = SdpProblem::new();
        let a = p.add_free_var("a");
        p.add_psd_block(1);
        p.add_row(EqRow {
            free: vec![(a, 1.0)],
            psd: vec![(0, 0, 0, -1.0)],
            rhs: 3.0,
        });
        p.set_objective(vec![(a, 1.0)], vec![]);
        let sol = solve(&p);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-7);
        assert!((sol.free_values[0] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn unbounded_objective_detected() {
        // min a with a free and unconstrained.
        let mut p = SdpProblem::new();
        let a = p.add_free_var("a");
        p.set_objective(vec![(a, 1.0)], vec![]);
        let sol = solve(&p);
        assert_eq!(sol.status, SolverStatus::Unbounded);
    }

    #[test]
    fn objective_matches_dual_and_residuals_agree() {
        let mut p = SdpProblem::new();
        let a = p.add_free_var("a");
        p.add_psd_block(2);
        p.add_row(EqRow {
            free: vec![(a, 1.0)],
            psd: vec![(0, 0, 1, 0.5)],
            rhs: 2.0,
        });
        p.add_row(EqRow {
            free: vec![],
            psd: vec![(0, 0, 0, 1.0)],
            rhs: 1.5,
        });
        p.set_objective(vec![(a, 1.0)], vec![(0, 1, 1, 1.0)]);
        let sol = solve(&p);
        assert_eq!(sol.status, SolverStatus::Optimal);
        let settings = SolverSettings::default();
        // Strong duality at convergence: recomputed primal and dual
        // objectives agree to the gap tolerance (scaled).
        let scale = 1.0 + sol.objective.abs() + sol.dual_objective.abs();
        assert!(
            sol.recomputed.gap <= settings.tol_gap * scale * 10.0,
            "gap {} too large",
            sol.recomputed.gap
        );
        // Recomputed residuals within 10x of reported ones (plus an absolute
        // floor: both are ~1e-12 noise here).
        let close = |mine: f64, theirs: f64| {
            mine <= 10.0 * theirs + 1e-9 && theirs <= 10.0 * mine + 1e-9
        };
        assert!(
            close(sol.recomputed.primal, sol.reported.primal),
            "primal residuals disagree: {} vs {}",
            sol.recomputed.primal,
            sol.reported.primal
        );
        assert!(
            close(sol.recomputed.dual, sol.reported.dual),
            "dual residuals disagree: {} vs {}",
            sol.recomputed.dual,
            sol.reported.dual
        );
    }

    #[test]
    fn debug_text_round_trip() {
        let mut p = SdpProblem::new();
        let a = p.add_free_var("alpha");
        let _b = p.add_free_var("lam 0"); // name with a space survives
        p.add_psd_block(3);
        p.add_psd_block(1);
        p.add_row(EqRow {
            free: vec![(a, -0.5)],
            psd: vec![(0, 0, 2, 1.25), (1, 0, 0, -1.0)],
            rhs: 0.125,
        });
        p.set_objective(vec![(a, 1.0)], vec![(0, 1, 1, 2.0)]);
        let text = p.to_debug_text();
        let q = SdpProblem::from_debug_text(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(text, q.to_debug_text(), "writer is deterministic");
    }

    #[test]
    fn debug_text_errors_carry_line_numbers() {
        let text = "sdp-text v1\nfree 1\nrow 0.0\nf 0 nope\nend\n";
        match SdpProblem::from_debug_text(text) {
            Err(SolveError::BadDebugText { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected BadDebugText, got {other:?}"),
        }
    }

    #[test]
    fn unknown_backend_lists_available() {
        match backend_by_name(Some("mosek")) {
            Err(SolveError::UnknownBackend { available, .. }) => {
                assert!(available.contains("embedded"));
            }
            Err(other) => panic!("expected UnknownBackend, got {other:?}"),
            Ok(_) => panic!("expected UnknownBackend, got a backend"),
        }
    }

    #[test]
    fn imported_problem_solves_identically() {
        let mut p = SdpProblem::new();
        p.add_psd_block(2);
        p.add_row(EqRow {
            free: vec![],
            psd: vec![(0, 0, 1, 0.5)],
            rhs: 1.0,
        });
        p.set_objective(vec![], vec![(0, 0, 0, 1.0), (0, 1, 1, 1.0)]);
        let direct = solve(&p);
        let reimported = solve(&SdpProblem::from_debug_text(&p.to_debug_text()).unwrap());
        assert_eq!(direct.status, reimported.status);
        assert!((direct.objective - reimported.objective).abs() < 1e-12);
    }
}
