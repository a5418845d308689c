//! Periodic elliptic solver on the cell torus and the corrector fields it
//! produces. The discrete operator is Fourier spectral collocation assembled
//! densely per spatial node, deflated by its exact kernel (the constant mode
//! and, for even grids, the pure Nyquist modes whose derivative multipliers
//! vanish) through a bordered solve.

use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{cell_mean, CellGrid, SampledField, SampledProblem};
use crate::linalg::fftutil::{derivative_multipliers, AxisFft};

#[derive(Debug, Error)]
pub enum CellError {
    #[error("cell problem not solvable: |cell mean of rhs| = {mean_norm:.3e} exceeds {tol:.3e} (rhs scale {rhs_norm:.3e})")]
    NonSolvable { mean_norm: f64, rhs_norm: f64, tol: f64 },
    #[error("cell solver breakdown: {0}")]
    SolverBreakdown(String),
}

/// FFT plans and derivative multipliers for the cell torus.
pub struct CellCalculus {
    pub grid: CellGrid,
    ffts: Vec<AxisFft>,
    mults: Vec<Vec<Complex64>>,
}

impl CellCalculus {
    pub fn new(grid: &CellGrid) -> Self {
        let k = grid.points_per_axis;
        let ffts: Vec<AxisFft> = (0..grid.dim()).map(|_| AxisFft::new(k)).collect();
        let mults = grid
            .cell
            .periods
            .iter()
            .map(|&t| derivative_multipliers(k, t))
            .collect();
        Self { grid: grid.clone(), ffts, mults }
    }

    /// Spectral d/d xi_axis of a cell vector field stored as
    /// `u[iq * ncomp + c]`, in place.
    pub fn derivative(&self, axis: usize, ncomp: usize, u: &mut [Complex64]) {
        let k = self.grid.points_per_axis;
        let d = self.grid.dim();
        let g = self.grid.node_count();
        debug_assert_eq!(u.len(), g * ncomp);
        // stride between consecutive points along `axis` in the flattened grid
        let tail: usize = k.pow((d - 1 - axis) as u32);
        let stride = tail * ncomp;
        let mut line = vec![Complex64::new(0.0, 0.0); k];
        let n_lines = g / k;
        for l in 0..n_lines {
            // decompose line index into (outer, inner) around the axis
            let inner = l % tail;
            let outer = l / tail;
            for c in 0..ncomp {
                let base = (outer * k * tail + inner) * ncomp + c;
                for q in 0..k {
                    line[q] = u[base + q * stride];
                }
                self.ffts[axis].forward(&mut line);
                for (z, m) in line.iter_mut().zip(&self.mults[axis]) {
                    *z *= m;
                }
                self.ffts[axis].inverse(&mut line);
                for q in 0..k {
                    u[base + q * stride] = line[q];
                }
            }
        }
    }
}

/// Dense, kernel-deflated discrete cell operator at one spatial node.
pub struct CellOperator {
    pub gn: usize,
    kernel: DMatrix<Complex64>,
    n_mean_cols: usize,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    l_dense: DMatrix<Complex64>,
}

/// One cell solve: the zero-mean solution plus the reported defects.
pub struct CellSolveOutcome {
    pub solution: Vec<Complex64>,
    /// Frobenius norm of the cell mean of the rhs (the solvability defect).
    pub mean_defect: f64,
    /// norm of the rhs component on the spurious Nyquist kernel modes
    pub nyquist_defect: f64,
    /// `|L u - P rhs|` relative to the rhs scale
    pub relative_residual: f64,
    pub rhs_scale: f64,
}

/// Kernel mode multi-indices: all per-axis frequencies in {0, K/2}.
fn kernel_mode_patterns(dim: usize, k: usize) -> Vec<Vec<usize>> {
    let mut picks = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::new();
        for p in &picks {
            for &f in &[0usize, k / 2] {
                let mut q = p.clone();
                q.push(f);
                next.push(q);
            }
        }
        picks = next;
    }
    picks
}

impl CellOperator {
    /// `a_at` indexes the sampled principal coefficient of one spatial node:
    /// `a_at(iq)` is the m x m matrix at cell node `iq`.
    pub fn build(
        calc: &CellCalculus,
        b_mats: &[DMatrix<Complex64>],
        n: usize,
        m: usize,
        a_at: &dyn Fn(usize) -> DMatrix<Complex64>,
    ) -> Self {
        let g = calc.grid.node_count();
        let gn = g * n;
        let d = calc.grid.dim();
        let a_cache: Vec<DMatrix<Complex64>> = (0..g).map(a_at).collect();

        // columns of L by operator application to unit vectors
        let apply = |u: &[Complex64]| -> Vec<Complex64> {
            // w_j = d u / d xi_j for each axis
            let mut grads: Vec<Vec<Complex64>> = Vec::with_capacity(d);
            for axis in 0..d {
                let mut w = u.to_vec();
                calc.derivative(axis, n, &mut w);
                grads.push(w);
            }
            // v(q) = A(q) * sum_j B_j (grad_j u)(q)
            let mut v = vec![Complex64::new(0.0, 0.0); g * m];
            for q in 0..g {
                let mut bv = DVector::<Complex64>::zeros(m);
                for (j, bj) in b_mats.iter().enumerate() {
                    for r in 0..m {
                        let mut s = Complex64::new(0.0, 0.0);
                        for c in 0..n {
                            s += bj[(r, c)] * grads[j][q * n + c];
                        }
                        bv[r] += s;
                    }
                }
                let av = &a_cache[q] * bv;
                for r in 0..m {
                    v[q * m + r] = av[r];
                }
            }
            // out = -sum_i B_i^H d v / d xi_i
            let mut out = vec![Complex64::new(0.0, 0.0); gn];
            for axis in 0..d {
                let mut w = v.clone();
                calc.derivative(axis, m, &mut w);
                let bi = &b_mats[axis];
                for q in 0..g {
                    for c in 0..n {
                        let mut s = Complex64::new(0.0, 0.0);
                        for r in 0..m {
                            s += bi[(r, c)].conj() * w[q * m + r];
                        }
                        out[q * n + c] -= s;
                    }
                }
            }
            out
        };

        let mut l_dense = DMatrix::<Complex64>::zeros(gn, gn);
        let cols: Vec<Vec<Complex64>> = (0..gn)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![Complex64::new(0.0, 0.0); gn];
                e[j] = Complex64::new(1.0, 0.0);
                apply(&e)
            })
            .collect();
        for (j, col) in cols.iter().enumerate() {
            for i in 0..gn {
                l_dense[(i, j)] = col[i];
            }
        }

        // kernel columns: for each mode pattern with vanishing derivative
        // multipliers and each component, the normalized mode vector
        let k = calc.grid.points_per_axis;
        let patterns = kernel_mode_patterns(d, k);
        let mut kernel_cols: Vec<DVector<Complex64>> = Vec::new();
        let mut n_mean_cols = 0;
        // constant modes first so the mean defect sits in the leading entries
        for pat in std::iter::once(&vec![0usize; d]).chain(
            patterns.iter().filter(|p| p.iter().any(|&f| f != 0)),
        ) {
            for c in 0..n {
                let mut col = DVector::<Complex64>::zeros(gn);
                for q in 0..g {
                    // sign = product over axes of (-1)^(q_a) for Nyquist axes
                    let mut rest = q;
                    let mut sign = 1.0f64;
                    for a in (0..d).rev() {
                        let qa = rest % k;
                        rest /= k;
                        if pat[a] != 0 && qa % 2 == 1 {
                            sign = -sign;
                        }
                    }
                    col[q * n + c] = Complex64::new(sign / (g as f64).sqrt(), 0.0);
                }
                if pat.iter().all(|&f| f == 0) {
                    n_mean_cols += 1;
                }
                kernel_cols.push(col);
            }
        }
        let nk = kernel_cols.len();
        let mut kernel = DMatrix::<Complex64>::zeros(gn, nk);
        for (j, col) in kernel_cols.iter().enumerate() {
            kernel.set_column(j, col);
        }

        let mut big = DMatrix::<Complex64>::zeros(gn + nk, gn + nk);
        big.view_mut((0, 0), (gn, gn)).copy_from(&l_dense);
        big.view_mut((0, gn), (gn, nk)).copy_from(&kernel);
        big.view_mut((gn, 0), (nk, gn)).copy_from(&kernel.adjoint());
        let lu = big.lu();

        Self { gn, kernel, n_mean_cols, lu, l_dense }
    }

    pub fn hermiticity_defect(&self) -> f64 {
        crate::linalg::dense::hermiticity_defect(&self.l_dense)
    }

    pub fn apply_dense(&self, u: &DVector<Complex64>) -> DVector<Complex64> {
        &self.l_dense * u
    }

    pub fn solve(&self, rhs: &[Complex64]) -> Result<CellSolveOutcome, CellError> {
        let gn = self.gn;
        let nk = self.kernel.ncols();
        debug_assert_eq!(rhs.len(), gn);
        let mut big_rhs = DVector::<Complex64>::zeros(gn + nk);
        for i in 0..gn {
            big_rhs[i] = rhs[i];
        }
        let sol = self
            .lu
            .solve(&big_rhs)
            .ok_or_else(|| CellError::SolverBreakdown("bordered cell system is singular".into()))?;
        let u = DVector::from(sol.rows(0, gn).clone_owned());
        let mu = sol.rows(gn, nk).clone_owned();

        let g = gn / self.n_comp();
        // mean defect straight from the rhs, per component
        let mut mean_sq = 0.0;
        for c in 0..self.n_comp() {
            let mut s = Complex64::new(0.0, 0.0);
            for q in 0..g {
                s += rhs[q * self.n_comp() + c];
            }
            mean_sq += (s / g as f64).norm_sqr();
        }
        let mean_defect = mean_sq.sqrt();
        let nyquist_defect = (self.n_mean_cols..nk)
            .map(|j| mu[j].norm_sqr())
            .sum::<f64>()
            .sqrt()
            / (g as f64).sqrt();

        // residual against the kernel-projected rhs
        let proj_rhs = DVector::from_column_slice(rhs) - &self.kernel * mu;
        let res = (self.apply_dense(&u) - &proj_rhs).norm();
        let rhs_scale = rms(rhs);
        let relative_residual = res / (g as f64).sqrt() / rhs_scale.max(1e-300);
        Ok(CellSolveOutcome {
            solution: u.as_slice().to_vec(),
            mean_defect,
            nyquist_defect,
            relative_residual,
            rhs_scale,
        })
    }

    fn n_comp(&self) -> usize {
        self.n_mean_cols
    }
}

/// Root-mean-square over cell nodes of a vector field.
fn rms(v: &[Complex64]) -> f64 {
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
}

/// Solvability threshold of the public solve: relative to the rhs scale.
pub const SOLVE_CELL_REL_TOL: f64 = 1e-8;

/// Solve `B(d_xi)^* A(x, xi) B(d_xi) v = rhs` at the spatial node `ix` with
/// the zero-mean normalization; errors when the rhs violates the periodic
/// solvability condition.
pub fn solve_cell(
    ws: &SampledProblem,
    calc: &CellCalculus,
    ix: usize,
    rhs: &[Complex64],
) -> Result<Vec<Complex64>, CellError> {
    let spec = &ws.problem.spec;
    let op = CellOperator::build(calc, &spec.b_mats, spec.n, spec.m, &|iq| ws.a.at(ix, iq));
    let out = op.solve(rhs)?;
    let tol = SOLVE_CELL_REL_TOL * out.rhs_scale.max(1e-300);
    if out.mean_defect > tol {
        return Err(CellError::NonSolvable {
            mean_norm: out.mean_defect,
            rhs_norm: out.rhs_scale,
            tol,
        });
    }
    if out.relative_residual > 1e-8 {
        return Err(CellError::SolverBreakdown(format!(
            "relative residual {:.3e} after direct solve",
            out.relative_residual
        )));
    }
    Ok(out.solution)
}

/// The corrector fields of the homogenization: `lambda0` (n x n) and
/// `lambda1` (n x m), zero cell mean, with their symbol gradients cached.
pub struct CellSolution {
    pub lambda0: SampledField,
    pub lambda1: SampledField,
    /// `B(d_xi) lambda0`, m x n per sample
    pub grad_lambda0: SampledField,
    /// `B(d_xi) lambda1`, m x m per sample
    pub grad_lambda1: SampledField,
    pub max_mean: f64,
    pub max_residual: f64,
}

/// Apply `B(d_xi)` to a sampled matrix field column-wise at one x node:
/// input n_rows x n_cols over the cell, output m x n_cols.
pub fn symbol_gradient_at(
    calc: &CellCalculus,
    b_mats: &[DMatrix<Complex64>],
    field: &SampledField,
    ix: usize,
) -> Vec<Complex64> {
    let g = field.xi_count;
    let (rows, cols) = (field.rows, field.cols);
    let m = b_mats[0].nrows();
    let d = calc.grid.dim();
    let mut out = vec![Complex64::new(0.0, 0.0); g * m * cols];
    for axis in 0..d {
        // derivative of all entries along this axis
        let mut buf = vec![Complex64::new(0.0, 0.0); g * rows * cols];
        for q in 0..g {
            let o = field.offset(ix, q);
            buf[q * rows * cols..(q + 1) * rows * cols]
                .copy_from_slice(&field.data[o..o + rows * cols]);
        }
        calc.derivative(axis, rows * cols, &mut buf);
        let b = &b_mats[axis];
        for q in 0..g {
            for c in 0..cols {
                for r in 0..m {
                    let mut s = Complex64::new(0.0, 0.0);
                    for rr in 0..rows {
                        s += b[(r, rr)] * buf[q * rows * cols + rr * cols + c];
                    }
                    out[q * m * cols + r * cols + c] += s;
                }
            }
        }
    }
    out
}

/// Solve the two cell problems defining the correctors at every spatial
/// node. The first takes the drift divergence as data, the second the symbol
/// gradient of the principal coefficient.
pub fn compute_correctors(ws: &SampledProblem) -> Result<CellSolution, CellError> {
    let spec = &ws.problem.spec;
    let (n, m, d) = (spec.n, spec.m, spec.dim);
    let calc = CellCalculus::new(&ws.cgrid);
    let g = ws.cgrid.node_count();
    let nx = ws.sgrid.node_count();

    let shared_op = if ws.a_uniform_in_x() {
        Some(CellOperator::build(&calc, &spec.b_mats, n, m, &|iq| ws.a.at(0, iq)))
    } else {
        None
    };

    struct NodeResult {
        l0: Vec<Complex64>,
        l1: Vec<Complex64>,
        mean: f64,
        residual: f64,
    }

    let per_node: Vec<Result<NodeResult, CellError>> = (0..nx)
        .into_par_iter()
        .map(|ix| {
            let local;
            let op = match &shared_op {
                Some(o) => o,
                None => {
                    local = CellOperator::build(&calc, &spec.b_mats, n, m, &|iq| ws.a.at(ix, iq));
                    &local
                }
            };

            // rhs for lambda0: sum_i b_i^*(x) d(a_i^*)/d xi_i, an n x n field
            let mut rhs0 = vec![Complex64::new(0.0, 0.0); g * n * n];
            for (i, a_i) in ws.drift_a.iter().enumerate() {
                let mut adj = vec![Complex64::new(0.0, 0.0); g * n * n];
                for q in 0..g {
                    let o = a_i.offset(ix, q);
                    for r in 0..n {
                        for c in 0..n {
                            adj[q * n * n + r * n + c] = a_i.data[o + c * n + r].conj();
                        }
                    }
                }
                calc.derivative(i, n * n, &mut adj);
                let b_i = ws.drift_b[i].at(ix, 0);
                for q in 0..g {
                    for r in 0..n {
                        for c in 0..n {
                            let mut s = Complex64::new(0.0, 0.0);
                            for t in 0..n {
                                s += b_i[(t, r)].conj() * adj[q * n * n + t * n + c];
                            }
                            rhs0[q * n * n + r * n + c] += s;
                        }
                    }
                }
            }

            // rhs for lambda1: sum_i B_i^H dA/d xi_i, an n x m field
            let mut rhs1 = vec![Complex64::new(0.0, 0.0); g * n * m];
            for axis in 0..d {
                let mut da = vec![Complex64::new(0.0, 0.0); g * m * m];
                for q in 0..g {
                    let o = ws.a.offset(ix, q);
                    da[q * m * m..(q + 1) * m * m].copy_from_slice(&ws.a.data[o..o + m * m]);
                }
                calc.derivative(axis, m * m, &mut da);
                let b = &spec.b_mats[axis];
                for q in 0..g {
                    for r in 0..n {
                        for c in 0..m {
                            let mut s = Complex64::new(0.0, 0.0);
                            for t in 0..m {
                                s += b[(t, r)].conj() * da[q * m * m + t * m + c];
                            }
                            rhs1[q * n * m + r * m + c] += s;
                        }
                    }
                }
            }

            let mut l0 = vec![Complex64::new(0.0, 0.0); g * n * n];
            let mut l1 = vec![Complex64::new(0.0, 0.0); g * n * m];
            let mut worst_mean = 0.0f64;
            let mut worst_res = 0.0f64;
            // column-by-column solves
            for col in 0..n {
                let mut rhs = vec![Complex64::new(0.0, 0.0); g * n];
                for q in 0..g {
                    for r in 0..n {
                        rhs[q * n + r] = rhs0[q * n * n + r * n + col];
                    }
                }
                let out = op.solve(&rhs)?;
                if out.rhs_scale > 1e-14 {
                    worst_res = worst_res.max(out.relative_residual);
                }
                for q in 0..g {
                    for r in 0..n {
                        l0[q * n * n + r * n + col] = out.solution[q * n + r];
                    }
                }
            }
            for col in 0..m {
                let mut rhs = vec![Complex64::new(0.0, 0.0); g * n];
                for q in 0..g {
                    for r in 0..n {
                        rhs[q * n + r] = rhs1[q * n * m + r * m + col];
                    }
                }
                let out = op.solve(&rhs)?;
                if out.rhs_scale > 1e-14 {
                    worst_res = worst_res.max(out.relative_residual);
                }
                for q in 0..g {
                    for r in 0..n {
                        l1[q * n * m + r * m + col] = out.solution[q * n + r];
                    }
                }
            }
            // cell means of the solutions (should vanish by construction)
            for (stride, data) in [(n * n, &l0), (n * m, &l1)] {
                for e in 0..stride {
                    let s: Complex64 = (0..g).map(|q| data[q * stride + e]).sum();
                    worst_mean = worst_mean.max((s / g as f64).norm());
                }
            }
            Ok(NodeResult { l0, l1, mean: worst_mean, residual: worst_res })
        })
        .collect();

    let mut lambda0 = SampledField::zeros(nx, g, n, n);
    let mut lambda1 = SampledField::zeros(nx, g, n, m);
    let mut max_mean = 0.0f64;
    let mut max_residual = 0.0f64;
    for (ix, res) in per_node.into_iter().enumerate() {
        let r = res?;
        let o0 = lambda0.offset(ix, 0);
        lambda0.data[o0..o0 + g * n * n].copy_from_slice(&r.l0);
        let o1 = lambda1.offset(ix, 0);
        lambda1.data[o1..o1 + g * n * m].copy_from_slice(&r.l1);
        max_mean = max_mean.max(r.mean);
        max_residual = max_residual.max(r.residual);
    }

    // cached symbol gradients
    let mut grad_lambda0 = SampledField::zeros(nx, g, m, n);
    let mut grad_lambda1 = SampledField::zeros(nx, g, m, m);
    let g0: Vec<Vec<Complex64>> = (0..nx)
        .into_par_iter()
        .map(|ix| symbol_gradient_at(&calc, &spec.b_mats, &lambda0, ix))
        .collect();
    let g1: Vec<Vec<Complex64>> = (0..nx)
        .into_par_iter()
        .map(|ix| symbol_gradient_at(&calc, &spec.b_mats, &lambda1, ix))
        .collect();
    for ix in 0..nx {
        let o = grad_lambda0.offset(ix, 0);
        grad_lambda0.data[o..o + g * m * n].copy_from_slice(&g0[ix]);
        let o = grad_lambda1.offset(ix, 0);
        grad_lambda1.data[o..o + g * m * m].copy_from_slice(&g1[ix]);
    }

    Ok(CellSolution {
        lambda0,
        lambda1,
        grad_lambda0,
        grad_lambda1,
        max_mean,
        max_residual,
    })
}

/// Outcome of solving one cell problem per spatial node with a shared
/// right-hand-side field.
pub struct FieldSolveOutcome {
    pub solution: SampledField,
    /// worst solvability (cell-mean) defect over nodes, relative to the rhs scale
    pub max_mean_defect_rel: f64,
    pub max_mean_defect_abs: f64,
    pub max_residual: f64,
}

/// Solve `B(d_xi)^* A B(d_xi) v = rhs(x, .)` at every spatial node, with the
/// zero-mean normalization. The rhs cell means are reported; the solve
/// itself uses the kernel-projected rhs, and `solvability_rel` controls when
/// a defect becomes an error.
pub fn solve_cell_field(
    ws: &SampledProblem,
    calc: &CellCalculus,
    rhs: &SampledField,
    solvability_rel: f64,
) -> Result<FieldSolveOutcome, CellError> {
    let spec = &ws.problem.spec;
    let (n, m) = (spec.n, spec.m);
    let nx = rhs.x_count;
    let g = rhs.xi_count;
    debug_assert_eq!(rhs.rows, n);
    debug_assert_eq!(rhs.cols, 1);

    let shared_op = if ws.a_uniform_in_x() {
        Some(CellOperator::build(calc, &spec.b_mats, n, m, &|iq| ws.a.at(0, iq)))
    } else {
        None
    };
    // global rhs scale so nearly-zero nodes do not dominate the relative defect
    let global_scale = (rhs.data.iter().map(|z| z.norm_sqr()).sum::<f64>()
        / (nx * g) as f64)
        .sqrt();

    let per_node: Vec<Result<(Vec<Complex64>, f64, f64), CellError>> = (0..nx)
        .into_par_iter()
        .map(|ix| {
            let local;
            let op = match &shared_op {
                Some(o) => o,
                None => {
                    local = CellOperator::build(calc, &spec.b_mats, n, m, &|iq| ws.a.at(ix, iq));
                    &local
                }
            };
            let mut node_rhs = vec![Complex64::new(0.0, 0.0); g * n];
            for iq in 0..g {
                for c in 0..n {
                    node_rhs[iq * n + c] = rhs.entry(ix, iq, c, 0);
                }
            }
            let out = op.solve(&node_rhs)?;
            Ok((out.solution, out.mean_defect, out.relative_residual))
        })
        .collect();

    let mut solution = SampledField::zeros(nx, g, n, 1);
    let mut max_abs = 0.0f64;
    let mut max_res = 0.0f64;
    for (ix, r) in per_node.into_iter().enumerate() {
        let (sol, mean, res) = r?;
        let o = solution.offset(ix, 0);
        solution.data[o..o + g * n].copy_from_slice(&sol);
        max_abs = max_abs.max(mean);
        if global_scale > 1e-14 {
            max_res = max_res.max(res);
        }
    }
    let max_rel = max_abs / global_scale.max(1e-300);
    if global_scale > 1e-14 && max_rel > solvability_rel {
        return Err(CellError::NonSolvable {
            mean_norm: max_abs,
            rhs_norm: global_scale,
            tol: solvability_rel * global_scale,
        });
    }
    Ok(FieldSolveOutcome {
        solution,
        max_mean_defect_rel: max_rel,
        max_mean_defect_abs: max_abs,
        max_residual: max_res,
    })
}

/// First fast corrector of an eigenvector:
/// `upsilon1 = (lambda1 B(d_x) + lambda0) psi`.
pub fn compute_upsilon1(
    ws: &SampledProblem,
    cells: &CellSolution,
    psi: &nalgebra::DVector<Complex64>,
) -> SampledField {
    crate::twoscale::apply_corrector(ws, cells, psi)
}

/// Second fast corrector: the zero-mean periodic solution of
/// `B(d_xi)^* A B(d_xi) upsilon2 = -K_{-1} upsilon1 - (K_0 - lambda0) psi`.
/// The reported defect is the discrete residual of the homogenized
/// eigen-equation at each node.
pub fn compute_upsilon2(
    ws: &SampledProblem,
    calc: &CellCalculus,
    cells: &CellSolution,
    psi: &nalgebra::DVector<Complex64>,
    lambda0: f64,
    solvability_rel: f64,
) -> Result<(SampledField, f64), CellError> {
    let upsilon1 = compute_upsilon1(ws, cells, psi);
    let lifted = crate::twoscale::lift_spatial(&ws.sgrid, ws.n(), ws.cgrid.node_count(), psi);
    let k1u = crate::spectra::apply_k_minus1(ws, calc, &upsilon1);
    let k0p = crate::spectra::apply_k0_shifted(ws, &lifted, lambda0);
    let mut rhs = crate::twoscale::field_axpy(Complex64::new(1.0, 0.0), &k0p, &k1u);
    for z in rhs.data.iter_mut() {
        *z = -*z;
    }
    let out = solve_cell_field(ws, calc, &rhs, solvability_rel)?;
    Ok((out.solution, out.max_mean_defect_rel))
}

/// Verify the zero-mean invariant of a corrector field; returns the max
/// cell-mean norm over spatial nodes.
pub fn max_cell_mean(field: &SampledField) -> f64 {
    (0..field.x_count)
        .map(|ix| cell_mean(field, ix).map(|z| Complex::new(z.norm(), 0.0)).norm())
        .fold(0.0f64, f64::max)
}
