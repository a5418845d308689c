//! Spectral layer: hermitian eigensolves on the spatial grid with a
//! structure-aware dispatch (tridiagonal bisection, dense, or block
//! preconditioned iteration), isolated-cluster extraction, the reduced
//! resolvent of `H0 - lambda0`, and the two-scale operators coupling the
//! fast and slow derivatives.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::cell::CellCalculus;
use crate::fields::{SampledField, SampledProblem};
use crate::linalg::dense::BorderedSolve;
use crate::linalg::lobpcg::{lobpcg_lowest, FastPoissonPrecond};
use crate::linalg::tridiag::SymTridiag;
use crate::operator::DiscreteOperator;
use crate::twoscale::{field_axpy, x_derivative, xi_derivative};

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("no eigenvalue found in the window [{lo:.6}, {hi:.6}]")]
    EmptyCluster { lo: f64, hi: f64 },
    #[error("cluster is not isolated: gap {gap:.3e} below the required {required:.3e}")]
    NotIsolated { gap: f64, required: f64 },
    #[error("eigensolve failure: {0}")]
    SolveFailure(String),
    #[error("operator layout unsupported for this backend: {0}")]
    Unsupported(String),
}

/// Relative cluster grouping threshold: eigenvalues within
/// `CLUSTER_TOL * (1 + |lambda|)` of each other belong to one cluster.
pub const CLUSTER_TOL: f64 = 1e-6;
/// Matrices up to this dimension go through the dense eigensolver.
pub const DENSE_LIMIT: usize = 2600;
/// Full tridiagonal decompositions are cached up to this dimension.
pub const TRIDIAG_FULL_LIMIT: usize = 4500;

/// Eigenvalues in `[lo, hi]` with vectors, plus the nearest eigenvalues
/// outside the window (when they exist).
pub struct WindowedPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<Complex64>>,
    pub below: Option<f64>,
    pub above: Option<f64>,
}

fn vec_real_to_complex(v: &[f64]) -> DVector<Complex64> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| Complex64::new(x, 0.0)))
}

/// Structure-dispatched extraction of all eigenpairs in a window. The
/// window must sit in the lower part of the spectrum for the large sparse
/// backend (block iteration computes from the bottom up).
pub fn eigen_window(op: &DiscreteOperator, lo: f64, hi: f64) -> Result<WindowedPairs, SpectraError> {
    if let Some(tri) = op.matrix.as_real_tridiag() {
        return Ok(window_from_tridiag(&tri, lo, hi));
    }
    if op.dim() <= DENSE_LIMIT {
        return Ok(window_from_dense(op, lo, hi));
    }
    if op.matrix.is_real() {
        return window_from_lobpcg(op, lo, hi);
    }
    Err(SpectraError::Unsupported(format!(
        "complex operator of dimension {} exceeds the dense limit {}",
        op.dim(),
        DENSE_LIMIT
    )))
}

fn window_from_tridiag(tri: &SymTridiag, lo: f64, hi: f64) -> WindowedPairs {
    let k_lo = tri.count_below(lo);
    let k_hi = tri.count_below(hi);
    let values = tri.eigenvalues_by_index_range(k_lo, k_hi);
    let vectors = tri
        .eigenvectors(&values)
        .into_iter()
        .map(|v| vec_real_to_complex(&v))
        .collect();
    let below = if k_lo > 0 { Some(tri.eigenvalue_by_index(k_lo - 1)) } else { None };
    let above = if k_hi < tri.dim() { Some(tri.eigenvalue_by_index(k_hi)) } else { None };
    WindowedPairs { values, vectors, below, above }
}

fn window_from_dense(op: &DiscreteOperator, lo: f64, hi: f64) -> WindowedPairs {
    let (vals, vecs): (Vec<f64>, Vec<DVector<Complex64>>) = if op.matrix.is_real() {
        let dense = op.matrix.to_dense().map(|z| z.re);
        let (v, m) = crate::linalg::dense::real_symmetric_eigen(&dense);
        let vecs = (0..v.len())
            .map(|j| DVector::from_iterator(m.nrows(), m.column(j).iter().map(|&x| Complex64::new(x, 0.0))))
            .collect();
        (v, vecs)
    } else {
        let dense = op.matrix.to_dense();
        crate::linalg::hermeig::hermitian_eigen_full(&dense)
    };
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    let mut below = None;
    let mut above = None;
    for (v, vec) in vals.iter().zip(vecs) {
        if *v < lo {
            below = Some(*v);
        } else if *v > hi {
            if above.is_none() {
                above = Some(*v);
            }
        } else {
            values.push(*v);
            vectors.push(vec);
        }
    }
    WindowedPairs { values, vectors, below, above }
}

fn window_from_lobpcg(op: &DiscreteOperator, lo: f64, hi: f64) -> Result<WindowedPairs, SpectraError> {
    let shift = (op.precond_potential - hi).max(0.1);
    let pre = FastPoissonPrecond::new(
        vec![op.grid.interior_per_axis(); op.grid.dim],
        op.precond_diffusion.clone(),
        vec![op.grid.spacing(); op.grid.dim],
        shift,
    );
    let mut nev = 8usize;
    loop {
        let out = lobpcg_lowest(&op.matrix, Some(&pre), nev, 4, 1e-9, 500, 0x05c1_u64);
        if !out.converged {
            return Err(SpectraError::SolveFailure(format!(
                "block iteration did not converge for {} pairs in {} iterations",
                nev, out.iterations
            )));
        }
        // need full coverage of the window: some converged eigenvalue above hi
        if let Some(pos) = out.eigenvalues.iter().position(|&v| v > hi) {
            let mut values = Vec::new();
            let mut vectors = Vec::new();
            let mut below = None;
            for (v, vec) in out.eigenvalues.iter().take(pos).zip(out.eigenvectors.iter()) {
                if *v < lo {
                    below = Some(*v);
                } else {
                    values.push(*v);
                    vectors.push(vec_real_to_complex(vec));
                }
            }
            return Ok(WindowedPairs { values, vectors, below, above: Some(out.eigenvalues[pos]) });
        }
        nev *= 2;
        if nev > 64 {
            return Err(SpectraError::Unsupported(
                "window is not in the lower part of the spectrum reachable by the block iteration"
                    .into(),
            ));
        }
    }
}

/// The k lowest eigenvalues (no vectors), for window placement.
pub fn lowest_eigenvalues(op: &DiscreteOperator, count: usize) -> Result<Vec<f64>, SpectraError> {
    if let Some(tri) = op.matrix.as_real_tridiag() {
        return Ok(tri.eigenvalues_by_index_range(0, count.min(tri.dim())));
    }
    if op.dim() <= DENSE_LIMIT {
        let vals = if op.matrix.is_real() {
            let dense = op.matrix.to_dense().map(|z| z.re);
            crate::linalg::dense::real_symmetric_eigen(&dense).0
        } else {
            crate::linalg::hermeig::hermitian_eigenvalues(&op.matrix.to_dense())
        };
        return Ok(vals.into_iter().take(count).collect());
    }
    if op.matrix.is_real() {
        let shift = 1.0;
        let pre = FastPoissonPrecond::new(
            vec![op.grid.interior_per_axis(); op.grid.dim],
            op.precond_diffusion.clone(),
            vec![op.grid.spacing(); op.grid.dim],
            shift,
        );
        let out = lobpcg_lowest(&op.matrix, Some(&pre), count, 4, 1e-9, 500, 0x05c1_u64);
        if !out.converged {
            return Err(SpectraError::SolveFailure("block iteration did not converge".into()));
        }
        return Ok(out.eigenvalues.into_iter().take(count).collect());
    }
    Err(SpectraError::Unsupported("large complex operator".into()))
}

/// Isolated eigenvalue cluster: mean value, multiplicity, orthonormal basis
/// in the L2 normalization, measured gap to the rest of the spectrum.
pub struct EigenCluster {
    pub lambda0: f64,
    pub multiplicity: usize,
    pub basis: Vec<DVector<Complex64>>,
    pub gap: f64,
    pub max_residual: f64,
}

/// Extract the cluster nearest `target` inside `[target - radius,
/// target + radius]`, grouped by the relative threshold, orthonormalized in
/// L2, and checked for isolation.
pub fn eigen_cluster(
    op: &DiscreteOperator,
    target: f64,
    radius: f64,
) -> Result<EigenCluster, SpectraError> {
    let lo = target - radius;
    let hi = target + radius;
    let win = eigen_window(op, lo, hi)?;
    if win.values.is_empty() {
        return Err(SpectraError::EmptyCluster { lo, hi });
    }
    // chain-group the in-window eigenvalues
    let nearest = win
        .values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().partial_cmp(&(b.1 - target).abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let scale = 1.0 + win.values[nearest].abs();
    let group_tol = CLUSTER_TOL * scale;
    let mut first = nearest;
    while first > 0 && win.values[first] - win.values[first - 1] <= group_tol {
        first -= 1;
    }
    let mut last = nearest;
    while last + 1 < win.values.len() && win.values[last + 1] - win.values[last] <= group_tol {
        last += 1;
    }
    let cluster_vals = &win.values[first..=last];
    let lambda0 = cluster_vals.iter().sum::<f64>() / cluster_vals.len() as f64;

    // gap: nearest eigenvalue not in the cluster (inside or outside the window)
    let mut gap = f64::INFINITY;
    if first > 0 {
        gap = gap.min(lambda0 - win.values[first - 1]);
    } else if let Some(b) = win.below {
        gap = gap.min(lambda0 - b);
    }
    if last + 1 < win.values.len() {
        gap = gap.min(win.values[last + 1] - lambda0);
    } else if let Some(a) = win.above {
        gap = gap.min(a - lambda0);
    }
    let required = 10.0 * CLUSTER_TOL * (1.0 + lambda0.abs());
    if gap <= required {
        return Err(SpectraError::NotIsolated { gap, required });
    }

    // orthonormalize in the L2 normalization
    let w = op.grid.weight();
    let mut basis: Vec<DVector<Complex64>> = Vec::new();
    for v in &win.vectors[first..=last] {
        let mut u = v.clone();
        for b in &basis {
            let proj = b.dotc(&u) * Complex64::new(w, 0.0);
            u -= b * proj;
        }
        let nrm = (u.dotc(&u).re * w).sqrt();
        basis.push(u / Complex64::new(nrm, 0.0));
    }
    let mut max_residual = 0.0f64;
    for b in &basis {
        let hb = op.matrix.matvec_dvector(b);
        let r = &hb - b * Complex64::new(lambda0, 0.0);
        max_residual = max_residual.max((r.dotc(&r).re * w).sqrt());
    }
    Ok(EigenCluster {
        lambda0,
        multiplicity: cluster_vals.len(),
        basis,
        gap,
        max_residual,
    })
}

/// Outcome of a reduced-resolvent solve.
pub struct ResolventOutcome {
    pub solution: DVector<Complex64>,
    /// L2 norm of the cluster component of the right-hand side (must vanish
    /// when the macroscopic solvability condition holds)
    pub kernel_defect: f64,
    pub relative_residual: f64,
}

enum ResolventBackend {
    /// bordered saddle-point factorization of `[[H - lambda0, C], [C^H, 0]]`
    Dense(Box<BorderedSolve>),
    /// full spectral decomposition of a real symmetric tridiagonal operator
    TridiagSpectral { values: Vec<f64>, vectors: Vec<Vec<f64>>, skip: Vec<usize> },
}

/// Solver for `(H - lambda0) u = P_perp g`, `u` orthogonal to the cluster.
pub struct ReducedResolvent<'a> {
    op: &'a DiscreteOperator,
    cluster: &'a EigenCluster,
    backend: ResolventBackend,
}

impl<'a> ReducedResolvent<'a> {
    pub fn new(op: &'a DiscreteOperator, cluster: &'a EigenCluster) -> Result<Self, SpectraError> {
        let backend = if let Some(tri) = op.matrix.as_real_tridiag() {
            if tri.dim() > TRIDIAG_FULL_LIMIT {
                return Err(SpectraError::Unsupported(format!(
                    "tridiagonal spectral resolvent capped at {TRIDIAG_FULL_LIMIT} unknowns, got {}",
                    tri.dim()
                )));
            }
            let values = tri.eigenvalues_all();
            let vectors = tri.eigenvectors(&values);
            // mark the cluster members by proximity to lambda0
            let tol = 10.0 * CLUSTER_TOL * (1.0 + cluster.lambda0.abs());
            let skip: Vec<usize> = values
                .iter()
                .enumerate()
                .filter(|(_, &v)| (v - cluster.lambda0).abs() < tol)
                .map(|(i, _)| i)
                .collect();
            if skip.len() != cluster.multiplicity {
                return Err(SpectraError::SolveFailure(format!(
                    "cluster membership mismatch: {} spectral lines inside the cluster window, multiplicity {}",
                    skip.len(),
                    cluster.multiplicity
                )));
            }
            ResolventBackend::TridiagSpectral { values, vectors, skip }
        } else if op.dim() <= DENSE_LIMIT {
            let mut dense = op.matrix.to_dense();
            for i in 0..dense.nrows() {
                dense[(i, i)] -= Complex64::new(cluster.lambda0, 0.0);
            }
            let mut border = DMatrix::<Complex64>::zeros(op.dim(), cluster.multiplicity);
            for (j, b) in cluster.basis.iter().enumerate() {
                border.set_column(j, b);
            }
            ResolventBackend::Dense(Box::new(BorderedSolve::new(&dense, &border)))
        } else {
            return Err(SpectraError::Unsupported(
                "reduced resolvent needs a tridiagonal or dense-size operator".into(),
            ));
        };
        Ok(Self { op, cluster, backend })
    }

    pub fn solve(&self, g: &DVector<Complex64>) -> ResolventOutcome {
        let w = self.op.grid.weight();
        // cluster component of g in the L2 pairing
        let mut defect_sq = 0.0;
        let mut g_perp = g.clone();
        for b in &self.cluster.basis {
            let coef = b.dotc(&g_perp) * Complex64::new(w, 0.0);
            defect_sq += coef.norm_sqr();
            g_perp -= b * coef;
        }
        let kernel_defect = defect_sq.sqrt();

        let solution = match &self.backend {
            ResolventBackend::Dense(solver) => {
                let (mut x, _mu) = solver.solve(&g_perp);
                // exact re-projection off the cluster
                for b in &self.cluster.basis {
                    let coef = b.dotc(&x) * Complex64::new(w, 0.0);
                    x -= b * coef;
                }
                x
            }
            ResolventBackend::TridiagSpectral { values, vectors, skip } => {
                let n = g.len();
                let mut out = DVector::<Complex64>::zeros(n);
                for (k, (val, vec)) in values.iter().zip(vectors).enumerate() {
                    if skip.contains(&k) {
                        continue;
                    }
                    let mut coef = Complex64::new(0.0, 0.0);
                    for (vi, gi) in vec.iter().zip(g_perp.iter()) {
                        coef += Complex64::new(*vi, 0.0) * gi;
                    }
                    coef /= Complex64::new(val - self.cluster.lambda0, 0.0);
                    for (oi, vi) in out.iter_mut().zip(vec) {
                        *oi += coef * Complex64::new(*vi, 0.0);
                    }
                }
                out
            }
        };

        let hu = self.op.matrix.matvec_dvector(&solution);
        let res = &hu - &solution * Complex64::new(self.cluster.lambda0, 0.0) - &g_perp;
        let scale = (g_perp.dotc(&g_perp).re * w).sqrt();
        let relative_residual = (res.dotc(&res).re * w).sqrt() / scale.max(1e-300);
        ResolventOutcome { solution, kernel_defect, relative_residual }
    }
}

/// `K_{-1} u = B(d_xi)^* A B(d_x) u + B(d_x)^* A B(d_xi) u + a(x, xi, d_xi) u`
/// applied sample-wise to a two-scale field (x by centered differences, xi
/// spectrally).
pub fn apply_k_minus1(
    ws: &SampledProblem,
    calc: &CellCalculus,
    u: &SampledField,
) -> SampledField {
    let spec = &ws.problem.spec;
    let (n, m, d) = (spec.n, spec.m, spec.dim);
    let nx = u.x_count;
    let g = u.xi_count;
    let mut out = SampledField::zeros(nx, g, n, 1);

    // B(d_x) u then A then B(d_xi)^*
    let mut ab_dx = SampledField::zeros(nx, g, m, 1);
    for axis in 0..d {
        let du = x_derivative(&ws.sgrid, u, axis);
        let b = &spec.b_mats[axis];
        for ix in 0..nx {
            for iq in 0..g {
                for r in 0..m {
                    let mut s = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        s += b[(r, c)] * du.entry(ix, iq, c, 0);
                    }
                    *ab_dx.entry_mut(ix, iq, r, 0) += s;
                }
            }
        }
    }
    // multiply by A pointwise
    for ix in 0..nx {
        for iq in 0..g {
            let a = ws.a.at(ix, iq);
            let v = DVector::from_fn(m, |r, _| ab_dx.entry(ix, iq, r, 0));
            let av = a * v;
            for r in 0..m {
                *ab_dx.entry_mut(ix, iq, r, 0) = av[r];
            }
        }
    }
    for axis in 0..d {
        let dv = xi_derivative(calc, &ab_dx, axis);
        let b = &spec.b_mats[axis];
        for ix in 0..nx {
            for iq in 0..g {
                for c in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for r in 0..m {
                        s += b[(r, c)].conj() * dv.entry(ix, iq, r, 0);
                    }
                    *out.entry_mut(ix, iq, c, 0) -= s;
                }
            }
        }
    }

    // B(d_xi) u then A then B(d_x)^*
    let mut ab_dxi = SampledField::zeros(nx, g, m, 1);
    for axis in 0..d {
        let du = xi_derivative(calc, u, axis);
        let b = &spec.b_mats[axis];
        for ix in 0..nx {
            for iq in 0..g {
                for r in 0..m {
                    let mut s = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        s += b[(r, c)] * du.entry(ix, iq, c, 0);
                    }
                    *ab_dxi.entry_mut(ix, iq, r, 0) += s;
                }
            }
        }
    }
    for ix in 0..nx {
        for iq in 0..g {
            let a = ws.a.at(ix, iq);
            let v = DVector::from_fn(m, |r, _| ab_dxi.entry(ix, iq, r, 0));
            let av = a * v;
            for r in 0..m {
                *ab_dxi.entry_mut(ix, iq, r, 0) = av[r];
            }
        }
    }
    for axis in 0..d {
        let dv = x_derivative(&ws.sgrid, &ab_dxi, axis);
        let b = &spec.b_mats[axis];
        for ix in 0..nx {
            for iq in 0..g {
                for c in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for r in 0..m {
                        s += b[(r, c)].conj() * dv.entry(ix, iq, r, 0);
                    }
                    *out.entry_mut(ix, iq, c, 0) -= s;
                }
            }
        }
    }

    // drift in the fast variable: a_i d_xi_i (b_i u) - b_i^H d_xi_i (a_i^H u)
    for i in 0..ws.drift_a.len() {
        let mut bu = SampledField::zeros(nx, g, n, 1);
        let mut au = SampledField::zeros(nx, g, n, 1);
        for ix in 0..nx {
            let bmat = ws.drift_b[i].at(ix, 0);
            for iq in 0..g {
                let amat_h = ws.drift_a[i].at(ix, iq).adjoint();
                for r in 0..n {
                    let mut s1 = Complex64::new(0.0, 0.0);
                    let mut s2 = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        s1 += bmat[(r, c)] * u.entry(ix, iq, c, 0);
                        s2 += amat_h[(r, c)] * u.entry(ix, iq, c, 0);
                    }
                    *bu.entry_mut(ix, iq, r, 0) = s1;
                    *au.entry_mut(ix, iq, r, 0) = s2;
                }
            }
        }
        let dbu = xi_derivative(calc, &bu, i);
        let dau = xi_derivative(calc, &au, i);
        for ix in 0..nx {
            let bmat_h = ws.drift_b[i].at(ix, 0).adjoint();
            for iq in 0..g {
                let amat = ws.drift_a[i].at(ix, iq);
                for r in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        s += amat[(r, c)] * dbu.entry(ix, iq, c, 0);
                        s -= bmat_h[(r, c)] * dau.entry(ix, iq, c, 0);
                    }
                    *out.entry_mut(ix, iq, r, 0) += s;
                }
            }
        }
    }
    out
}

/// `K_0 u = B(d_x)^* A B(d_x) u + a(x, xi, d_x) u + V u`.
pub fn apply_k0(ws: &SampledProblem, u: &SampledField) -> SampledField {
    let spec = &ws.problem.spec;
    let (n, m, d) = (spec.n, spec.m, spec.dim);
    let nx = u.x_count;
    let g = u.xi_count;
    let mut out = SampledField::zeros(nx, g, n, 1);

    let mut ab_dx = SampledField::zeros(nx, g, m, 1);
    for axis in 0..d {
        let du = x_derivative(&ws.sgrid, u, axis);
        let b = &spec.b_mats[axis];
        for ix in 0..nx {
            for iq in 0..g {
                for r in 0..m {
                    let mut s = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        s += b[(r, c)] * du.entry(ix, iq, c, 0);
                    }
                    *ab_dx.entry_mut(ix, iq, r, 0) += s;
                }
            }
        }
    }
    for ix in 0..nx {
        for iq in 0..g {
            let a = ws.a.at(ix, iq);
            let v = DVector::from_fn(m, |r, _| ab_dx.entry(ix, iq, r, 0));
            let av = a * v;
            for r in 0..m {
                *ab_dx.entry_mut(ix, iq, r, 0) = av[r];
            }
        }
    }
    for axis in 0..d {
        let dv = x_derivative(&ws.sgrid, &ab_dx, axis);
        let b = &spec.b_mats[axis];
        for ix in 0..nx {
            for iq in 0..g {
                for c in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for r in 0..m {
                        s += b[(r, c)].conj() * dv.entry(ix, iq, r, 0);
                    }
                    *out.entry_mut(ix, iq, c, 0) -= s;
                }
            }
        }
    }

    for i in 0..ws.drift_a.len() {
        let mut bu = SampledField::zeros(nx, g, n, 1);
        let mut au = SampledField::zeros(nx, g, n, 1);
        for ix in 0..nx {
            let bmat = ws.drift_b[i].at(ix, 0);
            for iq in 0..g {
                let amat_h = ws.drift_a[i].at(ix, iq).adjoint();
                for r in 0..n {
                    let mut s1 = Complex64::new(0.0, 0.0);
                    let mut s2 = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        s1 += bmat[(r, c)] * u.entry(ix, iq, c, 0);
                        s2 += amat_h[(r, c)] * u.entry(ix, iq, c, 0);
                    }
                    *bu.entry_mut(ix, iq, r, 0) = s1;
                    *au.entry_mut(ix, iq, r, 0) = s2;
                }
            }
        }
        let dbu = x_derivative(&ws.sgrid, &bu, i);
        let dau = x_derivative(&ws.sgrid, &au, i);
        for ix in 0..nx {
            let bmat_h = ws.drift_b[i].at(ix, 0).adjoint();
            for iq in 0..g {
                let amat = ws.drift_a[i].at(ix, iq);
                for r in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        s += amat[(r, c)] * dbu.entry(ix, iq, c, 0);
                        s -= bmat_h[(r, c)] * dau.entry(ix, iq, c, 0);
                    }
                    *out.entry_mut(ix, iq, r, 0) += s;
                }
            }
        }
    }

    // potential term
    for ix in 0..nx {
        for iq in 0..g {
            let v = ws.v.at(ix, iq);
            for r in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for c in 0..n {
                    s += v[(r, c)] * u.entry(ix, iq, c, 0);
                }
                *out.entry_mut(ix, iq, r, 0) += s;
            }
        }
    }
    out
}

/// `(K_0 - lambda) u` helper used by the correction cascade.
pub fn apply_k0_shifted(
    ws: &SampledProblem,
    u: &SampledField,
    lambda: f64,
) -> SampledField {
    let k0u = apply_k0(ws, u);
    field_axpy(Complex64::new(-lambda, 0.0), u, &k0u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::compute_correctors;
    use crate::fields::{validate_problem, CellBox, CellGrid, MatrixClosure, ProblemSpec, SpatialGrid};
    use crate::homogenize::{assemble_coefficients, assemble_h0};
    use crate::twoscale::two_scale_inner;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn scalar(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> MatrixClosure {
        Arc::new(move |x, xi| DMatrix::from_element(1, 1, Complex64::new(f(x, xi), 0.0)))
    }

    fn well_1d(m_pts: usize) -> (SampledProblem, DiscreteOperator) {
        let spec = ProblemSpec {
            dim: 1,
            n: 1,
            m: 1,
            b_mats: vec![DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0))],
            coeff_a: scalar(|_, _| 1.0),
            drift_a: vec![],
            drift_b: vec![],
            potential: scalar(|x, _| -2.0 * (-x[0] * x[0]).exp()),
            cell: CellBox::unit(1),
        };
        let sgrid = SpatialGrid::new(1, 10.0, m_pts).unwrap();
        let cgrid = CellGrid::new(CellBox::unit(1), 8).unwrap();
        let vp = validate_problem(&spec, &sgrid, &cgrid).unwrap();
        let ws = SampledProblem::build(vp, sgrid, cgrid);
        let cells = compute_correctors(&ws).unwrap();
        let homog = assemble_coefficients(&ws, &cells);
        let h0 = assemble_h0(&ws, &homog).unwrap();
        (ws, h0)
    }

    #[test]
    fn ground_state_cluster_of_the_well() {
        let (ws, h0) = well_1d(401);
        let lows = lowest_eigenvalues(&h0, 3).unwrap();
        assert!(lows[0] < -0.5, "well must bind: {}", lows[0]);
        let cluster = eigen_cluster(&h0, lows[0], 0.5 * (lows[1] - lows[0])).unwrap();
        assert_eq!(cluster.multiplicity, 1);
        assert!(cluster.gap > 1e-2);
        assert!(cluster.max_residual < 1e-8 * (1.0 + cluster.lambda0.abs()));
        // L2 normalization
        let w = ws.sgrid.weight();
        let nrm = (cluster.basis[0].dotc(&cluster.basis[0]).re * w).sqrt();
        assert_abs_diff_eq!(nrm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_window_reports_empty_cluster() {
        let (_, h0) = well_1d(201);
        match eigen_cluster(&h0, -40.0, 1.0) {
            Err(SpectraError::EmptyCluster { .. }) => {}
            _ => panic!("expected empty cluster"),
        }
    }

    #[test]
    fn separable_2d_well_has_double_cluster() {
        // -Laplace + W(x1) + W(x2): first excited level is exactly double
        let spec = ProblemSpec {
            dim: 2,
            n: 1,
            m: 2,
            b_mats: vec![
                DMatrix::from_column_slice(2, 1, &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]),
                DMatrix::from_column_slice(2, 1, &[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]),
            ],
            coeff_a: Arc::new(|_, _| DMatrix::identity(2, 2) * Complex64::new(1.0, 0.0)),
            drift_a: vec![],
            drift_b: vec![],
            potential: scalar(|x, _| {
                -8.0 * ((-x[0] * x[0]).exp() + (-x[1] * x[1]).exp())
            }),
            cell: CellBox::unit(2),
        };
        let sgrid = SpatialGrid::new(2, 6.0, 43).unwrap();
        let cgrid = CellGrid::new(CellBox::unit(2), 8).unwrap();
        let vp = validate_problem(&spec, &sgrid, &cgrid).unwrap();
        let ws = SampledProblem::build(vp, sgrid, cgrid);
        let cells = compute_correctors(&ws).unwrap();
        let homog = assemble_coefficients(&ws, &cells);
        let h0 = assemble_h0(&ws, &homog).unwrap();
        let lows = lowest_eigenvalues(&h0, 4).unwrap();
        // oracle: product of 1d spectra says level 2 and 3 coincide
        assert!((lows[1] - lows[2]).abs() < 1e-9, "{:?}", lows);
        let cluster = eigen_cluster(&h0, lows[1], 0.45 * (lows[3] - lows[1]).min(lows[1] - lows[0])).unwrap();
        assert_eq!(cluster.multiplicity, 2);
        // basis orthonormal
        let w = ws.sgrid.weight();
        for i in 0..2 {
            for j in 0..=i {
                let g = cluster.basis[j].dotc(&cluster.basis[i]) * Complex64::new(w, 0.0);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - Complex64::new(expect, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn resolvent_kernel_direction_gives_zero_and_full_defect() {
        let (ws, h0) = well_1d(301);
        let lows = lowest_eigenvalues(&h0, 2).unwrap();
        let cluster = eigen_cluster(&h0, lows[0], 0.5 * (lows[1] - lows[0])).unwrap();
        let rr = ReducedResolvent::new(&h0, &cluster).unwrap();
        let g = cluster.basis[0].clone();
        let out = rr.solve(&g);
        let w = ws.sgrid.weight();
        let sol_norm = (out.solution.dotc(&out.solution).re * w).sqrt();
        assert!(sol_norm < 1e-10, "solution should vanish, norm {sol_norm}");
        assert_abs_diff_eq!(out.kernel_defect, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn resolvent_solves_perp_equation() {
        let (ws, h0) = well_1d(301);
        let lows = lowest_eigenvalues(&h0, 2).unwrap();
        let cluster = eigen_cluster(&h0, lows[0], 0.5 * (lows[1] - lows[0])).unwrap();
        let rr = ReducedResolvent::new(&h0, &cluster).unwrap();
        // g orthогonal to the cluster: (H - lambda0) u must reproduce g
        let dim = h0.dim();
        let mut g = DVector::<Complex64>::zeros(dim);
        for i in 0..dim {
            let x = ws.sgrid.node_coord(i)[0];
            g[i] = Complex64::new((-0.5 * x * x).exp() * x, 0.0);
        }
        let w = ws.sgrid.weight();
        for b in &cluster.basis {
            let c = b.dotc(&g) * Complex64::new(w, 0.0);
            g -= b * c;
        }
        let out = rr.solve(&g);
        assert!(out.relative_residual < 1e-8, "residual {}", out.relative_residual);
        // orthogonality
        for b in &cluster.basis {
            let c = (b.dotc(&out.solution) * Complex64::new(w, 0.0)).norm();
            assert!(c < 1e-10, "overlap {c}");
        }
        // constructed pre-image: g2 = (H - lambda0) w for w perp cluster
        let mut wv = out.solution.clone();
        wv /= Complex64::new((wv.dotc(&wv).re * w).sqrt(), 0.0);
        let hw = h0.matrix.matvec_dvector(&wv);
        let g2 = &hw - &wv * Complex64::new(cluster.lambda0, 0.0);
        let out2 = rr.solve(&g2);
        let diff = &out2.solution - &wv;
        assert!((diff.dotc(&diff).re * w).sqrt() < 1e-8);
    }

    fn drift_workspace() -> (SampledProblem, CellCalculus) {
        let spec = ProblemSpec {
            dim: 1,
            n: 1,
            m: 1,
            b_mats: vec![DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0))],
            coeff_a: scalar(|_, xi| 2.0 + (2.0 * std::f64::consts::PI * xi[0]).cos()),
            drift_a: vec![scalar(|_, xi| (2.0 * std::f64::consts::PI * xi[0]).cos())],
            drift_b: vec![Arc::new(|_| DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)))],
            potential: scalar(|x, _| -(-x[0] * x[0]).exp()),
            cell: CellBox::unit(1),
        };
        let sgrid = SpatialGrid::new(1, 5.0, 65).unwrap();
        let cgrid = CellGrid::new(CellBox::unit(1), 16).unwrap();
        let vp = validate_problem(&spec, &sgrid, &cgrid).unwrap();
        let ws = SampledProblem::build(vp, sgrid, cgrid);
        let calc = CellCalculus::new(&ws.cgrid);
        (ws, calc)
    }

    #[test]
    fn k_minus1_on_slow_field_matches_hand_expansion() {
        let (ws, calc) = drift_workspace();
        let nx = ws.sgrid.node_count();
        let g = ws.cgrid.node_count();
        // u(x) = exp(-x^2), xi-independent
        let mut u = SampledField::zeros(nx, g, 1, 1);
        for ix in 0..nx {
            let x = ws.sgrid.node_coord(ix)[0];
            for iq in 0..g {
                *u.entry_mut(ix, iq, 0, 0) = Complex64::new((-x * x).exp(), 0.0);
            }
        }
        let ku = apply_k_minus1(&ws, &calc, &u);
        // hand expansion: -dA/dxi * du/dx - b dA_drift^*/dxi * u
        let h = ws.sgrid.spacing();
        for ix in [5usize, 20, 40] {
            let x = ws.sgrid.node_coord(ix)[0];
            // centered-difference derivative of exp(-x^2) as the code uses
            let up = (-(x + h) * (x + h)).exp();
            let dn = (-(x - h) * (x - h)).exp();
            let dudx = (up - dn) / (2.0 * h);
            for iq in [0usize, 3, 7] {
                let xi = ws.cgrid.node_coord(iq)[0];
                let tp = 2.0 * std::f64::consts::PI;
                let da = -tp * (tp * xi).sin();
                let da_drift = -tp * (tp * xi).sin();
                let expect = -da * dudx - da_drift * (-x * x).exp();
                assert_abs_diff_eq!(ku.entry(ix, iq, 0, 0).re, expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn k_minus1_is_symmetric_on_decaying_fields() {
        let (ws, calc) = drift_workspace();
        let nx = ws.sgrid.node_count();
        let g = ws.cgrid.node_count();
        let tp = 2.0 * std::f64::consts::PI;
        let mut u = SampledField::zeros(nx, g, 1, 1);
        let mut v = SampledField::zeros(nx, g, 1, 1);
        for ix in 0..nx {
            let x = ws.sgrid.node_coord(ix)[0];
            for iq in 0..g {
                let xi = ws.cgrid.node_coord(iq)[0];
                *u.entry_mut(ix, iq, 0, 0) =
                    Complex64::new((-x * x).exp() * (1.0 + 0.3 * (tp * xi).cos()), 0.1 * (tp * xi).sin());
                *v.entry_mut(ix, iq, 0, 0) =
                    Complex64::new((-0.7 * x * x).exp() * (tp * xi).sin(), 0.2 * (-x * x).exp());
            }
        }
        let ku = apply_k_minus1(&ws, &calc, &u);
        let kv = apply_k_minus1(&ws, &calc, &v);
        let lhs = two_scale_inner(&ws.sgrid, &ku, &v);
        let rhs = two_scale_inner(&ws.sgrid, &u, &kv);
        assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()), "{lhs} vs {rhs}");
    }

    #[test]
    fn k0_is_symmetric_too() {
        let (ws, _calc) = drift_workspace();
        let nx = ws.sgrid.node_count();
        let g = ws.cgrid.node_count();
        let tp = 2.0 * std::f64::consts::PI;
        let mut u = SampledField::zeros(nx, g, 1, 1);
        let mut v = SampledField::zeros(nx, g, 1, 1);
        for ix in 0..nx {
            let x = ws.sgrid.node_coord(ix)[0];
            for iq in 0..g {
                let xi = ws.cgrid.node_coord(iq)[0];
                *u.entry_mut(ix, iq, 0, 0) = Complex64::new((-x * x).exp(), 0.1 * (tp * xi).cos());
                *v.entry_mut(ix, iq, 0, 0) = Complex64::new(x * (-x * x).exp(), 0.0);
            }
        }
        let ku = apply_k0(&ws, &u);
        let kv = apply_k0(&ws, &v);
        let lhs = two_scale_inner(&ws.sgrid, &ku, &v);
        let rhs = two_scale_inner(&ws.sgrid, &u, &kv);
        assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let (ws, calc) = drift_workspace();
        let u = SampledField::zeros(ws.sgrid.node_count(), ws.cgrid.node_count(), 1, 1);
        assert_eq!(apply_k_minus1(&ws, &calc, &u).norm(), 0.0);
        assert_eq!(apply_k0(&ws, &u).norm(), 0.0);
    }
}
