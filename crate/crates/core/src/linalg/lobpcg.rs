//! Block preconditioned eigensolver (LOBPCG) for the lowest eigenpairs of a
//! large real symmetric operator, used where a dense factorization of the
//! fine-grid operator does not fit. The preconditioner inverts the constant
//! coefficient part of the operator by fast diagonalization (DST-I per axis).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::fftutil::DstPlan;

pub trait RealSymOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

impl RealSymOp for super::csr::CsrMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec_real(x)
    }
}

/// Inverse of `sum_i -a_i d^2/dx_i^2 + shift` on a Dirichlet box grid,
/// applied via DST-I diagonalization axis by axis.
pub struct FastPoissonPrecond {
    dims: Vec<usize>,
    plans: Vec<DstPlan>,
    /// per-axis discrete Laplacian eigenvalues already scaled by a_i/h^2
    axis_eigs: Vec<Vec<f64>>,
    shift: f64,
}

impl FastPoissonPrecond {
    /// `dims`: interior points per axis; `coeff[i]` the diffusion constant
    /// along axis i; `spacing[i]` the grid step.
    pub fn new(dims: Vec<usize>, coeff: Vec<f64>, spacing: Vec<f64>, shift: f64) -> Self {
        let plans: Vec<DstPlan> = dims.iter().map(|&n| DstPlan::new(n)).collect();
        let axis_eigs = dims
            .iter()
            .zip(coeff.iter().zip(&spacing))
            .map(|(&n, (&a, &h))| {
                (1..=n)
                    .map(|k| {
                        let t = std::f64::consts::PI * k as f64 / (n as f64 + 1.0);
                        a * (2.0 - 2.0 * t.cos()) / (h * h)
                    })
                    .collect()
            })
            .collect();
        Self { dims, plans, axis_eigs, shift }
    }

    fn dst_axis(&self, axis: usize, data: &mut [f64]) {
        match self.dims.len() {
            1 => self.plans[0].apply(data),
            2 => {
                let (n0, n1) = (self.dims[0], self.dims[1]);
                if axis == 1 {
                    let plan = &self.plans[1];
                    let rows: Vec<Vec<f64>> = data
                        .par_chunks(n1)
                        .map(|row| {
                            let mut r = row.to_vec();
                            plan.apply(&mut r);
                            r
                        })
                        .collect();
                    for (i, r) in rows.into_iter().enumerate() {
                        data[i * n1..(i + 1) * n1].copy_from_slice(&r);
                    }
                } else {
                    let plan = &self.plans[0];
                    let cols: Vec<Vec<f64>> = (0..n1)
                        .into_par_iter()
                        .map(|j| {
                            let mut c: Vec<f64> = (0..n0).map(|i| data[i * n1 + j]).collect();
                            plan.apply(&mut c);
                            c
                        })
                        .collect();
                    for (j, c) in cols.into_iter().enumerate() {
                        for i in 0..n0 {
                            data[i * n1 + j] = c[i];
                        }
                    }
                }
            }
            d => panic!("preconditioner supports 1 or 2 axes, got {d}"),
        }
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut x = r.to_vec();
        let d = self.dims.len();
        for axis in 0..d {
            self.dst_axis(axis, &mut x);
        }
        match d {
            1 => {
                for (i, v) in x.iter_mut().enumerate() {
                    let lam = self.axis_eigs[0][i] + self.shift;
                    *v /= lam.max(1e-10);
                }
            }
            2 => {
                let (n0, n1) = (self.dims[0], self.dims[1]);
                for i in 0..n0 {
                    for j in 0..n1 {
                        let lam = self.axis_eigs[0][i] + self.axis_eigs[1][j] + self.shift;
                        x[i * n1 + j] /= lam.max(1e-10);
                    }
                }
            }
            _ => unreachable!(),
        }
        for axis in 0..d {
            self.dst_axis(axis, &mut x);
        }
        // DST-I applied twice along an axis scales by (n+1)/2
        let scale: f64 = self.dims.iter().map(|&n| 2.0 / (n as f64 + 1.0)).product();
        for v in x.iter_mut() {
            *v *= scale;
        }
        x
    }
}

pub struct LobpcgOutcome {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(16384)
        .zip(b.par_chunks(16384))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partials.iter().sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Modified Gram-Schmidt of `block` against `fixed` blocks and itself;
/// columns that collapse below the drop tolerance are removed.
fn orthonormalize(block: &mut Vec<Vec<f64>>, fixed: &[&Vec<Vec<f64>>]) {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(block.len());
    for mut v in block.drain(..) {
        let orig = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for f in fixed {
                for u in f.iter() {
                    let d = dot(u, &v);
                    axpy(&mut v, -d, u);
                }
            }
            for u in &kept {
                let d = dot(u, &v);
                axpy(&mut v, -d, u);
            }
        }
        let nrm = dot(&v, &v).sqrt();
        if nrm > 1e-10 * (1.0 + orig) {
            v.iter_mut().for_each(|x| *x /= nrm);
            kept.push(v);
        }
    }
    *block = kept;
}

/// Lowest `nev` eigenpairs of a real symmetric operator. `block_extra`
/// buffer vectors improve convergence and supply gap information.
pub fn lobpcg_lowest(
    op: &dyn RealSymOp,
    precond: Option<&FastPoissonPrecond>,
    nev: usize,
    block_extra: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> LobpcgOutcome {
    let n = op.dim();
    let b = (nev + block_extra).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> = (0..b)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    orthonormalize(&mut x, &[]);
    let mut ax: Vec<Vec<f64>> = x.iter().map(|v| op.apply(v)).collect();
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut ap: Vec<Vec<f64>> = Vec::new();
    let mut theta: Vec<f64> = vec![0.0; b];
    let mut resid: Vec<f64> = vec![f64::INFINITY; b];
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..max_iter {
        iterations = it + 1;
        for i in 0..x.len() {
            theta[i] = dot(&x[i], &ax[i]);
        }
        // residuals
        let mut r: Vec<Vec<f64>> = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let mut ri = ax[i].clone();
            axpy(&mut ri, -theta[i], &x[i]);
            resid[i] = dot(&ri, &ri).sqrt();
            r.push(ri);
        }
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| theta[i].partial_cmp(&theta[j]).unwrap());
        if idx.iter().take(nev).all(|&i| resid[i] <= tol * (1.0 + theta[i].abs())) {
            converged = true;
            break;
        }

        let mut w: Vec<Vec<f64>> = r
            .iter()
            .map(|ri| match precond {
                Some(t) => t.apply(ri),
                None => ri.clone(),
            })
            .collect();
        orthonormalize(&mut w, &[&x, &p]);
        if w.is_empty() {
            break;
        }
        let aw: Vec<Vec<f64>> = w.iter().map(|v| op.apply(v)).collect();

        // Rayleigh-Ritz over S = [X P W]
        let s: Vec<&Vec<f64>> = x.iter().chain(p.iter()).chain(w.iter()).collect();
        let asv: Vec<&Vec<f64>> = ax.iter().chain(ap.iter()).chain(aw.iter()).collect();
        let m = s.len();
        let mut gram = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut hmat = nalgebra::DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let g = dot(s[i], s[j]);
                gram[(i, j)] = g;
                gram[(j, i)] = g;
            }
        }
        for i in 0..m {
            for j in 0..m {
                hmat[(i, j)] = dot(s[i], asv[j]);
            }
        }
        let hmat = (hmat.clone() + hmat.transpose()) * 0.5;
        // whiten the basis, dropping numerically null directions
        let ge = gram.symmetric_eigen();
        let mut white_cols: Vec<nalgebra::DVector<f64>> = Vec::new();
        for k in 0..m {
            if ge.eigenvalues[k] > 1e-10 {
                white_cols.push(ge.eigenvectors.column(k) / ge.eigenvalues[k].sqrt());
            }
        }
        let mw = white_cols.len();
        let mut white = nalgebra::DMatrix::<f64>::zeros(m, mw);
        for (k, c) in white_cols.iter().enumerate() {
            white.set_column(k, c);
        }
        let hw = white.transpose() * &hmat * &white;
        let hw = (hw.clone() + hw.transpose()) * 0.5;
        let he = hw.symmetric_eigen();
        let mut ritz: Vec<(f64, usize)> =
            he.eigenvalues.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        ritz.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let keep = b.min(mw);
        let mut coeff = nalgebra::DMatrix::<f64>::zeros(m, keep);
        for (col, &(_, k)) in ritz.iter().take(keep).enumerate() {
            let c = &white * he.eigenvectors.column(k);
            coeff.set_column(col, &c);
        }

        let nx = x.len();
        let _np = p.len();
        let combine = |vecs: &[&Vec<f64>], col: usize, lo: usize, hi: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for bi in lo..hi {
                let c = coeff[(bi, col)];
                if c != 0.0 {
                    axpy(&mut out, c, vecs[bi]);
                }
            }
            out
        };

        let mut x_new = Vec::with_capacity(keep);
        let mut ax_new = Vec::with_capacity(keep);
        let mut p_new = Vec::with_capacity(keep);
        for col in 0..keep {
            let mut xi = combine(&s, col, 0, m);
            let axi_full = combine(&asv, col, 0, m);
            let pi = combine(&s, col, nx, m);
            let nrm = dot(&xi, &xi).sqrt();
            xi.iter_mut().for_each(|v| *v /= nrm);
            let mut axi = axi_full;
            axi.iter_mut().for_each(|v| *v /= nrm);
            x_new.push(xi);
            ax_new.push(axi);
            p_new.push(pi);
        }
        let mut p_keep = p_new;
        orthonormalize(&mut p_keep, &[&x_new]);
        p_keep.truncate(b);
        let ap_keep: Vec<Vec<f64>> = p_keep.iter().map(|v| op.apply(v)).collect();
        x = x_new;
        ax = ax_new;
        p = p_keep;
        ap = ap_keep;
        theta = vec![0.0; x.len()];
        resid = vec![f64::INFINITY; x.len()];
    }

    // final polish: exact Rayleigh quotients and residuals on normalized X
    for i in 0..x.len() {
        let nrm = dot(&x[i], &x[i]).sqrt();
        x[i].iter_mut().for_each(|v| *v /= nrm);
        let axi = op.apply(&x[i]);
        theta[i] = dot(&x[i], &axi);
        let mut ri = axi;
        axpy(&mut ri, -theta[i], &x[i]);
        resid[i] = dot(&ri, &ri).sqrt();
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| theta[i].partial_cmp(&theta[j]).unwrap());
    LobpcgOutcome {
        eigenvalues: order.iter().map(|&i| theta[i]).collect(),
        eigenvectors: order.iter().map(|&i| x[i].clone()).collect(),
        residual_norms: order.iter().map(|&i| resid[i]).collect(),
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::csr::CsrMatrix;
    use num_complex::Complex64;

    fn laplacian_2d(n0: usize, n1: usize, h: f64) -> CsrMatrix {
        let dim = n0 * n1;
        let mut t = Vec::new();
        let idx = |i: usize, j: usize| i * n1 + j;
        let w = 1.0 / (h * h);
        for i in 0..n0 {
            for j in 0..n1 {
                t.push((idx(i, j), idx(i, j), Complex64::new(4.0 * w, 0.0)));
                if i > 0 {
                    t.push((idx(i, j), idx(i - 1, j), Complex64::new(-w, 0.0)));
                }
                if i + 1 < n0 {
                    t.push((idx(i, j), idx(i + 1, j), Complex64::new(-w, 0.0)));
                }
                if j > 0 {
                    t.push((idx(i, j), idx(i, j - 1), Complex64::new(-w, 0.0)));
                }
                if j + 1 < n1 {
                    t.push((idx(i, j), idx(i, j + 1), Complex64::new(-w, 0.0)));
                }
            }
        }
        CsrMatrix::from_triplets(dim, &mut t)
    }

    #[test]
    fn precond_is_exact_inverse_of_constant_operator() {
        let (n0, n1, h) = (11usize, 7usize, 0.3);
        let lap = laplacian_2d(n0, n1, h);
        let shift = 0.7;
        let pre = FastPoissonPrecond::new(vec![n0, n1], vec![1.0, 1.0], vec![h, h], shift);
        let x0: Vec<f64> = (0..n0 * n1).map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0).collect();
        let mut ax = lap.matvec_real(&x0);
        for (a, x) in ax.iter_mut().zip(&x0) {
            *a += shift * x;
        }
        let back = pre.apply(&ax);
        for (bk, xx) in back.iter().zip(&x0) {
            assert!((bk - xx).abs() < 1e-10, "{bk} vs {xx}");
        }
    }

    #[test]
    fn lobpcg_matches_exact_laplacian_spectrum() {
        let (n0, n1, h) = (24usize, 24usize, 0.2);
        let lap = laplacian_2d(n0, n1, h);
        let pre = FastPoissonPrecond::new(vec![n0, n1], vec![1.0, 1.0], vec![h, h], 0.1);
        let out = lobpcg_lowest(&lap, Some(&pre), 4, 4, 1e-10, 200, 42);
        assert!(out.converged, "lobpcg did not converge in {} iters", out.iterations);
        let lam1d = |k: usize| {
            let t = std::f64::consts::PI * k as f64 / (n0 as f64 + 1.0);
            (2.0 - 2.0 * t.cos()) / (h * h)
        };
        let mut exact: Vec<f64> = Vec::new();
        for a in 1..=4 {
            for bi in 1..=4 {
                exact.push(lam1d(a) + lam1d(bi));
            }
        }
        exact.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for i in 0..4 {
            assert!(
                (out.eigenvalues[i] - exact[i]).abs() < 1e-8 * (1.0 + exact[i].abs()),
                "eig {i}: {} vs {}",
                out.eigenvalues[i],
                exact[i]
            );
        }
    }
}
