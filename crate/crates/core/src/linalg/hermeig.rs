//! Complex hermitian dense eigensolver: Householder tridiagonalization with
//! real sub-diagonal output, then Sturm bisection plus inverse iteration on
//! the tridiagonal form, with vectors transformed back through the stored
//! reflectors.

use super::tridiag::SymTridiag;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// `A = Q T Q^H` with `T` real symmetric tridiagonal.
pub struct HermTridiagForm {
    n: usize,
    /// Householder data per step k: vector on indices k+1..n (first entry 1)
    /// and the complex tau.
    reflectors: Vec<(Vec<Complex64>, Complex64)>,
    pub tridiag: SymTridiag,
}

/// Householder generator in LAPACK `zlarfg` convention: given `alpha` and
/// `x`, produces real `beta`, complex `tau` and `v` with
/// `(I - tau [1;v][1;v]^H)^H [alpha;x] = [beta;0]`.
fn larfg(alpha: Complex64, x: &mut [Complex64]) -> (f64, Complex64) {
    let xnorm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if xnorm == 0.0 && alpha.im == 0.0 {
        return (alpha.re, Complex64::new(0.0, 0.0));
    }
    let mag = (alpha.norm_sqr() + xnorm * xnorm).sqrt();
    let beta = if alpha.re >= 0.0 { -mag } else { mag };
    let tau = Complex64::new((beta - alpha.re) / beta, -alpha.im / beta);
    let scale = (alpha - beta).inv();
    for z in x.iter_mut() {
        *z *= scale;
    }
    (beta, tau)
}

impl HermTridiagForm {
    pub fn new(a: &DMatrix<Complex64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let mut w = a.clone();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
        for k in 0..n.saturating_sub(2) {
            let m = n - k - 1; // active block size
            let alpha = w[(k + 1, k)];
            let mut v = vec![Complex64::new(0.0, 0.0); m];
            v[0] = Complex64::new(1.0, 0.0);
            for i in 1..m {
                v[i] = w[(k + 1 + i, k)];
            }
            let (beta, tau) = larfg(alpha, &mut v[1..]);
            off[k] = beta;
            if tau != Complex64::new(0.0, 0.0) {
                // p = tau * W v on the trailing block
                let mut p = vec![Complex64::new(0.0, 0.0); m];
                for i in 0..m {
                    let mut s = Complex64::new(0.0, 0.0);
                    for j in 0..m {
                        s += w[(k + 1 + i, k + 1 + j)] * v[j];
                    }
                    p[i] = tau * s;
                }
                // w_vec = p - (tau/2)(p^H v) v
                let phv: Complex64 = p.iter().zip(&v).map(|(pi, vi)| pi.conj() * vi).sum();
                let corr = tau * phv * 0.5;
                let wv: Vec<Complex64> = p.iter().zip(&v).map(|(pi, vi)| pi - corr * vi).collect();
                // rank-2 hermitian update on the full trailing block
                for i in 0..m {
                    for j in 0..m {
                        let upd = v[i] * wv[j].conj() + wv[i] * v[j].conj();
                        let entry = w[(k + 1 + i, k + 1 + j)] - upd;
                        w[(k + 1 + i, k + 1 + j)] = entry;
                    }
                }
            }
            reflectors.push((v, tau));
        }
        if n >= 2 {
            // the final 2x2 block may carry a complex off-diagonal; rotate it
            let t = w[(n - 1, n - 2)];
            off[n - 2] = t.norm();
            if t.norm() > 0.0 {
                let phase = t / t.norm();
                reflectors.push((vec![phase], Complex64::new(0.0, 0.0)));
            } else {
                reflectors.push((vec![Complex64::new(1.0, 0.0)], Complex64::new(0.0, 0.0)));
            }
        }
        for i in 0..n {
            diag[i] = w[(i, i)].re;
        }
        Self { n, reflectors, tridiag: SymTridiag::new(diag, off) }
    }

    /// Maps a tridiagonal-frame vector back: returns `Q u`.
    pub fn back_transform(&self, u: &[f64]) -> DVector<Complex64> {
        let n = self.n;
        let mut z: Vec<Complex64> =
            u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        // the trailing phase entry rotates the last component
        if n >= 2 {
            let (phase, _) = &self.reflectors[n - 2];
            z[n - 1] *= phase[0];
        }
        for k in (0..n.saturating_sub(2)).rev() {
            let (v, tau) = &self.reflectors[k];
            if *tau == Complex64::new(0.0, 0.0) {
                continue;
            }
            let m = v.len();
            // z <- (I - tau v v^H) z on indices k+1..n
            let mut dot = Complex64::new(0.0, 0.0);
            for i in 0..m {
                dot += v[i].conj() * z[k + 1 + i];
            }
            let c = *tau * dot;
            for i in 0..m {
                z[k + 1 + i] -= c * v[i];
            }
        }
        DVector::from_vec(z)
    }
}

/// Full eigendecomposition, eigenvalues ascending.
pub fn hermitian_eigen_full(a: &DMatrix<Complex64>) -> (Vec<f64>, Vec<DVector<Complex64>>) {
    let n = a.nrows();
    if n == 1 {
        return (vec![a[(0, 0)].re], vec![DVector::from_vec(vec![Complex64::new(1.0, 0.0)])]);
    }
    let form = HermTridiagForm::new(a);
    let vals = form.tridiag.eigenvalues_all();
    let tvecs = form.tridiag.eigenvectors(&vals);
    let vecs = tvecs.iter().map(|u| form.back_transform(u)).collect();
    (vals, vecs)
}

/// Eigenpairs with eigenvalue in `[lo, hi]`, ascending.
pub fn hermitian_eigen_window(
    a: &DMatrix<Complex64>,
    lo: f64,
    hi: f64,
) -> (Vec<f64>, Vec<DVector<Complex64>>) {
    let n = a.nrows();
    if n == 1 {
        let lam = a[(0, 0)].re;
        if lam >= lo && lam <= hi {
            return (vec![lam], vec![DVector::from_vec(vec![Complex64::new(1.0, 0.0)])]);
        }
        return (vec![], vec![]);
    }
    let form = HermTridiagForm::new(a);
    let vals = form.tridiag.eigenvalues_in(lo, hi);
    let tvecs = form.tridiag.eigenvectors(&vals);
    let vecs = tvecs.iter().map(|u| form.back_transform(u)).collect();
    (vals, vecs)
}

/// All eigenvalues only (no vectors), ascending.
pub fn hermitian_eigenvalues(a: &DMatrix<Complex64>) -> Vec<f64> {
    let n = a.nrows();
    if n == 1 {
        return vec![a[(0, 0)].re];
    }
    HermTridiagForm::new(a).tridiag.eigenvalues_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        (&raw + raw.adjoint()) * Complex64::new(0.5, 0.0)
    }

    #[test]
    fn eigen_residuals_tight() {
        for seed in [1u64, 2, 3] {
            let n = 60;
            let a = random_hermitian(n, seed);
            let (vals, vecs) = hermitian_eigen_full(&a);
            let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (lam, v) in vals.iter().zip(&vecs) {
                let r = &a * v - v * Complex64::new(*lam, 0.0);
                assert!(
                    r.norm() < 1e-12 * (1.0 + scale),
                    "residual {} at lambda {}",
                    r.norm(),
                    lam
                );
            }
            for i in 1..n {
                assert!(vals[i] >= vals[i - 1]);
            }
        }
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let n = 40;
        let a = random_hermitian(n, 9);
        let (_, vecs) = hermitian_eigen_full(&a);
        for i in 0..n {
            for j in 0..=i {
                let dot: Complex64 = vecs[j].dotc(&vecs[i]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (dot - Complex64::new(expect, 0.0)).norm() < 1e-10,
                    "gram ({i},{j}) = {dot}"
                );
            }
        }
    }

    #[test]
    fn window_matches_full() {
        let a = random_hermitian(30, 4);
        let (vals, _) = hermitian_eigen_full(&a);
        let lo = vals[5] - 1e-9;
        let hi = vals[9] + 1e-9;
        let (wvals, wvecs) = hermitian_eigen_window(&a, lo, hi);
        assert_eq!(wvals.len(), 5);
        for (w, f) in wvals.iter().zip(&vals[5..10]) {
            assert!((w - f).abs() < 1e-11);
        }
        for (lam, v) in wvals.iter().zip(&wvecs) {
            let r = &a * v - v * Complex64::new(*lam, 0.0);
            assert!(r.norm() < 1e-11);
        }
    }

    #[test]
    fn real_matrix_agrees_with_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 35;
        let raw = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let sym = (&raw + raw.transpose()) * 0.5;
        let complexified = sym.map(|x| Complex64::new(x, 0.0));
        let (vals, _) = hermitian_eigen_full(&complexified);
        let mut nvals: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
        nvals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in vals.iter().zip(&nvals) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
