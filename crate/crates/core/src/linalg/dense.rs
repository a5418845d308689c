//! Dense hermitian eigendecompositions and bordered (saddle point) solves.

use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Max hermiticity defect `max |a_ij - conj(a_ji)|`.
pub fn hermiticity_defect(a: &DMatrix<Complex64>) -> f64 {
    let mut d = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..=i {
            d = d.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    d
}

/// Replace `a` by its hermitian part `(a + a^H)/2`, returning the defect.
pub fn hermitize_in_place(a: &mut DMatrix<Complex64>) -> f64 {
    let defect = hermiticity_defect(a);
    let h = (a.clone() + a.adjoint()) * Complex::new(0.5, 0.0);
    *a = h;
    defect
}

/// Full eigendecomposition of a hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let n = a.nrows();
    let (vals, vec_list) = super::hermeig::hermitian_eigen_full(a);
    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    for (col, v) in vec_list.iter().enumerate() {
        vecs.set_column(col, v);
    }
    (vals, vecs)
}

/// Full eigendecomposition of a real symmetric matrix, eigenvalues ascending.
pub fn real_symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let se = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Rotate `v` so its largest-magnitude component is real and positive.
pub fn fix_phase(v: &mut DVector<Complex64>) {
    let mut best = 0usize;
    let mut best_mag = 0.0f64;
    for (i, z) in v.iter().enumerate() {
        if z.norm() > best_mag {
            best_mag = z.norm();
            best = i;
        }
    }
    if best_mag > 0.0 {
        let phase = v[best] / best_mag;
        let rot = phase.conj();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

/// LU-factored bordered system `[[A, C], [C^H, 0]]`; solving against
/// `[b; 0]` yields the component of the solution with `C^H x = 0` and the
/// multiplier `mu = C^+ b`-ish measuring how much of `b` lies along `C`.
pub struct BorderedSolve {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    dim: usize,
    k: usize,
}

impl BorderedSolve {
    pub fn new(a: &DMatrix<Complex64>, border: &DMatrix<Complex64>) -> Self {
        let n = a.nrows();
        let k = border.ncols();
        let mut big = DMatrix::<Complex64>::zeros(n + k, n + k);
        big.view_mut((0, 0), (n, n)).copy_from(a);
        big.view_mut((0, n), (n, k)).copy_from(border);
        big.view_mut((n, 0), (k, n)).copy_from(&border.adjoint());
        Self { lu: big.lu(), dim: n, k }
    }

    /// Returns `(x, mu)` with `A x + C mu = b`, `C^H x = 0`.
    pub fn solve(&self, b: &DVector<Complex64>) -> (DVector<Complex64>, DVector<Complex64>) {
        let mut rhs = DVector::<Complex64>::zeros(self.dim + self.k);
        rhs.rows_mut(0, self.dim).copy_from(b);
        let sol = self.lu.solve(&rhs).expect("bordered system is singular");
        let x = DVector::from(sol.rows(0, self.dim).clone_owned());
        let mu = DVector::from(sol.rows(self.dim, self.k).clone_owned());
        (x, mu)
    }
}

/// Deterministic Haar-ish random unitary via QR of a seeded complex Gaussian,
/// with the R diagonal phases absorbed.
pub fn seeded_random_unitary(n: usize, seed: u64) -> DMatrix<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
        Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        (&raw + raw.adjoint()) * Complex::new(0.5, 0.0)
    }

    #[test]
    fn hermitian_eigen_residual_and_orthonormality() {
        let a = random_hermitian(50, 3);
        let (vals, vecs) = hermitian_eigen(&a);
        for j in 0..50 {
            let v = vecs.column(j);
            let r = &a * v - v * Complex64::new(vals[j], 0.0);
            assert!(r.norm() < 1e-10, "residual {}", r.norm());
        }
        let g = vecs.adjoint() * &vecs;
        for i in 0..50 {
            for j in 0..50 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g[(i, j)].re, expect, epsilon = 1e-10);
                assert_abs_diff_eq!(g[(i, j)].im, 0.0, epsilon = 1e-10);
            }
        }
        for k in 1..50 {
            assert!(vals[k] >= vals[k - 1]);
        }
    }

    #[test]
    fn bordered_solve_annihilates_kernel_component() {
        // A = diag(0, 1, 2, ...) with kernel e0; border on e0
        let n = 6;
        let mut a = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = Complex64::new(i as f64, 0.0);
        }
        let mut c = DMatrix::<Complex64>::zeros(n, 1);
        c[(0, 0)] = Complex64::new(1.0, 0.0);
        let solver = BorderedSolve::new(&a, &c);
        let mut b = DVector::<Complex64>::zeros(n);
        b[0] = Complex64::new(3.0, 0.0);
        b[2] = Complex64::new(4.0, 0.0);
        let (x, mu) = solver.solve(&b);
        assert_abs_diff_eq!(x[0].re, 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(x[2].re, 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(mu[0].re, 3.0, epsilon = 1e-13);
    }

    #[test]
    fn random_unitary_is_unitary_and_deterministic() {
        let q1 = seeded_random_unitary(5, 11);
        let q2 = seeded_random_unitary(5, 11);
        assert_eq!(q1, q2);
        let g = q1.adjoint() * &q1;
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g[(i, j)].re, expect, epsilon = 1e-12);
                assert_abs_diff_eq!(g[(i, j)].im, 0.0, epsilon = 1e-12);
            }
        }
    }
}
