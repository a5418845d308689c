//! Real symmetric tridiagonal eigensolver: Sturm bisection for eigenvalues
//! (all of them or a window) and inverse iteration for eigenvectors, with
//! re-orthogonalization inside near-degenerate groups.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Symmetric tridiagonal matrix: `diag` of length n, `offdiag` of length n-1.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Self {
        assert_eq!(offdiag.len() + 1, diag.len());
        Self { diag, offdiag }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Gershgorin interval containing the whole spectrum.
    pub fn spectrum_bounds(&self) -> (f64, f64) {
        let n = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let left = if i > 0 { self.offdiag[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < n { self.offdiag[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `x` (Sturm count via the LDL^T
    /// pivot signs of T - xI).
    pub fn count_below(&self, x: f64) -> usize {
        let n = self.dim();
        let tiny = f64::MIN_POSITIVE / f64::EPSILON;
        let mut count = 0usize;
        let mut d = self.diag[0] - x;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let b = self.offdiag[i - 1];
            let mut denom = d;
            if denom.abs() < tiny {
                denom = if denom < 0.0 { -tiny } else { tiny };
            }
            d = (self.diag[i] - x) - b * b / denom;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// k-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue_by_index(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.spectrum_bounds();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        // 2 ulps of slack keeps the count monotone at the endpoints
        lo -= scale * 1e-14;
        hi += scale * 1e-14;
        for _ in 0..96 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) <= k {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * scale {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// All eigenvalues with index in `[k_lo, k_hi)`, ascending.
    pub fn eigenvalues_by_index_range(&self, k_lo: usize, k_hi: usize) -> Vec<f64> {
        (k_lo..k_hi).map(|k| self.eigenvalue_by_index(k)).collect()
    }

    /// All eigenvalues inside `[lo, hi]`, ascending.
    pub fn eigenvalues_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let k_lo = self.count_below(lo);
        let k_hi = self.count_below(hi);
        let mut vals = self.eigenvalues_by_index_range(k_lo, k_hi);
        // bisection can land a hair outside the window; keep the honest ones
        vals.retain(|&v| v >= lo - 1e-12 * (1.0 + v.abs()) && v <= hi + 1e-12 * (1.0 + v.abs()));
        vals
    }

    /// All eigenvalues, ascending.
    pub fn eigenvalues_all(&self) -> Vec<f64> {
        self.eigenvalues_by_index_range(0, self.dim())
    }

    /// Eigenvectors for the given (precomputed, ascending) eigenvalues by
    /// inverse iteration. Eigenvalues closer than `1e-7 * scale` are treated
    /// as one group and orthogonalized against each other.
    pub fn eigenvectors(&self, eigenvalues: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dim();
        let (blo, bhi) = self.spectrum_bounds();
        let scale = blo.abs().max(bhi.abs()).max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_7121);
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(eigenvalues.len());
        let mut group_start = 0usize;
        for (idx, &lam) in eigenvalues.iter().enumerate() {
            if idx > 0 && (lam - eigenvalues[idx - 1]).abs() > 1e-7 * scale {
                group_start = idx;
            }
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            // slight shift off the exact eigenvalue keeps the LU well defined
            let shift = lam + 1e-13 * scale;
            let lu = TridiagLu::factor(self, shift);
            for _ in 0..3 {
                for prev in &out[group_start..idx] {
                    let dot: f64 = prev.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (vi, pi) in v.iter_mut().zip(prev) {
                        *vi -= dot * pi;
                    }
                }
                lu.solve_in_place(&mut v);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in v.iter_mut() {
                    *x /= norm;
                }
            }
            for prev in &out[group_start..idx] {
                let dot: f64 = prev.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= dot * pi;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in v.iter_mut() {
                *x /= norm;
            }
            out.push(v);
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.offdiag[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.offdiag[i] * v[i + 1];
            }
            out[i] = s;
        }
        out
    }
}

/// LU factorization of (T - shift I) with partial pivoting; the fill is the
/// standard second superdiagonal.
pub struct TridiagLu {
    n: usize,
    low: Vec<f64>,
    d0: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    pub fn factor(t: &SymTridiag, shift: f64) -> Self {
        let n = t.dim();
        let mut d0: Vec<f64> = t.diag.iter().map(|&a| a - shift).collect();
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        for i in 0..n - 1 {
            d1[i] = t.offdiag[i];
        }
        let mut sub: Vec<f64> = t.offdiag.clone();
        let mut low = vec![0.0; n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n - 1 {
            if sub[i].abs() > d0[i].abs() {
                swapped[i] = true;
                std::mem::swap(&mut d0[i], &mut sub[i]);
                let old_d1 = d1[i];
                d1[i] = d0[i + 1];
                d0[i + 1] = old_d1;
                if i + 2 < n {
                    d2[i] = d1[i + 1];
                    d1[i + 1] = 0.0;
                }
            }
            let tiny = f64::MIN_POSITIVE / f64::EPSILON;
            let piv = if d0[i].abs() < tiny {
                if d0[i] < 0.0 {
                    -tiny
                } else {
                    tiny
                }
            } else {
                d0[i]
            };
            let l = sub[i] / piv;
            low[i] = l;
            d0[i + 1] -= l * d1[i];
            if i + 2 < n {
                d1[i + 1] -= l * d2[i];
            }
        }
        Self { n, low, d0, d1, d2, swapped }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n - 1 {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.low[i] * b[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= self.d1[i] * b[i + 1];
            }
            if i + 2 < n {
                s -= self.d2[i] * b[i + 2];
            }
            let tiny = f64::MIN_POSITIVE / f64::EPSILON;
            let piv = if self.d0[i].abs() < tiny {
                if self.d0[i] < 0.0 {
                    -tiny
                } else {
                    tiny
                }
            } else {
                self.d0[i]
            };
            b[i] = s / piv;
        }
    }
}
