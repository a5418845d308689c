//! FFT-backed helpers: spectral differentiation on uniform periodic grids,
//! trigonometric interpolation weights, and DST-I for the fast constant
//! coefficient preconditioner.
//!
//! Differentiation multipliers use frequencies k = -K/2+1 .. K/2 with the
//! Nyquist multiplier zeroed, which keeps the derivative operator exactly
//! skew-hermitian on the grid.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward/inverse FFT plans for one axis length.
#[derive(Clone)]
pub struct AxisFft {
    pub len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl AxisFft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        Self { len, fwd, inv }
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
    }

    /// Inverse transform in place, normalized by 1/len.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
        let s = 1.0 / self.len as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }
}

/// Signed frequency index for bin `i` of a length-`k` transform.
pub fn freq_index(i: usize, k: usize) -> i64 {
    if i <= k / 2 {
        i as i64
    } else {
        i as i64 - k as i64
    }
}

/// Derivative multipliers `i*kappa` for a length-`k` axis of given period,
/// with the Nyquist entry zeroed when `k` is even.
pub fn derivative_multipliers(k: usize, period: f64) -> Vec<Complex64> {
    (0..k)
        .map(|i| {
            let f = freq_index(i, k);
            if k % 2 == 0 && i == k / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, 2.0 * std::f64::consts::PI * f as f64 / period)
            }
        })
        .collect()
}

/// Differentiate samples of a periodic function in place.
pub fn spectral_derivative_in_place(fft: &AxisFft, period: f64, buf: &mut [Complex64]) {
    let mults = derivative_multipliers(fft.len, period);
    fft.forward(buf);
    for (z, m) in buf.iter_mut().zip(&mults) {
        *z *= m;
    }
    fft.inverse(buf);
}

/// Dense spectral differentiation matrix for one axis.
pub fn spectral_derivative_matrix(k: usize, period: f64) -> DMatrix<Complex64> {
    let fft = AxisFft::new(k);
    let mut d = DMatrix::<Complex64>::zeros(k, k);
    let mut col = vec![Complex64::new(0.0, 0.0); k];
    for j in 0..k {
        col.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        col[j] = Complex64::new(1.0, 0.0);
        spectral_derivative_in_place(&fft, period, &mut col);
        for i in 0..k {
            d[(i, j)] = col[i];
        }
    }
    d
}

/// Weights `w_q` such that `sum_q w_q u(xi_q)` trigonometrically interpolates
/// periodic samples at the point `t`. The Nyquist mode is evaluated as a
/// cosine so the interpolant is real for real data and exact at grid points.
pub fn trig_interp_weights(k: usize, period: f64, t: f64) -> Vec<Complex64> {
    let mut w = vec![Complex64::new(0.0, 0.0); k];
    let tp = 2.0 * std::f64::consts::PI / period;
    for (q, wq) in w.iter_mut().enumerate() {
        let xq = q as f64 * period / k as f64;
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..k {
            let f = freq_index(i, k) as f64;
            let kap = tp * f;
            if k % 2 == 0 && i == k / 2 {
                // e^{-i kap xq} = (-1)^q at Nyquist
                let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                s += Complex64::new((kap * t).cos() * sign, 0.0);
            } else {
                s += Complex64::from_polar(1.0, kap * (t - xq));
            }
        }
        *wq = s / k as f64;
    }
    w
}

/// DST-I of length `n`: `S_k = sum_{j=1..n} x_j sin(pi j k / (n+1))`,
/// computed through a complex FFT of length `2(n+1)`. Applying it twice
/// multiplies by `(n+1)/2`.
pub struct DstPlan {
    pub n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl DstPlan {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * (n + 1));
        Self { n, fft }
    }

    pub fn apply(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let m = 2 * (self.n + 1);
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..self.n {
            buf[j + 1] = Complex64::new(x[j], 0.0);
            buf[m - 1 - j] = Complex64::new(-x[j], 0.0);
        }
        self.fft.process(&mut buf);
        for k in 0..self.n {
            x[k] = -0.5 * buf[k + 1].im;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn derivative_of_trig_mode_is_exact() {
        let k = 32;
        let period = 1.0;
        let fft = AxisFft::new(k);
        for mode in [1i64, 3, 5] {
            let mut buf: Vec<Complex64> = (0..k)
                .map(|q| {
                    let x = q as f64 / k as f64;
                    Complex64::new((2.0 * std::f64::consts::PI * mode as f64 * x).cos(), 0.0)
                })
                .collect();
            spectral_derivative_in_place(&fft, period, &mut buf);
            for q in 0..k {
                let x = q as f64 / k as f64;
                let exact = -2.0
                    * std::f64::consts::PI
                    * mode as f64
                    * (2.0 * std::f64::consts::PI * mode as f64 * x).sin();
                assert_abs_diff_eq!(buf[q].re, exact, epsilon = 1e-10);
                assert_abs_diff_eq!(buf[q].im, 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn derivative_matrix_is_skew_hermitian() {
        let d = spectral_derivative_matrix(16, 2.0);
        let s = &d + d.adjoint();
        for i in 0..16 {
            for j in 0..16 {
                assert!(s[(i, j)].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn trig_interp_reproduces_smooth_function() {
        let k = 32;
        let period = 1.0;
        let f = |x: f64| {
            (2.0 * std::f64::consts::PI * x).cos() + 0.3 * (4.0 * std::f64::consts::PI * x).sin()
        };
        let samples: Vec<Complex64> =
            (0..k).map(|q| Complex64::new(f(q as f64 / k as f64), 0.0)).collect();
        for &t in &[0.0, 0.1234, 0.5, 0.73, 0.999] {
            let w = trig_interp_weights(k, period, t);
            let val: Complex64 = w.iter().zip(&samples).map(|(wq, s)| wq * s).sum();
            assert_abs_diff_eq!(val.re, f(t), epsilon = 1e-11);
            assert_abs_diff_eq!(val.im, 0.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn trig_interp_exact_at_grid_points() {
        let k = 8;
        let samples: Vec<Complex64> =
            (0..k).map(|q| Complex64::new(q as f64 * 0.7 - 1.0, 0.3 * q as f64)).collect();
        for q in 0..k {
            let w = trig_interp_weights(k, 1.0, q as f64 / k as f64);
            let val: Complex64 = w.iter().zip(&samples).map(|(wq, s)| wq * s).sum();
            assert!((val - samples[q]).norm() < 1e-11);
        }
    }

    #[test]
    fn dst_matches_naive_and_inverts() {
        let n = 13;
        let plan = DstPlan::new(n);
        let x0: Vec<f64> = (0..n).map(|j| (j as f64 * 0.37).sin() + 0.2).collect();
        let mut x = x0.clone();
        plan.apply(&mut x);
        for k in 0..n {
            let naive: f64 = (0..n)
                .map(|j| {
                    x0[j]
                        * (std::f64::consts::PI * (j + 1) as f64 * (k + 1) as f64
                            / (n as f64 + 1.0))
                            .sin()
                })
                .sum();
            assert_abs_diff_eq!(x[k], naive, epsilon = 1e-11);
        }
        plan.apply(&mut x);
        let scale = (n as f64 + 1.0) / 2.0;
        for j in 0..n {
            assert_abs_diff_eq!(x[j] / scale, x0[j], epsilon = 1e-11);
        }
    }
}
