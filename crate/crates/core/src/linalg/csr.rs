//! Minimal CSR storage for the discrete spatial operators, with the
//! structure probes the eigensolver dispatch relies on (real-valuedness,
//! plain tridiagonality).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::tridiag::SymTridiag;

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<Complex64>,
}

impl CsrMatrix {
    /// Build from unsorted triplets; duplicate entries are summed.
    pub fn from_triplets(dim: usize, triplets: &mut Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut cur_row = 0usize;
        for &(r, c, v) in triplets.iter() {
            debug_assert!(r < dim && c < dim);
            while cur_row < r {
                cur_row += 1;
                row_ptr[cur_row] = col_idx.len();
            }
            if col_idx.len() > row_ptr[cur_row] && *col_idx.last().unwrap() == c {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
            }
        }
        while cur_row < dim {
            cur_row += 1;
            row_ptr[cur_row] = col_idx.len();
        }
        Self { dim, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .into_par_iter()
            .map(|r| {
                let mut s = Complex64::new(0.0, 0.0);
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.values[k] * x[self.col_idx[k]];
                }
                s
            })
            .collect()
    }

    pub fn matvec_dvector(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        DVector::from_vec(self.matvec(x.as_slice()))
    }

    /// Real matvec; valid only when `is_real()`.
    pub fn matvec_real(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .into_par_iter()
            .map(|r| {
                let mut s = 0.0;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.values[k].re * x[self.col_idx[k]];
                }
                s
            })
            .collect()
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    /// Max hermiticity defect over stored entries.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let v = self.values[k];
                let partner = self.get(c, r);
                defect = defect.max((v - partner.conj()).norm());
            }
        }
        defect
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col_idx[k] == c {
                return self.values[k];
            }
        }
        Complex64::new(0.0, 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }

    /// Extract (diag, offdiag) when the matrix is real symmetric tridiagonal.
    pub fn as_real_tridiag(&self) -> Option<SymTridiag> {
        if !self.is_real() || self.dim < 2 {
            return None;
        }
        let n = self.dim;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        for r in 0..n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let v = self.values[k].re;
                if c == r {
                    diag[r] = v;
                } else if c + 1 == r {
                    off[c] = v;
                } else if c != r + 1 && v != 0.0 {
                    return None;
                }
            }
        }
        for r in 0..n - 1 {
            let upper = self.get(r, r + 1).re;
            if (upper - off[r]).abs() > 1e-13 * (1.0 + upper.abs()) {
                return None;
            }
        }
        Some(SymTridiag::new(diag, off))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_accumulate_and_matvec() {
        let mut t = vec![
            (0, 0, Complex64::new(1.0, 0.0)),
            (0, 1, Complex64::new(2.0, 0.0)),
            (1, 0, Complex64::new(2.0, 0.0)),
            (0, 0, Complex64::new(3.0, 0.0)),
            (2, 2, Complex64::new(5.0, 0.0)),
        ];
        let m = CsrMatrix::from_triplets(3, &mut t);
        assert_eq!(m.get(0, 0), Complex64::new(4.0, 0.0));
        let ones = vec![Complex64::new(1.0, 0.0); 3];
        let y = m.matvec(&ones);
        assert_eq!(y[0], Complex64::new(6.0, 0.0));
        assert_eq!(y[1], Complex64::new(2.0, 0.0));
        assert_eq!(y[2], Complex64::new(5.0, 0.0));
        assert_eq!(m.hermiticity_defect(), 0.0);
    }

    #[test]
    fn tridiag_extraction() {
        let mut t = vec![
            (0, 0, Complex64::new(2.0, 0.0)),
            (0, 1, Complex64::new(-1.0, 0.0)),
            (1, 0, Complex64::new(-1.0, 0.0)),
            (1, 1, Complex64::new(2.0, 0.0)),
            (1, 2, Complex64::new(-1.0, 0.0)),
            (2, 1, Complex64::new(-1.0, 0.0)),
            (2, 2, Complex64::new(2.0, 0.0)),
        ];
        let m = CsrMatrix::from_triplets(3, &mut t);
        let tri = m.as_real_tridiag().expect("tridiagonal");
        assert_eq!(tri.diag, vec![2.0, 2.0, 2.0]);
        assert_eq!(tri.offdiag, vec![-1.0, -1.0]);
    }
}
