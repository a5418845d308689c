//! Assembly of hermitian discrete operators on the Dirichlet box grid.
//!
//! Three stencil primitives cover every term the pipeline produces:
//! a flux-form second difference with face coefficients, a centered cross
//! derivative for mixed second-order terms, and a skew pair
//! `X d_i (Y u) - Y^H d_i (X^H u)` for the first-order terms. Each primitive
//! is hermitian by construction, so the assembled matrix is hermitian up to
//! rounding; the builder hard-symmetrizes at the end and records the defect.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::fields::SpatialGrid;
use crate::linalg::csr::CsrMatrix;

/// Hermitian operator on the interior nodes of a `SpatialGrid`, `ncomp`
/// unknowns per node.
pub struct DiscreteOperator {
    pub matrix: CsrMatrix,
    pub grid: SpatialGrid,
    pub ncomp: usize,
    pub symmetrization_defect: f64,
    /// mean diffusion coefficient per axis and mean potential, for the
    /// constant-coefficient preconditioner
    pub precond_diffusion: Vec<f64>,
    pub precond_potential: f64,
}

impl DiscreteOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim
    }
}

pub struct StencilBuilder {
    grid: SpatialGrid,
    ncomp: usize,
    triplets: Vec<(usize, usize, Complex64)>,
    precond_diffusion: Vec<f64>,
    precond_potential: f64,
}

impl StencilBuilder {
    pub fn new(grid: SpatialGrid, ncomp: usize) -> Self {
        let d = grid.dim;
        Self {
            grid,
            ncomp,
            triplets: Vec::new(),
            precond_diffusion: vec![0.0; d],
            precond_potential: 0.0,
        }
    }

    fn add_block(&mut self, row_node: usize, col_node: usize, block: &DMatrix<Complex64>) {
        let n = self.ncomp;
        for r in 0..n {
            for c in 0..n {
                let v = block[(r, c)];
                if v != Complex64::new(0.0, 0.0) {
                    self.triplets.push((row_node * n + r, col_node * n + c, v));
                }
            }
        }
    }

    /// Shift an interior node by `step` along `axis`; None leaves the grid
    /// interior (Dirichlet: the unknown there is zero).
    fn neighbor(&self, ix: usize, axis: usize, step: i64) -> Option<usize> {
        let mi = self.grid.interior_per_axis() as i64;
        let mut idx = self.grid.axis_indices(ix);
        let j = idx[axis] as i64 + step;
        if j < 0 || j >= mi {
            return None;
        }
        idx[axis] = j as usize;
        Some(self.grid.flat_index(&idx))
    }

    /// `-d_i (C(x) d_i u)` in flux form. `face_coeff(ix)` returns the
    /// coefficient on the face between interior node `ix` and its +axis
    /// neighbor; `face_coeff_low_boundary(i_rest)` is handled by passing the
    /// first interior node's face through `boundary_face_coeff`.
    pub fn add_flux(
        &mut self,
        axis: usize,
        face_coeff_up: &dyn Fn(usize) -> DMatrix<Complex64>,
        face_coeff_down_at_boundary: &dyn Fn(usize) -> DMatrix<Complex64>,
    ) {
        let h = self.grid.spacing();
        let w = Complex64::new(1.0 / (h * h), 0.0);
        let mi = self.grid.interior_per_axis();
        let mut diffusion_acc = 0.0;
        let mut faces = 0usize;
        for ix in 0..self.grid.node_count() {
            let idx = self.grid.axis_indices(ix);
            // face toward +axis: shared between ix and its neighbor
            let c_up = face_coeff_up(ix);
            diffusion_acc += c_up.iter().take(1).map(|z| z.re).sum::<f64>();
            faces += 1;
            let scaled_up = &c_up * w;
            self.add_block(ix, ix, &scaled_up);
            if let Some(up) = self.neighbor(ix, axis, 1) {
                self.add_block(ix, up, &(&scaled_up * Complex64::new(-1.0, 0.0)));
                self.add_block(up, ix, &(&scaled_up * Complex64::new(-1.0, 0.0)));
                self.add_block(up, up, &scaled_up);
            }
            // face toward the lower boundary exists only for the first
            // interior node; interior down-faces were covered as up-faces
            if idx[axis] == 0 {
                let c_down = face_coeff_down_at_boundary(ix);
                self.add_block(ix, ix, &(&c_down * w));
            }
            if idx[axis] == mi - 1 {
                // the up-face of the last interior node touches the boundary;
                // it was already added as a diagonal contribution above
            }
        }
        if faces > 0 {
            self.precond_diffusion[axis] += diffusion_acc / faces as f64;
        }
    }

    /// `-d_i (C(x) d_j u)` for `i != j`, centered differences both ways.
    /// The coefficient is sampled at the intermediate node (clamped to the
    /// interior near the boundary), which keeps the pairing hermitian.
    pub fn add_cross(
        &mut self,
        axis_i: usize,
        axis_j: usize,
        coeff: &dyn Fn(usize) -> DMatrix<Complex64>,
    ) {
        assert_ne!(axis_i, axis_j);
        let h = self.grid.spacing();
        let w = 1.0 / (4.0 * h * h);
        for ix in 0..self.grid.node_count() {
            for si in [-1i64, 1] {
                // coefficient at the intermediate position p + si e_i
                let mid = self.neighbor(ix, axis_i, si).unwrap_or(ix);
                let c = coeff(mid);
                for sj in [-1i64, 1] {
                    if let Some(col) =
                        self.neighbor(ix, axis_i, si).and_then(|k| self.neighbor(k, axis_j, sj))
                    {
                        let val = -(si as f64) * (sj as f64) * w;
                        self.add_block(ix, col, &(&c * Complex64::new(val, 0.0)));
                    }
                }
            }
        }
    }

    /// `X(x) d_i (Y(x) u) - Y(x)^H d_i (X(x)^H u)` with centered differences;
    /// hermitian exactly. `X` is n x p, `Y` is p x n.
    pub fn add_skew_pair(
        &mut self,
        axis: usize,
        x_at: &dyn Fn(usize) -> DMatrix<Complex64>,
        y_at: &dyn Fn(usize) -> DMatrix<Complex64>,
    ) {
        let h = self.grid.spacing();
        let w = 1.0 / (2.0 * h);
        for ix in 0..self.grid.node_count() {
            let x_own = x_at(ix);
            let y_own_h = y_at(ix).adjoint();
            for s in [-1i64, 1] {
                if let Some(col) = self.neighbor(ix, axis, s) {
                    let block = (&x_own * y_at(col) - &y_own_h * x_at(col).adjoint())
                        * Complex64::new(s as f64 * w, 0.0);
                    self.add_block(ix, col, &block);
                }
            }
        }
    }

    /// Zero-order block-diagonal term.
    pub fn add_diagonal(&mut self, coeff: &dyn Fn(usize) -> DMatrix<Complex64>) {
        let nodes = self.grid.node_count();
        let mut pot_acc = 0.0;
        for ix in 0..nodes {
            let c = coeff(ix);
            pot_acc += (0..self.ncomp).map(|r| c[(r, r)].re).sum::<f64>() / self.ncomp as f64;
            self.add_block(ix, ix, &c);
        }
        self.precond_potential += pot_acc / nodes as f64;
    }

    /// Finish: symmetrize `(H + H^H)/2` and record the defect.
    pub fn finish(mut self) -> DiscreteOperator {
        let dim = self.grid.node_count() * self.ncomp;
        let raw = CsrMatrix::from_triplets(dim, &mut self.triplets);
        let defect = raw.hermiticity_defect();
        // hard symmetrization in triplet space
        let mut sym_triplets: Vec<(usize, usize, Complex64)> = Vec::with_capacity(2 * raw.nnz());
        for r in 0..dim {
            for k in raw.row_ptr[r]..raw.row_ptr[r + 1] {
                let c = raw.col_idx[k];
                let v = raw.values[k] * 0.5;
                sym_triplets.push((r, c, v));
                sym_triplets.push((c, r, v.conj()));
            }
        }
        let matrix = CsrMatrix::from_triplets(dim, &mut sym_triplets);
        DiscreteOperator {
            matrix,
            grid: self.grid,
            ncomp: self.ncomp,
            symmetrization_defect: defect,
            precond_diffusion: self.precond_diffusion,
            precond_potential: self.precond_potential,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid(m: usize) -> SpatialGrid {
        SpatialGrid::new(1, 10.0, m).unwrap()
    }

    #[test]
    fn dirichlet_laplacian_spectrum() {
        // -u'' on [-10, 10]: eigenvalues (k pi / 2L)^2
        let grid = unit_grid(401);
        let mut b = StencilBuilder::new(grid, 1);
        let one = |_: usize| DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        b.add_flux(0, &one, &one);
        let op = b.finish();
        assert!(op.symmetrization_defect < 1e-14);
        let tri = op.matrix.as_real_tridiag().expect("tridiagonal");
        let vals = tri.eigenvalues_by_index_range(0, 3);
        for (k, v) in vals.iter().enumerate() {
            let exact = ((k + 1) as f64 * std::f64::consts::PI / 20.0).powi(2);
            assert_abs_diff_eq!(v, &exact, epsilon = 2e-4);
        }
    }

    #[test]
    fn skew_pair_is_exactly_hermitian() {
        let grid = unit_grid(31);
        let mut b = StencilBuilder::new(grid, 1);
        let x_at = |ix: usize| {
            DMatrix::from_element(1, 1, Complex64::new((ix as f64 * 0.3).sin(), 0.2))
        };
        let y_at =
            |ix: usize| DMatrix::from_element(1, 1, Complex64::new(1.0 + 0.1 * ix as f64, -0.3));
        b.add_skew_pair(0, &x_at, &y_at);
        let op = b.finish();
        assert!(op.symmetrization_defect < 1e-14);
        assert!(op.matrix.hermiticity_defect() < 1e-14);
    }

    #[test]
    fn cross_terms_pair_hermitian() {
        let grid = SpatialGrid::new(2, 5.0, 18).unwrap();
        let mut b = StencilBuilder::new(grid, 1);
        let c12 = |ix: usize| DMatrix::from_element(1, 1, Complex64::new(0.3 + 0.01 * ix as f64, 0.05));
        let c21 = |ix: usize| c12(ix).adjoint();
        b.add_cross(0, 1, &c12);
        b.add_cross(1, 0, &c21);
        let op = b.finish();
        assert!(op.symmetrization_defect < 1e-13);
    }
}
