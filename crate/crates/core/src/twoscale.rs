//! Calculus on two-scale sample fields u(x, xi): centered spatial
//! differences with Dirichlet ghosts, spectral cell derivatives, weighted
//! inner products, and the corrector applicator
//! `U[psi] = lambda1 B(d_x) psi + lambda0 psi`.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::cell::{CellCalculus, CellSolution};
use crate::fields::{SampledField, SampledProblem, SpatialGrid};

/// Centered x-derivative along `axis` of a two-scale field; boundary
/// neighbors are the implicit Dirichlet zeros.
pub fn x_derivative(grid: &SpatialGrid, field: &SampledField, axis: usize) -> SampledField {
    let mut out = SampledField::zeros(field.x_count, field.xi_count, field.rows, field.cols);
    let h = grid.spacing();
    let mi = grid.interior_per_axis();
    let per_x = field.xi_count * field.rows * field.cols;
    let w = 0.5 / h;
    for ix in 0..field.x_count {
        let idx = grid.axis_indices(ix);
        let up = if idx[axis] + 1 < mi {
            let mut i2 = idx.clone();
            i2[axis] += 1;
            Some(grid.flat_index(&i2))
        } else {
            None
        };
        let down = if idx[axis] > 0 {
            let mut i2 = idx.clone();
            i2[axis] -= 1;
            Some(grid.flat_index(&i2))
        } else {
            None
        };
        let o = ix * per_x;
        for e in 0..per_x {
            let hi = up.map(|j| field.data[j * per_x + e]).unwrap_or_default();
            let lo = down.map(|j| field.data[j * per_x + e]).unwrap_or_default();
            out.data[o + e] = (hi - lo) * w;
        }
    }
    out
}

/// Spectral xi-derivative along `axis` of a two-scale field.
pub fn xi_derivative(calc: &CellCalculus, field: &SampledField, axis: usize) -> SampledField {
    let mut out = field.clone();
    let per_entry = field.rows * field.cols;
    let g = field.xi_count;
    for ix in 0..field.x_count {
        let o = out.offset(ix, 0);
        let slice = &mut out.data[o..o + g * per_entry];
        calc.derivative(axis, per_entry, slice);
    }
    out
}

/// Weighted inner product `(1/|cell|) (u, v)_{L2(box x cell)}`: spatial
/// trapezoid times the normalized cell mean. Conjugation on `v`.
pub fn two_scale_inner(grid: &SpatialGrid, u: &SampledField, v: &SampledField) -> Complex64 {
    debug_assert_eq!(u.data.len(), v.data.len());
    let mut s = Complex64::new(0.0, 0.0);
    for (a, b) in u.data.iter().zip(&v.data) {
        s += b.conj() * a;
    }
    s * Complex64::new(grid.weight() / u.xi_count as f64, 0.0)
}

/// Spatial L2 inner product of coefficient vectors (conjugation on `v`).
pub fn spatial_inner(grid: &SpatialGrid, u: &DVector<Complex64>, v: &DVector<Complex64>) -> Complex64 {
    v.dotc(u) * Complex64::new(grid.weight(), 0.0)
}

pub fn spatial_norm(grid: &SpatialGrid, u: &DVector<Complex64>) -> f64 {
    spatial_inner(grid, u, u).re.max(0.0).sqrt()
}

/// Lift a spatial vector (dof layout `ix * n + c`) to a two-scale field
/// constant in xi.
pub fn lift_spatial(grid: &SpatialGrid, n: usize, xi_count: usize, v: &DVector<Complex64>) -> SampledField {
    let nx = grid.node_count();
    let mut out = SampledField::zeros(nx, xi_count, n, 1);
    for ix in 0..nx {
        for iq in 0..xi_count {
            for c in 0..n {
                *out.entry_mut(ix, iq, c, 0) = v[ix * n + c];
            }
        }
    }
    out
}

/// Cell mean at every x node, flattened back to a spatial vector.
pub fn mean_to_spatial(field: &SampledField) -> DVector<Complex64> {
    let n = field.rows;
    let mut out = DVector::<Complex64>::zeros(field.x_count * n);
    let g = field.xi_count as f64;
    for ix in 0..field.x_count {
        for iq in 0..field.xi_count {
            for c in 0..n {
                out[ix * n + c] += field.entry(ix, iq, c, 0);
            }
        }
        for c in 0..n {
            out[ix * n + c] /= Complex64::new(g, 0.0);
        }
    }
    out
}

/// `B(d_x) psi` of a spatial vector: m-vector two-scale-free field stored
/// with xi_count = 1.
pub fn symbol_gradient_spatial(
    ws: &SampledProblem,
    psi: &DVector<Complex64>,
) -> SampledField {
    let spec = &ws.problem.spec;
    let (n, m, d) = (spec.n, spec.m, spec.dim);
    let grid = &ws.sgrid;
    let nx = grid.node_count();
    let lifted = {
        let mut f = SampledField::zeros(nx, 1, n, 1);
        for ix in 0..nx {
            for c in 0..n {
                *f.entry_mut(ix, 0, c, 0) = psi[ix * n + c];
            }
        }
        f
    };
    let mut out = SampledField::zeros(nx, 1, m, 1);
    for axis in 0..d {
        let dpsi = x_derivative(grid, &lifted, axis);
        let b = &spec.b_mats[axis];
        for ix in 0..nx {
            for r in 0..m {
                let mut s = Complex64::new(0.0, 0.0);
                for c in 0..n {
                    s += b[(r, c)] * dpsi.entry(ix, 0, c, 0);
                }
                *out.entry_mut(ix, 0, r, 0) += s;
            }
        }
    }
    out
}

/// Apply the corrector pair to a spatial vector:
/// `U[psi](x, xi) = lambda1(x, xi) (B(d_x) psi)(x) + lambda0(x, xi) psi(x)`.
pub fn apply_corrector(
    ws: &SampledProblem,
    cells: &CellSolution,
    psi: &DVector<Complex64>,
) -> SampledField {
    let spec = &ws.problem.spec;
    let (n, m) = (spec.n, spec.m);
    let nx = ws.sgrid.node_count();
    let g = ws.cgrid.node_count();
    let grad = symbol_gradient_spatial(ws, psi);
    let mut out = SampledField::zeros(nx, g, n, 1);
    for ix in 0..nx {
        for iq in 0..g {
            for r in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for c in 0..m {
                    s += cells.lambda1.entry(ix, iq, r, c) * grad.entry(ix, 0, c, 0);
                }
                for c in 0..n {
                    s += cells.lambda0.entry(ix, iq, r, c) * psi[ix * n + c];
                }
                *out.entry_mut(ix, iq, r, 0) = s;
            }
        }
    }
    out
}

/// Pointwise linear combination `alpha u + v` into a new field.
pub fn field_axpy(alpha: Complex64, u: &SampledField, v: &SampledField) -> SampledField {
    debug_assert_eq!(u.data.len(), v.data.len());
    let mut out = v.clone();
    for (o, a) in out.data.iter_mut().zip(&u.data) {
        *o += alpha * a;
    }
    out
}

pub fn field_scale(alpha: Complex64, u: &SampledField) -> SampledField {
    let mut out = u.clone();
    for z in out.data.iter_mut() {
        *z *= alpha;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{CellBox, CellGrid};

    #[test]
    fn x_derivative_of_linear_profile() {
        let grid = SpatialGrid::new(1, 2.0, 21).unwrap();
        let nx = grid.node_count();
        let mut f = SampledField::zeros(nx, 1, 1, 1);
        for ix in 0..nx {
            let x = grid.node_coord(ix)[0];
            *f.entry_mut(ix, 0, 0, 0) = Complex64::new(3.0 * x, 0.0);
        }
        let df = x_derivative(&grid, &f, 0);
        // interior away from the boundary sees the exact slope
        for ix in 1..nx - 1 {
            assert!((df.entry(ix, 0, 0, 0).re - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inner_product_weights() {
        let grid = SpatialGrid::new(1, 1.0, 21).unwrap();
        let cgrid = CellGrid::new(CellBox::unit(1), 8).unwrap();
        let nx = grid.node_count();
        let g = cgrid.node_count();
        let mut f = SampledField::zeros(nx, g, 1, 1);
        for ix in 0..nx {
            for iq in 0..g {
                *f.entry_mut(ix, iq, 0, 0) = Complex64::new(1.0, 0.0);
            }
        }
        // integral of 1 over (-1,1) x cell, cell-normalized: = 2 (up to the
        // trapezoid boundary correction h)
        let val = two_scale_inner(&grid, &f, &f).re;
        assert!((val - 2.0).abs() < 0.11, "{val}");
    }
}
