//! Homogenized coefficients and the discrete homogenized operator.
//!
//! `A2` is the cell mean of `A (B(d_xi) lambda1 + E)`, the first-order part
//! combines `B(d)^* G1`, `G1^H B(d)` (with `G1` the cell mean of
//! `A B(d_xi) lambda0`) and the cell-averaged drift, and `A0` collects the
//! negative corrector energy plus the mean potential. The discrete operator
//! uses the flux form for the second-order part and the hermitian skew pairs
//! for the first-order terms, then is hard-symmetrized with the defect
//! recorded.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::cell::{CellCalculus, CellError, CellOperator, CellSolution};
use crate::fields::{CellGrid, SampledField, SampledProblem};
use crate::operator::{DiscreteOperator, StencilBuilder};

#[derive(Debug, Error)]
pub enum HomogenizeError {
    #[error("corrector identity violated: residuals {first:.3e} / {second:.3e}, corrector means {mean:.3e}")]
    IdentityViolation { first: f64, second: f64, mean: f64 },
    #[error(transparent)]
    Cell(#[from] CellError),
}

/// Homogenized coefficient fields (all with `xi_count = 1`).
pub struct HomogenizedCoefficients {
    /// m x m principal coefficient
    pub a2: SampledField,
    /// m x n cell mean of `A B(d_xi) lambda0`; enters as `B(d)^* G1 + G1^H B(d)`
    pub g1: SampledField,
    /// n x n cell means of the drift factors a_i
    pub abar: Vec<SampledField>,
    /// n x n zero-order coefficient
    pub a0: SampledField,
    /// report-only split of the first-order operator: coefficient of d_i
    pub a1_first: Vec<SampledField>,
    /// report-only split: induced zero-order part (product rule remainder)
    pub a1_zero: SampledField,
}

/// Cell mean of the pointwise product `A * (grad_lambda1 + E)`.
pub fn assemble_a2(ws: &SampledProblem, cells: &CellSolution) -> SampledField {
    let m = ws.m();
    let nx = ws.sgrid.node_count();
    let g = ws.cgrid.node_count();
    let mut out = SampledField::zeros(nx, 1, m, m);
    let vals: Vec<DMatrix<Complex64>> = (0..nx)
        .into_par_iter()
        .map(|ix| {
            let mut acc = DMatrix::<Complex64>::zeros(m, m);
            for iq in 0..g {
                let a = ws.a.at(ix, iq);
                let mut gl = cells.grad_lambda1.at(ix, iq);
                for r in 0..m {
                    gl[(r, r)] += Complex64::new(1.0, 0.0);
                }
                acc += a * gl;
            }
            acc / Complex64::new(g as f64, 0.0)
        })
        .collect();
    for (ix, v) in vals.iter().enumerate() {
        out.set_at(ix, 0, v);
    }
    out
}

/// Cell mean of `A B(d_xi) lambda0` (m x n) plus the drift means, and the
/// report-only first-order/zero-order split by product rule.
pub fn assemble_a1(
    ws: &SampledProblem,
    cells: &CellSolution,
) -> (SampledField, Vec<SampledField>, Vec<SampledField>, SampledField) {
    let spec = &ws.problem.spec;
    let (n, m, d) = (spec.n, spec.m, spec.dim);
    let nx = ws.sgrid.node_count();
    let g = ws.cgrid.node_count();

    let mut g1 = SampledField::zeros(nx, 1, m, n);
    let g1_vals: Vec<DMatrix<Complex64>> = (0..nx)
        .into_par_iter()
        .map(|ix| {
            let mut acc = DMatrix::<Complex64>::zeros(m, n);
            for iq in 0..g {
                acc += ws.a.at(ix, iq) * cells.grad_lambda0.at(ix, iq);
            }
            acc / Complex64::new(g as f64, 0.0)
        })
        .collect();
    for (ix, v) in g1_vals.iter().enumerate() {
        g1.set_at(ix, 0, v);
    }

    let abar: Vec<SampledField> = ws
        .drift_a
        .iter()
        .map(|ai| {
            let mut f = SampledField::zeros(nx, 1, n, n);
            for ix in 0..nx {
                f.set_at(ix, 0, &crate::fields::cell_mean(ai, ix));
            }
            f
        })
        .collect();

    // report-only split: first-order coefficient per axis and the induced
    // zero-order remainder, with centered (one-sided at the edge) x
    // differences of the node fields
    let deriv = |field: &SampledField, axis: usize, ix: usize| -> DMatrix<Complex64> {
        let grid = &ws.sgrid;
        let h = grid.spacing();
        let mi = grid.interior_per_axis();
        let idx = grid.axis_indices(ix);
        let at = |j: usize| {
            let mut id2 = idx.clone();
            id2[axis] = j;
            field.at(grid.flat_index(&id2), 0)
        };
        let i = idx[axis];
        if i == 0 {
            (at(1) - at(0)) / Complex64::new(h, 0.0)
        } else if i == mi - 1 {
            (at(mi - 1) - at(mi - 2)) / Complex64::new(h, 0.0)
        } else {
            (at(i + 1) - at(i - 1)) / Complex64::new(2.0 * h, 0.0)
        }
    };

    let mut a1_first: Vec<SampledField> = (0..d).map(|_| SampledField::zeros(nx, 1, n, n)).collect();
    let mut a1_zero = SampledField::zeros(nx, 1, n, n);
    for ix in 0..nx {
        let g1x = g1.at(ix, 0);
        let mut zero_acc = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..d {
            let bi = &spec.b_mats[i];
            let mut first = -(bi.adjoint() * &g1x) + g1x.adjoint() * bi;
            if !abar.is_empty() {
                let ab = abar[i].at(ix, 0);
                let bb = ws.drift_b[i].at(ix, 0);
                first += &ab * &bb - bb.adjoint() * ab.adjoint();
                zero_acc += &ab * deriv(&ws.drift_b[i], i, ix)
                    - bb.adjoint() * deriv(&abar[i], i, ix).adjoint();
            }
            zero_acc -= bi.adjoint() * deriv(&g1, i, ix);
            a1_first[i].set_at(ix, 0, &first);
        }
        a1_zero.set_at(ix, 0, &zero_acc);
    }

    (g1, abar, a1_first, a1_zero)
}

/// `-mean[(B(d_xi) lambda0)^H A (B(d_xi) lambda0)] + mean[V]`.
pub fn assemble_a0(ws: &SampledProblem, cells: &CellSolution) -> SampledField {
    let n = ws.n();
    let nx = ws.sgrid.node_count();
    let g = ws.cgrid.node_count();
    let mut out = SampledField::zeros(nx, 1, n, n);
    let vals: Vec<DMatrix<Complex64>> = (0..nx)
        .into_par_iter()
        .map(|ix| {
            let mut acc = DMatrix::<Complex64>::zeros(n, n);
            for iq in 0..g {
                let gl = cells.grad_lambda0.at(ix, iq);
                acc -= gl.adjoint() * ws.a.at(ix, iq) * &gl;
                acc += ws.v.at(ix, iq);
            }
            acc / Complex64::new(g as f64, 0.0)
        })
        .collect();
    for (ix, v) in vals.iter().enumerate() {
        out.set_at(ix, 0, v);
    }
    out
}

pub fn assemble_coefficients(
    ws: &SampledProblem,
    cells: &CellSolution,
) -> HomogenizedCoefficients {
    let a2 = assemble_a2(ws, cells);
    let (g1, abar, a1_first, a1_zero) = assemble_a1(ws, cells);
    let a0 = assemble_a0(ws, cells);
    HomogenizedCoefficients { a2, g1, abar, a0, a1_first, a1_zero }
}

#[derive(Debug, Clone)]
pub struct IdentityReport {
    /// max residual of `mean[(B(d_xi)L0)^H A] = sum_i mean[a_i b_i dL1/dxi_i]`
    pub residual_first: f64,
    /// max residual of `mean[(B(d_xi)L0)^H A B(d_xi)L0] = -sum_i mean[a_i b_i dL0/dxi_i]`
    pub residual_second: f64,
    pub max_corrector_mean: f64,
}

const IDENTITY_TOL: f64 = 1e-6;

/// Numerical check of the two corrector integral identities; a violation
/// signals a corrector-solver bug (the check also covers the zero-mean
/// normalization, which the identities implicitly assume).
pub fn check_identities(
    ws: &SampledProblem,
    cells: &CellSolution,
) -> Result<IdentityReport, HomogenizeError> {
    let spec = &ws.problem.spec;
    let (n, m, d) = (spec.n, spec.m, spec.dim);
    let nx = ws.sgrid.node_count();
    let g = ws.cgrid.node_count();
    let calc = CellCalculus::new(&ws.cgrid);

    let residuals: Vec<(f64, f64)> = (0..nx)
        .into_par_iter()
        .map(|ix| {
            // left-hand sides
            let mut lhs1 = DMatrix::<Complex64>::zeros(n, m);
            let mut lhs2 = DMatrix::<Complex64>::zeros(n, n);
            for iq in 0..g {
                let gl0 = cells.grad_lambda0.at(ix, iq);
                let a = ws.a.at(ix, iq);
                lhs1 += gl0.adjoint() * &a;
                lhs2 += gl0.adjoint() * a * &gl0;
            }
            lhs1 /= Complex64::new(g as f64, 0.0);
            lhs2 /= Complex64::new(g as f64, 0.0);

            // right-hand sides need the plain xi derivatives of the correctors
            let mut rhs1 = DMatrix::<Complex64>::zeros(n, m);
            let mut rhs2 = DMatrix::<Complex64>::zeros(n, n);
            for i in 0..d {
                let mut dl1 = vec![Complex64::new(0.0, 0.0); g * n * m];
                for iq in 0..g {
                    let o = cells.lambda1.offset(ix, iq);
                    dl1[iq * n * m..(iq + 1) * n * m]
                        .copy_from_slice(&cells.lambda1.data[o..o + n * m]);
                }
                calc.derivative(i, n * m, &mut dl1);
                let mut dl0 = vec![Complex64::new(0.0, 0.0); g * n * n];
                for iq in 0..g {
                    let o = cells.lambda0.offset(ix, iq);
                    dl0[iq * n * n..(iq + 1) * n * n]
                        .copy_from_slice(&cells.lambda0.data[o..o + n * n]);
                }
                calc.derivative(i, n * n, &mut dl0);
                if i < ws.drift_a.len() {
                    let bb = ws.drift_b[i].at(ix, 0);
                    for iq in 0..g {
                        let ai = ws.drift_a[i].at(ix, iq);
                        let aib = &ai * &bb;
                        let d1 = DMatrix::from_fn(n, m, |r, c| dl1[iq * n * m + r * m + c]);
                        let d0 = DMatrix::from_fn(n, n, |r, c| dl0[iq * n * n + r * n + c]);
                        rhs1 += &aib * d1;
                        rhs2 -= &aib * d0;
                    }
                }
            }
            rhs1 /= Complex64::new(g as f64, 0.0);
            rhs2 /= Complex64::new(g as f64, 0.0);
            ((&lhs1 - &rhs1).norm(), (&lhs2 - &rhs2).norm())
        })
        .collect();

    let residual_first = residuals.iter().fold(0.0f64, |a, r| a.max(r.0));
    let residual_second = residuals.iter().fold(0.0f64, |a, r| a.max(r.1));
    let mean0 = crate::cell::max_cell_mean(&cells.lambda0);
    let mean1 = crate::cell::max_cell_mean(&cells.lambda1);
    let max_corrector_mean = mean0.max(mean1);
    let report = IdentityReport { residual_first, residual_second, max_corrector_mean };
    if residual_first > IDENTITY_TOL
        || residual_second > IDENTITY_TOL
        || max_corrector_mean > IDENTITY_TOL
    {
        return Err(HomogenizeError::IdentityViolation {
            first: residual_first,
            second: residual_second,
            mean: max_corrector_mean,
        });
    }
    Ok(report)
}

/// Effective coefficient at an arbitrary point by a fresh cell solve
/// (used for midpoint sampling in the one-dimensional flux form).
pub fn a2_at_point(ws: &SampledProblem, x: &[f64]) -> Result<DMatrix<Complex64>, CellError> {
    let spec = &ws.problem.spec;
    let (n, m, d) = (spec.n, spec.m, spec.dim);
    let calc = CellCalculus::new(&ws.cgrid);
    let g = ws.cgrid.node_count();
    let a_samples: Vec<DMatrix<Complex64>> =
        (0..g).map(|iq| (spec.coeff_a)(x, &ws.cgrid.node_coord(iq))).collect();
    let op = CellOperator::build(&calc, &spec.b_mats, n, m, &|iq| a_samples[iq].clone());
    // lambda1 columns, then the quadrature of A (grad + E)
    let mut lambda1 = SampledField::zeros(1, g, n, m);
    for col in 0..m {
        let mut rhs = vec![Complex64::new(0.0, 0.0); g * n];
        // rhs = sum_i B_i^H dA/dxi_i e_col
        for axis in 0..d {
            let mut da = vec![Complex64::new(0.0, 0.0); g * m * m];
            for iq in 0..g {
                for r in 0..m {
                    for c in 0..m {
                        da[iq * m * m + r * m + c] = a_samples[iq][(r, c)];
                    }
                }
            }
            calc.derivative(axis, m * m, &mut da);
            let b = &spec.b_mats[axis];
            for iq in 0..g {
                for r in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for t in 0..m {
                        s += b[(t, r)].conj() * da[iq * m * m + t * m + col];
                    }
                    rhs[iq * n + r] += s;
                }
            }
        }
        let out = op.solve(&rhs)?;
        for iq in 0..g {
            for r in 0..n {
                *lambda1.entry_mut(0, iq, r, col) = out.solution[iq * n + r];
            }
        }
    }
    let grad = crate::cell::symbol_gradient_at(&calc, &spec.b_mats, &lambda1, 0);
    let mut acc = DMatrix::<Complex64>::zeros(m, m);
    for iq in 0..g {
        let mut gl = DMatrix::from_fn(m, m, |r, c| grad[iq * m * m + r * m + c]);
        for r in 0..m {
            gl[(r, r)] += Complex64::new(1.0, 0.0);
        }
        acc += &a_samples[iq] * gl;
    }
    Ok(acc / Complex64::new(g as f64, 0.0))
}

/// Discrete homogenized operator on the spatial grid.
pub fn assemble_h0(
    ws: &SampledProblem,
    homog: &HomogenizedCoefficients,
) -> Result<DiscreteOperator, HomogenizeError> {
    let spec = &ws.problem.spec;
    let (n, d) = (spec.n, spec.dim);
    let grid = ws.sgrid.clone();
    let mut builder = StencilBuilder::new(grid.clone(), n);
    let uniform = ws.a_uniform_in_x();
    let a2_const = if uniform { Some(homog.a2.at(0, 0)) } else { None };

    for i in 0..d {
        let bi = &spec.b_mats[i];
        // face coefficient between node ix and its +i neighbor
        let h = grid.spacing();
        let face_up = |ix: usize| -> DMatrix<Complex64> {
            let a2f = if let Some(c) = &a2_const {
                c.clone()
            } else if d == 1 {
                let mut x = grid.node_coord(ix);
                x[i] += 0.5 * h;
                a2_at_point(ws, &x).expect("midpoint cell solve failed")
            } else {
                // face average of the adjacent node values (clamped at the box)
                let mi = grid.interior_per_axis();
                let idx = grid.axis_indices(ix);
                let other = if idx[i] + 1 < mi {
                    let mut id2 = idx.clone();
                    id2[i] += 1;
                    grid.flat_index(&id2)
                } else {
                    ix
                };
                (homog.a2.at(ix, 0) + homog.a2.at(other, 0)) * Complex64::new(0.5, 0.0)
            };
            bi.adjoint() * a2f * bi
        };
        let face_down_boundary = |ix: usize| -> DMatrix<Complex64> {
            let a2f = if let Some(c) = &a2_const {
                c.clone()
            } else if d == 1 {
                let mut x = grid.node_coord(ix);
                x[i] -= 0.5 * h;
                a2_at_point(ws, &x).expect("midpoint cell solve failed")
            } else {
                homog.a2.at(ix, 0)
            };
            bi.adjoint() * a2f * bi
        };
        builder.add_flux(i, &face_up, &face_down_boundary);
    }

    // mixed second-order terms
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let bi = &spec.b_mats[i];
            let bj = &spec.b_mats[j];
            let coeff =
                |ix: usize| -> DMatrix<Complex64> { bi.adjoint() * homog.a2.at(ix, 0) * bj };
            // skip axes whose coupling vanishes identically
            let any = (0..ws.sgrid.node_count().min(16)).any(|ix| coeff(ix).norm() > 1e-14);
            if any {
                builder.add_cross(i, j, &coeff);
            }
        }
    }

    // first-order corrector term B(d)^* G1 + G1^H B(d)
    let g1_nonzero = (0..ws.sgrid.node_count()).any(|ix| homog.g1.at(ix, 0).norm() > 1e-13);
    if g1_nonzero {
        for i in 0..d {
            let bi_neg_adj = -spec.b_mats[i].adjoint();
            let x_at = |_: usize| bi_neg_adj.clone();
            let y_at = |ix: usize| homog.g1.at(ix, 0);
            builder.add_skew_pair(i, &x_at, &y_at);
        }
    }

    // mean drift term
    for i in 0..homog.abar.len() {
        let x_at = |ix: usize| homog.abar[i].at(ix, 0);
        let y_at = |ix: usize| ws.drift_b[i].at(ix, 0);
        builder.add_skew_pair(i, &x_at, &y_at);
    }

    builder.add_diagonal(&|ix| homog.a0.at(ix, 0));
    Ok(builder.finish())
}

/// Cell-grid accessor for tests and the command layer.
pub fn cell_grid_of(ws: &SampledProblem) -> &CellGrid {
    &ws.cgrid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::compute_correctors;
    use crate::fields::{validate_problem, CellBox, MatrixClosure, ProblemSpec, SpatialGrid};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn scalar(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> MatrixClosure {
        Arc::new(move |x, xi| DMatrix::from_element(1, 1, Complex64::new(f(x, xi), 0.0)))
    }

    fn build_ws(spec: ProblemSpec, l: f64, m_pts: usize, k: usize) -> SampledProblem {
        let sgrid = SpatialGrid::new(spec.dim, l, m_pts).unwrap();
        let cgrid = CellGrid::new(spec.cell.clone(), k).unwrap();
        let vp = validate_problem(&spec, &sgrid, &cgrid).unwrap();
        SampledProblem::build(vp, sgrid, cgrid)
    }

    fn cosine_spec() -> ProblemSpec {
        ProblemSpec {
            dim: 1,
            n: 1,
            m: 1,
            b_mats: vec![DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0))],
            coeff_a: scalar(|_, xi| 2.0 + (2.0 * std::f64::consts::PI * xi[0]).cos()),
            drift_a: vec![],
            drift_b: vec![],
            potential: scalar(|_, _| 0.0),
            cell: CellBox::unit(1),
        }
    }

    fn drift_spec() -> ProblemSpec {
        let mut s = cosine_spec();
        s.drift_a = vec![scalar(|_, xi| (2.0 * std::f64::consts::PI * xi[0]).cos())];
        s.drift_b = vec![Arc::new(|_| DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)))];
        s
    }

    #[test]
    fn cosine_effective_coefficient_is_harmonic_mean() {
        let ws = build_ws(cosine_spec(), 4.0, 33, 64);
        let cells = compute_correctors(&ws).unwrap();
        let a2 = assemble_a2(&ws, &cells);
        for ix in 0..ws.sgrid.node_count() {
            assert_abs_diff_eq!(a2.at(ix, 0)[(0, 0)].re, 3.0f64.sqrt(), epsilon = 1e-8);
        }
    }

    #[test]
    fn constant_coefficient_passes_through() {
        let mut s = cosine_spec();
        s.coeff_a = scalar(|_, _| 1.7);
        let ws = build_ws(s, 4.0, 33, 16);
        let cells = compute_correctors(&ws).unwrap();
        let a2 = assemble_a2(&ws, &cells);
        assert_abs_diff_eq!(a2.at(3, 0)[(0, 0)].re, 1.7, epsilon = 1e-13);
    }

    #[test]
    fn random_periodic_coefficient_gives_hermitian_a2() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c1: f64 = 0.4 * rng.gen::<f64>();
            let c2: f64 = 0.4 * rng.gen::<f64>();
            let c3: f64 = 0.4 * rng.gen::<f64>();
            let spec = ProblemSpec {
                dim: 1,
                n: 1,
                m: 1,
                b_mats: vec![DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0))],
                coeff_a: scalar(move |_, xi| {
                    let t = 2.0 * std::f64::consts::PI * xi[0];
                    2.0 + c1 * t.cos() + c2 * (2.0 * t).sin() + c3 * (3.0 * t).cos()
                }),
                drift_a: vec![],
                drift_b: vec![],
                potential: scalar(|_, _| 0.0),
                cell: CellBox::unit(1),
            };
            let ws = build_ws(spec, 3.0, 17, 32);
            let cells = compute_correctors(&ws).unwrap();
            let a2 = assemble_a2(&ws, &cells);
            let v = a2.at(0, 0);
            assert!((v[(0, 0)] - v[(0, 0)].conj()).norm() < 1e-12);
            // scalar case stays inside the measured ellipticity bounds
            assert!(v[(0, 0)].re >= ws.problem.c1 - 1e-10);
            assert!(v[(0, 0)].re <= ws.problem.c2 + 1e-10);
        }
    }

    #[test]
    fn a0_reduces_to_mean_potential_without_drift() {
        let mut s = cosine_spec();
        s.potential = scalar(|x, xi| {
            -2.0 * (-x[0] * x[0]).exp() * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * xi[0]).cos())
        });
        let ws = build_ws(s, 4.0, 33, 32);
        let cells = compute_correctors(&ws).unwrap();
        let a0 = assemble_a0(&ws, &cells);
        for ix in [0usize, 7, 15] {
            let x = ws.sgrid.node_coord(ix)[0];
            assert_abs_diff_eq!(a0.at(ix, 0)[(0, 0)].re, -2.0 * (-x * x).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn corrector_energy_part_of_a0_is_negative() {
        let ws = build_ws(drift_spec(), 4.0, 33, 32);
        let cells = compute_correctors(&ws).unwrap();
        let a0 = assemble_a0(&ws, &cells);
        // V = 0 here, so a0 is exactly the negative corrector energy
        for ix in 0..ws.sgrid.node_count() {
            assert!(a0.at(ix, 0)[(0, 0)].re <= 1e-12);
        }
        assert!(a0.at(0, 0)[(0, 0)].re < -1e-4, "drift must produce a nontrivial corrector");
    }

    #[test]
    fn identities_hold_for_drift_problem() {
        let ws = build_ws(drift_spec(), 4.0, 33, 32);
        let cells = compute_correctors(&ws).unwrap();
        let report = check_identities(&ws, &cells).unwrap();
        assert!(report.residual_first < 1e-8, "first identity {}", report.residual_first);
        assert!(report.residual_second < 1e-8, "second identity {}", report.residual_second);
    }

    #[test]
    fn corrupted_corrector_trips_identity_check() {
        let ws = build_ws(drift_spec(), 4.0, 33, 32);
        let mut cells = compute_correctors(&ws).unwrap();
        // inject a fast oscillation into lambda1 and its cached gradient
        let calc = CellCalculus::new(&ws.cgrid);
        for ix in 0..cells.lambda1.x_count {
            for iq in 0..cells.lambda1.xi_count {
                let xi = ws.cgrid.node_coord(iq)[0];
                *cells.lambda1.entry_mut(ix, iq, 0, 0) +=
                    Complex64::new(0.1 * (2.0 * std::f64::consts::PI * xi).sin(), 0.0);
            }
        }
        let g1 = (0..cells.lambda1.x_count)
            .map(|ix| {
                crate::cell::symbol_gradient_at(&calc, &ws.problem.spec.b_mats, &cells.lambda1, ix)
            })
            .collect::<Vec<_>>();
        for (ix, gg) in g1.iter().enumerate() {
            let o = cells.grad_lambda1.offset(ix, 0);
            cells.grad_lambda1.data[o..o + gg.len()].copy_from_slice(gg);
        }
        match check_identities(&ws, &cells) {
            Err(HomogenizeError::IdentityViolation { .. }) => {}
            _ => panic!("expected identity violation"),
        }
    }

    #[test]
    fn mean_shifted_corrector_is_caught() {
        let ws = build_ws(drift_spec(), 4.0, 33, 32);
        let mut cells = compute_correctors(&ws).unwrap();
        for ix in 0..cells.lambda1.x_count {
            for iq in 0..cells.lambda1.xi_count {
                *cells.lambda1.entry_mut(ix, iq, 0, 0) += Complex64::new(0.25, 0.0);
            }
        }
        match check_identities(&ws, &cells) {
            Err(HomogenizeError::IdentityViolation { mean, .. }) => assert!(mean > 0.2),
            _ => panic!("expected identity violation from the shifted mean"),
        }
    }

    #[test]
    fn h0_of_unit_coefficient_is_dirichlet_laplacian() {
        let mut s = cosine_spec();
        s.coeff_a = scalar(|_, _| 1.0);
        let ws = build_ws(s, 10.0, 401, 16);
        let cells = compute_correctors(&ws).unwrap();
        let homog = assemble_coefficients(&ws, &cells);
        let h0 = assemble_h0(&ws, &homog).unwrap();
        assert!(h0.symmetrization_defect < 1e-13);
        let tri = h0.matrix.as_real_tridiag().expect("tridiagonal");
        let vals = tri.eigenvalues_by_index_range(0, 2);
        for (k, v) in vals.iter().enumerate() {
            let exact = ((k + 1) as f64 * std::f64::consts::PI / 20.0).powi(2);
            assert_abs_diff_eq!(v, &exact, epsilon = 3e-4);
        }
    }

    #[test]
    fn constant_potential_shifts_spectrum_exactly() {
        let mut s1 = cosine_spec();
        s1.coeff_a = scalar(|_, _| 1.0);
        let mut s2 = cosine_spec();
        s2.coeff_a = scalar(|_, _| 1.0);
        s2.potential = scalar(|_, _| 2.5);
        let w1 = build_ws(s1, 6.0, 65, 16);
        let w2 = build_ws(s2, 6.0, 65, 16);
        let c1 = compute_correctors(&w1).unwrap();
        let c2 = compute_correctors(&w2).unwrap();
        let h1 = assemble_h0(&w1, &assemble_coefficients(&w1, &c1)).unwrap();
        let h2 = assemble_h0(&w2, &assemble_coefficients(&w2, &c2)).unwrap();
        let t1 = h1.matrix.as_real_tridiag().unwrap();
        let t2 = h2.matrix.as_real_tridiag().unwrap();
        let v1 = t1.eigenvalues_by_index_range(0, 3);
        let v2 = t2.eigenvalues_by_index_range(0, 3);
        for (a, b) in v1.iter().zip(&v2) {
            assert_abs_diff_eq!(a + 2.5, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn h0_hermitian_for_random_smooth_coefficients() {
        let spec = ProblemSpec {
            dim: 1,
            n: 1,
            m: 1,
            b_mats: vec![DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0))],
            coeff_a: scalar(|x, xi| {
                2.0 + 0.5 * (2.0 * std::f64::consts::PI * xi[0]).cos() + 0.2 * (x[0]).tanh()
            }),
            drift_a: vec![scalar(|x, xi| {
                0.4 * (2.0 * std::f64::consts::PI * xi[0]).sin() + 0.1 * x[0].cos()
            })],
            drift_b: vec![Arc::new(|x| {
                DMatrix::from_element(1, 1, Complex64::new(1.0 + 0.1 * x[0].sin(), 0.0))
            })],
            potential: scalar(|x, _| -(-x[0] * x[0]).exp()),
            cell: CellBox::unit(1),
        };
        let ws = build_ws(spec, 4.0, 41, 16);
        let cells = compute_correctors(&ws).unwrap();
        let homog = assemble_coefficients(&ws, &cells);
        let h0 = assemble_h0(&ws, &homog).unwrap();
        assert!(h0.matrix.hermiticity_defect() < 1e-10);
        // quadratic form is real for random vectors
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = h0.dim();
        let u: Vec<Complex64> =
            (0..dim).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let hu = h0.matrix.matvec(&u);
        let quad: Complex64 = u.iter().zip(&hu).map(|(a, b)| a.conj() * b).sum();
        assert!(quad.im.abs() < 1e-10 * quad.re.abs().max(1.0));
    }

    #[test]
    fn drift_only_first_order_reduces_to_mean(){
        // a_i constant in xi, A constant: lambda0 = lambda1 = 0 and the
        // first-order coefficient must equal the plain drift mean
        let spec = ProblemSpec {
            dim: 1,
            n: 1,
            m: 1,
            b_mats: vec![DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0))],
            coeff_a: scalar(|_, _| 1.0),
            drift_a: vec![Arc::new(|x: &[f64], _: &[f64]| {
                DMatrix::from_element(1, 1, Complex64::new(0.0, 0.3 + 0.1 * x[0].sin()))
            })],
            drift_b: vec![Arc::new(|_| DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)))],
            potential: scalar(|_, _| 0.0),
            cell: CellBox::unit(1),
        };
        let ws = build_ws(spec, 4.0, 33, 16);
        let cells = compute_correctors(&ws).unwrap();
        assert!(cells.lambda0.norm() < 1e-12);
        let (g1, abar, a1_first, _) = assemble_a1(&ws, &cells);
        assert!(g1.norm() < 1e-12);
        for ix in [0usize, 5, 20] {
            let x = ws.sgrid.node_coord(ix)[0];
            let a = Complex64::new(0.0, 0.3 + 0.1 * x.sin());
            assert!((abar[0].at(ix, 0)[(0, 0)] - a).norm() < 1e-13);
            // first-order coefficient: a b - b^H a^H = a - conj(a) = 2i Im(a)
            let expect = a - a.conj();
            assert!((a1_first[0].at(ix, 0)[(0, 0)] - expect).norm() < 1e-13);
        }
    }

    #[test]
    fn a1_matches_resolution_doubled_recomputation() {
        let compute = |k: usize| {
            let ws = build_ws(drift_spec(), 4.0, 33, k);
            let cells = compute_correctors(&ws).unwrap();
            let (g1, abar, _, _) = assemble_a1(&ws, &cells);
            (g1.at(4, 0)[(0, 0)], abar[0].at(4, 0)[(0, 0)])
        };
        let (g1a, aba) = compute(32);
        let (g1b, abb) = compute(64);
        assert!((g1a - g1b).norm() < 1e-8);
        assert!((aba - abb).norm() < 1e-12);
    }
}
