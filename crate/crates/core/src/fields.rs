//! Problem data: coefficient closures, grids, sampled matrix fields, and
//! the structural validation (hermiticity, ellipticity bounds, symbol rank).
//!
//! Coefficients are supplied analytically as closures of the slow variable x
//! and the fast (cell) variable xi; everything the solvers consume is sampled
//! from those closures on the configured grids.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

pub type MatrixClosure = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<Complex64> + Send + Sync>;
pub type SpatialMatrixClosure = Arc<dyn Fn(&[f64]) -> DMatrix<Complex64> + Send + Sync>;

#[derive(Debug, Error)]
pub enum FieldsError {
    #[error("ellipticity violation: {0}")]
    EllipticityViolation(String),
    #[error("rank deficiency: {0}")]
    RankDeficiency(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Axis-aligned lattice cell `[0, T_1) x ... x [0, T_d)`.
#[derive(Debug, Clone)]
pub struct CellBox {
    pub periods: Vec<f64>,
}

impl CellBox {
    pub fn unit(dim: usize) -> Self {
        Self { periods: vec![1.0; dim] }
    }

    pub fn volume(&self) -> f64 {
        self.periods.iter().product()
    }
}

/// Uniform periodic grid on the cell, `points_per_axis` nodes per axis
/// (even, at least 8), equal quadrature weights.
#[derive(Debug, Clone)]
pub struct CellGrid {
    pub cell: CellBox,
    pub points_per_axis: usize,
}

impl CellGrid {
    pub fn new(cell: CellBox, points_per_axis: usize) -> Result<Self, FieldsError> {
        if points_per_axis < 8 || points_per_axis % 2 != 0 {
            return Err(FieldsError::InvalidGrid(format!(
                "cell grid needs an even number of points >= 8 per axis, got {points_per_axis}"
            )));
        }
        Ok(Self { cell, points_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.cell.periods.len()
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis.pow(self.dim() as u32)
    }

    /// Quadrature weight of one node: `|cell| / K^d`.
    pub fn weight(&self) -> f64 {
        self.cell.volume() / self.node_count() as f64
    }

    pub fn node_coord(&self, iq: usize) -> Vec<f64> {
        let k = self.points_per_axis;
        let d = self.dim();
        let mut rest = iq;
        let mut coord = vec![0.0; d];
        for a in (0..d).rev() {
            let q = rest % k;
            rest /= k;
            coord[a] = q as f64 * self.cell.periods[a] / k as f64;
        }
        coord
    }

    /// Flattened index from per-axis indices.
    pub fn flat_index(&self, q: &[usize]) -> usize {
        let k = self.points_per_axis;
        q.iter().fold(0usize, |acc, &qi| acc * k + qi)
    }
}

/// Truncation of the whole space to the Dirichlet box `[-L, L]^d`,
/// `points_per_axis` nodes per axis including the boundary. Unknowns live on
/// the interior nodes; boundary values are identically zero.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    pub dim: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
}

impl SpatialGrid {
    pub fn new(dim: usize, half_width: f64, points_per_axis: usize) -> Result<Self, FieldsError> {
        if points_per_axis < 16 {
            return Err(FieldsError::InvalidGrid(format!(
                "spatial grid needs at least 16 points per axis, got {points_per_axis}"
            )));
        }
        if half_width <= 0.0 {
            return Err(FieldsError::InvalidGrid("half width must be positive".into()));
        }
        Ok(Self { dim, half_width, points_per_axis })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points_per_axis as f64 - 1.0)
    }

    pub fn interior_per_axis(&self) -> usize {
        self.points_per_axis - 2
    }

    pub fn node_count(&self) -> usize {
        self.interior_per_axis().pow(self.dim as u32)
    }

    pub fn node_coord(&self, ix: usize) -> Vec<f64> {
        let mi = self.interior_per_axis();
        let h = self.spacing();
        let mut rest = ix;
        let mut coord = vec![0.0; self.dim];
        for a in (0..self.dim).rev() {
            let i = rest % mi;
            rest /= mi;
            coord[a] = -self.half_width + (i + 1) as f64 * h;
        }
        coord
    }

    pub fn flat_index(&self, i: &[usize]) -> usize {
        let mi = self.interior_per_axis();
        i.iter().fold(0usize, |acc, &ii| acc * mi + ii)
    }

    pub fn axis_indices(&self, ix: usize) -> Vec<usize> {
        let mi = self.interior_per_axis();
        let mut rest = ix;
        let mut idx = vec![0usize; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = rest % mi;
            rest /= mi;
        }
        idx
    }

    /// Quadrature weight per interior node (boundary values vanish).
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }
}

/// Dense sample tensor of p x q complex matrices over (x node, cell node).
#[derive(Debug, Clone)]
pub struct SampledField {
    pub x_count: usize,
    pub xi_count: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl SampledField {
    pub fn zeros(x_count: usize, xi_count: usize, rows: usize, cols: usize) -> Self {
        Self {
            x_count,
            xi_count,
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); x_count * xi_count * rows * cols],
        }
    }

    pub fn sample(
        closure: &MatrixClosure,
        sgrid: &SpatialGrid,
        cgrid: &CellGrid,
        rows: usize,
        cols: usize,
    ) -> Self {
        let x_count = sgrid.node_count();
        let xi_count = cgrid.node_count();
        let per_x = xi_count * rows * cols;
        let chunks: Vec<Vec<Complex64>> = (0..x_count)
            .into_par_iter()
            .map(|ix| {
                let x = sgrid.node_coord(ix);
                let mut buf = Vec::with_capacity(per_x);
                for iq in 0..xi_count {
                    let xi = cgrid.node_coord(iq);
                    let m = closure(&x, &xi);
                    debug_assert_eq!((m.nrows(), m.ncols()), (rows, cols));
                    for r in 0..rows {
                        for c in 0..cols {
                            buf.push(m[(r, c)]);
                        }
                    }
                }
                buf
            })
            .collect();
        let mut data = Vec::with_capacity(x_count * per_x);
        for ch in chunks {
            data.extend_from_slice(&ch);
        }
        Self { x_count, xi_count, rows, cols, data }
    }

    #[inline]
    pub fn offset(&self, ix: usize, iq: usize) -> usize {
        (ix * self.xi_count + iq) * self.rows * self.cols
    }

    #[inline]
    pub fn entry(&self, ix: usize, iq: usize, r: usize, c: usize) -> Complex64 {
        self.data[self.offset(ix, iq) + r * self.cols + c]
    }

    #[inline]
    pub fn entry_mut(&mut self, ix: usize, iq: usize, r: usize, c: usize) -> &mut Complex64 {
        let o = self.offset(ix, iq) + r * self.cols + c;
        &mut self.data[o]
    }

    pub fn at(&self, ix: usize, iq: usize) -> DMatrix<Complex64> {
        let o = self.offset(ix, iq);
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.data[o + r * self.cols + c])
    }

    pub fn set_at(&mut self, ix: usize, iq: usize, m: &DMatrix<Complex64>) {
        let o = self.offset(ix, iq);
        for r in 0..self.rows {
            for c in 0..self.cols {
                self.data[o + r * self.cols + c] = m[(r, c)];
            }
        }
    }

    /// Frobenius norm over everything.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Mean over the cell at one x node: `|cell|^{-1} integral of f(x, .)`.
pub fn cell_mean(f: &SampledField, ix: usize) -> DMatrix<Complex64> {
    let mut acc = DMatrix::<Complex64>::zeros(f.rows, f.cols);
    for iq in 0..f.xi_count {
        let o = f.offset(ix, iq);
        for r in 0..f.rows {
            for c in 0..f.cols {
                acc[(r, c)] += f.data[o + r * f.cols + c];
            }
        }
    }
    acc / Complex64::new(f.xi_count as f64, 0.0)
}

/// Full description of the perturbed operator
/// `B(d)^* A_eps B(d) + a_eps(x, d) + V_eps`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub dim: usize,
    /// system size (columns of the B_i)
    pub n: usize,
    /// rows of the B_i
    pub m: usize,
    /// the d constant m x n matrices B_i
    pub b_mats: Vec<DMatrix<Complex64>>,
    /// hermitian m x m principal coefficient A(x, xi)
    pub coeff_a: MatrixClosure,
    /// n x n drift factors a_i(x, xi)
    pub drift_a: Vec<MatrixClosure>,
    /// n x n drift factors b_i(x)
    pub drift_b: Vec<SpatialMatrixClosure>,
    /// hermitian n x n potential V(x, xi)
    pub potential: MatrixClosure,
    pub cell: CellBox,
}

impl ProblemSpec {
    /// True when no coefficient depends on the fast variable. Probed on the
    /// sampled tensors, not the closures.
    pub fn has_drift(&self) -> bool {
        !self.drift_a.is_empty()
    }
}

/// Per-direction certificate from the symbol rank check.
#[derive(Debug, Clone)]
pub struct RankSample {
    pub zeta: Vec<f64>,
    pub min_singular_value: f64,
}

/// Problem annotated with measured ellipticity bounds and the rank
/// certificate.
#[derive(Clone)]
pub struct ValidatedProblem {
    pub spec: ProblemSpec,
    pub c1: f64,
    pub c2: f64,
    pub hermiticity_defect_a: f64,
    pub hermiticity_defect_v: f64,
    pub rank_certificate: Vec<RankSample>,
}

const HERMITICITY_TOL: f64 = 1e-12;

fn hermiticity_defect(m: &DMatrix<Complex64>) -> f64 {
    let mut d = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..=i {
            d = d.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    d
}

/// Deterministic sample of unit directions: the 2d axis directions plus 32
/// seeded pseudo-random unit vectors.
fn rank_check_directions(dim: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for a in 0..dim {
        for s in [1.0, -1.0] {
            let mut z = vec![0.0; dim];
            z[a] = s;
            dirs.push(z);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x4a6b_1d2c);
    for _ in 0..32 {
        loop {
            let z: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let nrm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm > 1e-3 {
                dirs.push(z.iter().map(|v| v / nrm).collect());
                break;
            }
        }
    }
    dirs
}

/// Structural validation: A and V hermitian at every sample, A uniformly
/// elliptic, and the symbol B(zeta) of full column rank over the sampled
/// directions. Deterministic for fixed inputs.
pub fn validate_problem(
    spec: &ProblemSpec,
    sgrid: &SpatialGrid,
    cgrid: &CellGrid,
) -> Result<ValidatedProblem, FieldsError> {
    let a_samples = SampledField::sample(&spec.coeff_a, sgrid, cgrid, spec.m, spec.m);
    let v_samples = SampledField::sample(&spec.potential, sgrid, cgrid, spec.n, spec.n);

    struct NodeStats {
        herm_a: f64,
        herm_v: f64,
        min_eig: f64,
        max_eig: f64,
    }
    let stats: Vec<NodeStats> = (0..a_samples.x_count)
        .into_par_iter()
        .map(|ix| {
            let mut st = NodeStats {
                herm_a: 0.0,
                herm_v: 0.0,
                min_eig: f64::INFINITY,
                max_eig: f64::NEG_INFINITY,
            };
            for iq in 0..a_samples.xi_count {
                let a = a_samples.at(ix, iq);
                st.herm_a = st.herm_a.max(hermiticity_defect(&a));
                let v = v_samples.at(ix, iq);
                st.herm_v = st.herm_v.max(hermiticity_defect(&v));
                let ah = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
                let eigs = crate::linalg::hermeig::hermitian_eigenvalues(&ah);
                st.min_eig = st.min_eig.min(eigs[0]);
                st.max_eig = st.max_eig.max(*eigs.last().unwrap());
            }
            st
        })
        .collect();
    let herm_a = stats.iter().fold(0.0f64, |m, s| m.max(s.herm_a));
    let herm_v = stats.iter().fold(0.0f64, |m, s| m.max(s.herm_v));
    let c1 = stats.iter().fold(f64::INFINITY, |m, s| m.min(s.min_eig));
    let c2 = stats.iter().fold(f64::NEG_INFINITY, |m, s| m.max(s.max_eig));

    if herm_a > HERMITICITY_TOL {
        return Err(FieldsError::EllipticityViolation(format!(
            "principal coefficient hermiticity defect {herm_a:.3e} exceeds {HERMITICITY_TOL:.0e}"
        )));
    }
    if herm_v > HERMITICITY_TOL {
        return Err(FieldsError::EllipticityViolation(format!(
            "potential hermiticity defect {herm_v:.3e} exceeds {HERMITICITY_TOL:.0e}"
        )));
    }
    if c1 <= 0.0 {
        return Err(FieldsError::EllipticityViolation(format!(
            "minimum coefficient eigenvalue {c1:.6e} is not positive"
        )));
    }

    let mut rank_certificate = Vec::new();
    for zeta in rank_check_directions(spec.dim) {
        let mut b = DMatrix::<Complex64>::zeros(spec.m, spec.n);
        for (bi, z) in spec.b_mats.iter().zip(&zeta) {
            b += bi * Complex64::new(*z, 0.0);
        }
        let sv = b.singular_values();
        let smin = sv.iter().fold(f64::INFINITY, |m, &s| m.min(s));
        let smax = sv.iter().fold(0.0f64, |m, &s| m.max(s));
        if sv.len() < spec.n || smin <= 1e-10 * smax.max(1.0) {
            return Err(FieldsError::RankDeficiency(format!(
                "symbol B(zeta) loses rank at zeta = {zeta:?} (min singular value {smin:.3e})"
            )));
        }
        rank_certificate.push(RankSample { zeta, min_singular_value: smin });
    }

    Ok(ValidatedProblem {
        spec: spec.clone(),
        c1,
        c2,
        hermiticity_defect_a: herm_a,
        hermiticity_defect_v: herm_v,
        rank_certificate,
    })
}

/// Validated problem with every coefficient sampled on the configured grids.
/// This is the working set the solver stages share.
#[derive(Clone)]
pub struct SampledProblem {
    pub problem: ValidatedProblem,
    pub sgrid: SpatialGrid,
    pub cgrid: CellGrid,
    /// m x m principal coefficient over (x, xi)
    pub a: SampledField,
    /// n x n potential over (x, xi)
    pub v: SampledField,
    /// n x n drift factors a_i over (x, xi)
    pub drift_a: Vec<SampledField>,
    /// n x n drift factors b_i over x (xi_count = 1)
    pub drift_b: Vec<SampledField>,
}

impl SampledProblem {
    pub fn build(
        problem: ValidatedProblem,
        sgrid: SpatialGrid,
        cgrid: CellGrid,
    ) -> Self {
        let spec = &problem.spec;
        let a = SampledField::sample(&spec.coeff_a, &sgrid, &cgrid, spec.m, spec.m);
        let v = SampledField::sample(&spec.potential, &sgrid, &cgrid, spec.n, spec.n);
        let drift_a = spec
            .drift_a
            .iter()
            .map(|c| SampledField::sample(c, &sgrid, &cgrid, spec.n, spec.n))
            .collect();
        let drift_b = spec
            .drift_b
            .iter()
            .map(|c| {
                let x_count = sgrid.node_count();
                let mut out = SampledField::zeros(x_count, 1, spec.n, spec.n);
                for ix in 0..x_count {
                    let m = c(&sgrid.node_coord(ix));
                    out.set_at(ix, 0, &m);
                }
                out
            })
            .collect();
        Self { problem, sgrid, cgrid, a, v, drift_a, drift_b }
    }

    pub fn n(&self) -> usize {
        self.problem.spec.n
    }

    pub fn m(&self) -> usize {
        self.problem.spec.m
    }

    pub fn dim(&self) -> usize {
        self.problem.spec.dim
    }

    /// True when the sampled principal coefficient is identical at every
    /// spatial node, so one cell factorization serves all of them.
    pub fn a_uniform_in_x(&self) -> bool {
        let per_x = self.a.xi_count * self.a.rows * self.a.cols;
        let first = &self.a.data[0..per_x];
        (1..self.a.x_count).all(|ix| {
            &self.a.data[ix * per_x..(ix + 1) * per_x] == first
        })
    }
}

/// Fraction of `|v|^2` carried by interior nodes within 10% of the box
/// boundary; a large value signals the truncation radius is too small.
pub fn boundary_mass_fraction(grid: &SpatialGrid, ncomp: usize, v: &DVector<Complex64>) -> f64 {
    let mi = grid.interior_per_axis();
    let shell = ((mi as f64) * 0.1).ceil() as usize;
    let mut total = 0.0;
    let mut outer = 0.0;
    for ix in 0..grid.node_count() {
        let idx = grid.axis_indices(ix);
        let near = idx.iter().any(|&i| i < shell || i >= mi - shell);
        for c in 0..ncomp {
            let w = v[ix * ncomp + c].norm_sqr();
            total += w;
            if near {
                outer += w;
            }
        }
    }
    if total > 0.0 {
        outer / total
    } else {
        0.0
    }
}
