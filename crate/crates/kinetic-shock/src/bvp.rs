//! Shared machinery for profile boundary-value problems on the line:
//! graded grids, finite-difference stencils, sparse assembly and
//! dichotomy boundary rows.

use std::collections::HashMap;

use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::eigen;

/// Symmetric grid `x = L·sinh(β s)/sinh(β)` over uniform `s ∈ [−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileGrid {
    pub x: Vec<f64>,
    pub half_length: f64,
    pub grading: f64,
}

impl ProfileGrid {
    /// `nodes` must be odd so that `x = 0` is a node.
    pub fn graded(half_length: f64, nodes: usize, grading: f64) -> Result<Self> {
        if nodes < 5 || nodes.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "profile grid needs an odd node count ≥ 5, got {nodes}"
            )));
        }
        if !(half_length > 0.0) || !half_length.is_finite() {
            return Err(Error::Config(format!(
                "profile half-length must be positive, got {half_length}"
            )));
        }
        if grading < 0.0 {
            return Err(Error::Config(format!(
                "grading must be nonnegative, got {grading}"
            )));
        }
        let m = (nodes - 1) as f64;
        let x = (0..nodes)
            .map(|i| {
                // ratio of integers so that refined grids reproduce coarse nodes bit for bit
                let s = (2.0 * i as f64 - m) / m;
                if grading == 0.0 {
                    half_length * s
                } else {
                    half_length * (grading * s).sinh() / grading.sinh()
                }
            })
            .collect();
        Ok(Self {
            x,
            half_length,
            grading,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn center(&self) -> usize {
        self.x.len() / 2
    }

    pub fn spacing(&self, i: usize) -> f64 {
        self.x[i + 1] - self.x[i]
    }

    /// Grid with every interval halved in the computational coordinate.
    pub fn refine(&self) -> Self {
        Self::graded(self.half_length, 2 * self.len() - 1, self.grading)
            .expect("refining a valid grid")
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.len() - 1)
            .map(|i| self.spacing(i))
            .fold(0.0, f64::max)
    }
}

/// Finite-difference weights for derivatives `0..=order` at `z` from
/// nodes `xs` (Fornberg's recursion). Row `k` holds the `k`-th derivative.
pub fn fornberg_weights(z: f64, xs: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Five-point stencils for the first and second derivative at every node.
#[derive(Debug, Clone)]
pub struct DerivativeStencil {
    pub start: Vec<usize>,
    pub first: Vec<[f64; 5]>,
    pub second: Vec<[f64; 5]>,
}

impl DerivativeStencil {
    pub fn new(grid: &ProfileGrid) -> Self {
        let k = grid.len();
        let mut start = Vec::with_capacity(k);
        let mut first = Vec::with_capacity(k);
        let mut second = Vec::with_capacity(k);
        for i in 0..k {
            let s = i.saturating_sub(2).min(k - 5);
            let w = fornberg_weights(grid.x[i], &grid.x[s..s + 5], 2);
            start.push(s);
            first.push([w[1][0], w[1][1], w[1][2], w[1][3], w[1][4]]);
            second.push([w[2][0], w[2][1], w[2][2], w[2][3], w[2][4]]);
        }
        Self {
            start,
            first,
            second,
        }
    }

    fn apply_with(&self, w: &[[f64; 5]], values: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (0..values.len())
            .map(|i| {
                let s = self.start[i];
                let mut d = DVector::zeros(values[i].len());
                for (j, c) in w[i].iter().enumerate() {
                    d.axpy(*c, &values[s + j], 1.0);
                }
                d
            })
            .collect()
    }

    pub fn derivative(&self, values: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.apply_with(&self.first, values)
    }

    pub fn second_derivative(&self, values: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.apply_with(&self.second, values)
    }

    pub fn derivative_scalar(&self, values: &[f64]) -> Vec<f64> {
        (0..values.len())
            .map(|i| {
                let s = self.start[i];
                self.first[i]
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * values[s + j])
                    .sum()
            })
            .collect()
    }
}

/// Coordinate-list sparse matrix with summed duplicates.
#[derive(Debug, Clone, Default)]
pub struct SparseBuilder {
    pub n: usize,
    entries: HashMap<(usize, usize), f64>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: HashMap::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            *self.entries.entry((i, j)).or_insert(0.0) += v;
        }
    }

    pub fn add_block(&mut self, row: usize, col: usize, m: &DMatrix<f64>, scale: f64) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.add(row + i, col + j, scale * m[(i, j)]);
            }
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for ((i, j), v) in &self.entries {
            y[*i] += v * x[*j];
        }
        y
    }

    pub fn factor(&self) -> Result<SparseLu> {
        let trips: Vec<Triplet<usize, usize, f64>> = self
            .entries
            .iter()
            .map(|((i, j), v)| Triplet::new(*i, *j, *v))
            .collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))?;
        let lu = a
            .sp_lu()
            .map_err(|e| Error::Solver(format!("sparse LU failed (singular system?): {e:?}")))?;
        Ok(SparseLu { lu, n: self.n })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor()?.solve(rhs)
    }
}

/// A reusable sparse LU factorization.
pub struct SparseLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        use faer::prelude::Solve;
        let b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let out = DVector::from_fn(self.n, |i, _| x[(i, 0)]);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(
                "sparse solve produced non-finite values (singular system)".into(),
            ));
        }
        Ok(out)
    }
}

/// Which end of the line a boundary condition sits at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Left,
    Right,
}

/// Rows `R` with `R z = 0` excluding the modes of `z' = M z` that grow
/// away from the given end, plus the eigenvalues of `M`.
pub fn dichotomy_rows(m: &DMatrix<f64>, end: End) -> Result<(DMatrix<f64>, Vec<faer::c64>)> {
    let n = m.nrows();
    let (vals, _) = eigen(m)?;
    let (lvals, lvecs) = eigen(&m.transpose())?;
    let scale = vals
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    if let Some(z) = vals.iter().find(|z| z.re.abs() <= 1e-13 * scale) {
        return Err(Error::Solver(format!(
            "endstate matrix has a neutral eigenvalue {z:?}; no dichotomy"
        )));
    }
    let kill = |re: f64| match end {
        End::Left => re < 0.0,
        End::Right => re > 0.0,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, z) in lvals.iter().enumerate() {
        if !kill(z.re) {
            continue;
        }
        let y = &lvecs[k];
        if z.im.abs() <= 1e-12 * scale {
            rows.push(y.iter().map(|c| c.re).collect());
        } else if z.im > 0.0 {
            rows.push(y.iter().map(|c| c.re).collect());
            rows.push(y.iter().map(|c| c.im).collect());
        }
    }
    let r = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    Ok((r, vals))
}

/// Fourth-order combination of a coarse solution and one on the refined grid,
/// sampled at the coarse nodes.
pub fn richardson(coarse: &[DVector<f64>], fine: &[DVector<f64>]) -> Vec<DVector<f64>> {
    coarse
        .iter()
        .enumerate()
        .map(|(i, c)| (&fine[2 * i] * 4.0 - c) / 3.0)
        .collect()
}

/// Largest norm over nodes of the difference of two profiles.
pub fn sup_distance(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refined_grid_contains_coarse_nodes() {
        let g = ProfileGrid::graded(50.0, 41, 2.0).unwrap();
        let f = g.refine();
        assert_eq!(f.len(), 81);
        for i in 0..g.len() {
            assert_eq!(g.x[i], f.x[2 * i]);
        }
        assert_eq!(g.x[g.center()], 0.0);
        assert!(ProfileGrid::graded(1.0, 40, 1.0).is_err());
    }

    #[test]
    fn stencils_are_fourth_order() {
        let g = ProfileGrid::graded(3.0, 81, 1.5).unwrap();
        let d = DerivativeStencil::new(&g);
        let f: Vec<DVector<f64>> =
            g.x.iter()
                .map(|x| DVector::from_vec(vec![x.sin()]))
                .collect();
        let df = d.derivative(&f);
        let err =
            g.x.iter()
                .zip(&df)
                .map(|(x, v)| (v[0] - x.cos()).abs())
                .fold(0.0, f64::max);
        let g2 = g.refine();
        let d2 = DerivativeStencil::new(&g2);
        let f2: Vec<DVector<f64>> =
            g2.x.iter()
                .map(|x| DVector::from_vec(vec![x.sin()]))
                .collect();
        let err2 =
            g2.x.iter()
                .zip(&d2.derivative(&f2))
                .map(|(x, v)| (v[0] - x.cos()).abs())
                .fold(0.0, f64::max);
        assert!(err / err2 > 12.0, "{err} {err2}");
        let dd = d2.second_derivative(&f2);
        assert!(g2
            .x
            .iter()
            .zip(&dd)
            .all(|(x, v)| (v[0] + x.sin()).abs() < 5e-3));
    }

    #[test]
    fn sparse_solve_matches_dense() {
        let mut b = SparseBuilder::new(3);
        b.add(0, 0, 2.0);
        b.add(0, 0, 2.0);
        b.add(0, 1, 1.0);
        b.add(1, 1, 3.0);
        b.add(2, 0, 1.0);
        b.add(2, 2, 5.0);
        let rhs = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = b.solve(&rhs).unwrap();
        assert!((b.mul(&x) - rhs).norm() < 1e-14);
    }

    #[test]
    fn dichotomy_keeps_decaying_modes() {
        let m = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, -1.0, 2.0]);
        let (r, _) = dichotomy_rows(&m, End::Left).unwrap();
        assert_eq!(r.nrows(), 1);
        assert!((r * DVector::from_vec(vec![0.0, 1.0, 1.0])).norm() < 1e-12);
        let (r, _) = dichotomy_rows(&m, End::Right).unwrap();
        assert_eq!(r.nrows(), 2);
        assert!((r * DVector::from_vec(vec![1.0, 0.0, 0.0])).norm() < 1e-12);
    }
}
