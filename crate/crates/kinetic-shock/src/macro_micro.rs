//! Macroscopic/microscopic splitting, coercivity constants and the
//! finite-rank compensator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collision::LinearizedOperator;
use crate::error::{Error, Result};
use crate::linalg::{complement, min_generalized_eigen, min_generalized_eigen_diag, sym_eigen};
use crate::tolerances::CLUSTER_TOL;
use crate::velocity_space::{check_weight, FluidState, QuadratureGrid, ReferenceMaxwellian};

/// Polynomial factor `χ_j` of the orthogonal equilibrium basis.
pub fn chi(j: usize, xi: &[f64; 3], u0: &FluidState) -> f64 {
    let v = u0.velocity();
    let st = u0.temperature().sqrt();
    let y = [
        (xi[0] - v[0]) / st,
        (xi[1] - v[1]) / st,
        (xi[2] - v[2]) / st,
    ];
    match j {
        0 => 1.0,
        1..=3 => y[j - 1],
        4 => (y[0] * y[0] + y[1] * y[1] + y[2] * y[2] - 3.0) / 6f64.sqrt(),
        _ => panic!("equilibrium basis has five functions"),
    }
}

/// Basis `φ_j = χ_j M̲` of the macroscopic space.
#[derive(Debug, Clone)]
pub struct EquilibriumBasis {
    pub reference: FluidState,
    /// Analytic nodal vectors `χ_j M̲`.
    pub phi: Vec<Vec<f64>>,
    /// `ℍ^{1/2}` Gram matrix of the analytic vectors.
    pub gram: DMatrix<f64>,
    /// Discretely orthonormalized vectors spanning the same space.
    pub orthonormal: Vec<Vec<f64>>,
}

pub fn build_basis(
    reference: &ReferenceMaxwellian,
    grid: &QuadratureGrid,
) -> Result<EquilibriumBasis> {
    reference.state.check()?;
    let phi: Vec<Vec<f64>> = (0..5)
        .map(|j| {
            grid.nodes
                .iter()
                .zip(&reference.values)
                .map(|(x, m)| chi(j, x, &reference.state) * m)
                .collect()
        })
        .collect();
    let gram = DMatrix::from_fn(5, 5, |i, j| reference.inner(grid, &phi[i], &phi[j], 0.5));
    let mut orthonormal: Vec<Vec<f64>> = Vec::with_capacity(5);
    for p in &phi {
        let mut v = p.clone();
        for _ in 0..2 {
            for q in &orthonormal {
                let c = reference.inner(grid, q, &v, 0.5);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = reference.inner(grid, &v, &v, 0.5).sqrt();
        if !(n > 0.0) {
            return Err(Error::Assumption(
                "equilibrium basis is degenerate on this grid".into(),
            ));
        }
        v.iter_mut().for_each(|a| *a /= n);
        orthonormal.push(v);
    }
    Ok(EquilibriumBasis {
        reference: reference.state,
        phi,
        gram,
        orthonormal,
    })
}

impl EquilibriumBasis {
    pub fn dim(&self) -> usize {
        self.orthonormal.len()
    }

    /// Largest off-diagonal Gram entry relative to the diagonal.
    pub fn gram_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    m = m.max(
                        self.gram[(i, j)].abs() / (self.gram[(i, i)] * self.gram[(j, j)]).sqrt(),
                    );
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Macro,
    Micro,
}

/// `ℍ^{1/2}`-orthogonal projection onto the macroscopic or microscopic part.
pub fn project(
    f: &[f64],
    basis: &EquilibriumBasis,
    grid: &QuadratureGrid,
    reference: &ReferenceMaxwellian,
    which: Part,
) -> Vec<f64> {
    let mut pu = vec![0.0; f.len()];
    for q in &basis.orthonormal {
        let c = reference.inner(grid, q, f, 0.5);
        pu.iter_mut().zip(q).for_each(|(a, b)| *a += c * b);
    }
    match which {
        Part::Macro => pu,
        Part::Micro => f.iter().zip(&pu).map(|(a, b)| a - b).collect(),
    }
}

/// Dense nodal projector tables.
#[derive(Debug, Clone)]
pub struct Projectors {
    pub p_u: DMatrix<f64>,
    pub p_v: DMatrix<f64>,
    /// Nodal weight `w/M̲` of the `ℍ^{1/2}` inner product.
    pub inner_product_weight: Vec<f64>,
}

pub fn projectors(
    basis: &EquilibriumBasis,
    grid: &QuadratureGrid,
    reference: &ReferenceMaxwellian,
) -> Projectors {
    let n = grid.len();
    let weight: Vec<f64> = grid
        .weights
        .iter()
        .zip(&reference.values)
        .map(|(w, m)| w / m)
        .collect();
    let mut p_u = DMatrix::zeros(n, n);
    for q in &basis.orthonormal {
        for j in 0..n {
            let c = q[j] * weight[j];
            for i in 0..n {
                p_u[(i, j)] += q[i] * c;
            }
        }
    }
    let p_v = DMatrix::identity(n, n) - &p_u;
    Projectors {
        p_u,
        p_v,
        inner_product_weight: weight,
    }
}

/// Macroscopic basis in `ℍ^{1/2}`-orthonormal coordinates `(w/M̲)^{1/2} f`.
pub fn macro_coordinates(basis: &EquilibriumBasis, scaling: &[f64]) -> DMatrix<f64> {
    let n = scaling.len();
    DMatrix::from_fn(n, basis.dim(), |i, j| scaling[i] * basis.orthonormal[j][i])
}

/// `δ = min_{f∈𝕍} −(Lf,f)_{ℍ̃^s} / ‖⟨ξ⟩^{1/2}f‖²_{ℍ̃^s}` and its minimizer.
pub fn coercivity_gap(
    lin: &LinearizedOperator,
    basis: &EquilibriumBasis,
    grid: &QuadratureGrid,
    reference: &ReferenceMaxwellian,
    s: f64,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    check_weight(s)?;
    let n = grid.len();
    let g: Vec<f64> = grid
        .weights
        .iter()
        .zip(&reference.values)
        .map(|(w, m)| w * (m.powf(-2.0 * s) + lambda / m))
        .collect();
    let br = grid.bracket();
    let a = DMatrix::from_fn(n, n, |i, j| -g[i] * lin.matrix[(i, j)]);
    let b: Vec<f64> = g.iter().zip(&br).map(|(x, y)| x * y).collect();
    // f ∈ 𝕍 ⟺ (φ̂_j, f)_{ℍ^{1/2}} = 0
    let c = DMatrix::from_fn(n, basis.dim(), |i, j| {
        basis.orthonormal[j][i] * grid.weights[i] / reference.values[i]
    });
    let (delta, x) = min_generalized_eigen_diag(&a, &b, Some(&c))?;
    Ok((delta, x.as_slice().to_vec()))
}

/// Constants of the weight-selection argument for `ℍ^s`.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaRule {
    pub s: f64,
    /// Lower bound of `ν₀/⟨ξ⟩` on the grid.
    pub delta1: f64,
    /// Upper bound of the symmetric part of `K` in `ℍ^s`.
    pub c: f64,
    /// `ℍ^{1/2}` coercivity constant.
    pub delta0: f64,
    pub lambda: f64,
}

/// Choose `λ` so that `C M̲^{-2s} ≤ ½⟨ξ⟩(δ₁M̲^{-2s} + λδ₀M̲^{-1})` at every node.
pub fn select_lambda(
    lin: &LinearizedOperator,
    grid: &QuadratureGrid,
    reference: &ReferenceMaxwellian,
    s: f64,
    delta0: f64,
) -> Result<LambdaRule> {
    check_weight(s)?;
    if !(delta0 > 0.0) {
        return Err(Error::Assumption(format!(
            "coercivity constant in H^1/2 must be positive, got {delta0}"
        )));
    }
    let n = grid.len();
    let br = grid.bracket();
    let delta1 = lin
        .multiplicative_part
        .iter()
        .zip(&br)
        .map(|(a, b)| a / b)
        .fold(f64::INFINITY, f64::min);
    // symmetric part of K in ℍ^s, in orthonormal coordinates (w M̲^{-2s})^{1/2}
    let sc: Vec<f64> = reference
        .weights(grid, s)
        .iter()
        .map(|x| x.sqrt())
        .collect();
    let k = DMatrix::from_fn(n, n, |i, j| sc[i] * lin.compact_part[(i, j)] / sc[j]);
    let (vals, _) = sym_eigen(&k)?;
    let c = vals.last().copied().unwrap_or(0.0).max(0.0);
    let mut lambda: f64 = 0.0;
    for b in 0..n {
        let need = (2.0 * c / br[b] - delta1) * reference.values[b].powf(1.0 - 2.0 * s) / delta0;
        lambda = lambda.max(need);
    }
    Ok(LambdaRule {
        s,
        delta1,
        c,
        delta0,
        lambda,
    })
}

/// Result of the perturbed coercivity check at a nearby base state.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbedCoercivity {
    /// `‖⟨ξ⟩^{1/2}(a − M̲)‖_{ℍ̃^s}`.
    pub eps_a: f64,
    pub delta: f64,
    /// Smallest `C` with `δ‖⟨ξ⟩^{1/2}P_V f‖² ≤ −(L_a f,f) + Cε²‖P_U f‖²`.
    pub fitted_c: f64,
    /// Largest sampled value of the left side minus the right side; `≤ 0` when the bound holds.
    pub sampled_violation: f64,
}

/// Check the perturbed coercivity inequality in `ℍ^{1/2}` with `δ = ½δ₀`.
///
/// The optimal constant is computed exactly by eliminating the microscopic
/// part; random samples cross-check it.
pub fn perturbed_coercivity(
    lin_a: &LinearizedOperator,
    basis: &EquilibriumBasis,
    grid: &QuadratureGrid,
    reference: &ReferenceMaxwellian,
    delta0: f64,
    samples: usize,
    seed: u64,
) -> Result<PerturbedCoercivity> {
    let n = grid.len();
    let br = grid.bracket();
    let diff: Vec<f64> = lin_a
        .base_state
        .iter()
        .zip(&reference.values)
        .zip(&br)
        .map(|((a, m), b)| (a - m) * b.sqrt())
        .collect();
    let eps_a = reference.weighted_norm(grid, &diff, 0.5, 0.0)?;
    let delta = 0.5 * delta0;
    let d: Vec<f64> = grid
        .weights
        .iter()
        .zip(&reference.values)
        .map(|(w, m)| (w / m).sqrt())
        .collect();
    let l_hat = DMatrix::from_fn(n, n, |i, j| d[i] * lin_a.matrix[(i, j)] / d[j]);
    let s = (&l_hat + l_hat.transpose()) * 0.5;
    let phi = macro_coordinates(basis, &d);
    let z = complement(&phi)?;
    let s_vv = z.transpose() * &s * &z
        + DMatrix::from_fn(z.ncols(), z.ncols(), |i, j| {
            let mut acc = 0.0;
            for b in 0..n {
                acc += z[(b, i)] * br[b] * z[(b, j)];
            }
            delta * acc
        });
    let s_vu = z.transpose() * &s * &phi;
    let s_uu = phi.transpose() * &s * &phi;
    let neg = -s_vv.clone();
    let chol = neg.cholesky().ok_or_else(|| {
        Error::Assumption("perturbed form is not negative on the microscopic space".into())
    })?;
    let schur = &s_uu + s_vu.transpose() * chol.solve(&s_vu);
    let (vals, _) = sym_eigen(&schur)?;
    let top = vals.last().copied().unwrap_or(0.0).max(0.0);
    let fitted_c = if eps_a > 0.0 {
        top / (eps_a * eps_a)
    } else {
        0.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u = phi.transpose() * &y;
        let v = &y - &phi * &u;
        let vb: f64 = (0..n).map(|b| v[b] * v[b] * br[b]).sum();
        let lhs = delta * vb + (y.transpose() * &s * &y)[(0, 0)];
        let rhs = fitted_c * eps_a * eps_a * u.norm_squared();
        worst = worst.max((lhs - rhs) / y.norm_squared());
    }
    Ok(PerturbedCoercivity {
        eps_a,
        delta,
        fitted_c,
        sampled_violation: worst,
    })
}

/// Finite-rank skew compensator `K = θ(K₁₁ + A₁₂ − A₂₁)`.
#[derive(Debug, Clone)]
pub struct Compensator {
    pub k: DMatrix<f64>,
    pub theta: f64,
    /// Block on the macroscopic space, in the coordinates of `phi`.
    pub k11: DMatrix<f64>,
    pub k12: DMatrix<f64>,
    pub k21: DMatrix<f64>,
    pub gamma: f64,
    pub genuine_coupling: f64,
    pub sweep: Vec<(f64, f64)>,
}

/// Smallest `‖A₂₁w‖` over unit eigenvectors `w` of `A₁₁`.
///
/// `a` acts on Euclidean coordinates whose first block is spanned by the
/// orthonormal columns of `phi`.
pub fn genuine_coupling(a: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let a11 = phi.transpose() * a * phi;
    let (_, w) = sym_eigen(&a11)?;
    let ap = a * phi;
    let a21 = &ap - phi * (phi.transpose() * &ap);
    let mut best = (f64::INFINITY, DVector::zeros(phi.ncols()));
    for j in 0..w.ncols() {
        let wj = w.column(j).clone_owned();
        let v = (&a21 * &wj).norm();
        if v < best.0 {
            best = (v, wj);
        }
    }
    Ok(best)
}

/// `K₁₁` from the eigen-decomposition of `A₁₁`: `−2B_ij/(λ_j−λ_i)` across clusters.
pub fn k11_block(a11: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (lam, w) = sym_eigen(a11)?;
    let n = lam.len();
    let scale = lam.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let bt = w.transpose() * b * &w;
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = lam[j] - lam[i];
        if d.abs() <= CLUSTER_TOL * scale {
            0.0
        } else {
            -2.0 * bt[(i, j)] / d
        }
    });
    Ok(&w * k * w.transpose())
}

/// Minimum of `((KA − L)f, f)` against `(⟨ξ⟩f, f)`, both symmetrized.
pub fn kawashima_gamma(
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
    metric: &DMatrix<f64>,
) -> Result<f64> {
    let m = k * a - l;
    Ok(min_generalized_eigen(&m, metric, None)?.0)
}

/// Build the compensator in Euclidean coordinates.
///
/// `a` and `l` are symmetric, `phi` has orthonormal columns spanning the
/// kernel of `l`, and `metric` is the positive definite `⟨ξ⟩` form.
pub fn build_compensator(
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    metric: &DMatrix<f64>,
) -> Result<Compensator> {
    let (coupling, witness) = genuine_coupling(a, phi)?;
    let scale = a.norm().max(1.0);
    if coupling <= 1e-10 * scale {
        let v = phi * &witness;
        return Err(Error::Assumption(format!(
            "genuine coupling fails: A has an eigenvector in the macroscopic space (coefficients {:?}, ‖A21 w‖ = {coupling:.3e})",
            v.iter().map(|x| (x * 1e6).round() / 1e6).take(8).collect::<Vec<_>>()
        )));
    }
    let k1 = compensator_unit(a, phi)?;
    let (k_full, k11, k12, k21) = k1;
    let base = &k_full * a;
    let gamma_at = |theta: f64| -> Result<f64> {
        let m = &base * theta - l;
        Ok(min_generalized_eigen(&m, metric, None)?.0)
    };
    let mut sweep = Vec::new();
    for i in 0..8 {
        let theta = 10f64.powf(-3.0 + 3.0 * i as f64 / 7.0);
        sweep.push((theta, gamma_at(theta)?));
    }
    let (arg, best) =
        sweep.iter().cloned().fold(
            (0.0, f64::NEG_INFINITY),
            |acc, x| if x.1 > acc.1 { x } else { acc },
        );
    let target = 0.5 * best;
    let theta = if best <= 0.0 {
        arg
    } else if gamma_at(1.0)? >= target {
        1.0
    } else {
        let (mut lo, mut hi) = (arg, 1.0);
        for _ in 0..12 {
            let mid = (lo * hi).sqrt();
            if gamma_at(mid)? >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let gamma = gamma_at(theta)?;
    Ok(Compensator {
        k: k_full * theta,
        theta,
        k11: k11 * theta,
        k12: k12 * theta,
        k21: k21 * theta,
        gamma,
        genuine_coupling: coupling,
        sweep,
    })
}

/// Unscaled compensator (`θ = 1`) and its blocks.
#[allow(clippy::type_complexity)]
fn compensator_unit(
    a: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let a11 = phi.transpose() * a * phi;
    let ap = a * phi;
    let a21 = &ap - phi * (phi.transpose() * &ap);
    let b = a21.transpose() * &a21;
    let k11 = k11_block(&a11, &b)?;
    let k11_full = phi * &k11 * phi.transpose();
    // A₁₂ = P_U A P_V and A₂₁ = P_V A P_U as operators on the full space
    let a21_full = &a21 * phi.transpose();
    let a12_full = a21_full.transpose();
    let k = &k11_full + &a12_full - &a21_full;
    Ok((k, k11, a12_full, -a21_full))
}

/// Compensator for the nodal operator at the reference state, in `ℍ^{1/2}` coordinates.
pub fn nodal_compensator(
    lin: &LinearizedOperator,
    basis: &EquilibriumBasis,
    grid: &QuadratureGrid,
    reference: &ReferenceMaxwellian,
) -> Result<(Compensator, NodalFrame)> {
    let frame = NodalFrame::new(lin, basis, grid, reference);
    let comp = build_compensator(&frame.a, &frame.l, &frame.phi, &frame.metric)?;
    Ok((comp, frame))
}

/// Transport, collision and metric in `ℍ^{1/2}`-orthonormal nodal coordinates.
#[derive(Debug, Clone)]
pub struct NodalFrame {
    pub a: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub metric: DMatrix<f64>,
}

impl NodalFrame {
    pub fn new(
        lin: &LinearizedOperator,
        basis: &EquilibriumBasis,
        grid: &QuadratureGrid,
        reference: &ReferenceMaxwellian,
    ) -> Self {
        let d: Vec<f64> = grid
            .weights
            .iter()
            .zip(&reference.values)
            .map(|(w, m)| (w / m).sqrt())
            .collect();
        let n = grid.len();
        let l = lin.symmetrized(&d);
        let l = (&l + l.transpose()) * 0.5;
        let a = DMatrix::from_diagonal(&DVector::from_iterator(n, grid.nodes.iter().map(|x| x[0])));
        let metric = DMatrix::from_diagonal(&DVector::from_vec(grid.bracket()));
        NodalFrame {
            a,
            l,
            phi: macro_coordinates(basis, &d),
            metric,
        }
    }
}
