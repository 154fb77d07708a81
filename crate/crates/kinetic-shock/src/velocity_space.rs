//! Velocity-domain discretization, Maxwellians, fluid moments and weighted norms.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::path::Path;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::error::{Error, Result};
use crate::tolerances::GRID_REJECT_TOL;

/// Truncated tensor quadrature on the velocity cube plus a rule on the unit sphere.
///
/// Each axis uses Gauss-Legendre nodes pulled through `x = σ·erf⁻¹(t·erf(R/σ))`
/// with `σ = R/2`, so nodes cluster where a unit-temperature Gaussian lives and
/// the weights stay free of any Maxwellian factor. Node `b` of the tensor grid
/// is `(i·n + j)·n + k`, and `N-1-b` is its mirror image `-ξ_b`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub n_per_axis: usize,
    pub truncation_radius: f64,
    pub axis_nodes: Vec<f64>,
    pub axis_weights: Vec<f64>,
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub angular_order: usize,
    pub angular_nodes: Vec<[f64; 3]>,
    pub angular_weights: Vec<f64>,
}

/// Mapped Gauss-Legendre rule on `[-r, r]`, exactly symmetric.
pub fn mapped_axis_rule(n: usize, r: f64) -> (Vec<f64>, Vec<f64>) {
    let gl = GaussLegendre::new(NonZeroUsize::new(n).expect("n > 0"));
    let mut pairs: Vec<(f64, f64)> = gl.iter().map(|(x, w)| (*x, *w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sigma = r / 2.0;
    let scale = erf(r / sigma);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let j = n - 1 - i;
        // average the mirrored pair so the rule is symmetric to the last bit
        let t = 0.5 * (pairs[j].0 - pairs[i].0);
        let wt = 0.5 * (pairs[j].1 + pairs[i].1);
        let (x, w) = if i == j {
            (0.0, wt * scale * sigma * PI.sqrt() / 2.0)
        } else {
            let x = sigma * erf_inv(t * scale);
            (
                x,
                wt * scale * sigma * PI.sqrt() / 2.0 * (x / sigma).powi(2).exp(),
            )
        };
        nodes[j] = x;
        nodes[i] = -x;
        weights[i] = w;
        weights[j] = w;
    }
    (nodes, weights)
}

/// Product rule on the unit sphere: Gauss-Legendre in `cos θ`, `2·order`
/// equally spaced azimuths. Weights sum to `4π`.
pub fn angular_rule(order: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let gl = GaussLegendre::new(NonZeroUsize::new(order).expect("order > 0"));
    let n_phi = 2 * order;
    let dphi = 2.0 * PI / n_phi as f64;
    let mut nodes = Vec::with_capacity(order * n_phi);
    let mut weights = Vec::with_capacity(order * n_phi);
    for (c, w) in gl.iter() {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for p in 0..n_phi {
            let phi = (p as f64 + 0.5) * dphi;
            nodes.push([s * phi.cos(), s * phi.sin(), *c]);
            weights.push(w * dphi);
        }
    }
    (nodes, weights)
}

/// Build the tensor velocity grid.
pub fn build_grid(
    n_per_axis: usize,
    truncation_radius: f64,
    angular_order: usize,
) -> Result<QuadratureGrid> {
    if n_per_axis < 4 {
        return Err(Error::Config(format!(
            "n_per_axis must be at least 4, got {n_per_axis}"
        )));
    }
    if !(truncation_radius > 0.0 && truncation_radius.is_finite()) {
        return Err(Error::Config(format!(
            "truncation radius must be positive, got {truncation_radius}"
        )));
    }
    if angular_order < 2 {
        return Err(Error::Config(format!(
            "angular order must be at least 2, got {angular_order}"
        )));
    }
    let (axis_nodes, axis_weights) = mapped_axis_rule(n_per_axis, truncation_radius);
    let n = n_per_axis;
    let mut nodes = Vec::with_capacity(n * n * n);
    let mut weights = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                nodes.push([axis_nodes[i], axis_nodes[j], axis_nodes[k]]);
                weights.push(axis_weights[i] * axis_weights[j] * axis_weights[k]);
            }
        }
    }
    let (angular_nodes, angular_weights) = angular_rule(angular_order);
    let grid = QuadratureGrid {
        n_per_axis,
        truncation_radius,
        axis_nodes,
        axis_weights,
        nodes,
        weights,
        angular_order,
        angular_nodes,
        angular_weights,
    };
    let err = grid.gaussian_error();
    if err > GRID_REJECT_TOL {
        return Err(Error::Config(format!(
            "grid n={n_per_axis}, R={truncation_radius} misses the Gaussian integral by {err:.3e}"
        )));
    }
    Ok(grid)
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of `-ξ_b`.
    pub fn mirror(&self, b: usize) -> usize {
        self.len() - 1 - b
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Absolute error of the quadrature of `exp(-|ξ|²)` against `π^{3/2}`.
    pub fn gaussian_error(&self) -> f64 {
        let v: Vec<f64> = self.nodes.iter().map(|x| (-norm2(x)).exp()).collect();
        (self.integrate(&v) - PI.powf(1.5)).abs()
    }

    /// Largest component of any node; the cube half-width actually used.
    pub fn max_abs_component(&self) -> f64 {
        self.axis_nodes.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Stable key for cache files.
    pub fn key(&self) -> String {
        format!(
            "n{}-r{:.6}-a{}",
            self.n_per_axis, self.truncation_radius, self.angular_order
        )
    }

    /// `⟨ξ⟩ = (1+|ξ|²)^{1/2}` at every node.
    pub fn bracket(&self) -> Vec<f64> {
        self.nodes.iter().map(bracket).collect()
    }

    /// Write `f` as CSV with columns `xi1,xi2,xi3,value`.
    pub fn write_csv(&self, values: &[f64], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["xi1", "xi2", "xi3", "value"])?;
        for (x, v) in self.nodes.iter().zip(values) {
            w.write_record(&[
                x[0].to_string(),
                x[1].to_string(),
                x[2].to_string(),
                v.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn norm2(x: &[f64; 3]) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
}

pub fn bracket(x: &[f64; 3]) -> f64 {
    (1.0 + norm2(x)).sqrt()
}

/// Conserved fluid variables `(ρ, ρv, ρE)` with `E = e + |v|²/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidState {
    pub rho: f64,
    pub momentum: [f64; 3],
    pub total_energy: f64,
}

impl FluidState {
    pub fn new(rho: f64, momentum: [f64; 3], total_energy: f64) -> Result<Self> {
        let u = FluidState {
            rho,
            momentum,
            total_energy,
        };
        u.check()?;
        Ok(u)
    }

    /// State from density, velocity and internal energy per unit mass.
    pub fn from_primitive(rho: f64, velocity: [f64; 3], internal_energy: f64) -> Result<Self> {
        let kinetic = 0.5 * norm2(&velocity);
        Self::new(
            rho,
            [rho * velocity[0], rho * velocity[1], rho * velocity[2]],
            rho * (internal_energy + kinetic),
        )
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        FluidState {
            rho: a[0],
            momentum: [a[1], a[2], a[3]],
            total_energy: a[4],
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.rho,
            self.momentum[0],
            self.momentum[1],
            self.momentum[2],
            self.total_energy,
        ]
    }

    pub fn check(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidState(format!(
                "density must be positive, got {}",
                self.rho
            )));
        }
        let e = self.internal_energy();
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::InvalidState(format!(
                "internal energy must be positive, got {e}"
            )));
        }
        Ok(())
    }

    pub fn velocity(&self) -> [f64; 3] {
        [
            self.momentum[0] / self.rho,
            self.momentum[1] / self.rho,
            self.momentum[2] / self.rho,
        ]
    }

    pub fn internal_energy(&self) -> f64 {
        self.total_energy / self.rho - 0.5 * norm2(&self.velocity())
    }

    /// `T = 2e/3`, the variance of each velocity component.
    pub fn temperature(&self) -> f64 {
        2.0 * self.internal_energy() / 3.0
    }

    /// Ideal monatomic pressure `ρT`.
    pub fn pressure(&self) -> f64 {
        self.rho * self.temperature()
    }
}

/// Nodal values of a velocity distribution together with its ambient weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionVector {
    pub values: Vec<f64>,
    pub weight_s: f64,
    pub lambda: f64,
}

impl DistributionVector {
    pub fn new(values: Vec<f64>) -> Self {
        DistributionVector {
            values,
            weight_s: 0.5,
            lambda: 0.0,
        }
    }

    pub fn with_weight(mut self, s: f64, lambda: f64) -> Self {
        self.weight_s = s;
        self.lambda = lambda;
        self
    }

    pub fn check(&self, grid: &QuadratureGrid) -> Result<()> {
        if self.values.len() != grid.len() {
            return Err(Error::InvalidState(format!(
                "distribution has {} values, grid has {} nodes",
                self.values.len(),
                grid.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState(
                "distribution has non-finite values".into(),
            ));
        }
        Ok(())
    }
}

/// Maxwellian density at one velocity.
pub fn maxwellian_at(u: &FluidState, xi: &[f64; 3]) -> f64 {
    let v = u.velocity();
    let two_t = 2.0 * u.temperature();
    let d = [xi[0] - v[0], xi[1] - v[1], xi[2] - v[2]];
    u.rho * (PI * two_t).powf(-1.5) * (-norm2(&d) / two_t).exp()
}

/// Maxwellian `M_u` sampled on the grid.
pub fn maxwellian(u: &FluidState, grid: &QuadratureGrid) -> Result<DistributionVector> {
    u.check()?;
    Ok(DistributionVector::new(
        grid.nodes.iter().map(|x| maxwellian_at(u, x)).collect(),
    ))
}

/// Moments `∫(1, ξ, |ξ|²/2) f`.
///
/// Momentum is summed over mirror pairs so that it vanishes exactly for even `f`.
pub fn moment_vector(f: &[f64], grid: &QuadratureGrid) -> [f64; 5] {
    let n = grid.len();
    let mut out = [0.0; 5];
    for b in 0..n {
        let wf = grid.weights[b] * f[b];
        out[0] += wf;
        out[4] += 0.5 * norm2(&grid.nodes[b]) * wf;
    }
    for b in 0..n / 2 {
        let m = grid.mirror(b);
        let diff = grid.weights[b] * (f[b] - f[m]);
        for d in 0..3 {
            out[1 + d] += grid.nodes[b][d] * diff;
        }
    }
    out
}

/// Fluid variables of `f`; the result may be an invalid state for general `f`.
pub fn moments(f: &DistributionVector, grid: &QuadratureGrid) -> FluidState {
    FluidState::from_array(moment_vector(&f.values, grid))
}

/// Reference Maxwellian carrying the weights of the `ℍ^s` norms.
#[derive(Debug, Clone)]
pub struct ReferenceMaxwellian {
    pub state: FluidState,
    pub values: Vec<f64>,
}

impl ReferenceMaxwellian {
    pub fn new(state: FluidState, grid: &QuadratureGrid) -> Result<Self> {
        let values = maxwellian(&state, grid)?.values;
        Ok(ReferenceMaxwellian { state, values })
    }

    /// Nodal weights `w_b M̲_b^{-2s}`.
    pub fn weights(&self, grid: &QuadratureGrid, s: f64) -> Vec<f64> {
        grid.weights
            .iter()
            .zip(&self.values)
            .map(|(w, m)| w * m.powf(-2.0 * s))
            .collect()
    }

    pub fn inner(&self, grid: &QuadratureGrid, f: &[f64], g: &[f64], s: f64) -> f64 {
        grid.weights
            .iter()
            .zip(&self.values)
            .zip(f.iter().zip(g))
            .map(|((w, m), (a, b))| w * m.powf(-2.0 * s) * a * b)
            .sum()
    }

    /// `(‖f‖²_{ℍ^s} + λ‖f‖²_{ℍ^{1/2}})^{1/2}`.
    pub fn weighted_norm(
        &self,
        grid: &QuadratureGrid,
        f: &[f64],
        s: f64,
        lambda: f64,
    ) -> Result<f64> {
        check_weight(s)?;
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        let mut sq = self.inner(grid, f, f, s);
        if lambda > 0.0 {
            sq += lambda * self.inner(grid, f, f, 0.5);
        }
        Ok(sq.sqrt())
    }
}

pub fn check_weight(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Config(format!(
            "weight s must lie in (0, 1], got {s}"
        )));
    }
    Ok(())
}

/// Norm of a distribution in its own ambient space.
pub fn weighted_norm(
    f: &DistributionVector,
    grid: &QuadratureGrid,
    reference: &ReferenceMaxwellian,
) -> Result<f64> {
    reference.weighted_norm(grid, &f.values, f.weight_s, f.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference() -> FluidState {
        FluidState::from_primitive(1.0, [0.0; 3], 0.75).unwrap()
    }

    #[test]
    fn gaussian_integral_n8() {
        let g = build_grid(8, 5.0, 4).unwrap();
        assert_eq!(g.len(), 512);
        assert!(g.gaussian_error() < 1e-4);
        assert!(g.max_abs_component() <= 5.0);
    }

    #[test]
    fn default_resolution_meets_moment_tol() {
        let g = build_grid(16, 6.0, 4).unwrap();
        assert!(g.gaussian_error() < crate::tolerances::MOMENT_TOL);
    }

    #[test]
    fn rejects_coarse_or_bad_parameters() {
        assert!(build_grid(3, 5.0, 4).is_err());
        assert!(build_grid(8, -1.0, 4).is_err());
        assert!(build_grid(4, 0.5, 4).is_err());
    }

    #[test]
    fn odd_moment_vanishes_exactly() {
        let g = build_grid(8, 5.0, 4).unwrap();
        let f: Vec<f64> = g.nodes.iter().map(|x| (-norm2(x)).exp()).collect();
        let m = moment_vector(&f, &g);
        assert_eq!(m[1], 0.0);
        assert_eq!(m[2], 0.0);
        assert_eq!(m[3], 0.0);
    }

    #[test]
    fn angular_weights_sum_to_sphere_area() {
        let g = build_grid(6, 5.0, 5).unwrap();
        let s: f64 = g.angular_weights.iter().sum();
        assert!((s - 4.0 * PI).abs() < 1e-12);
        for o in &g.angular_nodes {
            assert!((norm2(o).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn maxwellian_peak_value() {
        let u = reference();
        let m = maxwellian_at(&u, &[0.0; 3]);
        assert!((m - 0.179_587_1).abs() < 1e-7);
        let u2 = FluidState::from_primitive(2.0, [0.0; 3], 0.75).unwrap();
        assert!(
            (maxwellian_at(&u2, &[0.3, 0.1, 0.0]) - 2.0 * maxwellian_at(&u, &[0.3, 0.1, 0.0]))
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn maxwellian_rejects_nonpositive_energy() {
        let bad = FluidState {
            rho: 1.0,
            momentum: [1.0, 0.0, 0.0],
            total_energy: 0.4,
        };
        let g = build_grid(6, 4.5, 2).unwrap();
        assert!(matches!(maxwellian(&bad, &g), Err(Error::InvalidState(_))));
    }

    #[test]
    fn maxwellian_moments_recover_state() {
        let g = build_grid(16, 6.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let u = FluidState::from_primitive(
                rng.random_range(0.5..2.0),
                [
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ],
                rng.random_range(0.5..1.0),
            )
            .unwrap();
            let m = moments(&maxwellian(&u, &g).unwrap(), &g).to_array();
            let a = u.to_array();
            let scale = 1.0 + a.iter().map(|x| x * x).sum::<f64>().sqrt();
            for c in 0..5 {
                assert!(
                    (m[c] - a[c]).abs() <= 1e-6 * scale,
                    "{c}: {} vs {}",
                    m[c],
                    a[c]
                );
            }
        }
    }

    #[test]
    fn moments_of_momentum_mode_match_radial_oracle() {
        // χ₁M with χ₁ = ξ₁/√T at T = 1/2: only the ξ₁ moment survives,
        // ∫ξ₁²/√T M = ρ√T.
        let g = build_grid(16, 6.0, 4).unwrap();
        let u = reference();
        let t = u.temperature();
        let f: Vec<f64> = g
            .nodes
            .iter()
            .map(|x| x[0] / t.sqrt() * maxwellian_at(&u, x))
            .collect();
        let m = moment_vector(&f, &g);
        assert!(m[0].abs() < 1e-14);
        assert!((m[1] - t.sqrt()).abs() < 1e-9);
        assert!(m[2].abs() < 1e-14 && m[3].abs() < 1e-14 && m[4].abs() < 1e-14);
    }

    #[test]
    fn reference_norm_is_density() {
        let g = build_grid(16, 6.0, 4).unwrap();
        let r = ReferenceMaxwellian::new(reference(), &g).unwrap();
        let n = r.weighted_norm(&g, &r.values, 0.5, 0.0).unwrap();
        assert!((n * n - 1.0).abs() < 1e-6);
        assert_eq!(
            r.weighted_norm(&g, &vec![0.0; g.len()], 0.7, 1.0).unwrap(),
            0.0
        );
        let f = DistributionVector::new(r.values.clone()).with_weight(0.75, 0.0);
        let a = weighted_norm(&f, &g, &r).unwrap();
        assert!((a - r.weighted_norm(&g, &r.values, 0.75, 0.0).unwrap()).abs() == 0.0);
        assert!(r.weighted_norm(&g, &r.values, 1.5, 0.0).is_err());
        assert!(r.weighted_norm(&g, &r.values, 0.0, 0.0).is_err());
    }

    #[test]
    fn mirror_index_negates_node() {
        let g = build_grid(7, 5.0, 2).unwrap();
        for b in 0..g.len() {
            let m = g.mirror(b);
            for d in 0..3 {
                assert_eq!(g.nodes[b][d], -g.nodes[m][d]);
            }
        }
    }
}
