//! The linearized kinetic profile operator with an internal phase
//! condition, its right inverse, and the estimate diagnostics built on it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::bvp::{dichotomy_rows, DerivativeStencil, End, ProfileGrid, SparseBuilder, SparseLu};
use crate::chapman_enskog::{ReducedSystem, SlowField};
use crate::error::{Error, Result};
use crate::linalg::{complement, eigen};
use crate::ns_profile::NsProfile;
use crate::parallel::{map_indices, Execution};
use crate::relaxation::RelaxationSystem;
use crate::tolerances::LIN_TOL;

/// Coefficients of the linearization along a Navier-Stokes profile.
#[derive(Debug, Clone)]
pub struct ProfileBase {
    pub grid: ProfileGrid,
    pub epsilon: f64,
    pub u: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub v_star: Vec<DVector<f64>>,
    /// `v̄ = v*(ū) + c*(ū) ū'`.
    pub v_ns: Vec<DVector<f64>>,
    pub dv_ns: Vec<DVector<f64>>,
    /// `[∂_u q, ∂_v q]` at `(ū, v*(ū))`.
    pub dq_star: Vec<DMatrix<f64>>,
    /// `dq(ū, v̄) − dq(ū, v*(ū))`.
    pub m_term: Vec<DMatrix<f64>>,
    /// `A₂₁ū' + A₂₂v̄' − q(ū, v̄)` at the nodes.
    pub residual_v: Vec<DVector<f64>>,
    /// The same residual without the `c*ū'` correction.
    pub residual_v_uncorrected: Vec<DVector<f64>>,
    /// `h₋ − A₁₁ū − A₁₂v̄`.
    pub first_row_defect: Vec<DVector<f64>>,
    pub u_minus: DVector<f64>,
    pub u_plus: DVector<f64>,
    pub v_minus: DVector<f64>,
    pub v_plus: DVector<f64>,
}

fn dq_full(system: &RelaxationSystem, u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let (qu, qv) = system.dq(u, v);
    let (n, m) = (system.n_macro, system.n_micro());
    let mut out = DMatrix::zeros(m, n + m);
    out.view_mut((0, 0), (m, n)).copy_from(&qu);
    out.view_mut((0, n), (m, m)).copy_from(&qv);
    out
}

impl ProfileBase {
    pub fn new(reduced: &ReducedSystem, profile: &NsProfile, exec: Execution) -> Result<Self> {
        Self::on_grid(reduced, profile, profile.grid.clone(), exec)
    }

    /// Coefficients on `grid`, interpolating the profile where needed.
    pub fn on_grid(
        reduced: &ReducedSystem,
        profile: &NsProfile,
        grid: ProfileGrid,
        exec: Execution,
    ) -> Result<Self> {
        let sys = &reduced.system;
        let u: Vec<DVector<f64>> = if grid.x == profile.grid.x {
            profile.u.clone()
        } else {
            grid.x.iter().map(|x| profile.interpolate(*x)).collect()
        };
        let stencil = DerivativeStencil::new(&grid);
        let du = stencil.derivative(&u);
        let states: Vec<_> = map_indices(exec, u.len(), |i| reduced.state(&u[i]))
            .into_iter()
            .collect::<Result<_>>()?;
        let v_star: Vec<DVector<f64>> = states.iter().map(|s| s.v.clone()).collect();
        let v_ns: Vec<DVector<f64>> = states
            .iter()
            .zip(&du)
            .map(|(s, d)| &s.v + &s.c * d)
            .collect();
        let dv_ns = stencil.derivative(&v_ns);
        let dv_star = stencil.derivative(&v_star);
        let (a11, a12, a21, a22) = (sys.a11(), sys.a12(), sys.a21(), sys.a22());
        let k = u.len();
        let mut dq_star = Vec::with_capacity(k);
        let mut m_term = Vec::with_capacity(k);
        let mut residual_v = Vec::with_capacity(k);
        let mut residual_v_uncorrected = Vec::with_capacity(k);
        let mut first_row_defect = Vec::with_capacity(k);
        let h_minus = reduced.h_star(&profile.spec.u_minus)?;
        for i in 0..k {
            let ds = dq_full(sys, &u[i], &v_star[i]);
            m_term.push(dq_full(sys, &u[i], &v_ns[i]) - &ds);
            dq_star.push(ds);
            residual_v.push(&a21 * &du[i] + &a22 * &dv_ns[i] - sys.q(&u[i], &v_ns[i]));
            residual_v_uncorrected
                .push(&a21 * &du[i] + &a22 * &dv_star[i] - sys.q(&u[i], &v_star[i]));
            first_row_defect.push(&h_minus - &a11 * &u[i] - &a12 * &v_ns[i]);
        }
        let u_minus = profile.spec.u_minus.clone();
        let u_plus = profile.spec.u_plus.clone();
        Ok(Self {
            epsilon: profile.spec.epsilon,
            v_minus: reduced.v_star(&u_minus)?,
            v_plus: reduced.v_star(&u_plus)?,
            grid,
            u,
            du,
            v_star,
            v_ns,
            dv_ns,
            dq_star,
            m_term,
            residual_v,
            residual_v_uncorrected,
            first_row_defect,
            u_minus,
            u_plus,
        })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Full state `Ū_NS = (ū, v̄)` at each node.
    pub fn state(&self) -> Vec<DVector<f64>> {
        self.u
            .iter()
            .zip(&self.v_ns)
            .map(|(u, v)| {
                DVector::from_iterator(u.len() + v.len(), u.iter().chain(v.iter()).copied())
            })
            .collect()
    }

    pub fn max_residual_v(&self) -> f64 {
        self.residual_v.iter().map(|r| r.amax()).fold(0.0, f64::max)
    }

    pub fn max_residual_v_uncorrected(&self) -> f64 {
        self.residual_v_uncorrected
            .iter()
            .map(|r| r.amax())
            .fold(0.0, f64::max)
    }

    /// Box-scheme residual of the microscopic equation at interval midpoints.
    pub fn interval_residual_v(&self, system: &RelaxationSystem) -> Vec<DVector<f64>> {
        let (a21, a22) = (system.a21(), system.a22());
        (0..self.len() - 1)
            .map(|i| {
                let h = self.grid.spacing(i);
                let qi = system.q(&self.u[i], &self.v_ns[i]);
                let qj = system.q(&self.u[i + 1], &self.v_ns[i + 1]);
                (&a21 * (&self.u[i + 1] - &self.u[i]) + &a22 * (&self.v_ns[i + 1] - &self.v_ns[i]))
                    / h
                    - (qi + qj) * 0.5
            })
            .collect()
    }
}

/// Unit phase vector along the left slow eigenvector, largest entry positive.
pub fn choose_phase_vector(slow: &SlowField) -> DVector<f64> {
    let l = DVector::from_vec(slow.l.clone());
    let l = &l / l.norm();
    let k = l.iamax();
    if l[k] < 0.0 {
        -l
    } else {
        l
    }
}

/// The operator `U ↦ (A₁₁u + A₁₂v − ηu', A₂₁u' + A₂₂v' − dq U − ηv'')`
/// discretized by a box scheme with dichotomy boundary rows and the phase
/// row `ℓ·u(0) = 0`.
pub struct LinearizedProfileOperator {
    pub n: usize,
    pub m: usize,
    pub grid: ProfileGrid,
    pub epsilon: f64,
    pub eta: f64,
    pub phase: DVector<f64>,
    pub a: DMatrix<f64>,
    pub dq: Vec<DMatrix<f64>>,
    pub bc_left: DMatrix<f64>,
    pub bc_right: DMatrix<f64>,
    stencil: DerivativeStencil,
    matrix: SparseBuilder,
    lu: SparseLu,
}

/// Boundary rows for the kinetic profile problem at one endstate.
fn kinetic_bc(
    system: &RelaxationSystem,
    u: &DVector<f64>,
    v: &DVector<f64>,
    end: End,
) -> Result<DMatrix<f64>> {
    let n = system.n_macro;
    let a = &system.a;
    let top = a.rows(0, n).into_owned();
    let z = complement(&top.transpose())?;
    let lhs = a.rows(n, system.n_micro()) * &z;
    let mm = lhs
        .lu()
        .solve(&(dq_full(system, u, v) * &z))
        .ok_or_else(|| {
            Error::Assumption("[A₂₁ A₂₂] is singular on the kernel of the first row".into())
        })?;
    let (r, _) = dichotomy_rows(&mm, end)?;
    Ok(r * z.transpose())
}

impl LinearizedProfileOperator {
    pub fn new(
        system: &RelaxationSystem,
        base: &ProfileBase,
        phase: DVector<f64>,
        eta: f64,
    ) -> Result<Self> {
        let n = system.n_macro;
        let m = system.n_micro();
        let nn = n + m;
        let k = base.len();
        let grid = base.grid.clone();
        let bc_left = kinetic_bc(system, &base.u_minus, &base.v_minus, End::Left)?;
        let bc_right = kinetic_bc(system, &base.u_plus, &base.v_plus, End::Right)?;
        if bc_left.nrows() + bc_right.nrows() + 1 != m {
            return Err(Error::Assumption(format!(
                "kinetic endstate count fails: {} + {} boundary rows for {} microscopic equations",
                bc_left.nrows(),
                bc_right.nrows(),
                m
            )));
        }
        let stencil = DerivativeStencil::new(&grid);
        let a = system.a.clone();
        let top = a.rows(0, n).into_owned();
        let bottom = a.rows(n, m).into_owned();
        let mut mat = SparseBuilder::new(nn * k);
        let mut row = 0;
        mat.add_block(row, 0, &bc_left, 1.0);
        row += bc_left.nrows();
        for i in 0..k {
            mat.add_block(row, i * nn, &top, 1.0);
            if eta > 0.0 {
                let s = stencil.start[i];
                for (j, w) in stencil.first[i].iter().enumerate() {
                    for c in 0..n {
                        mat.add(row + c, (s + j) * nn + c, -eta * w);
                    }
                }
            }
            row += n;
            if i + 1 < k {
                let h = grid.spacing(i);
                mat.add_block(row, (i + 1) * nn, &bottom, 1.0 / h);
                mat.add_block(row, i * nn, &bottom, -1.0 / h);
                mat.add_block(row, i * nn, &base.dq_star[i], -0.5);
                mat.add_block(row, (i + 1) * nn, &base.dq_star[i + 1], -0.5);
                if eta > 0.0 {
                    for (node, sign) in [(i + 1, -1.0), (i, 1.0)] {
                        let s = stencil.start[node];
                        for (j, w) in stencil.first[node].iter().enumerate() {
                            for c in 0..m {
                                mat.add(row + c, (s + j) * nn + n + c, sign * eta * w / h);
                            }
                        }
                    }
                }
                row += m;
            }
        }
        let c = grid.center();
        for j in 0..n {
            mat.add(row, c * nn + j, phase[j]);
        }
        row += 1;
        mat.add_block(row, (k - 1) * nn, &bc_right, 1.0);
        let lu = mat.factor().map_err(|e| {
            Error::Solver(format!(
                "{e}; the phase vector may be transverse to the translation mode"
            ))
        })?;
        Ok(Self {
            n,
            m,
            grid,
            epsilon: base.epsilon,
            eta,
            phase,
            a,
            dq: base.dq_star.clone(),
            bc_left,
            bc_right,
            stencil,
            matrix: mat,
            lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    /// Continuous form of the operator with five-point derivatives.
    pub fn apply(&self, u: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let (n, m) = (self.n, self.m);
        let du = self.stencil.derivative(u);
        let d2u = self.stencil.second_derivative(u);
        let top = self.a.rows(0, n).into_owned();
        let bottom = self.a.rows(n, m).into_owned();
        let mut f = Vec::with_capacity(u.len());
        let mut g = Vec::with_capacity(u.len());
        for i in 0..u.len() {
            f.push(&top * &u[i] - du[i].rows(0, n) * self.eta);
            g.push(&bottom * &du[i] - &self.dq[i] * &u[i] - d2u[i].rows(n, m) * self.eta);
        }
        (f, g)
    }

    /// The assembled discrete operator applied to a flattened profile.
    pub fn apply_discrete(&self, u: &[DVector<f64>]) -> DVector<f64> {
        self.matrix.mul(&flatten(u))
    }

    /// Right-hand side for nodal `f` and interval-valued `g`.
    pub fn rhs_intervals(&self, f: &[DVector<f64>], g_mid: &[DVector<f64>]) -> DVector<f64> {
        let (n, m) = (self.n, self.m);
        let k = self.nodes();
        let mut b = DVector::zeros(self.dim() * k);
        let mut row = self.bc_left.nrows();
        for i in 0..k {
            b.rows_mut(row, n).copy_from(&f[i]);
            row += n;
            if i + 1 < k {
                b.rows_mut(row, m).copy_from(&g_mid[i]);
                row += m;
            }
        }
        b
    }

    /// Right-hand side for nodal sources.
    pub fn rhs(&self, f: &[DVector<f64>], g: &[DVector<f64>]) -> DVector<f64> {
        let mid: Vec<DVector<f64>> = (0..g.len() - 1)
            .map(|i| (&g[i] + &g[i + 1]) * 0.5)
            .collect();
        self.rhs_intervals(f, &mid)
    }

    /// Solve the discrete system for a full right-hand side.
    pub fn solve_rhs(&self, b: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let mut x = self.lu.solve(b)?;
        let scale = b.norm().max(f64::MIN_POSITIVE);
        let mut res = b - self.matrix.mul(&x);
        if res.norm() > 1e-3 * LIN_TOL * scale {
            x += self.lu.solve(&res)?;
            res = b - self.matrix.mul(&x);
        }
        let rel = res.norm() / scale;
        if rel > LIN_TOL && b.norm() > 0.0 {
            return Err(Error::Solver(format!(
                "linear profile solve left relative residual {rel:.3e}"
            )));
        }
        Ok(unflatten(&x, self.dim()))
    }

    pub fn solve(&self, f: &[DVector<f64>], g: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.solve_rhs(&self.rhs(f, g))
    }

    /// Relative discrete residual of `u` against `b`.
    pub fn relative_residual(&self, u: &[DVector<f64>], b: &DVector<f64>) -> f64 {
        (b - self.apply_discrete(u)).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    /// `ℓ·u(0)`.
    pub fn phase_defect(&self, u: &[DVector<f64>]) -> f64 {
        self.phase.dot(&u[self.grid.center()].rows(0, self.n))
    }

    pub fn stencil(&self) -> &DerivativeStencil {
        &self.stencil
    }
}

pub fn flatten(u: &[DVector<f64>]) -> DVector<f64> {
    let n = u[0].len();
    DVector::from_fn(n * u.len(), |i, _| u[i / n][i % n])
}

pub fn unflatten(x: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    (0..x.len() / n)
        .map(|i| x.rows(i * n, n).into_owned())
        .collect()
}

/// Default viscosities of the cross-check path.
pub const VISCOUS_ETAS: [f64; 3] = [1e-4, 1e-5, 1e-6];

/// Solutions along the viscous family and their limit `η → 0`.
#[derive(Debug, Clone)]
pub struct ViscousSolution {
    pub etas: Vec<f64>,
    pub solutions: Vec<Vec<DVector<f64>>>,
    pub extrapolated: Vec<DVector<f64>>,
    /// Gap between the two- and three-point extrapolations.
    pub extrapolation_gap: f64,
}

/// Solve along the viscous family and extrapolate polynomially to `η = 0`.
/// Lagrange extrapolation to `η = 0` through the solutions selected by `idx`.
pub fn extrapolate_to_zero(
    etas: &[f64],
    solutions: &[Vec<DVector<f64>>],
    idx: &[usize],
) -> Vec<DVector<f64>> {
    let weights: Vec<f64> = idx
        .iter()
        .map(|&a| {
            idx.iter()
                .filter(|&&b| b != a)
                .map(|&b| (0.0 - etas[b]) / (etas[a] - etas[b]))
                .product()
        })
        .collect();
    (0..solutions[0].len())
        .map(|i| {
            let mut out = DVector::zeros(solutions[0][i].len());
            for (w, &a) in weights.iter().zip(idx) {
                out.axpy(*w, &solutions[a][i], 1.0);
            }
            out
        })
        .collect()
}

pub fn solve_viscous(
    system: &RelaxationSystem,
    base: &ProfileBase,
    phase: &DVector<f64>,
    f: &[DVector<f64>],
    g: &[DVector<f64>],
    etas: &[f64],
) -> Result<ViscousSolution> {
    if etas.len() < 2 || etas.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config(
            "the viscous path needs at least two positive viscosities".into(),
        ));
    }
    let mut solutions = Vec::with_capacity(etas.len());
    for &eta in etas {
        let op = LinearizedProfileOperator::new(system, base, phase.clone(), eta)?;
        solutions.push(op.solve(f, g)?);
    }
    let all: Vec<usize> = (0..etas.len()).collect();
    let full = extrapolate_to_zero(etas, &solutions, &all);
    let gap = if etas.len() > 2 {
        let last2 = extrapolate_to_zero(etas, &solutions, &all[all.len() - 2..]);
        crate::bvp::sup_distance(&full, &last2)
    } else {
        0.0
    };
    Ok(ViscousSolution {
        etas: etas.to_vec(),
        solutions,
        extrapolated: full,
        extrapolation_gap: gap,
    })
}

/// Eigen-data of the first-order endstate matrix on one side.
#[derive(Debug, Clone, Serialize)]
pub struct SideSpectrum {
    pub stable: usize,
    pub unstable: usize,
    pub min_abs_re: f64,
    /// Real eigenvalue of smallest modulus.
    pub slow: f64,
    /// `ε μ` from the reduced slow equation.
    pub predicted_slow: f64,
    pub flux_stable: usize,
    pub flux_unstable: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EndstateSpectrum {
    pub eta: f64,
    pub epsilon: f64,
    pub minus: SideSpectrum,
    pub plus: SideSpectrum,
    /// `dim S(𝔸±) = r + dim S(dh*±)` and the unstable analogue on both sides.
    pub dims_match: bool,
    /// `dim S(𝔸₊) + dim U(𝔸₋) = n + 2r + 1`.
    pub balance: bool,
    pub slow_within_half: bool,
}

/// First-order matrix of the viscous profile equation at an endstate.
pub fn endstate_matrix(
    system: &RelaxationSystem,
    u: &DVector<f64>,
    v: &DVector<f64>,
    eta: f64,
) -> DMatrix<f64> {
    let (n, m) = (system.n_macro, system.n_micro());
    let (a11, a12, a21, a22) = (system.a11(), system.a12(), system.a21(), system.a22());
    let (q21, q22) = system.dq(u, v);
    let size = n + 2 * m;
    let mut big = DMatrix::zeros(size, size);
    big.view_mut((0, 0), (n, n)).copy_from(&(&a11 / eta));
    big.view_mut((0, n), (n, m)).copy_from(&(&a12 / eta));
    big.view_mut((n, n + m), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    big.view_mut((n + m, 0), (m, n))
        .copy_from(&((&a21 * &a11 / eta - q21) / eta));
    big.view_mut((n + m, n), (m, m))
        .copy_from(&((&a21 * &a12 / eta - q22) / eta));
    big.view_mut((n + m, n + m), (m, m))
        .copy_from(&(&a22 / eta));
    big
}

/// Spectra of the endstate matrices at viscosity `η`; `mu` are the reduced
/// slow rates `(μ₋, μ₊)`.
pub fn endstate_spectrum(
    reduced: &ReducedSystem,
    base: &ProfileBase,
    eta: f64,
    mu: (f64, f64),
) -> Result<EndstateSpectrum> {
    if !(eta > 0.0) {
        return Err(Error::Config("endstate spectrum needs η > 0".into()));
    }
    let sys = &reduced.system;
    let eps = base.epsilon;
    let side = |u: &DVector<f64>, v: &DVector<f64>, mu: f64| -> Result<SideSpectrum> {
        let vals = eigen(&endstate_matrix(sys, u, v, eta))?.0;
        let flux = eigen(&reduced.dh_star(u)?)?.0;
        let slow = vals
            .iter()
            .filter(|z| z.im.abs() <= 1e-9 * z.norm().max(1e-300))
            .map(|z| z.re)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(f64::NAN);
        Ok(SideSpectrum {
            stable: vals.iter().filter(|z| z.re < 0.0).count(),
            unstable: vals.iter().filter(|z| z.re > 0.0).count(),
            min_abs_re: vals
                .iter()
                .map(|z| z.re.abs())
                .fold(f64::INFINITY, f64::min),
            slow,
            predicted_slow: eps * mu,
            flux_stable: flux.iter().filter(|z| z.re < 0.0).count(),
            flux_unstable: flux.iter().filter(|z| z.re > 0.0).count(),
        })
    };
    let minus = side(&base.u_minus, &base.v_minus, mu.0)?;
    let plus = side(&base.u_plus, &base.v_plus, mu.1)?;
    let (n, r) = (sys.n_macro, sys.n_micro());
    let dims_match = [&minus, &plus]
        .iter()
        .all(|s| s.stable == r + s.flux_stable && s.unstable == r + s.flux_unstable);
    let balance = plus.stable + minus.unstable == n + 2 * r + 1;
    let slow_within_half = [&minus, &plus]
        .iter()
        .all(|s| (s.slow - s.predicted_slow).abs() <= 0.5 * s.predicted_slow.abs());
    Ok(EndstateSpectrum {
        eta,
        epsilon: eps,
        minus,
        plus,
        dims_match,
        balance,
        slow_within_half,
    })
}

/// Weighted norms on a profile grid.
#[derive(Debug, Clone)]
pub struct WeightedNorms {
    pub epsilon: f64,
    pub delta: f64,
    weights: Vec<f64>,
    stencil: DerivativeStencil,
}

impl WeightedNorms {
    pub fn new(grid: &ProfileGrid, epsilon: f64, delta: f64) -> Self {
        let k = grid.len();
        let mut weights = vec![0.0; k];
        for i in 0..k - 1 {
            let h = grid.spacing(i);
            weights[i] += 0.5 * h;
            weights[i + 1] += 0.5 * h;
        }
        for (w, x) in weights.iter_mut().zip(&grid.x) {
            let e = (delta * epsilon * (x * x + 1.0).sqrt()).exp();
            *w *= e * e;
        }
        Self {
            epsilon,
            delta,
            weights,
            stencil: DerivativeStencil::new(grid),
        }
    }

    /// `‖e^{δε⟨x⟩} f‖_{L²}`.
    pub fn l2(&self, f: &[DVector<f64>]) -> f64 {
        f.iter()
            .zip(&self.weights)
            .map(|(v, w)| w * v.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// `ε^{1/2} ‖e^{δε⟨x⟩} f‖_{L²}`.
    pub fn l2_eps(&self, f: &[DVector<f64>]) -> f64 {
        self.epsilon.sqrt() * self.l2(f)
    }

    /// `ε^{1/2} Σ_{k≤s} ε^{−k} ‖e^{δε⟨x⟩} ∂ᵏf‖_{L²}`.
    pub fn h(&self, f: &[DVector<f64>], s: usize) -> f64 {
        let mut total = 0.0;
        let mut d = f.to_vec();
        for k in 0..=s {
            if k > 0 {
                d = self.stencil.derivative(&d);
            }
            total += self.epsilon.powi(-(k as i32)) * self.l2(&d);
        }
        self.epsilon.sqrt() * total
    }

    pub fn derivative(&self, f: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.stencil.derivative(f)
    }

    /// Coordinates whose Euclidean norm is the Hilbert form of `h(f, s)`,
    /// `(ε Σ_{k≤s} ε^{−2k} ‖e^{δε⟨x⟩} ∂ᵏf‖²)^{1/2}`, within `√(s+1)` of it.
    pub fn h_coordinates(&self, f: &[DVector<f64>], s: usize) -> DVector<f64> {
        let dim = f.first().map_or(0, |v| v.len());
        let mut out = Vec::with_capacity((s + 1) * f.len() * dim);
        let mut d = f.to_vec();
        for k in 0..=s {
            if k > 0 {
                d = self.stencil.derivative(&d);
            }
            let scale = self.epsilon.sqrt() * self.epsilon.powi(-(k as i32));
            for (v, w) in d.iter().zip(&self.weights) {
                out.extend(v.iter().map(|x| x * scale * w.sqrt()));
            }
        }
        DVector::from_vec(out)
    }
}

/// Bump centres, in the scaled variable `εx`, of the deterministic source basis.
pub const SOURCE_CENTRES: [f64; 3] = [-1.0, 0.0, 1.0];

/// `sup ε‖U‖_{H²} / (‖f‖²_{H³} + ‖g‖²_{H²})^{1/2}` over the span of Gaussian
/// bumps at `SOURCE_CENTRES` in each source component, in the Hilbert forms
/// of the weighted norms.
pub fn subspace_estimate(op: &LinearizedProfileOperator, norms: &WeightedNorms) -> Result<f64> {
    let (n, m, eps) = (op.n, op.m, op.epsilon);
    let mut src_cols = Vec::new();
    let mut sol_cols = Vec::new();
    for c in SOURCE_CENTRES {
        for j in 0..n + m {
            let bump = |x: f64| {
                let s = eps * x - c;
                (-s * s).exp()
            };
            let f: Vec<DVector<f64>> = op
                .grid
                .x
                .iter()
                .map(|x| DVector::from_fn(n, |i, _| if i == j { bump(*x) } else { 0.0 }))
                .collect();
            let g: Vec<DVector<f64>> = op
                .grid
                .x
                .iter()
                .map(|x| DVector::from_fn(m, |i, _| if i + n == j { bump(*x) } else { 0.0 }))
                .collect();
            let u = op.solve(&f, &g)?;
            let (yf, yg) = (norms.h_coordinates(&f, 3), norms.h_coordinates(&g, 2));
            src_cols.push(DVector::from_iterator(
                yf.len() + yg.len(),
                yf.iter().chain(yg.iter()).copied(),
            ));
            sol_cols.push(norms.h_coordinates(&u, 2) * eps);
        }
    }
    let yf = DMatrix::from_columns(&src_cols);
    let yu = DMatrix::from_columns(&sol_cols);
    let r = yf.qr().r();
    // X = Y_U R⁻¹, so that C = σ_max(X)
    let xt = r
        .transpose()
        .solve_lower_triangular(&yu.transpose())
        .ok_or_else(|| Error::Solver("degenerate source basis".into()))?;
    let gram = &xt * xt.transpose();
    let top = crate::linalg::sym_eigenvalues(&gram)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(top.sqrt())
}

/// Smooth random source varying on the scale `1/ε`.
pub fn random_source<R: Rng>(
    grid: &ProfileGrid,
    dim: usize,
    epsilon: f64,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let bumps: Vec<(f64, DVector<f64>)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-2.0..2.0),
                DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)),
            )
        })
        .collect();
    grid.x
        .iter()
        .map(|x| {
            let mut out = DVector::zeros(dim);
            for (c, a) in &bumps {
                let s = epsilon * x - c;
                out.axpy((-s * s).exp(), a, 1.0);
            }
            out
        })
        .collect()
}

/// Fitted constants of the linear estimates at one amplitude.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub epsilon: f64,
    pub delta: f64,
    pub samples: usize,
    /// `max ε‖U‖_{H²} / (‖f‖_{H³} + ‖g‖_{H²})` over the random sources.
    pub c_h2: f64,
    /// The same ratio maximized over the bump source subspace.
    pub c_h2_sup: f64,
    /// `max (‖U'‖ + ‖ṽ‖) / (‖(f, f', f'', g, g')‖ + ε‖u‖)` in `L²_{ε,δ}`.
    pub c_energy: f64,
    /// `max ‖ṽ‖ / ‖u‖`.
    pub micro_ratio: f64,
    /// Largest relative discrete residual seen.
    pub max_residual: f64,
    /// Largest `|ℓ·u(0)|` seen.
    pub max_phase_defect: f64,
}

/// Solve for random smooth sources and fit the estimate constants.
pub fn estimate_suite<R: Rng>(
    op: &LinearizedProfileOperator,
    base: &ProfileBase,
    reduced: &ReducedSystem,
    delta: f64,
    samples: usize,
    rng: &mut R,
) -> Result<EstimateReport> {
    let eps = op.epsilon;
    let norms = WeightedNorms::new(&op.grid, eps, delta);
    let (n, m) = (op.n, op.m);
    let mut rep = EstimateReport {
        epsilon: eps,
        delta,
        samples,
        c_h2: 0.0,
        c_h2_sup: subspace_estimate(op, &norms)?,
        c_energy: 0.0,
        micro_ratio: 0.0,
        max_residual: 0.0,
        max_phase_defect: 0.0,
    };
    // p = −dv*(ū) along the profile
    let p: Vec<DMatrix<f64>> = base
        .u
        .iter()
        .map(|u| reduced.state(u).map(|s| -s.dv))
        .collect::<Result<_>>()?;
    for k in 0..samples {
        // rotate joint, macro-only and micro-only sources so the sup sees both blocks
        let mut f = random_source(&op.grid, n, eps, rng);
        let mut g = random_source(&op.grid, m, eps, rng);
        match k % 3 {
            1 => g.iter_mut().for_each(|x| x.fill(0.0)),
            2 => f.iter_mut().for_each(|x| x.fill(0.0)),
            _ => {}
        }
        let b = op.rhs(&f, &g);
        let u = op.solve_rhs(&b)?;
        rep.max_residual = rep.max_residual.max(op.relative_residual(&u, &b));
        rep.max_phase_defect = rep.max_phase_defect.max(op.phase_defect(&u).abs());
        let uh = norms.h(&u, 2);
        let c = eps * uh / (norms.h(&f, 3) + norms.h(&g, 2));
        rep.c_h2 = rep.c_h2.max(c);
        let macro_u: Vec<DVector<f64>> = u.iter().map(|x| x.rows(0, n).into_owned()).collect();
        let vt: Vec<DVector<f64>> = u
            .iter()
            .zip(&p)
            .map(|(x, p)| x.rows(n, m).into_owned() + p * x.rows(0, n))
            .collect();
        let du = norms.derivative(&u);
        let f1 = norms.derivative(&f);
        let f2 = norms.derivative(&f1);
        let g1 = norms.derivative(&g);
        let src = (norms.l2_eps(&f).powi(2)
            + norms.l2_eps(&f1).powi(2)
            + norms.l2_eps(&f2).powi(2)
            + norms.l2_eps(&g).powi(2)
            + norms.l2_eps(&g1).powi(2))
        .sqrt();
        let lhs = norms.l2_eps(&du) + norms.l2_eps(&vt);
        rep.c_energy = rep.c_energy.max(lhs / (src + eps * norms.l2_eps(&macro_u)));
        rep.micro_ratio = rep
            .micro_ratio
            .max(norms.l2(&vt) / norms.l2(&macro_u).max(f64::MIN_POSITIVE));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ns_profile::{hugoniot_connect, solve_ns_profile, ProfileOptions};
    use crate::relaxation::{make_synthetic, EquilibriumMap, SyntheticSpec};
    use crate::tolerances::EQUILIBRIUM_TOL_SYNTHETIC;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(spec: SyntheticSpec, eps: f64) -> (ReducedSystem, ProfileBase, DVector<f64>) {
        let s = make_synthetic(&spec).unwrap();
        let eq = EquilibriumMap::new(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        let r = ReducedSystem::reduce(s, eq).unwrap();
        let sf = r.slow_field().unwrap();
        let shock = hugoniot_connect(&r, &r.u0, &sf, eps).unwrap();
        let p = solve_ns_profile(&r, &shock, &ProfileOptions::default()).unwrap();
        let base = ProfileBase::new(&r, &p, Execution::Sequential).unwrap();
        (r, base, choose_phase_vector(&sf))
    }

    #[test]
    fn round_trip_and_phase() {
        let (r, base, l) = setup(SyntheticSpec::broadwell(), 0.05);
        let op = LinearizedProfileOperator::new(&r.system, &base, l, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut u = random_source(&op.grid, 3, 0.05, &mut rng);
        let c = op.grid.center();
        let shift = op.phase_defect(&u);
        for (j, p) in op.phase.iter().enumerate() {
            u[c][j] -= shift * p;
        }
        let b = op.apply_discrete(&u);
        let back = op.solve_rhs(&b).unwrap();
        let err = crate::bvp::sup_distance(&u, &back);
        assert!(
            err < 1e-8 * u.iter().map(|x| x.amax()).fold(0.0, f64::max),
            "{err}"
        );
        let zero = op
            .solve(
                &vec![DVector::zeros(2); op.nodes()],
                &vec![DVector::zeros(1); op.nodes()],
            )
            .unwrap();
        assert!(zero.iter().all(|z| z.amax() == 0.0));
    }

    #[test]
    fn burgers_phase_vector_is_one() {
        let s = make_synthetic(&SyntheticSpec::burgers_closure()).unwrap();
        let eq = EquilibriumMap::new(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        let r = ReducedSystem::reduce(s, eq).unwrap();
        let l = choose_phase_vector(&r.slow_field().unwrap());
        assert_eq!(l.len(), 1);
        assert!((l[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn viscous_path_matches_bordered_solve() {
        let (r, base, l) = setup(SyntheticSpec::broadwell(), 0.05);
        let op = LinearizedProfileOperator::new(&r.system, &base, l.clone(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_source(&op.grid, 2, 0.05, &mut rng);
        let g = random_source(&op.grid, 1, 0.05, &mut rng);
        let u = op.solve(&f, &g).unwrap();
        let visc = solve_viscous(&r.system, &base, &l, &f, &g, &VISCOUS_ETAS).unwrap();
        let scale = u.iter().map(|x| x.amax()).fold(0.0, f64::max);
        let d = crate::bvp::sup_distance(&u, &visc.extrapolated) / scale;
        assert!(d < 10.0 * LIN_TOL, "{d:.3e}");
    }

    #[test]
    fn endstate_counts_balance() {
        let (r, base, _) = setup(SyntheticSpec::broadwell(), 0.05);
        let p = {
            let sf = r.slow_field().unwrap();
            let shock = hugoniot_connect(&r, &r.u0, &sf, 0.05).unwrap();
            solve_ns_profile(&r, &shock, &ProfileOptions::default()).unwrap()
        };
        let sm = crate::ns_profile::SlowModeData::along(&r, &p, Execution::Sequential).unwrap();
        for eta in [10.0, 1.0] {
            let s = endstate_spectrum(&r, &base, eta, (sm.mu_minus, sm.mu_plus)).unwrap();
            assert!(s.dims_match && s.balance, "{s:?}");
            assert!(s.minus.min_abs_re > 0.0 && s.plus.min_abs_re > 0.0);
        }
    }
}
