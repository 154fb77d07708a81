//! Standing viscous shocks of the reduced equations: endstates, the
//! profile boundary-value problem and the slow-mode reduction along it.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bvp::{dichotomy_rows, richardson, DerivativeStencil, End, ProfileGrid, SparseBuilder};
use crate::chapman_enskog::{SlowField, ViscousModel};
use crate::error::{Error, Result};
use crate::linalg::{complement, eigen, linear_fit};
use crate::parallel::{map_indices, Execution};
use crate::relaxation::left_kernel;
use crate::tolerances::{ODE_TOL, RH_TOL};

/// Endstates of a standing shock.
#[derive(Debug, Clone)]
pub struct ShockSpec {
    pub u_minus: DVector<f64>,
    pub u_plus: DVector<f64>,
    pub epsilon: f64,
    pub direction: DVector<f64>,
    /// Left slow eigenvector at the base state.
    pub phase: DVector<f64>,
    pub speed: f64,
    pub rh_residual: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
}

impl ShockSpec {
    pub fn midpoint(&self) -> DVector<f64> {
        (&self.u_minus + &self.u_plus) * 0.5
    }

    pub fn is_degenerate(&self) -> bool {
        self.epsilon == 0.0
    }
}

/// Standing shock of amplitude `ε` centred on the slow field through `u₀`.
///
/// Solves `h(m + d/2) = h(m − d/2)`, `|d| = ε` with `m = u₀ + τ r`.
pub fn hugoniot_connect<M: ViscousModel + ?Sized>(
    model: &M,
    u0: &DVector<f64>,
    slow: &SlowField,
    epsilon: f64,
) -> Result<ShockSpec> {
    let n = model.dim();
    let r = DVector::from_vec(slow.r.clone());
    let l = DVector::from_vec(slow.l.clone());
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Config(format!(
            "shock amplitude must be a nonnegative number, got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return Ok(ShockSpec {
            u_minus: u0.clone(),
            u_plus: u0.clone(),
            epsilon,
            direction: r,
            phase: l,
            speed: 0.0,
            rh_residual: 0.0,
            alpha_minus: slow.alpha,
            alpha_plus: slow.alpha,
        });
    }
    let mut tau = 0.0;
    let mut d = &r * epsilon;
    let mut converged = false;
    for _ in 0..60 {
        let m = u0 + &r * tau;
        let up = &m + &d * 0.5;
        let um = &m - &d * 0.5;
        let (hp, dhp, _) = model.evaluate(&up)?;
        let (hm, dhm, _) = model.evaluate(&um)?;
        let mut f = DVector::zeros(n + 1);
        f.rows_mut(0, n).copy_from(&(&hp - &hm));
        f[n] = (d.norm_squared() - epsilon * epsilon) / (2.0 * epsilon);
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, 1))
            .copy_from(&((&dhp - &dhm) * &r));
        jac.view_mut((0, 1), (n, n))
            .copy_from(&((&dhp + &dhm) * 0.5));
        for k in 0..n {
            jac[(n, 1 + k)] = d[k] / epsilon;
        }
        let step = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::Solver("Hugoniot Newton system is singular".into()))?;
        tau -= step[0];
        d -= step.rows(1, n);
        if step.amax() <= 1e-14 * epsilon.max(1e-300) + 1e-16 {
            converged = true;
            break;
        }
    }
    let m = u0 + &r * tau;
    let u_plus = &m + &d * 0.5;
    let u_minus = &m - &d * 0.5;
    let rh = (model.flux(&u_plus)? - model.flux(&u_minus)?).amax();
    if !converged && rh > RH_TOL {
        return Err(Error::Solver(format!(
            "Hugoniot Newton did not converge (residual {rh:.3e})"
        )));
    }
    let alpha_minus = slow_eigenvalue(&model.flux_jacobian(&u_minus)?, slow.alpha)?;
    let alpha_plus = slow_eigenvalue(&model.flux_jacobian(&u_plus)?, slow.alpha)?;
    if !(alpha_minus > 0.0 && alpha_plus < 0.0) {
        return Err(Error::Assumption(format!(
            "endstates are not a Lax shock: α(u₋) = {alpha_minus:.3e}, α(u₊) = {alpha_plus:.3e}"
        )));
    }
    Ok(ShockSpec {
        u_minus,
        u_plus,
        epsilon,
        direction: r,
        phase: l,
        speed: 0.0,
        rh_residual: rh,
        alpha_minus,
        alpha_plus,
    })
}

fn slow_eigenvalue(dh: &DMatrix<f64>, target: f64) -> Result<f64> {
    let (vals, _) = eigen(dh)?;
    Ok(vals
        .iter()
        .map(|z| z.re)
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
        .unwrap_or(f64::NAN))
}

/// Discretization controls for the profile solve.
#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    pub nodes: usize,
    /// Half-length in units of the slowest endstate decay length.
    pub length_factor: f64,
    pub grading: f64,
    pub richardson: bool,
    pub max_newton: usize,
    pub exec: Execution,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            nodes: 601,
            length_factor: 12.0,
            grading: 1.0,
            richardson: true,
            max_newton: 60,
            exec: Execution::default(),
        }
    }
}

/// Constant data of the box scheme for one shock.
#[derive(Debug, Clone)]
pub struct ProfileFrame {
    /// Left kernel of the viscosity (algebraic directions).
    pub ell0: DMatrix<f64>,
    /// Orthonormal complement of `ell0` (differential directions).
    pub w: DMatrix<f64>,
    pub bc_left: DMatrix<f64>,
    pub bc_right: DMatrix<f64>,
    pub h_minus: DVector<f64>,
    /// Slow endstate decay rates, `ε μ±`.
    pub rate_minus: f64,
    pub rate_plus: f64,
}

impl ProfileFrame {
    pub fn new<M: ViscousModel + ?Sized>(model: &M, spec: &ShockSpec) -> Result<Self> {
        let n = model.dim();
        let (_, _, bmid) = model.evaluate(&spec.midpoint())?;
        let ell0 = left_kernel(&bmid);
        let w = complement(&ell0)?;
        let d = w.ncols();
        let mut rows = Vec::new();
        let mut rates = Vec::new();
        for (u, end) in [(&spec.u_minus, End::Left), (&spec.u_plus, End::Right)] {
            let (_, dh, b) = model.evaluate(u)?;
            let z = if ell0.ncols() == 0 {
                DMatrix::identity(n, n)
            } else {
                complement(&(dh.transpose() * &ell0))?
            };
            if z.ncols() != d {
                return Err(Error::Assumption(
                    "algebraic constraint is degenerate at an endstate".into(),
                ));
            }
            let lhs = w.transpose() * &b * &z;
            let m = lhs.lu().solve(&(w.transpose() * &dh * &z)).ok_or_else(|| {
                Error::Assumption("viscosity is singular on the constraint tangent space".into())
            })?;
            let (r, vals) = dichotomy_rows(&m, end)?;
            let slow = vals
                .iter()
                .min_by(|a, b| a.norm().total_cmp(&b.norm()))
                .map(|z| z.re.abs())
                .unwrap_or(0.0);
            rates.push(slow);
            rows.push(r * z.transpose());
        }
        let bc_right = rows.pop().unwrap();
        let bc_left = rows.pop().unwrap();
        if bc_left.nrows() + bc_right.nrows() + 1 != d {
            return Err(Error::Assumption(format!(
                "endstate dimension count fails: {} + {} boundary rows for {} differential equations",
                bc_left.nrows(),
                bc_right.nrows(),
                d
            )));
        }
        Ok(Self {
            ell0,
            w,
            bc_left,
            bc_right,
            h_minus: model.flux(&spec.u_minus)?,
            rate_minus: rates[0],
            rate_plus: rates[1],
        })
    }

    pub fn slowest_rate(&self) -> f64 {
        self.rate_minus.min(self.rate_plus)
    }
}

struct NodeEval {
    h: DVector<f64>,
    dh: DMatrix<f64>,
    b: DMatrix<f64>,
    db: Vec<DMatrix<f64>>,
}

fn eval_node<M: ViscousModel + ?Sized>(
    model: &M,
    u: &DVector<f64>,
    with_db: bool,
) -> Result<NodeEval> {
    let (h, dh, b) = model.evaluate(u)?;
    let mut db = Vec::new();
    if with_db {
        let step = 1e-7 * u.amax().max(1.0);
        for k in 0..u.len() {
            let mut up = u.clone();
            up[k] += step;
            db.push((model.viscosity(&up)? - &b) / step);
        }
    }
    Ok(NodeEval { h, dh, b, db })
}

fn eval_all<M: ViscousModel + ?Sized>(
    model: &M,
    u: &[DVector<f64>],
    with_db: bool,
    exec: Execution,
) -> Result<Vec<NodeEval>> {
    map_indices(exec, u.len(), |i| eval_node(model, &u[i], with_db))
        .into_iter()
        .collect()
}

/// `Σ_k (∂b/∂u_k) Δ e_kᵀ`.
fn db_times(db: &[DMatrix<f64>], delta: &DVector<f64>) -> DMatrix<f64> {
    let n = delta.len();
    let mut out = DMatrix::zeros(n, db.len());
    for (k, m) in db.iter().enumerate() {
        out.set_column(k, &(m * delta));
    }
    out
}

struct BoxScheme<'a> {
    frame: &'a ProfileFrame,
    grid: &'a ProfileGrid,
    spec: &'a ShockSpec,
}

impl BoxScheme<'_> {
    fn residual(&self, u: &[DVector<f64>], ev: &[NodeEval]) -> DVector<f64> {
        let f = self.frame;
        let k = u.len();
        let n = u[0].len();
        let mut out = DVector::zeros(n * k);
        let mut row = 0;
        let mut push = |v: DVector<f64>| {
            out.rows_mut(row, v.len()).copy_from(&v);
            row += v.len();
        };
        push(&f.bc_left * (&u[0] - &self.spec.u_minus));
        for i in 0..k {
            if f.ell0.ncols() > 0 {
                push(f.ell0.transpose() * (&ev[i].h - &f.h_minus));
            }
            if i + 1 < k {
                let hi = self.grid.spacing(i);
                let bbar = (&ev[i].b + &ev[i + 1].b) * 0.5;
                let hbar = (&ev[i].h + &ev[i + 1].h) * 0.5;
                push(f.w.transpose() * (bbar * (&u[i + 1] - &u[i]) / hi - (hbar - &f.h_minus)));
            }
        }
        push(DVector::from_element(
            1,
            self.spec
                .phase
                .dot(&(&u[self.grid.center()] - self.spec.midpoint())),
        ));
        push(&f.bc_right * (&u[k - 1] - &self.spec.u_plus));
        out
    }

    fn jacobian(&self, u: &[DVector<f64>], ev: &[NodeEval]) -> SparseBuilder {
        let f = self.frame;
        let k = u.len();
        let n = u[0].len();
        let mut jac = SparseBuilder::new(n * k);
        let mut row = 0;
        jac.add_block(row, 0, &f.bc_left, 1.0);
        row += f.bc_left.nrows();
        let wt = f.w.transpose();
        for i in 0..k {
            if f.ell0.ncols() > 0 {
                jac.add_block(row, i * n, &(f.ell0.transpose() * &ev[i].dh), 1.0);
                row += f.ell0.ncols();
            }
            if i + 1 < k {
                let hi = self.grid.spacing(i);
                let delta = &u[i + 1] - &u[i];
                let bbar = (&ev[i].b + &ev[i + 1].b) * 0.5;
                let left = (db_times(&ev[i].db, &delta) * 0.5 - &bbar) / hi - &ev[i].dh * 0.5;
                let right =
                    (db_times(&ev[i + 1].db, &delta) * 0.5 + &bbar) / hi - &ev[i + 1].dh * 0.5;
                jac.add_block(row, i * n, &(&wt * left), 1.0);
                jac.add_block(row, (i + 1) * n, &(&wt * right), 1.0);
                row += f.w.ncols();
            }
        }
        let c = self.grid.center();
        for j in 0..n {
            jac.add(row, c * n + j, self.spec.phase[j]);
        }
        row += 1;
        jac.add_block(row, (k - 1) * n, &f.bc_right, 1.0);
        jac
    }
}

fn unflatten(x: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    (0..x.len() / n)
        .map(|i| x.rows(i * n, n).into_owned())
        .collect()
}

fn flatten(u: &[DVector<f64>]) -> DVector<f64> {
    let n = u[0].len();
    DVector::from_fn(n * u.len(), |i, _| u[i / n][i % n])
}

fn newton_profile<M: ViscousModel + ?Sized>(
    model: &M,
    scheme: &BoxScheme<'_>,
    guess: Vec<DVector<f64>>,
    opts: &ProfileOptions,
) -> Result<(Vec<DVector<f64>>, usize)> {
    let n = model.dim();
    let eps = scheme.spec.epsilon;
    let mut u = guess;
    let mut ev = eval_all(model, &u, true, opts.exec)?;
    let mut f = scheme.residual(&u, &ev);
    for it in 1..=opts.max_newton {
        let jac = scheme.jacobian(&u, &ev);
        let step = jac.solve(&f)?;
        let x = flatten(&u);
        let mut lambda = 1.0;
        loop {
            let trial = unflatten(&(&x - &step * lambda), n);
            let tev = eval_all(model, &trial, false, opts.exec);
            if let Ok(tev) = tev {
                let tf = scheme.residual(&trial, &tev);
                if tf.norm() < f.norm() || lambda < 1.0 / 64.0 || step.amax() <= ODE_TOL * eps {
                    u = trial;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1.0 / 1024.0 {
                return Err(Error::Solver(format!(
                    "profile Newton stalled at iterate {it} with residual {:.3e}",
                    f.amax()
                )));
            }
        }
        ev = eval_all(model, &u, true, opts.exec)?;
        f = scheme.residual(&u, &ev);
        if step.amax() * lambda <= ODE_TOL * eps && lambda == 1.0 {
            return Ok((u, it));
        }
    }
    Err(Error::Solver(format!(
        "profile Newton did not converge in {} iterates (last residual {:.3e})",
        opts.max_newton,
        f.amax()
    )))
}

/// Exponential fit `|∂ᵏ(u − u±)| ≈ C e^{−rate·|x|}`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub order: usize,
    pub rate: f64,
    pub constant: f64,
}

/// A computed viscous shock profile.
#[derive(Debug, Clone)]
pub struct NsProfile {
    pub spec: ShockSpec,
    pub grid: ProfileGrid,
    pub u: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub d2u: Vec<DVector<f64>>,
    /// Pointwise residual of `b(u)u' − (h(u) − h₋)`.
    pub residual: Vec<f64>,
    pub frame: ProfileFrame,
    pub newton_iterations: usize,
    pub endpoint_defect: f64,
    /// Change produced by Richardson extrapolation, an error indicator.
    pub refinement_change: f64,
    /// Fraction of nodes where `r·u'` has the sign of `r·(u₊ − u₋)`.
    pub monotone_fraction: f64,
    pub decay: Vec<DecayFit>,
}

/// Summary suitable for JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileReport {
    pub epsilon: f64,
    pub u_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
    pub rh_residual: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub half_length: f64,
    pub nodes: usize,
    pub newton_iterations: usize,
    pub max_residual: f64,
    pub endpoint_defect: f64,
    pub refinement_change: f64,
    pub monotone_fraction: f64,
    pub max_derivative: f64,
    pub decay: Vec<DecayFit>,
}

impl NsProfile {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn max_derivative(&self) -> f64 {
        self.du.iter().map(|d| d.amax()).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().copied().fold(0.0, f64::max)
    }

    pub fn report(&self) -> ProfileReport {
        ProfileReport {
            epsilon: self.spec.epsilon,
            u_minus: self.spec.u_minus.iter().copied().collect(),
            u_plus: self.spec.u_plus.iter().copied().collect(),
            rh_residual: self.spec.rh_residual,
            alpha_minus: self.spec.alpha_minus,
            alpha_plus: self.spec.alpha_plus,
            half_length: self.grid.half_length,
            nodes: self.len(),
            newton_iterations: self.newton_iterations,
            max_residual: self.max_residual(),
            endpoint_defect: self.endpoint_defect,
            refinement_change: self.refinement_change,
            monotone_fraction: self.monotone_fraction,
            max_derivative: self.max_derivative(),
            decay: self.decay.clone(),
        }
    }

    /// Profile value at `x` by cubic interpolation on the grid.
    pub fn interpolate(&self, x: f64) -> DVector<f64> {
        interpolate(&self.grid.x, &self.u, x)
    }
}

/// Lagrange interpolation on the four nodes around `x`; constant outside the grid.
pub fn interpolate(xs: &[f64], values: &[DVector<f64>], x: f64) -> DVector<f64> {
    let k = xs.len();
    if x <= xs[0] {
        return values[0].clone();
    }
    if x >= xs[k - 1] {
        return values[k - 1].clone();
    }
    let j = xs.partition_point(|v| *v <= x).saturating_sub(1);
    let s = j.saturating_sub(1).min(k.saturating_sub(4));
    let e = (s + 4).min(k);
    let mut out = DVector::zeros(values[0].len());
    for a in s..e {
        let mut w = 1.0;
        for b in s..e {
            if a != b {
                w *= (x - xs[b]) / (xs[a] - xs[b]);
            }
        }
        out.axpy(w, &values[a], 1.0);
    }
    out
}

/// Solve `b(u)u' = h(u) − h(u₋)` connecting the endstates of `spec`.
pub fn solve_ns_profile<M: ViscousModel + ?Sized>(
    model: &M,
    spec: &ShockSpec,
    opts: &ProfileOptions,
) -> Result<NsProfile> {
    if spec.is_degenerate() {
        return Err(Error::Config(
            "degenerate shock: ε = 0 has no profile".into(),
        ));
    }
    let frame = ProfileFrame::new(model, spec)?;
    let theta_eps = frame.slowest_rate();
    let grid = ProfileGrid::graded(opts.length_factor / theta_eps, opts.nodes, opts.grading)?;
    let mid = spec.midpoint();
    let jump = &spec.u_plus - &spec.u_minus;
    let guess: Vec<DVector<f64>> = grid
        .x
        .iter()
        .map(|x| &mid + &jump * (0.5 * (0.5 * theta_eps * x).tanh()))
        .collect();
    let scheme = BoxScheme {
        frame: &frame,
        grid: &grid,
        spec,
    };
    let (coarse, iterations) = newton_profile(model, &scheme, guess, opts)?;
    let (u, change) = if opts.richardson {
        let fine_grid = grid.refine();
        let guess = (0..fine_grid.len())
            .map(|i| {
                if i % 2 == 0 {
                    coarse[i / 2].clone()
                } else {
                    (&coarse[i / 2] + &coarse[i / 2 + 1]) * 0.5
                }
            })
            .collect();
        let fine_scheme = BoxScheme {
            frame: &frame,
            grid: &fine_grid,
            spec,
        };
        let (fine, _) = newton_profile(model, &fine_scheme, guess, opts)?;
        let u = richardson(&coarse, &fine);
        let change = crate::bvp::sup_distance(&u, &coarse);
        (u, change)
    } else {
        (coarse, 0.0)
    };
    finish_profile(
        model,
        spec.clone(),
        frame,
        grid,
        u,
        iterations,
        change,
        opts.exec,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_profile<M: ViscousModel + ?Sized>(
    model: &M,
    spec: ShockSpec,
    frame: ProfileFrame,
    grid: ProfileGrid,
    u: Vec<DVector<f64>>,
    newton_iterations: usize,
    refinement_change: f64,
    exec: Execution,
) -> Result<NsProfile> {
    let stencil = DerivativeStencil::new(&grid);
    let du = stencil.derivative(&u);
    let d2u = stencil.second_derivative(&u);
    let ev = eval_all(model, &u, false, exec)?;
    let residual: Vec<f64> = (0..u.len())
        .map(|i| (&ev[i].b * &du[i] - (&ev[i].h - &frame.h_minus)).amax())
        .collect();
    let k = u.len();
    let endpoint_defect = (&u[0] - &spec.u_minus)
        .amax()
        .max((&u[k - 1] - &spec.u_plus).amax());
    let jump = &spec.u_plus - &spec.u_minus;
    let sign = spec.direction.dot(&jump).signum();
    let monotone_fraction = du
        .iter()
        .filter(|d| spec.direction.dot(d) * sign >= 0.0)
        .count() as f64
        / k as f64;
    let decay = (0..3)
        .map(|order| {
            let values: Vec<f64> = (0..k)
                .map(|i| match order {
                    0 => {
                        let end = if grid.x[i] < 0.0 {
                            &spec.u_minus
                        } else {
                            &spec.u_plus
                        };
                        (&u[i] - end).amax()
                    }
                    1 => du[i].amax(),
                    _ => d2u[i].amax(),
                })
                .collect();
            fit_decay(&grid, &values, order)
        })
        .collect();
    Ok(NsProfile {
        spec,
        grid,
        u,
        du,
        d2u,
        residual,
        frame,
        newton_iterations,
        endpoint_defect,
        refinement_change,
        monotone_fraction,
        decay,
    })
}

/// Log-linear fit of `values` against `|x|` over `0.2L ≤ |x| ≤ 0.8L`.
pub fn fit_decay(grid: &ProfileGrid, values: &[f64], order: usize) -> DecayFit {
    let l = grid.half_length;
    let (xs, ys): (Vec<f64>, Vec<f64>) = grid
        .x
        .iter()
        .zip(values)
        .filter(|(x, v)| x.abs() >= 0.2 * l && x.abs() <= 0.8 * l && **v > 1e-14)
        .map(|(x, v)| (x.abs(), v.ln()))
        .unzip();
    if xs.len() < 3 {
        return DecayFit {
            order,
            rate: f64::NAN,
            constant: f64::NAN,
        };
    }
    let (a, b) = linear_fit(&xs, &ys);
    DecayFit {
        order,
        rate: -b,
        constant: a.exp(),
    }
}

/// The reduced slow equation `ŭ' = m(x) ŭ` along a profile.
#[derive(Debug, Clone)]
pub struct SlowModeData {
    pub epsilon: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    /// `μ(x)`, the tracked small eigenvalue of `m(x)` divided by `ε`.
    pub mu: Vec<f64>,
    /// Smallest `|Re λ|` over the other eigenvalues of `m(x)`, if any.
    pub other_min_re: Option<f64>,
    pub m: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlowModeReport {
    pub epsilon: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub other_min_re: Option<f64>,
    pub sign_change: bool,
}

impl SlowModeData {
    /// Reduced matrices along `u` with derivative `du` on `grid`.
    #[allow(clippy::too_many_arguments)]
    pub fn compute<M: ViscousModel + ?Sized>(
        model: &M,
        grid: &ProfileGrid,
        u: &[DVector<f64>],
        du: &[DVector<f64>],
        ell0: &DMatrix<f64>,
        w: &DMatrix<f64>,
        epsilon: f64,
        exec: Execution,
    ) -> Result<Self> {
        let k = u.len();
        let n = u[0].len();
        let na = ell0.ncols();
        let d = w.ncols();
        let mut phi = DMatrix::zeros(n, n);
        phi.view_mut((0, 0), (n, na)).copy_from(ell0);
        phi.view_mut((0, na), (n, d)).copy_from(w);
        let ev = eval_all(model, u, true, exec)?;
        let singular =
            || Error::Assumption("viscosity block b₂₂ is singular along the profile".into());
        // coupling V̄ = b₂₂⁻¹ b₂₁ per node, flattened for differentiation
        let mut vbar = Vec::with_capacity(k);
        let mut bbars = Vec::with_capacity(k);
        for e in &ev {
            let bb = phi.transpose() * &e.b * &phi;
            let b21 = bb.view((na, 0), (d, na)).into_owned();
            let b22 = bb.view((na, na), (d, d)).into_owned();
            let v = b22.clone().lu().solve(&b21).ok_or_else(singular)?;
            vbar.push(DVector::from_column_slice(v.as_slice()));
            bbars.push(b22);
        }
        let dvbar = DerivativeStencil::new(grid).derivative(&vbar);
        let mut ms = Vec::with_capacity(k);
        for i in 0..k {
            let a = &ev[i].dh - db_times(&ev[i].db, &du[i]);
            let mut t = DMatrix::identity(n, n);
            let vb = DMatrix::from_column_slice(d, na, vbar[i].as_slice());
            t.view_mut((na, 0), (d, na)).copy_from(&(-vb));
            let mut abar = phi.transpose() * a * &phi * t;
            let dvb = DMatrix::from_column_slice(d, na, dvbar[i].as_slice());
            let corr = &bbars[i] * dvb;
            let mut blk = abar.view_mut((na, 0), (d, na));
            blk += corr;
            let a22 = abar.view((na, na), (d, d)).into_owned();
            let acheck = if na == 0 {
                a22
            } else {
                let a11 = abar.view((0, 0), (na, na)).into_owned();
                let a12 = abar.view((0, na), (na, d)).into_owned();
                let a21 = abar.view((na, 0), (d, na)).into_owned();
                let x = a11.lu().solve(&a12).ok_or_else(|| {
                    Error::Assumption("algebraic block of the linearized flux is singular".into())
                })?;
                a22 - a21 * x
            };
            ms.push(bbars[i].clone().lu().solve(&acheck).ok_or_else(singular)?);
        }
        let mut mu = Vec::with_capacity(k);
        let mut other_min: Option<f64> = None;
        let mut prev: Option<f64> = None;
        for m in &ms {
            let (vals, _) = eigen(m)?;
            let idx = match prev {
                None => (0..vals.len())
                    .min_by(|a, b| vals[*a].norm().total_cmp(&vals[*b].norm()))
                    .unwrap(),
                Some(p) => (0..vals.len())
                    .min_by(|a, b| (vals[*a].re - p).abs().total_cmp(&(vals[*b].re - p).abs()))
                    .unwrap(),
            };
            let lam = vals[idx].re;
            prev = Some(lam);
            mu.push(lam / epsilon);
            for (j, z) in vals.iter().enumerate() {
                if j != idx {
                    let r = z.re.abs();
                    other_min = Some(other_min.map_or(r, |o| o.min(r)));
                }
            }
        }
        Ok(Self {
            epsilon,
            mu_minus: mu[0],
            mu_plus: mu[k - 1],
            mu,
            other_min_re: other_min,
            m: ms,
        })
    }

    /// Slow-mode data along a computed profile.
    pub fn along<M: ViscousModel + ?Sized>(
        model: &M,
        profile: &NsProfile,
        exec: Execution,
    ) -> Result<Self> {
        Self::compute(
            model,
            &profile.grid,
            &profile.u,
            &profile.du,
            &profile.frame.ell0,
            &profile.frame.w,
            profile.spec.epsilon,
            exec,
        )
    }

    pub fn sign_change(&self) -> bool {
        self.mu_minus > 0.0 && self.mu_plus < 0.0
    }

    /// `max ‖m(x) − m±‖` on each side, against `|x|`.
    pub fn deviation(&self, grid: &ProfileGrid) -> Vec<f64> {
        let k = self.m.len();
        (0..k)
            .map(|i| {
                let end = if grid.x[i] < 0.0 {
                    &self.m[0]
                } else {
                    &self.m[k - 1]
                };
                (&self.m[i] - end).amax()
            })
            .collect()
    }

    pub fn report(&self) -> SlowModeReport {
        SlowModeReport {
            epsilon: self.epsilon,
            mu_minus: self.mu_minus,
            mu_plus: self.mu_plus,
            other_min_re: self.other_min_re,
            sign_change: self.sign_change(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chapman_enskog::ReducedSystem;
    use crate::relaxation::{make_synthetic, EquilibriumMap, SyntheticSpec};
    use crate::tolerances::EQUILIBRIUM_TOL_SYNTHETIC;

    fn reduced(spec: SyntheticSpec) -> ReducedSystem {
        let s = make_synthetic(&spec).unwrap();
        let eq = EquilibriumMap::new(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        ReducedSystem::reduce(s, eq).unwrap()
    }

    /// Implicit solution of `(1.15 − 0.2w − w²) w' = (w² − a²)/2` with `w(0) = 0`.
    fn burgers_oracle(a: f64, x: f64) -> f64 {
        let c = 1.15 - a * a;
        let pos = |w: f64| {
            -2.0 * w + (c / a) * ((a - w) / (a + w)).ln() - 0.2 * (a * a - w * w).ln()
                + 0.2 * (a * a).ln()
        };
        // pos decreases from +∞ to −∞ on (−a, a)
        let (mut lo, mut hi) = (-a, a);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if pos(mid) > x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn burgers_endstates_are_the_flux_chord() {
        let r = reduced(SyntheticSpec::burgers_closure());
        let sf = r.slow_field().unwrap();
        let s = hugoniot_connect(&r, &r.u0, &sf, 0.1).unwrap();
        assert!((s.u_minus[0] - 0.55).abs() < 1e-12);
        assert!((s.u_plus[0] - 0.45).abs() < 1e-12);
        assert!(s.rh_residual < RH_TOL);
        let z = hugoniot_connect(&r, &r.u0, &sf, 0.0).unwrap();
        assert_eq!(z.u_minus, z.u_plus);
        assert!(solve_ns_profile(&r, &z, &ProfileOptions::default()).is_err());
    }

    #[test]
    fn burgers_profile_matches_implicit_solution() {
        let r = reduced(SyntheticSpec::burgers_closure());
        let sf = r.slow_field().unwrap();
        let eps = 0.05;
        let s = hugoniot_connect(&r, &r.u0, &sf, eps).unwrap();
        let p = solve_ns_profile(&r, &s, &ProfileOptions::default()).unwrap();
        let err = p
            .grid
            .x
            .iter()
            .zip(&p.u)
            .map(|(x, u)| (u[0] - 0.5 - burgers_oracle(eps / 2.0, *x)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "sup error {err:.3e}");
        assert!(p.max_residual() < 1e-8);
        assert!(p.monotone_fraction == 1.0);
        let sm = SlowModeData::along(&r, &p, Execution::Sequential).unwrap();
        assert!(sm.sign_change());
        assert!((sm.mu_minus - 0.5 / (1.15 - 0.1 * eps - eps * eps / 4.0)).abs() < 1e-3);
    }

    #[test]
    fn broadwell_profile_has_lax_structure() {
        let r = reduced(SyntheticSpec::broadwell());
        let sf = r.slow_field().unwrap();
        let s = hugoniot_connect(&r, &r.u0, &sf, 0.05).unwrap();
        assert!(s.rh_residual < RH_TOL);
        assert!(((&s.u_plus - &s.u_minus).norm() - 0.05).abs() < 1e-10);
        let p = solve_ns_profile(&r, &s, &ProfileOptions::default()).unwrap();
        assert!(p.endpoint_defect < 1e-5 * 0.05, "{}", p.endpoint_defect);
        assert!(p.max_residual() < 1e-8, "{}", p.max_residual());
        let sm = SlowModeData::along(&r, &p, Execution::Sequential).unwrap();
        assert!(sm.sign_change(), "{:?}", sm.report());
    }

    #[test]
    fn constant_state_has_constant_slow_matrix() {
        let r = reduced(SyntheticSpec::broadwell());
        let grid = ProfileGrid::graded(10.0, 11, 0.0).unwrap();
        let mut u0 = r.u0.clone();
        u0[0] += 0.01;
        let u = vec![u0; 11];
        let du = vec![DVector::zeros(2); 11];
        let b = r.b_star(&r.u0).unwrap();
        let ell0 = left_kernel(&b);
        let w = complement(&ell0).unwrap();
        let sm = SlowModeData::compute(&r, &grid, &u, &du, &ell0, &w, 0.01, Execution::Sequential)
            .unwrap();
        assert!(sm.deviation(&grid).iter().all(|d| *d < 1e-12));
        assert!(sm.mu.iter().all(|m| m.signum() == sm.mu[0].signum()));
    }
}
