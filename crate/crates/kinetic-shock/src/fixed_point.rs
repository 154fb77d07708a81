//! Fixed-point correction of the Navier-Stokes profile to a kinetic
//! shock profile, and the diagnostics checked against its scalings.

use nalgebra::DVector;
use serde::Serialize;

use crate::bvp::{richardson, sup_distance, DerivativeStencil, ProfileGrid};
use crate::chapman_enskog::ReducedSystem;
use crate::error::{Error, Result};
use crate::linalg::{complement, fitted_order};
use crate::linear_solver::{
    extrapolate_to_zero, LinearizedProfileOperator, ProfileBase, WeightedNorms, VISCOUS_ETAS,
};
use crate::ns_profile::{fit_decay, interpolate, NsProfile};
use crate::parallel::Execution;
use crate::relaxation::RelaxationSystem;
use crate::tolerances::FP_TOL;

/// Linear solver used inside the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearPath {
    /// One phase-conditioned solve per iterate.
    Bordered,
    /// Solves at small viscosities extrapolated to zero viscosity.
    Viscous,
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Weight exponent δ of the `H²_{ε,δ}` norm.
    pub delta: f64,
    /// Combine solutions on nested grids to fourth order.
    pub richardson: bool,
    pub path: LinearPath,
    pub exec: Execution,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: FP_TOL,
            delta: 0.1,
            richardson: true,
            path: LinearPath::Bordered,
            exec: Execution::default(),
        }
    }
}

/// `δ = ½ min(δ₀, θ/2)` with `θ` the slow decay rate over `ε`.
pub fn default_delta(profile: &NsProfile, delta0: f64) -> f64 {
    let theta = profile.frame.slowest_rate() / profile.spec.epsilon;
    0.5 * delta0.min(0.5 * theta)
}

/// Iteration record of one fixed-point solve.
#[derive(Debug, Clone, Serialize)]
pub struct CorrectionState {
    /// `‖U_{n+1} − U_n‖_{H²_{ε,δ}}`.
    pub history: Vec<f64>,
    /// Ratios of successive entries of `history`.
    pub factors: Vec<f64>,
    /// `ε^{3/2}`.
    pub ball_radius: f64,
    /// `‖𝒯(0)‖_{H²_{ε,δ}}`.
    pub first_iterate_norm: f64,
    /// `‖U‖_{H²_{ε,δ}}` at convergence.
    pub norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CorrectionState {
    /// Largest contraction factor after the second iterate.
    pub fn max_factor_after_two(&self) -> f64 {
        self.factors.iter().skip(1).copied().fold(0.0, f64::max)
    }
}

fn bilinear_micro(system: &RelaxationSystem, u: &DVector<f64>) -> DVector<f64> {
    let full = system.collision.bilinear_apply(u, u);
    full.rows(system.n_macro, system.n_micro()).into_owned()
}

/// Iterate `U ↦ 𝓛†(f₀, −ℛ_v + MU + Q(U, U))` from `initial` (zero by default).
pub fn iterate(
    system: &RelaxationSystem,
    base: &ProfileBase,
    phase: &DVector<f64>,
    opts: &FixedPointOptions,
    initial: Option<&[DVector<f64>]>,
) -> Result<(Vec<DVector<f64>>, CorrectionState)> {
    let op = LinearizedProfileOperator::new(system, base, phase.clone(), 0.0)?;
    let viscous = match opts.path {
        LinearPath::Bordered => Vec::new(),
        LinearPath::Viscous => VISCOUS_ETAS
            .iter()
            .map(|eta| LinearizedProfileOperator::new(system, base, phase.clone(), *eta))
            .collect::<Result<Vec<_>>>()?,
    };
    let solve = |b: &DVector<f64>| -> Result<Vec<DVector<f64>>> {
        if viscous.is_empty() {
            return op.solve_rhs(b);
        }
        let sols = viscous
            .iter()
            .map(|o| o.solve_rhs(b))
            .collect::<Result<Vec<_>>>()?;
        let idx: Vec<usize> = (0..sols.len()).collect();
        Ok(extrapolate_to_zero(&VISCOUS_ETAS, &sols, &idx))
    };
    let eps = base.epsilon;
    let norms = WeightedNorms::new(&base.grid, eps, opts.delta);
    let rv = base.interval_residual_v(system);
    let k = base.len();
    let nn = system.dim();
    let mut u: Vec<DVector<f64>> = match initial {
        Some(u0) => u0.to_vec(),
        None => vec![DVector::zeros(nn); k],
    };
    let mut state = CorrectionState {
        history: Vec::new(),
        factors: Vec::new(),
        ball_radius: eps.powf(1.5),
        first_iterate_norm: f64::NAN,
        norm: f64::NAN,
        iterations: 0,
        converged: false,
    };
    let mut rising = 0;
    for it in 1..=opts.max_iter {
        let nodal: Vec<DVector<f64>> = (0..k)
            .map(|i| &base.m_term[i] * &u[i] + bilinear_micro(system, &u[i]))
            .collect();
        let g: Vec<DVector<f64>> = (0..k - 1)
            .map(|i| -&rv[i] + (&nodal[i] + &nodal[i + 1]) * 0.5)
            .collect();
        let next = solve(&op.rhs_intervals(&base.first_row_defect, &g))?;
        let diff: Vec<DVector<f64>> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let d = norms.h(&diff, 2);
        if it == 1 && initial.is_none() {
            state.first_iterate_norm = norms.h(&next, 2);
        }
        if let Some(prev) = state.history.last() {
            let f = d / prev;
            state.factors.push(f);
            rising = if f >= 1.0 { rising + 1 } else { 0 };
        }
        state.history.push(d);
        u = next;
        state.iterations = it;
        if rising >= 3 {
            return Err(Error::Solver(format!(
                "fixed-point iteration diverges: history {:?}",
                state.history
            )));
        }
        if d <= opts.tol {
            state.converged = true;
            break;
        }
    }
    if !state.converged {
        return Err(Error::Solver(format!(
            "fixed-point iteration did not reach {:.1e} in {} iterates: history {:?}",
            opts.tol, opts.max_iter, state.history
        )));
    }
    state.norm = norms.h(&u, 2);
    Ok((u, state))
}

/// Kinetic residual `|A f̄' − (0, q(f̄))|` at each node with five-point derivatives.
pub fn kinetic_residual(
    system: &RelaxationSystem,
    grid: &ProfileGrid,
    profile: &[DVector<f64>],
) -> Vec<f64> {
    let d = DerivativeStencil::new(grid).derivative(profile);
    let n = system.n_macro;
    profile
        .iter()
        .zip(&d)
        .map(|(f, df)| {
            let mut r = &system.a * df;
            let (u, v) = system.split(f);
            let q = system.q(&u, &v);
            let mut tail = r.rows_mut(n, system.n_micro());
            tail -= q;
            r.amax()
        })
        .collect()
}

/// A converged kinetic profile `f̄ = Ū_NS + U`.
#[derive(Debug, Clone)]
pub struct KineticProfile {
    pub epsilon: f64,
    pub grid: ProfileGrid,
    pub base: ProfileBase,
    pub profile: Vec<DVector<f64>>,
    pub correction: Vec<DVector<f64>>,
    pub state: CorrectionState,
    pub residual: Vec<f64>,
    /// Change produced by the nested-grid extrapolation.
    pub refinement_change: f64,
}

impl KineticProfile {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().copied().fold(0.0, f64::max)
    }

    pub fn macro_part(&self, n: usize) -> Vec<DVector<f64>> {
        self.profile
            .iter()
            .map(|f| f.rows(0, n).into_owned())
            .collect()
    }
}

/// Run the fixed point on the profile grid (and its refinement) and
/// assemble the kinetic profile.
pub fn solve_kinetic_profile(
    reduced: &ReducedSystem,
    ns: &NsProfile,
    phase: &DVector<f64>,
    opts: &FixedPointOptions,
) -> Result<KineticProfile> {
    let system = &reduced.system;
    let base = ProfileBase::new(reduced, ns, opts.exec)?;
    let (u, state) = iterate(system, &base, phase, opts, None)?;
    let coarse: Vec<DVector<f64>> = base.state().iter().zip(&u).map(|(a, b)| a + b).collect();
    let (profile, change) = if opts.richardson {
        let fine_base = ProfileBase::on_grid(reduced, ns, base.grid.refine(), opts.exec)?;
        let (uf, _) = iterate(system, &fine_base, phase, opts, None)?;
        let fine: Vec<DVector<f64>> = fine_base
            .state()
            .iter()
            .zip(&uf)
            .map(|(a, b)| a + b)
            .collect();
        let p = richardson(&coarse, &fine);
        let c = sup_distance(&p, &coarse);
        (p, c)
    } else {
        (coarse, 0.0)
    };
    let correction: Vec<DVector<f64>> = profile
        .iter()
        .zip(base.state())
        .map(|(a, b)| a - b)
        .collect();
    let residual = kinetic_residual(system, &base.grid, &profile);
    Ok(KineticProfile {
        epsilon: ns.spec.epsilon,
        grid: base.grid.clone(),
        base,
        profile,
        correction,
        state,
        residual,
        refinement_change: change,
    })
}

/// Shift `s` minimizing `max_i |a_i − b(x_i + s)|` over `|s| ≤ max_shift`.
pub fn translation_normalize<F>(xs: &[f64], a: &[DVector<f64>], b: F, max_shift: f64) -> (f64, f64)
where
    F: Fn(f64) -> DVector<f64>,
{
    let dist = |s: f64| {
        xs.iter()
            .zip(a)
            .map(|(x, v)| (v - b(x + s)).amax())
            .fold(0.0, f64::max)
    };
    let samples = 200;
    let step = 2.0 * max_shift / samples as f64;
    let (mut best, mut best_d) = (0.0, dist(0.0));
    for j in 0..=samples {
        let s = -max_shift + step * j as f64;
        let d = dist(s);
        if d < best_d {
            best = s;
            best_d = d;
        }
    }
    let (mut lo, mut hi) = (best - step, best + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (dist(c), dist(d));
    for _ in 0..80 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = dist(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = dist(d);
        }
    }
    let s = 0.5 * (lo + hi);
    let ds = dist(s);
    if ds < best_d {
        (s, ds)
    } else {
        (best, best_d)
    }
}

/// Grid profile shifted by `s`, as a function of `x`.
pub fn grid_function<'a>(
    xs: &'a [f64],
    values: &'a [DVector<f64>],
) -> impl Fn(f64) -> DVector<f64> + 'a {
    move |x| interpolate(xs, values, x)
}

/// Direct integration of the kinetic profile equation for systems with a
/// single microscopic component. Conservation confines the profile to the
/// line `f = f_p + w z` with `z` spanning `ker[A₁₁ A₁₂]`, on which it is a
/// scalar ODE in `w`.
#[derive(Debug, Clone)]
pub struct ShootingProfile {
    pub x0: f64,
    pub dx: f64,
    pub w: Vec<f64>,
    pub slope: Vec<f64>,
    particular: DVector<f64>,
    direction: DVector<f64>,
}

impl ShootingProfile {
    /// RK4 from the midpoint of the endstates over `[−L, L]` with step `dx`.
    pub fn integrate(
        system: &RelaxationSystem,
        f_minus: &DVector<f64>,
        f_plus: &DVector<f64>,
        half_length: f64,
        dx: f64,
    ) -> Result<Self> {
        if system.n_micro() != 1 {
            return Err(Error::Config(
                "shooting oracle needs a single microscopic component".into(),
            ));
        }
        let n = system.n_macro;
        let top = system.a.rows(0, n).into_owned();
        let kernel = complement(&top.transpose())?;
        if kernel.ncols() != 1 {
            return Err(Error::Assumption(
                "conserved fluxes are rank deficient".into(),
            ));
        }
        let direction = kernel.column(0).into_owned();
        let h_minus = &top * f_minus;
        let particular = top
            .clone()
            .svd(true, true)
            .solve(&h_minus, 1e-12)
            .map_err(|e| Error::Solver(e.to_string()))?;
        let s = system.a.rows(n, 1).dot(&direction.transpose());
        if s.abs() < 1e-12 {
            return Err(Error::Assumption(
                "reduced transport coefficient vanishes".into(),
            ));
        }
        let state = |w: f64| &particular + &direction * w;
        let rhs = |w: f64| {
            let (u, v) = system.split(&state(w));
            system.q(&u, &v)[0] / s
        };
        let w_minus = direction.dot(&(f_minus - &particular));
        let w_plus = direction.dot(&(f_plus - &particular));
        let steps = (half_length / dx).ceil() as usize;
        let dx = half_length / steps as f64;
        let total = 2 * steps + 1;
        let mut w = vec![0.0; total];
        w[steps] = 0.5 * (w_minus + w_plus);
        let rk4 = |y: f64, h: f64| {
            let k1 = rhs(y);
            let k2 = rhs(y + 0.5 * h * k1);
            let k3 = rhs(y + 0.5 * h * k2);
            let k4 = rhs(y + h * k3);
            y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        };
        for i in steps..total - 1 {
            w[i + 1] = rk4(w[i], dx);
        }
        for i in (1..=steps).rev() {
            w[i - 1] = rk4(w[i], -dx);
        }
        if w.iter().any(|y| !y.is_finite()) {
            return Err(Error::Solver("shooting integration blew up".into()));
        }
        let slope = w.iter().map(|y| rhs(*y)).collect();
        Ok(Self {
            x0: -half_length,
            dx,
            w,
            slope,
            particular,
            direction,
        })
    }

    /// Full state at `x` by cubic Hermite interpolation.
    pub fn eval(&self, x: f64) -> DVector<f64> {
        let last = self.w.len() - 1;
        let t = ((x - self.x0) / self.dx).clamp(0.0, last as f64);
        let i = (t.floor() as usize).min(last - 1);
        let s = t - i as f64;
        let (h00, h10, h01, h11) = (
            2.0 * s.powi(3) - 3.0 * s * s + 1.0,
            s.powi(3) - 2.0 * s * s + s,
            -2.0 * s.powi(3) + 3.0 * s * s,
            s.powi(3) - s * s,
        );
        let w = h00 * self.w[i]
            + h10 * self.dx * self.slope[i]
            + h01 * self.w[i + 1]
            + h11 * self.dx * self.slope[i + 1];
        &self.particular + &self.direction * w
    }
}

/// Per-amplitude measurements feeding the scaling fits.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileDiagnostics {
    pub epsilon: f64,
    pub iterations: usize,
    pub max_factor_after_two: f64,
    pub first_iterate_norm: f64,
    pub corrector_norm: f64,
    pub ball_radius: f64,
    pub max_residual: f64,
    /// `max_x |ū − ū_NS|`.
    pub macro_deviation: f64,
    /// `max_x |f̄ − f±|` and `max_x |f̄'|`.
    pub attachment: [f64; 2],
    /// Fitted rate of `|f̄ − f±| ≈ C e^{−rate·|x|}`.
    pub decay_rate: f64,
    /// `max_x ‖M(x)‖`.
    pub m_norm: f64,
    pub residual_v: f64,
    pub residual_v_uncorrected: f64,
    pub refinement_change: f64,
}

pub fn diagnostics(system: &RelaxationSystem, kp: &KineticProfile) -> ProfileDiagnostics {
    let n = system.n_macro;
    let base = &kp.base;
    let k = kp.profile.len();
    let macro_deviation = (0..k)
        .map(|i| (kp.profile[i].rows(0, n) - &base.u[i]).amax())
        .fold(0.0, f64::max);
    let end_minus = system.join(&base.u_minus, &base.v_minus);
    let end_plus = system.join(&base.u_plus, &base.v_plus);
    let dist: Vec<f64> = (0..k)
        .map(|i| {
            let e = if kp.grid.x[i] < 0.0 {
                &end_minus
            } else {
                &end_plus
            };
            (&kp.profile[i] - e).amax()
        })
        .collect();
    let d1 = DerivativeStencil::new(&kp.grid).derivative(&kp.profile);
    ProfileDiagnostics {
        epsilon: kp.epsilon,
        iterations: kp.state.iterations,
        max_factor_after_two: kp.state.max_factor_after_two(),
        first_iterate_norm: kp.state.first_iterate_norm,
        corrector_norm: kp.state.norm,
        ball_radius: kp.state.ball_radius,
        max_residual: kp.max_residual(),
        macro_deviation,
        attachment: [
            dist.iter().copied().fold(0.0, f64::max),
            d1.iter().map(|d| d.amax()).fold(0.0, f64::max),
        ],
        decay_rate: fit_decay(&kp.grid, &dist, 0).rate,
        m_norm: base.m_term.iter().map(|m| m.norm()).fold(0.0, f64::max),
        residual_v: base.max_residual_v(),
        residual_v_uncorrected: base.max_residual_v_uncorrected(),
        refinement_change: kp.refinement_change,
    }
}

/// Fitted orders over an amplitude sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub epsilons: Vec<f64>,
    pub macro_order: f64,
    pub attachment_orders: [f64; 2],
    pub corrector_order: f64,
    pub decay_rate_order: f64,
    pub residual_v_order: f64,
    pub residual_v_uncorrected_order: f64,
    pub m_order: f64,
    pub first_iterate_order: f64,
    /// `‖U(ε)‖ / ‖U(ε/2)‖` for consecutive halvings.
    pub corrector_ratios: Vec<f64>,
    pub max_residual: f64,
    pub checks: Vec<(String, bool)>,
    pub per_epsilon: Vec<ProfileDiagnostics>,
}

impl TheoremReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

/// Fit the scaling orders; `residual_tol` bounds the kinetic residual.
/// Order checks are only made with at least two amplitudes.
pub fn verify_theorem(per_eps: &[ProfileDiagnostics], residual_tol: f64) -> TheoremReport {
    let eps: Vec<f64> = per_eps.iter().map(|d| d.epsilon).collect();
    let order = |f: &dyn Fn(&ProfileDiagnostics) -> f64| -> f64 {
        if per_eps.len() < 2 {
            return f64::NAN;
        }
        fitted_order(&eps, &per_eps.iter().map(f).collect::<Vec<_>>())
    };
    let macro_order = order(&|d| d.macro_deviation);
    let attachment_orders = [order(&|d| d.attachment[0]), order(&|d| d.attachment[1])];
    let corrector_order = order(&|d| d.corrector_norm);
    let decay_rate_order = order(&|d| d.decay_rate);
    let corrector_ratios = per_eps
        .windows(2)
        .map(|w| w[0].corrector_norm / w[1].corrector_norm)
        .collect::<Vec<_>>();
    let max_residual = per_eps.iter().map(|d| d.max_residual).fold(0.0, f64::max);
    let residual_v_order = order(&|d| d.residual_v);
    let residual_v_uncorrected_order = order(&|d| d.residual_v_uncorrected);
    let m_order = order(&|d| d.m_norm);
    let first_iterate_order = order(&|d| d.first_iterate_norm);
    let mut checks = vec![("kinetic_residual".to_string(), max_residual <= residual_tol)];
    if per_eps.len() >= 2 {
        checks.extend([
            ("macro_order".to_string(), macro_order >= 1.7),
            (
                "attachment_order_0".to_string(),
                attachment_orders[0] >= 0.7,
            ),
            (
                "attachment_order_1".to_string(),
                attachment_orders[1] >= 1.7,
            ),
            (
                "decay_rate_linear".to_string(),
                (decay_rate_order - 1.0).abs() <= 0.15,
            ),
            (
                "corrector_ratio".to_string(),
                corrector_ratios.iter().all(|r| (3.0..=5.0).contains(r)),
            ),
        ]);
    }
    TheoremReport {
        epsilons: eps,
        macro_order,
        attachment_orders,
        corrector_order,
        decay_rate_order,
        residual_v_order,
        residual_v_uncorrected_order,
        m_order,
        first_iterate_order,
        corrector_ratios,
        max_residual,
        checks,
        per_epsilon: per_eps.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_solver::choose_phase_vector;
    use crate::ns_profile::{hugoniot_connect, solve_ns_profile, ProfileOptions};
    use crate::relaxation::{make_synthetic, EquilibriumMap, SyntheticSpec};
    use crate::tolerances::EQUILIBRIUM_TOL_SYNTHETIC;

    fn reduced(spec: SyntheticSpec) -> ReducedSystem {
        let s = make_synthetic(&spec).unwrap();
        let eq = EquilibriumMap::new(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        ReducedSystem::reduce(s, eq).unwrap()
    }

    fn kinetic(r: &ReducedSystem, eps: f64) -> (NsProfile, KineticProfile, DVector<f64>) {
        let sf = r.slow_field().unwrap();
        let shock = hugoniot_connect(r, &r.u0, &sf, eps).unwrap();
        let ns = solve_ns_profile(r, &shock, &ProfileOptions::default()).unwrap();
        let l = choose_phase_vector(&sf);
        let opts = FixedPointOptions {
            delta: default_delta(&ns, 1.0),
            ..Default::default()
        };
        let kp = solve_kinetic_profile(r, &ns, &l, &opts).unwrap();
        (ns, kp, l)
    }

    #[test]
    fn broadwell_converges_and_matches_shooting() {
        let r = reduced(SyntheticSpec::broadwell());
        let (_, kp, _) = kinetic(&r, 0.05);
        assert!(kp.state.iterations <= 10, "{:?}", kp.state);
        assert!(kp.state.max_factor_after_two() < 1.0);
        assert!(kp.max_residual() < 1e-7, "{}", kp.max_residual());
        let b = &kp.base;
        let f_minus = r.system.join(&b.u_minus, &b.v_minus);
        let f_plus = r.system.join(&b.u_plus, &b.v_plus);
        let shoot = ShootingProfile::integrate(
            &r.system,
            &f_minus,
            &f_plus,
            kp.grid.half_length + 50.0,
            0.01,
        )
        .unwrap();
        let (_, d) = translation_normalize(&kp.grid.x, &kp.profile, |x| shoot.eval(x), 20.0);
        assert!(d < 1e-8, "{d:.3e}");
    }

    #[test]
    fn translation_recovers_grid_shift() {
        let g = ProfileGrid::graded(20.0, 201, 0.0).unwrap();
        let vals: Vec<DVector<f64>> =
            g.x.iter()
                .map(|x| DVector::from_element(1, (0.3 * x).tanh()))
                .collect();
        let h = g.spacing(0);
        let shifted: Vec<DVector<f64>> =
            g.x.iter()
                .map(|x| DVector::from_element(1, (0.3 * (x + 3.0 * h)).tanh()))
                .collect();
        let (s, d) = translation_normalize(&g.x, &shifted, grid_function(&g.x, &vals), 5.0);
        assert!((s - 3.0 * h).abs() < 1e-6, "{s}");
        assert!(d < 1e-5);
    }

    #[test]
    fn bilinear_remainder_is_exact() {
        let r = reduced(SyntheticSpec::broadwell());
        let s = &r.system;
        let ubar = s.join(&r.u0, &r.v_star(&r.u0).unwrap());
        let du = DVector::from_vec(vec![0.01, -0.02, 0.03]);
        let (u1, v1) = s.split(&(&ubar + &du));
        let (u0, v0) = s.split(&ubar);
        let lin = {
            let (qu, qv) = s.dq(&u0, &v0);
            let (a, b) = s.split(&du);
            qu * a + qv * b
        };
        let rem = s.q(&u1, &v1) - s.q(&u0, &v0) - lin;
        assert!((rem - bilinear_micro(s, &du)).amax() < 1e-15);
    }

    #[test]
    fn viscous_path_reaches_the_same_point() {
        let r = reduced(SyntheticSpec::broadwell());
        let (ns, kp, l) = kinetic(&r, 0.05);
        let opts = FixedPointOptions {
            delta: default_delta(&ns, 1.0),
            richardson: false,
            ..Default::default()
        };
        let (u_a, _) = iterate(&r.system, &kp.base, &l, &opts, None).unwrap();
        let visc = FixedPointOptions {
            path: LinearPath::Viscous,
            ..opts
        };
        let (u_b, _) = iterate(&r.system, &kp.base, &l, &visc, None).unwrap();
        assert!(
            sup_distance(&u_a, &u_b) < 10.0 * FP_TOL,
            "{:.3e}",
            sup_distance(&u_a, &u_b)
        );
    }

    #[test]
    fn different_starts_reach_the_same_point() {
        let r = reduced(SyntheticSpec::broadwell());
        let (ns, kp, l) = kinetic(&r, 0.05);
        let opts = FixedPointOptions {
            delta: default_delta(&ns, 1.0),
            richardson: false,
            ..Default::default()
        };
        let (u_a, _) = iterate(&r.system, &kp.base, &l, &opts, None).unwrap();
        let start: Vec<DVector<f64>> = u_a.iter().map(|u| u * 0.5).collect();
        let (u_b, _) = iterate(&r.system, &kp.base, &l, &opts, Some(&start)).unwrap();
        assert!(sup_distance(&u_a, &u_b) < 10.0 * FP_TOL);
    }
}
