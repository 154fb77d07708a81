//! End-to-end runs shared by the command line and the acceptance tests.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvp::sup_distance;
use crate::chapman_enskog::ReducedSystem;
use crate::error::{Error, Result};
use crate::fixed_point::{
    default_delta, diagnostics, solve_kinetic_profile, translation_normalize, verify_theorem,
    FixedPointOptions, KineticProfile, ProfileDiagnostics, TheoremReport,
};
use crate::galerkin::{galerkin_system, sonic_reference, CollisionTensor, GalerkinSystem};
use crate::linalg::fitted_order;
use crate::linear_solver::{
    choose_phase_vector, endstate_spectrum, estimate_suite, random_source, solve_viscous,
    EndstateSpectrum, EstimateReport, LinearizedProfileOperator, VISCOUS_ETAS,
};
use crate::ns_profile::{
    hugoniot_connect, interpolate, solve_ns_profile, NsProfile, ProfileOptions, SlowModeData,
};
use crate::parallel::{map_indices, Execution};
use crate::relaxation::{make_synthetic, EquilibriumMap, SyntheticSpec};
use crate::tolerances::{EQUILIBRIUM_TOL_KINETIC, EQUILIBRIUM_TOL_SYNTHETIC, LIN_TOL};

/// Environment variable naming the operator cache directory.
pub const CACHE_ENV: &str = "KINETIC_SHOCK_CACHE";

/// Which relaxation system to solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    Synthetic {
        spec: SyntheticSpec,
    },
    Boltzmann {
        degree: usize,
        rho: f64,
        temperature: f64,
    },
}

/// A reduced system ready for profile construction.
#[derive(Debug, Clone)]
pub struct Model {
    pub reduced: ReducedSystem,
    pub galerkin: Option<GalerkinSystem>,
}

impl Model {
    pub fn label(&self) -> &str {
        &self.reduced.system.label
    }
}

pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    degree: usize,
    pairs: Vec<(usize, usize)>,
    /// One row-major square matrix per test function.
    t: Vec<Vec<f64>>,
}

fn tensor_path(dir: &Path, degree: usize) -> PathBuf {
    dir.join(format!("collision-tensor-d{degree}.json"))
}

/// Collision tensor of the given degree, read from or written to `cache`.
pub fn load_tensor(
    degree: usize,
    cache: Option<&Path>,
    exec: Execution,
) -> Result<CollisionTensor> {
    if let Some(dir) = cache {
        let path = tensor_path(dir, degree);
        if path.exists() {
            let stored: StoredTensor =
                serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(&path)?))?;
            let n = stored.pairs.len();
            if stored.degree != degree
                || stored.t.len() != n
                || stored.t.iter().any(|m| m.len() != n * n)
            {
                return Err(Error::Config(format!(
                    "corrupt operator cache {}",
                    path.display()
                )));
            }
            let t = stored
                .t
                .iter()
                .map(|m| DMatrix::from_row_slice(n, n, m))
                .collect();
            return Ok(CollisionTensor {
                degree,
                pairs: stored.pairs,
                t,
            });
        }
    }
    let tensor = CollisionTensor::compute(degree, exec);
    if let Some(dir) = cache {
        std::fs::create_dir_all(dir)?;
        let stored = StoredTensor {
            degree,
            pairs: tensor.pairs.clone(),
            t: tensor
                .t
                .iter()
                .map(|m| m.transpose().iter().copied().collect())
                .collect(),
        };
        let tmp = dir.join(format!(".collision-tensor-d{degree}.json.tmp"));
        serde_json::to_writer(
            std::io::BufWriter::new(std::fs::File::create(&tmp)?),
            &stored,
        )?;
        std::fs::rename(tmp, tensor_path(dir, degree))?;
    }
    Ok(tensor)
}

fn reduce(system: crate::relaxation::RelaxationSystem, tol: f64) -> Result<ReducedSystem> {
    let eq = EquilibriumMap::new(&system, tol)?;
    ReducedSystem::reduce(system, eq)
}

pub fn synthetic_model(spec: &SyntheticSpec) -> Result<Model> {
    Ok(Model {
        reduced: reduce(make_synthetic(spec)?, EQUILIBRIUM_TOL_SYNTHETIC)?,
        galerkin: None,
    })
}

/// Galerkin model at `degree` from a tensor of at least that degree.
pub fn galerkin_model(
    tensor: &CollisionTensor,
    rho: f64,
    temperature: f64,
    degree: usize,
) -> Result<Model> {
    let reference = sonic_reference(rho, 1.5 * temperature)?;
    let g = galerkin_system(tensor, &reference, degree)?;
    Ok(Model {
        reduced: reduce(g.system.clone(), EQUILIBRIUM_TOL_KINETIC)?,
        galerkin: Some(g),
    })
}

pub fn build_model(backend: &Backend, cache: Option<&Path>, exec: Execution) -> Result<Model> {
    match backend {
        Backend::Synthetic { spec } => synthetic_model(spec),
        Backend::Boltzmann {
            degree,
            rho,
            temperature,
        } => {
            let tensor = load_tensor(*degree, cache, exec)?;
            galerkin_model(&tensor, *rho, *temperature, *degree)
        }
    }
}

/// Numerical settings of one profile solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveSettings {
    pub profile: ProfileOptions,
    pub fixed_point: FixedPointOptions,
    /// `δ₀` in `δ = ½ min(δ₀, θ/2)`.
    pub delta0: f64,
    /// Random sources per linear estimate fit.
    pub samples: usize,
    pub seed: u64,
    /// Velocity weight exponent of the localization check.
    pub weight_s: f64,
    /// Small viscosity at which the spectral strip and slow rate are checked.
    pub spectrum_eta: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            profile: ProfileOptions::default(),
            fixed_point: FixedPointOptions::default(),
            delta0: 1.0,
            samples: 6,
            seed: 0,
            weight_s: 0.5,
            spectrum_eta: 1e-3,
        }
    }
}

impl SolveSettings {
    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.profile.exec = exec;
        self.fixed_point.exec = exec;
        self
    }
}

/// Navier-Stokes profile of amplitude `epsilon` centred on the base state.
pub fn ns_profile(model: &Model, epsilon: f64, opts: &ProfileOptions) -> Result<NsProfile> {
    let r = &model.reduced;
    let slow = r.slow_field()?;
    let spec = hugoniot_connect(r, &r.u0, &slow, epsilon)?;
    solve_ns_profile(r, &spec, opts)
}

/// Results at one amplitude.
#[derive(Debug, Clone)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub delta: f64,
    pub ns: NsProfile,
    pub phase: DVector<f64>,
    pub kinetic: KineticProfile,
    pub diagnostics: ProfileDiagnostics,
}

pub fn run_epsilon(model: &Model, epsilon: f64, settings: &SolveSettings) -> Result<EpsilonRun> {
    let ns = ns_profile(model, epsilon, &settings.profile)?;
    let phase = choose_phase_vector(&model.reduced.slow_field()?);
    let delta = default_delta(&ns, settings.delta0);
    let opts = FixedPointOptions {
        delta,
        ..settings.fixed_point
    };
    let kinetic = solve_kinetic_profile(&model.reduced, &ns, &phase, &opts)?;
    let diagnostics = diagnostics(&model.reduced.system, &kinetic);
    Ok(EpsilonRun {
        epsilon,
        delta,
        ns,
        phase,
        kinetic,
        diagnostics,
    })
}

/// Linear-solver measurements at one amplitude.
#[derive(Debug, Clone, Serialize)]
pub struct LinearChecks {
    pub epsilon: f64,
    pub estimates: EstimateReport,
    /// Relative gap between the bordered and extrapolated viscous solutions.
    pub viscous_gap: f64,
    /// Spectrum at the small viscosity `spectrum_eta`.
    pub spectrum: EndstateSpectrum,
    /// Spectra at the counting viscosities.
    pub counting: Vec<EndstateSpectrum>,
    /// `θ₁ = ½ min(|μ₋|, |μ₊|)`.
    pub theta1: f64,
    pub strip_ok: bool,
    /// Stable and unstable counts exact at every counting viscosity.
    pub dims_ok: bool,
}

/// Viscosities at which stable and unstable dimensions are counted.
pub const COUNTING_ETAS: [f64; 2] = [10.0, 1.0];

pub fn linear_checks(
    model: &Model,
    run: &EpsilonRun,
    settings: &SolveSettings,
) -> Result<LinearChecks> {
    let r = &model.reduced;
    let base = &run.kinetic.base;
    let op = LinearizedProfileOperator::new(&r.system, base, run.phase.clone(), 0.0)?;
    // same scaled sources at every amplitude so the fitted constants compare like with like
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let estimates = estimate_suite(&op, base, r, run.delta, settings.samples, &mut rng)?;
    let f = random_source(&op.grid, op.n, run.epsilon, &mut rng);
    let g = random_source(&op.grid, op.m, run.epsilon, &mut rng);
    let u = op.solve(&f, &g)?;
    let visc = solve_viscous(&r.system, base, &run.phase, &f, &g, &VISCOUS_ETAS)?;
    let scale = u
        .iter()
        .map(|x| x.amax())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let viscous_gap = sup_distance(&u, &visc.extrapolated) / scale;
    let slow = SlowModeData::along(r, &run.ns, settings.profile.exec)?;
    let mu = (slow.mu_minus, slow.mu_plus);
    let spectrum = endstate_spectrum(r, base, settings.spectrum_eta, mu)?;
    let counting = COUNTING_ETAS
        .iter()
        .chain(std::iter::once(&settings.spectrum_eta))
        .map(|eta| endstate_spectrum(r, base, *eta, mu))
        .collect::<Result<Vec<_>>>()?;
    let dims_ok = counting.iter().all(|s| s.dims_match && s.balance);
    let theta1 = 0.5 * slow.mu_minus.abs().min(slow.mu_plus.abs());
    let strip_ok = spectrum.minus.min_abs_re.min(spectrum.plus.min_abs_re) >= theta1 * run.epsilon;
    Ok(LinearChecks {
        epsilon: run.epsilon,
        estimates,
        viscous_gap,
        spectrum,
        counting,
        theta1,
        strip_ok,
        dims_ok,
    })
}

/// Scaling fits of the Navier-Stokes profiles and the reduced residual.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionOrders {
    pub epsilons: Vec<f64>,
    pub rh_residual: f64,
    pub decay_rates: Vec<f64>,
    /// `rate(ε)/rate(ε/2)` per halving.
    pub decay_ratios: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// `max|ū'(ε)| / max|ū'(ε/2)|` per halving.
    pub amplitude_ratios: Vec<f64>,
    pub residual_v_order: f64,
    pub residual_v_uncorrected_order: f64,
}

pub fn reduction_orders(runs: &[EpsilonRun]) -> ReductionOrders {
    let eps: Vec<f64> = runs.iter().map(|r| r.epsilon).collect();
    let decay_rates: Vec<f64> = runs
        .iter()
        .map(|r| r.ns.decay.first().map_or(f64::NAN, |d| d.rate))
        .collect();
    let amplitudes: Vec<f64> = runs.iter().map(|r| r.ns.max_derivative()).collect();
    let ratios = |v: &[f64]| v.windows(2).map(|w| w[0] / w[1]).collect::<Vec<_>>();
    let order = |v: Vec<f64>| {
        if eps.len() < 2 {
            f64::NAN
        } else {
            fitted_order(&eps, &v)
        }
    };
    ReductionOrders {
        rh_residual: runs
            .iter()
            .map(|r| r.ns.spec.rh_residual)
            .fold(0.0, f64::max),
        decay_ratios: ratios(&decay_rates),
        amplitude_ratios: ratios(&amplitudes),
        residual_v_order: order(runs.iter().map(|r| r.diagnostics.residual_v).collect()),
        residual_v_uncorrected_order: order(
            runs.iter()
                .map(|r| r.diagnostics.residual_v_uncorrected)
                .collect(),
        ),
        epsilons: eps,
        decay_rates,
        amplitudes,
    }
}

/// Everything measured over an amplitude sweep.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub runs: Vec<EpsilonRun>,
    pub linear: Vec<LinearChecks>,
    pub reduction: ReductionOrders,
    pub theorem: TheoremReport,
}

/// Residual tolerance of the kinetic profile equation for `model`.
pub fn residual_tolerance(model: &Model) -> f64 {
    match &model.galerkin {
        None => 1e-7,
        Some(g) => (10.0 * velocity_quadrature_error(g)).max(1e-7),
    }
}

/// Collision defect `max|q|` of the projected Maxwellian at a state 5%
/// away from the reference: the error of the finite velocity representation.
pub fn velocity_quadrature_error(g: &GalerkinSystem) -> f64 {
    let r = g.reference;
    let state = crate::velocity_space::FluidState::from_primitive(
        r.rho * 1.05,
        [r.velocity()[0] * 0.97, 0.0, 0.0],
        r.internal_energy() * 1.05,
    )
    .expect("perturbed reference is admissible");
    let c = g.project_maxwellian(&state, 3 * g.degree + 4);
    let (u, v) = g.system.split(&c);
    g.system.q(&u, &v).amax()
}

pub fn sweep(
    model: &Model,
    epsilons: &[f64],
    settings: &SolveSettings,
    exec: Execution,
) -> Result<Sweep> {
    let runs: Vec<Result<EpsilonRun>> = map_indices(exec, epsilons.len(), |i| {
        run_epsilon(model, epsilons[i], settings)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let linear = map_indices(exec, runs.len(), |i| {
        linear_checks(model, &runs[i], settings)
    });
    let linear = linear.into_iter().collect::<Result<Vec<_>>>()?;
    let per: Vec<ProfileDiagnostics> = runs.iter().map(|r| r.diagnostics.clone()).collect();
    let theorem = verify_theorem(&per, residual_tolerance(model));
    Ok(Sweep {
        reduction: reduction_orders(&runs),
        runs,
        linear,
        theorem,
    })
}

/// Largest relative deviation of the subspace estimate constant from its
/// median over a sweep.
pub fn estimate_spread(linear: &[LinearChecks]) -> f64 {
    let mut c: Vec<f64> = linear.iter().map(|l| l.estimates.c_h2_sup).collect();
    c.sort_by(f64::total_cmp);
    let k = c.len();
    if k == 0 {
        return f64::NAN;
    }
    let med = if k % 2 == 1 {
        c[k / 2]
    } else {
        0.5 * (c[k / 2 - 1] + c[k / 2])
    };
    c.iter().map(|x| (x / med - 1.0).abs()).fold(0.0, f64::max)
}

/// Velocity localization of `f̄ − f_{ū_NS}` at the node of largest deviation.
pub fn localization_exponent(model: &Model, run: &EpsilonRun) -> Result<f64> {
    let g = model
        .galerkin
        .as_ref()
        .ok_or_else(|| Error::Config("velocity localization needs the Boltzmann backend".into()))?;
    let base = &run.kinetic.base;
    let sys = &model.reduced.system;
    let (i, _) = run
        .kinetic
        .profile
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let eq = sys.join(&base.u[i], &base.v_star[i]);
            (i, (f - eq).norm())
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::InvalidState("empty profile".into()))?;
    let eq = sys.join(&base.u[i], &base.v_star[i]);
    Ok(g.localization_exponent(&(&run.kinetic.profile[i] - eq)))
}

/// Profiles of successive Galerkin degrees and their distances.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub epsilon: f64,
    pub degrees: Vec<usize>,
    pub ranks: Vec<usize>,
    /// `sup|f̄_r − f̄_{r+1}|` after translation alignment, in velocity-basis coordinates.
    pub differences: Vec<f64>,
    /// Same for the macroscopic part only.
    pub macro_differences: Vec<f64>,
    pub monotone: bool,
}

/// Run the full pipeline at each degree and compare neighbours.
pub fn converge_in_r(
    tensor: &CollisionTensor,
    rho: f64,
    temperature: f64,
    degrees: &[usize],
    epsilon: f64,
    settings: &SolveSettings,
    exec: Execution,
) -> Result<ConvergenceTable> {
    let runs = map_indices(exec, degrees.len(), |i| -> Result<(Model, EpsilonRun)> {
        let m = galerkin_model(tensor, rho, temperature, degrees[i])?;
        let r = run_epsilon(&m, epsilon, settings)?;
        Ok((m, r))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let full = tensor.pairs.len();
    // profiles in pair coordinates, padded to the largest basis
    let lifted: Vec<Vec<DVector<f64>>> = runs
        .iter()
        .map(|(m, r)| {
            let g = m.galerkin.as_ref().expect("galerkin model");
            r.kinetic
                .profile
                .iter()
                .map(|f| {
                    let pc = &g.rotation * f;
                    DVector::from_fn(full, |k, _| if k < pc.len() { pc[k] } else { 0.0 })
                })
                .collect()
        })
        .collect();
    let mut differences = Vec::new();
    let mut macro_differences = Vec::new();
    for j in 0..runs.len().saturating_sub(1) {
        let (xa, xb) = (&runs[j].1.kinetic.grid.x, &runs[j + 1].1.kinetic.grid.x);
        let (b, fb) = (xb.clone(), lifted[j + 1].clone());
        let window = 0.5
            * xa.last()
                .copied()
                .unwrap_or(0.0)
                .min(b.last().copied().unwrap_or(0.0));
        let inner: Vec<usize> = (0..xa.len()).filter(|i| xa[*i].abs() <= window).collect();
        let xs: Vec<f64> = inner.iter().map(|i| xa[*i]).collect();
        let fa: Vec<DVector<f64>> = inner.iter().map(|i| lifted[j][*i].clone()).collect();
        let (shift, d) = translation_normalize(&xs, &fa, |x| interpolate(&b, &fb, x), 0.2 * window);
        differences.push(d);
        let macro_d = xs
            .iter()
            .zip(
                &runs[j]
                    .1
                    .kinetic
                    .profile
                    .iter()
                    .skip(inner[0])
                    .collect::<Vec<_>>(),
            )
            .map(|(x, f)| {
                (f.rows(0, 3)
                    - interpolate(&b, &runs[j + 1].1.kinetic.profile, x + shift).rows(0, 3))
                .amax()
            })
            .fold(0.0, f64::max);
        macro_differences.push(macro_d);
    }
    let monotone = differences.windows(2).all(|w| w[1] < w[0]);
    Ok(ConvergenceTable {
        epsilon,
        degrees: degrees.to_vec(),
        ranks: runs.iter().map(|(m, _)| m.reduced.system.dim()).collect(),
        differences,
        macro_differences,
        monotone,
    })
}

/// Relative change between solves at `LIN_TOL`-level agreement thresholds.
pub fn within_linear_tolerance(gap: f64) -> bool {
    gap <= 10.0 * LIN_TOL
}
