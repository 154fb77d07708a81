use std::sync::OnceLock;

use kinetic_shock::chapman_enskog::ReducedSystem;
use kinetic_shock::collision::{CollisionGeometry, CollisionOperator};
use kinetic_shock::config::{RunConfig, DEFAULT_SYNTHETIC};
use kinetic_shock::fixed_point::{grid_function, translation_normalize};
use kinetic_shock::parallel::{fold_indices, Execution};
use kinetic_shock::relaxation::{make_synthetic, EquilibriumMap, SyntheticSpec};
use kinetic_shock::tolerances::EQUILIBRIUM_TOL_SYNTHETIC;
use kinetic_shock::velocity_space::{build_grid, moment_vector, FluidState, ReferenceMaxwellian};
use nalgebra::DVector;
use proptest::prelude::*;

fn collision() -> &'static CollisionOperator {
    static OP: OnceLock<CollisionOperator> = OnceLock::new();
    OP.get_or_init(|| {
        let g = build_grid(6, 4.5, 2).unwrap();
        let u0 = FluidState::from_primitive(1.0, [0.0; 3], 0.75).unwrap();
        let r = ReferenceMaxwellian::new(u0, &g).unwrap();
        CollisionOperator::new(g, r)
    })
}

fn broadwell() -> &'static ReducedSystem {
    static R: OnceLock<ReducedSystem> = OnceLock::new();
    R.get_or_init(|| {
        let s = make_synthetic(&SyntheticSpec::broadwell()).unwrap();
        let eq = EquilibriumMap::new(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        ReducedSystem::reduce(s, eq).unwrap()
    })
}

fn vec3(r: f64) -> impl Strategy<Value = [f64; 3]> {
    [-r..r, -r..r, -r..r]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn elastic_collisions_conserve(xi in vec3(5.0), xs in vec3(5.0), o in vec3(1.0)) {
        let n = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
        prop_assume!(n > 1e-3);
        let omega = [o[0] / n, o[1] / n, o[2] / n];
        prop_assert!(CollisionGeometry::new(xi, xs, omega).conservation_defect() < 1e-12);
    }

    #[test]
    fn collision_moments_vanish(seed in any::<u64>()) {
        let op = collision();
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let f: Vec<f64> = op.reference.values.iter().map(|m| m * (0.2 + 1.6 * next())).collect();
        let g: Vec<f64> = op.reference.values.iter().map(|m| m * (2.0 * next() - 1.0)).collect();
        let scale = op.reference.inner(&op.grid, &f, &f, 0.5) + op.reference.inner(&op.grid, &g, &g, 0.5);
        for h in [op.q(&f, &f), op.q(&f, &g)] {
            for c in moment_vector(&h, &op.grid) {
                prop_assert!(c.abs() <= 1e-10 * scale, "{c}");
            }
        }
        prop_assert_eq!(op.q(&f, &g), op.q(&g, &f));
    }

    #[test]
    fn weighted_norm_is_homogeneous(a in -5.0f64..5.0, s in 0.5f64..0.95) {
        let op = collision();
        let f: Vec<f64> = op.reference.values.iter().enumerate().map(|(i, m)| m * ((i % 7) as f64 - 3.0)).collect();
        let af: Vec<f64> = f.iter().map(|x| a * x).collect();
        let n1 = op.reference.weighted_norm(&op.grid, &f, s, 0.3).unwrap();
        let n2 = op.reference.weighted_norm(&op.grid, &af, s, 0.3).unwrap();
        prop_assert!((n2 - a.abs() * n1).abs() <= 1e-12 * n1.max(1.0));
    }

    #[test]
    fn synthetic_equilibria_are_zeros_of_q(du in prop::collection::vec(-0.2f64..0.2, 2)) {
        let r = broadwell();
        let u = &r.u0 + DVector::from_vec(du);
        let v = r.v_star(&u).unwrap();
        prop_assert!(r.system.q(&u, &v).norm() <= EQUILIBRIUM_TOL_SYNTHETIC);
    }

    #[test]
    fn translation_alignment_recovers_shift(shift in -3.0f64..3.0, rate in 0.2f64..1.0) {
        let xs: Vec<f64> = (0..401).map(|i| -20.0 + 0.1 * i as f64).collect();
        let base: Vec<DVector<f64>> = xs.iter().map(|x| DVector::from_element(1, (rate * x).tanh())).collect();
        let moved: Vec<DVector<f64>> = xs.iter().map(|x| DVector::from_element(1, (rate * (x + shift)).tanh())).collect();
        let inner: Vec<usize> = (0..xs.len()).filter(|i| xs[*i].abs() <= 12.0).collect();
        let xi: Vec<f64> = inner.iter().map(|i| xs[*i]).collect();
        let mi: Vec<DVector<f64>> = inner.iter().map(|i| moved[*i].clone()).collect();
        let (s, d) = translation_normalize(&xi, &mi, grid_function(&xs, &base), 5.0);
        prop_assert!((s - shift).abs() < 1e-3, "{s} vs {shift}");
        prop_assert!(d < 1e-3);
    }

    #[test]
    fn parallel_fold_is_bit_identical(n in 1usize..5000, chunk in 1usize..300) {
        let term = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let run = |exec| fold_indices(exec, n, chunk, || 0.0f64, |a, i| *a += term(i), |a, b| a + b);
        prop_assert_eq!(run(Execution::Sequential).to_bits(), run(Execution::Parallel).to_bits());
    }

    #[test]
    fn descending_positive_amplitudes_are_accepted(mut eps in prop::collection::vec(1e-3f64..0.5, 1..5)) {
        eps.sort_by(|a, b| b.total_cmp(a));
        eps.dedup();
        let list = eps.iter().map(|e| format!("{e:?}")).collect::<Vec<_>>().join(", ");
        let text = DEFAULT_SYNTHETIC.replace("[0.1, 0.05, 0.025]", &format!("[{list}]"));
        prop_assert!(RunConfig::parse(&text).is_ok());
        let with_zero = DEFAULT_SYNTHETIC.replace("[0.1, 0.05, 0.025]", &format!("[{list}, 0.0]"));
        prop_assert_eq!(RunConfig::parse(&with_zero).unwrap_err().exit_code(), 2);
    }
}
