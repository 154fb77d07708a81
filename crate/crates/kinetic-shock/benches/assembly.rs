use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kinetic_shock::collision::CollisionOperator;
use kinetic_shock::galerkin::CollisionTensor;
use kinetic_shock::parallel::Execution;
use kinetic_shock::velocity_space::{build_grid, FluidState, ReferenceMaxwellian};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn tensor(c: &mut Criterion) {
    let mut group = c.benchmark_group("collision_tensor");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, 4), &exec, |b, exec| {
            b.iter(|| CollisionTensor::compute(4, *exec))
        });
    }
    group.finish();
}

fn linearization(c: &mut Criterion) {
    let grid = build_grid(6, 4.5, 2).unwrap();
    let u0 = FluidState::from_primitive(1.0, [0.0; 3], 0.75).unwrap();
    let reference = ReferenceMaxwellian::new(u0, &grid).unwrap();
    let mut group = c.benchmark_group("nodal_linearization");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut op = CollisionOperator::new(grid.clone(), reference.clone());
        op.execution = exec;
        let base = reference.values.clone();
        group.bench_function(BenchmarkId::new(name, grid.len()), |b| {
            b.iter(|| op.linearize(&base))
        });
    }
    group.finish();
}

criterion_group!(benches, tensor, linearization);
criterion_main!(benches);
