use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use trapcoh::fock::{recommended_basis_size, reduced_temperature, run_with_overlap};
use trapcoh::{
    overlap_matrix, simulate_ensemble, InitialMotion, NoiseConfig, SequenceKind, TrapModel,
};
use trapcoh_bench::{busy_noise, one_dimensional_trap, schedule};

fn bloch(c: &mut Criterion) {
    let trap = TrapModel::default();
    let mut group = c.benchmark_group("bloch_ensemble_1000_atoms");
    for (label, noise) in [("quiet", NoiseConfig::quiet()), ("busy", busy_noise())] {
        for n_pi in [1usize, 10] {
            let s = schedule(SequenceKind::MultiPi, n_pi, 50e-3);
            group.bench_with_input(BenchmarkId::new(label, n_pi), &s, |b, s| {
                b.iter(|| simulate_ensemble(&trap, black_box(s), &noise, 1000, 7).unwrap())
            });
        }
    }
    group.finish();
}

fn overlap(c: &mut Criterion) {
    let mut group = c.benchmark_group("overlap_matrix");
    for size in [50usize, 200] {
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, &size| {
            b.iter(|| overlap_matrix(black_box(0.05), size).unwrap())
        });
    }
    group.finish();
}

fn fock(c: &mut Criterion) {
    let mut group = c.benchmark_group("fock_thermal");
    group.sample_size(10);
    for (label, trap) in [
        ("1d", one_dimensional_trap()),
        ("2d", TrapModel::default()),
    ] {
        let cold = reduced_temperature(&trap, 10.0).unwrap();
        let o = overlap_matrix(cold.differential_factor, recommended_basis_size(&cold)).unwrap();
        let s = schedule(SequenceKind::MultiPi, 10, 14e-3);
        group.bench_function(label, |b| {
            b.iter(|| run_with_overlap(&cold, black_box(&s), &o, InitialMotion::Thermal).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bloch, overlap, fock);
criterion_main!(benches);
