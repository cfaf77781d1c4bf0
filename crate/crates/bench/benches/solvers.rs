use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use semilin_bench::{dbsde_fixture, fp_fixture, problem};
use semilin_core::autodiff::Tape;
use semilin_core::dbsde::{rollout, terminal_loss};
use semilin_core::fixedpoint::{fixed_point_loss, sample_outer, FpScheme, FpSettings};
use semilin_core::networks::Arch;
use semilin_core::sde::{InnerSampleBank, PathBatch};

fn dbsde_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("dbsde_step");
    group.sample_size(20);
    for letter in ["f", "j"] {
        let arch: Arch = letter.parse().unwrap();
        let (p, mut net, scaler) = dbsde_fixture(arch, 10, 20);
        let paths = PathBatch::simulate(p.as_ref(), 20, 64, 3, "bench", 0).unwrap();
        group.bench_function(BenchmarkId::from_parameter(arch), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let vars = net.bind(&mut tape);
                let r = rollout(p.as_ref(), &mut net, &scaler, &mut tape, &vars, &paths, true, false).unwrap();
                let loss = terminal_loss(&mut tape, &r).unwrap();
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn fixed_point_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("fixed_point_loss");
    group.sample_size(10);
    let settings = FpSettings {
        n_inner: 2000,
        ..FpSettings::default()
    };
    for scheme in [FpScheme::A, FpScheme::C] {
        let (p, mut net, scaler) = fp_fixture(scheme, 10);
        let dt = settings.dt(p.maturity());
        let bank = InnerSampleBank::build(p.as_ref(), settings.sampler().unwrap(), dt, settings.n_inner, 4).unwrap();
        let points = sample_outer(p.as_ref(), 16, dt, 5, "bench", 0).unwrap();
        group.bench_function(BenchmarkId::from_parameter(scheme), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let vars = net.bind(&mut tape);
                let loss =
                    fixed_point_loss(p.as_ref(), &mut net, &scaler, scheme, &mut tape, &vars, &points, &bank).unwrap();
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let p = problem(100);
    c.bench_function("euler_paths_d100_n20_b256", |b| {
        b.iter(|| PathBatch::simulate(p.as_ref(), 20, 256, 7, "bench", 0).unwrap())
    });
}

criterion_group!(benches, dbsde_step, fixed_point_step, simulation);
criterion_main!(benches);
