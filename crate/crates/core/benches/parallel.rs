//! One-thread pool against the default pool on the parallel hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use surrovv_core::conformal::{coverage_experiment, CalibrationSample};
use surrovv_core::machines::sm2_field;
use surrovv_core::region::OperatingBox;
use surrovv_core::seed::{rng, uniform_in};
use surrovv_core::smib::{find_equilibrium, SmibConfig, SmibPower};
use surrovv_core::surrogate::{grad_params, LossWeights, MlpSurrogate, TrainingSet};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let n = default.current_num_threads();
    vec![
        ("1-thread".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (format!("{n}-threads"), default),
    ]
}

fn loss_gradient(c: &mut Criterion) {
    let mut m = SmibConfig::benchmark_machine();
    m.dp_m = 0.0;
    let cfg = SmibConfig::new(m.clone(), 0.2).unwrap();
    let field = sm2_field(m, SmibPower::reference(&cfg)).unwrap();
    let d0 = find_equilibrium(&cfg).unwrap().0;
    let region = OperatingBox::new(vec![d0 - 0.3, -0.2, 0.55], vec![d0 + 0.3, 0.2, 0.85]).unwrap();
    let set = TrainingSet::generate(&field, &region, (2000, 200, 200), 0.2, 1).unwrap();
    let net = MlpSurrogate::for_task(&region, 2, 0.2, 1).unwrap();
    let w = LossWeights::default();
    let mut g = c.benchmark_group("loss_gradient");
    g.sample_size(20);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| pool.install(|| grad_params(&net, &set, &field, &w).unwrap())));
    }
    g.finish();
}

fn conformal_repeats(c: &mut Criterion) {
    let mut r = rng(4);
    let data: Vec<CalibrationSample> = (0..1000)
        .map(|_| {
            let v = uniform_in(&mut r, &[-1.0, -1.0], &[1.0, 1.0]);
            CalibrationSample { features: vec![v[0]], target: v[0] + 0.1 * v[1], prediction: v[0], sigma: 0.1 }
        })
        .collect();
    let mut g = c.benchmark_group("coverage_experiment");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| coverage_experiment(&data, &[0.02, 0.1, 0.5], 0.05, 0.1, 200, 7).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, loss_gradient, conformal_repeats);
criterion_main!(benches);
