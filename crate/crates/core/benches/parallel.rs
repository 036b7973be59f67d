use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dffw::data::{self, BallSimConfig, Trajectory};
use dffw::exec::{self, ExecMode};
use dffw::experiment::{self, EvalConfig, Fitted, ModelSpec};
use dffw::model::ModelKind;
use dffw::training::TrainConfig;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn small_data() -> Vec<Trajectory> {
    let cfg = BallSimConfig { trajectories_per_class: 3, ..BallSimConfig::default() };
    data::generate_dataset(&cfg, ExecMode::Sequential).unwrap()
}

fn simulate(c: &mut Criterion) {
    let cfg = BallSimConfig::default();
    let mut group = c.benchmark_group("generate_dataset");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| data::generate_dataset(black_box(&cfg), mode).unwrap())
        });
    }
    group.finish();
}

fn evaluate(c: &mut Criterion) {
    let trajs = small_data();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let train: Vec<Trajectory> = trajs.iter().step_by(3).cloned().collect();
    let (fitted, _): (Fitted, _) = experiment::fit(&ModelSpec::standard(ModelKind::Dffw), &train, 50, 4, &cfg).unwrap();
    let eval = EvalConfig { horizons: vec![1, 10], rollout_stride: 25, ..EvalConfig::default() };
    let mut group = c.benchmark_group("evaluate_per_trajectory");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| {
                exec::map(mode, &trajs, |t| experiment::evaluate_fitted(&fitted, std::slice::from_ref(t), &eval).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, simulate, evaluate);
criterion_main!(benches);
