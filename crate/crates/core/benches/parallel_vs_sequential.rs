use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dccf::data::SplitResult;
use dccf::eval::{evaluate, EvalProtocol};
use dccf::exposure::{ExposureConfig, ExposureModel, ExposureVariant};
use dccf::model::{DccfConfig, DccfModel, TrainConfig};
use dccf::synthgen::{generate_world, sample_dataset, SynthConfig, SynthDataset};
use dccf::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn small_world() -> SynthConfig {
    SynthConfig {
        n_users: 200,
        n_items: 300,
        ..SynthConfig::sd1(11)
    }
}

fn dataset() -> SynthDataset {
    let world = generate_world(&small_world()).unwrap();
    sample_dataset(&world, Execution::Sequential).unwrap()
}

fn model(data: &SynthDataset) -> DccfModel {
    let cfg = ExposureConfig {
        variant: ExposureVariant::Uniform,
        ..ExposureConfig::default()
    };
    let (exposure, _) = ExposureModel::fit(&data.table, &data.split.train, &cfg, 0).unwrap();
    DccfModel::new(DccfConfig::default(), &data.features, &exposure, 0).unwrap()
}

fn bench_sampling(c: &mut Criterion) {
    let world = generate_world(&small_world()).unwrap();
    let mut group = c.benchmark_group("sample_dataset");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_dataset(&world, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_evaluation(c: &mut Criterion) {
    let data = dataset();
    let m = model(&data);
    let protocol = EvalProtocol::default();
    let mut group = c.benchmark_group("evaluate_dccf");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&m, &data.table, &data.split.test, &protocol, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_training_epoch(c: &mut Criterion) {
    let data = dataset();
    let positives = SplitResult::by_user(&data.split.train, data.table.n_users());
    let tcfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train_epoch_dccf");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || model(&data),
                |mut m| m.train(&data.split.train, &positives, &tcfg, exec).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sampling, bench_evaluation, bench_training_epoch);
criterion_main!(benches);
