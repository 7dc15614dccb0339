use dccf::data::{InteractionTable, ItemFeatureTable, SplitResult};
use dccf::eval::{evaluate, EvalProtocol, FnScorer, RandomScorer};
use dccf::experiment::{run, train_model, train_model_with, RunConfig, Trained};
use dccf::exposure::{ExposureModel, ExposureVariant};
use dccf::model::{DccfConfig, DccfModel, ModelKind, TrainConfig};
use dccf::synthgen::{generate_world, sample_dataset, SynthConfig, SynthDataset};
use dccf::Execution;
use ndarray::array;

fn small_world(seed: u64) -> SynthDataset {
    let cfg = SynthConfig {
        n_users: 120,
        n_items: 150,
        ..SynthConfig::sd1(seed)
    };
    sample_dataset(&generate_world(&cfg).unwrap(), Execution::Parallel).unwrap()
}

fn quick(model: ModelKind, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::for_model(model);
    cfg.train.epochs = 3;
    cfg.train.seed = seed;
    cfg.eval.seed = seed;
    cfg.dccf.n_sampled_items = 5;
    cfg.exposure.mf.epochs = 3;
    cfg
}

#[test]
fn tiny_instance_loss_decreases_every_epoch() {
    // Users 0 and 1 share a taste for items 0/1, user 2 for items 2/3; the
    // features separate the two groups.
    let features = array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]];
    let pairs: Vec<(usize, usize)> = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3)]
        .into_iter()
        .cycle()
        .take(6 * 40)
        .collect();
    let table = InteractionTable::from_positive_pairs(3, 4, &pairs).unwrap();
    let positives = SplitResult::by_user(&pairs, 3);
    let exposure = ExposureModel::untrained(ExposureVariant::Uniform, 3, 4, 0);
    let cfg = DccfConfig {
        dim: 8,
        hidden: vec![16],
        n_sampled_items: 1,
        ..DccfConfig::default()
    };
    let features = ItemFeatureTable::new(features).unwrap();
    let mut model = DccfModel::new(cfg, &features, &exposure, 3).unwrap();
    let tcfg = TrainConfig {
        lr: 0.01,
        batch_size: 64,
        epochs: 10,
        ..TrainConfig::default()
    };
    let trace = model.train(&pairs, &positives, &tcfg, Execution::Sequential).unwrap();
    let losses: Vec<f64> = trace.iter().map(|r| r.mean_loss).collect();
    assert_eq!(table.n_positives(), 6);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn ground_truth_scorer_dominates_trained_models() {
    for seed in 0..2 {
        let data = small_world(seed);
        let world = generate_world(&SynthConfig {
            n_users: 120,
            n_items: 150,
            ..SynthConfig::sd1(seed)
        })
        .unwrap();
        let protocol = EvalProtocol {
            seed,
            ..EvalProtocol::default()
        };
        let truth = FnScorer(|u, v| world.true_score(u, v));
        let oracle = evaluate(&truth, &data.table, &data.split.test, &protocol, Execution::Parallel).unwrap();
        for model in [ModelKind::Mf, ModelKind::Dccf, ModelKind::DccfNd] {
            let (_, report) = run(&data.table, Some(&data.features), &data.split, &quick(model, seed), Execution::Parallel).unwrap();
            assert!(
                oracle.mean_ndcg >= report.mean_ndcg,
                "seed {seed} {}: oracle {} < {}",
                model.name(),
                oracle.mean_ndcg,
                report.mean_ndcg
            );
        }
    }
}

#[test]
fn random_scorer_precision_matches_hypergeometric_expectation() {
    let n_users = 1000;
    let n_items = 300;
    let test: Vec<(usize, usize)> = (0..n_users).map(|u| (u, u % n_items)).collect();
    let table = InteractionTable::from_positive_pairs(n_users, n_items, &test).unwrap();
    let report = evaluate(&RandomScorer, &table, &test, &EvalProtocol::default(), Execution::Parallel).unwrap();
    // One relevant item among 101 candidates: P(hit in top 5) = 5/101 and
    // precision@5 is hit/5.
    let p_hit: f64 = 5.0 / 101.0;
    let expected = p_hit / 5.0;
    let sd = (p_hit * (1.0 - p_hit)).sqrt() / 5.0 / (n_users as f64).sqrt();
    assert!(
        (report.mean_precision - expected).abs() < 4.0 * sd,
        "precision {} vs {expected} ± {}",
        report.mean_precision,
        4.0 * sd
    );
}

#[test]
fn identical_seeds_give_identical_reports() {
    let data = small_world(4);
    let cfg = quick(ModelKind::Dccf, 4);
    let (a_out, a) = run(&data.table, Some(&data.features), &data.split, &cfg, Execution::Parallel).unwrap();
    let (b_out, b) = run(&data.table, Some(&data.features), &data.split, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a_out.model.to_checkpoint().to_bytes(), b_out.model.to_checkpoint().to_bytes());
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let data = small_world(5);
    for model in [ModelKind::Dccf, ModelKind::Mf] {
        let cfg = quick(model, 5);
        let (s_out, s) = run(&data.table, Some(&data.features), &data.split, &cfg, Execution::Sequential).unwrap();
        let (p_out, p) = run(&data.table, Some(&data.features), &data.split, &cfg, Execution::Parallel).unwrap();
        assert_eq!(s, p);
        assert_eq!(s_out.model.to_checkpoint().to_bytes(), p_out.model.to_checkpoint().to_bytes());
    }
}

#[test]
fn frozen_exposure_reproduces_the_fitted_run() {
    let data = small_world(6);
    let cfg = quick(ModelKind::Dccf, 6);
    let fitted = train_model(&data.table, Some(&data.features), &data.split, &cfg, Execution::Parallel).unwrap();
    let exposure = fitted.exposure.clone().unwrap();
    let frozen = train_model_with(
        &data.table,
        Some(&data.features),
        &data.split,
        &cfg,
        Some(exposure),
        Execution::Parallel,
    )
    .unwrap();
    assert!(frozen.exposure_trace.is_empty());
    assert_eq!(fitted.model.to_checkpoint().to_bytes(), frozen.model.to_checkpoint().to_bytes());

    let wrong = ExposureModel::untrained(ExposureVariant::Uniform, 3, 3, 0);
    assert!(train_model_with(&data.table, Some(&data.features), &data.split, &cfg, Some(wrong), Execution::Parallel).is_err());
}

#[test]
fn checkpoint_restores_scores() {
    let data = small_world(7);
    let cfg = quick(ModelKind::DccfNs, 7);
    let out = train_model(&data.table, Some(&data.features), &data.split, &cfg, Execution::Parallel).unwrap();
    let restored = Trained::from_checkpoint(&cfg, &out.model.to_checkpoint()).unwrap();
    let a = out.model.evaluate(&data.table, &data.split.test, &cfg.eval, Execution::Parallel).unwrap();
    let b = restored.evaluate(&data.table, &data.split.test, &cfg.eval, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn estimator_ablations_need_features() {
    let data = small_world(8);
    let err = train_model(&data.table, None, &data.split, &quick(ModelKind::DccfNd, 8), Execution::Parallel);
    assert!(err.is_err());
}
