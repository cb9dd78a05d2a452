use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dear::graph_data::{gen_sample, Algorithm, DatasetSpec, Sample, Split, SplitCounts};
use dear::model::{InstanceLayout, Model, ModelConfig};
use dear::numeric::AdamState;
use dear::train::{benchmark_inference, evaluate, sample_gradients, train, EpochMetrics, Inference, Mode, TrainConfig};

fn spec(alg: Algorithm, train: usize, val: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        counts: SplitCounts { train, val, test: 4 },
        ..DatasetSpec::desk(alg, seed)
    }
}

fn small_cfg(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        seed: 11,
        ..TrainConfig::desk()
    }
}

fn strip_time(rows: &[EpochMetrics]) -> Vec<EpochMetrics> {
    rows.iter().map(|r| EpochMetrics { seconds: 0.0, ..r.clone() }).collect()
}

#[test]
fn one_epoch_is_one_optimizer_step_per_batch() {
    let s = spec(Algorithm::BellmanFord, 32, 8, 1);
    let (tr, va) = (s.generate_split(Split::Train), s.generate_split(Split::Val));
    let model_cfg = ModelConfig::new(Algorithm::BellmanFord, 8);
    let mut cfg = small_cfg(1, 32);
    cfg.jac_reg.enabled = false;
    let mut calls = 0;
    let out = train(&model_cfg, &cfg, &tr, &va, |_| calls += 1).unwrap();
    assert_eq!(calls, 1, "validation runs once per epoch");
    assert_eq!(out.epochs.len(), 1);
    assert_eq!(out.best_epoch, 1);

    // one full batch by hand: the same gradients and a single Adam step
    let mut model = Model::<f64>::new(model_cfg, cfg.seed).unwrap();
    let per: Vec<_> = tr
        .iter()
        .map(|s| sample_gradients(&model, &InstanceLayout::from_sample(s).unwrap(), &cfg, 0).unwrap())
        .collect();
    let slots: usize = per.iter().map(|g| g.slots).sum();
    model.params.zero_grad();
    for g in &per {
        model.params.accumulate(&g.loss_grads, 1.0 / slots as f64);
    }
    let mut adam = AdamState::new(cfg.learning_rate);
    adam.step(&mut model.params);
    for (a, b) in model.params.iter().zip(out.model.params.iter()) {
        for (x, y) in a.value.data().iter().zip(b.value.data()) {
            assert!((x - y).abs() < 1e-9, "{}: {x} vs {y}", a.name);
        }
    }
}

#[test]
fn loss_decreases_when_overfitting_a_fixed_batch() {
    let s = spec(Algorithm::InsertionSort, 32, 32, 2);
    let tr = s.generate_split(Split::Train);
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        ..small_cfg(50, 8)
    };
    let out = train(&ModelConfig::new(Algorithm::InsertionSort, 16), &cfg, &tr, &tr, |_| {}).unwrap();
    let losses: Vec<f64> = out.epochs.iter().map(|e| e.train_loss).collect();
    let (first, last) = (losses[0], losses[49]);
    assert!(last < 0.75 * first, "train loss {first} -> {last}");
    // the kept model is the first epoch attaining the minimum validation loss
    let min = out.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    let first_min = out.epochs.iter().find(|e| e.val_loss == min).unwrap().epoch;
    assert_eq!(out.best_epoch, first_min);
    assert_eq!(out.best_val_loss, min);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let s = spec(Algorithm::Scc, 24, 6, 3);
    let (tr, va) = (s.generate_split(Split::Train), s.generate_split(Split::Val));
    let model_cfg = ModelConfig::new(Algorithm::Scc, 8);
    let cfg = small_cfg(2, 8);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&model_cfg, &cfg, &tr, &va, |_| {}).unwrap())
    };
    let (a, b, c) = (run(1), run(1), run(3));
    for other in [&b, &c] {
        assert_eq!(strip_time(&a.epochs), strip_time(&other.epochs));
        assert_eq!(a.model.params.fingerprint(), other.model.params.fingerprint());
    }
}

#[test]
fn baseline_mode_trains_with_unrolled_steps() {
    let s = spec(Algorithm::InsertionSort, 16, 4, 4);
    let (tr, va) = (s.generate_split(Split::Train), s.generate_split(Split::Val));
    let cfg = TrainConfig {
        mode: Mode::NarBaseline,
        ..small_cfg(2, 8)
    };
    let out = train(&ModelConfig::new(Algorithm::InsertionSort, 8), &cfg, &tr, &va, |_| {}).unwrap();
    for e in &out.epochs {
        let mean_n = tr.iter().map(|s| s.n() as f64).sum::<f64>() / tr.len() as f64;
        assert_eq!(e.train_mean_iterations, mean_n);
        assert_eq!(e.val_mean_iterations, 16.0);
        assert_eq!(e.train_jac, 0.0);
    }
}

#[test]
fn untrained_model_scores_near_chance_on_large_graphs() {
    let m = Model::<f64>::new(ModelConfig::new(Algorithm::BellmanFord, 16), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = DatasetSpec::edge_probability_grid();
    let samples: Vec<Sample> = (0..10).map(|_| gen_sample(Algorithm::BellmanFord, 64, &grid, &mut rng)).collect();
    let before = m.params.fingerprint();
    let metrics = evaluate(&m, &samples, &Inference::Unroll(Some(8))).unwrap();
    assert_eq!(m.params.fingerprint(), before, "evaluation must not touch weights");
    assert!(
        (metrics.accuracy - metrics.chance_accuracy).abs() < 0.05,
        "accuracy {} vs chance {}",
        metrics.accuracy,
        metrics.chance_accuracy
    );
}

#[test]
fn oracle_targets_score_perfectly() {
    let s = spec(Algorithm::FloydWarshall, 0, 0, 6);
    let test = s.generate_split(Split::Test);
    let preds: Vec<Vec<usize>> = test.iter().map(|s| s.target.pointees()).collect();
    assert_eq!(dear::train::accuracy_from_predictions(&test, &preds), 1.0);
}

#[test]
fn baseline_time_grows_with_size() {
    let m = Model::<f64>::new(ModelConfig::new(Algorithm::InsertionSort, 16), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut time = |n: usize| {
        let samples: Vec<Sample> = (0..4).map(|_| gen_sample(Algorithm::InsertionSort, n, &[], &mut rng)).collect();
        benchmark_inference(&m, &samples, &Inference::Unroll(None), 3, false).unwrap()
    };
    let (small, large) = (time(8), time(32));
    assert_eq!((small.mean_iterations, large.mean_iterations), (8.0, 32.0));
    assert!(large.mean_seconds_per_sample > small.mean_seconds_per_sample);
}

#[test]
fn single_repetition_has_flagged_zero_std() {
    let m = Model::<f64>::new(ModelConfig::new(Algorithm::Scc, 8), 1).unwrap();
    let samples = vec![gen_sample(Algorithm::Scc, 6, &[0.5], &mut ChaCha8Rng::seed_from_u64(1))];
    let b = benchmark_inference(&m, &samples, &Inference::Unroll(None), 1, true).unwrap();
    assert_eq!(b.std_seconds_per_sample, 0.0);
    assert!(!b.std_defined);
    assert!(b.end_to_end);
    assert!(benchmark_inference(&m, &samples, &Inference::Unroll(None), 0, false).is_err());
}
