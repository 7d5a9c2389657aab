use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{generate_synthetic, stratified_kfold, SyntheticSpec};

fn toy() -> Dataset {
    generate_synthetic(&SyntheticSpec {
        n_pos_bags: 5,
        n_neg_bags: 5,
        instances_per_bag: (3, 6),
        feature_dim: 4,
        n_pos_clusters: 1,
        pos_fraction: 0.5,
        cluster_separation: 3.0,
        seed: 1,
    })
    .unwrap()
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr_warmup_epochs: 2.min(epochs),
        embed_dim: Some(8),
        num_heads: 2,
        num_globals: 3,
        base_lr: 1e-2,
        objective: ObjectiveConfig { warmup_epochs: 2, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn lr_schedule_examples() {
    let c = TrainConfig::default();
    assert!((lr_at(0, &c) - 1e-5).abs() < 1e-20);
    assert_eq!(lr_at(20, &c), 5e-4);
    assert!((lr_at(110, &c) - 2.5e-4).abs() < 1e-15);
    let mut prev = lr_at(20, &c);
    for e in 21..200 {
        let v = lr_at(e, &c);
        assert!(v <= prev);
        prev = v;
    }
    // the warmup line reaches base_lr at the junction
    let w = c.lr_warmup_epochs as f64;
    assert_eq!(c.warmup_lr_start + (c.base_lr - c.warmup_lr_start) * (w / w), lr_at(20, &c));
}

fn single_param(v: f64) -> Weights<Matrix> {
    let m = || Matrix::zeros(0, 0);
    Weights {
        ffn_instance: crate::model::FeedForward {
            hidden: crate::model::Linear { weight: Matrix::scalar(v), bias: m() },
            output: crate::model::Linear { weight: m(), bias: m() },
        },
        aggregator: crate::model::Aggregator::Gated(crate::model::GatedAttention { v: m(), u: m(), w: m() }),
        classifier: crate::model::Linear { weight: m(), bias: m() },
    }
}

#[test]
fn sgd_examples() {
    let mut p = single_param(0.7);
    sgd_step(&mut p, &single_param(0.0), 0.5, 0.0).unwrap();
    assert_eq!(p, single_param(0.7));
    let mut p = single_param(1.0);
    sgd_step(&mut p, &single_param(0.0), 1.0, 1e-4).unwrap();
    assert_eq!(p, single_param(0.9999));
    let mut p = single_param(2.0);
    sgd_step(&mut p, &single_param(0.3), 0.1, 0.0).unwrap();
    assert_eq!(p, single_param(2.0 - 0.1 * 0.3));
    let err = sgd_step(&mut p, &single_param(f64::NAN), 0.1, 0.0).unwrap_err();
    assert_eq!(err, Error::NonFinite { param: "ffn_instance.hidden.weight".into() });
}

#[test]
fn momentum_accumulates_velocity() {
    let mut plain = single_param(2.0);
    let mut opt = Sgd::new(0.0, 0.0);
    opt.step(&mut plain, &single_param(0.3), 0.1).unwrap();
    assert_eq!(plain, single_param(2.0 - 0.1 * 0.3));

    let mut p = single_param(1.0);
    let mut opt = Sgd::new(0.0, 0.5);
    opt.step(&mut p, &single_param(1.0), 0.1).unwrap();
    assert_eq!(p, single_param(0.9));
    // v = 0.5 * 1 + 1 = 1.5
    opt.step(&mut p, &single_param(1.0), 0.1).unwrap();
    assert_eq!(p, single_param(0.9 - 0.1 * 1.5));
    let before = p.clone();
    assert!(opt.step(&mut p, &single_param(f64::INFINITY), 0.1).is_err());
    assert_eq!(p, before);
}

#[test]
fn zero_epochs_returns_initial_params() {
    let data = toy();
    let c = small_config(0);
    let out = train(&data, None, &c).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.params, ModelParams::init(c.model_config(4), c.seed).unwrap());
}

#[test]
fn single_class_training_rejected() {
    let data = toy();
    let pos_only = data.subset(&[0, 1, 2]);
    assert!(matches!(train(&pos_only, None, &small_config(1)), Err(Error::Config(_))));
}

#[test]
fn warmup_gating_and_determinism() {
    let data = toy();
    let c = small_config(5);
    let a = train(&data, Some(&data), &c).unwrap();
    for r in &a.history[..2] {
        assert_eq!(r.loss_total.to_bits(), r.loss_ce.to_bits());
    }
    for r in &a.history[2..] {
        assert_ne!(r.loss_total, r.loss_ce);
    }
    let b = train(&data, Some(&data), &c).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
}

#[test]
fn selects_best_validation_epoch() {
    let data = toy();
    let c = small_config(4);
    let out = train(&data, Some(&data), &c).unwrap();
    let best = out.best_epoch.unwrap();
    let auc = |r: &EpochRecord| r.val.as_ref().unwrap().auc.unwrap();
    let top = out.history.iter().map(auc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(auc(&out.history[best]), top);
    assert!(out.history[best + 1..].iter().all(|r| auc(r) < top));
    let m = evaluate(&out.params, &data).unwrap();
    assert_eq!(Some(m.clone()), out.history[best].val);
}

#[test]
fn observer_can_stop_early() {
    let data = toy();
    let c = small_config(6);
    let full = train(&data, None, &c).unwrap();
    let params = ModelParams::init(c.model_config(4), c.seed).unwrap();
    let cut = train_with_observer(params, &data, None, &c, |r| {
        if r.epoch == 2 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(cut.history, full.history[..3]);
    assert_eq!(cut.best_epoch, Some(2));
}

#[test]
fn centers_follow_update_sequence_only() {
    let data = toy();
    let c = small_config(2);
    let out = train(&data, None, &c).unwrap();
    assert!(out.tracker.is_ready());
    assert!(!out.params.weights.names().iter().any(|n| n.contains("center")));
}

fn score(label: u8, p: f64) -> BagScore {
    BagScore { bag_id: "b".into(), label, probability: p, predicted: u8::from(p >= 0.5) }
}

#[test]
fn metrics_examples() {
    let s = [score(1, 0.9), score(0, 0.8), score(0, 0.3)];
    let m = metrics_from_scores(&s);
    assert_eq!(m.auc, Some(1.0));
    assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
    let s = [score(1, 0.9), score(0, 0.4), score(0, 0.3)];
    let m = metrics_from_scores(&s);
    assert_eq!((m.accuracy, m.f1, m.auc), (1.0, 1.0, Some(1.0)));
    assert_eq!(metrics_from_scores(&[score(1, 0.9)]).auc, None);
}

fn brute_force_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    total += 1.0;
                } else if scores[i] == scores[j] {
                    total += 0.5;
                }
            }
        }
    }
    total / pairs
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // coarse scores so that ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
        let got = auc(&labels, &scores).unwrap();
        assert!((got - brute_force_auc(&labels, &scores)).abs() < 1e-12);
    }
}

#[test]
fn mean_std_of_identical_values() {
    let ms = MeanStd::of(&[0.75, 0.75, 0.75]).unwrap();
    assert_eq!((ms.mean, ms.std), (0.75, 0.0));
    assert!(MeanStd::of(&[]).is_none());
}

#[test]
fn cv_folds_partition_bags() {
    let data = generate_synthetic(&SyntheticSpec {
        n_pos_bags: 6,
        n_neg_bags: 6,
        instances_per_bag: (3, 4),
        feature_dim: 4,
        n_pos_clusters: 1,
        pos_fraction: 0.5,
        cluster_separation: 3.0,
        seed: 2,
    })
    .unwrap();
    let plan = stratified_kfold(&data, 2, 0).unwrap();
    let report = run_cv(&data, &plan, &small_config(2)).unwrap();
    assert_eq!(report.folds.len(), 2);
    let mut tested = vec![];
    for f in &report.folds {
        for id in &f.test_bags {
            assert!(!f.train_bags.contains(id) && !f.val_bags.contains(id));
        }
        tested.extend(f.test_bags.iter().cloned());
    }
    tested.sort();
    let mut all: Vec<_> = data.bags.iter().map(|b| b.id.clone()).collect();
    all.sort();
    assert_eq!(tested, all);
}
