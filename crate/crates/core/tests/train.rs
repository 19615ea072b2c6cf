use kgfuse::ingest::{generate_synthetic, split_dataset, Dataset, SyntheticSpec};
use kgfuse::model::{FusionVariant, Model, ModelConfig};
use kgfuse::numerics::{Adam, AdamConfig, Tensor};
use kgfuse::train::{evaluate, mean_loss, train, MetricsReport, TrainConfig};
use kgfuse::Error;
use proptest::prelude::*;

fn small_data(records_per_class: usize) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        records_per_class,
        d_t: 8,
        d_v: 8,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        d_t: 8,
        d_v: 8,
        d: 8,
        d_hidden: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = small_data(4);
    let (model, mut store) = Model::new(small_model()).unwrap();
    let before = store.clone();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        ..TrainConfig::default()
    };
    let out = train(&model, &mut store, &data, None, &cfg).unwrap();
    assert_eq!(out.steps, 3 * 3);
    for (a, b) in before.iter().zip(store.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn identical_seeds_give_identical_traces() {
    let data = small_data(6);
    let (train_set, val, _) = split_dataset(&data, 0.8, 0.1, 3).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let (model, mut store) = Model::new(small_model()).unwrap();
        let out = train(&model, &mut store, &train_set, Some(&val), &cfg).unwrap();
        (out.trace.to_csv(), store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    for (x, y) in sa.iter().zip(sb.iter()) {
        let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.value), bits(&y.value));
    }
    assert_eq!(a.lines().count(), 4);
    assert!(a.starts_with("epoch,mean_loss,val_accuracy,val_weighted_f1\n1,"));
}

#[test]
fn trace_without_validation_has_empty_columns() {
    let data = small_data(2);
    let (model, mut store) = Model::new(small_model()).unwrap();
    let out = train(
        &model,
        &mut store,
        &data,
        None,
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let csv = out.trace.to_csv();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("1,") && row.ends_with(",,"), "{row}");
}

#[test]
fn eight_records_are_memorised() {
    let data = small_data(2);
    let subset = data.subset(&(0..8).collect::<Vec<_>>());
    let cfg = ModelConfig {
        d: 16,
        ..small_model()
    };
    let (model, mut store) = Model::new(cfg).unwrap();
    let initial = mean_loss(&model, &store, &subset).unwrap();
    assert!((initial - 5f64.ln()).abs() < 0.2, "{initial}");
    let out = train(
        &model,
        &mut store,
        &subset,
        None,
        &TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 500,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.steps, 500);
    let fin = mean_loss(&model, &store, &subset).unwrap();
    assert!(fin < 0.01, "{fin}");
    assert_eq!(evaluate(&model, &store, &subset).unwrap().accuracy, 1.0);
}

#[test]
fn adam_step_moves_a_parameter() {
    let data = small_data(1);
    let (model, mut store) = Model::new(small_model()).unwrap();
    let before = store.clone();
    let mut tape = kgfuse::numerics::Tape::new();
    let g = kgfuse::graph::build_graph(&data.records[0]).unwrap();
    let loss = model.loss(&store, &mut tape, &g, 0).unwrap();
    store.accumulate(&tape.backward(loss).unwrap());
    Adam::new(AdamConfig::with_lr(1e-3), &store)
        .step(&mut store)
        .unwrap();
    assert!(before
        .iter()
        .zip(store.iter())
        .any(|(a, b)| a.value != b.value));
}

#[test]
fn evaluate_is_pure() {
    let data = small_data(3);
    let (model, store) = Model::new(small_model()).unwrap();
    let before = store.clone();
    let a = evaluate(&model, &store, &data).unwrap();
    let b = evaluate(&model, &store, &data).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.num_records(), 15);
    assert_eq!(a.confusion.iter().flatten().sum::<usize>(), 15);
    for (x, y) in before.iter().zip(store.iter()) {
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn empty_or_unlabeled_data_is_rejected() {
    let data = small_data(1);
    let (model, mut store) = Model::new(small_model()).unwrap();
    let empty = data.subset(&[]);
    assert!(matches!(
        evaluate(&model, &store, &empty),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        train(&model, &mut store, &empty, None, &TrainConfig::default()),
        Err(Error::Validation(_))
    ));
    let mut unlabeled = data.clone();
    unlabeled.records[2].label = None;
    assert!(matches!(
        train(
            &model,
            &mut store,
            &unlabeled,
            None,
            &TrainConfig::default()
        ),
        Err(Error::Validation(_))
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    let data = small_data(1);
    let (model, mut store) = Model::new(small_model()).unwrap();
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        },
        TrainConfig {
            early_stop_patience: Some(2),
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(
            train(&model, &mut store, &data, None, &cfg),
            Err(Error::Config(_))
        ));
    }
    let (wide, mut wide_store) = Model::new(ModelConfig {
        num_classes: 3,
        ..small_model()
    })
    .unwrap();
    assert!(matches!(
        train(&wide, &mut wide_store, &data, None, &TrainConfig::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn non_finite_parameters_abort_training() {
    let data = small_data(2);
    let cfg = ModelConfig {
        fusion: FusionVariant::Gcn,
        ..small_model()
    };
    let (model, mut store) = Model::new(cfg).unwrap();
    let id = store.id("classifier.output.bias").unwrap();
    store.get_mut(id).value.values_mut()[0] = f64::NAN;
    let err = train(&model, &mut store, &data, None, &TrainConfig::default()).unwrap_err();
    let Error::NonFinite(msg) = err else {
        panic!("{err}")
    };
    assert!(msg.contains("epoch 1, batch 1"), "{msg}");
}

#[test]
fn early_stopping_keeps_best_epoch() {
    let data = small_data(6);
    let (train_set, val, _) = split_dataset(&data, 0.8, 0.1, 3).unwrap();
    let (model, mut store) = Model::new(small_model()).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 40,
        early_stop_patience: Some(3),
        ..TrainConfig::default()
    };
    let out = train(&model, &mut store, &train_set, Some(&val), &cfg).unwrap();
    let best = out.best_epoch.unwrap();
    let f1: Vec<f64> = out
        .trace
        .epochs
        .iter()
        .map(|e| e.val_weighted_f1.unwrap())
        .collect();
    let max = f1.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(f1[best - 1], max);
    assert_eq!(f1.iter().position(|&f| f == max).unwrap() + 1, best);
    if out.stopped_early {
        assert_eq!(out.trace.epochs.len(), best + 3);
    }
    let restored = evaluate(&model, &store, &val).unwrap();
    assert_eq!(restored.weighted_f1, max);
}

/// Independent F1 oracle working from label lists rather than a confusion matrix.
fn oracle(truth: &[usize], pred: &[usize], c: usize) -> (Vec<f64>, f64, f64) {
    let mut f1 = Vec::new();
    let mut weighted = 0.0;
    for k in 0..c {
        let tp = truth
            .iter()
            .zip(pred)
            .filter(|&(&t, &p)| t == k && p == k)
            .count() as f64;
        let fp = truth
            .iter()
            .zip(pred)
            .filter(|&(&t, &p)| t != k && p == k)
            .count() as f64;
        let fn_ = truth
            .iter()
            .zip(pred)
            .filter(|&(&t, &p)| t == k && p != k)
            .count() as f64;
        // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN)
        let f = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        weighted += f * (tp + fn_);
        f1.push(f);
    }
    let acc = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64;
    (f1, weighted / truth.len() as f64, acc)
}

#[test]
fn weighted_f1_hand_examples() {
    // (truth, prediction, classes, per-class F1 by hand, weighted F1 by hand)
    type Case = (Vec<usize>, Vec<usize>, usize, Vec<f64>, f64);
    let cases: Vec<Case> = vec![
        (
            vec![0, 0, 1],
            vec![0, 1, 1],
            2,
            vec![2.0 / 3.0, 2.0 / 3.0],
            2.0 / 3.0,
        ),
        (vec![0, 1, 2], vec![0, 1, 2], 3, vec![1.0, 1.0, 1.0], 1.0),
        (
            vec![0, 0, 0, 1],
            vec![0, 0, 0, 0],
            2,
            vec![6.0 / 7.0, 0.0],
            18.0 / 28.0,
        ),
        (
            vec![0, 1, 1, 2],
            vec![1, 1, 2, 2],
            3,
            vec![0.0, 0.5, 2.0 / 3.0],
            5.0 / 12.0,
        ),
        (vec![0, 1], vec![1, 0], 2, vec![0.0, 0.0], 0.0),
        (
            vec![0, 0, 1, 1, 2],
            vec![0, 2, 1, 1, 0],
            4,
            vec![0.5, 1.0, 0.0, 0.0],
            0.6,
        ),
    ];
    for (truth, pred, c, f1, w) in cases {
        let m = MetricsReport::from_predictions(&truth, &pred, c).unwrap();
        let (of1, ow, oacc) = oracle(&truth, &pred, c);
        for k in 0..c {
            assert!(
                (m.per_class_f1[k] - f1[k]).abs() < 1e-12,
                "{truth:?}/{pred:?} class {k}"
            );
            assert!((of1[k] - f1[k]).abs() < 1e-12);
        }
        assert!(
            (m.weighted_f1 - w).abs() < 1e-12,
            "{truth:?}/{pred:?}: {}",
            m.weighted_f1
        );
        assert!((ow - w).abs() < 1e-12);
        assert!((m.accuracy - oacc).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn metrics_match_oracle(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40)) {
        let (truth, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = MetricsReport::from_predictions(&truth, &pred, 4).unwrap();
        let (f1, w, acc) = oracle(&truth, &pred, 4);
        for (got, want) in m.per_class_f1.iter().zip(&f1) {
            prop_assert!((got - want).abs() < 1e-12);
        }
        prop_assert!((m.weighted_f1 - w).abs() < 1e-12);
        prop_assert!((m.accuracy - acc).abs() < 1e-12);
        prop_assert_eq!(m.num_records(), truth.len());
        let s: f64 = m.per_class_f1.iter().zip(&m.support).map(|(f, &s)| f * s as f64).sum();
        prop_assert!((m.weighted_f1 - s / truth.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn diagonal_confusion_f1_equals_accuracy(diag in prop::collection::vec(0usize..20, 2..7)) {
        prop_assume!(diag.iter().sum::<usize>() > 0);
        let c = diag.len();
        let confusion = (0..c).map(|i| (0..c).map(|j| if i == j { diag[i] } else { 0 }).collect()).collect();
        let m = MetricsReport::from_confusion(confusion).unwrap();
        prop_assert!((m.weighted_f1 - m.accuracy).abs() < 1e-12);
        prop_assert_eq!(m.accuracy, 1.0);
    }
}
