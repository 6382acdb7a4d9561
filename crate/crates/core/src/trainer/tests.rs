use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::flow::{FeatureSet, FlowRecord, Label};
use crate::flow::testing::flow;
use crate::ingest::split;

/// Attack flows: single large UDP packets from port 53. Benign flows: chatty
/// TCP sessions with many mid-size packets.
fn toy(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flows: Vec<FlowRecord> = (0..n)
        .map(|i| {
            let attack = i % 4 == 0;
            let mut f = if attack {
                let mut f = flow(rng.random_range(1400..1450));
                f.proto = 17;
                f.src_port = 53;
                f
            } else {
                let len = rng.random_range(300..700);
                let pkts = rng.random_range(20..60u64);
                let mut f = flow(len);
                f.total_pkts = pkts;
                f.total_bytes = pkts * len as u64;
                f.src_port = rng.random_range(1024..65535);
                f
            };
            f.dst_port = rng.random_range(1024..65535);
            f.timestamp = rng.random_range(0..1_000_000);
            f.label = Some(if attack { Label::Attack } else { Label::Benign });
            f
        })
        .collect();
    Dataset::new(flows, FeatureSet::FULL9, "toy").unwrap()
}

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        n_bins: 8,
        train_sequence_count: 120,
        batch_sequences: 8,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        rng_seed: seed,
        ..TrainConfig::default()
    }
}

fn toy_splits() -> (Dataset, Dataset, Dataset) {
    split(&toy(400, 1), crate::ingest::DEFAULT_SPLIT).unwrap()
}

/// Plain logistic regression by gradient descent; establishes separability.
fn logistic_regression_accuracy(ds: &Dataset) -> f64 {
    let fs = FeatureSet::FULL9;
    let stats = tokenizer::compute_stats(ds.flows(), &fs, NormScope::Batch).unwrap();
    let x: Vec<Vec<f64>> = ds.flows().iter().map(|f| tokenizer::normalize(f, &stats, &fs)).collect();
    let y: Vec<f64> = ds.labels().iter().map(|l| l.as_f32() as f64).collect();
    let mut w = vec![0.0; fs.dim()];
    let mut b = 0.0;
    for _ in 0..3000 {
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for (xi, yi) in x.iter().zip(&y) {
            let z: f64 = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - yi;
            for (g, a) in gw.iter_mut().zip(xi) {
                *g += err * a;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 2.0 * g / x.len() as f64;
        }
        b -= 2.0 * gb / x.len() as f64;
    }
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(xi, yi)| {
            let z: f64 = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) == (**yi == 1.0)
        })
        .count();
    correct as f64 / x.len() as f64
}

#[test]
fn toy_dataset_is_linearly_separable() {
    let (tr, val, _) = toy_splits();
    assert_eq!(logistic_regression_accuracy(&tr), 1.0);
    assert_eq!(logistic_regression_accuracy(&val), 1.0);
}

#[test]
fn separable_toy_reaches_perfect_validation_f1() {
    let (tr, val, _) = toy_splits();
    let ckpt = train(&tr, &val, &small_cfg(3)).unwrap();
    assert_eq!(ckpt.meta.val_f1, 1.0, "{:?}", ckpt.meta.history);
    assert!(ckpt.meta.epochs_run <= 20);
}

#[test]
fn identical_seeds_identical_checkpoints() {
    let (tr, val, _) = toy_splits();
    let cfg = TrainConfig {
        epochs: 2,
        stop_at_perfect: false,
        ..small_cfg(5)
    };
    let a = train(&tr, &val, &cfg).unwrap().to_bytes();
    let b = train(&tr, &val, &cfg).unwrap().to_bytes();
    assert_eq!(a, b);
    let c = train(&tr, &val, &TrainConfig { rng_seed: 6, ..cfg }).unwrap().to_bytes();
    assert_ne!(a, c);
}

#[test]
fn frozen_backbone_matches_initialization() {
    let (tr, val, _) = toy_splits();
    let cfg = TrainConfig {
        epochs: 2,
        stop_at_perfect: false,
        ..small_cfg(7)
    };
    let ckpt = train(&tr, &val, &cfg).unwrap();
    let fresh = Trainer::new(&cfg, FeatureMode::Full9).unwrap();
    for ((_, a), (_, b)) in ckpt.params.iter().zip(fresh.store.iter()) {
        assert_eq!(a.name, b.name);
        if a.name.starts_with("backbone.") {
            assert_eq!(a.value, b.value, "{}", a.name);
        } else {
            assert_ne!(a.value, b.value, "{}", a.name);
        }
    }
}

#[test]
fn trainable_backbone_moves() {
    let (tr, val, _) = toy_splits();
    let cfg = TrainConfig {
        epochs: 1,
        backbone_frozen: false,
        ..small_cfg(7)
    };
    let ckpt = train(&tr, &val, &cfg).unwrap();
    let fresh = Trainer::new(&cfg, FeatureMode::Full9).unwrap();
    let id = fresh.store.find("backbone.0.wq").unwrap();
    assert_ne!(ckpt.params.get(id).value, fresh.store.get(id).value);
}

#[test]
fn small_step_decreases_loss() {
    let (tr, _, _) = toy_splits();
    let cfg = TrainConfig {
        learning_rate: 1e-5,
        ..small_cfg(2)
    };
    let mut trainer = Trainer::new(&cfg, FeatureMode::Full9).unwrap();
    let fs = FeatureSet::FULL9;
    let stats = tokenizer::compute_stats(tr.flows(), &fs, NormScope::Batch).unwrap();
    let features = tokenizer::normalize_batch(tr.flows(), &stats, &fs);
    let pool = training_sequences(&trainer.model.cfg, tr.flows(), 16, 0).unwrap();
    let seqs: Vec<&FlowSequence> = pool.iter().collect();
    let before = trainer.step(&features, &seqs).unwrap();
    let after = trainer.loss(&features, &seqs).unwrap();
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn inference_covers_every_flow() {
    let (tr, val, test) = toy_splits();
    let ckpt = train(&tr, &val, &TrainConfig { epochs: 1, ..small_cfg(1) }).unwrap();
    let out = infer(&test, &ckpt).unwrap();
    assert_eq!(out.probabilities.len(), test.len());
    assert_eq!(out.sequences, test.len().div_ceil(8));
    assert!(out.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(out, infer(&test, &ckpt).unwrap());
}

#[test]
fn three_hundred_twenty_flows_make_five_sequences() {
    let cfg = TrainConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(&cfg, FeatureMode::Full9).unwrap();
    let out = predict(&trainer.model, &trainer.store, None, &toy(320, 4)).unwrap();
    assert_eq!(out.sequences, 5);
    assert_eq!(out.probabilities.len(), 320);
}

#[test]
fn batch_smaller_than_bins() {
    let trainer = Trainer::new(&small_cfg(0), FeatureMode::Full9).unwrap();
    let err = predict(&trainer.model, &trainer.store, None, &toy(5, 0)).unwrap_err();
    assert!(matches!(err, Error::BatchTooSmall { flows: 5, min: 8 }));
}

#[test]
fn feature_mode_mismatch() {
    let trainer = Trainer::new(&small_cfg(0), FeatureMode::Full9).unwrap();
    let ds = toy(40, 0).with_feature_set(FeatureSet::NETFLOW6);
    assert!(matches!(
        predict(&trainer.model, &trainer.store, None, &ds),
        Err(Error::FeatureModeMismatch { .. })
    ));
}

#[test]
fn single_class_training_rejected() {
    let flows: Vec<FlowRecord> = toy(100, 0)
        .flows()
        .iter()
        .filter(|f| f.label == Some(Label::Benign))
        .cloned()
        .collect();
    let benign = Dataset::new(flows, FeatureSet::FULL9, "b").unwrap();
    assert!(matches!(train(&benign, &benign, &small_cfg(0)), Err(Error::DegenerateLabels)));
}

#[test]
fn fitted_scope_stores_statistics() {
    let (tr, val, test) = toy_splits();
    let cfg = TrainConfig {
        epochs: 1,
        norm_scope: NormScope::Fitted,
        ..small_cfg(1)
    };
    let ckpt = train(&tr, &val, &cfg).unwrap();
    assert_eq!(ckpt.fitted_stats.as_ref().unwrap().total, tr.len() as u64);
    let back = ModelCheckpoint::from_bytes(&ckpt.to_bytes()).unwrap();
    assert_eq!(infer(&test, &ckpt).unwrap(), infer(&test, &back).unwrap());
}

#[test]
fn sliding_sequencing_trains_and_covers() {
    let (tr, val, test) = toy_splits();
    let cfg = TrainConfig {
        epochs: 1,
        sequencing: Sequencing::Sliding,
        ..small_cfg(1)
    };
    let ckpt = train(&tr, &val, &cfg).unwrap();
    assert_eq!(infer(&test, &ckpt).unwrap().probabilities.len(), test.len());
}

mod checkpoint_format {
    use super::*;

    fn sample() -> (ModelCheckpoint, Dataset) {
        let (tr, val, test) = toy_splits();
        let ckpt = train(&tr, &val, &TrainConfig { epochs: 1, ..small_cfg(8) }).unwrap();
        (ckpt, test)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (ckpt, test) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let a = infer(&test, &ckpt).unwrap();
        let b = infer(&test, &back).unwrap();
        let bits = |i: &Inference| i.probabilities.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = sample().0.to_bytes();
        for cut in [0, 3, 15, 40, bytes.len() - 1] {
            assert!(matches!(ModelCheckpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = sample().0.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(ModelCheckpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn other_version_rejected() {
        let mut bytes = sample().0.to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes),
            Err(Error::Version { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = sample().0.to_bytes();
        let n = bytes.len();
        bytes[n - 10] ^= 0x01;
        assert!(matches!(ModelCheckpoint::from_bytes(&bytes), Err(Error::Checksum { .. })));
    }
}
