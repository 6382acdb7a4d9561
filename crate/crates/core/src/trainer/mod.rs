//! Training loop, batched inference and model checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, FORMAT_VERSION, MAGIC};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, MaskMode};
use crate::error::{Error, Result};
use crate::evaluator::metrics::compute_metrics;
use crate::flow::{FeatureMode, FlowRecord, Label};
use crate::head::{self, ClassificationHead};
use crate::ingest::Dataset;
use crate::model::{gather_features, DetectorModel, ModelConfig, Sequencing};
use crate::numerics::{Optimizer, OptimizerKind, ParamStore, Tape};
use crate::sequentializer::{self, FlowSequence, DEFAULT_BINS, DEFAULT_TRAIN_SEQUENCES};
use crate::tokenizer::{self, FlowTokenizer, NormScope, NormalizationStats};

/// Sequences per forward pass at inference time.
pub const INFER_CHUNK: usize = 32;

/// Decorrelates the epoch shuffle from the augmentation sampler.
const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_sequences: usize,
    pub n_bins: usize,
    pub train_sequence_count: usize,
    pub rng_seed: u64,
    pub backbone_frozen: bool,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mask_mode: MaskMode,
    pub rope_enabled: bool,
    pub norm_scope: NormScope,
    pub sequencing: Sequencing,
    /// Tokenizer hidden width; twice the feature count when unset.
    pub d_hidden: Option<usize>,
    /// Head projection width; half of `d_model` when unset.
    pub d_proj: Option<usize>,
    /// Stop once validation F1 reaches 1.0. Selection is strict, so the
    /// returned parameters are the same as with a full run.
    pub stop_at_perfect: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            batch_sequences: 32,
            n_bins: DEFAULT_BINS,
            train_sequence_count: DEFAULT_TRAIN_SEQUENCES,
            rng_seed: 0,
            backbone_frozen: true,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            mask_mode: MaskMode::Bidirectional,
            rope_enabled: true,
            norm_scope: NormScope::Batch,
            sequencing: Sequencing::Binned,
            d_hidden: None,
            d_proj: None,
            stop_at_perfect: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_sequences == 0 {
            return Err(Error::Config("batch_sequences must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, feature_mode: FeatureMode) -> ModelConfig {
        let d_feat = crate::flow::FeatureSet::new(feature_mode).dim();
        ModelConfig {
            feature_mode,
            norm_scope: self.norm_scope,
            sequencing: self.sequencing,
            n_bins: self.n_bins,
            d_hidden: self.d_hidden.unwrap_or(FlowTokenizer::default_hidden(d_feat)),
            d_proj: self.d_proj.unwrap_or(ClassificationHead::default_proj(self.d_model)),
            backbone: BackboneConfig {
                d_model: self.d_model,
                n_layers: self.n_layers,
                n_heads: self.n_heads,
                max_seq: self.n_bins,
                mask_mode: self.mask_mode,
                rope_enabled: self.rope_enabled,
                frozen: self.backbone_frozen,
                rng_seed: self.rng_seed,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub best_epoch: usize,
    pub val_f1: f64,
    pub seed: u64,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
}

/// Per-flow attack probabilities for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub probabilities: Vec<f32>,
    /// Number of sequences passed through the backbone.
    pub sequences: usize,
}

impl Inference {
    pub fn verdicts(&self) -> Vec<bool> {
        self.probabilities.iter().map(|&p| head::is_attack(p as f64)).collect()
    }
}

/// Owns the model, its parameters and the optimizer state.
pub struct Trainer {
    pub model: DetectorModel,
    pub store: ParamStore<f32>,
    optimizer: Optimizer<f32>,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, feature_mode: FeatureMode) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let model = DetectorModel::build(&cfg.model_config(feature_mode), cfg.rng_seed, &mut store)?;
        let optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &store);
        Ok(Self { model, store, optimizer })
    }

    fn forward_loss(&self, tape: &mut Tape<f32>, features: &[f32], seqs: &[&FlowSequence]) -> Result<crate::numerics::Var> {
        let x = gather_features(features, self.model.cfg.d_feat(), seqs)?;
        let x = tape.constant(x);
        let p = self.model.probabilities(tape, &self.store, x)?;
        let mut labels = Vec::with_capacity(seqs.len() * self.model.cfg.n_bins);
        let mut dup = Vec::with_capacity(labels.capacity());
        for s in seqs {
            let l = s
                .labels
                .as_ref()
                .ok_or_else(|| Error::InsufficientData("training sequences need labels".into()))?;
            labels.extend(l.iter().map(|l| l.as_f32()));
            dup.extend_from_slice(&s.dup_mask);
        }
        head::sequence_loss(tape, p, &labels, &dup)
    }

    /// Mean per-sequence loss without updating anything.
    pub fn loss(&self, features: &[f32], seqs: &[&FlowSequence]) -> Result<f32> {
        let mut tape = Tape::new();
        let l = self.forward_loss(&mut tape, features, seqs)?;
        Ok(tape.value(l).data()[0])
    }

    /// One optimizer step; returns the loss before the update.
    pub fn step(&mut self, features: &[f32], seqs: &[&FlowSequence]) -> Result<f32> {
        let mut tape = Tape::new();
        let l = self.forward_loss(&mut tape, features, seqs)?;
        tape.backward(l)?;
        tape.accumulate_into(&mut self.store);
        self.optimizer.step(&mut self.store);
        self.store.zero_grad();
        Ok(tape.value(l).data()[0])
    }
}

/// Training pool: the covering sequences of the train split followed by
/// random augmentation, `count` in total.
pub fn training_sequences(cfg: &ModelConfig, flows: &[FlowRecord], count: usize, seed: u64) -> Result<Vec<FlowSequence>> {
    let seqs = match cfg.sequencing {
        Sequencing::Binned => {
            let m = sequentializer::build_matrix(&sequentializer::sort_flows(flows), cfg.n_bins)?;
            sequentializer::sample_training_sequences(&m, count, seed)
        }
        Sequencing::Sliding => {
            let mut out = sequentializer::sliding_window_cover(flows, cfg.n_bins)?;
            out.truncate(count);
            let all = sequentializer::sliding_window_sequences(flows, cfg.n_bins, 1)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while out.len() < count {
                out.push(all[rng.random_range(0..all.len())].clone());
            }
            out
        }
    };
    Ok(seqs.into_iter().map(|s| s.with_labels(flows)).collect())
}

/// Scores every flow of a batch with explicit parameters.
pub fn predict(
    model: &DetectorModel,
    store: &ParamStore<f32>,
    fitted: Option<&NormalizationStats>,
    ds: &Dataset,
) -> Result<Inference> {
    let cfg = &model.cfg;
    if ds.feature_set.mode != cfg.feature_mode {
        return Err(Error::FeatureModeMismatch {
            data: ds.feature_set.mode,
            model: cfg.feature_mode,
        });
    }
    let flows = ds.flows();
    if flows.len() < cfg.n_bins {
        return Err(Error::BatchTooSmall {
            flows: flows.len(),
            min: cfg.n_bins,
        });
    }
    let features = tokenizer::batch_features(flows, &cfg.feature_set(), cfg.norm_scope, fitted)?;
    let seqs = cfg.cover(flows)?;
    let chunks: Vec<Vec<f32>> = seqs
        .par_chunks(INFER_CHUNK)
        .map(|chunk| -> Result<Vec<f32>> {
            let refs: Vec<&FlowSequence> = chunk.iter().collect();
            let mut tape = Tape::new();
            let x = tape.constant(gather_features(&features, cfg.d_feat(), &refs)?);
            let p = model.probabilities(&mut tape, store, x)?;
            Ok(tape.value(p).data().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut probabilities = vec![f32::NAN; flows.len()];
    for (s, p) in seqs.iter().zip(chunks.iter().flat_map(|c| c.chunks(cfg.n_bins))) {
        for ((&i, &d), &p) in s.positions.iter().zip(&s.dup_mask).zip(p) {
            if !d && probabilities[i].is_nan() {
                probabilities[i] = p;
            }
        }
    }
    debug_assert!(probabilities.iter().all(|p| !p.is_nan()));
    Ok(Inference {
        probabilities,
        sequences: seqs.len(),
    })
}

/// Sequentialize, normalize, embed, encode and classify every flow.
pub fn infer(ds: &Dataset, ckpt: &ModelCheckpoint) -> Result<Inference> {
    predict(&ckpt.model, &ckpt.params, ckpt.fitted_stats.as_ref(), ds)
}

fn check_labeled(ds: &Dataset, what: &str) -> Result<()> {
    if !ds.is_labeled() {
        return Err(Error::InsufficientData(format!("{what} split must be labeled and non-empty")));
    }
    Ok(())
}

pub fn validation_f1(model: &DetectorModel, store: &ParamStore<f32>, fitted: Option<&NormalizationStats>, val: &Dataset) -> Result<f64> {
    let inf = predict(model, store, fitted, val)?;
    Ok(compute_metrics(&inf.verdicts(), &val.labels())?.f1)
}

pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    train_with_progress(train, val, cfg, |_| {})
}

/// Runs the epoch loop, calling `progress` after each validation pass, and
/// returns the parameters with the best validation F1 (first one wins ties).
pub fn train_with_progress(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    check_labeled(train, "train")?;
    check_labeled(val, "validation")?;
    if train.len() < cfg.n_bins {
        return Err(Error::BatchTooSmall {
            flows: train.len(),
            min: cfg.n_bins,
        });
    }
    let attacks = train.attack_count();
    if attacks == 0 || attacks == train.len() {
        return Err(Error::DegenerateLabels);
    }
    let mode = train.feature_set.mode;
    let mut trainer = Trainer::new(cfg, mode)?;
    let mcfg = trainer.model.cfg.clone();
    let fs = mcfg.feature_set();
    let train_stats = tokenizer::compute_stats(train.flows(), &fs, cfg.norm_scope)?;
    let fitted = (cfg.norm_scope == NormScope::Fitted).then(|| train_stats.clone());
    let features = tokenizer::normalize_batch(train.flows(), &train_stats, &fs);
    let pool = training_sequences(&mcfg, train.flows(), cfg.train_sequence_count, cfg.rng_seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for group in order.chunks(cfg.batch_sequences) {
            let seqs: Vec<&FlowSequence> = group.iter().map(|&i| &pool[i]).collect();
            loss_sum += trainer.step(&features, &seqs)? as f64;
            steps += 1;
        }
        let val_f1 = validation_f1(&trainer.model, &trainer.store, fitted.as_ref(), val)?;
        let record = EpochRecord {
            epoch,
            mean_loss: if steps == 0 { 0.0 } else { loss_sum / steps as f64 },
            val_f1,
        };
        progress(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(f1, _, _)| val_f1 > *f1) {
            best = Some((val_f1, epoch, trainer.store.clone()));
        }
        if cfg.stop_at_perfect && val_f1 >= 1.0 {
            break;
        }
    }
    let (val_f1, best_epoch, params) = best.expect("at least one epoch");
    Ok(ModelCheckpoint {
        model: trainer.model,
        params,
        fitted_stats: fitted,
        meta: TrainingMeta {
            best_epoch,
            val_f1,
            seed: cfg.rng_seed,
            epochs_run: history.len(),
            history,
        },
    })
}

/// Labels of a labeled batch, for metric computation.
pub fn labels_of(ds: &Dataset) -> Result<Vec<Label>> {
    check_labeled(ds, "evaluation")?;
    Ok(ds.labels())
}

#[cfg(test)]
mod tests;
