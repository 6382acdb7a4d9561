//! Per-flow MLP baseline: no sequence context, same features, loss,
//! optimizer and model selection as the sequence model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::metrics::compute_metrics;
use crate::flow::FeatureSet;
use crate::head;
use crate::ingest::Dataset;
use crate::numerics::{Optimizer, OptimizerKind, ParamId, ParamStore, Scalar, ShapeError, Tape, Tensor, Var};
use crate::tokenizer::{self, init_uniform, NormScope, NormalizationStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Flows per optimizer step.
    pub batch_flows: usize,
    pub norm_scope: NormScope,
    pub rng_seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            epochs: 20,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            batch_flows: 256,
            norm_scope: NormScope::Batch,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub store: ParamStore<f32>,
    layers: Vec<(ParamId, ParamId)>,
    pub feature_set: FeatureSet,
    pub fitted_stats: Option<NormalizationStats>,
    pub best_epoch: usize,
    pub val_f1: f64,
}

impl MlpModel {
    fn build(fs: FeatureSet, cfg: &MlpConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut store = ParamStore::new();
        let mut widths = vec![fs.dim()];
        widths.extend(&cfg.hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add(format!("mlp.{i}.w"), init_uniform(&mut rng, &[w[0], w[1]], w[0]));
                let bias = store.add(format!("mlp.{i}.b"), init_uniform(&mut rng, &[w[1]], w[0]));
                (weight, bias)
            })
            .collect();
        Self {
            store,
            layers,
            feature_set: fs,
            fitted_stats: None,
            best_epoch: 0,
            val_f1: 0.0,
        }
    }

    /// Probabilities `[1, flows]` from features `[flows, d_feat]`.
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, ShapeError> {
        let flows = tape.shape(x)[0];
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            h = tape.matmul(h, w)?;
            h = tape.add(h, b)?;
            if i + 1 < self.layers.len() {
                h = tape.silu(h);
            }
        }
        let z = tape.reshape(h, &[1, flows])?;
        Ok(tape.sigmoid(z))
    }

    fn probabilities(&self, features: &[f32], flows: usize) -> Result<Vec<f32>> {
        let d = self.feature_set.dim();
        let mut out = Vec::with_capacity(flows);
        for chunk in features.chunks(4096 * d) {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(vec![chunk.len() / d, d], chunk.to_vec())?);
            let p = self.forward(&mut tape, &self.store, x)?;
            out.extend_from_slice(tape.value(p).data());
        }
        Ok(out)
    }
}

/// Per-flow attack probabilities. Each flow is scored on its own.
pub fn mlp_predict(model: &MlpModel, ds: &Dataset) -> Result<Vec<f32>> {
    if ds.feature_set != model.feature_set {
        return Err(Error::FeatureModeMismatch {
            data: ds.feature_set.mode,
            model: model.feature_set.mode,
        });
    }
    let scope = if model.fitted_stats.is_some() { NormScope::Fitted } else { NormScope::Batch };
    let features = tokenizer::batch_features(ds.flows(), &ds.feature_set, scope, model.fitted_stats.as_ref())?;
    model.probabilities(&features, ds.len())
}

fn f1_of(model: &MlpModel, ds: &Dataset) -> Result<f64> {
    let verdicts: Vec<bool> = mlp_predict(model, ds)?.iter().map(|&p| head::is_attack(p as f64)).collect();
    Ok(compute_metrics(&verdicts, &ds.labels())?.f1)
}

pub fn mlp_train(train: &Dataset, val: &Dataset, cfg: &MlpConfig) -> Result<MlpModel> {
    if cfg.epochs == 0 || cfg.batch_flows == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::Config("baseline needs positive epochs, batch size and learning rate".into()));
    }
    if !train.is_labeled() || !val.is_labeled() {
        return Err(Error::InsufficientData("baseline needs labeled train and validation splits".into()));
    }
    let attacks = train.attack_count();
    if attacks == 0 || attacks == train.len() {
        return Err(Error::DegenerateLabels);
    }
    let fs = train.feature_set;
    let mut model = MlpModel::build(fs, cfg);
    let stats = tokenizer::compute_stats(train.flows(), &fs, cfg.norm_scope)?;
    if cfg.norm_scope == NormScope::Fitted {
        model.fitted_stats = Some(stats.clone());
    }
    let features = tokenizer::normalize_batch(train.flows(), &stats, &fs);
    let labels: Vec<f32> = train.labels().iter().map(|l| l.as_f32()).collect();
    let d = fs.dim();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for group in order.chunks(cfg.batch_flows) {
            let x: Vec<f32> = group.iter().flat_map(|&i| features[i * d..(i + 1) * d].iter().copied()).collect();
            let y: Vec<f32> = group.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::new(vec![group.len(), d], x)?);
            let p = model.forward(&mut tape, &model.store, xv)?;
            let loss = head::sequence_loss(&mut tape, p, &y, &vec![false; group.len()])?;
            tape.backward(loss)?;
            tape.accumulate_into(&mut model.store);
            opt.step(&mut model.store);
            model.store.zero_grad();
        }
        let f1 = f1_of(&model, val)?;
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, epoch, model.store.clone()));
        }
    }
    let (val_f1, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    model.val_f1 = val_f1;
    model.best_epoch = best_epoch;
    Ok(model)
}
