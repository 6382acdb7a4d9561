//! Feature normalization and the flow tokenizer MLP.
//!
//! Numerical features are min-max scaled; categorical ones (ports, protocol)
//! are replaced by their relative frequency in the batch the statistics were
//! computed over.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FeatureSet, FlowRecord};
use crate::numerics::{ParamId, ParamStore, Scalar, ShapeError, Tape, Tensor, Var};

/// Where normalization statistics come from at detection time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScope {
    /// Recomputed over each batch being scored.
    #[default]
    Batch,
    /// Frozen training-set statistics, outputs clamped to [0, 1].
    Fitted,
}

impl fmt::Display for NormScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormScope::Batch => "batch",
            NormScope::Fitted => "fitted",
        })
    }
}

impl FromStr for NormScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch" | "per_batch" => Ok(NormScope::Batch),
            "fitted" => Ok(NormScope::Fitted),
            other => Err(format!("unknown normalization scope '{other}' (expected batch or fitted)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// `(min, max)` per numerical feature, in feature-set order.
    pub numeric: Vec<(f64, f64)>,
    /// Value counts per categorical feature, in feature-set order.
    pub categorical: Vec<BTreeMap<u32, u64>>,
    /// Number of flows the statistics were computed over.
    pub total: u64,
    pub scope: NormScope,
}

pub fn compute_stats(batch: &[FlowRecord], fs: &FeatureSet, scope: NormScope) -> Result<NormalizationStats> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("normalization statistics need at least one flow".into()));
    }
    let numeric = fs
        .numerical()
        .iter()
        .map(|f| {
            batch.iter().map(|r| f.value(r)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        })
        .collect();
    let categorical = fs
        .categorical()
        .iter()
        .map(|f| {
            let mut counts = BTreeMap::new();
            for r in batch {
                *counts.entry(f.category(r)).or_insert(0u64) += 1;
            }
            counts
        })
        .collect();
    Ok(NormalizationStats {
        numeric,
        categorical,
        total: batch.len() as u64,
        scope,
    })
}

/// Normalized feature vector: categorical features first, then numerical.
pub fn normalize(record: &FlowRecord, stats: &NormalizationStats, fs: &FeatureSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(fs.dim());
    for (f, counts) in fs.categorical().iter().zip(&stats.categorical) {
        let count = counts.get(&f.category(record)).copied().unwrap_or(0);
        out.push(count as f64 / stats.total as f64);
    }
    for (f, &(lo, hi)) in fs.numerical().iter().zip(&stats.numeric) {
        let x = f.value(record);
        out.push(if hi > lo { (x - lo) / (hi - lo) } else { 0.0 });
    }
    if stats.scope == NormScope::Fitted {
        for v in &mut out {
            *v = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Row-major `[flows x d_feat]` normalized features.
///
/// Both the sequence model and the per-flow baseline consume this exact
/// matrix.
pub fn normalize_batch(flows: &[FlowRecord], stats: &NormalizationStats, fs: &FeatureSet) -> Vec<f32> {
    flows
        .iter()
        .flat_map(|r| normalize(r, stats, fs))
        .map(|v| v as f32)
        .collect()
}

/// Features for a batch under a normalization scope: statistics from the
/// batch itself, or the stored training statistics when fitted.
///
/// Both the sequence model and the per-flow baseline go through here.
pub fn batch_features(
    flows: &[FlowRecord],
    fs: &FeatureSet,
    scope: NormScope,
    fitted: Option<&NormalizationStats>,
) -> Result<Vec<f32>> {
    let stats = match (scope, fitted) {
        (NormScope::Batch, _) => compute_stats(flows, fs, NormScope::Batch)?,
        (NormScope::Fitted, Some(stats)) => stats.clone(),
        (NormScope::Fitted, None) => {
            return Err(Error::Config("fitted normalization scope without stored statistics".into()))
        }
    };
    Ok(normalize_batch(flows, &stats, fs))
}

/// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn init_uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

/// Two-layer MLP mapping each flow's feature vector to a `d_model` token.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTokenizer {
    pub d_feat: usize,
    pub d_hidden: usize,
    pub d_model: usize,
    ids: [ParamId; 4],
}

impl FlowTokenizer {
    pub const PREFIX: &'static str = "tokenizer.";

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, d_feat: usize, d_hidden: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        let w1 = store.add("tokenizer.w1", init_uniform(rng, &[d_feat, d_hidden], d_feat));
        let b1 = store.add("tokenizer.b1", init_uniform(rng, &[d_hidden], d_feat));
        let w2 = store.add("tokenizer.w2", init_uniform(rng, &[d_hidden, d_model], d_hidden));
        let b2 = store.add("tokenizer.b2", init_uniform(rng, &[d_model], d_hidden));
        Self {
            d_feat,
            d_hidden,
            d_model,
            ids: [w1, b1, w2, b2],
        }
    }

    /// Default hidden width: twice the feature count.
    pub fn default_hidden(d_feat: usize) -> usize {
        2 * d_feat
    }

    pub fn params(&self) -> [ParamId; 4] {
        self.ids
    }

    /// `silu(x W1 + b1) W2 + b2`, applied to the last axis of `x`.
    pub fn embed<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, ShapeError> {
        let [w1, b1, w2, b2] = self.params().map(|id| tape.param(store, id));
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.silu(h);
        let e = tape.matmul(h, w2)?;
        tape.add(e, b2)
    }
}
