//! The full detector: tokenizer, backbone and classification head over one
//! parameter store.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::flow::{FeatureMode, FeatureSet, FlowRecord};
use crate::head::ClassificationHead;
use crate::numerics::{ParamStore, Scalar, Tape, Tensor, Var};
use crate::sequentializer::{self, FlowSequence};
use crate::tokenizer::{FlowTokenizer, NormScope};

/// How flows are grouped into sequences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sequencing {
    /// Sort, equal-frequency bins, matrix columns.
    #[default]
    Binned,
    /// Timestamp-ordered windows of `n_bins` flows.
    Sliding,
}

impl fmt::Display for Sequencing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sequencing::Binned => "binned",
            Sequencing::Sliding => "sliding",
        })
    }
}

impl FromStr for Sequencing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binned" => Ok(Sequencing::Binned),
            "sliding" => Ok(Sequencing::Sliding),
            other => Err(format!("unknown sequencing '{other}' (expected binned or sliding)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_mode: FeatureMode,
    pub norm_scope: NormScope,
    pub sequencing: Sequencing,
    /// Sequence length: bins for [`Sequencing::Binned`], window otherwise.
    pub n_bins: usize,
    pub d_hidden: usize,
    pub d_proj: usize,
    pub backbone: BackboneConfig,
}

impl ModelConfig {
    pub fn feature_set(&self) -> FeatureSet {
        FeatureSet::new(self.feature_mode)
    }

    pub fn d_feat(&self) -> usize {
        self.feature_set().dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.n_bins == 0 || self.d_hidden == 0 || self.d_proj == 0 {
            return Err(Error::Config("n_bins, d_hidden and d_proj must be positive".into()));
        }
        if self.n_bins > self.backbone.max_seq {
            return Err(Error::Config(format!(
                "n_bins {} exceeds backbone max_seq {}",
                self.n_bins, self.backbone.max_seq
            )));
        }
        Ok(())
    }

    /// Sequences covering every flow of a batch exactly once (non-duplicate
    /// positions).
    pub fn cover(&self, batch: &[FlowRecord]) -> Result<Vec<FlowSequence>> {
        match self.sequencing {
            Sequencing::Binned => {
                let m = sequentializer::build_matrix(&sequentializer::sort_flows(batch), self.n_bins)?;
                Ok(sequentializer::assemble_sequences(&m))
            }
            Sequencing::Sliding => sequentializer::sliding_window_cover(batch, self.n_bins),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub cfg: ModelConfig,
    pub tokenizer: FlowTokenizer,
    pub backbone: Backbone,
    pub head: ClassificationHead,
}

impl DetectorModel {
    /// Registers parameters in a fixed order: tokenizer, backbone, head.
    ///
    /// Tokenizer and head draw from `seed`; the backbone uses its own
    /// configured seed.
    pub fn build<T: Scalar>(cfg: &ModelConfig, seed: u64, store: &mut ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_model = cfg.backbone.d_model;
        let tokenizer = FlowTokenizer::new(store, cfg.d_feat(), cfg.d_hidden, d_model, &mut rng);
        let backbone = Backbone::new(store, cfg.backbone.clone())?;
        let head = ClassificationHead::new(store, d_model, cfg.d_proj, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            tokenizer,
            backbone,
            head,
        })
    }

    /// Attack probabilities `[batch, seq]` from normalized features
    /// `[batch, seq, d_feat]`.
    pub fn probabilities<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let e = self.tokenizer.embed(tape, store, x)?;
        let h = self.backbone.forward(tape, store, e)?;
        Ok(self.head.classify(tape, store, h)?)
    }
}

/// Gathers `[seqs, seq_len, d_feat]` features for a group of sequences.
pub fn gather_features<T: Scalar>(features: &[f32], d_feat: usize, seqs: &[&FlowSequence]) -> Result<Tensor<T>> {
    let len = seqs.first().map_or(0, |s| s.len());
    let mut data = Vec::with_capacity(seqs.len() * len * d_feat);
    for s in seqs {
        if s.len() != len {
            return Err(Error::LengthMismatch { left: len, right: s.len() });
        }
        for &i in &s.positions {
            data.extend(features[i * d_feat..(i + 1) * d_feat].iter().map(|&v| T::lit(v as f64)));
        }
    }
    Ok(Tensor::new(vec![seqs.len(), len, d_feat], data)?)
}
