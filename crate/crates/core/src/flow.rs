//! Flow records and the descriptive features drawn from them.
//!
//! IP addresses ride along for reporting only and never become features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Benign = 0,
    Attack = 1,
}

impl Label {
    pub fn is_attack(self) -> bool {
        self == Label::Attack
    }

    pub fn as_f32(self) -> f32 {
        self as u8 as f32
    }
}

/// One five-tuple flow with its byte/packet statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
    pub total_bytes: u64,
    pub total_pkts: u64,
    pub mean_pkt_len: f64,
    pub max_pkt_len: u32,
    pub min_pkt_len: u32,
    pub std_pkt_len: f64,
    /// Milliseconds since the epoch.
    pub timestamp: u64,
    pub label: Option<Label>,
}

impl FlowRecord {
    /// Returns the record unchanged iff every record invariant holds.
    pub fn validate(self) -> Result<Self, ValidationError> {
        let fail = |invariant, detail: String| ValidationError {
            invariant,
            detail,
            line: None,
        };
        if self.total_pkts == 0 {
            return Err(fail("total_pkts >= 1", "total_pkts=0".into()));
        }
        for (name, v) in [("mean_pkt_len", self.mean_pkt_len), ("std_pkt_len", self.std_pkt_len)] {
            if !v.is_finite() || v < 0.0 {
                return Err(fail("non-negative finite lengths", format!("{name}={v}")));
            }
        }
        let (min, max) = (self.min_pkt_len as f64, self.max_pkt_len as f64);
        if !(min <= self.mean_pkt_len && self.mean_pkt_len <= max) {
            return Err(fail(
                "min_pkt_len <= mean_pkt_len <= max_pkt_len",
                format!(
                    "min_pkt_len={}, mean_pkt_len={}, max_pkt_len={}",
                    self.min_pkt_len, self.mean_pkt_len, self.max_pkt_len
                ),
            ));
        }
        if self.total_pkts == 1 && self.std_pkt_len != 0.0 {
            return Err(fail(
                "std_pkt_len = 0 for single-packet flows",
                format!("total_pkts=1, std_pkt_len={}", self.std_pkt_len),
            ));
        }
        let pkts = self.total_pkts as u128;
        let bytes = self.total_bytes as u128;
        let (lo, hi) = (pkts * self.min_pkt_len as u128, pkts * self.max_pkt_len as u128);
        if bytes < lo || bytes > hi {
            return Err(fail(
                "total_pkts*min_pkt_len <= total_bytes <= total_pkts*max_pkt_len",
                format!(
                    "total_bytes={}, total_pkts={}, min_pkt_len={}, max_pkt_len={}",
                    self.total_bytes, self.total_pkts, self.min_pkt_len, self.max_pkt_len
                ),
            ));
        }
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    SrcPort,
    DstPort,
    Proto,
    TotalBytes,
    TotalPkts,
    MeanPktLen,
    MaxPktLen,
    MinPktLen,
    StdPktLen,
}

impl Feature {
    pub fn value(self, r: &FlowRecord) -> f64 {
        match self {
            Feature::SrcPort => r.src_port as f64,
            Feature::DstPort => r.dst_port as f64,
            Feature::Proto => r.proto as f64,
            Feature::TotalBytes => r.total_bytes as f64,
            Feature::TotalPkts => r.total_pkts as f64,
            Feature::MeanPktLen => r.mean_pkt_len,
            Feature::MaxPktLen => r.max_pkt_len as f64,
            Feature::MinPktLen => r.min_pkt_len as f64,
            Feature::StdPktLen => r.std_pkt_len,
        }
    }

    /// Integer key for frequency encoding of a categorical feature.
    pub fn category(self, r: &FlowRecord) -> u32 {
        match self {
            Feature::SrcPort => r.src_port as u32,
            Feature::DstPort => r.dst_port as u32,
            Feature::Proto => r.proto as u32,
            other => panic!("{other:?} is not categorical"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// All nine features.
    #[default]
    Full9,
    /// NetFlow exports lack max/min/std packet length.
    Netflow6,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Full9 => "full9",
            FeatureMode::Netflow6 => "netflow6",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full9" => Ok(FeatureMode::Full9),
            "netflow6" => Ok(FeatureMode::Netflow6),
            other => Err(format!("unknown feature mode '{other}' (expected full9 or netflow6)")),
        }
    }
}

const CATEGORICAL: [Feature; 3] = [Feature::SrcPort, Feature::DstPort, Feature::Proto];
const NUMERICAL_FULL: [Feature; 6] = [
    Feature::TotalBytes,
    Feature::TotalPkts,
    Feature::MeanPktLen,
    Feature::MaxPktLen,
    Feature::MinPktLen,
    Feature::StdPktLen,
];
const NUMERICAL_NETFLOW: [Feature; 3] = [Feature::TotalBytes, Feature::TotalPkts, Feature::MeanPktLen];

/// The ordered feature selection for a mode: categorical first, then numerical.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSet {
    pub mode: FeatureMode,
}

impl FeatureSet {
    pub const FULL9: FeatureSet = FeatureSet { mode: FeatureMode::Full9 };
    pub const NETFLOW6: FeatureSet = FeatureSet { mode: FeatureMode::Netflow6 };

    pub fn new(mode: FeatureMode) -> Self {
        Self { mode }
    }

    pub fn categorical(&self) -> &'static [Feature] {
        &CATEGORICAL
    }

    pub fn numerical(&self) -> &'static [Feature] {
        match self.mode {
            FeatureMode::Full9 => &NUMERICAL_FULL,
            FeatureMode::Netflow6 => &NUMERICAL_NETFLOW,
        }
    }

    pub fn features(&self) -> impl Iterator<Item = Feature> + '_ {
        self.categorical().iter().chain(self.numerical()).copied()
    }

    pub fn dim(&self) -> usize {
        self.categorical().len() + self.numerical().len()
    }
}

/// Raw (pre-normalization) feature values in feature-set order.
pub fn raw_feature_vector(record: &FlowRecord, fs: &FeatureSet) -> Vec<f64> {
    fs.features().map(|f| f.value(record)).collect()
}
