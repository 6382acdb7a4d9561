//! Turns an unordered batch of flows into fixed-length flow sequences.
//!
//! Flows are sorted by their packet statistics, cut into `N` bins of
//! near-equal size, and laid out as an `N x ceil(F/N)` matrix whose columns
//! are the sequences. Position `i` of every sequence therefore comes from the
//! same region of the sorted order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{FlowRecord, Label};

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_TRAIN_SEQUENCES: usize = 15_000;

/// Stable ascending order on `(mean_pkt_len, total_pkts, proto, src_port, dst_port)`.
pub fn sort_flows(batch: &[FlowRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&batch[a], &batch[b]);
        x.mean_pkt_len
            .total_cmp(&y.mean_pkt_len)
            .then(x.total_pkts.cmp(&y.total_pkts))
            .then(x.proto.cmp(&y.proto))
            .then(x.src_port.cmp(&y.src_port))
            .then(x.dst_port.cmp(&y.dst_port))
    });
    idx
}

/// Equal-frequency bin sizes: the first `F mod N` bins hold one extra flow.
pub fn bin_sizes(f: usize, n: usize) -> Vec<usize> {
    assert!(n >= 1, "at least one bin");
    let (q, r) = (f / n, f % n);
    (0..n).map(|i| if i < r { q + 1 } else { q }).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowMatrix {
    pub n_bins: usize,
    pub n_cols: usize,
    /// Row-major `[n_bins x n_cols]` indices into the source batch.
    pub cells: Vec<usize>,
    pub dup_mask: Vec<bool>,
    /// Genuine flow count per bin.
    pub bin_len: Vec<usize>,
}

impl FlowMatrix {
    pub fn cell(&self, bin: usize, col: usize) -> usize {
        self.cells[bin * self.n_cols + col]
    }

    pub fn is_dup(&self, bin: usize, col: usize) -> bool {
        self.dup_mask[bin * self.n_cols + col]
    }

    /// Genuine members of bin `i`, in sorted order.
    pub fn bin(&self, i: usize) -> &[usize] {
        &self.cells[i * self.n_cols..i * self.n_cols + self.bin_len[i]]
    }

    pub fn dup_count(&self) -> usize {
        self.dup_mask.iter().filter(|d| **d).count()
    }
}

/// Fills bins in sorted order and pads short bins with copies of their last
/// genuine flow.
pub fn build_matrix(sorted: &[usize], n: usize) -> Result<FlowMatrix> {
    let f = sorted.len();
    if n == 0 {
        return Err(Error::Config("number of bins must be positive".into()));
    }
    if f < n {
        return Err(Error::BatchTooSmall { flows: f, min: n });
    }
    let sizes = bin_sizes(f, n);
    let n_cols = f.div_ceil(n);
    let mut cells = Vec::with_capacity(n * n_cols);
    let mut dup_mask = Vec::with_capacity(n * n_cols);
    let mut next = 0;
    for &m in &sizes {
        let members = &sorted[next..next + m];
        next += m;
        cells.extend_from_slice(members);
        dup_mask.extend(std::iter::repeat_n(false, m));
        let last = members[m - 1];
        cells.extend(std::iter::repeat_n(last, n_cols - m));
        dup_mask.extend(std::iter::repeat_n(true, n_cols - m));
    }
    Ok(FlowMatrix {
        n_bins: n,
        n_cols,
        cells,
        dup_mask,
        bin_len: sizes,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowSequence {
    pub positions: Vec<usize>,
    pub dup_mask: Vec<bool>,
    pub labels: Option<Vec<Label>>,
}

impl FlowSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Attaches labels looked up from the source batch.
    pub fn with_labels(mut self, batch: &[FlowRecord]) -> Self {
        self.labels = self.positions.iter().map(|&i| batch[i].label).collect();
        self
    }
}

/// One sequence per matrix column.
pub fn assemble_sequences(m: &FlowMatrix) -> Vec<FlowSequence> {
    (0..m.n_cols)
        .map(|c| FlowSequence {
            positions: (0..m.n_bins).map(|b| m.cell(b, c)).collect(),
            dup_mask: (0..m.n_bins).map(|b| m.is_dup(b, c)).collect(),
            labels: None,
        })
        .collect()
}

/// Column sequences first, then random sequences drawing position `i`
/// uniformly (with replacement) from bin `i`'s genuine flows, up to `count`
/// sequences in total.
pub fn sample_training_sequences(m: &FlowMatrix, count: usize, seed: u64) -> Vec<FlowSequence> {
    let mut out = assemble_sequences(m);
    out.truncate(count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < count {
        let positions = (0..m.n_bins)
            .map(|b| {
                let members = m.bin(b);
                members[rng.random_range(0..members.len())]
            })
            .collect();
        out.push(FlowSequence {
            positions,
            dup_mask: vec![false; m.n_bins],
            labels: None,
        });
    }
    out
}

fn by_timestamp(batch: &[FlowRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    idx.sort_by_key(|&i| batch[i].timestamp);
    idx
}

/// Windows over timestamp-ordered flows at offsets `0, stride, 2*stride, ...`.
pub fn sliding_window_sequences(batch: &[FlowRecord], window: usize, stride: usize) -> Result<Vec<FlowSequence>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    if batch.len() < window {
        return Err(Error::BatchTooSmall { flows: batch.len(), min: window });
    }
    let order = by_timestamp(batch);
    Ok((0..=batch.len() - window)
        .step_by(stride)
        .map(|start| FlowSequence {
            positions: order[start..start + window].to_vec(),
            dup_mask: vec![false; window],
            labels: None,
        })
        .collect())
}

/// Non-overlapping windows that cover every flow exactly once.
///
/// Windows tile the timestamp order; the last one is right-aligned to the
/// end, and the positions it shares with its predecessor are marked as
/// duplicates so each flow keeps a single verdict.
pub fn sliding_window_cover(batch: &[FlowRecord], window: usize) -> Result<Vec<FlowSequence>> {
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let f = batch.len();
    if f < window {
        return Err(Error::BatchTooSmall { flows: f, min: window });
    }
    let order = by_timestamp(batch);
    let mut out = Vec::with_capacity(f.div_ceil(window));
    let mut covered = 0;
    while covered < f {
        let start = covered.min(f - window);
        out.push(FlowSequence {
            positions: order[start..start + window].to_vec(),
            dup_mask: (start..start + window).map(|i| i < covered).collect(),
            labels: None,
        });
        covered = start + window;
    }
    Ok(out)
}
