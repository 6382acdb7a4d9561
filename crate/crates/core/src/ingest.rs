//! Flow datasets: CSV ingestion, synthetic carpet-bombing generation and
//! chronological splitting.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};
use crate::flow::{FeatureSet, FlowRecord, Label};
use crate::tokenizer;

pub const CSV_HEADER: [&str; 13] = [
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "proto",
    "total_bytes",
    "total_pkts",
    "mean_pkt_len",
    "max_pkt_len",
    "min_pkt_len",
    "std_pkt_len",
    "timestamp",
    "label",
];

/// A validated batch of flows, either fully labeled or fully unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    flows: Vec<FlowRecord>,
    pub feature_set: FeatureSet,
    pub provenance: String,
}

impl Dataset {
    pub fn new(flows: Vec<FlowRecord>, feature_set: FeatureSet, provenance: impl Into<String>) -> Result<Self> {
        let flows = flows
            .into_iter()
            .map(FlowRecord::validate)
            .collect::<Result<Vec<_>, _>>()?;
        let labeled = flows.iter().filter(|f| f.label.is_some()).count();
        if labeled != 0 && labeled != flows.len() {
            return Err(Error::Config(format!(
                "dataset mixes labeled and unlabeled flows ({labeled} of {} labeled)",
                flows.len()
            )));
        }
        Ok(Self {
            flows,
            feature_set,
            provenance: provenance.into(),
        })
    }

    pub fn flows(&self) -> &[FlowRecord] {
        &self.flows
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.flows.first().is_some_and(|f| f.label.is_some())
    }

    /// Labels in flow order. Panics on an unlabeled dataset.
    pub fn labels(&self) -> Vec<Label> {
        self.flows
            .iter()
            .map(|f| f.label.expect("labeled dataset"))
            .collect()
    }

    pub fn attack_count(&self) -> usize {
        self.flows.iter().filter(|f| f.label == Some(Label::Attack)).count()
    }

    pub fn with_feature_set(mut self, feature_set: FeatureSet) -> Self {
        self.feature_set = feature_set;
        self
    }
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: usize, line: usize) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {} has invalid value '{raw}'", CSV_HEADER[idx]),
    })
}

/// Reads flows from CSV with the fixed 13-column header.
pub fn parse_csv(path: impl AsRef<Path>, fs: FeatureSet) -> Result<Dataset> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_csv_str(&text, fs, path.display().to_string())
}

pub fn parse_csv_str(text: &str, fs: FeatureSet, provenance: impl Into<String>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| Error::Parse { line: 1, message: e.to_string() })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be '{}'", CSV_HEADER.join(",")),
        });
    }
    let mut flows = Vec::new();
    let mut labeled = None;
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let label = match rec.get(12).unwrap_or("") {
            "" => None,
            "0" => Some(Label::Benign),
            "1" => Some(Label::Attack),
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("column label has invalid value '{other}'"),
                })
            }
        };
        if *labeled.get_or_insert(label.is_some()) != label.is_some() {
            return Err(Error::Parse {
                line,
                message: "labeled and unlabeled rows are mixed".into(),
            });
        }
        let record = FlowRecord {
            src_ip: rec[0].to_string(),
            dst_ip: rec[1].to_string(),
            src_port: field(&rec, 2, line)?,
            dst_port: field(&rec, 3, line)?,
            proto: field(&rec, 4, line)?,
            total_bytes: field(&rec, 5, line)?,
            total_pkts: field(&rec, 6, line)?,
            mean_pkt_len: field(&rec, 7, line)?,
            max_pkt_len: field(&rec, 8, line)?,
            min_pkt_len: field(&rec, 9, line)?,
            std_pkt_len: field(&rec, 10, line)?,
            timestamp: field(&rec, 11, line)?,
            label,
        };
        let record = record
            .validate()
            .map_err(|e| ValidationError { line: Some(line), ..e })?;
        flows.push(record);
    }
    Dataset::new(flows, fs, provenance)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv_to(ds.flows(), &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv_to(flows: &[FlowRecord], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for f in flows {
        let label = match f.label {
            Some(l) => (l as u8).to_string(),
            None => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.src_ip,
            f.dst_ip,
            f.src_port,
            f.dst_port,
            f.proto,
            f.total_bytes,
            f.total_pkts,
            f.mean_pkt_len,
            f.max_pkt_len,
            f.min_pkt_len,
            f.std_pkt_len,
            f.timestamp,
            label
        )?;
    }
    Ok(())
}

/// Parametric attack templates, one per reflection/flood vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackVector {
    Syn,
    Dns,
    Ntp,
    Ldap,
    Mssql,
    Netbios,
    Snmp,
    Ssdp,
    Udp,
    UdpLag,
    Tftp,
}

impl AttackVector {
    pub const ALL: [AttackVector; 11] = [
        AttackVector::Syn,
        AttackVector::Dns,
        AttackVector::Ntp,
        AttackVector::Ldap,
        AttackVector::Mssql,
        AttackVector::Netbios,
        AttackVector::Snmp,
        AttackVector::Ssdp,
        AttackVector::Udp,
        AttackVector::UdpLag,
        AttackVector::Tftp,
    ];

    /// Vectors in the default carpet-bombing mix.
    pub const DEFAULT_MIX: [AttackVector; 3] = [AttackVector::Dns, AttackVector::Ldap, AttackVector::Snmp];

    /// Training-side templates for the zero-shot split.
    pub const ZERO_SHOT_TRAIN: [AttackVector; 3] = [AttackVector::Syn, AttackVector::Dns, AttackVector::Ntp];

    pub fn name(self) -> &'static str {
        match self {
            AttackVector::Syn => "syn",
            AttackVector::Dns => "dns",
            AttackVector::Ntp => "ntp",
            AttackVector::Ldap => "ldap",
            AttackVector::Mssql => "mssql",
            AttackVector::Netbios => "netbios",
            AttackVector::Snmp => "snmp",
            AttackVector::Ssdp => "ssdp",
            AttackVector::Udp => "udp",
            AttackVector::UdpLag => "udplag",
            AttackVector::Tftp => "tftp",
        }
    }

    /// Vectors not in `used`, in canonical order.
    pub fn complement(used: &[AttackVector]) -> Vec<AttackVector> {
        Self::ALL.iter().copied().filter(|v| !used.contains(v)).collect()
    }

    fn template(self) -> AttackTemplate {
        use PortDist::*;
        let (proto, src, dst, len) = match self {
            AttackVector::Syn => (6, Ephemeral, Choice(&[80, 443]), (54, 60)),
            AttackVector::Dns => (17, Fixed(53), Ephemeral, (1400, 1500)),
            AttackVector::Ntp => (17, Fixed(123), Ephemeral, (468, 490)),
            AttackVector::Ldap => (17, Fixed(389), Ephemeral, (1380, 1480)),
            AttackVector::Mssql => (17, Fixed(1434), Ephemeral, (300, 420)),
            AttackVector::Netbios => (17, Fixed(137), Ephemeral, (220, 300)),
            AttackVector::Snmp => (17, Fixed(161), Ephemeral, (1350, 1480)),
            AttackVector::Ssdp => (17, Fixed(1900), Ephemeral, (280, 380)),
            AttackVector::Udp => (17, Ephemeral, Ephemeral, (500, 1000)),
            AttackVector::UdpLag => (17, Ephemeral, Choice(&[27015, 3074]), (1000, 1300)),
            AttackVector::Tftp => (17, Fixed(69), Ephemeral, (516, 560)),
        };
        AttackTemplate { proto, src, dst, len }
    }
}

impl fmt::Display for AttackVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack vector '{s}'")))
    }
}

#[derive(Clone, Copy)]
enum PortDist {
    Fixed(u16),
    Choice(&'static [u16]),
    Ephemeral,
}

impl PortDist {
    fn sample(self, rng: &mut impl Rng) -> u16 {
        match self {
            PortDist::Fixed(p) => p,
            PortDist::Choice(ps) => *ps.choose(rng).expect("non-empty port set"),
            PortDist::Ephemeral => rng.random_range(1024..=65535),
        }
    }
}

struct AttackTemplate {
    proto: u8,
    src: PortDist,
    dst: PortDist,
    /// Per-packet length range (inclusive).
    len: (u32, u32),
}

/// Attack flows are low-rate: one to three packets per collection window.
const ATTACK_PKTS: [(u64, u32); 3] = [(1, 6), (2, 3), (3, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub n_attack: usize,
    pub n_benign: usize,
    pub attack_vectors: Vec<AttackVector>,
    /// Number of /24 victim segments.
    pub victim_subnets: u32,
    pub rng_seed: u64,
    /// Half-open `[start, end)` in milliseconds.
    pub timestamp_range: (u64, u64),
}

/// 2024-01-01T00:00:00Z
const DEFAULT_EPOCH_MS: u64 = 1_704_067_200_000;

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_attack: 2000,
            n_benign: 20000,
            attack_vectors: AttackVector::DEFAULT_MIX.to_vec(),
            victim_subnets: 10,
            rng_seed: 0,
            timestamp_range: (DEFAULT_EPOCH_MS, DEFAULT_EPOCH_MS + 600_000),
        }
    }
}

impl SynthesisConfig {
    pub const MAX_VICTIM_SUBNETS: u32 = 512;

    fn check(&self) -> Result<()> {
        if self.attack_vectors.is_empty() {
            return Err(Error::Config("attack_vectors must not be empty".into()));
        }
        if self.n_attack == 0 || self.n_benign == 0 {
            return Err(Error::Config("n_attack and n_benign must be positive".into()));
        }
        if !(1..=Self::MAX_VICTIM_SUBNETS).contains(&self.victim_subnets) {
            return Err(Error::Config(format!(
                "victim_subnets must be in 1..={}, got {}",
                Self::MAX_VICTIM_SUBNETS,
                self.victim_subnets
            )));
        }
        if self.timestamp_range.0 >= self.timestamp_range.1 {
            return Err(Error::Config("timestamp_range start must precede end".into()));
        }
        Ok(())
    }
}

/// Victim address `index` inside consecutive /24s starting at 198.18.0.0.
pub fn victim_ip(index: u32) -> String {
    let addr = (198u32 << 24 | 18 << 16) + index;
    ipv4(addr)
}

fn ipv4(addr: u32) -> String {
    let [a, b, c, d] = addr.to_be_bytes();
    format!("{a}.{b}.{c}.{d}")
}

/// Builds a flow from explicit packet lengths so every record invariant holds
/// by construction.
fn flow_from_packets(lengths: &[u32]) -> FlowRecord {
    let n = lengths.len() as u64;
    let total: u64 = lengths.iter().map(|&l| l as u64).sum();
    let mean = total as f64 / n as f64;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    FlowRecord {
        src_ip: String::new(),
        dst_ip: String::new(),
        src_port: 0,
        dst_port: 0,
        proto: 0,
        total_bytes: total,
        total_pkts: n,
        mean_pkt_len: mean,
        max_pkt_len: *lengths.iter().max().expect("at least one packet"),
        min_pkt_len: *lengths.iter().min().expect("at least one packet"),
        std_pkt_len: if n == 1 { 0.0 } else { var.sqrt() },
        timestamp: 0,
        label: None,
    }
}

fn weighted<T: Copy>(rng: &mut impl Rng, table: &[(T, u32)]) -> T {
    let total: u32 = table.iter().map(|e| e.1).sum();
    let mut pick = rng.random_range(0..total);
    for &(v, w) in table {
        if pick < w {
            return v;
        }
        pick -= w;
    }
    table[table.len() - 1].0
}

fn attack_flow(rng: &mut impl Rng, vector: AttackVector, cfg: &SynthesisConfig) -> FlowRecord {
    let t = vector.template();
    let pkts = weighted(rng, &ATTACK_PKTS);
    let lengths: Vec<u32> = (0..pkts).map(|_| rng.random_range(t.len.0..=t.len.1)).collect();
    let mut f = flow_from_packets(&lengths);
    f.proto = t.proto;
    f.src_port = t.src.sample(rng);
    f.dst_port = t.dst.sample(rng);
    f.src_ip = ipv4(rng.random());
    f.dst_ip = victim_ip(rng.random_range(0..cfg.victim_subnets * 256));
    f.label = Some(Label::Attack);
    f
}

#[derive(Clone, Copy)]
enum BenignApp {
    Web,
    Quic,
    Dns,
    Ntp,
    OtherTcp,
    Icmp,
    OtherUdp,
}

const BENIGN_MIX: [(BenignApp, u32); 7] = [
    (BenignApp::Web, 45),
    (BenignApp::Quic, 10),
    (BenignApp::Dns, 15),
    (BenignApp::Ntp, 3),
    (BenignApp::OtherTcp, 12),
    (BenignApp::Icmp, 5),
    (BenignApp::OtherUdp, 10),
];

fn lognormal_count(rng: &mut impl Rng, median: f64, sigma: f64, cap: u64) -> u64 {
    let d = LogNormal::new(median.ln(), sigma).expect("valid log-normal");
    (d.sample(rng).round() as u64).clamp(1, cap)
}

/// Bimodal packet sizes: acknowledgements/control packets and data packets.
fn mixed_lengths(rng: &mut impl Rng, n: u64, small: (u32, u32), large: (u32, u32)) -> Vec<u32> {
    let large_share: f64 = rng.random_range(0.1..0.9);
    (0..n)
        .map(|_| {
            if rng.random_bool(large_share) {
                rng.random_range(large.0..=large.1)
            } else {
                rng.random_range(small.0..=small.1)
            }
        })
        .collect()
}

fn benign_flow(rng: &mut impl Rng, cfg: &SynthesisConfig) -> FlowRecord {
    let eph = |rng: &mut dyn rand::RngCore| rng.random_range(1024..=65535u16);
    let app = weighted(rng, &BENIGN_MIX);
    let (proto, service, lengths): (u8, u16, Vec<u32>) = match app {
        BenignApp::Web => {
            let n = lognormal_count(rng, 20.0, 1.3, 4000);
            let port = *[443u16, 80].choose(rng).expect("non-empty");
            (6, port, mixed_lengths(rng, n, (40, 90), (200, 1500)))
        }
        BenignApp::Quic => {
            let n = lognormal_count(rng, 15.0, 1.2, 4000);
            (17, 443, mixed_lengths(rng, n, (60, 120), (900, 1350)))
        }
        BenignApp::Dns => {
            let n = rng.random_range(1..=2u64);
            let big = rng.random_bool(0.03);
            let range = if big { (900, 1500) } else { (60, 400) };
            (17, 53, (0..n).map(|_| rng.random_range(range.0..=range.1)).collect())
        }
        BenignApp::Ntp => {
            let n = rng.random_range(1..=2u64);
            (17, 123, (0..n).map(|_| rng.random_range(76..=90)).collect())
        }
        BenignApp::OtherTcp => {
            let n = lognormal_count(rng, 20.0, 1.5, 4000);
            let port = *[22u16, 25, 993, 3306, 8080].choose(rng).expect("non-empty");
            (6, port, mixed_lengths(rng, n, (40, 90), (100, 1500)))
        }
        BenignApp::Icmp => {
            let n = rng.random_range(1..=10u64);
            let len = rng.random_range(64..=98);
            (1, 0, vec![len; n as usize])
        }
        BenignApp::OtherUdp => {
            let n = lognormal_count(rng, 5.0, 1.5, 4000);
            let port = eph(rng);
            (17, port, (0..n).map(|_| rng.random_range(60..=1400)).collect())
        }
    };
    let mut f = flow_from_packets(&lengths);
    f.proto = proto;
    if proto == 1 {
        f.src_port = 0;
        f.dst_port = 0;
    } else if rng.random_bool(0.5) {
        f.src_port = service;
        f.dst_port = eph(rng);
    } else {
        f.src_port = eph(rng);
        f.dst_port = service;
    }
    f.src_ip = ipv4(rng.random());
    f.dst_ip = if rng.random_bool(0.5) {
        victim_ip(rng.random_range(0..cfg.victim_subnets * 256))
    } else {
        ipv4(rng.random())
    };
    f.label = Some(Label::Benign);
    f
}

/// Mixes attack and benign flows into one labeled carpet-bombing dataset.
///
/// Attack destinations are uniform over `victim_subnets * 256` addresses,
/// attack sources are uniformly random, and every timestamp is uniform over
/// the configured range. The result is ordered by timestamp.
pub fn synthesize(cfg: &SynthesisConfig) -> Result<Dataset> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut flows = Vec::with_capacity(cfg.n_attack + cfg.n_benign);
    for _ in 0..cfg.n_attack {
        let vector = *cfg.attack_vectors.choose(&mut rng).expect("checked non-empty");
        flows.push(attack_flow(&mut rng, vector, cfg));
    }
    for _ in 0..cfg.n_benign {
        flows.push(benign_flow(&mut rng, cfg));
    }
    let (start, end) = cfg.timestamp_range;
    for f in &mut flows {
        f.timestamp = rng.random_range(start..end);
    }
    flows.sort_by_key(|f| f.timestamp);
    let names: Vec<&str> = cfg.attack_vectors.iter().map(|v| v.name()).collect();
    Dataset::new(
        flows,
        FeatureSet::default(),
        format!(
            "synthetic: {} attack [{}] + {} benign, {} victim /24s, seed {}",
            cfg.n_attack,
            names.join(","),
            cfg.n_benign,
            cfg.victim_subnets,
            cfg.rng_seed
        ),
    )
}

/// Empirical distributions of pairwise cosine similarity within each class.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityStats {
    /// Sorted ascending.
    pub attack: Vec<f64>,
    /// Sorted ascending.
    pub benign: Vec<f64>,
}

impl SimilarityStats {
    fn above(sorted: &[f64], threshold: f64) -> f64 {
        if sorted.is_empty() {
            return 0.0;
        }
        let at_or_below = sorted.partition_point(|&s| s <= threshold);
        (sorted.len() - at_or_below) as f64 / sorted.len() as f64
    }

    pub fn attack_fraction_above(&self, threshold: f64) -> f64 {
        Self::above(&self.attack, threshold)
    }

    pub fn benign_fraction_above(&self, threshold: f64) -> f64 {
        Self::above(&self.benign, threshold)
    }

    /// Empirical CDF value `P(s <= x)` for the attack class.
    pub fn attack_cdf(&self, x: f64) -> f64 {
        1.0 - self.attack_fraction_above(x)
    }

    pub fn benign_cdf(&self, x: f64) -> f64 {
        1.0 - self.benign_fraction_above(x)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn pairwise(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(vectors.len() * vectors.len().saturating_sub(1) / 2);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            out.push(cosine(&vectors[i], &vectors[j]));
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Evenly spaced subsample of at most `cap` items, preserving order.
fn thin<T: Clone>(items: Vec<T>, cap: Option<usize>) -> Vec<T> {
    match cap {
        Some(cap) if items.len() > cap && cap > 0 => {
            (0..cap).map(|i| items[i * items.len() / cap].clone()).collect()
        }
        _ => items,
    }
}

/// Pairwise cosine similarities of normalized feature vectors, per class.
///
/// Normalization statistics come from the whole dataset. `max_per_class`
/// thins each class to an evenly spaced subsample so the all-pairs pass stays
/// tractable on large benign populations.
pub fn attack_similarity_stats(
    ds: &Dataset,
    fs: &FeatureSet,
    max_per_class: Option<usize>,
) -> Result<SimilarityStats> {
    if !ds.is_labeled() {
        return Err(Error::InsufficientData("similarity statistics need labeled flows".into()));
    }
    let stats = tokenizer::compute_stats(ds.flows(), fs, tokenizer::NormScope::Batch)?;
    let (mut attack, mut benign) = (Vec::new(), Vec::new());
    for f in ds.flows() {
        let v = tokenizer::normalize(f, &stats, fs);
        match f.label {
            Some(Label::Attack) => attack.push(v),
            _ => benign.push(v),
        }
    }
    if attack.len() < 2 || benign.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 flows per class, have {} attack and {} benign",
            attack.len(),
            benign.len()
        )));
    }
    Ok(SimilarityStats {
        attack: pairwise(&thin(attack, max_per_class)),
        benign: pairwise(&thin(benign, max_per_class)),
    })
}

/// Sorts by timestamp (stable) and cuts contiguous train/val/test parts.
///
/// Part sizes are `floor(train*F)`, `floor(val*F)` and the remainder.
pub fn split(ds: &Dataset, ratios: (f64, f64, f64)) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let mut flows = ds.flows().to_vec();
    flows.sort_by_key(|f| f.timestamp);
    let total = flows.len() as f64;
    let n_train = (a * total + 1e-9).floor() as usize;
    let n_val = (b * total + 1e-9).floor() as usize;
    let test = flows.split_off(n_train + n_val);
    let val = flows.split_off(n_train);
    let part = |flows: Vec<FlowRecord>, name: &str| Dataset {
        flows,
        feature_set: ds.feature_set,
        provenance: format!("{} [{name}]", ds.provenance),
    };
    Ok((part(flows, "train"), part(val, "val"), part(test, "test")))
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);
