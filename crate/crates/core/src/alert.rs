//! Operator-facing summary of the flows flagged in one detection batch.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowRecord;

pub const DEFAULT_TOP_N: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl From<&FlowRecord> for FiveTuple {
    fn from(f: &FlowRecord) -> Self {
        Self {
            src_ip: f.src_ip.clone(),
            dst_ip: f.dst_ip.clone(),
            src_port: f.src_port,
            dst_port: f.dst_port,
            proto: f.proto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackFlow {
    pub tuple: FiveTuple,
    pub bytes: u64,
    pub pkts: u64,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertSummary {
    /// Flagged flows in batch order.
    pub attacks: Vec<AttackFlow>,
    pub attack_flow_count: usize,
    pub attack_bytes: u64,
    pub attack_pkts: u64,
    /// `(source ip, flagged flow count)`, most active first.
    pub top_sources: Vec<(String, usize)>,
    /// First and last timestamp of the whole batch, ms since the epoch.
    pub window: Option<(u64, u64)>,
    pub batch_flows: usize,
}

fn ip_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<IpAddr>(), b.parse::<IpAddr>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Ties in the source ranking are broken by ascending address.
pub fn summarize(flows: &[FlowRecord], verdicts: &[bool], top_n: usize) -> Result<AlertSummary> {
    if flows.len() != verdicts.len() {
        return Err(Error::LengthMismatch {
            left: flows.len(),
            right: verdicts.len(),
        });
    }
    let attacks: Vec<AttackFlow> = flows
        .iter()
        .zip(verdicts)
        .filter(|(_, &v)| v)
        .map(|(f, _)| AttackFlow {
            tuple: f.into(),
            bytes: f.total_bytes,
            pkts: f.total_pkts,
            timestamp: f.timestamp,
        })
        .collect();
    let mut per_source: HashMap<&str, usize> = HashMap::new();
    for a in &attacks {
        *per_source.entry(a.tuple.src_ip.as_str()).or_default() += 1;
    }
    let mut top: Vec<(&str, usize)> = per_source.into_iter().collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| ip_order(a.0, b.0)));
    top.truncate(top_n);
    let window = flows
        .iter()
        .map(|f| f.timestamp)
        .fold(None, |w: Option<(u64, u64)>, t| Some(w.map_or((t, t), |(lo, hi)| (lo.min(t), hi.max(t)))));
    Ok(AlertSummary {
        attack_flow_count: attacks.len(),
        attack_bytes: attacks.iter().map(|a| a.bytes).sum(),
        attack_pkts: attacks.iter().map(|a| a.pkts).sum(),
        top_sources: top.into_iter().map(|(ip, n)| (ip.to_string(), n)).collect(),
        window,
        batch_flows: flows.len(),
        attacks,
    })
}

impl AlertSummary {
    /// Sectioned plain text for operators.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[window]");
        match self.window {
            Some((lo, hi)) => {
                let _ = writeln!(s, "start_ms = {lo}\nend_ms = {hi}");
            }
            None => {
                let _ = writeln!(s, "empty batch");
            }
        }
        let _ = writeln!(s, "\n[volume]");
        let _ = writeln!(s, "batch_flows = {}", self.batch_flows);
        let _ = writeln!(s, "attack_flows = {}", self.attack_flow_count);
        let _ = writeln!(s, "attack_bytes = {}", self.attack_bytes);
        let _ = writeln!(s, "attack_pkts = {}", self.attack_pkts);
        let _ = writeln!(s, "\n[top_sources]");
        for (rank, (ip, n)) in self.top_sources.iter().enumerate() {
            let _ = writeln!(s, "{}. {ip} {n}", rank + 1);
        }
        let _ = writeln!(s, "\n[attack_flows]");
        for a in &self.attacks {
            let t = &a.tuple;
            let _ = writeln!(
                s,
                "{}:{} -> {}:{} proto {} bytes {} pkts {}",
                t.src_ip, t.src_port, t.dst_ip, t.dst_port, t.proto, a.bytes, a.pkts
            );
        }
        s
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["src_ip", "dst_ip", "src_port", "dst_port", "proto", "total_bytes", "total_pkts", "timestamp"])
            .map_err(io)?;
        for a in &self.attacks {
            let t = &a.tuple;
            w.write_record([
                t.src_ip.clone(),
                t.dst_ip.clone(),
                t.src_port.to_string(),
                t.dst_port.to_string(),
                t.proto.to_string(),
                a.bytes.to_string(),
                a.pkts.to_string(),
                a.timestamp.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}
