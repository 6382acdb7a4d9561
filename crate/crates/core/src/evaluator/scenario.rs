use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::baseline::{mlp_predict, mlp_train, MlpConfig};
use super::metrics::{compute_metrics, MetricsReport};
use crate::error::{Error, Result};
use crate::flow::FeatureSet;
use crate::head;
use crate::ingest::{split, synthesize, AttackVector, Dataset, SynthesisConfig, DEFAULT_SPLIT};
use crate::model::Sequencing;
use crate::trainer::{infer, train, TrainConfig};

pub const SWEEP_LAYERS: [usize; 4] = [1, 2, 4, 8];
pub const METHOD: &str = "fsd";
pub const BASELINE: &str = "mlp";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Balanced,
    Imbalanced,
    Zeroshot,
    AblationSequencer,
    LayerSweep,
    Netflow6,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Balanced,
        ScenarioKind::Imbalanced,
        ScenarioKind::Zeroshot,
        ScenarioKind::AblationSequencer,
        ScenarioKind::LayerSweep,
        ScenarioKind::Netflow6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Balanced => "balanced",
            ScenarioKind::Imbalanced => "imbalanced",
            ScenarioKind::Zeroshot => "zeroshot",
            ScenarioKind::AblationSequencer => "ablation",
            ScenarioKind::LayerSweep => "layer_sweep",
            ScenarioKind::Netflow6 => "netflow6",
        }
    }

    /// `(n_attack, n_benign)` used when the caller gives no sizes.
    pub fn default_sizes(self) -> (usize, usize) {
        match self {
            ScenarioKind::Balanced => (2000, 2000),
            ScenarioKind::Netflow6 => (1222, 12220),
            _ => (2000, 20000),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ablation_sequencer" {
            return Ok(ScenarioKind::AblationSequencer);
        }
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                format!("unknown scenario '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seeds: Vec<u64>,
    /// `(n_attack, n_benign)`; the scenario default when unset.
    pub sizes: Option<(usize, usize)>,
    pub train: TrainConfig,
    pub mlp: MlpConfig,
    /// Also train the per-flow baseline where the scenario compares methods.
    pub baseline: bool,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            seeds: vec![0],
            sizes: None,
            train: TrainConfig::default(),
            mlp: MlpConfig::default(),
            baseline: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioResult {
    /// One report per method, averaged over seeds.
    pub summary: Vec<MetricsReport>,
    pub per_seed: Vec<MetricsReport>,
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn synth(n_attack: usize, n_benign: usize, vectors: &[AttackVector], seed: u64) -> Result<Dataset> {
    synthesize(&SynthesisConfig {
        n_attack,
        n_benign,
        attack_vectors: vectors.to_vec(),
        rng_seed: seed,
        ..SynthesisConfig::default()
    })
}

/// Offset that keeps dataset B's benign traffic distinct from dataset A's.
const ZERO_SHOT_B_SEED: u64 = 0x00b0_0000;

fn datasets(kind: ScenarioKind, (n_attack, n_benign): (usize, usize), seed: u64) -> Result<Splits> {
    match kind {
        ScenarioKind::Zeroshot => {
            let a = synth(n_attack, n_benign, &AttackVector::ZERO_SHOT_TRAIN, seed)?;
            let unseen = AttackVector::complement(&AttackVector::ZERO_SHOT_TRAIN);
            let test = synth(n_attack, n_benign, &unseen, seed ^ ZERO_SHOT_B_SEED)?;
            let (train, val, _) = split(&a, DEFAULT_SPLIT)?;
            Ok(Splits { train, val, test })
        }
        _ => {
            let ds = synth(n_attack, n_benign, &AttackVector::DEFAULT_MIX, seed)?;
            let ds = if kind == ScenarioKind::Netflow6 {
                ds.with_feature_set(FeatureSet::NETFLOW6)
            } else {
                ds
            };
            let (train, val, test) = split(&ds, DEFAULT_SPLIT)?;
            Ok(Splits { train, val, test })
        }
    }
}

fn evaluate(verdicts: Vec<bool>, ds: &Dataset, elapsed_ms: f64) -> Result<MetricsReport> {
    let mut r = compute_metrics(&verdicts, &ds.labels())?;
    r.runtime_ms = elapsed_ms / ds.len().max(1) as f64;
    Ok(r)
}

fn run_fsd(s: &Splits, cfg: &TrainConfig) -> Result<MetricsReport> {
    let ckpt = train(&s.train, &s.val, cfg)?;
    let t = Instant::now();
    let out = infer(&s.test, &ckpt)?;
    evaluate(out.verdicts(), &s.test, t.elapsed().as_secs_f64() * 1e3)
}

fn run_mlp(s: &Splits, cfg: &MlpConfig) -> Result<MetricsReport> {
    let model = mlp_train(&s.train, &s.val, cfg)?;
    let t = Instant::now();
    let p = mlp_predict(&model, &s.test)?;
    let verdicts = p.iter().map(|&p| head::is_attack(p as f64)).collect();
    evaluate(verdicts, &s.test, t.elapsed().as_secs_f64() * 1e3)
}

fn echo(cfg: &ScenarioConfig, sizes: (usize, usize)) -> String {
    let t = &cfg.train;
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    format!(
        "seeds={} attack={} benign={} layers={} d_model={} heads={} bins={} epochs={} sequences={} lr={} mask={} norm={} frozen={}",
        seeds.join("/"),
        sizes.0,
        sizes.1,
        t.n_layers,
        t.d_model,
        t.n_heads,
        t.n_bins,
        t.epochs,
        t.train_sequence_count,
        t.learning_rate,
        t.mask_mode,
        t.norm_scope,
        t.backbone_frozen
    )
}

fn average(kind: ScenarioKind, method: &str, runs: &[&MetricsReport], config: &str) -> MetricsReport {
    let n = runs.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
    MetricsReport {
        tp: runs.iter().map(|r| r.tp).sum(),
        fp: runs.iter().map(|r| r.fp).sum(),
        tn: runs.iter().map(|r| r.tn).sum(),
        fn_: runs.iter().map(|r| r.fn_).sum(),
        accuracy: mean(|r| r.accuracy),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        runtime_ms: mean(|r| r.runtime_ms),
        scenario: kind.name().to_string(),
        method: method.to_string(),
        config: config.to_string(),
    }
}

/// Synthesizes the scenario's data for every seed, trains and evaluates each
/// method on the test split, and averages per method.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    run_scenario_with_progress(cfg, |_| {})
}

pub fn run_scenario_with_progress(cfg: &ScenarioConfig, mut progress: impl FnMut(&MetricsReport)) -> Result<ScenarioResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let kind = cfg.kind;
    let sizes = cfg.sizes.unwrap_or(kind.default_sizes());
    let config = echo(cfg, sizes);
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let data = datasets(kind, sizes, seed)?;
        let base = TrainConfig {
            rng_seed: seed,
            ..cfg.train.clone()
        };
        let mut arms: Vec<(String, TrainConfig)> = Vec::new();
        match kind {
            ScenarioKind::AblationSequencer => {
                arms.push((METHOD.into(), base.clone()));
                arms.push((
                    format!("{METHOD}-sliding"),
                    TrainConfig {
                        sequencing: Sequencing::Sliding,
                        ..base
                    },
                ));
            }
            ScenarioKind::LayerSweep => {
                for layers in SWEEP_LAYERS {
                    arms.push((
                        format!("{METHOD}-L{layers}"),
                        TrainConfig {
                            n_layers: layers,
                            ..base.clone()
                        },
                    ));
                }
            }
            _ => arms.push((METHOD.into(), base)),
        }
        for (method, tcfg) in arms {
            let r = run_fsd(&data, &tcfg)?.labeled(kind.name(), method);
            progress(&r);
            per_seed.push(MetricsReport {
                config: format!("seed={seed}"),
                ..r
            });
        }
        let compares = matches!(
            kind,
            ScenarioKind::Balanced | ScenarioKind::Imbalanced | ScenarioKind::Zeroshot | ScenarioKind::Netflow6
        );
        if cfg.baseline && compares {
            let mcfg = MlpConfig {
                rng_seed: seed,
                norm_scope: cfg.train.norm_scope,
                ..cfg.mlp.clone()
            };
            let r = run_mlp(&data, &mcfg)?.labeled(kind.name(), BASELINE);
            progress(&r);
            per_seed.push(MetricsReport {
                config: format!("seed={seed}"),
                ..r
            });
        }
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in &per_seed {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let summary = methods
        .iter()
        .map(|m| {
            let runs: Vec<&MetricsReport> = per_seed.iter().filter(|r| r.method == *m).collect();
            average(kind, m, &runs, &config)
        })
        .collect();
    Ok(ScenarioResult { summary, per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Label;

    fn tiny(kind: ScenarioKind) -> ScenarioConfig {
        ScenarioConfig {
            seeds: vec![1, 2],
            sizes: Some((60, 300)),
            train: TrainConfig {
                epochs: 1,
                n_bins: 8,
                train_sequence_count: 40,
                batch_sequences: 8,
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                ..TrainConfig::default()
            },
            mlp: MlpConfig {
                epochs: 1,
                hidden: vec![8],
                ..MlpConfig::default()
            },
            ..ScenarioConfig::new(kind)
        }
    }

    #[test]
    fn names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert_eq!("ablation_sequencer".parse::<ScenarioKind>().unwrap(), ScenarioKind::AblationSequencer);
        assert!("nope".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn zero_shot_templates_are_disjoint() {
        let s = datasets(ScenarioKind::Zeroshot, (200, 200), 3).unwrap();
        let train_ports: std::collections::HashSet<u16> = s
            .train
            .flows()
            .iter()
            .chain(s.val.flows())
            .filter(|f| f.label == Some(Label::Attack) && f.proto == 17)
            .map(|f| f.src_port)
            .collect();
        let unseen = AttackVector::complement(&AttackVector::ZERO_SHOT_TRAIN);
        assert_eq!(unseen.len(), 8);
        assert!(unseen.iter().all(|v| !AttackVector::ZERO_SHOT_TRAIN.contains(v)));
        for p in [53, 123] {
            assert!(train_ports.contains(&p));
        }
        let test_attack_syn = s
            .test
            .flows()
            .iter()
            .filter(|f| f.label == Some(Label::Attack))
            .any(|f| f.src_port == 53 || f.src_port == 123);
        assert!(!test_attack_syn);
        assert_eq!(s.test.len(), 400);
    }

    #[test]
    fn netflow6_uses_six_features() {
        let s = datasets(ScenarioKind::Netflow6, (50, 100), 0).unwrap();
        assert_eq!(s.train.feature_set, FeatureSet::NETFLOW6);
    }

    #[test]
    fn ablation_arms_differ_only_in_sequencing() {
        let result = run_scenario(&tiny(ScenarioKind::AblationSequencer)).unwrap();
        let methods: Vec<&str> = result.summary.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, vec!["fsd", "fsd-sliding"]);
        assert_eq!(result.per_seed.len(), 4);
    }

    #[test]
    fn comparison_scenarios_include_baseline_and_reproduce() {
        let cfg = tiny(ScenarioKind::Imbalanced);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.summary.len(), 2);
        for (x, y) in a.summary.iter().zip(&b.summary) {
            assert_eq!((x.f1, x.accuracy, x.tp, x.fp), (y.f1, y.accuracy, y.tp, y.fp));
            assert!(x.runtime_ms >= 0.0);
        }
        let f1s: Vec<f64> = a.per_seed.iter().filter(|r| r.method == "fsd").map(|r| r.f1).collect();
        assert!((a.summary[0].f1 - (f1s[0] + f1s[1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn layer_sweep_reports_each_depth() {
        let cfg = ScenarioConfig {
            seeds: vec![0],
            ..tiny(ScenarioKind::LayerSweep)
        };
        let r = run_scenario(&cfg).unwrap();
        let methods: Vec<&str> = r.summary.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, vec!["fsd-L1", "fsd-L2", "fsd-L4", "fsd-L8"]);
    }
}
