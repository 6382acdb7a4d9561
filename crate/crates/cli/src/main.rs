//! `fsd`: synthesize flow datasets, train and run the detector, evaluate
//! scenarios and render reports.

mod settings;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use fsd::alert::{summarize, DEFAULT_TOP_N};
use fsd::backbone::MaskMode;
use fsd::evaluator::{
    compute_metrics, emit_report, parse_report_csv, run_scenario_with_progress, MetricsReport, ReportFormat, ScenarioConfig,
    ScenarioKind,
};
use fsd::flow::{FeatureMode, FeatureSet};
use fsd::ingest::{parse_csv, split, synthesize, write_csv, write_csv_to, AttackVector, SynthesisConfig, DEFAULT_SPLIT};
use fsd::model::Sequencing;
use fsd::tokenizer::NormScope;
use fsd::trainer::{infer, load_checkpoint, save_checkpoint, train_with_progress, TrainConfig};
use settings::{ConfigFile, List};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 1.
    Usage(String),
    /// Unreadable, invalid or insufficient data; exit code 2.
    Data(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<fsd::Error> for CliError {
    fn from(e: fsd::Error) -> Self {
        match e {
            fsd::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(what: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", what.display()))
}

#[derive(Parser)]
#[command(name = "fsd", version, about = "Carpet-bombing DDoS detection over flow records")]
struct Cli {
    /// `key = value` file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic flow dataset as CSV.
    Synth(SynthArgs),
    /// Train a detector on a labeled CSV and write a checkpoint.
    Train(TrainArgs),
    /// Classify every flow of a CSV batch and summarize the attack.
    Detect(DetectArgs),
    /// Run an evaluation scenario and write report CSV and SVG.
    Eval(EvalArgs),
    /// Merge report CSVs and render them as CSV or SVG.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    attack: Option<usize>,
    #[arg(long)]
    benign: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Attack vectors, comma separated.
    #[arg(long, value_delimiter = ',')]
    vectors: Option<Vec<AttackVector>>,
    /// Number of victim /24 subnets.
    #[arg(long)]
    subnets: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dmodel: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long, value_name = "causal|bidirectional")]
    mask: Option<MaskMode>,
    #[arg(long, value_name = "full9|netflow6")]
    feature_mode: Option<FeatureMode>,
    #[arg(long, value_name = "batch|fitted")]
    norm_scope: Option<NormScope>,
    #[arg(long, value_name = "true|false")]
    frozen: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Size of the augmented training-sequence pool.
    #[arg(long)]
    sequences: Option<usize>,
    /// Sequences per optimizer step.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_name = "binned|sliding")]
    sequencing: Option<Sequencing>,
}

impl ModelFlags {
    fn resolve(self, file: &ConfigFile) -> CliResult<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            rng_seed: file.pick(self.seed, "seed", d.rng_seed)?,
            n_bins: file.pick(self.bins, "bins", d.n_bins)?,
            n_layers: file.pick(self.layers, "layers", d.n_layers)?,
            d_model: file.pick(self.dmodel, "dmodel", d.d_model)?,
            n_heads: file.pick(self.heads, "heads", d.n_heads)?,
            mask_mode: file.pick(self.mask, "mask", d.mask_mode)?,
            norm_scope: file.pick(self.norm_scope, "norm-scope", d.norm_scope)?,
            backbone_frozen: file.pick(self.frozen, "frozen", d.backbone_frozen)?,
            epochs: file.pick(self.epochs, "epochs", d.epochs)?,
            learning_rate: file.pick(self.lr, "lr", d.learning_rate)?,
            train_sequence_count: file.pick(self.sequences, "sequences", d.train_sequence_count)?,
            batch_sequences: file.pick(self.batch, "batch", d.batch_sequences)?,
            sequencing: file.pick(self.sequencing, "sequencing", d.sequencing)?,
            ..d
        };
        cfg.validate()?;
        cfg.model_config(FeatureMode::Full9).validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled flow CSV. Split 6:2:2 into train/validation/test unless --val is given.
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// Separate validation CSV; all of --in is then used for training.
    #[arg(long, value_name = "CSV")]
    val: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// Directory for the alert summary (summary.txt, attack_flows.csv).
    #[arg(long, value_name = "DIR")]
    alerts: Option<PathBuf>,
    /// Per-flow probabilities and verdicts as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of source IPs in the alert ranking.
    #[arg(long)]
    top: Option<usize>,
    /// Defaults to the checkpoint's feature mode.
    #[arg(long, value_name = "full9|netflow6")]
    feature_mode: Option<FeatureMode>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// Several seeds, comma separated; results are averaged.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    attack: Option<usize>,
    #[arg(long)]
    benign: Option<usize>,
    /// Skip the per-flow MLP baseline.
    #[arg(long)]
    no_baseline: bool,
    /// Output directory for `<scenario>.csv` and `<scenario>.svg`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// Report CSVs to merge.
    #[arg(long = "in", value_name = "CSV", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output file; the format follows the extension unless --format is set.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_name = "csv|svg")]
    format: Option<ReportFormat>,
}

fn synth(args: SynthArgs, file: &ConfigFile) -> CliResult {
    let d = SynthesisConfig::default();
    let vectors = match args.vectors {
        Some(v) => v,
        None => file.get::<List<AttackVector>>("vectors")?.map_or(d.attack_vectors.clone(), |l| l.0),
    };
    let cfg = SynthesisConfig {
        n_attack: file.pick(args.attack, "attack", d.n_attack)?,
        n_benign: file.pick(args.benign, "benign", d.n_benign)?,
        rng_seed: file.pick(args.seed, "seed", d.rng_seed)?,
        victim_subnets: file.pick(args.subnets, "subnets", d.victim_subnets)?,
        attack_vectors: vectors,
        ..d
    };
    let out: PathBuf = file
        .pick_opt(args.out, "out")?
        .ok_or_else(|| CliError::Usage("synth requires --out".into()))?;
    let ds = synthesize(&cfg)?;
    if out.as_os_str() == "-" {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        write_csv_to(ds.flows(), &mut lock).map_err(io_err(&out))?;
    } else {
        write_csv(&ds, &out)?;
        eprintln!("wrote {} flows ({} attack) to {}", ds.len(), ds.attack_count(), out.display());
    }
    Ok(())
}

fn load_flows(path: &Path, mode: FeatureMode) -> CliResult<fsd::ingest::Dataset> {
    parse_csv(path, FeatureSet::new(mode)).map_err(|e| match e {
        fsd::Error::Io(io) => CliError::Data(format!("{}: {io}", path.display())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })
}

fn print_metrics(label: &str, m: &MetricsReport) {
    println!(
        "{label}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} (tp {} fp {} tn {} fn {})",
        m.accuracy, m.precision, m.recall, m.f1, m.tp, m.fp, m.tn, m.fn_
    );
}

fn train(args: TrainArgs, file: &ConfigFile) -> CliResult {
    let mode = file.pick(args.model.feature_mode, "feature-mode", FeatureMode::Full9)?;
    let cfg = args.model.resolve(file)?;
    let out: PathBuf = file
        .pick_opt(args.out, "out")?
        .ok_or_else(|| CliError::Usage("train requires --out".into()))?;
    let data = load_flows(&args.input, mode)?;
    let (tr, val, test) = match &args.val {
        Some(v) => (data, load_flows(v, mode)?, None),
        None => {
            let (a, b, c) = split(&data, DEFAULT_SPLIT)?;
            (a, b, Some(c))
        }
    };
    eprintln!("training on {} flows, validating on {}", tr.len(), val.len());
    let started = Instant::now();
    let ckpt = train_with_progress(&tr, &val, &cfg, |r| {
        eprintln!("epoch {:>3}  loss {:.5}  val f1 {:.4}", r.epoch, r.mean_loss, r.val_f1);
    })?;
    save_checkpoint(&ckpt, &out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    println!(
        "best epoch {} (val f1 {:.4}) after {:.1}s; checkpoint written to {}",
        ckpt.meta.best_epoch,
        ckpt.meta.val_f1,
        started.elapsed().as_secs_f64(),
        out.display()
    );
    if let Some(test) = test.filter(|t| !t.is_empty()) {
        let inf = infer(&test, &ckpt)?;
        print_metrics("test", &compute_metrics(&inf.verdicts(), &test.labels())?);
    }
    Ok(())
}

fn detect(args: DetectArgs, file: &ConfigFile) -> CliResult {
    let ckpt = load_checkpoint(&args.model).map_err(|e| CliError::Data(format!("{}: {e}", args.model.display())))?;
    let mode = file.pick(args.feature_mode, "feature-mode", ckpt.model.cfg.feature_mode)?;
    let top = file.pick(args.top, "top", DEFAULT_TOP_N)?;
    let ds = load_flows(&args.input, mode)?;
    let inf = infer(&ds, &ckpt)?;
    let verdicts = inf.verdicts();
    let summary = summarize(ds.flows(), &verdicts, top)?;
    println!("flagged {} of {} flows", summary.attack_flow_count, ds.len());
    if ds.is_labeled() {
        print_metrics("metrics", &compute_metrics(&verdicts, &ds.labels())?);
    }
    if let Some(path) = file.pick_opt(args.out, "out")? {
        let path: PathBuf = path;
        let mut w = io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
        let mut body = String::from("index,probability,verdict\n");
        for (i, (p, v)) in inf.probabilities.iter().zip(&verdicts).enumerate() {
            body.push_str(&format!("{i},{p},{}\n", u8::from(*v)));
        }
        w.write_all(body.as_bytes()).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
    }
    match args.alerts {
        Some(dir) => {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let text = dir.join("summary.txt");
            fs::write(&text, summary.to_text()).map_err(io_err(&text))?;
            let csv = dir.join("attack_flows.csv");
            summary.write_csv(fs::File::create(&csv).map_err(io_err(&csv))?)?;
            eprintln!("alert summary written to {}", dir.display());
        }
        None => print!("{}", summary.to_text()),
    }
    Ok(())
}

fn eval(args: EvalArgs, file: &ConfigFile) -> CliResult {
    let kind = file
        .pick_opt(args.scenario, "scenario")?
        .ok_or_else(|| CliError::Usage("eval requires --scenario".into()))?;
    let seeds = match (args.seeds, args.model.seed) {
        (Some(s), _) => s,
        (None, Some(s)) => vec![s],
        (None, None) => match file.get::<List<u64>>("seeds")? {
            Some(l) => l.0,
            None => vec![file.get::<u64>("seed")?.unwrap_or(0)],
        },
    };
    let attack = file.pick_opt(args.attack, "attack")?;
    let benign = file.pick_opt(args.benign, "benign")?;
    let defaults = kind.default_sizes();
    let sizes = (attack.is_some() || benign.is_some())
        .then(|| (attack.unwrap_or(defaults.0), benign.unwrap_or(defaults.1)));
    let out: PathBuf = file.pick_opt(args.out, "out")?.unwrap_or_else(|| PathBuf::from("."));
    let train = args.model.resolve(file)?;
    let cfg = ScenarioConfig {
        seeds,
        sizes,
        baseline: !args.no_baseline,
        train,
        ..ScenarioConfig::new(kind)
    };
    let result = run_scenario_with_progress(&cfg, |r| {
        eprintln!("{} {}: f1 {:.4} ({:.4} ms/flow)", r.scenario, r.method, r.f1, r.runtime_ms);
    })?;
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let csv = out.join(format!("{kind}.csv"));
    let svg = out.join(format!("{kind}.svg"));
    emit_report(&result.summary, &csv, ReportFormat::Csv)?;
    emit_report(&result.summary, &svg, ReportFormat::SvgBarChart)?;
    for r in &result.summary {
        print_metrics(&format!("{} {}", r.scenario, r.method), r);
    }
    println!("reports written to {} and {}", csv.display(), svg.display());
    Ok(())
}

fn report(args: ReportArgs) -> CliResult {
    let mut all = Vec::new();
    for path in &args.inputs {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        all.extend(parse_report_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?);
    }
    let format = args.format.unwrap_or_else(|| ReportFormat::from_path(&args.out));
    emit_report(&all, &args.out, format)?;
    eprintln!("{} rows written to {}", all.len(), args.out.display());
    Ok(())
}

fn init_threads() -> CliResult {
    let Ok(v) = std::env::var("FSD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("FSD_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("FSD_THREADS: {e}")))
}

fn run(cli: Cli) -> CliResult {
    init_threads()?;
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Detect(a) => detect(a, &file),
        Command::Eval(a) => eval(a, &file),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Data(_) => 2,
            })
        }
    }
}
