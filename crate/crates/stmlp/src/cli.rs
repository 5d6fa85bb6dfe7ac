//! Command-line surface.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use stmlp_core::data::{make_samples, split_by, synth_gestures, SkeletonSequence, SynthOptions};
use stmlp_core::optim::{evaluate, train, EpochLog};
use stmlp_core::{ModelConfig, ModelParams};

use crate::bench::{run_bench, Precision};
use crate::checkpoint::Checkpoint;
use crate::config::{Preset, RunConfig};
use crate::convert::{read_csv, LabelMode};
use crate::dataset::{joint_count, load_dataset, save_dataset};
use crate::error::{AppError, Result};
use crate::report::Report;
use crate::stream::{run_stream, StreamPredictor};

#[derive(Debug, Parser)]
#[command(name = "stmlp", version, about = "Spatio-temporal MLP gesture recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Classify a JSON-lines frame stream, one output line per frame.
    Predict(PredictArgs),
    /// Measure single-window inference latency.
    Bench(BenchArgs),
    /// Generate a synthetic gesture dataset.
    Synth(SynthArgs),
    /// Convert a dataset to the native JSON-lines format.
    Convert(ConvertArgs),
    /// Print a checkpoint's header and parameter table.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Tcg,
    DriveAct,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Full,
    SpatialOnly,
    TemporalOnly,
    TwoStream,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SeArg {
    Shared,
    Separate,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LnAxisArg {
    Operand,
    Features,
    Time,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Ranger,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// TOML run configuration merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset path, overriding `data.path`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "model.stmlp")]
    pub out: PathBuf,
    /// Training log path; defaults to the checkpoint path plus `.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    pub se: Option<SeArg>,
    #[arg(long, value_enum)]
    pub ln_axis: Option<LnAxisArg>,
    /// Any config key, e.g. `--set model.layers=2`. Applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Part of the dataset to score, using the split stored in the checkpoint.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Read frames from this file instead of standard input.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time; without it a freshly initialized preset model is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tcg")]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 50)]
    pub warmup: usize,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub joints: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label every frame instead of the whole sequence.
    #[arg(long)]
    pub frame_labels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Native,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelArg {
    Frame,
    Sequence,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Input layout; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub from: Option<FormatArg>,
    /// Label granularity for CSV input.
    #[arg(long, value_enum, default_value = "frame")]
    pub labels: LabelArg,
    /// Value for `meta.dataset` on CSV input.
    #[arg(long, default_value = "")]
    pub dataset: String,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub json: bool,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tcg => Preset::Tcg,
            PresetArg::DriveAct => Preset::DriveAct,
        }
    }
}

fn quoted(s: &str) -> String {
    format!("\"{s}\"")
}

impl TrainArgs {
    /// Flag values expressed as `key=value` overrides, followed by `--set`.
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = &self.data {
            out.push(format!("data.path={}", toml::Value::String(p.display().to_string())));
        }
        if let Some(v) = self.epochs {
            out.push(format!("train.epochs={v}"));
        }
        if let Some(v) = self.batch_size {
            out.push(format!("train.batch_size={v}"));
        }
        if let Some(v) = self.seed {
            out.push(format!("train.seed={v}"));
        }
        if let Some(v) = self.lr {
            out.push(format!("schedule.base_lr={v:?}"));
        }
        if let Some(v) = self.optimizer {
            let name = match v {
                OptimizerArg::Adam => "adam",
                OptimizerArg::Ranger => "ranger",
            };
            out.push(format!("train.optimizer={}", quoted(name)));
        }
        if let Some(v) = self.variant {
            let name = match v {
                VariantArg::Full => "full",
                VariantArg::SpatialOnly => "spatial_only",
                VariantArg::TemporalOnly => "temporal_only",
                VariantArg::TwoStream => "two_stream",
            };
            out.push(format!("model.variant={}", quoted(name)));
        }
        if let Some(v) = self.se {
            let name = match v {
                SeArg::Shared => "shared",
                SeArg::Separate => "separate",
                SeArg::Off => "off",
            };
            out.push(format!("model.se_mode={}", quoted(name)));
        }
        if let Some(v) = self.ln_axis {
            let name = match v {
                LnAxisArg::Operand => "operand",
                LnAxisArg::Features => "features",
                LnAxisArg::Time => "time",
            };
            out.push(format!("model.ln_axis={}", quoted(name)));
        }
        out.extend(self.sets.iter().cloned());
        out
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::load(self.preset.map(Preset::from), self.config.as_deref(), &self.overrides())
    }
}

fn check_joints(seqs: &[SkeletonSequence], cfg: &ModelConfig, what: &str) -> Result<()> {
    match joint_count(seqs) {
        Some(k) if k == cfg.joints => Ok(()),
        Some(k) => Err(AppError::Data(format!("dataset has K={k} joints per frame, {what} expects K={}", cfg.joints))),
        None if seqs.is_empty() => Err(AppError::Data("dataset is empty".into())),
        None => Err(AppError::Data("dataset mixes different joint counts".into())),
    }
}

fn pick(seqs: &[SkeletonSequence], idx: &[usize]) -> Vec<SkeletonSequence> {
    idx.iter().map(|&i| seqs[i].clone()).collect()
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.resolve()?;
    if args.print_config {
        write!(out, "{}", cfg.to_toml()?).map_err(|e| AppError::io("<stdout>", e))?;
        return Ok(());
    }
    let path = cfg.data.path.clone().ok_or_else(|| AppError::Config("data.path: required (or pass --data)".into()))?;
    let mut seqs = load_dataset(&path, None, Some(cfg.model.classes))?;
    check_joints(&seqs, &cfg.model, "the configuration")?;
    cfg.data.preprocess.apply(&mut seqs)?;
    let split = split_by(&seqs, cfg.data.split_key.into(), &cfg.data.test, &cfg.data.val);
    for v in &split.unmatched {
        log::warn!("held-out value {v:?} matches no sequence");
    }
    if split.train.is_empty() {
        return Err(AppError::Data("training split is empty".into()));
    }
    let samples = make_samples(&cfg.model, &pick(&seqs, &split.train))?;
    log::info!(
        "training on {} sequences ({} samples), {} val, {} test",
        split.train.len(),
        samples.len(),
        split.val.len(),
        split.test.len()
    );

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| AppError::io(&log_path, e))?);
    let mut io_err = None;
    let opts = cfg.train_options();
    let mut params = ModelParams::init(&cfg.model, opts.seed)?;
    let history = train(&cfg.model, &mut params, &samples, &opts, |entry: &EpochLog| {
        if io_err.is_none() {
            io_err = writeln!(log_file, "{entry}").and_then(|_| log_file.flush()).err();
        }
        log::info!("{entry}");
    })?;
    if let Some(e) = io_err {
        return Err(AppError::io(&log_path, e));
    }

    let mut ckpt = Checkpoint::new(cfg.model.clone(), params, opts.seed)?;
    ckpt.header.preprocess = cfg.data.preprocess.clone();
    let meta = &mut ckpt.header.metadata;
    meta.insert("run_config".into(), serde_json::to_value(&cfg).expect("config serializes"));
    meta.insert("train_samples".into(), samples.len().into());
    if let Some(last) = history.last() {
        meta.insert("final_mean_loss".into(), last.mean_loss.into());
        meta.insert("final_train_accuracy".into(), last.train_accuracy.into());
    }
    ckpt.save(&args.out)?;

    if !split.val.is_empty() {
        let val = make_samples(&cfg.model, &pick(&seqs, &split.val))?;
        let (loss, cm) = evaluate(&cfg.model, &ckpt.params, &val)?;
        log::info!("validation: loss={loss:.6} accuracy={:.6}", cm.accuracy()?);
    }
    writeln!(out, "wrote {} and {}", args.out.display(), log_path.display()).map_err(|e| AppError::io("<stdout>", e))?;
    Ok(())
}

/// The run configuration a checkpoint was trained with, if recorded.
pub fn stored_run_config(ckpt: &Checkpoint) -> Option<RunConfig> {
    ckpt.header.metadata.get("run_config").and_then(|v| serde_json::from_value(v.clone()).ok())
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &Path, split: SplitArg) -> Result<Report> {
    let cfg = ckpt.config();
    let mut seqs = load_dataset(data, None, Some(cfg.classes))?;
    check_joints(&seqs, cfg, "the checkpoint")?;
    ckpt.header.preprocess.apply(&mut seqs)?;
    let chosen = if split == SplitArg::All {
        seqs
    } else {
        let run = stored_run_config(ckpt)
            .ok_or_else(|| AppError::Config("checkpoint carries no split; use --split all".into()))?;
        let s = split_by(&seqs, run.data.split_key.into(), &run.data.test, &run.data.val);
        let idx = match split {
            SplitArg::Train => &s.train,
            SplitArg::Val => &s.val,
            SplitArg::Test => &s.test,
            SplitArg::All => unreachable!(),
        };
        pick(&seqs, idx)
    };
    let samples = make_samples(cfg, &chosen)?;
    if samples.is_empty() {
        return Err(AppError::Data("selected split is empty".into()));
    }
    let (loss, cm) = evaluate(cfg, &ckpt.params, &samples)?;
    Ok(Report::new(&cm, Some(loss)))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let report = evaluate_checkpoint(&ckpt, &args.data, args.split)?;
    let text = if args.json { report.to_json() + "\n" } else { report.to_string() };
    out.write_all(text.as_bytes()).map_err(|e| AppError::io("<stdout>", e))
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write, diag: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut pred = StreamPredictor::new(&ckpt)?;
    let input: Box<dyn BufRead> = match &args.input {
        Some(p) => Box::new(BufReader::new(File::open(p).map_err(|e| AppError::io(p, e))?)),
        None => Box::new(io::stdin().lock()),
    };
    let stats = run_stream(&mut pred, input, out, diag).map_err(|e| AppError::io("<stream>", e))?;
    log::info!("{} frames classified, {} skipped", stats.accepted, stats.rejected);
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let (cfg, params) = match &args.checkpoint {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            (c.header.config, c.params)
        }
        None => {
            let cfg = RunConfig::preset(args.preset.into()).model;
            let params = ModelParams::init(&cfg, args.seed)?;
            (cfg, params)
        }
    };
    let precisions: &[Precision] = match args.precision {
        PrecisionArg::F64 => &[Precision::F64],
        PrecisionArg::F32 => &[Precision::F32],
        PrecisionArg::Both => &[Precision::F64, Precision::F32],
    };
    for &p in precisions {
        let stats = run_bench(&cfg, &params, p, args.iterations, args.warmup, args.seed)?;
        let line = if args.json { serde_json::to_string(&stats).expect("stats serialize") } else { stats.to_string() };
        writeln!(out, "{line}").map_err(|e| AppError::io("<stdout>", e))?;
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let opts = SynthOptions {
        classes: args.classes,
        samples: args.samples,
        joints: args.joints,
        frames: args.frames,
        noise: args.noise,
        seed: args.seed,
        frame_labels: args.frame_labels,
        ..SynthOptions::default()
    };
    let seqs = synth_gestures(&opts)?;
    save_dataset(&args.out, &seqs)?;
    writeln!(out, "wrote {} sequences to {}", seqs.len(), args.out.display()).map_err(|e| AppError::io("<stdout>", e))
}

pub fn cmd_convert(args: &ConvertArgs, out: &mut dyn Write) -> Result<()> {
    let from = args.from.unwrap_or_else(|| {
        match args.input.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => FormatArg::Csv,
            _ => FormatArg::Native,
        }
    });
    let seqs = match from {
        FormatArg::Native => load_dataset(&args.input, None, None)?,
        FormatArg::Csv => {
            let file = File::open(&args.input).map_err(|e| AppError::io(&args.input, e))?;
            let mode = match args.labels {
                LabelArg::Frame => LabelMode::Frame,
                LabelArg::Sequence => LabelMode::Sequence,
            };
            read_csv(BufReader::new(file), &args.input.display().to_string(), mode, &args.dataset)?
        }
    };
    save_dataset(&args.output, &seqs)?;
    writeln!(out, "wrote {} sequences to {}", seqs.len(), args.output.display()).map_err(|e| AppError::io("<stdout>", e))
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cfg = ckpt.config();
    let stored = ckpt.params.param_count();
    let analytic = cfg.param_count();
    let text = if args.json {
        let tensors: Vec<serde_json::Value> = ckpt
            .header
            .tensors
            .iter()
            .map(|t| serde_json::json!({"name": t.name, "shape": t.shape, "count": t.shape.iter().product::<usize>()}))
            .collect();
        let v = serde_json::json!({
            "format_version": ckpt.header.format_version,
            "created_by": ckpt.header.created_by,
            "seed": ckpt.header.seed,
            "config": cfg,
            "preprocess": ckpt.header.preprocess,
            "metadata": ckpt.header.metadata,
            "tensors": tensors,
            "param_count": stored,
            "analytic_param_count": analytic,
        });
        serde_json::to_string_pretty(&v).expect("json") + "\n"
    } else {
        let mut s = String::new();
        use std::fmt::Write as _;
        let _ = writeln!(s, "format_version        {}", ckpt.header.format_version);
        let _ = writeln!(s, "created_by            {}", ckpt.header.created_by);
        let _ = writeln!(s, "seed                  {}", ckpt.header.seed);
        let _ = writeln!(
            s,
            "config                L={} K={} S={} T={} D_S={} D_T={} C={} variant={:?} se={:?}/{:?} ln_axis={:?}",
            cfg.layers,
            cfg.joints,
            cfg.hidden,
            cfg.time_steps,
            cfg.spatial_hidden,
            cfg.temporal_hidden,
            cfg.classes,
            cfg.variant,
            cfg.se_mode,
            cfg.se_apply,
            cfg.ln_axis
        );
        if !ckpt.header.preprocess.is_identity() {
            let _ = writeln!(s, "preprocess            {:?}", ckpt.header.preprocess);
        }
        for key in ["final_train_accuracy", "final_mean_loss", "train_samples"] {
            if let Some(v) = ckpt.header.metadata.get(key) {
                let _ = writeln!(s, "{key:<22}{v}");
            }
        }
        let _ = writeln!(s);
        let width = ckpt.header.tensors.iter().map(|t| t.name.len()).max().unwrap_or(4).max(6);
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>10}", "tensor", "shape", "count");
        for t in &ckpt.header.tensors {
            let shape = t.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let _ = writeln!(s, "{:<width$}  {:>12}  {:>10}", t.name, shape, t.shape.iter().product::<usize>());
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "parameters            {stored}");
        let _ = writeln!(s, "analytic count        {analytic} ({})", if stored == analytic { "match" } else { "MISMATCH" });
        s
    };
    out.write_all(text.as_bytes()).map_err(|e| AppError::io("<stdout>", e))
}

pub fn run(cli: &Cli, out: &mut dyn Write, diag: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out, diag),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Convert(a) => cmd_convert(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}
