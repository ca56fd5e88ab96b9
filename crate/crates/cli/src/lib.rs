//! The `bvda` command line: data generation, source training, the
//! prediction service, adaptation, evaluation and the experiment drivers.
//!
//! Every command that takes a `--config` file reads TOML with the same keys
//! as the corresponding core config struct; flags given on the command line
//! win over the file.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use bvda_core::backbone::{checkpoint, FrameFeatureSequence};
use bvda_core::data::{generate, load_manifest, write_domains, LabelPolicy, ShiftSpec};
use bvda_core::exec::ExecMode;
use bvda_core::oracle::{
    dump_predictions, train_source, BlackBox, LocalOracle, OutputMode, PredictionDump, RemoteTeacher, Service,
    SourceConfig,
};
use bvda_core::trainer::{
    adapt, evaluate, fetch_teacher, run_ablation_suite, score, sweep, AdaptConfig, Benchmark, EpochHook,
    TeacherSource,
};
use bvda_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{load as load_config, parse_list, Overrides};

#[derive(Parser, Debug)]
#[command(name = "bvda", version, about = "Black-box video domain adaptation")]
pub struct Cli {
    /// Data-parallel or single-threaded execution.
    #[arg(long, global = true, value_enum, default_value_t = Exec::Parallel)]
    pub exec: Exec,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Exec {
    Parallel,
    Sequential,
}

impl From<Exec> for ExecMode {
    fn from(e: Exec) -> Self {
        match e {
            Exec::Parallel => ExecMode::Parallel,
            Exec::Sequential => ExecMode::Sequential,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic source/target pair of domains.
    GenData(GenDataArgs),
    /// Train the source classifier on a labeled manifest.
    TrainSource(TrainSourceArgs),
    /// Serve a source checkpoint over HTTP.
    Serve(ServeArgs),
    /// Write black-box predictions for every video of a manifest.
    DumpPreds(DumpArgs),
    /// Adapt a target model from unlabeled videos and teacher predictions.
    Adapt(AdaptArgs),
    /// Score a checkpoint on a labeled manifest.
    Eval(EvalArgs),
    /// Run every loss ablation with and without clip weights.
    Ablate(AblateArgs),
    /// Grid over the regularizer weight and the spatial mask rate.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub source_per_class: Option<usize>,
    #[arg(long)]
    pub target_per_class: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub temporal_dependence: Option<f64>,
    /// Comma-separated subset of classes present in the target domain.
    #[arg(long)]
    pub partial_target_classes: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainSourceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to one more than the largest label.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training summary as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct OracleArgs {
    /// Query a source checkpoint in process.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Query a running prediction service.
    #[arg(long)]
    pub endpoint: Option<String>,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "soft")]
    pub mode: String,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct TeacherArgs {
    /// Prediction dump written by `dump-preds`.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Base URL of a running prediction service.
    #[arg(long)]
    pub endpoint: Option<String>,
}

impl TeacherArgs {
    fn source(&self) -> TeacherSource {
        match (&self.dump, &self.endpoint) {
            (Some(p), _) => TeacherSource::Dump(p.clone()),
            (None, Some(u)) => TeacherSource::Endpoint(u.clone()),
            (None, None) => unreachable!("clap enforces one teacher source"),
        }
    }
}

/// Command-line overrides for [`AdaptConfig`].
#[derive(Args, Debug, Default)]
pub struct AdaptFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha_v: Option<f64>,
    #[arg(long)]
    pub alpha_t: Option<f64>,
    #[arg(long)]
    pub beta_reg: Option<f64>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub gamma_ema: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub endo: Option<bool>,
    #[arg(long)]
    pub exo: Option<bool>,
    #[arg(long)]
    pub vir: Option<bool>,
    #[arg(long)]
    pub pre: Option<bool>,
    #[arg(long)]
    pub mi: Option<bool>,
    #[arg(long)]
    pub clip_weights: Option<bool>,
    #[arg(long)]
    pub symmetric: Option<bool>,
    /// soft | hard
    #[arg(long)]
    pub teacher_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl AdaptFlags {
    pub fn resolve(&self) -> Result<AdaptConfig> {
        let mut o = Overrides::default();
        o.set("alpha_v", self.alpha_v)
            .set("alpha_t", self.alpha_t)
            .set("beta_reg", self.beta_reg)
            .set_usize("c", self.c)
            .set("gamma_ema", self.gamma_ema)
            .set_usize("epochs", self.epochs)
            .set_usize("batch_size", self.batch_size)
            .set("lr", self.lr)
            .set("momentum", self.momentum)
            .set_usize("warmup_epochs", self.warmup_epochs)
            .set("endo", self.endo)
            .set("exo", self.exo)
            .set("vir", self.vir)
            .set("pre", self.pre)
            .set("mi", self.mi)
            .set("clip_weights", self.clip_weights)
            .set("symmetric", self.symmetric)
            .set("teacher_mode", self.teacher_mode.clone())
            .set_u64("seed", self.seed);
        let cfg: AdaptConfig = load_config(self.config.as_deref(), o)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// Target-domain manifest; its label column is never read.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub teacher: TeacherArgs,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics as JSON lines.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Final teacher bank snapshot.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Labeled manifest scored after every epoch for the metrics file.
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub flags: AdaptFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Aggregate clips with confidence weights.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub weighted: bool,
    /// Per-video predictions used for the score.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// JSON report; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Labeled target manifest; labels are only used for scoring.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub teacher: TeacherArgs,
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: AdaptFlags,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub teacher: TeacherArgs,
    #[arg(long, default_value = "0.2,0.6,1.0,1.2")]
    pub betas: String,
    #[arg(long, default_value = "0.1,0.3,0.5,0.9")]
    pub alphas: String,
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: AdaptFlags,
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = ExecMode::from(cli.exec);
    match cli.command {
        Command::GenData(a) => gen_data(a, exec),
        Command::TrainSource(a) => train(a, exec),
        Command::Serve(a) => serve(a, exec),
        Command::DumpPreds(a) => dump(a, exec),
        Command::Adapt(a) => run_adapt(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Ablate(a) => ablate(a, exec),
        Command::Sweep(a) => run_sweep(a, exec),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    match out {
        Some(p) => bvda_core::binio::write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_data(a: GenDataArgs, exec: ExecMode) -> Result<()> {
    let partial = a
        .partial_target_classes
        .as_deref()
        .map(|s| parse_list::<usize>(s, "class"))
        .transpose()?;
    let mut o = Overrides::default();
    o.set_usize("classes", a.classes)
        .set_usize("frames", a.frames)
        .set_usize("dim", a.dim)
        .set_usize("source_per_class", a.source_per_class)
        .set_usize("target_per_class", a.target_per_class)
        .set("theta", a.theta)
        .set("tau", a.tau)
        .set("temporal_dependence", a.temporal_dependence)
        .set(
            "partial_target_classes",
            partial.map(|p| p.into_iter().map(|c| c as i64).collect::<Vec<_>>()),
        );
    let spec: ShiftSpec = load_config(a.config.as_deref(), o)?;
    spec.validate()?;
    let domains = generate(&spec, a.seed, exec)?;
    let paths = write_domains(&a.out, &domains, exec)?;
    println!("source\t{}\t{} videos", paths.source.display(), domains.source.len());
    println!("target\t{}\t{} videos", paths.target.display(), domains.target.len());
    Ok(())
}

fn train(a: TrainSourceArgs, exec: ExecMode) -> Result<()> {
    let mut o = Overrides::default();
    o.set_usize("epochs", a.epochs)
        .set_usize("batch_size", a.batch_size)
        .set("lr", a.lr)
        .set("momentum", a.momentum)
        .set("holdout", a.holdout)
        .set_u64("seed", a.seed);
    let cfg: SourceConfig = load_config(a.config.as_deref(), o)?;
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest, LabelPolicy::Required, a.classes, None)?;
    let classes = match a.classes {
        Some(c) => c,
        None => manifest.label_space().last().map_or(0, |l| l + 1),
    };
    let videos = manifest.load_videos(None, exec)?;
    let (model, report) = train_source(&videos, classes, &cfg, exec)?;
    checkpoint::save(&model, &a.out)?;
    eprintln!(
        "trained on {} videos, held-out accuracy {}",
        report.train_videos,
        report.heldout_accuracy.map_or("n/a".to_string(), |x| format!("{x:.4}"))
    );
    write_json(&report, a.report.as_deref())
}

fn serve(a: ServeArgs, exec: ExecMode) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint, None)?;
    let service = Service::start(LocalOracle::new(model, exec), &a.addr, a.workers)?;
    println!("listening on {}", service.url());
    std::io::stdout().flush().ok();
    service.wait();
    Ok(())
}

fn dump(a: DumpArgs, exec: ExecMode) -> Result<()> {
    let mode: OutputMode = a.mode.parse()?;
    let oracle: Box<dyn BlackBox> = match (&a.oracle.checkpoint, &a.oracle.endpoint) {
        (Some(p), _) => Box::new(LocalOracle::new(checkpoint::load(p, None)?, exec)),
        (None, Some(u)) => Box::new(RemoteTeacher::new(u.clone(), None)),
        (None, None) => unreachable!("clap enforces one oracle"),
    };
    let manifest = load_manifest(&a.manifest, LabelPolicy::Ignore, None, None)?;
    let videos = manifest.load_videos(None, exec)?;
    let d = dump_predictions(oracle.as_ref(), &videos, mode, &a.out)?;
    eprintln!("wrote {} predictions over {} classes", d.records.len(), d.classes);
    Ok(())
}

fn run_adapt(a: AdaptArgs, exec: ExecMode) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let eval_videos = match &a.eval_manifest {
        Some(p) => Some(load_manifest(p, LabelPolicy::Required, None, None)?.load_videos(None, exec)?),
        None => None,
    };
    let weighted = cfg.clip_weights;
    let hook_fn = |m: &bvda_core::backbone::TargetModel| -> Result<f64> {
        let videos = eval_videos.as_deref().expect("hook only installed with eval videos");
        Ok(evaluate(m, videos, weighted, exec)?.accuracy)
    };
    let hook: Option<&EpochHook<'_>> = eval_videos.as_ref().map(|_| &hook_fn as &EpochHook<'_>);
    let out = adapt(&a.manifest, &a.teacher.source(), &cfg, exec, None, hook)?;
    checkpoint::save(&out.model, &a.out)?;
    if let Some(p) = &a.metrics {
        bvda_core::binio::write_file(p, out.report.metrics_jsonl()?.as_bytes())?;
    }
    if let Some(p) = &a.bank {
        out.bank.save(p)?;
    }
    let last = out.report.epochs.last();
    eprintln!(
        "adapted on {} videos over {} epochs in {:.1}s",
        out.report.videos,
        out.report.epochs.len(),
        out.report.wall_clock.as_secs_f64()
    );
    if let Some(e) = last {
        println!(
            "final epoch {}: total {:.6} kd {:.6} mi {:.6}{}",
            e.epoch,
            e.total,
            e.kd,
            e.mi,
            e.accuracy.map_or(String::new(), |x| format!(" accuracy {x:.4}"))
        );
    }
    Ok(())
}

fn eval(a: EvalArgs, exec: ExecMode) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint, None)?;
    let classes = model.dims().classes;
    let manifest = load_manifest(&a.manifest, LabelPolicy::Required, Some(classes), None)?;
    let videos = manifest.load_videos(None, exec)?;
    let refs: Vec<&FrameFeatureSequence> = videos.iter().collect();
    let preds = model.predict_videos(&refs, a.weighted, exec)?;
    let labels: Vec<usize> = videos.iter().map(|v| v.label.expect("required by policy")).collect();
    let report = score(&preds, &labels, classes)?;
    if let Some(p) = &a.predictions {
        PredictionDump {
            classes,
            records: videos.iter().map(|v| v.video_id.clone()).zip(preds).collect(),
        }
        .save(p)?;
    }
    write_json(&report, a.out.as_deref())
}

fn benchmark(manifest: &Path, teacher: &TeacherArgs, mode: OutputMode, exec: ExecMode) -> Result<Benchmark> {
    let m = load_manifest(manifest, LabelPolicy::Required, None, None)?;
    let labeled = m.load_videos(None, exec)?;
    let unlabeled: Vec<FrameFeatureSequence> = labeled.iter().map(FrameFeatureSequence::without_label).collect();
    let (classes, preds) = fetch_teacher(&teacher.source(), &unlabeled, mode, None)?;
    Benchmark::new(labeled, classes, preds, exec)
}

#[derive(Serialize)]
struct AblationSummary<'a> {
    variant: &'a str,
    clip_weights: bool,
    mean_accuracy: f64,
    std_accuracy: f64,
    accuracies: Vec<f64>,
}

fn ablate(a: AblateArgs, exec: ExecMode) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let seeds = parse_list::<u64>(&a.seeds, "seed")?;
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    let bench = benchmark(&a.manifest, &a.teacher, cfg.teacher_mode, exec)?;
    let zero = bench.zero_shot()?;
    let rows = run_ablation_suite(&bench, &cfg, &seeds)?;
    println!("{:<16} {:>12} {:>10} {:>8}", "variant", "clip weights", "accuracy", "std");
    println!("{:<16} {:>12} {:>10.4} {:>8}", "source model", "-", zero.accuracy, "-");
    for r in &rows {
        println!(
            "{:<16} {:>12} {:>10.4} {:>8.4}",
            r.variant.label(),
            if r.clip_weights { "on" } else { "off" },
            r.mean_accuracy,
            r.std_accuracy
        );
    }
    if let Some(p) = &a.out {
        let summary: Vec<AblationSummary> = rows
            .iter()
            .map(|r| AblationSummary {
                variant: r.variant.label(),
                clip_weights: r.clip_weights,
                mean_accuracy: r.mean_accuracy,
                std_accuracy: r.std_accuracy,
                accuracies: r.reports.iter().filter_map(|x| x.accuracy).collect(),
            })
            .collect();
        write_json(
            &serde_json::json!({ "zero_shot": zero.accuracy, "seeds": seeds, "rows": summary }),
            Some(p),
        )?;
    }
    Ok(())
}

fn run_sweep(a: SweepArgs, exec: ExecMode) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let betas = parse_list::<f64>(&a.betas, "beta")?;
    let alphas = parse_list::<f64>(&a.alphas, "alpha")?;
    let seeds = parse_list::<u64>(&a.seeds, "seed")?;
    let bench = benchmark(&a.manifest, &a.teacher, cfg.teacher_mode, exec)?;
    let res = sweep(&bench, &cfg, &betas, &alphas, &seeds)?;
    print!("{:>8}", "beta\\a_v");
    alphas.iter().for_each(|x| print!(" {x:>8}"));
    println!();
    for (i, b) in betas.iter().enumerate() {
        print!("{b:>8}");
        for p in &res.points[i * alphas.len()..(i + 1) * alphas.len()] {
            print!(" {:>8.4}", p.mean_accuracy);
        }
        println!();
    }
    println!("band {:.4}", res.band);
    if let Some(p) = &a.out {
        let points: Vec<serde_json::Value> = res
            .points
            .iter()
            .map(|p| serde_json::json!({ "beta_reg": p.beta_reg, "alpha_v": p.alpha_v, "mean_accuracy": p.mean_accuracy }))
            .collect();
        write_json(&serde_json::json!({ "seeds": seeds, "band": res.band, "points": points }), Some(p))?;
    }
    Ok(())
}
