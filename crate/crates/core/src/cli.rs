//! Command-line front end: `run`, `sweep`, `compare` and `export-features`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::adversarial::{Method, ModelSpecs};
use crate::config::{ExperimentConfig, KeyValues};
use crate::data::{write_features_csv, Normalizer};
use crate::error::Error;
use crate::eval::{friedman_ranks, significance_report, MetricsRecord};
use crate::experiment::{prepare_task, run_seed, PreparedTask, SeedRun};
use crate::fmt_sig;
use crate::nn::{write_params_csv, ParamStore};

const DEFAULT_OUT: &str = "cd3a_out";

#[derive(Debug, Parser)]
#[command(name = "cd3a", version, about = "Curriculum dropout-discriminator domain adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured method/task/seed and write metrics, features and parameters.
    Run(RunArgs),
    /// Repeat `run` over values of one hyperparameter.
    Sweep(SweepArgs),
    /// Friedman ranks and Nemenyi verdicts across finished run directories.
    Compare(CompareArgs),
    /// Recompute learned features from a saved `params.csv`.
    ExportFeatures(ExportArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Overrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Repeatable; replaces `run.seeds`.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Defaults to `run.out_dir`, then `$CD3A_OUT`, then `./cd3a_out`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub k_samples: Option<usize>,
    #[arg(long)]
    pub curriculum_rate: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Any config key, as `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// lambda | dropout | k_samples | curriculum_rate | source_fraction
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories, one method each.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long)]
    pub params: PathBuf,
    /// Task index when the config defines several.
    #[arg(long, default_value_t = 0)]
    pub task: usize,
}

/// Exit 2 for bad configuration or arguments, 1 for failures while running.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Input problems (bad values, malformed files) are usage errors; the rest are runtime.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_)
        | Error::Usage(_)
        | Error::Parameter(_)
        | Error::Spec(_)
        | Error::Label(_)
        | Error::Format { .. } => usage(e),
        _ => runtime(e),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

pub fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run(a) => {
            let (cfg, out) = resolve(&a.common, &[])?;
            let summary = run_experiment(&cfg, &out)?;
            print_summary(&summary);
            Ok(())
        }
        Command::Sweep(a) => sweep(&a),
        Command::Compare(a) => compare(&a),
        Command::ExportFeatures(a) => export_features(&a),
    }
}

fn resolve(o: &Overrides, extra: &[(&str, String)]) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut kv = match &o.config {
        Some(p) => KeyValues::load(p).map_err(usage)?,
        None => KeyValues::default(),
    };
    if !o.seeds.is_empty() {
        let s: Vec<String> = o.seeds.iter().map(ToString::to_string).collect();
        kv.set("run.seeds", s.join(","));
    }
    let pairs = [
        ("adapt.method", o.method.clone()),
        ("adapt.lambda", o.lambda.map(|v| v.to_string())),
        ("adapt.dropout", o.dropout.map(|v| v.to_string())),
        ("adapt.k_samples", o.k_samples.map(|v| v.to_string())),
        ("adapt.curriculum_rate", o.curriculum_rate.map(|v| v.to_string())),
        ("train.epochs", o.epochs.map(|v| v.to_string())),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    for s in &o.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    for (k, v) in extra {
        kv.set(k, v.clone());
    }
    let cfg = ExperimentConfig::from_key_values(kv).map_err(usage)?;
    let out = o
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os("CD3A_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((cfg, out))
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub source_accuracy: f64,
    pub target_accuracy: Option<f64>,
    pub proxy_a_distance: f64,
    pub domain_loss: Option<f64>,
    pub confusion_gap: Option<f64>,
}

const SUMMARY_HEADER: [&str; 8] = [
    "task", "method", "seed", "source_acc", "target_acc", "d_A", "L_d_total", "gap",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn mkdir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Trains every (task, seed) pair of `cfg` and writes its artifacts below `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<SummaryRow>> {
    let mut jobs = Vec::new();
    for t in 0..cfg.data.num_tasks() {
        for &seed in &cfg.seeds {
            let task = prepare_task(&cfg.data, t, seed).map_err(classify)?;
            let adapt = cfg.adaptation(task.classes(), seed).map_err(usage)?;
            jobs.push((task, adapt, seed));
        }
    }
    mkdir(out)?;
    let classes = jobs[0].0.classes();
    let mut w = create(&out.join("resolved_config.cfg"))?;
    w.write_all(cfg.to_text(classes).as_bytes()).map_err(runtime)?;
    w.flush().map_err(runtime)?;

    let rows = jobs
        .par_iter()
        .map(|(task, adapt, seed)| {
            let run = run_seed(adapt, &cfg.probe, task, *seed).map_err(runtime)?;
            let dir = out.join(&task.name).join(format!("seed_{seed}"));
            write_seed_artifacts(&dir, task, &run)?;
            let last = run.last();
            Ok(SummaryRow {
                task: task.name.clone(),
                method: adapt.method,
                seed: *seed,
                source_accuracy: last.source_accuracy,
                target_accuracy: last.target_accuracy,
                proxy_a_distance: run.proxy_a_distance,
                domain_loss: last.domain_loss,
                confusion_gap: last.confusion_gap(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut w = csv::Writer::from_writer(create(&out.join("summary.csv"))?);
    w.write_record(SUMMARY_HEADER).map_err(runtime)?;
    for r in &rows {
        w.write_record([
            r.task.clone(),
            r.method.to_string(),
            r.seed.to_string(),
            fmt_sig(r.source_accuracy),
            opt(r.target_accuracy),
            fmt_sig(r.proxy_a_distance),
            opt(r.domain_loss),
            opt(r.confusion_gap),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(rows)
}

pub const METRICS_HEADER: [&str; 8] = [
    "epoch", "K", "L_c", "L_d_total", "source_acc", "target_acc", "mean_D_src", "mean_D_tgt",
];

pub fn write_metrics_csv<W: Write>(out: W, metrics: &[MetricsRecord]) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            m.k.to_string(),
            fmt_sig(m.classification_loss),
            opt(m.domain_loss),
            fmt_sig(m.source_accuracy),
            opt(m.target_accuracy),
            opt(m.mean_disc_source),
            opt(m.mean_disc_target),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

fn write_seed_artifacts(dir: &Path, task: &PreparedTask, run: &SeedRun) -> CliResult<()> {
    mkdir(dir)?;
    write_metrics_csv(create(&dir.join("metrics.csv"))?, &run.metrics).map_err(runtime)?;

    let mut w = csv::Writer::from_writer(create(&dir.join("disc_losses.csv"))?);
    w.write_record(["epoch", "discriminator", "L_d"]).map_err(runtime)?;
    for m in &run.metrics {
        for (j, l) in m.domain_loss_per_discriminator.iter().enumerate() {
            w.write_record([m.epoch.to_string(), (j + 1).to_string(), fmt_sig(*l)])
                .map_err(runtime)?;
        }
    }
    w.flush().map_err(runtime)?;

    write_features(dir, task, &run.model.feature)?;

    let mut nets = vec![("feature", &run.model.feature), ("classifier", &run.model.classifier)];
    let names: Vec<String> = (0..run.model.discriminators.len())
        .map(|j| format!("discriminator{j}"))
        .collect();
    nets.extend(names.iter().map(String::as_str).zip(&run.model.discriminators));
    write_params_csv(create(&dir.join("params.csv"))?, &nets).map_err(runtime)?;

    write_normalizer(create(&dir.join("normalizer.csv"))?, &task.normalizer)
}

fn write_features(dir: &Path, task: &PreparedTask, feature: &crate::Mlp) -> CliResult<()> {
    for (ds, name) in [(&task.source, "features_source.csv"), (&task.target, "features_target.csv")] {
        let f = feature.predict(&ds.features).map_err(runtime)?;
        write_features_csv(create(&dir.join(name))?, &f, ds.labels.as_deref()).map_err(runtime)?;
    }
    Ok(())
}

fn write_normalizer<W: Write>(out: W, n: &Normalizer) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "mean", "std"]).map_err(runtime)?;
    for (i, (m, s)) in n.mean.iter().zip(&n.std).enumerate() {
        w.write_record([i.to_string(), fmt_sig(*m), fmt_sig(*s)]).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

fn print_summary(rows: &[SummaryRow]) {
    let mut by_task: BTreeMap<&str, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        by_task.entry(&r.task).or_default().push(r);
    }
    for (task, rs) in by_task {
        let n = rs.len() as f64;
        let tgt: Vec<f64> = rs.iter().filter_map(|r| r.target_accuracy).collect();
        let d_a = rs.iter().map(|r| r.proxy_a_distance).sum::<f64>() / n;
        let tgt = if tgt.is_empty() {
            "n/a".to_string()
        } else {
            format!("{:.4}", tgt.iter().sum::<f64>() / tgt.len() as f64)
        };
        println!(
            "{task} {}: {} seeds, target_acc {tgt}, d_A {d_a:.4}",
            rs[0].method,
            rs.len()
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Lambda,
    Dropout,
    KSamples,
    CurriculumRate,
    SourceFraction,
}

impl Axis {
    fn parse(s: &str) -> CliResult<Self> {
        Ok(match s {
            "lambda" => Axis::Lambda,
            "dropout" => Axis::Dropout,
            "k_samples" => Axis::KSamples,
            "curriculum_rate" => Axis::CurriculumRate,
            "source_fraction" => Axis::SourceFraction,
            other => {
                return Err(Failure::Usage(format!(
                    "unknown sweep axis {other:?} (lambda|dropout|k_samples|curriculum_rate|source_fraction)"
                )))
            }
        })
    }

    fn key(self) -> &'static str {
        match self {
            Axis::Lambda => "adapt.lambda",
            Axis::Dropout => "adapt.dropout",
            Axis::KSamples => "adapt.k_samples",
            Axis::CurriculumRate => "adapt.curriculum_rate",
            Axis::SourceFraction => "data.source_fraction",
        }
    }

    fn applies_to(self, m: Method) -> bool {
        match self {
            Axis::Lambda => m != Method::SourceOnly,
            Axis::Dropout => matches!(m, Method::D3a | Method::Cd3a),
            Axis::KSamples => matches!(m, Method::D3a | Method::Cd3a | Method::MultiHead),
            Axis::CurriculumRate => m == Method::Cd3a,
            Axis::SourceFraction => true,
        }
    }
}

fn sweep(a: &SweepArgs) -> CliResult<()> {
    let axis = Axis::parse(&a.axis)?;
    let (base, out) = resolve(&a.common, &[])?;
    if !axis.applies_to(base.method) {
        return Err(Failure::Usage(format!(
            "axis {} has no effect on method {}",
            a.axis, base.method
        )));
    }
    if base.data.num_tasks() != 1 {
        return Err(Failure::Usage(format!(
            "sweep needs a single task, config defines {}",
            base.data.num_tasks()
        )));
    }
    // validate every value before training anything
    let mut configs = Vec::new();
    for v in &a.values {
        let (cfg, _) = resolve(&a.common, &[(axis.key(), v.clone())])?;
        configs.push((v.trim().to_string(), cfg));
    }
    mkdir(&out)?;
    let mut w = csv::Writer::from_writer(create(&out.join("sweep_summary.csv"))?);
    w.write_record(["axis", "axis_value", "seed", "target_accuracy", "d_A"]).map_err(runtime)?;
    for (v, cfg) in &configs {
        let rows = run_experiment(cfg, &out.join(format!("{}_{v}", a.axis)))?;
        for r in &rows {
            w.write_record([
                a.axis.clone(),
                v.clone(),
                r.seed.to_string(),
                opt(r.target_accuracy),
                fmt_sig(r.proxy_a_distance),
            ])
            .map_err(runtime)?;
        }
        let acc: Vec<f64> = rows.iter().filter_map(|r| r.target_accuracy).collect();
        if !acc.is_empty() {
            println!(
                "{} = {v}: target_acc {:.4} over {} seeds",
                a.axis,
                acc.iter().sum::<f64>() / acc.len() as f64,
                acc.len()
            );
        }
    }
    w.flush().map_err(runtime)
}

/// Mean target accuracy per task from one run directory's `summary.csv`.
fn read_summary(dir: &Path) -> CliResult<BTreeMap<String, f64>> {
    let path = dir.join("summary.csv");
    let file = File::open(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(usage)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| usage(format!("{}: missing column {name}", path.display())))
    };
    let (ti, ai) = (col("task")?, col("target_acc")?);
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(usage)?;
        let line = i + 2;
        let v: f64 = rec.get(ai).unwrap_or("").parse().map_err(|_| {
            usage(format!("{}: line {line}: target_acc missing or not a number", path.display()))
        })?;
        acc.entry(rec.get(ti).unwrap_or("").to_string()).or_default().push(v);
    }
    if acc.is_empty() {
        return Err(usage(format!("{}: no rows", path.display())));
    }
    Ok(acc
        .into_iter()
        .map(|(t, v)| (t, v.iter().sum::<f64>() / v.len() as f64))
        .collect())
}

fn compare(a: &CompareArgs) -> CliResult<()> {
    if a.runs.len() < 2 {
        return Err(Failure::Usage("compare needs at least 2 run directories".into()));
    }
    let mut labels: Vec<String> = Vec::new();
    let mut tables = Vec::new();
    for dir in &a.runs {
        let base = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned());
        let mut label = base.clone();
        let mut n = 2;
        while labels.contains(&label) {
            label = format!("{base}#{n}");
            n += 1;
        }
        labels.push(label);
        tables.push(read_summary(dir)?);
    }
    let tasks: Vec<String> = tables[0].keys().cloned().collect();
    for (t, dir) in tables.iter().zip(&a.runs).skip(1) {
        if !t.keys().eq(tasks.iter()) {
            return Err(Failure::Usage(format!(
                "{} covers different tasks than {}",
                dir.display(),
                a.runs[0].display()
            )));
        }
    }
    let scores: Vec<Vec<f64>> = tables.iter().map(|t| t.values().copied().collect()).collect();
    let table = friedman_ranks(&labels, &tasks, &scores).map_err(usage)?;
    let report = significance_report(&table, a.alpha).map_err(usage)?;
    let out = a
        .out_dir
        .clone()
        .or_else(|| std::env::var_os("CD3A_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    mkdir(&out)?;
    report
        .write_csv(create(&out.join("significance.csv"))?)
        .map_err(runtime)?;
    println!("CD = {:.4} (alpha {}, {} methods, {} tasks)", report.cd, a.alpha, labels.len(), tasks.len());
    for (m, r) in labels.iter().zip(&table.average_ranks) {
        println!("  {m}: average rank {r:.3}");
    }
    Ok(())
}

fn export_features(a: &ExportArgs) -> CliResult<()> {
    let (cfg, out) = resolve(&a.common, &[])?;
    if a.task >= cfg.data.num_tasks() {
        return Err(Failure::Usage(format!(
            "--task {} out of range, config defines {} tasks",
            a.task,
            cfg.data.num_tasks()
        )));
    }
    let task = prepare_task(&cfg.data, a.task, cfg.seeds[0]).map_err(classify)?;
    let file = File::open(&a.params).map_err(|e| usage(format!("{}: {e}", a.params.display())))?;
    let store = ParamStore::read_csv(file).map_err(usage)?;
    let specs = ModelSpecs::new(&cfg.architecture, task.source.dim(), task.classes()).map_err(usage)?;
    let feature: crate::Mlp = store.load_mlp("feature", &specs.feature).map_err(usage)?;
    mkdir(&out)?;
    write_features(&out, &task, &feature)
}
