use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bsc_core::analysis::{
    angle_report, class_means, export_embeddings, load_embeddings, min_angle_study_with, psi, psi_trace, AngleReport,
    MinAngleConfig,
};
use bsc_core::config::RunConfig;
use bsc_core::data::{ClassId, Dataset, TrainTestSplit};
use bsc_core::model::Network;
use bsc_core::numeric::Tensor;
use bsc_core::par::Execution;
use bsc_core::protocol::RunRecord;
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use crate::common::{input, load_config, to_json, write, CliError};
use crate::{CliResult, ConfigArg};

#[derive(Debug, Subcommand)]
pub enum AnglesCommand {
    /// Mean pairwise angle ψ between class-mean features.
    Psi(PsiArgs),
    /// Mean nearest-neighbour angle φ(n, d) of random unit vectors.
    Minangle(MinAngleArgs),
    /// ψ at every checkpoint listed in a run record.
    Trace(TraceArgs),
    /// Write extractor features of a split as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

fn pick(split: &TrainTestSplit, which: Split) -> &Dataset {
    match which {
        Split::Train => &split.train,
        Split::Test => &split.test,
    }
}

#[derive(Debug, Args)]
pub struct PsiArgs {
    /// Network checkpoint; features are computed on the configured data.
    #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
    pub checkpoint: Option<PathBuf>,
    /// Exported embedding CSV, used instead of a checkpoint.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Classes to include. Defaults to the checkpoint's classifier bank, or
    /// the base classes when the bank is empty, or every label in the CSV.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<ClassId>>,
    #[arg(long, value_enum, default_value = "train")]
    pub split: Split,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MinAngleArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run the pairwise pass on one thread.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub memory_cap_bytes: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// `run_record.json`; checkpoint paths resolve against its directory.
    #[arg(long)]
    pub record: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn cmd_angles(cmd: AnglesCommand) -> CliResult {
    match cmd {
        AnglesCommand::Psi(a) => cmd_psi(a),
        AnglesCommand::Minangle(a) => cmd_minangle(a),
        AnglesCommand::Trace(a) => cmd_trace(a),
        AnglesCommand::Export(a) => cmd_export(a),
    }
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> CliResult {
    let text = to_json(value);
    if let Some(p) = output {
        write(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn rows_of(data: &Dataset, classes: &[ClassId]) -> Vec<usize> {
    let keep: BTreeSet<ClassId> = classes.iter().copied().collect();
    (0..data.len())
        .filter(|&i| keep.contains(&data.samples[i].label))
        .collect()
}

fn cmd_psi(a: PsiArgs) -> CliResult {
    let report = match (&a.checkpoint, &a.embeddings) {
        (Some(ck), None) => {
            let net = input(ck, Network::load(ck))?;
            let cfg = load_config(a.config.config.as_ref())?;
            let split = cfg.load_split()?;
            let classes = match &a.classes {
                Some(c) => c.clone(),
                None if !net.classifiers.is_empty() => net.classifiers.class_ids(),
                None => cfg.make_plan(&split)?.base_classes,
            };
            let data = pick(&split, a.split);
            angle_report(&net, data, &rows_of(data, &classes), &classes)?
        }
        (None, Some(path)) => {
            let rows = input(path, load_embeddings(path))?;
            if rows.is_empty() {
                return Err(CliError::usage(format!("{}: no embedding rows", path.display())));
            }
            let classes: Vec<ClassId> = match &a.classes {
                Some(c) => c.clone(),
                None => rows
                    .iter()
                    .map(|r| r.label)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            let dim = rows[0].features.len();
            let flat: Vec<f64> = rows.iter().flat_map(|r| r.features.iter().copied()).collect();
            let features = Tensor::new(vec![rows.len(), dim], flat)?;
            let labels: Vec<ClassId> = rows.iter().map(|r| r.label).collect();
            let means: Vec<Vec<f64>> = class_means(&features, &labels, &classes)?.into_values().collect();
            AngleReport {
                psi_degrees: psi(&means)?,
                n_classes: means.len(),
                dim,
                mean_norms: means
                    .iter()
                    .map(|m| m.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect(),
                classes,
            }
        }
        _ => return Err(CliError::usage("give exactly one of --checkpoint or --embeddings")),
    };
    emit(&report, a.output.as_deref())
}

#[derive(Serialize)]
struct MinAngleOutput {
    n: usize,
    d: usize,
    seed: u64,
    phi_degrees: f64,
}

fn cmd_minangle(a: MinAngleArgs) -> CliResult {
    let mut cfg = MinAngleConfig::default();
    if a.sequential {
        cfg.execution = Execution::Sequential;
    }
    if let Some(cap) = a.memory_cap_bytes {
        cfg.memory_cap_bytes = cap;
    }
    let phi = min_angle_study_with(a.n, a.d, a.seed, &cfg)?;
    emit(
        &MinAngleOutput {
            n: a.n,
            d: a.d,
            seed: a.seed,
            phi_degrees: phi,
        },
        a.output.as_deref(),
    )
}

#[derive(Serialize)]
struct TraceRow {
    phase: String,
    epoch: usize,
    checkpoint: PathBuf,
    psi_degrees: f64,
}

fn cmd_trace(a: TraceArgs) -> CliResult {
    let record = input(&a.record, RunRecord::load(&a.record))?;
    let cfg = input(&a.record, RunConfig::from_json(&record.config.to_string()))?;
    if record.checkpoints.is_empty() {
        return Err(CliError::usage(format!(
            "{}: the record lists no checkpoints",
            a.record.display()
        )));
    }
    let base = a.record.parent().unwrap_or(Path::new("."));
    let paths: Vec<PathBuf> = record.checkpoints.iter().map(|c| base.join(&c.path)).collect();
    let split = cfg.load_split()?;
    let plan = cfg.make_plan(&split)?;
    let points = psi_trace(&paths, &split.train, &plan.base_train, &plan.base_classes)?;
    let rows: Vec<TraceRow> = record
        .checkpoints
        .iter()
        .zip(points)
        .map(|(c, p)| TraceRow {
            phase: c.phase.clone(),
            epoch: c.epoch,
            checkpoint: c.path.clone(),
            psi_degrees: p.psi_degrees,
        })
        .collect();
    emit(&rows, a.output.as_deref())
}

fn cmd_export(a: ExportArgs) -> CliResult {
    let net = input(&a.checkpoint, Network::load(&a.checkpoint))?;
    let cfg = load_config(a.config.config.as_ref())?;
    let split = cfg.load_split()?;
    let data = pick(&split, a.split);
    let all: Vec<usize> = (0..data.len()).collect();
    export_embeddings(&net, data, &all, &a.output)?;
    println!("{} rows written to {}", all.len(), a.output.display());
    Ok(())
}
