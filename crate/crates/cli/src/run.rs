use std::path::{Path, PathBuf};

use bsc_core::analysis::{angle_report, export_embeddings};
use bsc_core::config::{RunConfig, SeedConfig};
use bsc_core::protocol::{run_full, CheckpointPolicy, PhaseTimings, RunRecord};
use clap::Args;
use serde::Serialize;
use serde_json::Value;

use crate::common::{create_dir, input, to_json, write};
use crate::CliResult;

pub const OUTPUT_DIR_ENV: &str = "BSC_OUTPUT_DIR";
const CHECKPOINT_DIR: &str = "checkpoints";

/// Precedence for every overridable field: flag > config file > default.
/// The output directory also honours `BSC_OUTPUT_DIR`, between flag and file.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Sets the data, plan and run seeds together.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
}

/// Applies command-line and environment overrides to a loaded config.
pub fn resolve(mut cfg: RunConfig, args: &RunArgs, env_dir: Option<PathBuf>) -> bsc_core::Result<RunConfig> {
    if let Some(dir) = args.output_dir.clone().or(env_dir) {
        cfg.output_dir = dir;
    }
    if let Some(s) = args.seed {
        cfg.seeds = SeedConfig {
            data: s,
            plan: s,
            run: s,
        };
    }
    if let Some(e) = args.pretrain_epochs {
        cfg.pretrain.epochs = e;
    }
    if let Some(e) = args.finetune_epochs {
        cfg.finetune.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Timings<'a> {
    config: &'a Value,
    timings: PhaseTimings,
}

#[derive(Serialize)]
struct Angles<'a> {
    config: &'a Value,
    base_classes: bsc_core::analysis::AngleReport,
}

pub fn cmd_run(args: RunArgs) -> CliResult {
    let file_cfg = input(&args.config, RunConfig::load(&args.config))?;
    let env_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    let cfg = resolve(file_cfg, &args, env_dir)?;
    let resolved = cfg.to_json();
    let out = cfg.output_dir.clone();
    create_dir(&out)?;

    let split = cfg.load_split()?;
    let plan = cfg.make_plan(&split)?;
    let policy = CheckpointPolicy {
        dir: cfg.evaluation.save_checkpoints.then(|| out.join(CHECKPOINT_DIR)),
        pretrain_every: cfg.evaluation.pretrain_checkpoint_every,
    };
    let outcome = run_full(&cfg.model, &cfg.phases(), &split, &plan, &policy)?;

    let mut record = RunRecord::new(resolved.clone(), &outcome);
    for c in &mut record.checkpoints {
        c.path = Path::new(CHECKPOINT_DIR).join(&c.path);
    }
    record.save(&out.join("run_record.json"))?;
    let csv = format!("# config: {resolved}\n{}", outcome.sessions.to_csv());
    write(&out.join("metrics.csv"), &csv)?;
    write(
        &out.join("timings.json"),
        &to_json(&Timings {
            config: &resolved,
            timings: outcome.timings,
        }),
    )?;
    if cfg.analysis.psi_after_run {
        let report = angle_report(&outcome.network, &split.train, &plan.base_train, &plan.base_classes)?;
        write(
            &out.join("angles.json"),
            &to_json(&Angles {
                config: &resolved,
                base_classes: report,
            }),
        )?;
    }
    if cfg.evaluation.export_embeddings {
        let all: Vec<usize> = (0..split.test.len()).collect();
        export_embeddings(&outcome.network, &split.test, &all, &out.join("embeddings.csv"))?;
    }
    print!("{}", outcome.sessions.summary().render());
    println!("outputs written to {}", out.display());
    Ok(())
}
