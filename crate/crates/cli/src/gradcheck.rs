use bsc_core::gradsuite::run_gradcheck_suite;
use clap::Args;

use crate::common::{load_config, CliError};
use crate::{CliResult, ConfigArg};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Test hook: scale analytic gradients before comparing.
    #[arg(long)]
    pub corrupt_scale: Option<f64>,
}

pub fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    let mut section = load_config(a.config.config.as_ref())?.gradcheck;
    if let Some(s) = a.corrupt_scale {
        section.corrupt_scale = s;
    }
    let checks = run_gradcheck_suite(&section)?;
    if let Some(c) = checks.iter().find(|c| c.report.checked == 0) {
        return Err(CliError::usage(format!("{}: no parameters to check", c.loss)));
    }
    println!(
        "{:<10} {:>8} {:>14}  worst coordinate",
        "loss", "checked", "max rel err"
    );
    for c in &checks {
        let r = &c.report;
        let coord = match (&r.worst_param, r.worst_index) {
            (Some(p), Some(i)) => format!("{p}[{i}]"),
            _ => "-".into(),
        };
        println!("{:<10} {:>8} {:>14.3e}  {coord}", c.loss, r.checked, r.max_rel_error);
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed(section.tolerance))
        .map(|c| {
            let r = &c.report;
            format!(
                "{} at {}[{}]",
                c.loss,
                r.worst_param.as_deref().unwrap_or("?"),
                r.worst_index.map_or("?".into(), |i| i.to_string())
            )
        })
        .collect();
    if failed.is_empty() {
        println!("all {} losses within {:e}", checks.len(), section.tolerance);
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "gradient check above {:e}: {}",
            section.tolerance,
            failed.join(", ")
        )))
    }
}
