use std::path::PathBuf;

use bsc_core::metrics::{render_percent, AccuracyMatrix};
use clap::Args;
use serde::Serialize;

use crate::common::{input, to_json, write};
use crate::CliResult;

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Accuracy-matrix CSV (`t,acc_all,acc_base,acc_new,active_classes`).
    pub path: PathBuf,
    /// Cells are percentages rather than fractions.
    #[arg(long)]
    pub percent: bool,
    /// Summary JSON path; defaults to `<input stem>.summary.json` beside the input.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary {
    input: PathBuf,
    percent_input: bool,
    sessions: usize,
    pd: Option<f64>,
    nla: Option<f64>,
    bma: Option<f64>,
    rendered: Rendered,
}

#[derive(Serialize)]
struct Rendered {
    pd: Option<String>,
    nla: Option<String>,
    bma: Option<String>,
}

pub fn cmd_metrics(args: MetricsArgs) -> CliResult {
    let matrix = input(&args.path, AccuracyMatrix::load_csv(&args.path, args.percent))?;
    let s = matrix.summary();
    let show = |v: Option<f64>| v.map(render_percent);
    let summary = Summary {
        input: args.path.clone(),
        percent_input: args.percent,
        sessions: matrix.entries.len(),
        pd: s.pd,
        nla: s.nla,
        bma: s.bma,
        rendered: Rendered {
            pd: show(s.pd),
            nla: show(s.nla),
            bma: show(s.bma),
        },
    };
    let output = args.output.unwrap_or_else(|| args.path.with_extension("summary.json"));
    write(&output, &to_json(&summary))?;
    print!("{}", s.render());
    Ok(())
}
