//! Session accuracies and the PD / NLA / BMA summaries.
//!
//! Accuracies are fractions in `[0, 1]`; reports render them as percentages
//! with two decimals.
//!
//! CSV layout:
//!
//! ```text
//! t,acc_all,acc_base,acc_new,active_classes
//! 1,0.9,0.9,,6
//! 2,0.8,0.85,0.6,8
//! pd,nla,bma
//! 0.1,0.6,0.875
//! ```
//!
//! Undefined cells are empty. Lines starting with `#` are comments. The
//! trailing `pd,nla,bma` block is written for readers and ignored on
//! ingestion, where the summary is recomputed.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `A^t` over the three class scopes of session `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionAccuracy {
    pub t: usize,
    /// Accuracy over all classes seen so far.
    pub acc_all: f64,
    /// Accuracy on base-class test samples.
    pub acc_base: Option<f64>,
    /// Accuracy on incremental-class test samples; absent at `t = 1`.
    pub acc_new: Option<f64>,
    pub num_active_classes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub entries: Vec<SessionAccuracy>,
}

/// PD, NLA and BMA, each `None` when undefined for the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub pd: Option<f64>,
    pub nla: Option<f64>,
    pub bma: Option<f64>,
}

const HEADER: &str = "t,acc_all,acc_base,acc_new,active_classes";
const SUMMARY_HEADER: &str = "pd,nla,bma";

fn check_unit(v: f64, what: &str, t: usize) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Schema(format!("session {t}: {what} = {v} is outside [0, 1]")))
    }
}

impl AccuracyMatrix {
    pub fn new(entries: Vec<SessionAccuracy>) -> Result<Self> {
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    /// Sessions numbered `1..=T` in order, accuracies in `[0, 1]`, no `acc_new` at `t = 1`.
    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.entries.iter().enumerate() {
            if e.t != k + 1 {
                return Err(Error::Schema(format!(
                    "row {} has t = {}, expected {}",
                    k + 1,
                    e.t,
                    k + 1
                )));
            }
            check_unit(e.acc_all, "acc_all", e.t)?;
            if let Some(b) = e.acc_base {
                check_unit(b, "acc_base", e.t)?;
            }
            if let Some(n) = e.acc_new {
                if e.t == 1 {
                    return Err(Error::Schema("acc_new must be empty at t = 1".into()));
                }
                check_unit(n, "acc_new", e.t)?;
            }
        }
        Ok(())
    }

    pub fn num_sessions(&self) -> usize {
        self.entries.len()
    }

    pub fn push(&mut self, entry: SessionAccuracy) -> Result<()> {
        self.entries.push(entry);
        if let Err(e) = self.validate() {
            self.entries.pop();
            return Err(e);
        }
        Ok(())
    }

    /// `A¹_{C¹} − A^T_{C^{1:T}}`.
    pub fn pd(&self) -> Result<f64> {
        let t = self.num_sessions();
        if t < 2 {
            return Err(Error::UndefinedMetric {
                metric: "pd",
                detail: format!("needs at least 2 sessions, have {t}"),
            });
        }
        Ok(self.entries[0].acc_all - self.entries[t - 1].acc_all)
    }

    /// Mean of `acc_new` over sessions `2..=T`.
    pub fn nla(&self) -> Result<f64> {
        let t = self.num_sessions();
        if t < 2 {
            return Err(Error::UndefinedMetric {
                metric: "nla",
                detail: format!("needs at least 2 sessions, have {t}"),
            });
        }
        let mut sum = 0.0;
        for e in &self.entries[1..] {
            sum += e.acc_new.ok_or_else(|| Error::UndefinedMetric {
                metric: "nla",
                detail: format!("acc_new missing at t = {}", e.t),
            })?;
        }
        Ok(sum / (t - 1) as f64)
    }

    /// Mean of `acc_base` over sessions `1..=T`.
    pub fn bma(&self) -> Result<f64> {
        let t = self.num_sessions();
        if t == 0 {
            return Err(Error::UndefinedMetric {
                metric: "bma",
                detail: "no sessions".into(),
            });
        }
        let mut sum = 0.0;
        for e in &self.entries {
            sum += e.acc_base.ok_or_else(|| Error::UndefinedMetric {
                metric: "bma",
                detail: format!("acc_base missing at t = {}", e.t),
            })?;
        }
        Ok(sum / t as f64)
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            pd: self.pd().ok(),
            nla: self.nla().ok(),
            bma: self.bma().ok(),
        }
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::new();
        writeln!(out, "{HEADER}").unwrap();
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.t,
                e.acc_all,
                cell(e.acc_base),
                cell(e.acc_new),
                e.num_active_classes
            )
            .unwrap();
        }
        let s = self.summary();
        writeln!(out, "{SUMMARY_HEADER}").unwrap();
        writeln!(out, "{},{},{}", cell(s.pd), cell(s.nla), cell(s.bma)).unwrap();
        out
    }

    /// Parses the CSV layout above. With `percent`, accuracy cells are read as
    /// percentages and divided by 100.
    pub fn from_csv(text: &str, percent: bool) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.replace(' ', "") == HEADER => {}
            Some((n, h)) => {
                return Err(Error::Schema(format!(
                    "line {n}: expected header `{HEADER}`, found `{h}`"
                )))
            }
            None => return Err(Error::Schema("empty accuracy CSV".into())),
        }
        let scale = if percent { 0.01 } else { 1.0 };
        let mut entries = Vec::new();
        for (n, line) in lines {
            if line.replace(' ', "") == SUMMARY_HEADER {
                break;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::Schema(format!("line {n}: {} columns, expected 5", f.len())));
            }
            let parse_f = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(|v| Some(v * scale))
                    .ok_or_else(|| Error::Parse {
                        line: n,
                        detail: format!("`{s}` is not a number"),
                    })
            };
            let parse_u = |s: &str| -> Result<usize> {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    line: n,
                    detail: format!("`{s}` is not a non-negative integer"),
                })
            };
            entries.push(SessionAccuracy {
                t: parse_u(f[0])?,
                acc_all: parse_f(f[1])?.ok_or_else(|| Error::Parse {
                    line: n,
                    detail: "acc_all is required".into(),
                })?,
                acc_base: parse_f(f[2])?,
                acc_new: parse_f(f[3])?,
                num_active_classes: if f[4].is_empty() { 0 } else { parse_u(f[4])? },
            });
        }
        Self::new(entries)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, percent: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, percent)
    }
}

/// Fraction → percentage with two decimals.
pub fn render_percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl MetricSummary {
    /// Human-readable table, one metric per line.
    pub fn render(&self) -> String {
        let show = |v: Option<f64>| v.map(render_percent).unwrap_or_else(|| "undefined".into());
        format!(
            "PD  {}\nNLA {}\nBMA {}\n",
            show(self.pd),
            show(self.nla),
            show(self.bma)
        )
    }
}
