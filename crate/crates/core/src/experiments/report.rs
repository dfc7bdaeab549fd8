//! Run reports, convergence measurement and JSON/CSV output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EvalPoint, Hyper};

use super::protocol::Protocol;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub final_acc: f64,
    /// First evaluated iteration at or above the report's threshold.
    pub iters_to_threshold: Option<usize>,
    pub curve: Vec<EvalPoint>,
    /// Source network(s) the trial transferred from.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

/// Mean and sample (`n - 1`) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Summary { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub arch: String,
    pub protocol: Protocol,
    pub task: String,
    pub k: usize,
    pub n: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub hyper: Hyper,
    pub threshold: Option<f64>,
    /// How layers above the frozen prefix start: always `"random"`.
    pub head_init: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvStamp {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub deterministic: bool,
}

impl EnvStamp {
    pub fn current(deterministic: bool) -> EnvStamp {
        EnvStamp {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
            deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ConfigEcho,
    pub per_trial: Vec<TrialResult>,
    pub summary: Summary,
    pub env: EnvStamp,
}

impl RunReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_trial.iter().map(|t| t.final_acc).collect()
    }

    /// Median of `iters_to_threshold` with "not reached" ranked last;
    /// `None` when the median itself was not reached.
    pub fn median_iterations(&self) -> Option<f64> {
        let mut v: Vec<Option<usize>> = self
            .per_trial
            .iter()
            .map(|t| t.iters_to_threshold)
            .collect();
        v.sort_by_key(|x| x.unwrap_or(usize::MAX));
        let n = v.len();
        if n == 0 {
            return None;
        }
        if n % 2 == 1 {
            v[n / 2].map(|x| x as f64)
        } else {
            Some((v[n / 2 - 1]? + v[n / 2]?) as f64 / 2.0)
        }
    }

    /// Re-derives thresholds and the summary after `threshold` changes.
    pub fn set_threshold(&mut self, threshold: f64) {
        self.config.threshold = Some(threshold);
        for t in &mut self.per_trial {
            t.iters_to_threshold = iterations_to_accuracy(&t.curve, threshold);
        }
    }
}

/// First evaluation iteration whose accuracy reaches `threshold`.
pub fn iterations_to_accuracy(curve: &[EvalPoint], threshold: f64) -> Option<usize> {
    curve
        .iter()
        .find(|p| p.accuracy >= threshold)
        .map(|p| p.iteration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidArgument(format!(
                "unknown report format {s:?}"
            ))),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn protocol_name(p: Protocol) -> String {
    serde_json::to_value(p)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// JSON: an array of reports. CSV: one row per (protocol, task, trial).
pub fn emit_report(
    reports: &[RunReport],
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Missing("no reports to emit".into()));
    }
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(reports)? + "\n",
        ReportFormat::Csv => {
            let mut s = String::from("protocol,task,k,n,trial,seed,final_acc,iters_to_threshold\n");
            for r in reports {
                for t in &r.per_trial {
                    let iters = t
                        .iters_to_threshold
                        .map(|i| i.to_string())
                        .unwrap_or_default();
                    writeln!(
                        s,
                        "{},{},{},{},{},{},{},{}",
                        protocol_name(r.config.protocol),
                        r.config.task,
                        r.config.k,
                        r.config.n,
                        t.trial,
                        t.seed,
                        t.final_acc,
                        iters
                    )
                    .unwrap();
                }
            }
            s
        }
    };
    write_text(path.as_ref(), &text)
}

/// Learning curves as `protocol,task,k,trial,iteration,accuracy` rows.
pub fn emit_curves(reports: &[RunReport], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("protocol,task,k,trial,iteration,accuracy\n");
    for r in reports {
        for t in &r.per_trial {
            for p in &t.curve {
                writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    protocol_name(r.config.protocol),
                    r.config.task,
                    r.config.k,
                    t.trial,
                    p.iteration,
                    p.accuracy
                )
                .unwrap();
            }
        }
    }
    write_text(path.as_ref(), &s)
}
