//! Checkpoints, training history, run manifests and evaluation reports.
//!
//! A checkpoint is a JSON document holding the run configuration, the seed,
//! the epoch and validation loss it was taken at, and the model. Every
//! matrix is written as `{"shape": [rows, cols], "data": [...]}` in
//! row-major order; the LSTM weights are `4·d_h × (d_x + d_h)` with gate
//! blocks in the order input, forget, candidate, output and columns ordered
//! `[x; h]`, the bias is `4·d_h × 1`, and the readout is `d_x × d_h`.
//! Doubles are printed in shortest round-trip form, so reading a checkpoint
//! back yields bit-identical parameters.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sarnn_core::lstm::Forecaster;
use sarnn_core::metrics::MetricReport;
use sarnn_core::regimes::{EpochStats, ModeKind};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_atomic, write_json};

pub const CHECKPOINT_FORMAT: &str = "sarnn-checkpoint";
pub const RUN_FORMAT: &str = "sarnn-run";
pub const REPORT_FORMAT: &str = "sarnn-report";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// 0-based epoch after which the parameters were taken.
    pub epoch: usize,
    pub val_loss: f64,
    pub dataset_sha256: String,
    pub config: RunConfig,
    pub model: Forecaster,
}

impl CheckpointFile {
    pub fn new(config: &RunConfig, dataset_sha256: &str, epoch: usize, val_loss: f64, model: Forecaster) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: FORMAT_VERSION,
            seed: config.model.seed,
            epoch,
            val_loss,
            dataset_sha256: dataset_sha256.into(),
            config: config.clone(),
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: CheckpointFile = read_json(path)?;
        if c.format != CHECKPOINT_FORMAT || c.version != FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint format {} v{}", c.format, c.version)));
        }
        if !c.model.all_finite() {
            return Err(Error::format(path, "checkpoint holds non-finite parameters"));
        }
        Ok(c)
    }
}

/// One row of `history.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub stats: EpochStats,
    pub mode: ModeKind,
    pub wall_time_s: f64,
}

pub const HISTORY_HEADER: &str = "epoch,mode,p,train_loss,val_loss_p1,wall_time_s";

/// Renders the training history. Losses use the shortest round-trip float
/// form, so identical runs produce identical files apart from the last
/// column.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.stats;
        let _ = writeln!(out, "{},{},{},{},{},{:.3}", s.epoch, r.mode, s.p, s.train_loss, s.val_loss, r.wall_time_s);
    }
    out
}

/// The history without its wall-clock column, for reproducibility checks.
pub fn strip_wall_time(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub dataset_sha256: String,
    pub dataset_provenance: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub schedule_k: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub rmse: f64,
    pub spectrum_error: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub checkpoint: String,
    pub seed: u64,
    pub dataset_sha256: String,
    pub warmup: usize,
    pub model: MetricReport,
    /// Last-value persistence on the same cases.
    pub persistence: BaselineSummary,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cases_csv(report: &MetricReport) -> String {
    let mut out = String::from("case,start,completed_steps,diverged,rmse,spectrum_error,ssim\n");
    for c in &report.cases {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.case_index,
            c.start,
            c.completed_steps,
            c.diverged,
            opt(c.rmse),
            opt(c.spectrum_error),
            opt(c.ssim)
        );
    }
    out
}

/// Per-step curves; `step` is 1-based, counting forecast steps after the
/// warm-up.
pub fn curves_csv(report: &MetricReport, persistence: &MetricReport) -> String {
    let ssim = report.ssim_curve.as_ref();
    let mut out = String::from("step,rmse,persistence_rmse");
    if ssim.is_some() {
        out.push_str(",ssim");
    }
    out.push('\n');
    for (t, r) in report.rmse_curve.iter().enumerate() {
        let _ = write!(out, "{},{},{}", t + 1, r, opt(persistence.rmse_curve.get(t).copied()));
        if let Some(s) = ssim {
            let _ = write!(out, ",{}", s[t]);
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}
