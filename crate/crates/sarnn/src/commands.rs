//! The four subcommands. Each takes its options and a sink for progress and
//! summary lines, and returns what it produced.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sarnn_core::autodiff::checks::CheckResult;
use sarnn_core::autodiff::OpKind;
use sarnn_core::data::sample_eval_cases;
use sarnn_core::metrics::{evaluate as evaluate_model, evaluate_persistence, EvalOptions, MetricReport};
use sarnn_core::regimes::checks::{failures, run_all};
use sarnn_core::regimes::train_with;

use crate::artifacts::{
    cases_csv, curves_csv, history_csv, write_text, BaselineSummary, CheckpointFile, HistoryRow, ReportFile, RunManifest,
    FORMAT_VERSION, REPORT_FORMAT, RUN_FORMAT,
};
use crate::config::{DatasetConfig, Metric, RunConfig};
use crate::error::{Error, Result};
use crate::fsutil::{guard_file, prepare_output_dir, write_json};
use crate::store::{build_dataset, write_dataset, DatasetManifest};

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Options {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Start from a built-in preset: mackey-snr60, mackey-snr10, darwin or wave.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed override: the data seed for generate, the run seed for train,
    /// the case-sampling seed for evaluate and the draw seed for gradcheck.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Allow writing into an existing, non-empty output location.
    #[arg(long)]
    pub force: bool,
}

impl Options {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), self.preset.as_deref())
    }

    fn has_config(&self) -> bool {
        self.config.is_some() || self.preset.is_some()
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) {
    // Progress output is best effort; a closed pipe must not abort a run.
    let _ = writeln!(out, "{line}");
}

pub struct Generated {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

/// Generates (or reads) the configured dataset and stores it in `--out`, or
/// `<output_dir>/dataset` by default.
pub fn generate(opts: &Options, out: &mut dyn Write) -> Result<Generated> {
    let mut cfg = opts.load()?;
    if let (Some(seed), DatasetConfig::Mackey(m)) = (opts.seed, &mut cfg.dataset) {
        m.seed = seed;
    }
    cfg.validate()?;
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output_dir.join("dataset"));
    let ds = build_dataset(&cfg.dataset)?;
    prepare_output_dir(&dir, opts.force)?;
    let manifest = write_dataset(&dir, &ds)?;
    let fmt = |s: &[[usize; 2]]| {
        if s.len() > 1 && s.iter().all(|x| *x == s[0]) {
            format!("{}x{}x{}", s.len(), s[0][0], s[0][1])
        } else {
            s.iter().map(|[r, c]| format!("{r}x{c}")).collect::<Vec<_>>().join("+")
        }
    };
    say(
        out,
        format_args!(
            "wrote {}: train {} val {} test {}",
            dir.display(),
            fmt(&manifest.splits.train),
            fmt(&manifest.splits.val),
            fmt(&manifest.splits.test)
        ),
    );
    say(out, format_args!("sha256 {}", manifest.sha256));
    Ok(Generated { dir, manifest })
}

pub struct Trained {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub history: Vec<HistoryRow>,
}

/// Trains one seed and writes `config.toml`, `history.csv`,
/// `checkpoint.json` (best validation loss), `last.json` and
/// `manifest.json` into the run directory.
pub fn train(opts: &Options, out: &mut dyn Write) -> Result<Trained> {
    let mut cfg = opts.load()?;
    if let Some(seed) = opts.seed {
        cfg.model.seed = seed;
    }
    cfg.validate()?;
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let ds = build_dataset(&cfg.dataset)?;
    prepare_output_dir(&dir, opts.force)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;

    let tc = cfg.train_config();
    say(
        out,
        format_args!(
            "training {} seed {} on {} ({} train / {} val sequences, d_x {})",
            tc.mode,
            tc.seed,
            ds.data.provenance,
            ds.data.train.len(),
            ds.data.val.len(),
            ds.data.input_dim
        ),
    );
    let start = Instant::now();
    let mut history = Vec::with_capacity(tc.epochs);
    let log_every = (tc.epochs / 20).max(1);
    let result = train_with(&ds.data, &tc, |s| {
        history.push(HistoryRow { stats: s.clone(), mode: tc.mode, wall_time_s: start.elapsed().as_secs_f64() });
        if s.epoch % log_every == 0 || s.epoch + 1 == tc.epochs {
            say(out, format_args!("epoch {:>5} p {:.4} train {:.6e} val {:.6e}", s.epoch, s.p, s.train_loss, s.val_loss));
        }
    });
    write_text(&dir.join("history.csv"), &history_csv(&history))?;
    let outcome = result?;

    let best = &outcome.best;
    CheckpointFile::new(&cfg, &ds.sha256, best.epoch, best.val_loss, best.model.clone()).save(&dir.join("checkpoint.json"))?;
    let last_epoch = outcome.history.last().map_or(0, |s| s.epoch);
    let last_val = outcome.history.last().map_or(best.val_loss, |s| s.val_loss);
    CheckpointFile::new(&cfg, &ds.sha256, last_epoch, last_val, outcome.last.clone()).save(&dir.join("last.json"))?;
    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        version: FORMAT_VERSION,
        seed: tc.seed,
        dataset_sha256: ds.sha256.clone(),
        dataset_provenance: ds.data.provenance.clone(),
        best_epoch: best.epoch,
        best_val_loss: best.val_loss,
        epochs_run: outcome.history.len(),
        stopped_early: outcome.stopped_early,
        schedule_k: tc.effective_k(),
        config: cfg,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    say(
        out,
        format_args!(
            "best epoch {} val {:.6e} after {} epochs{}; wrote {}",
            best.epoch,
            best.val_loss,
            manifest.epochs_run,
            if outcome.stopped_early { " (early stop)" } else { "" },
            dir.display()
        ),
    );
    Ok(Trained { dir, manifest, history })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6e}"))
}

fn drop_unwanted(report: &mut MetricReport, cfg: &RunConfig) {
    if !cfg.evaluation.wants(Metric::Spectrum) {
        report.spectrum_error = None;
        report.cases.iter_mut().for_each(|c| c.spectrum_error = None);
    }
}

/// Forecasts the test cases with a checkpoint and writes `report.json`,
/// `cases.csv` and `curves.csv`. Without `--config`/`--preset` the
/// configuration stored in the checkpoint is used.
pub fn evaluate(opts: &Options, checkpoint: &Path, out: &mut dyn Write) -> Result<ReportFile> {
    let ck = CheckpointFile::load(checkpoint)?;
    let mut cfg = if opts.has_config() { opts.load()? } else { ck.config.clone() };
    if let Some(seed) = opts.seed {
        cfg.evaluation.seed = seed;
    }
    cfg.validate()?;
    let dir = match &opts.out {
        Some(d) => d.clone(),
        None => checkpoint.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf(),
    };
    let report_path = dir.join("report.json");
    guard_file(&report_path, opts.force)?;

    let ds = build_dataset(&cfg.dataset)?;
    if ck.model.input_dim() != ds.data.input_dim {
        return Err(Error::Usage(format!(
            "checkpoint expects d_x = {} but the dataset has d_x = {}",
            ck.model.input_dim(),
            ds.data.input_dim
        )));
    }
    if ck.dataset_sha256 != ds.sha256 {
        say(out, format_args!("note: dataset hash differs from the one the checkpoint was trained on"));
    }
    let test = ds.data.test.first().ok_or_else(|| Error::Usage("dataset has no test split".into()))?;
    let e = &cfg.evaluation;
    let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
    let cases = sample_eval_cases(test, e.cases, e.warmup, e.horizon, &mut rng)?;
    let grid = ds.grid.filter(|_| e.wants(Metric::Ssim)).map(|g| g.spec(e.data_range));
    let options = EvalOptions { grid };
    let mut model = evaluate_model(&ck.model, &cases, &ds.data.scaler, &options)?;
    let mut baseline = evaluate_persistence(&cases, &ds.data.scaler, &options)?;
    drop_unwanted(&mut model, &cfg);
    drop_unwanted(&mut baseline, &cfg);

    std::fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
    write_text(&dir.join("cases.csv"), &cases_csv(&model))?;
    write_text(&dir.join("curves.csv"), &curves_csv(&model, &baseline))?;
    let report = ReportFile {
        format: REPORT_FORMAT.into(),
        version: FORMAT_VERSION,
        checkpoint: checkpoint.display().to_string(),
        seed: ck.seed,
        dataset_sha256: ds.sha256.clone(),
        warmup: e.warmup,
        persistence: BaselineSummary { rmse: baseline.rmse, spectrum_error: baseline.spectrum_error, ssim: baseline.ssim },
        model,
    };
    write_json(&report_path, &report)?;
    say(
        out,
        format_args!(
            "rmse {:.6e} spectrum_error {} ssim {} | persistence rmse {:.6e} | cases {} diverged {} horizon {}",
            report.model.rmse,
            fmt_opt(report.model.spectrum_error),
            fmt_opt(report.model.ssim),
            report.persistence.rmse,
            report.model.cases.len(),
            report.model.diverged,
            report.model.horizon
        ),
    );
    Ok(report)
}

/// Runs every gradient, identity and separation check. `fault` corrupts one
/// primitive's adjoint (a self-test of the checks).
pub fn gradcheck(opts: &Options, fault: Option<OpKind>, out: &mut dyn Write) -> Result<Vec<CheckResult>> {
    let mut cfg = if opts.has_config() { opts.load()? } else { RunConfig::default() };
    if let Some(seed) = opts.seed {
        cfg.gradcheck.seed = seed;
    }
    cfg.validate()?;
    let results = run_all(&cfg.gradcheck, fault)?;
    for r in &results {
        say(
            out,
            format_args!(
                "{:<22} max_err {:>10.3e}  tol {:>8.1e}  {}",
                r.name,
                r.max_error,
                r.tolerance,
                if r.passed { "ok" } else { "FAIL" }
            ),
        );
    }
    let failed = failures(&results);
    if !failed.is_empty() {
        return Err(Error::CheckFailed(failed));
    }
    say(out, format_args!("all {} checks passed", results.len()));
    Ok(results)
}
