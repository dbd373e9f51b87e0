//! Run configuration: a TOML file with `[dataset]`, `[model]`, `[training]`,
//! `[evaluation]` and `[gradcheck]` sections.
//!
//! A file may start from a named preset (`preset = "wave"` at the top level,
//! or `--preset` on the command line); its own keys then override the
//! preset's. Unknown keys are rejected and every error names the offending
//! field path.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sarnn_core::data::{MackeyGlassConfig, MackeySplit, WaveConfig};
use sarnn_core::regimes::checks::GradCheckConfig;
use sarnn_core::regimes::{ModeKind, TrainConfig};

use crate::error::{Error, Result};

pub const PRESETS: [(&str, &str); 4] = [
    ("mackey-snr60", include_str!("../presets/mackey-snr60.toml")),
    ("mackey-snr10", include_str!("../presets/mackey-snr10.toml")),
    ("darwin", include_str!("../presets/darwin.toml")),
    ("wave", include_str!("../presets/wave.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub gradcheck: GradCheckConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: default_output_dir(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }
}

/// Where the series comes from, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Mackey(MackeySource),
    Darwin(DarwinSource),
    Wave(WaveSource),
    /// A directory written by `sarnn generate`.
    Stored(StoredSource),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Mackey(MackeySource::default())
    }
}

impl DatasetConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetConfig::Mackey(_) => "mackey",
            DatasetConfig::Darwin(_) => "darwin",
            DatasetConfig::Wave(_) => "wave",
            DatasetConfig::Stored(_) => "stored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MackeySource {
    /// Seeds the history offset and the observation noise.
    pub seed: u64,
    /// Signal-to-noise ratio in dB; `inf` disables noise.
    pub snr_db: f64,
    pub mackey: MackeyGlassConfig,
    pub split: MackeySplit,
}

impl Default for MackeySource {
    fn default() -> Self {
        Self { seed: 1, snr_db: 60.0, mackey: MackeyGlassConfig::default(), split: MackeySplit::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarwinSource {
    /// Single-column CSV; relative paths resolve against the config file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveSource {
    pub wave: WaveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredSource {
    pub dir: PathBuf,
    /// Expected dataset hash; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    /// Seeds the initial weights and the feedback masks.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden_dim: 100, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub mode: ModeKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seq_len: usize,
    pub batch_size: usize,
    /// Inverse-sigmoid schedule constant; defaults to `max(epochs / 18, 20)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule_k: Option<f64>,
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: t.mode,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            seq_len: t.seq_len,
            batch_size: t.batch_size,
            schedule_k: t.schedule_k,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rmse,
    Spectrum,
    /// Only computed for gridded datasets.
    Ssim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub cases: usize,
    pub warmup: usize,
    pub horizon: usize,
    /// Seeds the choice of test cases, independently of the run seed.
    pub seed: u64,
    pub metrics: Vec<Metric>,
    /// SSIM dynamic range in raw units.
    pub data_range: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            cases: 100,
            warmup: 20,
            horizon: 896,
            seed: 0,
            metrics: vec![Metric::Rmse, Metric::Spectrum, Metric::Ssim],
            data_range: 1.0,
        }
    }
}

impl EvaluationConfig {
    pub fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }
}

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("preset: unknown preset {name:?} (expected one of {})", names.join(", ")))
    })
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{origin}: {e}")))
}

/// Overlays `top` on `base`. Tables merge key by key; anything else is
/// replaced. A `[dataset]` of a different `kind` replaces the preset's
/// dataset wholesale, since the two have different fields.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => {
                let kind_changed = key == "dataset" && t.get("kind").is_some_and(|k| Some(k) != b.get("kind"));
                if kind_changed {
                    *b = t;
                } else {
                    merge(b, t);
                }
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Builds a config from an optional preset and an optional file, the
    /// file taking precedence. With neither, all defaults apply.
    pub fn load(file: Option<&Path>, preset: Option<&str>) -> Result<Self> {
        let mut table = toml::Table::new();
        let mut user = None;
        let mut preset = preset.map(str::to_owned);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut t = parse_table(&text, &path.display().to_string())?;
            match t.remove("preset") {
                Some(toml::Value::String(name)) => {
                    if preset.is_none() {
                        preset = Some(name);
                    }
                }
                Some(other) => return Err(Error::Config(format!("preset: expected a string, found {}", other.type_str()))),
                None => {}
            }
            user = Some(t);
        }
        if let Some(name) = &preset {
            table = parse_table(preset_text(name)?, name)?;
        }
        if let Some(t) = user {
            merge(&mut table, t);
        }
        let mut cfg = Self::from_table(table)?;
        if let Some(dir) = file.and_then(Path::parent) {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text, "config")?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().trim();
            if path == "." {
                Error::Config(msg.to_string())
            } else {
                Error::Config(format!("{path}: {msg}"))
            }
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Darwin(d) => fix(&mut d.path),
            DatasetConfig::Stored(s) => fix(&mut s.dir),
            _ => {}
        }
    }

    /// Checks every constraint and reports all violations at once, each
    /// prefixed with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut check = |ok: bool, path: &str, msg: &str| {
            if !ok {
                errs.push(format!("{path}: {msg}"));
            }
        };
        match &self.dataset {
            DatasetConfig::Mackey(m) => {
                check(!m.snr_db.is_nan() && m.snr_db != f64::NEG_INFINITY, "dataset.snr_db", "must be a number or inf");
                if let Err(e) = m.mackey.validate() {
                    check(false, "dataset.mackey", &e.to_string());
                }
                check(m.split.sequence_len >= 2, "dataset.split.sequence_len", "must be at least 2");
                check(m.split.train_sequences >= 1, "dataset.split.train_sequences", "must be at least 1");
                check(m.split.val_sequences >= 1, "dataset.split.val_sequences", "must be at least 1");
            }
            DatasetConfig::Wave(w) => {
                if let Err(e) = w.wave.validate() {
                    check(false, "dataset.wave", &e.to_string());
                }
            }
            DatasetConfig::Darwin(d) => check(!d.path.as_os_str().is_empty(), "dataset.path", "must not be empty"),
            DatasetConfig::Stored(s) => {
                check(!s.dir.as_os_str().is_empty(), "dataset.dir", "must not be empty");
                if let Some(h) = &s.sha256 {
                    check(h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit()), "dataset.sha256", "must be 64 hex digits");
                }
            }
        }
        check(self.model.hidden_dim >= 1, "model.hidden_dim", "must be at least 1");
        let t = &self.training;
        check(t.epochs >= 1, "training.epochs", "must be at least 1");
        check(t.learning_rate > 0.0 && t.learning_rate.is_finite(), "training.learning_rate", "must be positive and finite");
        check(t.seq_len >= 2, "training.seq_len", "must be at least 2");
        check(t.batch_size >= 1, "training.batch_size", "must be at least 1");
        if let Some(k) = t.schedule_k {
            check(k > 0.0 && k.is_finite(), "training.schedule_k", "must be positive and finite");
        }
        let e = &self.evaluation;
        check(e.cases >= 1, "evaluation.cases", "must be at least 1");
        check(e.warmup >= 1, "evaluation.warmup", "must be at least 1");
        check(e.horizon >= 1, "evaluation.horizon", "must be at least 1");
        check(!e.metrics.is_empty(), "evaluation.metrics", "must name at least one metric");
        check(e.data_range > 0.0 && e.data_range.is_finite(), "evaluation.data_range", "must be positive and finite");
        let g = &self.gradcheck;
        check(g.input_dim >= 1 && g.hidden_dim >= 1, "gradcheck", "input_dim and hidden_dim must be at least 1");
        check(g.seq_len >= 2, "gradcheck.seq_len", "must be at least 2");
        check(g.trials >= 1, "gradcheck.trials", "must be at least 1");
        if errs.is_empty() {
            return Ok(());
        }
        let mut msg = String::new();
        for (i, e) in errs.iter().enumerate() {
            if i > 0 {
                msg.push_str("; ");
            }
            let _ = write!(msg, "{e}");
        }
        Err(Error::Config(msg))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            mode: t.mode,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seq_len: t.seq_len,
            hidden_dim: self.model.hidden_dim,
            schedule_k: t.schedule_k,
            patience: t.patience,
            seed: self.model.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let cfg = RunConfig::load(None, Some(name)).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn mackey_preset_values() {
        let cfg = RunConfig::load(None, Some("mackey-snr60")).unwrap();
        let t = cfg.train_config();
        assert_eq!(t.mode, ModeKind::ScheduledAutoregressive);
        assert_eq!((t.learning_rate, t.seq_len, t.batch_size, t.hidden_dim, t.epochs), (0.0005, 40, 32, 100, 2000));
        assert_eq!((cfg.evaluation.cases, cfg.evaluation.horizon, cfg.evaluation.warmup), (100, 896, 20));
        let DatasetConfig::Mackey(m) = &cfg.dataset else { panic!() };
        assert_eq!(m.snr_db, 60.0);
        assert_eq!(m.split, MackeySplit::default());
        assert_eq!(m.mackey, MackeyGlassConfig::default());
        let cfg10 = RunConfig::load(None, Some("mackey-snr10")).unwrap();
        let DatasetConfig::Mackey(m10) = &cfg10.dataset else { panic!() };
        assert_eq!(m10.snr_db, 10.0);
    }

    #[test]
    fn darwin_and_wave_preset_values() {
        let d = RunConfig::load(None, Some("darwin")).unwrap();
        assert_eq!((d.training.learning_rate, d.training.seq_len, d.model.hidden_dim), (0.0001, 100, 100));
        assert_eq!((d.evaluation.cases, d.evaluation.horizon, d.evaluation.warmup), (32, 100, 50));
        let w = RunConfig::load(None, Some("wave")).unwrap();
        assert_eq!((w.training.learning_rate, w.training.seq_len, w.model.hidden_dim, w.training.epochs), (0.001, 20, 24, 1000));
    }

    #[test]
    fn defaults_without_sections() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = RunConfig::from_toml_str("[training]\nlr = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("training"), "{err}");
        assert!(err.contains("lr"), "{err}");
        let err = RunConfig::from_toml_str("[dataset]\nkind = \"wave\"\n[dataset.wave]\nspeeed = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("speeed"), "{err}");
        let err = RunConfig::from_toml_str("[training]\nepochs = \"many\"\n").unwrap_err().to_string();
        assert!(err.contains("training.epochs"), "{err}");
    }

    #[test]
    fn validation_lists_every_bad_field() {
        let mut cfg = RunConfig::default();
        cfg.training.learning_rate = -1.0;
        cfg.evaluation.cases = 0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("training.learning_rate") && err.contains("evaluation.cases"), "{err}");
    }

    #[test]
    fn file_overrides_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "preset = \"wave\"\n[training]\nmode = \"tf\"\nepochs = 7\n").unwrap();
        let cfg = RunConfig::load(Some(&p), None).unwrap();
        assert_eq!(cfg.training.mode, ModeKind::TeacherForcing);
        assert_eq!(cfg.training.epochs, 7);
        assert_eq!(cfg.training.seq_len, 20);
        assert_eq!(cfg.dataset.kind(), "wave");
    }

    #[test]
    fn changing_dataset_kind_drops_preset_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[dataset]\nkind = \"darwin\"\npath = \"series.csv\"\n").unwrap();
        let cfg = RunConfig::load(Some(&p), Some("mackey-snr60")).unwrap();
        let DatasetConfig::Darwin(d) = &cfg.dataset else { panic!("{:?}", cfg.dataset) };
        assert_eq!(d.path, dir.path().join("series.csv"));
    }

    #[test]
    fn toml_round_trip() {
        for (name, _) in PRESETS {
            let mut cfg = RunConfig::load(None, Some(name)).unwrap();
            cfg.training.schedule_k = Some(33.5);
            let back = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(RunConfig::load(None, Some("navier-stokes")).is_err());
    }
}
