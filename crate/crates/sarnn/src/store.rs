//! Dataset construction from a config and the on-disk dataset format.
//!
//! A dataset directory holds `manifest.json` plus one binary file per split
//! (`train.bin`, `val.bin`, `test.bin`). Each binary file is the split's
//! sequences back to back, every sequence stored row-major as little-endian
//! IEEE-754 doubles with no header; the row counts live in the manifest
//! (`splits.<name>` lists `[rows, cols]` per sequence). Stored values are
//! already scaled; `scaler` maps them back to raw units.
//!
//! The dataset hash is SHA-256 over `train.bin`, `val.bin` and `test.bin`
//! in that order, followed by the scaler's `min` and then `max` vectors as
//! little-endian doubles, rendered as lowercase hex.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sarnn_core::data::{
    add_noise_snr, build_mackey_dataset, darwin_dataset, mackey_glass_series, wave_dataset, Scaler, SeriesDataset,
};
use sarnn_core::metrics::GridSpec;
use sarnn_core::Tensor;

use crate::config::{DatasetConfig, MackeySource};
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json};

pub const DATASET_FORMAT: &str = "sarnn-dataset";
pub const FORMAT_VERSION: u32 = 1;
const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Grid shape of a flattened 2D field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn spec(self, data_range: f64) -> GridSpec {
        GridSpec { height: self.height, width: self.width, data_range }
    }
}

/// A dataset together with what the evaluation and manifests need to know
/// about it.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub data: SeriesDataset,
    pub grid: Option<Grid>,
    pub sha256: String,
    /// The configuration that produced the data.
    pub source: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitShapes {
    pub train: Vec<[usize; 2]>,
    pub val: Vec<[usize; 2]>,
    pub test: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub source: DatasetConfig,
    pub provenance: String,
    pub input_dim: usize,
    pub dt: f64,
    pub grid: Option<Grid>,
    pub scaler: Scaler,
    pub splits: SplitShapes,
    pub sha256: String,
}

fn split_bytes(seqs: &[Tensor]) -> Vec<u8> {
    let n: usize = seqs.iter().map(Tensor::len).sum();
    let mut out = Vec::with_capacity(n * 8);
    for s in seqs {
        for v in s.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn shapes(seqs: &[Tensor]) -> Vec<[usize; 2]> {
    seqs.iter().map(|s| [s.rows(), s.row_len()]).collect()
}

fn hash_parts(splits: &[Vec<u8>; 3], scaler: &Scaler) -> String {
    let mut h = Sha256::new();
    for s in splits {
        h.update(s);
    }
    for v in scaler.min.iter().chain(&scaler.max) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn all_split_bytes(ds: &SeriesDataset) -> [Vec<u8>; 3] {
    [split_bytes(&ds.train), split_bytes(&ds.val), split_bytes(&ds.test)]
}

pub fn dataset_hash(ds: &SeriesDataset) -> String {
    hash_parts(&all_split_bytes(ds), &ds.scaler)
}

/// Parses a single-column numeric CSV. A first row that is not a number is
/// taken as a header; any later non-numeric row is an error naming its
/// 1-based line.
pub fn read_single_column(path: &Path) -> Result<Vec<f64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(file);
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.len() != 1 {
            return Err(Error::format(path, format!("line {line}: expected one column, found {}", rec.len())));
        }
        let field = &rec[0];
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => return Err(Error::format(path, format!("line {line}: non-finite value {v}"))),
            Err(_) if i == 0 => {}
            Err(_) => return Err(Error::format(path, format!("line {line}: not a number: {field:?}"))),
        }
    }
    Ok(values)
}

/// Loads a Darwin-style series: at least 1400 rows, split 600 / 400 / rest.
pub fn load_darwin(path: &Path) -> Result<SeriesDataset> {
    let values = read_single_column(path)?;
    darwin_dataset(&values, path.display().to_string()).map_err(|e| Error::format(path, e))
}

pub fn mackey_dataset(src: &MackeySource) -> Result<SeriesDataset> {
    let clean = mackey_glass_series(&src.mackey, src.seed)?;
    let series = if src.snr_db == f64::INFINITY {
        clean
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(src.seed);
        rng.set_stream(1);
        add_noise_snr(&clean, src.snr_db, &mut rng)?
    };
    let provenance = format!(
        "mackey-glass seed={} snr_db={} tau={} dt={} total_time={}",
        src.seed, src.snr_db, src.mackey.tau, src.mackey.dt, src.mackey.total_time
    );
    Ok(build_mackey_dataset(&series, &src.split, src.mackey.sample_dt, provenance)?)
}

/// Generates or reads the dataset a config describes.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<LoadedDataset> {
    let (data, grid) = match cfg {
        DatasetConfig::Mackey(m) => (mackey_dataset(m)?, None),
        DatasetConfig::Darwin(d) => (load_darwin(&d.path)?, None),
        DatasetConfig::Wave(w) => {
            (wave_dataset(&w.wave)?, Some(Grid { height: w.wave.height, width: w.wave.width }))
        }
        DatasetConfig::Stored(s) => {
            let loaded = read_dataset(&s.dir)?;
            if let Some(expected) = &s.sha256 {
                if !expected.eq_ignore_ascii_case(&loaded.sha256) {
                    return Err(Error::format(
                        &s.dir,
                        format!("dataset hash {} does not match the configured {expected}", loaded.sha256),
                    ));
                }
            }
            return Ok(loaded);
        }
    };
    let sha256 = dataset_hash(&data);
    Ok(LoadedDataset { data, grid, sha256, source: cfg.clone() })
}

/// Writes `ds` into `dir` (which must exist) and returns the manifest.
pub fn write_dataset(dir: &Path, ds: &LoadedDataset) -> Result<DatasetManifest> {
    let bytes = all_split_bytes(&ds.data);
    let sha256 = hash_parts(&bytes, &ds.data.scaler);
    for (name, b) in SPLITS.iter().zip(&bytes) {
        write_atomic(&dir.join(format!("{name}.bin")), b)?;
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        source: ds.source.clone(),
        provenance: ds.data.provenance.clone(),
        input_dim: ds.data.input_dim,
        dt: ds.data.dt,
        grid: ds.grid,
        scaler: ds.data.scaler.clone(),
        splits: SplitShapes { train: shapes(&ds.data.train), val: shapes(&ds.data.val), test: shapes(&ds.data.test) },
        sha256,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn decode_split(path: &Path, bytes: &[u8], shapes: &[[usize; 2]], dim: usize) -> Result<Vec<Tensor>> {
    let expected: usize = shapes.iter().map(|[r, c]| r * c * 8).sum();
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes from the manifest shapes, found {}", bytes.len())));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for &[rows, cols] in shapes {
        if cols != dim {
            return Err(Error::format(path, format!("sequence width {cols} differs from input_dim {dim}")));
        }
        let n = rows * cols;
        let data: Vec<f64> = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        offset += n * 8;
        out.push(Tensor::matrix(rows, cols, data).map_err(|e| Error::format(path, e))?);
    }
    Ok(out)
}

/// Reads a dataset directory and verifies its hash.
pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest_path = dir.join("manifest.json");
    let m: DatasetManifest = crate::fsutil::read_json(&manifest_path)?;
    if m.format != DATASET_FORMAT || m.version != FORMAT_VERSION {
        return Err(Error::format(&manifest_path, format!("unsupported format {} v{}", m.format, m.version)));
    }
    if m.scaler.dim() != m.input_dim {
        return Err(Error::format(&manifest_path, "scaler width differs from input_dim"));
    }
    let read = |name: &str| -> Result<(PathBuf, Vec<u8>)> {
        let p = dir.join(format!("{name}.bin"));
        let b = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, b))
    };
    let (tp, tb) = read("train")?;
    let (vp, vb) = read("val")?;
    let (sp, sb) = read("test")?;
    let sha256 = hash_parts(&[tb.clone(), vb.clone(), sb.clone()], &m.scaler);
    if sha256 != m.sha256 {
        return Err(Error::format(&manifest_path, format!("content hash {sha256} does not match the recorded {}", m.sha256)));
    }
    let data = SeriesDataset {
        train: decode_split(&tp, &tb, &m.splits.train, m.input_dim)?,
        val: decode_split(&vp, &vb, &m.splits.val, m.input_dim)?,
        test: decode_split(&sp, &sb, &m.splits.test, m.input_dim)?,
        scaler: m.scaler,
        dt: m.dt,
        input_dim: m.input_dim,
        provenance: m.provenance,
    };
    Ok(LoadedDataset { data, grid: m.grid, sha256, source: m.source })
}
