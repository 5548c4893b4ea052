//! On-disk formats: dataset CSVs, manifests, checkpoints, logs, predictions
//! and alignment curves.
//!
//! Dataset CSV layout is `file_id,score,f0,...,f{D-1}` with LF line endings
//! and every number written with 17 significant digits, so a write/read round
//! trip is exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetCollection, Sample};
use crate::metrics::{AlignmentCurve, PredictionRow};
use crate::sim::{OracleBundle, SimulationConfig};
use crate::training::{Checkpoint, EpochLog};
use crate::{Error, Result};

/// Decimal literal with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf)
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{}:{line}: not a number: {field:?}", path.display())))
}

pub fn dataset_csv(samples: &[Sample], feature_dim: usize) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        let mut header = vec!["file_id".to_string(), "score".to_string()];
        header.extend((0..feature_dim).map(|k| format!("f{k}")));
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for s in samples {
            if s.features.len() != feature_dim {
                return Err(Error::Shape(format!("file {} has {} features", s.file_id, s.features.len())));
            }
            let mut rec = vec![s.file_id.clone(), format_f64(s.score)];
            rec.extend(s.features.iter().map(|&f| format_f64(f)));
            w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

/// Reads a dataset CSV; returns the samples in file order and the feature
/// width.
pub fn read_dataset_csv(path: &Path) -> Result<(Vec<Sample>, usize)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 || &header[0] != "file_id" || &header[1] != "score" {
        return Err(Error::Format(format!(
            "{}: header must start with file_id,score,f0",
            path.display()
        )));
    }
    for (k, h) in header.iter().skip(2).enumerate() {
        if h != format!("f{k}") {
            return Err(Error::Format(format!("{}: column {} should be f{k}, found {h}", path.display(), k + 2)));
        }
    }
    let dim = header.len() - 2;
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let features = rec
            .iter()
            .skip(2)
            .map(|f| parse_f64(path, line, f))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            file_id: rec[0].to_string(),
            score: parse_f64(path, line, &rec[1])?,
            features,
        });
    }
    Ok((samples, dim))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    /// Relative to the manifest's directory unless absolute.
    pub csv_path: String,
    pub is_reference: bool,
}

/// Dataset roster written by `simulate` and read by every other command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub feature_dim: usize,
    pub created_by: String,
    pub seed: u64,
    pub dataset: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest = toml::from_str(&text).map_err(|e| csv_err(path, e.message()))?;
        let refs = m.dataset.iter().filter(|d| d.is_reference).count();
        if refs != 1 {
            return Err(Error::Config(format!(
                "{}: exactly one reference dataset required, found {refs}",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    fn resolve(base: &Path, csv_path: &str) -> PathBuf {
        let p = Path::new(csv_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Loads every listed CSV, splitting each positionally.
    pub fn load_collection(&self, manifest_path: &Path) -> Result<DatasetCollection> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut datasets = Vec::with_capacity(self.dataset.len());
        for entry in &self.dataset {
            let path = Self::resolve(base, &entry.csv_path);
            if !path.exists() {
                return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
            }
            let (samples, dim) = read_dataset_csv(&path)?;
            if dim != self.feature_dim {
                return Err(Error::Shape(format!(
                    "{} has {dim} features, manifest says {}",
                    path.display(),
                    self.feature_dim
                )));
            }
            datasets.push(Dataset::from_samples(&entry.name, entry.is_reference, dim, samples)?);
        }
        DatasetCollection::new(datasets)
    }
}

pub fn load_manifest_collection(path: &Path) -> Result<(Manifest, DatasetCollection)> {
    let m = Manifest::read(path)?;
    let c = m.load_collection(path)?;
    Ok((m, c))
}

pub fn read_simulation_config(path: &Path) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

/// Simulates the configured experiments into `out`: one CSV per dataset,
/// `manifest.toml` and `oracle.json`.
pub fn write_simulation(config: &SimulationConfig, seed: u64, out: &Path, created_by: &str) -> Result<Manifest> {
    let (collection, oracle) = config.build(seed)?;
    fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(collection.len());
    for d in collection.datasets() {
        let file = format!("{}.csv", d.name());
        fs::write(out.join(&file), dataset_csv(&d.all_samples(), d.feature_dim())?)?;
        entries.push(ManifestEntry {
            name: d.name().to_string(),
            csv_path: file,
            is_reference: d.is_reference(),
        });
    }
    let manifest = Manifest {
        feature_dim: collection.feature_dim(),
        created_by: created_by.to_string(),
        seed,
        dataset: entries,
    };
    fs::write(out.join("manifest.toml"), manifest.to_toml()?)?;
    fs::write(out.join("oracle.json"), to_json(&oracle)?)?;
    Ok(manifest)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| csv_err(path, e))
}

pub fn read_oracle(path: &Path) -> Result<OracleBundle> {
    read_json(path)
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, to_json(checkpoint)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}

/// One JSON object per line.
pub fn log_jsonl(log: &[EpochLog]) -> Result<String> {
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn predictions_csv(rows: &[PredictionRow]) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["dataset", "file_id", "target", "estimate", "intermediate"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for r in rows {
            w.write_record([
                r.dataset.clone(),
                r.file_id.clone(),
                format_f64(r.target),
                format_f64(r.estimate),
                format_f64(r.intermediate),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 5 {
            return Err(Error::Format(format!("{}:{}: expected 5 columns", path.display(), i + 2)));
        }
        rows.push(PredictionRow {
            dataset: rec[0].to_string(),
            file_id: rec[1].to_string(),
            target: parse_f64(path, i + 2, &rec[2])?,
            estimate: parse_f64(path, i + 2, &rec[3])?,
            intermediate: parse_f64(path, i + 2, &rec[4])?,
        });
    }
    Ok(rows)
}

/// Long format: `dataset,intermediate,aligned`.
pub fn curves_csv(curves: &[AlignmentCurve]) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["dataset", "intermediate", "aligned"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for c in curves {
            for &(s, y) in &c.points {
                w.write_record([c.dataset.clone(), format_f64(s), format_f64(y)])
                    .map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        w.flush()?;
    }
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_csv_round_trip_is_exact() {
        let samples = vec![
            Sample {
                file_id: "a".into(),
                features: vec![0.1, -1e-300, std::f64::consts::PI],
                score: 1.0 / 3.0,
            },
            Sample {
                file_id: "b".into(),
                features: vec![5e300, 0.0, -0.0],
                score: 4.999999999999999,
            },
        ];
        let text = dataset_csv(&samples, 3).unwrap();
        assert!(text.starts_with("file_id,score,f0,f1,f2\n"));
        assert!(!text.contains('\r'));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, &text).unwrap();
        let (back, dim) = read_dataset_csv(&p).unwrap();
        assert_eq!(dim, 3);
        for (x, y) in samples.iter().zip(&back) {
            assert_eq!(x.file_id, y.file_id);
            assert_eq!(x.score.to_bits(), y.score.to_bits());
            for (u, v) in x.features.iter().zip(&y.features) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "id,score,f0\nx,1,2\n").unwrap();
        assert!(matches!(read_dataset_csv(&p), Err(Error::Format(_))));
        fs::write(&p, "file_id,score,f0\nx,1,oops\n").unwrap();
        assert!(matches!(read_dataset_csv(&p), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_requires_one_reference() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.toml");
        fs::write(
            &p,
            "feature_dim = 2\ncreated_by = \"t\"\nseed = 0\n[[dataset]]\nname = \"a\"\ncsv_path = \"a.csv\"\nis_reference = false\n",
        )
        .unwrap();
        assert!(matches!(Manifest::read(&p), Err(Error::Config(_))));
    }
}
