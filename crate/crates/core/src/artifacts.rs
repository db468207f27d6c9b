//! On-disk artifacts: tau archives, curve and comparison tables, results and
//! run manifests.
//!
//! Every CSV starts with a `# schema_version=N kind=K` line and every JSON
//! document carries `schema_version` and `kind` keys. Column layouts are
//! listed in `docs/schema.md`. Files are written to a temporary name and
//! renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SCHEMA_VERSION;
use crate::error::{Error, Result};
use crate::gcomp::TauValue;
use crate::ssd::TauSample;

pub const KIND_TAUS: &str = "tau-archive";
pub const KIND_CURVE: &str = "oc-curve";
pub const KIND_VALIDATION: &str = "validation";
pub const KIND_PROXY_CHECK: &str = "proxy-check";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub repetition: usize,
    pub c: u32,
    pub psi_label: String,
    pub delta_r: f64,
    pub tau: f64,
    pub logit_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub icc_setting: String,
    pub scenario: String,
    pub c: u32,
    pub estimate: f64,
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
    /// `alg1` for line predictions, `direct` for direct simulation.
    pub source: String,
    /// Threshold the estimate refers to.
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub icc_setting: String,
    pub scenario: String,
    pub c: u32,
    pub gamma: f64,
    pub alg1_estimate: f64,
    pub direct_estimate: f64,
    pub abs_gap: f64,
    pub direct_se: f64,
    pub m_direct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyCheckRow {
    pub icc_setting: String,
    pub scenario: String,
    pub delta_r: f64,
    pub lambda: f64,
    pub u: f64,
    pub c: u64,
    pub numeric_slope: f64,
    pub theorem_slope: f64,
    pub rel_error: f64,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Artifact(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn header(kind: &str) -> String {
    format!("# schema_version={SCHEMA_VERSION} kind={kind}\n")
}

/// CSV text with the schema line followed by a header row and `rows`.
pub fn csv_bytes<T: Serialize>(kind: &str, rows: &[T]) -> Result<Vec<u8>> {
    let mut out = header(kind).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in rows {
            w.serialize(r).map_err(|e| Error::Artifact(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, kind: &str, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(kind, rows)?)
}

/// Reads rows of `kind`, rejecting other kinds and schema versions.
pub fn read_csv<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    if first != header(kind).trim_end() {
        return Err(Error::Artifact(format!(
            "{}: expected header {:?}, found {first:?}",
            path.display(),
            header(kind).trim_end()
        )));
    }
    csv::Reader::from_reader(rest.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Artifact(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn tau_rows(sample: &TauSample) -> Vec<TauRow> {
    sample
        .taus
        .iter()
        .zip(&sample.deltas)
        .enumerate()
        .map(|(r, (t, &d))| TauRow {
            repetition: r,
            c: sample.c,
            psi_label: sample.psi_label.clone(),
            delta_r: d,
            tau: t.tau,
            logit_tau: t.logit_tau,
        })
        .collect()
}

/// Regroups archive rows into samples keyed by `(psi_label, c)`, in first-seen order.
pub fn samples_from_rows(rows: &[TauRow], master_seed: u64) -> Result<Vec<TauSample>> {
    let mut out: Vec<TauSample> = Vec::new();
    for row in rows {
        let idx = match out.iter().position(|s| s.psi_label == row.psi_label && s.c == row.c) {
            Some(i) => i,
            None => {
                out.push(TauSample {
                    c: row.c,
                    psi_label: row.psi_label.clone(),
                    taus: Vec::new(),
                    deltas: Vec::new(),
                    master_seed,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        if row.repetition != s.taus.len() {
            return Err(Error::Artifact(format!(
                "{} at c = {}: repetition {} out of order",
                row.psi_label, row.c, row.repetition
            )));
        }
        s.taus.push(TauValue::from_logit(row.logit_tau));
        s.deltas.push(row.delta_r);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Artifact(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub kind: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one run: what produced each artifact and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub workers: usize,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub phases: Vec<PhaseTiming>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Collects artifacts written by one command, then writes its manifest.
pub struct ArtifactSet {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactSet {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, name: &str, kind: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = std::fs::metadata(&path)?.len();
        self.entries.retain(|e| e.path != name);
        self.entries.push(ArtifactEntry {
            path: name.to_string(),
            kind: kind.to_string(),
            sha256: sha256_file(&path)?,
            bytes,
        });
        Ok(())
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, kind: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_csv(&path, kind, rows)?;
        self.record(name, kind)?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, value: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_json(&path, value)?;
        self.record(name, kind)?;
        Ok(path)
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    /// Writes the manifest under `name` and returns its path.
    pub fn finish(self, name: &str, mut manifest: Manifest) -> Result<PathBuf> {
        manifest.artifacts = self.entries;
        let path = self.dir.join(name);
        write_json(&path, &manifest)?;
        Ok(path)
    }
}
