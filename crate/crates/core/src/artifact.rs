//! Artifact emission: CSV and JSON files under one output directory, plus a
//! `manifest.json` naming every written file with its SHA-256 digest. All
//! formatting is deterministic so identical runs produce byte-identical
//! trees.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Floats in CSV artifacts: 17 significant digits, `.` decimal separator.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Incremental CSV builder with a fixed header row.
pub struct Csv {
    buf: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Csv {
        Csv {
            buf: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "ragged CSV row");
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

struct Record {
    file: String,
    sha256: String,
    bytes: usize,
}

/// Collects artifacts for one run directory and finishes with the manifest.
pub struct Sink {
    dir: PathBuf,
    records: Vec<Record>,
}

impl Sink {
    pub fn create(dir: &Path) -> Result<Sink> {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Io(std::io::Error::other(format!("cannot create output dir {}: {e}", dir.display()))))?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<()> {
        if name.contains('/') || name.contains("..") {
            return Err(Error::BadArgument(format!("artifact name `{name}` must be flat")));
        }
        let path = self.dir.join(name);
        fs::write(&path, content)
            .map_err(|e| Error::Io(std::io::Error::other(format!("cannot write {}: {e}", path.display()))))?;
        self.records.push(Record {
            file: name.to_string(),
            sha256: sha256_hex(content.as_bytes()),
            bytes: content.len(),
        });
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, csv: Csv) -> Result<()> {
        self.write(name, &csv.into_string())
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Io(std::io::Error::other(format!("cannot serialize {name}: {e}"))))?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Write `manifest.json` listing every artifact (itself excluded) and
    /// return the list of written files.
    pub fn finish(mut self, task: &str, seed: Option<u64>) -> Result<Vec<String>> {
        self.records.sort_by(|a, b| a.file.cmp(&b.file));
        let artifacts: Vec<serde_json::Value> = self
            .records
            .iter()
            .map(|r| {
                serde_json::json!({
                    "file": r.file,
                    "sha256": r.sha256,
                    "bytes": r.bytes,
                })
            })
            .collect();
        let manifest = serde_json::json!({
            "task": task,
            "seed": seed,
            "artifacts": artifacts,
        });
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Io(std::io::Error::other(format!("cannot serialize manifest: {e}"))))?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, &text)
            .map_err(|e| Error::Io(std::io::Error::other(format!("cannot write {}: {e}", path.display()))))?;
        let mut files: Vec<String> = self.records.into_iter().map(|r| r.file).collect();
        files.push("manifest.json".to_string());
        Ok(files)
    }
}
