//! Output files are staged in memory and committed together: each is
//! written to a temporary sibling and renamed into place only after every
//! file has been produced.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use siamscene_core::cluster::SimilarityMatrix;

use crate::config::MatrixFormat;

#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn extend(&mut self, other: OutputSet) {
        self.files.extend(other.files);
    }

    pub fn commit(self) -> Result<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        let result = (|| {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)
                        .with_context(|| format!("creating {}", dir.display()))?;
                }
                let tmp = temp_name(path);
                let mut f = fs::File::create(&tmp)
                    .with_context(|| format!("creating {}", tmp.display()))?;
                f.write_all(bytes)
                    .and_then(|_| f.sync_all())
                    .with_context(|| format!("writing {}", tmp.display()))?;
                staged.push((tmp, path));
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            return Err(e);
        }
        for (tmp, path) in staged {
            fs::rename(&tmp, path)
                .with_context(|| format!("moving output into {}", path.display()))?;
        }
        Ok(())
    }
}

fn temp_name(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Similarity matrix as comma-separated rows.
pub fn matrix_csv(w: &SimilarityMatrix) -> Vec<u8> {
    let n = w.n();
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| w.get(i, j).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

/// Binary 8-bit PGM, white for similarity 1.
pub fn matrix_pgm(w: &SimilarityMatrix) -> Vec<u8> {
    let n = w.n();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    for i in 0..n {
        for j in 0..n {
            out.push((w.get(i, j) * 255.0).round() as u8);
        }
    }
    out
}

pub fn matrix_bytes(w: &SimilarityMatrix, format: MatrixFormat) -> Vec<u8> {
    match format {
        MatrixFormat::Csv => matrix_csv(w),
        MatrixFormat::Pgm => matrix_pgm(w),
    }
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s.into_bytes()
}
