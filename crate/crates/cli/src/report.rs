//! CSV emission and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<Artifact>,
    pub wall_time_seconds: f64,
}

/// Hashes every artifact and writes `manifests/<command>.json`.
pub fn write_manifest(cfg: &RunConfig, command: &str, seeds: Vec<u64>, artifacts: &[PathBuf], wall: Duration) -> Result<PathBuf> {
    let root = &cfg.out_dir;
    let mut entries = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let rel = a.strip_prefix(root).unwrap_or(a);
        entries.push(Artifact {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(a)?,
            bytes: fs::metadata(a)?.len(),
        });
    }
    let m = Manifest {
        command,
        config: cfg,
        config_hash: cfg.hash(),
        seeds,
        artifacts: entries,
        wall_time_seconds: wall.as_secs_f64(),
    };
    let dir = root.join("manifests");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{command}.json"));
    fs::write(&path, serde_json::to_vec_pretty(&m)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_f64(0.75), "7.5000000000000000e-1");
    }

    #[test]
    fn manifest_creates_directory_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out_dir: dir.path().join("nested/out"),
            ..RunConfig::default()
        };
        let file = cfg.out_dir.join("a.csv");
        write_csv(&file, &["x"], [["1"]]).unwrap();
        let m = write_manifest(&cfg, "eval", vec![7], &[file.clone()], Duration::from_millis(5)).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(m).unwrap()).unwrap();
        assert_eq!(v["artifacts"][0]["path"], "a.csv");
        assert_eq!(v["artifacts"][0]["sha256"], sha256_file(&file).unwrap());
    }
}
