//! Run headers and line-delimited JSON reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hola_core::metrics::MetricReport;
use serde::Serialize;

use crate::checkpoint::CKPT_VERSION;
use crate::clip::CLIP_VERSION;
use crate::config::RunConfig;
use crate::error::{write_file, Error, Result};
use crate::manifest::MANIFEST_VERSION;

pub const HEADER_FILE: &str = "run_header.json";

#[derive(Debug, Clone, Serialize)]
pub struct Formats {
    pub clip: u16,
    pub manifest: u32,
    pub checkpoint: u16,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunHeader {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub formats: Formats,
    pub hola_version: String,
}

/// Writes the reproducibility header and the full configuration to `dir`.
pub fn write_header(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = RunHeader {
        command: command.to_string(),
        seed: cfg.seed()?,
        config_hash: cfg.hash(),
        formats: Formats {
            clip: CLIP_VERSION,
            manifest: MANIFEST_VERSION,
            checkpoint: CKPT_VERSION,
        },
        hola_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(&dir.join(HEADER_FILE), format!("{json}\n").as_bytes())?;
    write_file(&dir.join("config.txt"), cfg.to_text().as_bytes())
}

/// The metric record with its fixed field names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub acc: f64,
    pub uar: f64,
    pub wa_f1: f64,
    pub auc: f64,
}

impl From<&MetricReport> for Metrics {
    fn from(r: &MetricReport) -> Self {
        Self {
            acc: r.acc,
            uar: r.uar,
            wa_f1: r.wa_f1,
            auc: r.auc,
        }
    }
}

pub struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write<T: Serialize>(&mut self, rec: &T) -> Result<()> {
        let line = serde_json::to_string(rec).expect("report serializes");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
