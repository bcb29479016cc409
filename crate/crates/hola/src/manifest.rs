//! Line-delimited JSON manifest, one [`SampleRecord`] per line.
//!
//! Fields: `id`, `clip_path` (relative to the manifest's directory), `label`
//! (`real` or `fake`, absent for unlabeled pool clips), `split` (`train`,
//! `val` or `pool`), `manipulation` (fakes only) and `hidden_label`.
//! The generator writes hidden labels only to the separate oracle file, so
//! the manifest read by training never carries them.

use std::collections::BTreeSet;
use std::path::Path;

use hola_core::selftrain::Label;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Manipulation;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ORACLE_FILE: &str = "oracle.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Real,
    Fake,
}

impl From<ClassLabel> for Label {
    fn from(l: ClassLabel) -> Self {
        match l {
            ClassLabel::Real => Label::Real,
            ClassLabel::Fake => Label::Fake,
        }
    }
}

impl From<Label> for ClassLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Real => ClassLabel::Real,
            Label::Fake => ClassLabel::Fake,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Pool,
}

impl Split {
    pub const ALL: [Split; 3] = [Self::Train, Self::Val, Self::Pool];

    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Pool => "pool",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub clip_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ClassLabel>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulation: Option<Manipulation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_label: Option<ClassLabel>,
}

impl SampleRecord {
    /// Pool records are unlabeled; train and val records carry a label.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() || self.clip_path.is_empty() {
            return Err("id and clip_path must be non-empty".into());
        }
        match (self.split, self.label) {
            (Split::Pool, Some(_)) => Err("pool records must not carry a label".into()),
            (Split::Train | Split::Val, None) => Err(format!("{} records need a label", self.split.name())),
            _ => Ok(()),
        }
    }
}

pub fn serialize_manifest(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses and validates every line; ids must be unique. `path` only labels errors.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<SampleRecord>> {
    let err = |line: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let rec: SampleRecord = serde_json::from_str(line).map_err(|e| err(i + 1, e.to_string()))?;
        rec.validate().map_err(|e| err(i + 1, e))?;
        if !ids.insert(rec.id.clone()) {
            return Err(err(i + 1, format!("duplicate id {}", rec.id)));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}
