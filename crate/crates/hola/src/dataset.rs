//! Synthetic dataset directories: clips, manifest and the generator's oracle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hola_core::frontend::{extract_features, ClipFeatures, FrontendConfig};
use hola_core::selftrain::{ClipBank, ClipInput};
use rayon::prelude::*;

use crate::clip::{load_clip, save_clip};
use crate::config::SplitSizes;
use crate::error::{write_file, Error, Result};
use crate::manifest::{read_manifest, serialize_manifest, ClassLabel, SampleRecord, Split, MANIFEST_FILE, ORACLE_FILE};
use crate::synth::{generate_clip, SynthConfig};

/// One generated clip before it is written.
struct Planned {
    index: u64,
    split: Split,
    label: ClassLabel,
    id: String,
}

fn plan(sizes: SplitSizes) -> Vec<Planned> {
    let mut out = Vec::new();
    for (split, per_class) in [(Split::Train, sizes.train), (Split::Val, sizes.val), (Split::Pool, sizes.pool)] {
        for k in 0..2 * per_class {
            let label = if k % 2 == 0 { ClassLabel::Real } else { ClassLabel::Fake };
            out.push(Planned {
                index: out.len() as u64,
                split,
                label,
                id: format!("{}-{k:04}", split.name()),
            });
        }
    }
    out
}

/// Writes `clips/`, the training manifest and the oracle file under `dir`.
/// Returns the oracle records, which carry the hidden labels.
pub fn generate(cfg: &SynthConfig, sizes: SplitSizes, dir: &Path) -> Result<Vec<SampleRecord>> {
    let clips = dir.join("clips");
    std::fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    let oracle = plan(sizes)
        .into_par_iter()
        .map(|p| {
            let (clip, meta) = generate_clip(cfg, p.index, p.label == ClassLabel::Fake);
            let rel = format!("clips/{}.clip", p.id);
            save_clip(&clip, &dir.join(&rel))?;
            Ok(SampleRecord {
                id: p.id,
                clip_path: rel,
                label: (p.split != Split::Pool).then_some(p.label),
                split: p.split,
                manipulation: meta.manipulation,
                hidden_label: Some(p.label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest: Vec<SampleRecord> = oracle.iter().map(public_record).collect();
    write_file(&dir.join(MANIFEST_FILE), serialize_manifest(&manifest).as_bytes())?;
    write_file(&dir.join(ORACLE_FILE), serialize_manifest(&oracle).as_bytes())?;
    Ok(oracle)
}

/// The record as training sees it: no hidden label, and nothing that would
/// reveal the class of an unlabeled clip.
fn public_record(r: &SampleRecord) -> SampleRecord {
    let pool = r.split == Split::Pool;
    SampleRecord {
        hidden_label: None,
        manipulation: if pool { None } else { r.manipulation },
        ..r.clone()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    /// Reads the manifest and checks that every clip path resolves.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let records = read_manifest(&path)?;
        for (i, r) in records.iter().enumerate() {
            if !dir.join(&r.clip_path).is_file() {
                return Err(Error::Manifest {
                    path: path.clone(),
                    line: i + 1,
                    reason: format!("clip {} not found", r.clip_path),
                });
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            records,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Front-end features for the given records, keyed by id.
    pub fn features(&self, records: &[&SampleRecord], cfg: &FrontendConfig) -> Result<BTreeMap<String, ClipFeatures>> {
        records
            .par_iter()
            .map(|r| {
                let clip = load_clip(&self.dir.join(&r.clip_path))?;
                Ok((r.id.clone(), extract_features(&clip, cfg)?))
            })
            .collect()
    }

    /// Model inputs for the given records.
    pub fn bank(&self, records: &[&SampleRecord], cfg: &FrontendConfig) -> Result<ClipBank> {
        Ok(self
            .features(records, cfg)?
            .into_iter()
            .map(|(id, f)| {
                let input = ClipInput {
                    video_patches: f.video_patches,
                    audio_patches: f.audio_patches,
                };
                (id, input)
            })
            .collect())
    }
}

/// Hidden labels by id from a generator oracle file.
pub fn read_oracle(dir: &Path) -> Result<BTreeMap<String, ClassLabel>> {
    let records = read_manifest(&dir.join(ORACLE_FILE))?;
    Ok(records.into_iter().filter_map(|r| Some((r.id, r.hidden_label?))).collect())
}
