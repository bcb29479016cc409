//! `key = value` run configuration.
//!
//! A configuration starts from a preset (`desk` or `tiny`), then applies a
//! file, the `HOLA_SEED` environment variable and finally command-line
//! overrides. Lines starting with `#` are comments. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use hola_core::backbone::BackboneConfig;
use hola_core::frontend::FrontendConfig;
use hola_core::head::HeadConfig;
use hola_core::masking::MaskConfig;
use hola_core::optim::OptimConfig;
use hola_core::pretrain::{PretrainConfig, ReconNormalizer, TargetConfig};
use hola_core::selftrain::{DetectorConfig, FinetuneConfig, InjectionConfig};
use hola_core::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::synth::{Manipulation, SynthConfig};

pub const SEED_ENV: &str = "HOLA_SEED";

/// Key, desk default, tiny default.
const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "0"),
    ("data.train_per_class", "32", "4"),
    ("data.val_per_class", "32", "2"),
    ("data.pool_per_class", "32", "4"),
    ("data.frames", "32", "8"),
    ("data.height", "32", "16"),
    ("data.width", "32", "16"),
    ("data.channels", "3", "3"),
    ("data.seconds", "2.0", "0.5"),
    ("data.sample_rate", "16000", "16000"),
    ("data.envelope_rate", "4.0", "4.0"),
    ("data.tone_hz_min", "200", "200"),
    ("data.tone_hz_max", "800", "800"),
    ("data.blob_gain_min", "0.5", "0.5"),
    ("data.blob_gain_max", "1.0", "1.0"),
    ("data.fake_modes", "desync,replacement,insertion,deletion", "desync,replacement,insertion,deletion"),
    ("data.min_real_corr", "0.9", "0.9"),
    ("data.max_desync_corr", "0.3", "0.3"),
    ("frontend.frames_sampled", "16", "4"),
    ("frontend.frame_h", "32", "16"),
    ("frontend.frame_w", "32", "16"),
    ("frontend.cube_t", "2", "2"),
    ("frontend.patch", "8", "4"),
    ("frontend.mfcc_coeffs", "32", "8"),
    ("frontend.mel_filters", "64", "16"),
    ("frontend.fft_size", "512", "512"),
    ("frontend.hop", "256", "256"),
    ("frontend.audio_segments", "16", "8"),
    ("frontend.audio_patch", "32", "8"),
    ("model.embed_dim", "32", "8"),
    ("model.heads", "4", "2"),
    ("model.video_depth", "4", "1"),
    ("model.audio_depth", "3", "1"),
    ("model.fusion_depth", "2", "1"),
    ("model.decoder_depth", "2", "1"),
    ("model.init_std", "0.02", "0.02"),
    ("head.seq_len", "16", "4"),
    ("head.rounds", "3", "1"),
    ("head.fusion_depth", "2", "1"),
    ("head.bn_momentum", "0.1", "0.1"),
    ("head.bn_eps", "1e-5", "1e-5"),
    ("mask.video_encoder", "0.9", "0.9"),
    ("mask.audio_encoder", "0.8", "0.8"),
    ("mask.video_decoder", "0.5", "0.5"),
    ("mask.audio_decoder", "0.5", "0.5"),
    ("pretrain.lr", "1e-3", "1e-3"),
    ("pretrain.weight_decay", "0.02", "0.02"),
    ("pretrain.warmup_frac", "0.05", "0.05"),
    ("pretrain.epochs", "40", "2"),
    ("pretrain.batch_size", "8", "4"),
    ("pretrain.normalizer", "literal", "literal"),
    ("pretrain.video_target_eps", "0.1", "0.1"),
    ("pretrain.audio_target_eps", "1e-6", "1e-6"),
    ("finetune.lr", "1e-3", "1e-3"),
    ("finetune.weight_decay", "0.02", "0.02"),
    ("finetune.warmup_frac", "0.05", "0.05"),
    ("finetune.epochs", "50", "2"),
    ("finetune.batch_size", "8", "4"),
    ("finetune.eval_every", "5", "1"),
    ("selftrain.threshold", "0.999", "0.6"),
    ("selftrain.max_iterations", "5", "2"),
    ("selftrain.per_class_cap", "none", "none"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Sample counts per split and class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub pool: usize,
}

impl RunConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let column = match name {
            "desk" => 1,
            "tiny" => 2,
            _ => return None,
        };
        let values = KEYS
            .iter()
            .map(|row| (row.0.to_string(), if column == 1 { row.1 } else { row.2 }.to_string()))
            .collect();
        Some(Self { values })
    }

    pub fn desk() -> Self {
        Self::preset("desk").expect("desk preset")
    }

    pub fn tiny() -> Self {
        Self::preset("tiny").expect("tiny preset")
    }

    /// A preset name, or a file applied on top of the desk preset.
    /// A file may start from another preset with a `preset = tiny` line.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(c) = Self::preset(spec) {
            return Ok(c);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match pairs.first() {
            Some((k, v)) if k == "preset" => {
                let c = Self::preset(v).ok_or_else(|| Error::Config(format!("unknown preset {v}")))?;
                pairs.remove(0);
                c
            }
            _ => Self::desk(),
        };
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key}"))),
        }
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Takes the seed from `HOLA_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.set("seed", &v),
            Err(_) => Ok(()),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key {key} is in the table"))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} = {:?} is not a valid number", self.get(key))))
    }

    /// Canonical text: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.num("seed")
    }

    /// Independent seed for one purpose of the run.
    pub fn stream(&self, tag: u64) -> Result<u64> {
        Ok(Rng::new(self.seed()?).fork(tag).seed())
    }

    pub fn splits(&self) -> Result<SplitSizes> {
        let s = SplitSizes {
            train: self.num("data.train_per_class")?,
            val: self.num("data.val_per_class")?,
            pool: self.num("data.pool_per_class")?,
        };
        if s.train == 0 {
            return Err(Error::Config("data.train_per_class must be at least 1".into()));
        }
        Ok(s)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let fake_modes = self
            .get("data.fake_modes")
            .split(',')
            .map(|m| Manipulation::parse(m.trim()).ok_or_else(|| Error::Config(format!("unknown fake mode {m:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let cfg = SynthConfig {
            frames: self.num("data.frames")?,
            height: self.num("data.height")?,
            width: self.num("data.width")?,
            channels: self.num("data.channels")?,
            seconds: self.num("data.seconds")?,
            sample_rate: self.num("data.sample_rate")?,
            envelope_rate: self.num("data.envelope_rate")?,
            tone_hz: (self.num("data.tone_hz_min")?, self.num("data.tone_hz_max")?),
            blob_gain: (self.num("data.blob_gain_min")?, self.num("data.blob_gain_max")?),
            fake_modes,
            min_real_corr: self.num("data.min_real_corr")?,
            max_desync_corr: self.num("data.max_desync_corr")?,
            seed: self.stream(1)?,
        };
        cfg.validate().map_err(Error::Config)?;
        Ok(cfg)
    }

    pub fn frontend(&self) -> Result<FrontendConfig> {
        let cfg = FrontendConfig {
            frames_sampled: self.num("frontend.frames_sampled")?,
            frame_h: self.num("frontend.frame_h")?,
            frame_w: self.num("frontend.frame_w")?,
            channels: self.num("data.channels")?,
            cube_t: self.num("frontend.cube_t")?,
            patch: self.num("frontend.patch")?,
            sample_rate: self.num("data.sample_rate")?,
            mfcc_coeffs: self.num("frontend.mfcc_coeffs")?,
            mel_filters: self.num("frontend.mel_filters")?,
            fft_size: self.num("frontend.fft_size")?,
            hop: self.num("frontend.hop")?,
            audio_segments: self.num("frontend.audio_segments")?,
            audio_patch: self.num("frontend.audio_patch")?,
            embed_dim: self.num("model.embed_dim")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn backbone(&self) -> Result<BackboneConfig> {
        let f = self.frontend()?;
        Ok(BackboneConfig {
            embed_dim: self.num("model.embed_dim")?,
            heads: self.num("model.heads")?,
            video_depth: self.num("model.video_depth")?,
            audio_depth: self.num("model.audio_depth")?,
            fusion_depth: self.num("model.fusion_depth")?,
            decoder_depth: self.num("model.decoder_depth")?,
            video_patch_dim: f.video_patch_dim(),
            audio_patch_dim: f.audio_patch_dim(),
            init_std: self.num("model.init_std")?,
        })
    }

    pub fn detector(&self) -> Result<DetectorConfig> {
        let f = self.frontend()?;
        let backbone = self.backbone()?;
        let head = HeadConfig {
            embed_dim: backbone.embed_dim,
            heads: backbone.heads,
            seq_len: self.num("head.seq_len")?,
            video_len: f.video_grid().len(),
            audio_len: f.audio_grid().len(),
            rounds: self.num("head.rounds")?,
            fusion_depth: self.num("head.fusion_depth")?,
            bn_momentum: self.num("head.bn_momentum")?,
            bn_eps: self.num("head.bn_eps")?,
            init_std: backbone.init_std,
        };
        Ok(DetectorConfig { backbone, head })
    }

    fn optim(&self, stage: &str, seed_tag: u64) -> Result<OptimConfig> {
        let cfg = OptimConfig {
            learning_rate: self.num(&format!("{stage}.lr"))?,
            weight_decay: self.num(&format!("{stage}.weight_decay"))?,
            warmup_frac: self.num(&format!("{stage}.warmup_frac"))?,
            epochs: self.num(&format!("{stage}.epochs"))?,
            batch_size: self.num(&format!("{stage}.batch_size"))?,
            seed: self.stream(seed_tag)?,
            ..OptimConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pretrain(&self) -> Result<PretrainConfig> {
        let normalizer = match self.get("pretrain.normalizer") {
            "literal" => ReconNormalizer::Literal,
            "mean" => ReconNormalizer::MeanOverLossSet,
            other => return Err(Error::Config(format!("pretrain.normalizer {other:?} is not literal or mean"))),
        };
        Ok(PretrainConfig {
            backbone: self.backbone()?,
            masks: MaskConfig {
                video_encoder: self.num("mask.video_encoder")?,
                audio_encoder: self.num("mask.audio_encoder")?,
                video_decoder: self.num("mask.video_decoder")?,
                audio_decoder: self.num("mask.audio_decoder")?,
            },
            optim: self.optim("pretrain", 3)?,
            normalizer,
        })
    }

    pub fn targets(&self) -> Result<TargetConfig> {
        Ok(TargetConfig {
            video_eps: self.num("pretrain.video_target_eps")?,
            audio_eps: self.num("pretrain.audio_target_eps")?,
        })
    }

    pub fn finetune(&self) -> Result<FinetuneConfig> {
        Ok(FinetuneConfig {
            optim: self.optim("finetune", 4)?,
            eval_every: self.num("finetune.eval_every")?,
        })
    }

    pub fn injection(&self) -> Result<InjectionConfig> {
        let per_class_cap = match self.get("selftrain.per_class_cap") {
            "none" => None,
            _ => Some(self.num("selftrain.per_class_cap")?),
        };
        let cfg = InjectionConfig {
            threshold: self.num("selftrain.threshold")?,
            max_iterations: self.num("selftrain.max_iterations")?,
            per_class_cap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seed for parameter initialisation of the given stage.
    pub fn init_seed(&self, stage: u64) -> Result<u64> {
        self.stream(10 + stage)
    }

    /// Builds every typed section so errors surface before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.splits()?;
        self.synth()?;
        self.detector()?;
        self.pretrain()?;
        self.finetune()?;
        self.injection()?;
        self.targets()?;
        Ok(())
    }
}
