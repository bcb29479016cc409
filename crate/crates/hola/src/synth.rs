//! Synthetic audio-visual clips.
//!
//! A latent envelope drives both the loudness of a tone and the size and
//! position of a bright blob. Real clips share one envelope between the two
//! modalities; fake clips warp the envelope used for the audio so the
//! coupling breaks while each modality still looks plausible on its own.

use std::f64::consts::PI;

use hola_core::frontend::{RawClip, VideoVolume};
use hola_core::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manipulation {
    Desync,
    Replacement,
    Insertion,
    Deletion,
}

impl Manipulation {
    pub const ALL: [Manipulation; 4] = [Self::Desync, Self::Replacement, Self::Insertion, Self::Deletion];

    pub fn name(self) -> &'static str {
        match self {
            Self::Desync => "desync",
            Self::Replacement => "replacement",
            Self::Insertion => "insertion",
            Self::Deletion => "deletion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    /// Knots per second of the latent envelope.
    pub envelope_rate: f64,
    /// Range of the tone frequency in Hz.
    pub tone_hz: (f64, f64),
    /// Range of the per-channel blob intensity.
    pub blob_gain: (f64, f64),
    pub fake_modes: Vec<Manipulation>,
    /// Real clips are redrawn until the audio/visual envelope correlation reaches this.
    pub min_real_corr: f64,
    /// Desync fakes are redrawn until the correlation falls to this.
    pub max_desync_corr: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 32,
            height: 32,
            width: 32,
            channels: 3,
            seconds: 2.0,
            sample_rate: 16_000,
            envelope_rate: 4.0,
            tone_hz: (200.0, 800.0),
            blob_gain: (0.5, 1.0),
            fake_modes: Manipulation::ALL.to_vec(),
            min_real_corr: 0.9,
            max_desync_corr: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.frames == 0 || self.height < 4 || self.width < 4 || self.channels == 0 {
            return Err("frames, height, width and channels must be positive (height, width ≥ 4)".into());
        }
        if !(self.seconds > 0.0 && self.envelope_rate > 0.0) || self.sample_rate == 0 {
            return Err("seconds, sample_rate and envelope_rate must be positive".into());
        }
        if self.fake_modes.is_empty() {
            return Err("at least one fake mode is required".into());
        }
        Ok(())
    }
}

/// Smooth random curve in [0, 1], cosine-interpolated between uniform knots.
#[derive(Debug, Clone)]
pub struct Envelope {
    start: f64,
    step: f64,
    knots: Vec<f64>,
}

/// Margin in seconds on both sides of the clip, enough for the largest shift.
const MARGIN: f64 = 1.5;

impl Envelope {
    pub fn random(rng: &mut Rng, seconds: f64, rate: f64) -> Self {
        let step = 1.0 / rate;
        let n = ((seconds + 2.0 * MARGIN) / step).ceil() as usize + 2;
        Self {
            start: -MARGIN,
            step,
            knots: (0..n).map(|_| rng.uniform()).collect(),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let x = ((t - self.start) / self.step).max(0.0);
        let i = (x.floor() as usize).min(self.knots.len() - 2);
        let f = (x - i as f64).min(1.0);
        let w = (1.0 - (PI * f).cos()) / 2.0;
        self.knots[i] * (1.0 - w) + self.knots[i + 1] * w
    }
}

/// How the audio track reads the latent envelope.
#[derive(Debug, Clone)]
enum AudioSource {
    Same,
    Shift(f64),
    Replace { from: f64, to: f64 },
    Insert { at: f64, len: f64 },
    Delete { at: f64, len: f64 },
}

struct Track<'a> {
    own: &'a Envelope,
    other: &'a Envelope,
    own_freq: f64,
    other_freq: f64,
    source: AudioSource,
}

impl Track<'_> {
    /// Envelope value and tone frequency heard at time `t`.
    fn at(&self, t: f64) -> (f64, f64) {
        match self.source {
            AudioSource::Same => (self.own.at(t), self.own_freq),
            AudioSource::Shift(d) => (self.own.at(t + d), self.own_freq),
            AudioSource::Replace { from, to } if (from..to).contains(&t) => (self.other.at(t), self.other_freq),
            AudioSource::Replace { .. } => (self.own.at(t), self.own_freq),
            AudioSource::Insert { at, .. } if t < at => (self.own.at(t), self.own_freq),
            AudioSource::Insert { at, len } if t < at + len => (self.other.at(t), self.other_freq),
            AudioSource::Insert { len, .. } => (self.own.at(t - len), self.own_freq),
            AudioSource::Delete { at, .. } if t < at => (self.own.at(t), self.own_freq),
            AudioSource::Delete { len, .. } => (self.own.at(t + len), self.own_freq),
        }
    }
}

/// Generator-side truth for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthMeta {
    pub fake: bool,
    pub manipulation: Option<Manipulation>,
    /// Correlation between the audio loudness and blob size series.
    pub coupling: f64,
}

const BACKGROUND: f64 = 16.0;

fn render(cfg: &SynthConfig, env: &Envelope, color: &[f64], track: &Track, rng: &mut Rng) -> RawClip {
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    let mut data = Vec::with_capacity(cfg.frames * h * w * c);
    let y0 = h as f64 / 2.0;
    for k in 0..cfg.frames {
        let t = k as f64 * cfg.seconds / cfg.frames as f64;
        let e = env.at(t);
        let sigma = 1.5 + 0.12 * w as f64 * e;
        let cx = w as f64 * (0.3 + 0.4 * e);
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - y0).powi(2);
                let g = (-d2 / (2.0 * sigma * sigma)).exp();
                for col in color.iter().take(c) {
                    data.push((BACKGROUND + (255.0 - BACKGROUND) * col * g).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    let n = (cfg.seconds * cfg.sample_rate as f64).round() as usize;
    let sr = cfg.sample_rate as f64;
    let mut phase = 0.0;
    let waveform = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let (e, f) = track.at(t);
            phase += 2.0 * PI * f / sr;
            let v = (0.05 + 0.8 * e) * phase.sin() + 0.005 * rng.normal();
            v.clamp(-1.0, 1.0) as f32
        })
        .collect();
    RawClip {
        video: VideoVolume::new(cfg.frames, h, w, c, data).expect("consistent volume"),
        waveform,
        sample_rate: cfg.sample_rate,
    }
}

/// Pearson correlation between per-frame audio RMS and the square root of the
/// blob's total brightness above background.
pub fn coupling(clip: &RawClip) -> f64 {
    let v = &clip.video;
    let sr = clip.sample_rate as f64;
    let n = clip.waveform.len();
    let seconds = n as f64 / sr;
    let half = (0.5 * seconds / v.t as f64 * sr) as usize;
    let mut a = Vec::with_capacity(v.t);
    let mut b = Vec::with_capacity(v.t);
    for k in 0..v.t {
        let centre = (k as f64 * seconds / v.t as f64 * sr) as usize;
        let lo = centre.saturating_sub(half);
        let hi = (centre + half).min(n).max(lo + 1);
        let rms = (clip.waveform[lo..hi].iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / (hi - lo) as f64).sqrt();
        let bright: f64 = v.frame(k).iter().map(|&p| (p as f64 - BACKGROUND).max(0.0)).sum();
        a.push(rms);
        b.push(bright.sqrt());
    }
    pearson(&a, &b)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

const MAX_ATTEMPTS: usize = 64;

/// One clip. `index` selects an independent random stream, so clips can be
/// generated in any order.
pub fn generate_clip(cfg: &SynthConfig, index: u64, fake: bool) -> (RawClip, SynthMeta) {
    let base = Rng::new(cfg.seed).fork(index);
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS as u64 {
        let mut rng = base.fork(attempt);
        let env = Envelope::random(&mut rng, cfg.seconds, cfg.envelope_rate);
        let other = Envelope::random(&mut rng, cfg.seconds, cfg.envelope_rate);
        let own_freq = rng.range(cfg.tone_hz.0, cfg.tone_hz.1);
        let other_freq = rng.range(cfg.tone_hz.0, cfg.tone_hz.1);
        let color: Vec<f64> = (0..cfg.channels).map(|_| rng.range(cfg.blob_gain.0, cfg.blob_gain.1)).collect();
        let (source, manipulation) = if fake {
            let m = cfg.fake_modes[rng.below(cfg.fake_modes.len())];
            let len = rng.range(0.5, 1.0);
            let at = rng.range(0.1, (cfg.seconds - len).max(0.2));
            let src = match m {
                Manipulation::Desync => {
                    let d = rng.range(0.5, 1.0);
                    AudioSource::Shift(if rng.below(2) == 0 { d } else { -d })
                }
                Manipulation::Replacement => AudioSource::Replace { from: at, to: at + len },
                Manipulation::Insertion => AudioSource::Insert { at, len },
                Manipulation::Deletion => AudioSource::Delete { at, len },
            };
            (src, Some(m))
        } else {
            (AudioSource::Same, None)
        };
        let track = Track {
            own: &env,
            other: &other,
            own_freq,
            other_freq,
            source,
        };
        let clip = render(cfg, &env, &color, &track, &mut rng);
        let r = coupling(&clip);
        let accepted = match manipulation {
            None => r >= cfg.min_real_corr,
            Some(Manipulation::Desync) => r <= cfg.max_desync_corr,
            Some(_) => true,
        };
        let meta = SynthMeta {
            fake,
            manipulation,
            coupling: r,
        };
        if accepted {
            return (clip, meta);
        }
        last = Some((clip, meta));
    }
    last.expect("at least one attempt")
}
