//! Raw clip preprocessing: frame sampling, MFCC extraction, patching and
//! positional tables.
//!
//! MFCC pipeline: Hann-windowed frames (periodic window, no centring) → power
//! spectrum → HTK-mel triangular filterbank → `ln(· + 1e-10)` → orthonormal
//! DCT-II → first `mfcc_coeffs` coefficients → frame averages over
//! `audio_segments` equal time segments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Video,
    Audio,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
        }
    }
}

/// Geometry of a token sequence before flattening.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    /// Temporal, vertical and horizontal cube counts.
    Video { t: usize, h: usize, w: usize },
    /// Time segments and coefficient patches per segment.
    Audio { t: usize, f: usize },
}

impl Grid {
    pub fn len(self) -> usize {
        match self {
            Grid::Video { t, h, w } => t * h * w,
            Grid::Audio { t, f } => t * f,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub frames_sampled: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub channels: usize,
    pub cube_t: usize,
    pub patch: usize,
    pub sample_rate: u32,
    pub mfcc_coeffs: usize,
    pub mel_filters: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub audio_segments: usize,
    /// Coefficients per audio token; equal to `mfcc_coeffs` means one token per segment.
    pub audio_patch: usize,
    pub embed_dim: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            frames_sampled: 16,
            frame_h: 32,
            frame_w: 32,
            channels: 3,
            cube_t: 2,
            patch: 8,
            sample_rate: 16_000,
            mfcc_coeffs: 32,
            mel_filters: 64,
            fft_size: 512,
            hop: 256,
            audio_segments: 16,
            audio_patch: 32,
            embed_dim: 32,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.frames_sampled == 0 || self.cube_t == 0 || !self.frames_sampled.is_multiple_of(self.cube_t) {
            return fail("frames_sampled must be a positive multiple of cube_t");
        }
        if self.patch == 0 || !self.frame_h.is_multiple_of(self.patch) || !self.frame_w.is_multiple_of(self.patch) {
            return fail("frame size must be divisible by the patch size");
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return fail("fft_size must be a power of two");
        }
        if self.hop == 0 || self.mel_filters == 0 || self.channels == 0 || self.embed_dim == 0 {
            return fail("hop, mel_filters, channels and embed_dim must be positive");
        }
        if self.mfcc_coeffs == 0 || self.mfcc_coeffs > self.mel_filters {
            return fail("mfcc_coeffs must be in 1..=mel_filters");
        }
        if self.audio_segments == 0 || self.audio_patch == 0 || !self.mfcc_coeffs.is_multiple_of(self.audio_patch) {
            return fail("audio_patch must divide mfcc_coeffs");
        }
        Ok(())
    }

    pub fn video_grid(&self) -> Grid {
        Grid::Video {
            t: self.frames_sampled / self.cube_t,
            h: self.frame_h / self.patch,
            w: self.frame_w / self.patch,
        }
    }

    pub fn audio_grid(&self) -> Grid {
        Grid::Audio {
            t: self.audio_segments,
            f: self.mfcc_coeffs / self.audio_patch,
        }
    }

    /// Flattened size of one video cube.
    pub fn video_patch_dim(&self) -> usize {
        self.cube_t * self.patch * self.patch * self.channels
    }

    pub fn audio_patch_dim(&self) -> usize {
        self.audio_patch
    }

    /// Minimum waveform length accepted by [`compute_mfcc`].
    pub fn min_audio_len(&self) -> usize {
        self.fft_size
    }
}

/// A frame volume stored `T×H×W×C`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoVolume {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<u8>,
}

impl VideoVolume {
    pub fn new(t: usize, h: usize, w: usize, c: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != t * h * w * c {
            return Err(dim_err("video", &[t * h * w * c], &[data.len()]));
        }
        Ok(Self { t, h, w, c, data })
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let n = self.h * self.w * self.c;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize, ch: usize) -> u8 {
        self.data[((t * self.h + y) * self.w + x) * self.c + ch]
    }
}

/// One audio-visual clip as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawClip {
    pub video: VideoVolume,
    pub waveform: Vec<f32>,
    pub sample_rate: u32,
}

impl RawClip {
    pub fn duration(&self) -> f64 {
        self.waveform.len() as f64 / self.sample_rate as f64
    }
}

/// MFCC matrix of `segments × coefficients`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccFeature {
    pub segments: Tensor,
}

impl MfccFeature {
    pub fn t_seg(&self) -> usize {
        self.segments.shape()[0]
    }

    pub fn coeffs(&self) -> usize {
        self.segments.shape()[1]
    }
}

/// An embedded token sequence with its originating layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub positions: Vec<usize>,
    pub modality: Modality,
    pub grid: Grid,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Frame indices chosen by uniform sampling: `round(i·(T_raw−1)/(n−1))`.
pub fn sample_indices(t_raw: usize, n: usize) -> Result<Vec<usize>> {
    if t_raw == 0 {
        return Err(Error::EmptyInput("clip has no frames"));
    }
    if n == 0 {
        return Err(Error::EmptyInput("zero frames requested"));
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    Ok((0..n)
        .map(|i| libm::round(i as f64 * (t_raw - 1) as f64 / (n - 1) as f64) as usize)
        .collect())
}

pub fn sample_frames(video: &VideoVolume, n: usize) -> Result<VideoVolume> {
    let idx = sample_indices(video.t, n)?;
    let mut data = Vec::with_capacity(n * video.h * video.w * video.c);
    for i in idx {
        data.extend_from_slice(video.frame(i));
    }
    VideoVolume::new(n, video.h, video.w, video.c, data)
}

/// Bilinear resize of every frame to `h × w` (pixel-centre aligned).
pub fn resize_frames(video: &VideoVolume, h: usize, w: usize) -> Result<VideoVolume> {
    if h == 0 || w == 0 {
        return Err(Error::Config("resize target must be non-empty".into()));
    }
    if video.h == h && video.w == w {
        return Ok(video.clone());
    }
    let sy = video.h as f64 / h as f64;
    let sx = video.w as f64 / w as f64;
    let mut data = Vec::with_capacity(video.t * h * w * video.c);
    for t in 0..video.t {
        for y in 0..h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (video.h - 1) as f64);
            let y0 = fy as usize;
            let y1 = (y0 + 1).min(video.h - 1);
            let wy = fy - y0 as f64;
            for x in 0..w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (video.w - 1) as f64);
                let x0 = fx as usize;
                let x1 = (x0 + 1).min(video.w - 1);
                let wx = fx - x0 as f64;
                for ch in 0..video.c {
                    let p = |yy, xx| video.pixel(t, yy, xx, ch) as f64;
                    let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                    let bottom = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                    data.push(libm::round(top * (1.0 - wy) + bottom * wy) as u8);
                }
            }
        }
    }
    VideoVolume::new(video.t, h, w, video.c, data)
}

// ----- MFCC -----

/// In-place iterative radix-2 FFT; `re.len()` must be a power of two.
pub(crate) fn fft(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = (libm::sin(ang * k as f64), libm::cos(ang * k as f64));
                let (a, b) = (start + k, start + k + len / 2);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * libm::log10(1.0 + f / 700.0)
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (libm::pow(10.0, m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank of `n_mels × (fft_size/2 + 1)` spanning 0..Nyquist.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / fft_size as f64;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64))
        .collect()
}

/// Frame boundaries `[start, end)` of each of `segments` equal time segments over `frames` frames.
pub fn segment_bounds(frames: usize, segments: usize) -> Vec<(usize, usize)> {
    (0..segments)
        .map(|s| {
            let a = (s * frames / segments).min(frames - 1);
            let b = ((s + 1) * frames / segments).max(a + 1).min(frames);
            (a, b)
        })
        .collect()
}

/// Per-frame MFCC vectors (frames × coefficients) before segment averaging.
pub fn mfcc_frames(waveform: &[f64], cfg: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let n = cfg.fft_size;
    if waveform.len() < n {
        return Err(Error::InsufficientAudio {
            len: waveform.len(),
            needed: n,
        });
    }
    let frames = 1 + (waveform.len() - n) / cfg.hop;
    let window = hann(n);
    let bank = mel_filterbank(cfg.mel_filters, n, cfg.sample_rate);
    let m = cfg.mel_filters;
    let dct_scale0 = libm::sqrt(1.0 / m as f64);
    let dct_scale = libm::sqrt(2.0 / m as f64);
    let dct: Vec<Vec<f64>> = (0..cfg.mfcc_coeffs)
        .map(|k| {
            let s = if k == 0 { dct_scale0 } else { dct_scale };
            (0..m)
                .map(|j| s * libm::cos(PI * k as f64 * (2 * j + 1) as f64 / (2 * m) as f64))
                .collect()
        })
        .collect();

    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let chunk = &waveform[f * cfg.hop..f * cfg.hop + n];
        for i in 0..n {
            re[i] = chunk[i] * window[i];
            im[i] = 0.0;
        }
        fft(&mut re, &mut im);
        let power: Vec<f64> = (0..n / 2 + 1).map(|k| re[k] * re[k] + im[k] * im[k]).collect();
        let logmel: Vec<f64> = bank
            .iter()
            .map(|filt| libm::log(filt.iter().zip(&power).map(|(w, p)| w * p).sum::<f64>() + LOG_FLOOR))
            .collect();
        out.push(
            dct.iter()
                .map(|basis| basis.iter().zip(&logmel).map(|(b, v)| b * v).sum())
                .collect(),
        );
    }
    Ok(out)
}

/// MFCC matrix averaged into `audio_segments` rows.
pub fn compute_mfcc(waveform: &[f64], cfg: &FrontendConfig) -> Result<MfccFeature> {
    let frames = mfcc_frames(waveform, cfg)?;
    let f = cfg.mfcc_coeffs;
    let mut data = Vec::with_capacity(cfg.audio_segments * f);
    for (a, b) in segment_bounds(frames.len(), cfg.audio_segments) {
        for k in 0..f {
            data.push(frames[a..b].iter().map(|row| row[k]).sum::<f64>() / (b - a) as f64);
        }
    }
    let segments = Tensor::new(&[cfg.audio_segments, f], data)?;
    if !segments.is_finite() {
        return Err(Error::NonFinite { op: "compute_mfcc" });
    }
    Ok(MfccFeature { segments })
}

// ----- patching and embedding -----

/// Flattens a `T×H×W×C` volume into cube rows (`t_c×p×p×C` values each, scaled to
/// [0, 1]). Rows are ordered time-major, then vertical, then horizontal.
pub fn video_patches(video: &VideoVolume, cube_t: usize, patch: usize) -> Result<(Tensor, Grid)> {
    if cube_t == 0 || patch == 0 || !video.t.is_multiple_of(cube_t) || !video.h.is_multiple_of(patch) || !video.w.is_multiple_of(patch) {
        return Err(Error::Config(format!(
            "video {}x{}x{} not divisible by cube {}x{}x{}",
            video.t, video.h, video.w, cube_t, patch, patch
        )));
    }
    let (gt, gh, gw) = (video.t / cube_t, video.h / patch, video.w / patch);
    let dim = cube_t * patch * patch * video.c;
    let mut data = Vec::with_capacity(gt * gh * gw * dim);
    for ct in 0..gt {
        for cy in 0..gh {
            for cx in 0..gw {
                for dt in 0..cube_t {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            for ch in 0..video.c {
                                let px = video.pixel(ct * cube_t + dt, cy * patch + dy, cx * patch + dx, ch);
                                data.push(px as f64 / 255.0);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&[gt * gh * gw, dim], data)?, Grid::Video { t: gt, h: gh, w: gw }))
}

/// Splits each MFCC row into `patch`-wide chunks, one token per chunk.
pub fn audio_patches(mfcc: &MfccFeature, patch: usize) -> Result<(Tensor, Grid)> {
    let (t, f) = (mfcc.t_seg(), mfcc.coeffs());
    if patch == 0 || f % patch != 0 {
        return Err(Error::Config(format!("audio patch {patch} does not divide {f}")));
    }
    // Row-major storage already places consecutive chunks of a row next to each other.
    let tokens = mfcc.segments.clone().reshape(&[t * f / patch, patch])?;
    Ok((tokens, Grid::Audio { t, f: f / patch }))
}

fn project(patches: &Tensor, proj: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut out = patches.matmul(proj)?;
    let c = proj.shape()[1];
    if bias.len() != c {
        return Err(dim_err("embed", &[c], bias.shape()));
    }
    for row in out.data_mut().chunks_mut(c) {
        row.iter_mut().zip(bias.data()).for_each(|(a, b)| *a += b);
    }
    Ok(out)
}

/// Linear cube embedding: every flattened cube is mapped through `proj` (D×C) plus `bias`.
pub fn cube_embed(video: &VideoVolume, cube_t: usize, patch: usize, proj: &Tensor, bias: &Tensor) -> Result<TokenSequence> {
    let (patches, grid) = video_patches(video, cube_t, patch)?;
    Ok(TokenSequence {
        tokens: project(&patches, proj, bias)?,
        positions: (0..grid.len()).collect(),
        modality: Modality::Video,
        grid,
    })
}

/// Linear spectrogram embedding of `patch`-wide MFCC chunks.
pub fn spectrogram_embed(mfcc: &MfccFeature, patch: usize, proj: &Tensor, bias: &Tensor) -> Result<TokenSequence> {
    let (patches, grid) = audio_patches(mfcc, patch)?;
    Ok(TokenSequence {
        tokens: project(&patches, proj, bias)?,
        positions: (0..grid.len()).collect(),
        modality: Modality::Audio,
        grid,
    })
}

/// Value of the fixed sinusoidal table at `(pos, dim)` for width `c`.
pub fn positional_value(pos: usize, dim: usize, c: usize) -> f64 {
    let pair = (dim / 2) * 2;
    let angle = pos as f64 / libm::pow(10_000.0, pair as f64 / c as f64);
    if dim.is_multiple_of(2) {
        libm::sin(angle)
    } else {
        libm::cos(angle)
    }
}

/// Sinusoidal positional table for the given positions (`positions.len() × c`).
pub fn positional_rows(positions: &[usize], c: usize) -> Tensor {
    let data = positions
        .iter()
        .flat_map(|&p| (0..c).map(move |d| positional_value(p, d, c)))
        .collect();
    Tensor::new(&[positions.len().max(1), c], data).unwrap_or_else(|_| Tensor::zeros(&[1, c]))
}

pub fn positional_table(len: usize, c: usize) -> Tensor {
    let pos: Vec<usize> = (0..len).collect();
    positional_rows(&pos, c)
}

/// Adds the sinusoidal table to every token. Not idempotent: applying twice adds it twice.
pub fn add_positional(seq: &TokenSequence) -> Result<TokenSequence> {
    let c = seq.tokens.shape()[1];
    let table = positional_rows(&seq.positions, c);
    let mut tokens = seq.tokens.clone();
    tokens.data_mut().iter_mut().zip(table.data()).for_each(|(a, b)| *a += b);
    Ok(TokenSequence {
        tokens,
        positions: seq.positions.clone(),
        modality: seq.modality,
        grid: seq.grid,
    })
}

// ----- normalisation -----

/// Per-row mean/std normalisation: `(x − mean) / sqrt(var + eps)`.
pub fn normalize_rows(x: &Tensor, eps: f64) -> Result<Tensor> {
    let (_, c) = x.dims2()?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let rs = 1.0 / libm::sqrt(var + eps);
        row.iter_mut().for_each(|v| *v = (*v - mean) * rs);
    }
    Ok(out)
}

/// Per-column standardisation over rows (each coefficient across time).
pub fn standardize_columns(x: &Tensor, eps: f64) -> Result<Tensor> {
    let (r, c) = x.dims2()?;
    let mut out = x.clone();
    for j in 0..c {
        let mean = (0..r).map(|i| x.get2(i, j)).sum::<f64>() / r as f64;
        let var = (0..r).map(|i| (x.get2(i, j) - mean) * (x.get2(i, j) - mean)).sum::<f64>() / r as f64;
        let rs = 1.0 / libm::sqrt(var + eps);
        for i in 0..r {
            out.data_mut()[i * c + j] = (x.get2(i, j) - mean) * rs;
        }
    }
    Ok(out)
}

/// Model-ready inputs derived from one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    /// Cube rows scaled to [0, 1] (`L_v × D_v`).
    pub video_patches: Tensor,
    pub video_grid: Grid,
    pub mfcc: MfccFeature,
    /// Standardised MFCC chunks fed to the audio embedding (`L_a × D_a`).
    pub audio_patches: Tensor,
    pub audio_grid: Grid,
}

pub const AUDIO_INPUT_EPS: f64 = 1e-6;

/// Full preprocessing of a clip under `cfg`.
pub fn extract_features(clip: &RawClip, cfg: &FrontendConfig) -> Result<ClipFeatures> {
    cfg.validate()?;
    if clip.video.c != cfg.channels {
        return Err(Error::Config(format!(
            "clip has {} channels, config expects {}",
            clip.video.c, cfg.channels
        )));
    }
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "clip sample rate {} differs from {}",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    let frames = sample_frames(&clip.video, cfg.frames_sampled)?;
    let frames = resize_frames(&frames, cfg.frame_h, cfg.frame_w)?;
    let (video_patches, video_grid) = video_patches(&frames, cfg.cube_t, cfg.patch)?;
    let wave: Vec<f64> = clip.waveform.iter().map(|&v| v as f64).collect();
    let mfcc = compute_mfcc(&wave, cfg)?;
    let standardized = MfccFeature {
        segments: standardize_columns(&mfcc.segments, AUDIO_INPUT_EPS)?,
    };
    let (audio_patches, audio_grid) = audio_patches(&standardized, cfg.audio_patch)?;
    Ok(ClipFeatures {
        video_patches,
        video_grid,
        mfcc,
        audio_patches,
        audio_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_matches_naive_dft() {
        let n = 16;
        let x: Vec<f64> = (0..n).map(|i| libm::sin(i as f64 * 0.7) + 0.1 * i as f64).collect();
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        fft(&mut re, &mut im);
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                sr += v * libm::cos(a);
                si += v * libm::sin(a);
            }
            assert!((re[k] - sr).abs() < 1e-10 && (im[k] - si).abs() < 1e-10);
        }
    }

    #[test]
    fn segment_bounds_cover_short_inputs() {
        let b = segment_bounds(4, 16);
        assert!(b.iter().all(|&(a, e)| e > a && e <= 4));
        let b = segment_bounds(116, 16);
        assert_eq!(b[0].0, 0);
        assert_eq!(b[15].1, 116);
    }

    #[test]
    fn config_validation() {
        assert!(FrontendConfig::default().validate().is_ok());
        let bad = FrontendConfig {
            patch: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FrontendConfig {
            fft_size: 500,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let v = VideoVolume::new(1, 4, 4, 1, vec![7; 16]).unwrap();
        assert_eq!(resize_frames(&v, 4, 4).unwrap(), v);
        let r = resize_frames(&v, 2, 8).unwrap();
        assert!(r.data.iter().all(|&p| p == 7));
    }
}
