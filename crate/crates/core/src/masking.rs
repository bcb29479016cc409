//! Encoder and decoder masks and the dual-masking plan.
//!
//! Masked counts are `round(ratio * n)` with halves rounded away from zero.
//! `true` always means hidden.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frontend::{Grid, Modality};
use crate::rng::Rng;

/// Number of masked positions out of `n` for `ratio`.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    libm::round(ratio * n as f64) as usize
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("mask ratio {ratio} outside (0, 1)")))
    }
}

fn spatial_dims(grid: Grid) -> (usize, usize) {
    match grid {
        Grid::Video { t, h, w } => (t, h * w),
        Grid::Audio { t, f } => (t, f),
    }
}

/// One spatial mask shared by every time slice.
pub fn tube_mask(grid: Grid, ratio: f64, rng: &mut Rng) -> Result<Vec<bool>> {
    check_ratio(ratio)?;
    let (t, spatial) = spatial_dims(grid);
    let k = masked_count(ratio, spatial);
    if k >= spatial {
        return Err(Error::AllMasked);
    }
    let mut slice = vec![false; spatial];
    for i in rng.choose_indices(spatial, k) {
        slice[i] = true;
    }
    Ok(slice.repeat(t))
}

/// Exactly `round(ratio * len)` positions, uniform without replacement.
pub fn random_mask(len: usize, ratio: f64, rng: &mut Rng) -> Result<Vec<bool>> {
    check_ratio(ratio)?;
    if len == 0 {
        return Err(Error::EmptyInput("random_mask"));
    }
    let k = masked_count(ratio, len);
    if k >= len {
        return Err(Error::AllMasked);
    }
    let mut mask = vec![false; len];
    for i in rng.choose_indices(len, k) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Cell size for a running-cell mask: one kept slot per cell.
pub fn running_cell_size(ratio: f64) -> Result<usize> {
    check_ratio(ratio)?;
    let s = 1.0 / (1.0 - ratio);
    let r = libm::round(s);
    if (s - r).abs() > 1e-9 || r < 2.0 {
        return Err(Error::Config(format!("ratio {ratio} does not give an integer cell size")));
    }
    Ok(r as usize)
}

/// Spatial positions are grouped row-major into cells of `s`; at time `t`
/// cell `c` keeps slot `(c + t) mod s` and hides the rest.
pub fn running_cell_mask(grid: Grid, ratio: f64) -> Result<Vec<bool>> {
    let s = running_cell_size(ratio)?;
    let (t, spatial) = spatial_dims(grid);
    if spatial % s != 0 {
        return Err(Error::Config(format!("cell size {s} does not divide {spatial} spatial positions")));
    }
    let mut mask = vec![true; t * spatial];
    for ti in 0..t {
        for cell in 0..spatial / s {
            mask[ti * spatial + cell * s + (cell + ti) % s] = false;
        }
    }
    Ok(mask)
}

/// Encoder and decoder masks for one modality and the positions that enter the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub modality: Modality,
    pub encoder_masked: Vec<bool>,
    pub decoder_masked: Vec<bool>,
    /// Sorted positions hidden from the encoder and replaced at the decoder.
    pub loss_positions: Vec<usize>,
    pub lambda_enc: f64,
    pub lambda_dec: f64,
}

impl MaskPlan {
    /// Token count `N`.
    pub fn len(&self) -> usize {
        self.encoder_masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoder_masked.is_empty()
    }

    pub fn encoder_visible(&self) -> Vec<usize> {
        positions(&self.encoder_masked, false)
    }

    pub fn decoder_mask_positions(&self) -> Vec<usize> {
        positions(&self.decoder_masked, true)
    }

    /// Number of tokens the decoder processes.
    pub fn decoder_len(&self) -> usize {
        self.encoder_visible().len() + self.decoder_mask_positions().len()
    }
}

fn positions(mask: &[bool], value: bool) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m == value).map(|(i, _)| i).collect()
}

pub fn build_dual_plan(
    modality: Modality,
    encoder_masked: Vec<bool>,
    decoder_masked: Vec<bool>,
    lambda_enc: f64,
    lambda_dec: f64,
) -> Result<MaskPlan> {
    if encoder_masked.len() != decoder_masked.len() {
        return Err(crate::error::dim_err(
            "build_dual_plan",
            &[encoder_masked.len()],
            &[decoder_masked.len()],
        ));
    }
    if encoder_masked.iter().all(|&m| m) {
        return Err(Error::AllMasked);
    }
    let loss_positions: Vec<usize> = (0..encoder_masked.len())
        .filter(|&i| encoder_masked[i] && decoder_masked[i])
        .collect();
    if loss_positions.is_empty() {
        return Err(Error::DegeneratePlan);
    }
    Ok(MaskPlan {
        modality,
        encoder_masked,
        decoder_masked,
        loss_positions,
        lambda_enc,
        lambda_dec,
    })
}

/// Mask ratios for both modalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub video_encoder: f64,
    pub audio_encoder: f64,
    pub video_decoder: f64,
    pub audio_decoder: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            video_encoder: 0.9,
            audio_encoder: 0.8,
            video_decoder: 0.5,
            audio_decoder: 0.5,
        }
    }
}

impl MaskConfig {
    /// Tube encoder mask with a running-cell decoder mask.
    pub fn video_plan(&self, grid: Grid, rng: &mut Rng) -> Result<MaskPlan> {
        let enc = tube_mask(grid, self.video_encoder, rng)?;
        let dec = running_cell_mask(grid, self.video_decoder)?;
        build_dual_plan(Modality::Video, enc, dec, self.video_encoder, self.video_decoder)
    }

    /// Random encoder and decoder masks. Redraws the decoder mask until the
    /// plan has at least one loss position.
    pub fn audio_plan(&self, grid: Grid, rng: &mut Rng) -> Result<MaskPlan> {
        let n = grid.len();
        let enc = random_mask(n, self.audio_encoder, rng)?;
        for _ in 0..64 {
            let dec = random_mask(n, self.audio_decoder, rng)?;
            match build_dual_plan(Modality::Audio, enc.clone(), dec, self.audio_encoder, self.audio_decoder) {
                Err(Error::DegeneratePlan) => continue,
                other => return other,
            }
        }
        Err(Error::DegeneratePlan)
    }
}
