//! Raw clip container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `HOLACLIP` |
//! | 2 | version (u16) |
//! | 16 | frames, height, width, channels (u32 each) |
//! | T·H·W·C | frame bytes, `T×H×W×C` row-major |
//! | 8 | waveform length N (u64) |
//! | 4·N | waveform samples (f32) |
//! | 4 | sample rate in Hz (u32) |

use std::path::Path;

use hola_core::frontend::{RawClip, VideoVolume};

use crate::binio::Reader;
use crate::error::{read_file, write_file, Error, FormatError, Result};

pub const CLIP_MAGIC: &[u8; 8] = b"HOLACLIP";
pub const CLIP_VERSION: u16 = 1;

pub fn encode_clip(clip: &RawClip) -> Vec<u8> {
    let v = &clip.video;
    let mut out = Vec::with_capacity(42 + v.data.len() + 4 * clip.waveform.len());
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    for d in [v.t, v.h, v.w, v.c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&v.data);
    out.extend_from_slice(&(clip.waveform.len() as u64).to_le_bytes());
    for s in &clip.waveform {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out
}

pub fn decode_clip(bytes: &[u8]) -> std::result::Result<RawClip, FormatError> {
    let mut r = Reader::new("clip", bytes);
    r.header(CLIP_MAGIC, CLIP_VERSION)?;
    let dims_at = r.offset();
    let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
    if dims.contains(&0) {
        return Err(FormatError::Invalid {
            what: "clip",
            offset: dims_at,
            reason: format!("zero frame dimension in {dims:?}"),
        });
    }
    let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
    let n = r.payload_len(count.unwrap_or(u64::MAX), 1)?;
    let frames = r.take(n)?.to_vec();
    let samples = r.u64()?;
    let n = r.payload_len(samples, 4)?;
    let waveform = r
        .take(n)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let rate_at = r.offset();
    let sample_rate = r.u32()?;
    if sample_rate == 0 {
        return Err(FormatError::Invalid {
            what: "clip",
            offset: rate_at,
            reason: "sample rate is zero".into(),
        });
    }
    r.finish()?;
    let [t, h, w, c] = dims;
    let video = VideoVolume::new(t, h, w, c, frames).expect("payload length matches the dimensions");
    Ok(RawClip {
        video,
        waveform,
        sample_rate,
    })
}

pub fn save_clip(clip: &RawClip, path: &Path) -> Result<()> {
    write_file(path, &encode_clip(clip))
}

pub fn load_clip(path: &Path) -> Result<RawClip> {
    decode_clip(&read_file(path)?).map_err(|e| Error::format(path, e))
}
