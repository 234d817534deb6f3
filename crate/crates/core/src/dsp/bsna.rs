//! "BSNA" multichannel audio container.
//!
//! Layout (little-endian): magic `BSNA`, `u32` version (1), `u32` sample rate,
//! `u32` channel count, `u64` samples per channel, then planar `f32` samples
//! channel by channel.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BSNA";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioFile {
    pub sample_rate: u32,
    /// One `Vec` per channel, all the same length.
    pub channels: Vec<Vec<f32>>,
}

impl AudioFile {
    pub fn from_waveforms(waves: &[Waveform]) -> Result<Self> {
        let first = waves
            .first()
            .ok_or_else(|| Error::InvalidInput("no channels to write".into()))?;
        if waves
            .iter()
            .any(|w| w.len() != first.len() || w.sample_rate != first.sample_rate)
        {
            return Err(Error::InvalidInput(
                "channels differ in length or sample rate".into(),
            ));
        }
        Ok(AudioFile {
            sample_rate: first.sample_rate,
            channels: waves
                .iter()
                .map(|w| w.samples.iter().map(|&s| s as f32).collect())
                .collect(),
        })
    }

    /// Channel `i` (0-based) as a waveform.
    pub fn waveform(&self, i: usize) -> Waveform {
        Waveform {
            samples: self.channels[i].iter().map(|&s| s as f64).collect(),
            sample_rate: self.sample_rate,
            channel_id: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.channels.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * per * self.channels.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.channels.len() as u32).to_le_bytes());
        out.extend_from_slice(&(per as u64).to_le_bytes());
        for ch in &self.channels {
            for s in ch {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
            return Err(Error::format(path, "missing BSNA header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let sample_rate = u32_at(8);
        let channels = u32_at(12) as usize;
        let per = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let expected = channels
            .checked_mul(per)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(Error::format(
                path,
                format!("payload length mismatch for {channels} x {per} samples"),
            ));
        }
        let data = &bytes[HEADER_LEN..];
        let channels = (0..channels)
            .map(|c| {
                data[c * per * 4..(c + 1) * per * 4]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        Ok(AudioFile {
            sample_rate,
            channels,
        })
    }
}

pub fn write_bsna(path: &Path, audio: &AudioFile) -> Result<()> {
    fs::write(path, audio.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_bsna(path: &Path) -> Result<AudioFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    AudioFile::from_bytes(&bytes, path)
}
