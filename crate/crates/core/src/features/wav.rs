//! Minimal RIFF/WAVE reader: PCM 16-bit and IEEE float 32-bit, mono or
//! stereo, little-endian throughout.

use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

/// Loads a WAV file, downmixing stereo to mono by channel mean.
/// 16-bit samples are scaled by 1/32768 so that -32768 maps to -1.0 exactly.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

struct FmtChunk {
    format_code: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn decode(path: &Path, bytes: &[u8]) -> Result<AudioClip> {
    let malformed = |detail: &str| Error::MalformedWav {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    // Chunk walk: unknown chunks are skipped, fmt and data are captured.
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body_start + 16 > bytes.len() {
                    return Err(malformed("fmt chunk too small"));
                }
                let b = &bytes[body_start..];
                fmt = Some(FmtChunk {
                    format_code: u16::from_le_bytes([b[0], b[1]]),
                    channels: u16::from_le_bytes([b[2], b[3]]),
                    sample_rate: u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
                    bits_per_sample: u16::from_le_bytes([b[14], b[15]]),
                });
            }
            b"data" => {
                if body_start + size > bytes.len() {
                    return Err(malformed(&format!(
                        "truncated data chunk: header claims {size} bytes, {} available",
                        bytes.len() - body_start
                    )));
                }
                data = Some(&bytes[body_start..body_start + size]);
            }
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_start + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(malformed(&format!(
            "unsupported channel count {}",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(malformed("zero sample rate"));
    }

    let channels = fmt.channels as usize;
    let interleaved: Vec<f64> = match (fmt.format_code, fmt.bits_per_sample) {
        (1, 16) => {
            if data.len() % 2 != 0 {
                return Err(malformed("data chunk is not a whole number of 16-bit samples"));
            }
            data.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                .collect()
        }
        (3, 32) => {
            if data.len() % 4 != 0 {
                return Err(malformed("data chunk is not a whole number of 32-bit samples"));
            }
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
        (code, bits) => {
            return Err(Error::UnsupportedWavEncoding {
                path: path.to_path_buf(),
                format_code: code,
                bits,
            })
        }
    };

    if interleaved.is_empty() {
        return Err(malformed("data chunk holds no samples"));
    }
    if interleaved.len() % channels != 0 {
        return Err(malformed("data chunk is not a whole number of sample frames"));
    }

    let samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|fr| (fr[0] + fr[1]) / 2.0)
            .collect()
    };

    AudioClip::new(samples, fmt.sample_rate)
}
