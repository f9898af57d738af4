//! `MGFB` binary feature files.
//!
//! Layout (little-endian): magic `b"MGFB"`, `u32` version (1), `u32` T,
//! `u32` C, then `T·C` `f32` values, time-major (all channels of step 0, then
//! step 1, ...).

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const FEATURE_MAGIC: &[u8; 4] = b"MGFB";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 16;

/// A `T×C` feature sequence in file precision.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub steps: usize,
    pub channels: usize,
    /// Time-major values, `steps * channels` long.
    pub values: Vec<f32>,
}

impl FeatureSequence {
    /// Converts a `C×T` grid, rounding to `f32`.
    pub fn from_grid(g: &Grid) -> Self {
        let (c, t) = (g.rows(), g.cols());
        let mut values = Vec::with_capacity(c * t);
        for step in 0..t {
            for ch in 0..c {
                values.push(g.at(ch, step) as f32);
            }
        }
        Self {
            steps: t,
            channels: c,
            values,
        }
    }

    /// Channel-major `C×T` grid.
    pub fn to_grid(&self) -> Grid {
        let mut g = Grid::zeros(&[self.channels, self.steps]);
        for step in 0..self.steps {
            for ch in 0..self.channels {
                g.set(ch, step, self.values[step * self.channels + ch] as f64);
            }
        }
        g
    }

    /// Time steps `[start, end)` as a `C×(end-start)` grid.
    pub fn window(&self, start: usize, end: usize) -> Grid {
        let mut g = Grid::zeros(&[self.channels, end - start]);
        for step in start..end {
            for ch in 0..self.channels {
                g.set(ch, step - start, self.values[step * self.channels + ch] as f64);
            }
        }
        g
    }
}

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * seq.values.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.steps as u32).to_le_bytes());
    out.extend_from_slice(&(seq.channels as u32).to_le_bytes());
    for v in &seq.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::FeatureFormat {
            offset: bytes.len(),
            message: format!("truncated header, expected {FEATURE_HEADER_LEN} bytes"),
        })
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::FeatureFormat {
            offset: 0,
            message: "bad magic, expected \"MGFB\"".into(),
        });
    }
    let version = read_u32(bytes, 4)?;
    if version != FEATURE_VERSION {
        return Err(Error::FeatureFormat {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let steps = read_u32(bytes, 8)? as usize;
    let channels = read_u32(bytes, 12)? as usize;
    if channels == 0 {
        return Err(Error::FeatureFormat {
            offset: 12,
            message: "channel count is zero".into(),
        });
    }
    let expected = steps
        .checked_mul(channels)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(FEATURE_HEADER_LEN));
    match expected {
        Some(n) if n == bytes.len() => {}
        Some(n) if n > bytes.len() => {
            return Err(Error::FeatureFormat {
                offset: bytes.len(),
                message: format!("truncated payload, expected {n} bytes for T={steps}, C={channels}"),
            })
        }
        Some(n) => {
            return Err(Error::FeatureFormat {
                offset: n,
                message: format!("{} trailing bytes after payload", bytes.len() - n),
            })
        }
        None => {
            return Err(Error::FeatureFormat {
                offset: 8,
                message: format!("payload size overflows for T={steps}, C={channels}"),
            })
        }
    }
    let mut values = Vec::with_capacity(steps * channels);
    for (i, chunk) in bytes[FEATURE_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::FeatureFormat {
                offset: FEATURE_HEADER_LEN + 4 * i,
                message: "non-finite feature value".into(),
            });
        }
        values.push(v);
    }
    Ok(FeatureSequence {
        steps,
        channels,
        values,
    })
}

pub fn save_features(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(seq)).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}
