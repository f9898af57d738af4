//! Encoder + head bundle and the `MGPM` parameter file.
//!
//! Layout (little-endian): magic `b"MGPM"`, `u32` version, `u32` length of the
//! JSON config echo followed by its bytes, `u32` parameter count, then per
//! parameter: `u32` name length, name bytes, `u32` rank, `u32` dims, and the
//! values as `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{DynEConfig, Encoder, EncoderCache, PyramidFeatures};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::head::{DetectionHead, HeadCache, HeadConfig, HeadOutputs};
use crate::nn::params::{prefixed, Parameterized};

pub const MODEL_MAGIC: &[u8; 4] = b"MGPM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channels of the input feature files.
    pub input_channels: usize,
    pub encoder: DynEConfig,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 16,
            encoder: DynEConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::config("input_channels must be positive"));
        }
        self.encoder.validate()?;
        self.head.validate(self.encoder.channels)
    }

    pub fn num_levels(&self) -> usize {
        self.encoder.num_levels
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes
    }

    pub fn min_length(&self) -> usize {
        self.encoder.min_length()
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub head: DetectionHead,
}

pub struct ModelCache {
    pyramid: PyramidFeatures,
    encoder: EncoderCache,
    head: HeadCache,
}

impl Model {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            encoder: Encoder::zeros(&config.encoder, config.input_channels)?,
            head: DetectionHead::zeros(config.encoder.channels, &config.head)?,
        })
    }

    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::init(&config.encoder, config.input_channels, &mut rng)?;
        let head = DetectionHead::init(config.encoder.channels, &config.head, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            encoder,
            head,
        })
    }

    pub fn forward(&self, x: &Grid) -> Result<HeadOutputs> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Grid) -> Result<(HeadOutputs, ModelCache)> {
        let (pyramid, encoder) = self.encoder.forward(x)?;
        let (out, head) = self.head.forward(&pyramid);
        Ok((
            out,
            ModelCache {
                pyramid,
                encoder,
                head,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(
        &self,
        x: &Grid,
        cache: &ModelCache,
        grad_logits: &[Grid],
        grad_offsets: &[Grid],
        grads: &mut Model,
    ) -> Grid {
        let g_levels = self.head.backward(
            &cache.pyramid,
            &cache.head,
            grad_logits,
            grad_offsets,
            &mut grads.head,
        );
        self.encoder
            .backward(x, &cache.encoder, &g_levels, &mut grads.encoder)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        put_u32(&mut out, MODEL_VERSION);
        let json = serde_json::to_vec(&self.config)?;
        put_u32(&mut out, json.len() as u32);
        out.extend_from_slice(&json);
        let params = self.params();
        put_u32(&mut out, params.len() as u32);
        for (name, g) in params {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, g.shape().len() as u32);
            for &d in g.shape() {
                put_u32(&mut out, d as u32);
            }
            for v in g.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(format_err(0, "bad magic, expected \"MGPM\""));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let json_len = r.u32()? as usize;
        let at = r.pos;
        let config: ModelConfig = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| format_err(at, format!("config echo: {e}")))?;
        let mut model = Model::zeros(&config).map_err(|e| format_err(at, e.to_string()))?;

        let count = r.u32()? as usize;
        let mut stored: BTreeMap<String, (usize, Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| format_err(at, "parameter name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| format_err(r.pos, format!("payload of {name} exceeds file")))?;
            let data: Vec<f64> = r
                .take(8 * len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if stored.insert(name.clone(), (at, dims, data)).is_some() {
                return Err(format_err(at, format!("duplicate parameter {name}")));
            }
        }
        if r.remaining() != 0 {
            return Err(format_err(r.pos, format!("{} trailing bytes", r.remaining())));
        }
        for (name, g) in model.params_mut() {
            let (at, dims, data) = stored
                .remove(&name)
                .ok_or_else(|| format_err(bytes.len(), format!("missing parameter {name}")))?;
            if dims != g.shape() {
                return Err(format_err(
                    at,
                    format!("parameter {name} has shape {dims:?}, expected {:?}", g.shape()),
                ));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(format_err(at, format!("parameter {name} has non-finite values")));
            }
            g.data_mut().copy_from_slice(&data);
        }
        if let Some((name, (at, _, _))) = stored.into_iter().next() {
            return Err(format_err(at, format!("unexpected parameter {name}")));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Parameterized for Model {
    fn params(&self) -> Vec<(String, &Grid)> {
        let mut v = prefixed("encoder", self.encoder.params());
        v.extend(prefixed("head", self.head.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        let mut v = prefixed("encoder", self.encoder.params_mut());
        v.extend(prefixed("head", self.head.params_mut()));
        v
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::ModelFormat {
        offset,
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(format_err(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
