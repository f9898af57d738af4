//! Dynamic-encoder feature pyramid.
//!
//! Each DynE layer halves the temporal resolution with window-2 max pooling and
//! adds two gated-convolution branches back onto the downsampled features:
//! an instance branch operating on the channel-averaged sequence, and a
//! multi-kernel branch summing dilated convolutions of several widths.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::layers::{normal_grid, Conv1d, LayerNorm};
use crate::nn::ops::{self, LayerNormCache, PoolMode};
use crate::nn::params::{prefixed, Parameterized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynEConfig {
    pub channels: usize,
    pub kernel_set: Vec<usize>,
    /// Dilation applied to the multi-kernel branch convolutions.
    pub window_expansion: usize,
    pub num_levels: usize,
}

impl Default for DynEConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            kernel_set: vec![1, 3, 5],
            window_expansion: 2,
            num_levels: 5,
        }
    }
}

impl DynEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 2 {
            return Err(Error::config("num_levels must be at least 2"));
        }
        if self.channels < 2 {
            return Err(Error::config("channels must be at least 2"));
        }
        if self.window_expansion < 1 {
            return Err(Error::config("window_expansion must be at least 1"));
        }
        if self.kernel_set.is_empty() {
            return Err(Error::config("kernel_set is empty"));
        }
        if let Some(k) = self.kernel_set.iter().find(|k| *k % 2 == 0) {
            return Err(Error::config(format!("kernel sizes must be odd, got {k}")));
        }
        Ok(())
    }

    /// Shortest input the pyramid accepts: `2^N`.
    pub fn min_length(&self) -> usize {
        1 << self.num_levels
    }
}

/// Per-level lengths `T_n = ceil(T_{n-1} / 2)` for `n = 1..=levels`.
pub fn level_lengths(t: usize, levels: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(levels);
    let mut cur = t;
    for _ in 0..levels {
        cur = cur.div_ceil(2);
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidFeatures {
    pub levels: Vec<Grid>,
}

impl PyramidFeatures {
    pub fn lengths(&self) -> Vec<usize> {
        self.levels.iter().map(Grid::cols).collect()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

// ---------------------------------------------------------------------------

/// Convolution modulated by a per-output-channel sigmoid gate computed from the
/// time-averaged input: `y = sigmoid(W_g · avg_t(x) + b_g) ⊙ conv(x)`.
#[derive(Clone, Debug)]
pub struct DfaConv {
    pub conv: Conv1d,
    pub gate_weight: Grid,
    pub gate_bias: Grid,
}

pub struct DfaCache {
    pooled: Vec<f64>,
    gate: Vec<f64>,
    conv_out: Grid,
}

impl DfaConv {
    pub fn zeros(c_in: usize, c_out: usize, k: usize, dilation: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size must be odd, got {k}")));
        }
        Ok(Self {
            conv: Conv1d::zeros(c_in, c_out, k, dilation),
            gate_weight: Grid::zeros(&[c_out, c_in]),
            gate_bias: Grid::zeros(&[c_out]),
        })
    }

    pub fn init(
        c_in: usize,
        c_out: usize,
        k: usize,
        dilation: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut d = Self::zeros(c_in, c_out, k, dilation)?;
        d.conv = Conv1d::init(c_in, c_out, k, dilation, gain, rng);
        d.gate_weight = normal_grid(&[c_out, c_in], 0.1 / (c_in as f64).sqrt(), rng);
        Ok(d)
    }

    pub fn kernel_size(&self) -> usize {
        self.conv.kernel.shape()[2]
    }

    /// Gate values for input `x`, one per output channel.
    pub fn gate(&self, x: &Grid) -> Vec<f64> {
        let pooled = ops::pool_time_forward(x, PoolMode::Avg).0;
        self.gate_from_pooled(pooled.data())
    }

    fn gate_from_pooled(&self, pooled: &[f64]) -> Vec<f64> {
        ops::matvec(&self.gate_weight, pooled)
            .iter()
            .zip(self.gate_bias.data())
            .map(|(z, b)| ops::sigmoid(z + b))
            .collect()
    }

    pub fn forward(&self, x: &Grid) -> (Grid, DfaCache) {
        let pooled = ops::pool_time_forward(x, PoolMode::Avg).0.into_data();
        let gate = self.gate_from_pooled(&pooled);
        let conv_out = self.conv.forward(x);
        let mut y = conv_out.clone();
        for (o, g) in gate.iter().enumerate() {
            y.row_mut(o).iter_mut().for_each(|v| *v *= g);
        }
        (
            y,
            DfaCache {
                pooled,
                gate,
                conv_out,
            },
        )
    }

    pub fn backward(&self, x: &Grid, cache: &DfaCache, grad_out: &Grid, grads: &mut DfaConv) -> Grid {
        let (c_out, t) = (grad_out.rows(), grad_out.cols());
        let mut g_conv = grad_out.clone();
        let mut dz = vec![0.0; c_out];
        for o in 0..c_out {
            let g = cache.gate[o];
            let dg: f64 = grad_out
                .row(o)
                .iter()
                .zip(cache.conv_out.row(o))
                .map(|(a, b)| a * b)
                .sum();
            dz[o] = dg * g * (1.0 - g);
            g_conv.row_mut(o).iter_mut().for_each(|v| *v *= g);
        }
        let mut gx = self.conv.backward(x, &g_conv, &mut grads.conv);
        let c_in = x.rows();
        let mut d_pooled = vec![0.0; c_in];
        for o in 0..c_out {
            grads.gate_bias.data_mut()[o] += dz[o];
            let gw = grads.gate_weight.row_mut(o);
            for i in 0..c_in {
                gw[i] += dz[o] * cache.pooled[i];
                d_pooled[i] += dz[o] * self.gate_weight.row(o)[i];
            }
        }
        for i in 0..c_in {
            let add = d_pooled[i] / t as f64;
            gx.row_mut(i).iter_mut().for_each(|v| *v += add);
        }
        gx
    }
}

impl Parameterized for DfaConv {
    fn params(&self) -> Vec<(String, &Grid)> {
        let mut v = prefixed("conv", self.conv.params());
        v.push(("gate_weight".into(), &self.gate_weight));
        v.push(("gate_bias".into(), &self.gate_bias));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        let mut v = prefixed("conv", self.conv.params_mut());
        v.push(("gate_weight".into(), &mut self.gate_weight));
        v.push(("gate_bias".into(), &mut self.gate_bias));
        v
    }
}

/// Checked single gated convolution.
pub fn dfa_conv(x: &Grid, params: &DfaConv) -> Result<Grid> {
    ops::conv1d(x, &params.conv.kernel, Some(&params.conv.bias), params.conv.dilation)?;
    Ok(params.forward(x).0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DynELayer {
    pub norm: LayerNorm,
    pub instance: DfaConv,
    pub multi: Vec<DfaConv>,
}

pub struct DynECache {
    t_in: usize,
    ds_arg: Vec<usize>,
    norm: LayerNormCache,
    normed: Grid,
    squeezed: Grid,
    instance: DfaCache,
    multi: Vec<DfaCache>,
}

impl DynELayer {
    pub fn zeros(cfg: &DynEConfig) -> Result<Self> {
        let c = cfg.channels;
        Ok(Self {
            norm: LayerNorm::new(c),
            instance: DfaConv::zeros(1, 1, 1, 1)?,
            multi: cfg
                .kernel_set
                .iter()
                .map(|&k| DfaConv::zeros(c, c, k, cfg.window_expansion))
                .collect::<Result<_>>()?,
        })
    }

    pub fn init(cfg: &DynEConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = cfg.channels;
        let gain = 0.5 / (cfg.kernel_set.len() as f64).sqrt();
        Ok(Self {
            norm: LayerNorm::new(c),
            instance: DfaConv::init(1, 1, 1, 1, 0.5, rng)?,
            multi: cfg
                .kernel_set
                .iter()
                .map(|&k| DfaConv::init(c, c, k, cfg.window_expansion, gain, rng))
                .collect::<Result<_>>()?,
        })
    }

    pub fn forward(&self, f: &Grid) -> Result<(Grid, DynECache)> {
        if f.cols() < 2 {
            return Err(Error::TooShort {
                what: "DynE input",
                actual: f.cols(),
                minimum: 2,
            });
        }
        let c = self.norm.gain.len();
        if f.rows() != c {
            return Err(Error::Shape {
                axis: "DynE channels",
                expected: c,
                actual: f.rows(),
            });
        }
        Ok(self.forward_unchecked(f))
    }

    fn forward_unchecked(&self, f: &Grid) -> (Grid, DynECache) {
        let (d, ds_arg) = ops::downsample2_forward(f);
        let (normed, norm) = self.norm.forward(&d);
        let squeezed = ops::pool_channels_forward(&normed, PoolMode::Avg).0;
        let (inst, instance) = self.instance.forward(&squeezed);
        let mut out = d;
        let t = out.cols();
        for i in 0..out.rows() {
            for (a, b) in out.row_mut(i).iter_mut().zip(inst.row(0)) {
                *a += b;
            }
        }
        let mut multi = Vec::with_capacity(self.multi.len());
        for m in &self.multi {
            let (y, cache) = m.forward(&normed);
            out.add_assign(&y);
            multi.push(cache);
        }
        debug_assert_eq!(out.cols(), t);
        (
            out,
            DynECache {
                t_in: f.cols(),
                ds_arg,
                norm,
                normed,
                squeezed,
                instance,
                multi,
            },
        )
    }

    pub fn backward(&self, cache: &DynECache, grad_out: &Grid, grads: &mut DynELayer) -> Grid {
        let (c, t) = (grad_out.rows(), grad_out.cols());
        let mut g_inst = Grid::zeros(&[1, t]);
        for i in 0..c {
            for (a, b) in g_inst.row_mut(0).iter_mut().zip(grad_out.row(i)) {
                *a += b;
            }
        }
        let g_sq = self
            .instance
            .backward(&cache.squeezed, &cache.instance, &g_inst, &mut grads.instance);
        let mut g_normed = ops::pool_channels_backward(g_sq.row(0), c, PoolMode::Avg, &[]);
        for ((m, mc), mg) in self.multi.iter().zip(&cache.multi).zip(grads.multi.iter_mut()) {
            g_normed.add_assign(&m.backward(&cache.normed, mc, grad_out, mg));
        }
        let mut g_d = grad_out.clone();
        g_d.add_assign(&self.norm.backward(&cache.norm, &g_normed, &mut grads.norm));
        ops::downsample2_backward(&g_d, cache.t_in, &cache.ds_arg)
    }
}

impl Parameterized for DynELayer {
    fn params(&self) -> Vec<(String, &Grid)> {
        let mut v = prefixed("norm", self.norm.params());
        v.extend(prefixed("instance", self.instance.params()));
        v.extend(prefixed("multi", self.multi.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        let mut v = prefixed("norm", self.norm.params_mut());
        v.extend(prefixed("instance", self.instance.params_mut()));
        v.extend(prefixed("multi", self.multi.params_mut()));
        v
    }
}

/// Checked single DynE layer application.
pub fn dyne_layer(f: &Grid, params: &DynELayer) -> Result<Grid> {
    Ok(params.forward(f)?.0)
}

// ---------------------------------------------------------------------------

/// Input projection followed by `N` stacked DynE layers.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub proj: Conv1d,
    pub layers: Vec<DynELayer>,
}

pub struct EncoderCache {
    projected: Grid,
    layers: Vec<DynECache>,
}

impl Encoder {
    pub fn zeros(cfg: &DynEConfig, input_channels: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            proj: Conv1d::zeros(input_channels, cfg.channels, 3, 1),
            layers: (0..cfg.num_levels)
                .map(|_| DynELayer::zeros(cfg))
                .collect::<Result<_>>()?,
        })
    }

    pub fn init(cfg: &DynEConfig, input_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            proj: Conv1d::init(input_channels, cfg.channels, 3, 1, 1.0, rng),
            layers: (0..cfg.num_levels)
                .map(|_| DynELayer::init(cfg, rng))
                .collect::<Result<_>>()?,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.layers.len()
    }

    pub fn input_channels(&self) -> usize {
        self.proj.kernel.shape()[1]
    }

    pub fn check_input(&self, x: &Grid) -> Result<()> {
        if x.shape().len() != 2 || x.rows() != self.input_channels() {
            return Err(Error::Shape {
                axis: "feature channels",
                expected: self.input_channels(),
                actual: x.shape().first().copied().unwrap_or(0),
            });
        }
        let min = 1usize << self.num_levels();
        if x.cols() < min {
            return Err(Error::TooShort {
                what: "feature sequence (minimum input length is 2^levels)",
                actual: x.cols(),
                minimum: min,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Grid) -> Result<(PyramidFeatures, EncoderCache)> {
        self.check_input(x)?;
        let projected = self.proj.forward(x);
        let mut levels = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = &projected;
        for layer in &self.layers {
            let (out, cache) = layer.forward_unchecked(cur);
            levels.push(out);
            caches.push(cache);
            cur = levels.last().expect("just pushed");
        }
        Ok((
            PyramidFeatures { levels },
            EncoderCache {
                projected,
                layers: caches,
            },
        ))
    }

    /// Backpropagates per-level gradients; returns the input gradient.
    pub fn backward(
        &self,
        x: &Grid,
        cache: &EncoderCache,
        grad_levels: &[Grid],
        grads: &mut Encoder,
    ) -> Grid {
        let mut carry: Option<Grid> = None;
        for n in (0..self.layers.len()).rev() {
            let mut g = grad_levels[n].clone();
            if let Some(c) = carry.take() {
                g.add_assign(&c);
            }
            carry = Some(self.layers[n].backward(&cache.layers[n], &g, &mut grads.layers[n]));
        }
        let g_proj = carry.expect("at least one level");
        debug_assert_eq!(g_proj.cols(), cache.projected.cols());
        self.proj.backward(x, &g_proj, &mut grads.proj)
    }
}

impl Parameterized for Encoder {
    fn params(&self) -> Vec<(String, &Grid)> {
        let mut v = prefixed("proj", self.proj.params());
        v.extend(prefixed("dyne", self.layers.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        let mut v = prefixed("proj", self.proj.params_mut());
        v.extend(prefixed("dyne", self.layers.params_mut()));
        v
    }
}

/// Projects `f0` and runs the DynE stack, returning every level.
pub fn build_pyramid(f0: &Grid, encoder: &Encoder) -> Result<PyramidFeatures> {
    Ok(encoder.forward(f0)?.0)
}
