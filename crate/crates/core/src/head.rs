//! Multi-scale detection head with spatial-temporal attention.
//!
//! For every pyramid level the head attends over the level itself and its two
//! neighbors (the finer one downsampled, the coarser one upsampled), averages
//! the three paths and runs the shared classification and offset branches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::PyramidFeatures;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::layers::{Conv1d, Mlp2};
use crate::nn::ops::{self, PoolMode};
use crate::nn::params::{prefixed, Parameterized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub num_classes: usize,
    /// Hidden width of the channel-attention MLP is `channels / reduction`.
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub attention: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            reduction: 4,
            spatial_kernel: 7,
            attention: true,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        if self.reduction == 0 || !channels.is_multiple_of(self.reduction) {
            return Err(Error::config(format!(
                "reduction ratio {} must divide channel count {channels}",
                self.reduction
            )));
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return Err(Error::config("spatial_kernel must be odd"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// attention

/// Sequential channel (pooled over time) and temporal (pooled over channels)
/// sigmoid gating.
#[derive(Clone, Debug)]
pub struct StAttention {
    pub mlp: Mlp2,
    pub spatial: Conv1d,
}

pub struct StCache {
    avg: Vec<f64>,
    max: Vec<f64>,
    max_arg: Vec<usize>,
    pre_avg: Vec<f64>,
    pre_max: Vec<f64>,
    channel_gate: Vec<f64>,
    gated: Grid,
    pooled: Grid,
    chan_max_arg: Vec<usize>,
    time_gate: Vec<f64>,
}

impl StAttention {
    pub fn zeros(channels: usize, cfg: &HeadConfig) -> Self {
        Self {
            mlp: Mlp2::zeros(channels, channels / cfg.reduction),
            spatial: Conv1d::zeros(2, 1, cfg.spatial_kernel, 1),
        }
    }

    pub fn init(channels: usize, cfg: &HeadConfig, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp2::init(channels, channels / cfg.reduction, 0.5, rng),
            spatial: Conv1d::init(2, 1, cfg.spatial_kernel, 1, 0.5, rng),
        }
    }

    /// Per-channel weights `sigmoid(mlp(avg_t F) + mlp(max_t F))`.
    pub fn channel_gate(&self, f: &Grid) -> Vec<f64> {
        let avg = ops::pool_time_forward(f, PoolMode::Avg).0;
        let max = ops::pool_time_forward(f, PoolMode::Max).0;
        let a = self.mlp.forward(avg.data()).0;
        let m = self.mlp.forward(max.data()).0;
        a.data()
            .iter()
            .zip(m.data())
            .map(|(x, y)| ops::sigmoid(x + y))
            .collect()
    }

    /// Per-time weights `sigmoid(conv([avg_c F; max_c F]))`.
    pub fn time_gate(&self, f: &Grid) -> Vec<f64> {
        let pooled = Self::channel_pools(f).0;
        self.spatial
            .forward(&pooled)
            .data()
            .iter()
            .map(|&z| ops::sigmoid(z))
            .collect()
    }

    fn channel_pools(f: &Grid) -> (Grid, Vec<usize>) {
        let t = f.cols();
        let avg = ops::pool_channels_forward(f, PoolMode::Avg).0;
        let (max, arg) = ops::pool_channels_forward(f, PoolMode::Max);
        let mut pooled = Grid::zeros(&[2, t]);
        pooled.row_mut(0).copy_from_slice(avg.row(0));
        pooled.row_mut(1).copy_from_slice(max.row(0));
        (pooled, arg)
    }

    pub fn forward(&self, f: &Grid) -> (Grid, StCache) {
        let (avg, _) = ops::pool_time_forward(f, PoolMode::Avg);
        let (max, max_arg) = ops::pool_time_forward(f, PoolMode::Max);
        let (za, pre_avg) = self.mlp.forward(avg.data());
        let (zm, pre_max) = self.mlp.forward(max.data());
        let channel_gate: Vec<f64> = za
            .data()
            .iter()
            .zip(zm.data())
            .map(|(x, y)| ops::sigmoid(x + y))
            .collect();
        let mut gated = f.clone();
        for (c, g) in channel_gate.iter().enumerate() {
            gated.row_mut(c).iter_mut().for_each(|v| *v *= g);
        }
        let (pooled, chan_max_arg) = Self::channel_pools(&gated);
        let time_gate: Vec<f64> = self
            .spatial
            .forward(&pooled)
            .data()
            .iter()
            .map(|&z| ops::sigmoid(z))
            .collect();
        let mut out = gated.clone();
        for c in 0..out.rows() {
            for (v, s) in out.row_mut(c).iter_mut().zip(&time_gate) {
                *v *= s;
            }
        }
        (
            out,
            StCache {
                avg: avg.into_data(),
                max: max.into_data(),
                max_arg,
                pre_avg,
                pre_max,
                channel_gate,
                gated,
                pooled,
                chan_max_arg,
                time_gate,
            },
        )
    }

    pub fn backward(&self, f: &Grid, cache: &StCache, grad_out: &Grid, grads: &mut StAttention) -> Grid {
        let (c, t) = (f.rows(), f.cols());
        // time gate
        let mut g_gated = grad_out.clone();
        let mut dz = Grid::zeros(&[1, t]);
        for i in 0..c {
            let go = grad_out.row(i);
            let gr = cache.gated.row(i);
            let d = dz.row_mut(0);
            for j in 0..t {
                d[j] += go[j] * gr[j];
            }
            for (v, s) in g_gated.row_mut(i).iter_mut().zip(&cache.time_gate) {
                *v *= s;
            }
        }
        for (d, s) in dz.row_mut(0).iter_mut().zip(&cache.time_gate) {
            *d *= s * (1.0 - s);
        }
        let g_pooled = self.spatial.backward(&cache.pooled, &dz, &mut grads.spatial);
        g_gated.add_assign(&ops::pool_channels_backward(g_pooled.row(0), c, PoolMode::Avg, &[]));
        g_gated.add_assign(&ops::pool_channels_backward(
            g_pooled.row(1),
            c,
            PoolMode::Max,
            &cache.chan_max_arg,
        ));

        // channel gate
        let mut gf = g_gated.clone();
        let mut dza = vec![0.0; c];
        for i in 0..c {
            let g = cache.channel_gate[i];
            let da: f64 = g_gated.row(i).iter().zip(f.row(i)).map(|(a, b)| a * b).sum();
            dza[i] = da * g * (1.0 - g);
            gf.row_mut(i).iter_mut().for_each(|v| *v *= g);
        }
        let d_avg = self
            .mlp
            .backward(&cache.avg, &cache.pre_avg, &dza, &mut grads.mlp);
        let d_max = self
            .mlp
            .backward(&cache.max, &cache.pre_max, &dza, &mut grads.mlp);
        for i in 0..c {
            let add = d_avg[i] / t as f64;
            gf.row_mut(i).iter_mut().for_each(|v| *v += add);
            gf.row_mut(i)[cache.max_arg[i]] += d_max[i];
        }
        gf
    }
}

impl Parameterized for StAttention {
    fn params(&self) -> Vec<(String, &Grid)> {
        let mut v = prefixed("mlp", self.mlp.params());
        v.extend(prefixed("spatial", self.spatial.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        let mut v = prefixed("mlp", self.mlp.params_mut());
        v.extend(prefixed("spatial", self.spatial.params_mut()));
        v
    }
}

pub fn temporal_attention(f: &Grid, params: &StAttention) -> Result<Grid> {
    ops::mlp2(&Grid::zeros(&[f.rows()]), &params.mlp.w1, &params.mlp.w2)?;
    if f.cols() == 0 {
        return Err(Error::TooShort {
            what: "time axis",
            actual: 0,
            minimum: 1,
        });
    }
    Ok(Grid::vector(params.channel_gate(f)))
}

pub fn spatial_attention(f: &Grid, params: &StAttention) -> Result<Grid> {
    if f.rows() == 0 {
        return Err(Error::TooShort {
            what: "channel axis",
            actual: 0,
            minimum: 1,
        });
    }
    let t = f.cols();
    Grid::from_vec(&[1, t], params.time_gate(f))
}

pub fn st_attention(f: &Grid, params: &StAttention) -> Result<Grid> {
    temporal_attention(f, params)?;
    Ok(params.forward(f).0)
}

// ---------------------------------------------------------------------------
// fusion

/// Averages the downsampled finer neighbor, the level itself and the
/// upsampled (truncated) coarser neighbor. `level` is 1-based.
pub fn fuse_three_paths(
    pyramid: &PyramidFeatures,
    level: usize,
    attention: Option<&StAttention>,
) -> Result<Grid> {
    let n = pyramid.num_levels();
    if level == 0 || level > n {
        return Err(Error::config(format!("level {level} outside 1..={n}")));
    }
    let attend = |g: &Grid| match attention {
        Some(a) => a.forward(g).0,
        None => g.clone(),
    };
    let i = level - 1;
    let mid = attend(&pyramid.levels[i]);
    let t = mid.cols();
    let mut sum = mid;
    let mut paths = 1.0;
    if i > 0 {
        let down = ops::downsample2_forward(&attend(&pyramid.levels[i - 1])).0;
        sum.add_assign(&fit_cols(&down, t));
        paths += 1.0;
    }
    if i + 1 < n {
        let up = ops::upsample2_forward(&attend(&pyramid.levels[i + 1]));
        sum.add_assign(&fit_cols(&up, t));
        paths += 1.0;
    }
    Ok(sum.scale(1.0 / paths))
}

fn fit_cols(g: &Grid, t: usize) -> Grid {
    if g.cols() >= t {
        g.truncate_cols(t)
    } else {
        g.pad_cols(t)
    }
}

// ---------------------------------------------------------------------------
// prediction branches

/// Two ReLU convolutions followed by an output convolution, all `k = 3`.
#[derive(Clone, Debug)]
pub struct Branch {
    pub trunk: Vec<Conv1d>,
    pub out: Conv1d,
}

pub struct BranchCache {
    inputs: Vec<Grid>,
    pre: Vec<Grid>,
    last: Grid,
}

impl Branch {
    pub fn zeros(channels: usize, out: usize, depth: usize) -> Self {
        Self {
            trunk: (0..depth).map(|_| Conv1d::zeros(channels, channels, 3, 1)).collect(),
            out: Conv1d::zeros(channels, out, 3, 1),
        }
    }

    pub fn init(channels: usize, out: usize, depth: usize, out_bias: f64, rng: &mut impl Rng) -> Self {
        let trunk = (0..depth)
            .map(|_| Conv1d::init(channels, channels, 3, 1, 2f64.sqrt(), rng))
            .collect();
        let mut o = Conv1d::init(channels, out, 3, 1, 0.1, rng);
        o.bias.fill(out_bias);
        Self { trunk, out: o }
    }

    /// Returns the raw output-conv activations.
    pub fn forward(&self, x: &Grid) -> (Grid, BranchCache) {
        let mut inputs = Vec::with_capacity(self.trunk.len() + 1);
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut cur = x.clone();
        for conv in &self.trunk {
            let z = conv.forward(&cur);
            inputs.push(cur);
            cur = z.map(ops::relu);
            pre.push(z);
        }
        let y = self.out.forward(&cur);
        (
            y,
            BranchCache {
                inputs,
                pre,
                last: cur,
            },
        )
    }

    pub fn backward(&self, cache: &BranchCache, grad_out: &Grid, grads: &mut Branch) -> Grid {
        let mut g = self.out.backward(&cache.last, grad_out, &mut grads.out);
        for k in (0..self.trunk.len()).rev() {
            for (gv, z) in g.data_mut().iter_mut().zip(cache.pre[k].data()) {
                if *z <= 0.0 {
                    *gv = 0.0;
                }
            }
            g = self.trunk[k].backward(&cache.inputs[k], &g, &mut grads.trunk[k]);
        }
        g
    }
}

impl Parameterized for Branch {
    fn params(&self) -> Vec<(String, &Grid)> {
        let mut v = prefixed("trunk", self.trunk.params());
        v.extend(prefixed("out", self.out.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        let mut v = prefixed("trunk", self.trunk.params_mut());
        v.extend(prefixed("out", self.out.params_mut()));
        v
    }
}

pub fn class_head(fused: &Grid, branch: &Branch) -> Grid {
    branch.forward(fused).0.map(ops::sigmoid)
}

pub fn loc_head(fused: &Grid, branch: &Branch) -> Grid {
    branch.forward(fused).0.map(ops::relu)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LevelOutput {
    pub class_logits: Grid,
    /// `K×T_n`, strictly inside (0, 1).
    pub class_probs: Grid,
    /// `2×T_n`: distance to start and to end, in level-`n` steps.
    pub offsets: Grid,
}

#[derive(Clone, Debug)]
pub struct HeadOutputs {
    pub levels: Vec<LevelOutput>,
}

#[derive(Clone, Debug)]
pub struct DetectionHead {
    pub attention: StAttention,
    pub attention_enabled: bool,
    pub cls: Branch,
    pub loc: Branch,
}

struct LevelCache {
    attn: Option<StCache>,
    down_arg: Option<Vec<usize>>,
    cls: BranchCache,
    loc: BranchCache,
    loc_pre: Grid,
}

pub struct HeadCache {
    levels: Vec<LevelCache>,
}

pub const TRUNK_DEPTH: usize = 2;
const PRIOR_PROB: f64 = 0.01;

impl DetectionHead {
    pub fn zeros(channels: usize, cfg: &HeadConfig) -> Result<Self> {
        cfg.validate(channels)?;
        Ok(Self {
            attention: StAttention::zeros(channels, cfg),
            attention_enabled: cfg.attention,
            cls: Branch::zeros(channels, cfg.num_classes, TRUNK_DEPTH),
            loc: Branch::zeros(channels, 2, TRUNK_DEPTH),
        })
    }

    pub fn init(channels: usize, cfg: &HeadConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate(channels)?;
        let prior_bias = -((1.0 - PRIOR_PROB) / PRIOR_PROB).ln();
        Ok(Self {
            attention: StAttention::init(channels, cfg, rng),
            attention_enabled: cfg.attention,
            cls: Branch::init(channels, cfg.num_classes, TRUNK_DEPTH, prior_bias, rng),
            loc: Branch::init(channels, 2, TRUNK_DEPTH, 1.0, rng),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.cls.out.c_out()
    }

    pub fn forward(&self, pyramid: &PyramidFeatures) -> (HeadOutputs, HeadCache) {
        let n = pyramid.num_levels();
        let mut attended = Vec::with_capacity(n);
        let mut attn_caches = Vec::with_capacity(n);
        for f in &pyramid.levels {
            if self.attention_enabled {
                let (a, c) = self.attention.forward(f);
                attended.push(a);
                attn_caches.push(Some(c));
            } else {
                attended.push(f.clone());
                attn_caches.push(None);
            }
        }
        let mut outputs = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        for (i, attn) in attn_caches.into_iter().enumerate() {
            let t = attended[i].cols();
            let mut fused = attended[i].clone();
            let mut paths = 1.0;
            let mut down_arg = None;
            if i > 0 {
                let (down, arg) = ops::downsample2_forward(&attended[i - 1]);
                fused.add_assign(&fit_cols(&down, t));
                down_arg = Some(arg);
                paths += 1.0;
            }
            if i + 1 < n {
                let up = ops::upsample2_forward(&attended[i + 1]);
                fused.add_assign(&fit_cols(&up, t));
                paths += 1.0;
            }
            let fused = fused.scale(1.0 / paths);
            let (class_logits, cls) = self.cls.forward(&fused);
            let (loc_pre, loc) = self.loc.forward(&fused);
            outputs.push(LevelOutput {
                class_probs: class_logits.map(ops::sigmoid),
                class_logits,
                offsets: loc_pre.map(ops::relu),
            });
            caches.push(LevelCache {
                attn,
                down_arg,
                cls,
                loc,
                loc_pre,
            });
        }
        (HeadOutputs { levels: outputs }, HeadCache { levels: caches })
    }

    /// Backpropagates gradients on class logits and on (post-ReLU) offsets.
    pub fn backward(
        &self,
        pyramid: &PyramidFeatures,
        cache: &HeadCache,
        grad_logits: &[Grid],
        grad_offsets: &[Grid],
        grads: &mut DetectionHead,
    ) -> Vec<Grid> {
        let n = pyramid.num_levels();
        let mut g_att: Vec<Grid> = pyramid.levels.iter().map(Grid::zeros_like).collect();
        for i in 0..n {
            let lc = &cache.levels[i];
            let mut g_loc = grad_offsets[i].clone();
            for (g, z) in g_loc.data_mut().iter_mut().zip(lc.loc_pre.data()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
            let mut g_fused = self.cls.backward(&lc.cls, &grad_logits[i], &mut grads.cls);
            g_fused.add_assign(&self.loc.backward(&lc.loc, &g_loc, &mut grads.loc));
            let paths = 1 + usize::from(i > 0) + usize::from(i + 1 < n);
            let paths = paths as f64;
            let g = g_fused.scale(1.0 / paths);
            g_att[i].add_assign(&g);
            if let Some(arg) = &lc.down_arg {
                let t_prev = g_att[i - 1].cols();
                g_att[i - 1].add_assign(&ops::downsample2_backward(&g, t_prev, arg));
            }
            if i + 1 < n {
                let t_next = g_att[i + 1].cols();
                g_att[i + 1].add_assign(&ops::upsample2_backward(&g, t_next));
            }
        }
        g_att
            .into_iter()
            .enumerate()
            .map(|(i, g)| match &cache.levels[i].attn {
                Some(c) => self
                    .attention
                    .backward(&pyramid.levels[i], c, &g, &mut grads.attention),
                None => g,
            })
            .collect()
    }
}

impl Parameterized for DetectionHead {
    fn params(&self) -> Vec<(String, &Grid)> {
        let mut v = prefixed("attention", self.attention.params());
        v.extend(prefixed("cls", self.cls.params()));
        v.extend(prefixed("loc", self.loc.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        let mut v = prefixed("attention", self.attention.params_mut());
        v.extend(prefixed("cls", self.cls.params_mut()));
        v.extend(prefixed("loc", self.loc.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, probe_loss, DEFAULT_STEP};
    use crate::nn::layers::normal_grid;
    use crate::nn::params::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cfg(k: usize) -> HeadConfig {
        HeadConfig {
            num_classes: k,
            ..Default::default()
        }
    }

    #[test]
    fn zero_attention_quarters_input() {
        let att = StAttention::zeros(8, &cfg(2));
        let f = normal_grid(&[8, 11], 2.0, &mut rng(1));
        assert_eq!(temporal_attention(&f, &att).unwrap(), Grid::filled(&[8], 0.5));
        assert_eq!(spatial_attention(&f, &att).unwrap(), Grid::filled(&[1, 11], 0.5));
        assert_eq!(st_attention(&f, &att).unwrap(), f.scale(0.25));
    }

    #[test]
    fn constant_input_uses_doubled_mlp() {
        let att = StAttention::init(8, &cfg(2), &mut rng(2));
        let col: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let f = Grid::from_rows(&col.iter().map(|&v| vec![v; 5]).collect::<Vec<_>>());
        let a = temporal_attention(&f, &att).unwrap();
        let m = ops::mlp2(&Grid::vector(col), &att.mlp.w1, &att.mlp.w2).unwrap();
        for (x, z) in a.data().iter().zip(m.data()) {
            assert!((x - ops::sigmoid(2.0 * z)).abs() < 1e-15);
        }
    }

    #[test]
    fn gates_inside_unit_interval_and_shrink() {
        for seed in 0..100 {
            let mut r = rng(seed);
            let att = StAttention::init(8, &cfg(2), &mut r);
            let f = normal_grid(&[8, 9], 3.0, &mut r);
            assert!(att.channel_gate(&f).iter().all(|&g| g > 0.0 && g < 1.0));
            assert!(att.time_gate(&f).iter().all(|&g| g > 0.0 && g < 1.0));
            let out = st_attention(&f, &att).unwrap();
            for (o, i) in out.data().iter().zip(f.data()) {
                assert!(o.abs() <= i.abs());
            }
        }
    }

    #[test]
    fn spatial_peak_at_energetic_step() {
        let mut att = StAttention::zeros(4, &cfg(2));
        att.spatial.kernel.fill(0.0);
        for (i, w) in [0.2, 0.5, 1.0, 2.0, 1.0, 0.5, 0.2].iter().enumerate() {
            att.spatial.kernel.data_mut()[i] = *w;
            att.spatial.kernel.data_mut()[7 + i] = *w;
        }
        let mut f = Grid::zeros(&[4, 15]);
        for c in 0..4 {
            f.set(c, 6, 3.0);
        }
        let s = spatial_attention(&f, &att).unwrap();
        let best = s
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(best, 6);
    }

    #[test]
    fn symmetric_kernel_time_reversal() {
        let mut r = rng(3);
        let mut att = StAttention::init(4, &cfg(2), &mut r);
        let k = att.spatial.kernel.data().to_vec();
        for ch in 0..2 {
            for j in 0..7 {
                att.spatial.kernel.data_mut()[ch * 7 + j] = k[ch * 7 + j.min(6 - j)];
            }
        }
        let f = normal_grid(&[4, 13], 1.0, &mut r);
        let a = spatial_attention(&f.reverse_cols(), &att).unwrap();
        let b = spatial_attention(&f, &att).unwrap().reverse_cols();
        assert!(a.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn fusion_paths() {
        let single = PyramidFeatures {
            levels: vec![normal_grid(&[3, 6], 1.0, &mut rng(4))],
        };
        assert_eq!(fuse_three_paths(&single, 1, None).unwrap(), single.levels[0]);

        let constant = PyramidFeatures {
            levels: vec![
                Grid::filled(&[3, 16], 1.5),
                Grid::filled(&[3, 8], 1.5),
                Grid::filled(&[3, 4], 1.5),
            ],
        };
        for n in 1..=3 {
            let f = fuse_three_paths(&constant, n, None).unwrap();
            assert_eq!(f, constant.levels[n - 1]);
        }

        let odd = PyramidFeatures {
            levels: vec![
                normal_grid(&[3, 18], 1.0, &mut rng(5)),
                normal_grid(&[3, 9], 1.0, &mut rng(6)),
                normal_grid(&[3, 5], 1.0, &mut rng(7)),
            ],
        };
        let fused = fuse_three_paths(&odd, 2, None).unwrap();
        assert_eq!(fused.cols(), 9);
        let up = ops::upsample2(&odd.levels[2]).unwrap();
        assert_eq!(up.cols(), 10);
        let down = ops::downsample2(&odd.levels[0]).unwrap();
        let expect = (down.at(1, 8) + odd.levels[1].at(1, 8) + up.at(1, 8)) / 3.0;
        assert!((fused.at(1, 8) - expect).abs() < 1e-15);
        assert!(fuse_three_paths(&odd, 0, None).is_err());
        assert!(fuse_three_paths(&odd, 4, None).is_err());
    }

    #[test]
    fn zero_final_layers() {
        let head = DetectionHead::init(8, &cfg(3), &mut rng(8)).unwrap();
        let mut h = head.clone();
        h.cls.out = Conv1d::zeros(8, 3, 3, 1);
        h.loc.out = Conv1d::zeros(8, 2, 3, 1);
        let x = normal_grid(&[8, 10], 1.0, &mut rng(9));
        assert!(class_head(&x, &h.cls).data().iter().all(|&p| p == 0.5));
        assert!(loc_head(&x, &h.loc).data().iter().all(|&d| d == 0.0));
        h.cls.out.bias.fill(-1.3);
        let p = class_head(&x, &h.cls);
        assert!(p.data().iter().all(|&v| v == ops::sigmoid(-1.3)));
    }

    #[test]
    fn outputs_satisfy_contracts_and_attention_toggle() {
        let mut r = rng(10);
        let head = DetectionHead::init(8, &cfg(3), &mut r).unwrap();
        let pyr = PyramidFeatures {
            levels: vec![
                normal_grid(&[8, 16], 1.0, &mut r),
                normal_grid(&[8, 8], 1.0, &mut r),
                normal_grid(&[8, 4], 1.0, &mut r),
            ],
        };
        let (out, _) = head.forward(&pyr);
        for (lvl, f) in out.levels.iter().zip(&pyr.levels) {
            assert_eq!(lvl.class_probs.cols(), f.cols());
            assert!(lvl.class_probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
            assert!(lvl.offsets.data().iter().all(|&d| d >= 0.0));
        }
        let mut plain = head.clone();
        plain.attention_enabled = false;
        let (out, _) = plain.forward(&pyr);
        for n in 1..=3 {
            let fused = fuse_three_paths(&pyr, n, None).unwrap();
            let p = class_head(&fused, &head.cls);
            assert!(p.max_abs_diff(&out.levels[n - 1].class_probs) < 1e-15);
        }
        let attended = fuse_three_paths(&pyr, 2, Some(&head.attention)).unwrap();
        let (out, _) = head.forward(&pyr);
        let p = class_head(&attended, &head.cls);
        assert!(p.max_abs_diff(&out.levels[1].class_probs) < 1e-15);
    }

    #[test]
    fn st_attention_gradients() {
        let mut r = rng(11);
        let att = StAttention::init(8, &cfg(2), &mut r);
        let f = normal_grid(&[8, 10], 1.0, &mut r);
        let probe = normal_grid(&[8, 10], 1.0, &mut r);
        let report = grad_check(&att, &[f], DEFAULT_STEP, |p, xs| {
            let (y, cache) = p.forward(&xs[0]);
            let (loss, gy) = probe_loss(&y, &probe);
            let mut grads = zeros_like(p);
            let gx = p.backward(&xs[0], &cache, &gy, &mut grads);
            (loss, grads, vec![gx])
        });
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn full_head_gradients() {
        for attention in [true, false] {
            let mut r = rng(12);
            let mut head = DetectionHead::init(4, &cfg(2), &mut r).unwrap();
            head.attention_enabled = attention;
            let pyr = vec![
                normal_grid(&[4, 8], 1.0, &mut r),
                normal_grid(&[4, 4], 1.0, &mut r),
                normal_grid(&[4, 2], 1.0, &mut r),
            ];
            let probes_c: Vec<Grid> = [8, 4, 2].iter().map(|&t| normal_grid(&[2, t], 1.0, &mut r)).collect();
            let probes_o: Vec<Grid> = [8, 4, 2].iter().map(|&t| normal_grid(&[2, t], 1.0, &mut r)).collect();
            let report = grad_check(&head, &pyr, DEFAULT_STEP, |p, xs| {
                let pyramid = PyramidFeatures { levels: xs.to_vec() };
                let (out, cache) = p.forward(&pyramid);
                let mut loss = 0.0;
                let (mut gc, mut go) = (Vec::new(), Vec::new());
                for ((lvl, pc), po) in out.levels.iter().zip(&probes_c).zip(&probes_o) {
                    let (a, ga) = probe_loss(&lvl.class_probs, pc);
                    let (b, gb) = probe_loss(&lvl.offsets, po);
                    loss += a + b;
                    let mut gl = ga;
                    for (g, q) in gl.data_mut().iter_mut().zip(lvl.class_probs.data()) {
                        *g *= q * (1.0 - q);
                    }
                    gc.push(gl);
                    go.push(gb);
                }
                let mut grads = zeros_like(p);
                let gx = p.backward(&pyramid, &cache, &gc, &go, &mut grads);
                (loss, grads, gx)
            });
            assert!(report.passed(1e-4), "attention={attention}: {report:?}");
        }
    }
}
