//! Target assignment, detection losses and the Adam training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ActionInstance, Timing, Video};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::head::HeadOutputs;
use crate::model::{Model, ModelConfig};
use crate::nn::ops::{sigmoid, softplus};
use crate::nn::params::{zeros_like, Parameterized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub focal_gamma: f64,
    /// Weight of positive targets in the focal loss; negatives get `1 - alpha`.
    pub focal_alpha: f64,
    pub regression_weight: f64,
    /// Upper duration bounds (base steps, right-closed) for levels `1..N-1`;
    /// level `N` takes everything longer. `None` uses `8 · 2^(n-1)`.
    pub range_edges: Option<Vec<f64>>,
    pub warmup_steps: usize,
    /// Length of the clip sampled around each duplicated annotation.
    pub crop_length: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 8,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            regression_weight: 1.0,
            range_edges: None,
            warmup_steps: 10,
            crop_length: 128,
            seed: 0,
        }
    }
}

pub const RANGE_BASE: f64 = 8.0;

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || self.focal_gamma < 0.0 {
            return Err(Error::config("focal_alpha must lie in [0, 1] and focal_gamma be >= 0"));
        }
        if self.crop_length < model.min_length() {
            return Err(Error::config(format!(
                "crop_length {} is below the minimum input length {}",
                self.crop_length,
                model.min_length()
            )));
        }
        self.edges(model.num_levels()).map(|_| ())
    }

    /// Range edges for an `levels`-level pyramid.
    pub fn edges(&self, levels: usize) -> Result<Vec<f64>> {
        let edges = match &self.range_edges {
            Some(e) => e.clone(),
            None => default_edges(levels),
        };
        validate_edges(&edges, levels)?;
        Ok(edges)
    }
}

pub fn default_edges(levels: usize) -> Vec<f64> {
    (0..levels.saturating_sub(1))
        .map(|i| RANGE_BASE * (1u64 << i) as f64)
        .collect()
}

fn validate_edges(edges: &[f64], levels: usize) -> Result<()> {
    if edges.len() + 1 != levels {
        return Err(Error::config(format!(
            "{} range edges given for {levels} levels, need {}",
            edges.len(),
            levels.saturating_sub(1)
        )));
    }
    let increasing = edges.windows(2).all(|w| w[0] < w[1]);
    if !increasing || edges.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::config("range edges must be positive, finite and strictly increasing"));
    }
    Ok(())
}

/// 0-based level index whose right-closed range contains `duration`.
pub fn level_for_duration(duration: f64, edges: &[f64]) -> usize {
    edges
        .iter()
        .position(|&e| duration <= e)
        .unwrap_or(edges.len())
}

// ---------------------------------------------------------------------------
// targets

#[derive(Clone, Debug, PartialEq)]
pub struct LevelTargets {
    /// Class of the instance owning each timestep, if positive.
    pub labels: Vec<Option<usize>>,
    /// `2×T_n` offsets to start and end in level steps; zero at negatives.
    pub offsets: Grid,
}

impl LevelTargets {
    pub fn class_grid(&self, num_classes: usize) -> Grid {
        let mut g = Grid::zeros(&[num_classes, self.labels.len()]);
        for (t, l) in self.labels.iter().enumerate() {
            if let Some(c) = *l {
                g.set(c, t, 1.0);
            }
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub levels: Vec<LevelTargets>,
}

impl Targets {
    pub fn num_positives(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.labels.iter().filter(|x| x.is_some()).count())
            .sum()
    }
}

/// Assigns each instance to one pyramid level by duration; within that level
/// the timesteps `t` whose anchor `t·2^n` lies inside the instance become
/// positive. Where instances compete for a timestep the shorter one wins.
pub fn assign_targets(
    instances: &[ActionInstance],
    timing: &Timing,
    level_lengths: &[usize],
    edges: &[f64],
    num_classes: usize,
) -> Result<Targets> {
    validate_edges(edges, level_lengths.len())?;
    let mut levels: Vec<LevelTargets> = level_lengths
        .iter()
        .map(|&t| LevelTargets {
            labels: vec![None; t],
            offsets: Grid::zeros(&[2, t]),
        })
        .collect();
    let mut owner_len: Vec<Vec<f64>> = level_lengths.iter().map(|&t| vec![f64::INFINITY; t]).collect();
    for inst in instances {
        if !(inst.end_s > inst.start_s) {
            return Err(Error::DegenerateInterval {
                start: inst.start_s,
                end: inst.end_s,
            });
        }
        if inst.label >= num_classes {
            return Err(Error::UnknownLabel {
                label: inst.label,
                num_classes,
            });
        }
        let start = timing.to_steps(inst.start_s);
        let end = timing.to_steps(inst.end_s);
        let dur = end - start;
        let li = level_for_duration(dur, edges);
        let stride = (1u64 << (li + 1)) as f64;
        let lt = &mut levels[li];
        let t_len = level_lengths[li];
        let first = (start / stride).ceil().max(0.0) as usize;
        let mut t = first;
        while t < t_len && (t as f64) * stride <= end {
            let anchor = t as f64 * stride;
            if anchor >= start && dur < owner_len[li][t] {
                owner_len[li][t] = dur;
                lt.labels[t] = Some(inst.label);
                lt.offsets.set(0, t, (anchor - start) / stride);
                lt.offsets.set(1, t, (end - anchor) / stride);
            }
            t += 1;
        }
    }
    Ok(Targets { levels })
}

// ---------------------------------------------------------------------------
// losses

/// Per-element focal loss on a logit, and its derivative.
fn focal_term(z: f64, positive: bool, gamma: f64, alpha: f64) -> (f64, f64) {
    let (weight, sign, nll, q) = if positive {
        (alpha, 1.0, softplus(-z), sigmoid(-z))
    } else {
        (1.0 - alpha, -1.0, softplus(z), sigmoid(z))
    };
    if q == 0.0 {
        return (0.0, 0.0);
    }
    let p_t = 1.0 - q;
    let qg = q.powf(gamma);
    let loss = weight * qg * nll;
    let grad = sign * weight * (-gamma * qg * p_t * nll - q * qg);
    (loss, grad)
}

/// Summed focal loss over masked columns of `logits` (`K×T`), with its
/// gradient. Not normalized.
pub fn focal_loss_logits(
    logits: &Grid,
    targets: &Grid,
    mask: &[bool],
    gamma: f64,
    alpha: f64,
) -> (f64, Grid) {
    let mut grad = logits.zeros_like();
    let mut total = 0.0;
    let t_len = logits.cols();
    for k in 0..logits.rows() {
        for t in 0..t_len {
            if !mask[t] {
                continue;
            }
            let (l, g) = focal_term(logits.at(k, t), targets.at(k, t) > 0.5, gamma, alpha);
            total += l;
            grad.set(k, t, g);
        }
    }
    (total, grad)
}

/// Focal binary cross-entropy on probabilities, averaged over the positive
/// targets inside `mask` (or over 1 when there are none), γ = 2, α = 0.25.
pub fn focal_bce(probs: &Grid, targets: &Grid, mask: &[bool]) -> Result<f64> {
    focal_bce_with(probs, targets, mask, 2.0, 0.25)
}

pub fn focal_bce_with(probs: &Grid, targets: &Grid, mask: &[bool], gamma: f64, alpha: f64) -> Result<f64> {
    check_same(probs, targets, "focal targets")?;
    if mask.len() != probs.cols() {
        return Err(Error::Shape {
            axis: "mask length",
            expected: probs.cols(),
            actual: mask.len(),
        });
    }
    let mut total = 0.0;
    let mut positives = 0usize;
    for k in 0..probs.rows() {
        for t in (0..probs.cols()).filter(|&t| mask[t]) {
            let y = targets.at(k, t) > 0.5;
            let p = probs.at(k, t);
            let (p_t, w) = if y { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
            positives += usize::from(y);
            if p_t < 1.0 {
                total += w * (1.0 - p_t).powf(gamma) * -p_t.ln();
            }
        }
    }
    Ok(total / positives.max(1) as f64)
}

fn check_same(a: &Grid, b: &Grid, axis: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            axis,
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Distance-IoU loss between two intervals given as (start, end) offsets
/// around a common anchor, with the gradient on the predicted offsets.
pub fn diou_term(pred: (f64, f64), target: (f64, f64)) -> (f64, (f64, f64)) {
    let (ps, pe) = pred;
    let (ts, te) = target;
    let inter = ps.min(ts) + pe.min(te);
    let di = (f64::from(u8::from(ps < ts)), f64::from(u8::from(pe < te)));
    let union = ps + pe + ts + te - inter;
    let iou = inter / union;
    let d_iou = |dinter: f64| (dinter * union - inter * (1.0 - dinter)) / (union * union);
    let enc = ps.max(ts) + pe.max(te);
    let de = (f64::from(u8::from(ps >= ts)), f64::from(u8::from(pe >= te)));
    let dc = ((pe - ps) - (te - ts)) / 2.0;
    let e2 = enc * enc;
    let penalty = dc * dc / e2;
    let d_pen_s = -dc / e2 - 2.0 * dc * dc * de.0 / (e2 * enc);
    let d_pen_e = dc / e2 - 2.0 * dc * dc * de.1 / (e2 * enc);
    let loss = 1.0 - iou + penalty;
    (loss, (-d_iou(di.0) + d_pen_s, -d_iou(di.1) + d_pen_e))
}

/// Mean DIoU loss over the columns of two `2×P` offset grids (one column per
/// positive). Zero when there are no columns.
pub fn diou_1d(pred_offsets: &Grid, target_offsets: &Grid) -> Result<f64> {
    check_same(pred_offsets, target_offsets, "offset targets")?;
    if pred_offsets.rows() != 2 {
        return Err(Error::Shape {
            axis: "offset rows",
            expected: 2,
            actual: pred_offsets.rows(),
        });
    }
    let p = pred_offsets.cols();
    if p == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in 0..p {
        let target = (target_offsets.at(0, t), target_offsets.at(1, t));
        if !(target.0 + target.1 > 0.0) || pred_offsets.at(0, t) < 0.0 || pred_offsets.at(1, t) < 0.0 {
            return Err(Error::DegenerateInterval {
                start: -target.0,
                end: target.1,
            });
        }
        total += diou_term((pred_offsets.at(0, t), pred_offsets.at(1, t)), target).0;
    }
    Ok(total / p as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub classification: f64,
    pub regression: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.classification + self.regression
    }
}

pub struct LossGrads {
    pub logits: Vec<Grid>,
    pub offsets: Vec<Grid>,
}

/// Focal + weighted DIoU loss for one sequence, both divided by `norm`.
pub fn detection_loss(out: &HeadOutputs, targets: &Targets, norm: f64, cfg: &TrainConfig) -> (LossParts, LossGrads) {
    let mut parts = LossParts::default();
    let mut g_logits = Vec::with_capacity(out.levels.len());
    let mut g_offsets = Vec::with_capacity(out.levels.len());
    for (lo, lt) in out.levels.iter().zip(&targets.levels) {
        let k = lo.class_logits.rows();
        let mask = vec![true; lt.labels.len()];
        let (l, g) = focal_loss_logits(&lo.class_logits, &lt.class_grid(k), &mask, cfg.focal_gamma, cfg.focal_alpha);
        parts.classification += l / norm;
        g_logits.push(g.scale(1.0 / norm));

        let mut go = lo.offsets.zeros_like();
        for (t, label) in lt.labels.iter().enumerate() {
            if label.is_none() {
                continue;
            }
            let pred = (lo.offsets.at(0, t), lo.offsets.at(1, t));
            let target = (lt.offsets.at(0, t), lt.offsets.at(1, t));
            let (l, (gs, ge)) = diou_term(pred, target);
            let w = cfg.regression_weight / norm;
            parts.regression += w * l;
            go.set(0, t, w * gs);
            go.set(1, t, w * ge);
        }
        g_offsets.push(go);
    }
    (
        parts,
        LossGrads {
            logits: g_logits,
            offsets: g_offsets,
        },
    )
}

// ---------------------------------------------------------------------------
// optimizer

#[derive(Clone, Debug)]
pub struct Adam<P> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: P,
    v: P,
    step: u64,
}

impl<P: Parameterized + Clone> Adam<P> {
    pub fn new(params: &P) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros_like(params),
            v: zeros_like(params),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(self.step as f64);
        let c2 = 1.0 - b2.powf(self.step as f64);
        let gs = grads.params();
        let ms = self.m.params_mut();
        let vs = self.v.params_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params.params_mut().into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup to `base` over `warmup` steps, constant afterwards.
pub fn warmup_lr(base: f64, step: u64, warmup: usize) -> f64 {
    if warmup == 0 {
        base
    } else {
        base * ((step + 1) as f64 / warmup as f64).min(1.0)
    }
}

// ---------------------------------------------------------------------------
// training loop

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss.
    pub loss: f64,
    pub classification: f64,
    pub regression: f64,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochStats>,
}

#[derive(Clone, Copy, Debug)]
enum Sample {
    Full(usize),
    /// A clip around instance `1` of video `0`.
    Crop(usize, usize),
}

struct Prepared {
    features: Grid,
    targets: Targets,
}

fn prepare(video: &Video, sample: Sample, model: &ModelConfig, cfg: &TrainConfig, edges: &[f64], rng: &mut ChaCha8Rng) -> Result<Prepared> {
    let ann = &video.annotation;
    let timing = ann.timing();
    let originals = ann.instances.iter().filter(|i| !i.duplicate);
    let t_len = video.features.cols();
    let (features, instances) = match sample {
        Sample::Crop(_, idx) if t_len > cfg.crop_length => {
            let inst = &ann.instances[idx];
            let len = cfg.crop_length;
            let s = timing.to_steps(inst.start_s);
            let e = timing.to_steps(inst.end_s);
            let lo = (e.ceil() as i64 - len as i64).max(0);
            let hi = (s.floor() as i64).min((t_len - len) as i64);
            let off = if lo <= hi {
                rng.random_range(lo..=hi)
            } else {
                (((s + e) / 2.0) as i64 - len as i64 / 2).clamp(0, (t_len - len) as i64)
            } as usize;
            let (w0, w1) = (timing.to_seconds(off as f64), timing.to_seconds((off + len) as f64));
            let clipped = originals
                .filter_map(|i| {
                    let a = i.start_s.max(w0) - w0;
                    let b = i.end_s.min(w1) - w0;
                    (b > a).then(|| ActionInstance::new(a, b, i.label))
                })
                .collect::<Vec<_>>();
            (video.features.slice_cols(off, off + len), clipped)
        }
        _ => (video.features.clone(), originals.cloned().collect()),
    };
    let lengths = crate::encoder::level_lengths(features.cols(), model.num_levels());
    let targets = assign_targets(&instances, &timing, &lengths, edges, model.num_classes())?;
    Ok(Prepared { features, targets })
}

fn samples_for(videos: &[Video]) -> Vec<Sample> {
    let mut out = Vec::new();
    for (v, video) in videos.iter().enumerate() {
        out.push(Sample::Full(v));
        for (i, inst) in video.annotation.instances.iter().enumerate() {
            if inst.duplicate {
                out.push(Sample::Crop(v, i));
            }
        }
    }
    out
}

pub fn fit(videos: &[Video], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::init(model_cfg, cfg.seed)?;
    fit_from(model, videos, cfg)
}

/// Trains `model` in place of a fresh initialization.
pub fn fit_from(mut model: Model, videos: &[Video], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model_cfg = model.config.clone();
    cfg.validate(&model_cfg)?;
    let edges = cfg.edges(model_cfg.num_levels())?;
    for v in videos {
        model.encoder.check_input(&v.features)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let mut opt = Adam::new(&model);
    let mut grads = zeros_like(&model);
    let mut order = samples_for(videos);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut stats = EpochStats {
            epoch,
            loss: 0.0,
            classification: 0.0,
            regression: 0.0,
            samples: order.len(),
        };
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let prepared = batch
                .iter()
                .map(|&s| {
                    let v = match s {
                        Sample::Full(v) | Sample::Crop(v, _) => v,
                    };
                    prepare(&videos[v], s, &model_cfg, cfg, &edges, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let norm = prepared.iter().map(|p| p.targets.num_positives()).sum::<usize>().max(1) as f64;
            grads.zero_grads();
            let mut parts = LossParts::default();
            for p in &prepared {
                let (out, cache) = model.forward_cached(&p.features)?;
                let (l, g) = detection_loss(&out, &p.targets, norm, cfg);
                parts.classification += l.classification;
                parts.regression += l.regression;
                model.backward(&p.features, &cache, &g.logits, &g.offsets, &mut grads);
            }
            let grads_finite = grads.params().iter().all(|(_, g)| g.is_finite());
            if !parts.total().is_finite() || !grads_finite {
                return Err(Error::Diverged {
                    epoch,
                    loss: parts.total(),
                });
            }
            let lr = warmup_lr(cfg.learning_rate, opt.steps(), cfg.warmup_steps);
            opt.step(&mut model, &grads, lr);
            stats.classification += parts.classification;
            stats.regression += parts.regression;
            batches += 1;
        }
        let b = batches.max(1) as f64;
        stats.classification /= b;
        stats.regression /= b;
        stats.loss = stats.classification + stats.regression;
        log::info!(
            "epoch {epoch}: loss {:.5} (cls {:.5}, reg {:.5})",
            stats.loss,
            stats.classification,
            stats.regression
        );
        trace.push(stats);
    }
    Ok(TrainOutcome { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::encoder::DynEConfig;
    use crate::head::HeadConfig;
    use crate::nn::gradcheck::{grad_check, DEFAULT_STEP};
    use crate::nn::layers::normal_grid;
    use proptest::prelude::*;

    fn unit_timing() -> Timing {
        Timing::new(1.0, 1)
    }

    #[test]
    fn range_lookup() {
        let e = default_edges(5);
        assert_eq!(e, vec![8.0, 16.0, 32.0, 64.0]);
        assert_eq!(level_for_duration(8.0, &e), 0);
        assert_eq!(level_for_duration(8.5, &e), 1);
        assert_eq!(level_for_duration(0.1, &e), 0);
        assert_eq!(level_for_duration(64.0, &e), 3);
        assert_eq!(level_for_duration(1e9, &e), 4);
    }

    #[test]
    fn instance_eight_to_sixteen_goes_to_level_one() {
        let inst = [ActionInstance::new(8.0, 16.0, 0)];
        let lengths = crate::encoder::level_lengths(64, 5);
        let t = assign_targets(&inst, &unit_timing(), &lengths, &default_edges(5), 1).unwrap();
        let pos: Vec<usize> = t.levels[0].labels.iter().enumerate().filter(|(_, l)| l.is_some()).map(|(i, _)| i).collect();
        assert_eq!(pos, vec![4, 5, 6, 7, 8]);
        assert_eq!(t.levels[0].offsets.at(0, 4), 0.0);
        assert_eq!(t.levels[0].offsets.at(1, 8), 0.0);
        assert!(t.levels[1..].iter().all(|l| l.labels.iter().all(Option::is_none)));
    }

    #[test]
    fn whole_clip_at_coarsest_level() {
        // 256 steps, 5 levels: level 5 has 8 steps of stride 32; anchors 0..224.
        let inst = [ActionInstance::new(0.0, 256.0, 1)];
        let lengths = crate::encoder::level_lengths(256, 5);
        let t = assign_targets(&inst, &unit_timing(), &lengths, &default_edges(5), 2).unwrap();
        assert!(t.levels[4].labels.iter().all(|l| *l == Some(1)));
        assert_eq!(t.num_positives(), 8);
    }

    #[test]
    fn shorter_instance_wins_conflicts() {
        let inst = [ActionInstance::new(0.0, 7.0, 0), ActionInstance::new(3.0, 6.0, 1)];
        let lengths = crate::encoder::level_lengths(16, 2);
        let t = assign_targets(&inst, &unit_timing(), &lengths, &default_edges(2), 2).unwrap();
        assert_eq!(t.levels[0].labels[..4], [Some(0), Some(0), Some(1), Some(1)]);
    }

    #[test]
    fn assignment_rejects_bad_instances() {
        let lengths = [8, 4];
        let e = default_edges(2);
        let bad = [ActionInstance::new(2.0, 2.0, 0)];
        assert!(assign_targets(&bad, &unit_timing(), &lengths, &e, 1).is_err());
        let bad = [ActionInstance::new(1.0, 2.0, 3)];
        assert!(assign_targets(&bad, &unit_timing(), &lengths, &e, 1).is_err());
        assert!(assign_targets(&[], &unit_timing(), &lengths, &[8.0, 9.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn offsets_reconstruct_boundaries(start in 0.0f64..200.0, dur in 0.5f64..150.0, fps in 1.0f64..30.0) {
            let timing = Timing::new(fps, 2);
            let inst = [ActionInstance::new(timing.to_seconds(start), timing.to_seconds(start + dur), 0)];
            let lengths = crate::encoder::level_lengths(400, 5);
            let edges = default_edges(5);
            let t = assign_targets(&inst, &timing, &lengths, &edges, 1).unwrap();
            let li = level_for_duration(timing.to_steps(inst[0].end_s) - timing.to_steps(inst[0].start_s), &edges);
            for (n, level) in t.levels.iter().enumerate() {
                let stride = (1u64 << (n + 1)) as f64;
                for (i, l) in level.labels.iter().enumerate() {
                    if l.is_some() {
                        prop_assert_eq!(n, li);
                        let s = (i as f64 - level.offsets.at(0, i)) * stride;
                        let e = (i as f64 + level.offsets.at(1, i)) * stride;
                        let (ts, te) = (timing.to_steps(inst[0].start_s), timing.to_steps(inst[0].end_s));
                        prop_assert!((s - ts).abs() < 1e-9 * (1.0 + ts.abs()));
                        prop_assert!((e - te).abs() < 1e-9 * (1.0 + te.abs()));
                    }
                }
            }
            if dur >= 2.0 {
                prop_assert!(t.num_positives() >= 1);
            }
        }

        #[test]
        fn every_duration_has_one_level(d in 0.0f64..1e6) {
            let e = default_edges(5);
            let li = level_for_duration(d, &e);
            let lo = if li == 0 { 0.0 } else { e[li - 1] };
            let hi = e.get(li).copied().unwrap_or(f64::INFINITY);
            prop_assert!(d > lo || (li == 0 && d >= 0.0));
            prop_assert!(d <= hi);
        }
    }

    #[test]
    fn focal_zero_on_exact_targets() {
        let y = Grid::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(focal_bce(&y, &y, &[true; 3]).unwrap(), 0.0);
        let p = Grid::from_rows(&[vec![0.9, 0.2, 0.6], vec![0.1, 0.3, 0.7]]);
        assert!(focal_bce(&p, &y, &[true; 3]).unwrap() > 0.0);
    }

    #[test]
    fn focal_prob_and_logit_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = normal_grid(&[3, 6], 2.0, &mut rng);
        let y = Grid::from_rows(&[vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![0.0; 6], vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]]);
        let mask = [true, true, false, true, true, true];
        let (sum, _) = focal_loss_logits(&z, &y, &mask, 2.0, 0.25);
        let via_probs = focal_bce(&z.map(sigmoid), &y, &mask).unwrap();
        assert!((sum / 3.0 - via_probs).abs() < 1e-12);
    }

    #[test]
    fn focal_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = normal_grid(&[2, 5], 2.0, &mut rng);
        let y = Grid::from_rows(&[vec![1.0, 0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 0.0, 0.0]]);
        let mask = [true; 5];
        let r = grad_check(&Vec::<crate::nn::Conv1d>::new(), &[z], DEFAULT_STEP, |_, x| {
            let (l, g) = focal_loss_logits(&x[0], &y, &mask, 2.0, 0.25);
            (l, Vec::new(), vec![g])
        });
        assert!(r.passed(1e-4), "{r:?}");
    }

    #[test]
    fn diou_values() {
        let t = Grid::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.5]]);
        assert_eq!(diou_1d(&t, &t).unwrap(), 0.0);
        // pred [-1,1] vs target [-2,2]: IoU 1/2, centers equal.
        let (l, _) = diou_term((1.0, 1.0), (2.0, 2.0));
        assert!((l - 0.5).abs() < 1e-15);
        // pred [0,1] vs target [-1,0]: disjoint touching, IoU 0, dc = 1, enc = 2.
        let (l, _) = diou_term((0.0, 1.0), (1.0, 0.0));
        assert!((l - 1.25).abs() < 1e-15);
        assert_eq!(diou_1d(&Grid::zeros(&[2, 0]), &Grid::zeros(&[2, 0])).unwrap(), 0.0);
    }

    #[test]
    fn diou_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = normal_grid(&[2, 6], 1.0, &mut rng).map(|v| v.abs() + 0.1);
        let tg = normal_grid(&[2, 6], 1.0, &mut rng).map(|v| v.abs() + 0.1);
        let r = grad_check(&Vec::<crate::nn::Conv1d>::new(), &[p], DEFAULT_STEP, |_, x| {
            let mut g = x[0].zeros_like();
            let mut total = 0.0;
            for t in 0..6 {
                let (l, (gs, ge)) = diou_term((x[0].at(0, t), x[0].at(1, t)), (tg.at(0, t), tg.at(1, t)));
                total += l;
                g.set(0, t, gs);
                g.set(1, t, ge);
            }
            (total, Vec::new(), vec![g])
        });
        assert!(r.passed(1e-4), "{r:?}");
    }

    fn tiny_model_cfg() -> ModelConfig {
        ModelConfig {
            input_channels: 4,
            encoder: DynEConfig {
                channels: 4,
                num_levels: 2,
                ..Default::default()
            },
            head: HeadConfig {
                num_classes: 2,
                ..Default::default()
            },
        }
    }

    #[test]
    fn full_model_gradient() {
        let mcfg = tiny_model_cfg();
        let model = Model::init(&mcfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = normal_grid(&[4, 16], 1.0, &mut rng);
        let inst = [ActionInstance::new(1.0, 4.0, 0), ActionInstance::new(9.0, 15.0, 1)];
        let lengths = crate::encoder::level_lengths(16, 2);
        let targets = assign_targets(&inst, &unit_timing(), &lengths, &[4.0], 2).unwrap();
        assert!(targets.levels.iter().all(|l| l.labels.iter().any(Option::is_some)));
        let cfg = TrainConfig::default();
        let norm = targets.num_positives() as f64;
        let r = grad_check(&model, &[x], DEFAULT_STEP, |m, xs| {
            let (out, cache) = m.forward_cached(&xs[0]).unwrap();
            let (parts, g) = detection_loss(&out, &targets, norm, &cfg);
            let mut grads = zeros_like(m);
            let gx = m.backward(&xs[0], &cache, &g.logits, &g.offsets, &mut grads);
            (parts.total(), grads, vec![gx])
        });
        assert!(r.passed(1e-4), "{r:?}");
        assert!(r.checked > 100);
    }

    #[test]
    fn adam_step_with_zero_lr_is_identity() {
        let model = Model::init(&tiny_model_cfg(), 1).unwrap();
        let mut m2 = model.clone();
        let mut grads = zeros_like(&model);
        for (_, g) in grads.params_mut() {
            g.fill(0.3);
        }
        let mut opt = Adam::new(&m2);
        opt.step(&mut m2, &grads, 0.0);
        for ((_, a), (_, b)) in model.params().into_iter().zip(m2.params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn warmup_is_linear() {
        assert!((warmup_lr(1.0, 0, 10) - 0.1).abs() < 1e-15);
        assert_eq!(warmup_lr(1.0, 9, 10), 1.0);
        assert_eq!(warmup_lr(1.0, 50, 10), 1.0);
        assert_eq!(warmup_lr(0.5, 0, 0), 0.5);
    }

    fn overfit_video(seed: u64) -> Vec<Video> {
        let spec = SynthSpec {
            videos: 1,
            instances_per_video: [3, 3],
            steps_range: [128, 128],
            ..Default::default()
        };
        synth_generate(&spec, seed).unwrap().videos
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            encoder: DynEConfig {
                channels: 8,
                num_levels: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let videos = overfit_video(3);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..Default::default()
        };
        let before = Model::init(&small_cfg(), cfg.seed).unwrap();
        let out = fit(&videos, &small_cfg(), &cfg).unwrap();
        assert_eq!(before.to_bytes().unwrap(), out.model.to_bytes().unwrap());
        assert_eq!(out.trace[0].loss, out.trace[1].loss);
    }

    #[test]
    fn overfit_loss_decreases() {
        let videos = overfit_video(3);
        let cfg = TrainConfig {
            learning_rate: 2e-3,
            epochs: 20,
            batch_size: 1,
            seed: 3,
            ..Default::default()
        };
        let out = fit(&videos, &small_cfg(), &cfg).unwrap();
        let rises = out.trace.windows(2).filter(|w| w[1].loss > w[0].loss).count();
        assert!(rises <= 2, "{:?}", out.trace.iter().map(|s| s.loss).collect::<Vec<_>>());
        assert!(out.trace[19].loss < out.trace[0].loss);
    }

    #[test]
    fn same_seed_same_trace() {
        let mut videos = overfit_video(4);
        let mut dup = videos[0].annotation.instances[0].clone();
        dup.duplicate = true;
        videos[0].annotation.instances.push(dup);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 3,
            batch_size: 2,
            crop_length: 64,
            seed: 8,
            ..Default::default()
        };
        let a = fit(&videos, &small_cfg(), &cfg).unwrap();
        let b = fit(&videos, &small_cfg(), &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace[0].samples, 2);
    }

    #[test]
    fn divergence_reports_epoch() {
        let mut videos = overfit_video(3);
        videos[0].features.data_mut()[5] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let err = fit(&videos, &small_cfg(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err}");
    }
}
