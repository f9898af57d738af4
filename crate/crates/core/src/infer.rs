//! Decoding head outputs into detections, soft-NMS, and windowed inference
//! over long sequences (offline and streaming).
//!
//! Sequences longer than the window `W` are processed in windows starting at
//! multiples of `W/2`. Window `k` owns the anchors in
//! `[k·W/2 + W/4, (k+1)·W/2 + W/4)` (the first window from 0, the last to the
//! end), and its detections are clipped to the window. Soft-NMS then runs over
//! the pooled candidates. Because decay only acts between overlapping
//! detections, running it per overlap component gives the same result, which
//! is what lets the streaming detector finalize components early and still
//! reproduce the offline output exactly.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::data::Timing;
use crate::detection::{rank_order, sort_ranked, Detection};
use crate::error::{Error, Result};
use crate::eval::tiou_unchecked;
use crate::grid::Grid;
use crate::head::HeadOutputs;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    /// Candidate threshold θ on class probabilities.
    pub score_threshold: f64,
    pub nms_sigma: f64,
    pub min_score: f64,
    /// Detections scoring below this after soft-NMS are not reported.
    pub report_threshold: f64,
    /// Window length `W` in base steps.
    pub window: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.1,
            nms_sigma: 0.5,
            min_score: 0.001,
            report_threshold: 0.3,
            window: 512,
        }
    }
}

impl InferConfig {
    pub fn validate(&self, min_length: usize) -> Result<()> {
        check_theta(self.score_threshold)?;
        if !(self.nms_sigma > 0.0) {
            return Err(Error::config("nms_sigma must be positive"));
        }
        if !(self.min_score >= 0.0 && self.report_threshold >= 0.0) {
            return Err(Error::config("min_score and report_threshold must be non-negative"));
        }
        if self.window < min_length {
            return Err(Error::TooShort {
                what: "window (must hold 2^levels steps)",
                actual: self.window,
                minimum: min_length,
            });
        }
        if !self.window.is_multiple_of(4) {
            return Err(Error::config(format!("window {} must be a multiple of 4", self.window)));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.window / 2
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("score threshold {theta} must lie in (0, 1)")))
    }
}

/// A decoded candidate in base steps.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    anchor: f64,
    start: f64,
    end: f64,
    label: usize,
    score: f64,
}

const MAX_SCORE: f64 = 1.0 - f64::EPSILON;

fn candidates(out: &HeadOutputs, theta: f64) -> Vec<Candidate> {
    let mut v = Vec::new();
    for (i, level) in out.levels.iter().enumerate() {
        let stride = (1u64 << (i + 1)) as f64;
        let probs = &level.class_probs;
        for t in 0..probs.cols() {
            let (ds, de) = (level.offsets.at(0, t), level.offsets.at(1, t));
            for c in 0..probs.rows() {
                let p = probs.at(c, t);
                if p >= theta {
                    v.push(Candidate {
                        anchor: t as f64 * stride,
                        start: (t as f64 - ds) * stride,
                        end: (t as f64 + de) * stride,
                        label: c,
                        score: p.min(MAX_SCORE),
                    });
                }
            }
        }
    }
    v
}

/// Decodes every (level, timestep, class) with probability ≥ θ into an
/// interval in seconds clipped to `[0, duration_s]`; empty intervals are
/// dropped.
pub fn decode(out: &HeadOutputs, timing: &Timing, theta: f64, duration_s: f64) -> Result<Vec<Detection>> {
    check_theta(theta)?;
    Ok(candidates(out, theta)
        .into_iter()
        .filter_map(|c| {
            let s = timing.to_seconds(c.start).max(0.0);
            let e = timing.to_seconds(c.end).min(duration_s);
            (e > s).then(|| Detection::new(s, e, c.label, c.score))
        })
        .collect())
}

/// Class-wise Gaussian soft-NMS: repeatedly keeps the best remaining
/// detection and decays the others of its class by `exp(-tIoU²/σ)`,
/// discarding those that fall below `min_score`. Output is in rank order.
pub fn soft_nms(dets: &[Detection], sigma: f64, min_score: f64) -> Vec<Detection> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<Detection>> = Default::default();
    for d in dets {
        by_class.entry(d.label).or_default().push(d.clone());
    }
    let mut out = Vec::with_capacity(dets.len());
    for (_, mut pool) in by_class {
        while !pool.is_empty() {
            let best = (0..pool.len())
                .min_by(|&a, &b| rank_order(&pool[a], &pool[b]))
                .expect("non-empty");
            let keep = pool.swap_remove(best);
            for d in pool.iter_mut() {
                let iou = tiou_unchecked(keep.interval(), d.interval());
                if iou > 0.0 {
                    d.score *= (-iou * iou / sigma).exp();
                }
            }
            pool.retain(|d| d.score >= min_score);
            out.push(keep);
        }
    }
    sort_ranked(&mut out);
    out
}

fn postprocess(cands: &[Detection], cfg: &InferConfig) -> Vec<Detection> {
    let mut v = soft_nms(cands, cfg.nms_sigma, cfg.min_score);
    v.retain(|d| d.score >= cfg.report_threshold);
    v
}

/// Number of windows covering `t_len` steps.
pub fn window_count(t_len: usize, window: usize) -> usize {
    if t_len == 0 {
        0
    } else if t_len <= window {
        1
    } else {
        (t_len - window).div_ceil(window / 2) + 1
    }
}

/// Raw (pre-NMS) detections of window `k` whose data is `feats`.
fn window_candidates(
    model: &Model,
    feats: &Grid,
    k: usize,
    last: bool,
    timing: &Timing,
    cfg: &InferConfig,
) -> Result<Vec<Detection>> {
    let hop = cfg.hop();
    let offset = (k * hop) as f64;
    let data_end = offset + feats.cols() as f64;
    let own_lo = if k == 0 { f64::NEG_INFINITY } else { offset + (cfg.window / 4) as f64 };
    let own_hi = if last {
        f64::INFINITY
    } else {
        ((k + 1) * hop + cfg.window / 4) as f64
    };
    let min = model.config.min_length();
    let input = if feats.cols() < min { feats.pad_cols(min) } else { feats.clone() };
    let out = model.forward(&input)?;
    Ok(candidates(&out, cfg.score_threshold)
        .into_iter()
        .filter_map(|c| {
            let anchor = offset + c.anchor;
            if anchor < own_lo || anchor >= own_hi {
                return None;
            }
            let s = timing.to_seconds((offset + c.start).max(offset));
            let e = timing.to_seconds((offset + c.end).min(data_end));
            (e > s).then(|| Detection::new(s, e, c.label, c.score))
        })
        .collect())
}

/// Offline detection on a whole `C×T` sequence.
pub fn detect(model: &Model, features: &Grid, timing: &Timing, cfg: &InferConfig) -> Result<Vec<Detection>> {
    cfg.validate(model.config.min_length())?;
    check_channels(model, features)?;
    let t_len = features.cols();
    let n = window_count(t_len, cfg.window);
    let mut cands = Vec::new();
    for k in 0..n {
        let start = k * cfg.hop();
        let end = (start + cfg.window).min(t_len);
        let w = features.slice_cols(start, end);
        cands.extend(window_candidates(model, &w, k, k + 1 == n, timing, cfg)?);
    }
    Ok(postprocess(&cands, cfg))
}

fn check_channels(model: &Model, features: &Grid) -> Result<()> {
    let c = model.config.input_channels;
    if features.shape().len() != 2 || features.rows() != c {
        return Err(Error::Shape {
            axis: "feature channels",
            expected: c,
            actual: features.shape().first().copied().unwrap_or(0),
        });
    }
    Ok(())
}

/// Incremental detector: feed feature steps with [`StreamDetector::push`],
/// collect finalized detections as they become available, and call
/// [`StreamDetector::finish`] at the end of the sequence.
///
/// The model may be borrowed or owned through any [`Borrow`] (for example an
/// `Arc<Model>`).
pub struct StreamDetector<M: Borrow<Model>> {
    model: M,
    timing: Timing,
    cfg: InferConfig,
    /// Columns of the sequence from `buf_start` on, one `Vec` per step.
    buf: Vec<Vec<f64>>,
    buf_start: usize,
    total: usize,
    next_window: usize,
    pending: Vec<Detection>,
}

impl<M: Borrow<Model>> StreamDetector<M> {
    pub fn new(model: M, timing: Timing, cfg: InferConfig) -> Result<Self> {
        cfg.validate(model.borrow().config.min_length())?;
        Ok(Self {
            model,
            timing,
            cfg,
            buf: Vec::new(),
            buf_start: 0,
            total: 0,
            next_window: 0,
            pending: Vec::new(),
        })
    }

    /// Steps received so far.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Appends the `C×n` block `steps` and returns newly finalized detections.
    pub fn push(&mut self, steps: &Grid) -> Result<Vec<Detection>> {
        check_channels(self.model.borrow(), steps)?;
        for t in 0..steps.cols() {
            self.buf.push((0..steps.rows()).map(|c| steps.at(c, t)).collect());
        }
        self.total += steps.cols();
        let mut out = Vec::new();
        // A window is known not to be the last once a step beyond it exists.
        while self.next_window * self.cfg.hop() + self.cfg.window < self.total {
            let k = self.next_window;
            self.run_window(k, false)?;
            let horizon = self.timing.to_seconds(((k + 1) * self.cfg.hop()) as f64);
            out.extend(self.finalize(horizon));
        }
        Ok(out)
    }

    /// Processes the remaining windows and flushes every pending detection.
    pub fn finish(mut self) -> Result<Vec<Detection>> {
        let n = window_count(self.total, self.cfg.window);
        while self.next_window < n {
            let k = self.next_window;
            self.run_window(k, k + 1 == n)?;
        }
        Ok(self.finalize(f64::INFINITY))
    }

    fn run_window(&mut self, k: usize, last: bool) -> Result<()> {
        let start = k * self.cfg.hop();
        let end = (start + self.cfg.window).min(self.total);
        let c = self.model.borrow().config.input_channels;
        let mut g = Grid::zeros(&[c, end - start]);
        for t in start..end {
            let col = &self.buf[t - self.buf_start];
            for (ch, v) in col.iter().enumerate() {
                g.set(ch, t - start, *v);
            }
        }
        let cands = window_candidates(self.model.borrow(), &g, k, last, &self.timing, &self.cfg)?;
        self.pending.extend(cands);
        self.next_window += 1;
        let keep_from = self.next_window * self.cfg.hop();
        if keep_from > self.buf_start {
            let drop = (keep_from - self.buf_start).min(self.buf.len());
            self.buf.drain(..drop);
            self.buf_start += drop;
        }
        Ok(())
    }

    /// Runs soft-NMS on every per-class overlap component that ends at or
    /// before `horizon` seconds and returns the reported survivors.
    fn finalize(&mut self, horizon: f64) -> Vec<Detection> {
        self.pending.sort_by(|a, b| {
            a.label
                .cmp(&b.label)
                .then(a.start_s.total_cmp(&b.start_s))
                .then(rank_order(a, b))
        });
        let mut ready = Vec::new();
        let mut keep = Vec::new();
        let mut i = 0;
        while i < self.pending.len() {
            let label = self.pending[i].label;
            let mut end = self.pending[i].end_s;
            let mut j = i + 1;
            while j < self.pending.len() && self.pending[j].label == label && self.pending[j].start_s < end {
                end = end.max(self.pending[j].end_s);
                j += 1;
            }
            let comp = &self.pending[i..j];
            if end <= horizon {
                ready.extend(postprocess(comp, &self.cfg));
            } else {
                keep.extend_from_slice(comp);
            }
            i = j;
        }
        self.pending = keep;
        sort_ranked(&mut ready);
        ready
    }
}

/// Streams `features` through a [`StreamDetector`] in chunks of `chunk` steps
/// and returns every finalized detection in rank order.
pub fn detect_stream(
    model: &Model,
    features: &Grid,
    timing: &Timing,
    cfg: &InferConfig,
    chunk: usize,
) -> Result<Vec<Detection>> {
    let mut sd = StreamDetector::new(model, *timing, cfg.clone())?;
    let mut out = Vec::new();
    let chunk = chunk.max(1);
    let mut t = 0;
    while t < features.cols() {
        let e = (t + chunk).min(features.cols());
        out.extend(sd.push(&features.slice_cols(t, e))?);
        t = e;
    }
    out.extend(sd.finish()?);
    sort_ranked(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::LevelOutput;
    use proptest::prelude::*;

    fn one_level(probs: Vec<Vec<f64>>, offsets: [Vec<f64>; 2]) -> HeadOutputs {
        let p = Grid::from_rows(&probs);
        HeadOutputs {
            levels: vec![LevelOutput {
                class_logits: p.map(|v| (v / (1.0 - v)).ln()),
                class_probs: p,
                offsets: Grid::from_rows(&[offsets[0].clone(), offsets[1].clone()]),
            }],
        }
    }

    #[test]
    fn below_threshold_is_empty() {
        let out = one_level(vec![vec![0.05; 8]], [vec![1.0; 8], vec![1.0; 8]]);
        assert!(decode(&out, &Timing::new(2.0, 1), 0.1, 100.0).unwrap().is_empty());
    }

    #[test]
    fn decode_arithmetic() {
        let mut p = vec![0.0; 8];
        p[4] = 0.9;
        let out = one_level(vec![p], [vec![2.0; 8], vec![2.0; 8]]);
        // one base step = 0.5 s
        let d = decode(&out, &Timing::new(2.0, 1), 0.1, 100.0).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].start_s, d[0].end_s, d[0].label), (2.0, 6.0, 0));
        assert!((d[0].score - 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_offsets_dropped_and_clipping() {
        let out = one_level(vec![vec![0.5; 4]], [vec![0.0, 3.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 5.0]]);
        let d = decode(&out, &Timing::new(1.0, 1), 0.1, 10.0).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!((d[0].start_s, d[0].end_s), (0.0, 4.0));
        assert_eq!((d[1].start_s, d[1].end_s), (6.0, 10.0));
    }

    #[test]
    fn theta_must_be_open_unit() {
        let out = one_level(vec![vec![0.5]], [vec![1.0], vec![1.0]]);
        for th in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(decode(&out, &Timing::new(1.0, 1), th, 10.0).is_err());
        }
    }

    #[test]
    fn soft_nms_examples() {
        let disjoint = vec![Detection::new(0.0, 1.0, 0, 0.5), Detection::new(2.0, 3.0, 0, 0.7)];
        let r = soft_nms(&disjoint, 0.5, 0.001);
        assert_eq!(r, vec![disjoint[1].clone(), disjoint[0].clone()]);
        let same = vec![Detection::new(0.0, 1.0, 0, 0.8), Detection::new(0.0, 1.0, 0, 0.9)];
        let r = soft_nms(&same, 0.5, 0.001);
        assert_eq!(r[0].score, 0.9);
        assert!((r[1].score - 0.8 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((r[1].score - 0.1083).abs() < 1e-4);
        let single = vec![Detection::new(1.0, 2.0, 3, 0.3)];
        assert_eq!(soft_nms(&single, 0.5, 0.001), single);
        let other_class = vec![Detection::new(0.0, 1.0, 0, 0.8), Detection::new(0.0, 1.0, 1, 0.9)];
        assert_eq!(soft_nms(&other_class, 0.5, 0.001)[1].score, 0.8);
    }

    proptest! {
        #[test]
        fn soft_nms_only_lowers_scores(raw in proptest::collection::vec((0.0f64..20.0, 0.1f64..5.0, 0usize..3, 0.01f64..1.0), 0..30)) {
            let dets: Vec<Detection> = raw.iter().map(|&(s, d, l, p)| Detection::new(s, s + d, l, p)).collect();
            let out = soft_nms(&dets, 0.5, 0.001);
            prop_assert!(out.len() <= dets.len());
            for w in out.windows(2) {
                prop_assert!(rank_order(&w[0], &w[1]) != std::cmp::Ordering::Greater);
            }
            let mut used = vec![false; dets.len()];
            for o in &out {
                let idx = (0..dets.len()).find(|&i| {
                    !used[i] && dets[i].start_s == o.start_s && dets[i].end_s == o.end_s && dets[i].label == o.label && o.score <= dets[i].score
                });
                prop_assert!(idx.is_some());
                used[idx.unwrap()] = true;
            }
        }

        #[test]
        fn decoded_offsets_round_trip(t in 0usize..16, ds in 0.0f64..6.0, de in 0.01f64..6.0, level in 0usize..3) {
            let mut levels = Vec::new();
            for i in 0..=level {
                let mut p = Grid::filled(&[1, 16], 0.01);
                let mut off = Grid::zeros(&[2, 16]);
                if i == level {
                    p.set(0, t, 0.7);
                    off.set(0, t, ds);
                    off.set(1, t, de);
                }
                levels.push(LevelOutput { class_logits: p.clone(), class_probs: p, offsets: off });
            }
            let out = HeadOutputs { levels };
            let timing = Timing::new(3.0, 2);
            let d = decode(&out, &timing, 0.5, f64::INFINITY).unwrap();
            let stride = (1u64 << (level + 1)) as f64;
            let anchor = t as f64 * stride;
            let s = timing.to_steps(d[0].start_s);
            let e = timing.to_steps(d[0].end_s);
            if (t as f64 - ds) >= 0.0 {
                prop_assert!(((anchor - s) / stride - ds).abs() < 1e-9);
            }
            prop_assert!(((e - anchor) / stride - de).abs() < 1e-9);
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_count(0, 512), 0);
        assert_eq!(window_count(300, 512), 1);
        assert_eq!(window_count(512, 512), 1);
        assert_eq!(window_count(513, 512), 2);
        assert_eq!(window_count(768, 512), 2);
        assert_eq!(window_count(769, 512), 3);
    }
}
