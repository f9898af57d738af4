//! tIoU matching and precision / recall / F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ActionInstance, VideoAnnotation};
use crate::detection::{rank_order, Detection, PredictionRecord};
use crate::error::{Error, Result};

pub const DEFAULT_TIOU: f64 = 0.5;

/// Temporal intersection over union of two intervals.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for (s, e) in [a, b] {
        if !(e > s) {
            return Err(Error::DegenerateInterval { start: s, end: e });
        }
    }
    Ok(tiou_unchecked(a, b))
}

pub(crate) fn tiou_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    inter / union
}

fn gt_interval(g: &ActionInstance) -> (f64, f64) {
    (g.start_s, g.end_s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub tiou: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

impl MatchResult {
    pub fn matched(&self) -> usize {
        self.pairs.len()
    }

    /// Ground-truth index matched by each prediction.
    pub fn gt_of_pred(&self, n_preds: usize) -> Vec<Option<usize>> {
        let mut v = vec![None; n_preds];
        for p in &self.pairs {
            v[p.pred] = Some(p.gt);
        }
        v
    }
}

/// Prediction indices in matching order.
pub fn ranked_indices(preds: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| rank_order(&preds[a], &preds[b]).then(a.cmp(&b)));
    idx
}

/// Greedy one-to-one matching: predictions in rank order each take the
/// highest-tIoU unmatched ground truth of the same label with tIoU >= `thr`.
pub fn match_instances(preds: &[Detection], gts: &[ActionInstance], thr: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut res = MatchResult::default();
    for p in ranked_indices(preds) {
        let pred = &preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.label != pred.label {
                continue;
            }
            let iou = tiou_unchecked(pred.interval(), gt_interval(gt));
            if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) => {
                taken[g] = true;
                res.pairs.push(MatchPair {
                    pred: p,
                    gt: g,
                    tiou: iou,
                });
            }
            None => res.unmatched_preds.push(p),
        }
    }
    res.unmatched_gts = (0..gts.len()).filter(|&g| !taken[g]).collect();
    res
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricCondition {
    /// Recall is undefined without ground truth.
    NoGroundTruth,
    /// Precision is undefined without predictions.
    NoPredictions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<MetricCondition>,
}

pub fn prf1(matched: usize, n_preds: usize, n_gts: usize) -> Prf1 {
    let mut condition = None;
    let precision = if n_preds == 0 {
        condition = Some(MetricCondition::NoPredictions);
        0.0
    } else {
        matched as f64 / n_preds as f64
    };
    if n_gts == 0 {
        return Prf1 {
            precision,
            recall: 0.0,
            f1: 0.0,
            condition: Some(MetricCondition::NoGroundTruth),
        };
    }
    let recall = matched as f64 / n_gts as f64;
    Prf1 {
        precision,
        recall,
        f1: f1_score(precision, recall),
        condition,
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

// ---------------------------------------------------------------------------
// dataset level

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: usize,
    pub n_preds: usize,
    pub n_gts: usize,
    pub matched: usize,
}

impl ClassCounts {
    pub fn recall(&self) -> f64 {
        if self.n_gts == 0 {
            0.0
        } else {
            self.matched as f64 / self.n_gts as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoPair {
    pub video_id: String,
    #[serde(flatten)]
    pub pair: MatchPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tiou_threshold: f64,
    pub n_preds: usize,
    pub n_gts: usize,
    pub matched: usize,
    #[serde(flatten)]
    pub metrics: Prf1,
    pub f1_percent: f64,
    pub per_class: Vec<ClassCounts>,
    /// Pair indices refer to positions within each video's predictions (in
    /// file order) and non-duplicate ground-truth instances.
    pub pairs: Vec<VideoPair>,
}

/// Predictions grouped by video, keeping file order within a video.
pub fn group_predictions(preds: &[PredictionRecord]) -> BTreeMap<String, Vec<Detection>> {
    let mut by_video: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for p in preds {
        by_video
            .entry(p.video_id.clone())
            .or_default()
            .push(p.detection.clone());
    }
    by_video
}

pub fn evaluate(preds: &[PredictionRecord], gts: &[VideoAnnotation], thr: f64) -> EvalReport {
    let by_video = group_predictions(preds);
    let empty = Vec::new();
    let mut per_class: BTreeMap<usize, ClassCounts> = BTreeMap::new();
    let mut pairs = Vec::new();
    let mut counted = std::collections::BTreeSet::new();

    let mut visit = |video_id: &str, dets: &[Detection], gt: &[ActionInstance]| {
        let m = match_instances(dets, gt, thr);
        for d in dets {
            per_class.entry(d.label).or_default().n_preds += 1;
        }
        for g in gt {
            per_class.entry(g.label).or_default().n_gts += 1;
        }
        for p in &m.pairs {
            per_class.entry(dets[p.pred].label).or_default().matched += 1;
            pairs.push(VideoPair {
                video_id: video_id.to_string(),
                pair: p.clone(),
            });
        }
    };
    for v in gts {
        let dets = by_video.get(&v.video_id).unwrap_or(&empty);
        let originals: Vec<ActionInstance> = v.instances.iter().filter(|i| !i.duplicate).cloned().collect();
        visit(&v.video_id, dets, &originals);
        counted.insert(v.video_id.clone());
    }
    for (vid, dets) in &by_video {
        if !counted.contains(vid) {
            visit(vid, dets, &[]);
        }
    }

    let per_class: Vec<ClassCounts> = per_class
        .into_iter()
        .map(|(label, mut c)| {
            c.label = label;
            c
        })
        .collect();
    let n_preds = per_class.iter().map(|c| c.n_preds).sum();
    let n_gts = per_class.iter().map(|c| c.n_gts).sum();
    let matched = pairs.len();
    let metrics = prf1(matched, n_preds, n_gts);
    EvalReport {
        tiou_threshold: thr,
        n_preds,
        n_gts,
        matched,
        metrics,
        f1_percent: 100.0 * metrics.f1,
        per_class,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(s: f64, e: f64, l: usize, score: f64) -> Detection {
        Detection::new(s, e, l, score)
    }

    fn gt(s: f64, e: f64, l: usize) -> ActionInstance {
        ActionInstance::new(s, e, l)
    }

    #[test]
    fn tiou_cases() {
        assert_eq!(tiou((0.0, 2.0), (0.0, 2.0)).unwrap(), 1.0);
        assert_eq!(tiou((0.0, 2.0), (2.0, 4.0)).unwrap(), 0.0);
        assert!((tiou((0.0, 2.0), (1.0, 3.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(tiou((1.0, 1.0), (0.0, 2.0)).is_err());
        assert!(tiou((0.0, 2.0), (3.0, 2.0)).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let gts = vec![gt(0.0, 1.0, 0), gt(2.0, 4.0, 1)];
        let preds: Vec<Detection> = gts.iter().map(|g| det(g.start_s, g.end_s, g.label, 1.0)).collect();
        let m = match_instances(&preds, &gts, 0.5);
        assert_eq!(m.matched(), 2);
        let r = prf1(m.matched(), 2, 2);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn takes_higher_tiou_gt() {
        // [1,4] against [0,4] is 3/4, against [1,4.2] it is 3/3.2.
        let gts = vec![gt(0.0, 4.0, 0), gt(1.0, 4.2, 0)];
        let preds = vec![det(1.0, 4.0, 0, 0.9)];
        let a = tiou((1.0, 4.0), (0.0, 4.0)).unwrap();
        let b = tiou((1.0, 4.0), (1.0, 4.2)).unwrap();
        assert!(b > a && a >= 0.5);
        let m = match_instances(&preds, &gts, 0.5);
        assert_eq!(m.pairs[0].gt, 1);
        assert_eq!(m.unmatched_gts, vec![0]);
    }

    #[test]
    fn wrong_label_unmatched() {
        let m = match_instances(&[det(0.0, 1.0, 1, 0.9)], &[gt(0.0, 1.0, 0)], 0.5);
        assert_eq!(m.matched(), 0);
        assert_eq!(m.unmatched_preds, vec![0]);
    }

    #[test]
    fn prf1_values() {
        let r = prf1(7, 10, 10);
        assert!((r.f1 - 0.7).abs() < 1e-12);
        assert!((f1_score(0.4, 0.35) - 0.28 / 0.75).abs() < 1e-12);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        let r = prf1(0, 3, 0);
        assert_eq!(r.condition, Some(MetricCondition::NoGroundTruth));
        assert_eq!(r.f1, 0.0);
        let r = prf1(0, 0, 3);
        assert_eq!(r.condition, Some(MetricCondition::NoPredictions));
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn dataset_report_counts_unknown_videos() {
        let gts = vec![VideoAnnotation {
            video_id: "a".into(),
            fps: 1.0,
            feature_stride: 1,
            duration_s: 10.0,
            instances: vec![gt(0.0, 2.0, 0), gt(5.0, 7.0, 1)],
        }];
        let preds = vec![
            PredictionRecord {
                video_id: "a".into(),
                detection: det(0.0, 2.0, 0, 0.8),
            },
            PredictionRecord {
                video_id: "b".into(),
                detection: det(0.0, 2.0, 0, 0.8),
            },
        ];
        let r = evaluate(&preds, &gts, 0.5);
        assert_eq!((r.n_preds, r.n_gts, r.matched), (2, 2, 1));
        assert!((r.metrics.f1 - 0.5).abs() < 1e-12);
        assert_eq!(r.f1_percent, 50.0);
        assert_eq!(r.per_class[1].n_gts, 1);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("f1").is_some() && json.get("pairs").is_some());
    }
}
