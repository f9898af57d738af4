//! Detection error analysis: false-positive taxonomy over prediction budgets,
//! false-negative rates per instance characteristic, and per-bin F1
//! sensitivity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ActionInstance, VideoAnnotation};
use crate::detection::{rank_order, Detection, PredictionRecord};
use crate::error::{Error, Result};
use crate::eval::{match_instances, prf1, tiou_unchecked};

/// Lower tIoU edge of the localization and confusion bands.
pub const LOW_TIOU: f64 = 0.1;
pub const MAX_BUDGET: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct BinSpec {
    pub length_edges_s: Vec<f64>,
    pub instance_edges: Vec<f64>,
    pub coverage_edges: Vec<f64>,
    pub labels: Vec<String>,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            length_edges_s: vec![0.0, 2.0, 5.0, 7.0, 9.75, f64::INFINITY],
            instance_edges: vec![-1.0, 15.0, 100.0, 200.0, f64::INFINITY],
            coverage_edges: vec![0.0, 0.02, 0.04, 0.06, 0.08, 1.0],
            labels: ["XS", "S", "M", "L", "XL"].map(String::from).to_vec(),
        }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in self.characteristics() {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::config(format!("{name} edges must be strictly increasing")));
            }
            if e.len() - 1 > self.labels.len() {
                return Err(Error::config(format!("not enough bin labels for {name}")));
            }
        }
        Ok(())
    }

    fn characteristics(&self) -> [(Characteristic, &[f64]); 3] {
        [
            (Characteristic::Coverage, &self.coverage_edges),
            (Characteristic::Length, &self.length_edges_s),
            (Characteristic::Instances, &self.instance_edges),
        ]
    }
}

/// Bin of `v`: intervals are left-closed and right-open, except the last,
/// which is closed.
pub fn bin_index(v: f64, edges: &[f64]) -> Option<usize> {
    let n = edges.len().checked_sub(1)?;
    (0..n).find(|&i| v >= edges[i] && (v < edges[i + 1] || (i + 1 == n && v <= edges[i + 1])))
}

fn range_label(edges: &[f64], i: usize) -> String {
    let close = if i + 2 == edges.len() { "]" } else { ")" };
    format!("[{}, {}{close}", fmt_edge(edges[i]), fmt_edge(edges[i + 1]))
}

fn fmt_edge(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Characteristic {
    Coverage,
    Length,
    Instances,
}

impl Characteristic {
    pub fn name(self) -> &'static str {
        match self {
            Characteristic::Coverage => "coverage",
            Characteristic::Length => "length",
            Characteristic::Instances => "instances",
        }
    }
}

impl std::fmt::Display for Characteristic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpCategory {
    DoubleDetection,
    WrongLabel,
    Localization,
    Confusion,
    Background,
}

impl FpCategory {
    pub const ALL: [FpCategory; 5] = [
        FpCategory::DoubleDetection,
        FpCategory::WrongLabel,
        FpCategory::Localization,
        FpCategory::Confusion,
        FpCategory::Background,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FpCategory::DoubleDetection => "double_detection",
            FpCategory::WrongLabel => "wrong_label",
            FpCategory::Localization => "localization",
            FpCategory::Confusion => "confusion",
            FpCategory::Background => "background",
        }
    }
}

/// Category of an unmatched prediction. `matched[g]` tells whether ground
/// truth `g` was taken by a higher-ranked prediction.
pub fn classify_fp(pred: &Detection, gts: &[ActionInstance], matched: &[bool], thr: f64) -> FpCategory {
    let mut same_best = 0.0f64;
    let mut other_best = 0.0f64;
    let mut double = false;
    for (g, gt) in gts.iter().enumerate() {
        let iou = tiou_unchecked(pred.interval(), (gt.start_s, gt.end_s));
        if gt.label == pred.label {
            double |= iou >= thr && matched[g];
            same_best = same_best.max(iou);
        } else {
            other_best = other_best.max(iou);
        }
    }
    if double {
        FpCategory::DoubleDetection
    } else if other_best >= thr {
        FpCategory::WrongLabel
    } else if same_best >= LOW_TIOU {
        FpCategory::Localization
    } else if other_best >= LOW_TIOU {
        FpCategory::Confusion
    } else {
        FpCategory::Background
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetCounts {
    /// Budget is `k·G` predictions, G being the ground-truth count.
    pub k: usize,
    pub considered: usize,
    pub true_positive: usize,
    pub double_detection: usize,
    pub wrong_label: usize,
    pub localization: usize,
    pub confusion: usize,
    pub background: usize,
}

impl BudgetCounts {
    pub fn false_positives(&self) -> usize {
        self.double_detection + self.wrong_label + self.localization + self.confusion + self.background
    }

    fn add(&mut self, cat: Option<FpCategory>) {
        match cat {
            None => self.true_positive += 1,
            Some(FpCategory::DoubleDetection) => self.double_detection += 1,
            Some(FpCategory::WrongLabel) => self.wrong_label += 1,
            Some(FpCategory::Localization) => self.localization += 1,
            Some(FpCategory::Confusion) => self.confusion += 1,
            Some(FpCategory::Background) => self.background += 1,
        }
    }

    pub fn count(&self, cat: FpCategory) -> usize {
        match cat {
            FpCategory::DoubleDetection => self.double_detection,
            FpCategory::WrongLabel => self.wrong_label,
            FpCategory::Localization => self.localization,
            FpCategory::Confusion => self.confusion,
            FpCategory::Background => self.background,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnBin {
    pub label: String,
    pub range: String,
    pub total: usize,
    pub missed: usize,
    /// `None` for an empty bin.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnProfile {
    pub characteristic: Characteristic,
    pub bins: Vec<FnBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBin {
    pub label: String,
    pub range: String,
    pub n_gts: usize,
    pub n_preds: usize,
    pub matched: usize,
    /// `None` when the bin holds no ground truth.
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub characteristic: Characteristic,
    pub bins: Vec<SensitivityBin>,
    /// Max minus min F1 over populated bins.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub tiou_threshold: f64,
    pub n_preds: usize,
    pub n_gts: usize,
    pub true_positives: usize,
    pub false_negatives: usize,
    pub fp_budgets: Vec<BudgetCounts>,
    pub fn_profiles: Vec<FnProfile>,
    pub sensitivity: Vec<Sensitivity>,
}

/// One ground truth with its characteristics.
#[derive(Clone, Debug)]
struct GtInfo {
    matched: bool,
    values: [f64; 3],
}

/// One prediction with its outcome.
#[derive(Clone, Debug)]
struct PredInfo {
    det: Detection,
    video: usize,
    index: usize,
    category: Option<FpCategory>,
    /// Ground truth the prediction is attributed to for sensitivity.
    gt: Option<usize>,
}

struct Analysis {
    gts: Vec<GtInfo>,
    preds: Vec<PredInfo>,
}

fn characteristic_values(gt: &ActionInstance, duration_s: f64, count: usize) -> [f64; 3] {
    let len = gt.end_s - gt.start_s;
    let coverage = if duration_s > 0.0 { len / duration_s } else { 1.0 };
    [coverage, len, count as f64]
}

fn analyse(preds: &[PredictionRecord], videos: &[VideoAnnotation], thr: f64) -> Analysis {
    let mut by_video: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for p in preds {
        by_video.entry(p.video_id.as_str()).or_default().push(p.detection.clone());
    }
    let mut order: Vec<(&str, Vec<ActionInstance>, f64)> = videos
        .iter()
        .map(|v| {
            let inst = v.instances.iter().filter(|i| !i.duplicate).cloned().collect();
            (v.video_id.as_str(), inst, v.duration_s)
        })
        .collect();
    for vid in by_video.keys() {
        if !videos.iter().any(|v| v.video_id == *vid) {
            order.push((vid, Vec::new(), 0.0));
        }
    }
    let mut out = Analysis {
        gts: Vec::new(),
        preds: Vec::new(),
    };
    for (vi, (vid, gts, duration)) in order.iter().enumerate() {
        let dets = by_video.get(vid).cloned().unwrap_or_default();
        let m = match_instances(&dets, gts, thr);
        let base = out.gts.len();
        let mut matched = vec![false; gts.len()];
        for p in &m.pairs {
            matched[p.gt] = true;
        }
        for (g, gt) in gts.iter().enumerate() {
            out.gts.push(GtInfo {
                matched: matched[g],
                values: characteristic_values(gt, *duration, gts.len()),
            });
        }
        let gt_of = m.gt_of_pred(dets.len());
        // Replay the greedy order so each FP sees the matches made before it.
        let mut taken = vec![false; gts.len()];
        let mut ranked: Vec<usize> = (0..dets.len()).collect();
        ranked.sort_by(|&a, &b| rank_order(&dets[a], &dets[b]).then(a.cmp(&b)));
        for p in ranked {
            let (category, gt) = match gt_of[p] {
                Some(g) => {
                    taken[g] = true;
                    (None, Some(g))
                }
                None => {
                    let best = gts
                        .iter()
                        .enumerate()
                        .map(|(g, gt)| (g, tiou_unchecked(dets[p].interval(), (gt.start_s, gt.end_s))))
                        .filter(|(_, iou)| *iou > 0.0)
                        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                        .map(|(g, _)| g);
                    (Some(classify_fp(&dets[p], gts, &taken, thr)), best)
                }
            };
            out.preds.push(PredInfo {
                det: dets[p].clone(),
                video: vi,
                index: p,
                category,
                gt: gt.map(|g| base + g),
            });
        }
    }
    out.preds.sort_by(|a, b| {
        rank_order(&a.det, &b.det)
            .then(a.video.cmp(&b.video))
            .then(a.index.cmp(&b.index))
    });
    out
}

pub fn diagnose(preds: &[PredictionRecord], gts: &[VideoAnnotation], thr: f64, bins: &BinSpec) -> Result<DiagnosisReport> {
    bins.validate()?;
    let a = analyse(preds, gts, thr);
    let g = a.gts.len();
    let fp_budgets = (1..=MAX_BUDGET)
        .map(|k| {
            let mut c = BudgetCounts {
                k,
                ..Default::default()
            };
            for p in a.preds.iter().take(k * g) {
                c.add(p.category);
            }
            c.considered = a.preds.len().min(k * g);
            c
        })
        .collect();
    let true_positives = a.preds.iter().filter(|p| p.category.is_none()).count();

    let mut fn_profiles = Vec::new();
    let mut sensitivity = Vec::new();
    for (ci, (ch, edges)) in bins.characteristics().into_iter().enumerate() {
        let nb = edges.len() - 1;
        let mut total = vec![0usize; nb];
        let mut missed = vec![0usize; nb];
        let mut gt_bin = vec![None; g];
        for (i, info) in a.gts.iter().enumerate() {
            if let Some(b) = bin_index(info.values[ci], edges) {
                gt_bin[i] = Some(b);
                total[b] += 1;
                missed[b] += usize::from(!info.matched);
            }
        }
        let mut n_preds = vec![0usize; nb];
        let mut matched = vec![0usize; nb];
        for p in &a.preds {
            if let Some(b) = p.gt.and_then(|gi| gt_bin[gi]) {
                n_preds[b] += 1;
                matched[b] += usize::from(p.category.is_none());
            }
        }
        fn_profiles.push(FnProfile {
            characteristic: ch,
            bins: (0..nb)
                .map(|b| FnBin {
                    label: bins.labels[b].clone(),
                    range: range_label(edges, b),
                    total: total[b],
                    missed: missed[b],
                    rate: (total[b] > 0).then(|| missed[b] as f64 / total[b] as f64),
                })
                .collect(),
        });
        let sbins: Vec<SensitivityBin> = (0..nb)
            .map(|b| SensitivityBin {
                label: bins.labels[b].clone(),
                range: range_label(edges, b),
                n_gts: total[b],
                n_preds: n_preds[b],
                matched: matched[b],
                f1: (total[b] > 0).then(|| prf1(matched[b], n_preds[b], total[b]).f1),
            })
            .collect();
        let f1s: Vec<f64> = sbins.iter().filter_map(|b| b.f1).collect();
        let spread = if f1s.is_empty() {
            0.0
        } else {
            f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - f1s.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        sensitivity.push(Sensitivity {
            characteristic: ch,
            bins: sbins,
            spread,
        });
    }

    Ok(DiagnosisReport {
        tiou_threshold: thr,
        n_preds: a.preds.len(),
        n_gts: g,
        true_positives,
        false_negatives: a.gts.iter().filter(|x| !x.matched).count(),
        fp_budgets,
        fn_profiles,
        sensitivity,
    })
}

/// Missed-detection rates per characteristic bin.
pub fn fn_profile(preds: &[PredictionRecord], gts: &[VideoAnnotation], thr: f64, bins: &BinSpec) -> Result<Vec<FnProfile>> {
    Ok(diagnose(preds, gts, thr, bins)?.fn_profiles)
}

/// Per-bin F1 and its spread for each characteristic.
pub fn sensitivity(preds: &[PredictionRecord], gts: &[VideoAnnotation], thr: f64, bins: &BinSpec) -> Result<Vec<Sensitivity>> {
    Ok(diagnose(preds, gts, thr, bins)?.sensitivity)
}

// ---------------------------------------------------------------------------
// charts

/// A static SVG bar chart; `None` values are drawn as empty slots.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[Option<f64>], y_max: f64) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let n = labels.len().max(1) as f64;
    let slot = (w - 2.0 * pad) / n;
    let top = if y_max > 0.0 { y_max } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let base = h - pad;
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, w - pad);
    for (i, label) in labels.iter().enumerate() {
        let x = pad + slot * i as f64;
        if let Some(v) = values.get(i).copied().flatten() {
            let bh = (v / top).clamp(0.0, 1.0) * (h - 2.0 * pad - 10.0);
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4a78b5"/>"##,
                x + slot * 0.15,
                base - bh,
                slot * 0.7,
                bh
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
                x + slot / 2.0,
                base - bh - 3.0,
                trim_number(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            x + slot / 2.0,
            base + 15.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn trim_number(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the report's charts into `dir`, returning the file names.
pub fn write_svgs(report: &DiagnosisReport, dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut emit = |name: String, svg: String| -> Result<()> {
        let path = dir.join(&name);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        files.push(name);
        Ok(())
    };
    if let Some(b) = report.fp_budgets.first() {
        let mut labels = vec!["true_positive".to_string()];
        let mut values = vec![Some(b.true_positive as f64)];
        for c in FpCategory::ALL {
            labels.push(c.name().into());
            values.push(Some(b.count(c) as f64));
        }
        let max = values.iter().flatten().cloned().fold(0.0, f64::max);
        emit("fp_top1g.svg".into(), bar_chart_svg("Top-1G predictions", &labels, &values, max))?;
    }
    for p in &report.fn_profiles {
        let name = p.characteristic.name();
        let labels: Vec<String> = p.bins.iter().map(|b| b.label.clone()).collect();
        let values: Vec<Option<f64>> = p.bins.iter().map(|b| b.rate).collect();
        emit(format!("fn_{name}.svg"), bar_chart_svg(&format!("Missed rate by {name}"), &labels, &values, 1.0))?;
    }
    for s in &report.sensitivity {
        let name = s.characteristic.name();
        let labels: Vec<String> = s.bins.iter().map(|b| b.label.clone()).collect();
        let values: Vec<Option<f64>> = s.bins.iter().map(|b| b.f1).collect();
        emit(
            format!("sensitivity_{name}.svg"),
            bar_chart_svg(&format!("F1 by {name} (spread {:.3})", s.spread), &labels, &values, 1.0),
        )?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(s: f64, e: f64, l: usize) -> ActionInstance {
        ActionInstance::new(s, e, l)
    }

    fn video(id: &str, duration: f64, inst: Vec<ActionInstance>) -> VideoAnnotation {
        VideoAnnotation {
            video_id: id.into(),
            fps: 1.0,
            feature_stride: 1,
            duration_s: duration,
            instances: inst,
        }
    }

    fn rec(id: &str, s: f64, e: f64, l: usize, p: f64) -> PredictionRecord {
        PredictionRecord {
            video_id: id.into(),
            detection: Detection::new(s, e, l, p),
        }
    }

    #[test]
    fn bins_are_left_closed() {
        let b = BinSpec::default();
        assert_eq!(bin_index(2.0, &b.length_edges_s), Some(1));
        assert_eq!(bin_index(1.999, &b.length_edges_s), Some(0));
        assert_eq!(bin_index(1e9, &b.length_edges_s), Some(4));
        assert_eq!(bin_index(1.0, &b.coverage_edges), Some(4));
        assert_eq!(bin_index(0.02, &b.coverage_edges), Some(1));
        assert_eq!(bin_index(-2.0, &b.instance_edges), None);
        assert_eq!(bin_index(15.0, &b.instance_edges), Some(1));
    }

    #[test]
    fn fp_categories() {
        let gts = vec![gt(0.0, 10.0, 0), gt(20.0, 30.0, 1)];
        let m = [true, false];
        let c = |s, e, l| classify_fp(&Detection::new(s, e, l, 0.5), &gts, &m, 0.5);
        assert_eq!(c(0.0, 10.0, 0), FpCategory::DoubleDetection);
        assert_eq!(c(20.0, 30.0, 0), FpCategory::WrongLabel);
        // [0,3] vs [0,10] = 0.3
        assert_eq!(c(0.0, 3.0, 0), FpCategory::Localization);
        assert_eq!(c(20.0, 23.0, 0), FpCategory::Confusion);
        assert_eq!(c(40.0, 50.0, 0), FpCategory::Background);
        assert_eq!(c(10.0, 20.0, 1), FpCategory::Background);
    }

    #[test]
    fn fn_profile_example() {
        let gts = vec![video("v", 100.0, vec![gt(0.0, 1.0, 0), gt(10.0, 14.0, 0), gt(20.0, 28.0, 0)])];
        let preds = vec![rec("v", 10.0, 14.0, 0, 0.9), rec("v", 20.0, 28.0, 0, 0.8)];
        let r = diagnose(&preds, &gts, 0.5, &BinSpec::default()).unwrap();
        let length = r.fn_profiles.iter().find(|p| p.characteristic == Characteristic::Length).unwrap();
        let rates: Vec<Option<f64>> = length.bins.iter().map(|b| b.rate).collect();
        assert_eq!(rates, vec![Some(1.0), Some(0.0), None, Some(0.0), None]);
        assert_eq!(r.false_negatives, 1);
        // XS F1 is 0, the others 1
        let s = r.sensitivity.iter().find(|s| s.characteristic == Characteristic::Length).unwrap();
        assert_eq!(s.spread, 1.0);
        assert_eq!(s.bins[0].f1, Some(0.0));
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gts = vec![video("a", 60.0, vec![gt(0.0, 1.0, 0), gt(5.0, 11.0, 1)]), video("b", 30.0, vec![gt(2.0, 9.0, 0)])];
        let perfect: Vec<PredictionRecord> = gts
            .iter()
            .flat_map(|v| v.instances.iter().map(|i| rec(&v.video_id, i.start_s, i.end_s, i.label, 1.0)))
            .collect();
        let r = diagnose(&perfect, &gts, 0.5, &BinSpec::default()).unwrap();
        assert!(r.sensitivity.iter().all(|s| s.spread == 0.0 && s.bins.iter().all(|b| b.f1.is_none_or(|f| f == 1.0))));
        assert!(r.fn_profiles.iter().all(|p| p.bins.iter().all(|b| b.rate.is_none_or(|x| x == 0.0))));
        assert_eq!(r.fp_budgets[0].true_positive, 3);
        let r = diagnose(&[], &gts, 0.5, &BinSpec::default()).unwrap();
        assert!(r.sensitivity.iter().all(|s| s.spread == 0.0 && s.bins.iter().all(|b| b.f1.is_none_or(|f| f == 0.0))));
    }

    #[test]
    fn budget_partition_and_svg() {
        let gts = vec![video("a", 60.0, vec![gt(0.0, 4.0, 0), gt(10.0, 14.0, 1)])];
        let preds = vec![
            rec("a", 0.0, 4.0, 0, 0.9),
            rec("a", 0.0, 4.0, 0, 0.8),
            rec("a", 10.0, 14.0, 0, 0.7),
            rec("a", 30.0, 34.0, 1, 0.6),
            rec("z", 0.0, 1.0, 1, 0.95),
        ];
        let r = diagnose(&preds, &gts, 0.5, &BinSpec::default()).unwrap();
        for b in &r.fp_budgets {
            assert_eq!(b.true_positive + b.false_positives(), b.considered);
        }
        assert_eq!(r.fp_budgets[0].considered, 2);
        assert_eq!(r.fp_budgets[0].background, 1);
        let b = &r.fp_budgets[2];
        assert_eq!((b.true_positive, b.double_detection, b.wrong_label, b.background), (1, 1, 1, 2));
        let dir = tempfile::tempdir().unwrap();
        let files = write_svgs(&r, dir.path()).unwrap();
        assert_eq!(files.len(), 7);
        let svg = std::fs::read_to_string(dir.path().join("fn_length.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(serde_json::to_string(&r).unwrap().contains("double_detection"));
    }
}
