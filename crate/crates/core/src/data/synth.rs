//! Seeded synthetic long-tailed datasets.
//!
//! Background steps are isotropic Gaussian noise; steps inside an instance of
//! class `c` are `signature_c` plus the same noise. Class frequencies follow a
//! Zipf law and instances never overlap.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::annotations::{load_annotations, save_annotations, ActionInstance, VideoAnnotation};
use super::features::{load_features, save_features, FeatureSequence};
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub channels: usize,
    pub zipf_exponent: f64,
    /// Instance duration range in seconds, shared by all classes unless
    /// `class_duration_s` overrides it.
    pub duration_range_s: [f64; 2],
    pub class_duration_s: Option<Vec<[f64; 2]>>,
    pub noise: f64,
    pub videos: usize,
    /// Video length range in feature steps (inclusive).
    pub steps_range: [usize; 2],
    pub instances_per_video: [usize; 2],
    pub fps: f64,
    pub feature_stride: u32,
    /// Seed for the class signatures, kept separate from the per-dataset seed
    /// so that train and test sets share classes.
    pub signature_seed: u64,
    pub signature_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            channels: 16,
            zipf_exponent: 1.0,
            duration_range_s: [1.0, 5.0],
            class_duration_s: None,
            noise: 0.1,
            videos: 20,
            steps_range: [256, 512],
            instances_per_video: [3, 8],
            fps: 28.0,
            feature_stride: 4,
            signature_seed: 0,
            signature_scale: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn step_seconds(&self) -> f64 {
        self.feature_stride as f64 / self.fps
    }

    fn duration_range(&self, class: usize) -> [f64; 2] {
        self.class_duration_s
            .as_ref()
            .and_then(|v| v.get(class).copied())
            .unwrap_or(self.duration_range_s)
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.channels == 0 {
            return Err(Error::config("num_classes and channels must be positive"));
        }
        if self.num_classes > 1 && self.channels < 2 {
            return Err(Error::config("need at least 2 channels to separate classes"));
        }
        if !(self.fps > 0.0) || self.feature_stride == 0 {
            return Err(Error::config("fps and feature_stride must be positive"));
        }
        for c in 0..self.num_classes {
            let [lo, hi] = self.duration_range(c);
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::config(format!("bad duration range for class {c}")));
            }
        }
        if self.steps_range[0] == 0 || self.steps_range[1] < self.steps_range[0] {
            return Err(Error::config("bad steps_range"));
        }
        if self.instances_per_video[1] < self.instances_per_video[0] {
            return Err(Error::config("bad instances_per_video"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("noise must be non-negative"));
        }
        Ok(())
    }

    /// Zipf class probabilities `p_c ∝ (c + 1)^-s`.
    pub fn class_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.num_classes)
            .map(|c| ((c + 1) as f64).powf(-self.zipf_exponent))
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Video {
    pub annotation: VideoAnnotation,
    /// `C×T` features.
    pub features: Grid,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub signatures: Vec<Vec<f64>>,
    pub videos: Vec<Video>,
}

impl SynthDataset {
    pub fn annotations(&self) -> Vec<VideoAnnotation> {
        self.videos.iter().map(|v| v.annotation.clone()).collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn signatures(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.signature_seed);
    let dist = Normal::new(0.0, spec.signature_scale).expect("finite scale");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    while out.len() < spec.num_classes {
        let cand: Vec<f64> = (0..spec.channels).map(|_| dist.sample(&mut rng)).collect();
        if out.iter().all(|s| cosine(s, &cand).abs() < 0.9) {
            out.push(cand);
        }
    }
    out
}

const PACKING_ATTEMPTS: usize = 100;

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let sigs = signatures(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let classes = WeightedIndex::new(spec.class_weights()).expect("positive weights");
    let step_s = spec.step_seconds();

    let mut videos = Vec::with_capacity(spec.videos);
    for v in 0..spec.videos {
        let t = rng.random_range(spec.steps_range[0]..=spec.steps_range[1]);
        let n = rng.random_range(spec.instances_per_video[0]..=spec.instances_per_video[1]);
        let mut plan = None;
        for _ in 0..PACKING_ATTEMPTS {
            let draws: Vec<(usize, usize)> = (0..n)
                .map(|_| {
                    let c = classes.sample(&mut rng);
                    let [lo, hi] = spec.duration_range(c);
                    let secs = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                    (c, ((secs / step_s).round() as usize).max(1))
                })
                .collect();
            if draws.iter().map(|d| d.1).sum::<usize>() <= t {
                plan = Some(draws);
                break;
            }
        }
        let draws = plan.ok_or_else(|| Error::Infeasible {
            video: v,
            message: format!("{n} instances do not fit into {t} steps"),
        })?;

        let slack = t - draws.iter().map(|d| d.1).sum::<usize>();
        let cuts: Vec<f64> = (0..=n).map(|_| rng.random::<f64>() + 1e-9).collect();
        let total: f64 = cuts.iter().sum();
        let gaps: Vec<usize> = cuts
            .iter()
            .map(|c| ((c / total) * slack as f64).floor() as usize)
            .collect();

        let mut features = Grid::zeros(&[spec.channels, t]);
        if spec.noise > 0.0 {
            for x in features.data_mut() {
                *x = noise.sample(&mut rng);
            }
        }
        let mut instances = Vec::with_capacity(n);
        let mut cursor = 0usize;
        for (i, &(label, len)) in draws.iter().enumerate() {
            cursor += gaps[i];
            let (start, end) = (cursor, cursor + len);
            for ch in 0..spec.channels {
                let row = features.row_mut(ch);
                for x in &mut row[start..end] {
                    *x += sigs[label][ch];
                }
            }
            instances.push(ActionInstance::new(
                start as f64 * step_s,
                end as f64 * step_s,
                label,
            ));
            cursor = end;
        }
        let annotation = VideoAnnotation {
            video_id: format!("video_{seed}_{v:04}"),
            fps: spec.fps,
            feature_stride: spec.feature_stride,
            duration_s: t as f64 * step_s,
            instances,
        };
        debug_assert!(annotation.validate().is_ok());
        videos.push(Video {
            annotation,
            features,
        });
    }
    Ok(SynthDataset {
        spec: spec.clone(),
        signatures: sigs,
        videos,
    })
}

/// Fraction of ground-truth segments whose mean feature is closest to their
/// own class signature.
pub fn nearest_signature_accuracy(videos: &[Video], signatures: &[Vec<f64>]) -> f64 {
    let (mut correct, mut total) = (0usize, 0usize);
    for v in videos {
        let step_s = v.annotation.step_seconds();
        let c = v.features.rows();
        for inst in &v.annotation.instances {
            let a = (inst.start_s / step_s).round() as usize;
            let b = ((inst.end_s / step_s).round() as usize).min(v.features.cols());
            if b <= a {
                continue;
            }
            let mean: Vec<f64> = (0..c)
                .map(|ch| v.features.row(ch)[a..b].iter().sum::<f64>() / (b - a) as f64)
                .collect();
            let best = signatures
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let d: f64 = s.iter().zip(&mean).map(|(x, y)| (x - y) * (x - y)).sum();
                    (k, d)
                })
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .map(|x| x.0);
            total += 1;
            if best == Some(inst.label) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    }
}

/// Writes `gt.jsonl` and `features/<video_id>.mgfb` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, videos: &[Video]) -> Result<()> {
    let dir = dir.as_ref();
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let anns: Vec<VideoAnnotation> = videos.iter().map(|v| v.annotation.clone()).collect();
    save_annotations(dir.join("gt.jsonl"), &anns)?;
    for v in videos {
        save_features(
            feat_dir.join(format!("{}.mgfb", v.annotation.video_id)),
            &FeatureSequence::from_grid(&v.features),
        )?;
    }
    Ok(())
}

/// Reads a directory written by [`write_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Video>> {
    let dir = dir.as_ref();
    load_dataset_with(dir, load_annotations(dir.join("gt.jsonl"))?)
}

/// Pairs `anns` with the feature files under `dir/features`.
pub fn load_dataset_with(dir: impl AsRef<Path>, anns: Vec<VideoAnnotation>) -> Result<Vec<Video>> {
    let dir = dir.as_ref();
    anns.into_iter()
        .map(|annotation| {
            let f = load_features(dir.join("features").join(format!("{}.mgfb", annotation.video_id)))?;
            Ok(Video {
                features: f.to_grid(),
                annotation,
            })
        })
        .collect()
}
