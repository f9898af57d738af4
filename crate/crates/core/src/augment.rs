//! Frequency-based annotation replication for rare categories.
//!
//! A category with `Z_c < alpha` instances is replicated
//! `R_c = floor(log2(alpha / Z_c)) + 1` times in total (the original plus
//! `R_c - 1` copies flagged as duplicates). Only annotation records change.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::VideoAnnotation;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Minimum instance threshold.
    pub alpha: u64,
    /// Orders the appended copies within each video.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { alpha: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryPlan {
    pub label: usize,
    pub count: u64,
    pub factor: u64,
    pub rare: bool,
    /// No instances, nothing to replicate.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub alpha: u64,
    pub categories: Vec<CategoryPlan>,
}

impl AugmentPlan {
    pub fn factor(&self, label: usize) -> u64 {
        self.categories.get(label).map_or(1, |c| c.factor)
    }
}

/// Instances per category; labels outside `0..num_classes` are rejected.
pub fn count_instances(annotations: &[VideoAnnotation], num_classes: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; num_classes];
    for inst in annotations.iter().flat_map(|a| &a.instances) {
        match counts.get_mut(inst.label) {
            Some(c) => *c += 1,
            None => {
                return Err(Error::UnknownLabel {
                    label: inst.label,
                    num_classes,
                })
            }
        }
    }
    Ok(counts)
}

/// Total multiplicity for a category with `count` instances, or `None` when
/// the category is empty. Uses exact integer arithmetic: the floor of
/// `log2(alpha / count)` is the largest `m` with `count · 2^m <= alpha`.
pub fn replication_factor(alpha: u64, count: u64) -> Option<u64> {
    if count == 0 {
        return None;
    }
    if count >= alpha {
        return Some(1);
    }
    let mut m = 0u64;
    while count.checked_shl((m + 1) as u32).is_some_and(|v| v >> (m + 1) == count && v <= alpha) {
        m += 1;
    }
    Some(m + 1)
}

pub fn plan(counts: &[u64], alpha: u64) -> AugmentPlan {
    AugmentPlan {
        alpha,
        categories: counts
            .iter()
            .enumerate()
            .map(|(label, &count)| {
                let factor = replication_factor(alpha, count);
                CategoryPlan {
                    label,
                    count,
                    factor: factor.unwrap_or(1),
                    rare: count > 0 && count < alpha,
                    skipped: factor.is_none(),
                }
            })
            .collect(),
    }
}

pub fn augment_annotations(
    annotations: &[VideoAnnotation],
    cfg: &AugmentConfig,
    num_classes: usize,
) -> Result<(Vec<VideoAnnotation>, AugmentPlan)> {
    if cfg.alpha < 1 {
        return Err(Error::config("alpha must be at least 1"));
    }
    for (i, a) in annotations.iter().enumerate() {
        a.validate()
            .map_err(|message| Error::Annotation { record: i + 1, message })?;
    }
    let counts = count_instances(annotations, num_classes)?;
    let plan = plan(&counts, cfg.alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = annotations
        .iter()
        .map(|video| {
            let mut copies = Vec::new();
            for inst in &video.instances {
                for _ in 1..plan.factor(inst.label) {
                    let mut c = inst.clone();
                    c.duplicate = true;
                    copies.push(c);
                }
            }
            copies.shuffle(&mut rng);
            let mut v = video.clone();
            v.instances.extend(copies);
            v
        })
        .collect();
    Ok((out, plan))
}
