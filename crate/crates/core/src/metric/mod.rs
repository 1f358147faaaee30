//! Batch-hard triplet mining under the combined global + SFR distance.

mod train;

pub use train::{
    sample_batch, training_gradient, training_step, frozen_objective, FrozenStep, ImageBatch,
    LrSchedule, TrainConfig,
};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SfrError};
use crate::features::{FeatureMatrix, GlobalFeature};
use crate::reconstruction::Dictionary;

/// One encoded sample: identity label plus its two descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: usize,
    pub global: GlobalFeature,
    pub spatial: FeatureMatrix,
}

/// `P` identities with `K` samples each.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    subjects: usize,
    per_subject: usize,
    samples: Vec<Sample>,
}

impl TripletBatch {
    pub fn new(subjects: usize, per_subject: usize, samples: Vec<Sample>) -> Result<Self> {
        validate_pk(subjects, per_subject, samples.iter().map(|s| s.label))?;
        Ok(Self {
            subjects,
            per_subject,
            samples,
        })
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn per_subject(&self) -> usize {
        self.per_subject
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

pub(crate) fn validate_pk(p: usize, k: usize, labels: impl Iterator<Item = usize>) -> Result<()> {
    if p < 2 || k < 2 {
        return Err(SfrError::InvalidInput(format!(
            "a triplet batch needs P >= 2 and K >= 2, got P={p}, K={k}"
        )));
    }
    let mut counts = std::collections::BTreeMap::new();
    let mut n = 0;
    for l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
        n += 1;
    }
    if n != p * k || counts.len() != p || counts.values().any(|&c| c != k) {
        return Err(SfrError::InvalidInput(format!(
            "batch of {n} samples over {} identities is not a {p}x{k} layout",
            counts.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinedTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub positive_distance: f64,
    pub negative_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub total_loss: f64,
    pub active_triplets: usize,
    pub per_triplet_terms: Vec<f64>,
}

pub fn euclidean_distance(a: &GlobalFeature, b: &GlobalFeature) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(SfrError::DimensionMismatch(format!(
            "global features of dim {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok((a.vector() - b.vector()).norm())
}

/// `D(g_a, g_b) + D_s(X_a, X_b)`, with `a` reconstructed from `b`'s
/// spatial features.
pub fn combined_distance(a: &Sample, b: &Sample, beta: f64) -> Result<f64> {
    let global = euclidean_distance(&a.global, &b.global)?;
    let dict = Dictionary::new(&b.spatial, beta)?;
    Ok(global + dict.reconstruct(a.spatial.matrix())?.distance)
}

/// Full matrix of combined distances, `dist[a][o]` = anchor `a` reconstructed
/// from `o`. The diagonal is left at zero and never read by mining.
pub fn pairwise_combined(samples: &[Sample], beta: f64) -> Result<Vec<Vec<f64>>> {
    let columns: Vec<Vec<f64>> = samples
        .par_iter()
        .enumerate()
        .map(|(o, other)| {
            let dict = Dictionary::new(&other.spatial, beta)?;
            samples
                .iter()
                .enumerate()
                .map(|(a, anchor)| {
                    if a == o {
                        return Ok(0.0);
                    }
                    let g = euclidean_distance(&anchor.global, &other.global)?;
                    Ok(g + dict.reconstruct(anchor.spatial.matrix())?.distance)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let n = samples.len();
    Ok((0..n).map(|a| (0..n).map(|o| columns[o][a]).collect()).collect())
}

/// Per anchor: farthest same-label sample and nearest other-label sample.
/// Ties go to the lowest index.
pub fn mine_from_distances(labels: &[usize], dist: &[Vec<f64>]) -> Vec<MinedTriplet> {
    (0..labels.len())
        .filter_map(|a| {
            let mut pos: Option<(usize, f64)> = None;
            let mut neg: Option<(usize, f64)> = None;
            for (o, &d) in dist[a].iter().enumerate() {
                if o == a {
                    continue;
                }
                if labels[o] == labels[a] {
                    if pos.is_none_or(|(_, best)| d > best) {
                        pos = Some((o, d));
                    }
                } else if neg.is_none_or(|(_, best)| d < best) {
                    neg = Some((o, d));
                }
            }
            let ((positive, pd), (negative, nd)) = (pos?, neg?);
            Some(MinedTriplet {
                anchor: a,
                positive,
                negative,
                positive_distance: pd,
                negative_distance: nd,
            })
        })
        .collect()
}

pub fn batch_hard_mine(batch: &TripletBatch, beta: f64) -> Result<Vec<MinedTriplet>> {
    let dist = pairwise_combined(&batch.samples, beta)?;
    Ok(mine_from_distances(&batch.labels(), &dist))
}

/// Hinge terms `max(0, m + d_pos - d_neg)` for mined triplets.
pub fn hinge_report(mined: &[MinedTriplet], margin: f64) -> LossReport {
    let per_triplet_terms: Vec<f64> = mined
        .iter()
        .map(|t| (margin + t.positive_distance - t.negative_distance).max(0.0))
        .collect();
    LossReport {
        total_loss: per_triplet_terms.iter().sum(),
        active_triplets: per_triplet_terms.iter().filter(|&&t| t > 0.0).count(),
        per_triplet_terms,
    }
}

pub fn sfr_triplet_loss(batch: &TripletBatch, beta: f64, margin: f64) -> Result<LossReport> {
    if !(margin >= 0.0) {
        return Err(SfrError::InvalidInput(format!("margin must be >= 0, got {margin}")));
    }
    Ok(hinge_report(&batch_hard_mine(batch, beta)?, margin))
}
