//! Gallery matching with fused global and reconstruction distances, and
//! CMC / mAP evaluation of the resulting rankings.

mod eval;
mod io;

pub use eval::{cmc_curve, evaluate, mean_average_precision, average_precision, EvalReport, Summary};
pub use io::{
    read_manifest, read_rankings, write_cmc_csv, write_manifest, write_rankings, ManifestEntry,
};

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::error::{Result, SfrError};
use crate::features::{FeatureMatrix, GlobalFeature};
use crate::reconstruction::Dictionary;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub entry_id: String,
    pub subject_id: String,
    pub global: GlobalFeature,
    pub spatial: FeatureMatrix,
}

/// Immutable gallery with every dictionary factored up front.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    entries: Vec<GalleryEntry>,
    dictionaries: Vec<Dictionary>,
    alpha: f64,
    beta: f64,
}

/// Builds a gallery, one dictionary per entry, preserving input order.
pub fn build_gallery(entries: Vec<GalleryEntry>, alpha: f64, beta: f64) -> Result<GalleryIndex> {
    if entries.is_empty() {
        return Err(SfrError::InvalidInput("gallery is empty".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SfrError::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let dim = entries[0].global.dim();
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.entry_id.as_str()) {
            return Err(SfrError::InvalidInput(format!("duplicate entry id {:?}", e.entry_id)));
        }
        if e.global.dim() != dim || e.spatial.dim() != dim {
            return Err(SfrError::DimensionMismatch(format!(
                "entry {:?} has dims ({}, {}), gallery dim is {dim}",
                e.entry_id,
                e.global.dim(),
                e.spatial.dim()
            )));
        }
    }
    let dictionaries = entries
        .par_iter()
        .map(|e| Dictionary::new(&e.spatial, beta))
        .collect::<Result<_>>()?;
    Ok(GalleryIndex {
        entries,
        dictionaries,
        alpha,
        beta,
    })
}

/// Gallery with one entry per subject: spatial features of all the
/// subject's images are concatenated into a single dictionary and the
/// global features averaged. Subjects keep first-appearance order and the
/// subject id doubles as the entry id.
pub fn build_subject_gallery(entries: Vec<GalleryEntry>, alpha: f64, beta: f64) -> Result<GalleryIndex> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<GalleryEntry>> = HashMap::new();
    for e in entries {
        if !groups.contains_key(&e.subject_id) {
            order.push(e.subject_id.clone());
        }
        groups.entry(e.subject_id.clone()).or_default().push(e);
    }
    let merged = order
        .into_iter()
        .map(|subject| {
            let group = &groups[&subject];
            let dim = group[0].global.dim();
            if let Some(bad) = group.iter().find(|e| e.global.dim() != dim) {
                return Err(SfrError::DimensionMismatch(format!(
                    "entry {:?} has global dim {}, expected {dim}",
                    bad.entry_id,
                    bad.global.dim()
                )));
            }
            let mean = group
                .iter()
                .fold(nalgebra::DVector::zeros(dim), |acc, e| acc + e.global.vector())
                / group.len() as f64;
            let parts: Vec<&FeatureMatrix> = group.iter().map(|e| &e.spatial).collect();
            Ok(GalleryEntry {
                entry_id: subject.clone(),
                subject_id: subject,
                global: GlobalFeature::new(mean)?,
                spatial: FeatureMatrix::concat(&parts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    build_gallery(merged, alpha, beta)
}

impl GalleryIndex {
    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.entries[0].global.dim()
    }

    /// Same gallery and dictionaries under a different fusion weight.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SfrError::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }

    /// `entryId -> subjectId`.
    pub fn subject_map(&self) -> HashMap<String, String> {
        self.entries
            .iter()
            .map(|e| (e.entry_id.clone(), e.subject_id.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub probe_id: String,
    pub global: GlobalFeature,
    pub spatial: FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub entry_id: String,
    /// Global Euclidean distance.
    pub global_distance: f64,
    /// Reconstruction distance of the probe from the entry's dictionary.
    pub sfr_distance: f64,
    pub fused: f64,
}

/// Gallery entries sorted by ascending fused distance, ties in gallery order.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRanking {
    pub probe_id: String,
    pub scored: Vec<ScoredEntry>,
}

impl RetrievalRanking {
    pub fn best(&self) -> Option<&ScoredEntry> {
        self.scored.first()
    }
}

/// Scores every gallery entry with `s = alpha * d + (1 - alpha) * r`.
pub fn match_probe(probe: &Probe, gallery: &GalleryIndex) -> Result<RetrievalRanking> {
    if probe.global.dim() != gallery.dim() || probe.spatial.dim() != gallery.dim() {
        return Err(SfrError::DimensionMismatch(format!(
            "probe {:?} has dims ({}, {}), gallery dim is {}",
            probe.probe_id,
            probe.global.dim(),
            probe.spatial.dim(),
            gallery.dim()
        )));
    }
    let alpha = gallery.alpha;
    let mut scored = gallery
        .entries
        .iter()
        .zip(&gallery.dictionaries)
        .map(|(entry, dict)| {
            let d = (probe.global.vector() - entry.global.vector()).norm();
            let r = dict.reconstruct(probe.spatial.matrix())?.distance;
            Ok(ScoredEntry {
                entry_id: entry.entry_id.clone(),
                global_distance: d,
                sfr_distance: r,
                fused: alpha * d + (1.0 - alpha) * r,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.fused.total_cmp(&b.fused));
    Ok(RetrievalRanking {
        probe_id: probe.probe_id.clone(),
        scored,
    })
}

/// Matches every probe on a pool of `workers` threads; output follows probe
/// order regardless of the worker count.
pub fn match_all(probes: &[Probe], gallery: &GalleryIndex, workers: usize) -> Result<Vec<RetrievalRanking>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SfrError::InvalidInput(format!("cannot start worker pool: {e}")))?;
    pool.install(|| probes.par_iter().map(|p| match_probe(p, gallery)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn entry(id: &str, subject: &str, g: &[f64], cols: &[f64]) -> GalleryEntry {
        let dim = g.len();
        GalleryEntry {
            entry_id: id.into(),
            subject_id: subject.into(),
            global: GlobalFeature::from_slice(g).unwrap(),
            spatial: FeatureMatrix::new(DMatrix::from_column_slice(dim, cols.len() / dim, cols)).unwrap(),
        }
    }

    #[test]
    fn singleton_and_duplicate() {
        let e = entry("a", "s", &[1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(build_gallery(vec![e.clone()], 0.7, 0.001).unwrap().len(), 1);
        assert!(build_gallery(vec![e.clone(), e.clone()], 0.7, 0.001).is_err());
        assert!(build_gallery(vec![], 0.7, 0.001).is_err());
        assert!(build_gallery(vec![e], 1.5, 0.001).is_err());
    }

    #[test]
    fn dim_mismatch_rejected() {
        let a = entry("a", "s", &[1.0, 0.0], &[1.0, 0.0]);
        let b = entry("b", "s", &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        assert!(matches!(build_gallery(vec![a, b], 0.7, 0.001), Err(SfrError::DimensionMismatch(_))));
    }

    #[test]
    fn self_match_ranks_first_and_fusion_is_exact() {
        let entries = vec![
            entry("a", "1", &[1.0, 0.0], &[0.6, 0.8, 1.0, 0.0]),
            entry("b", "2", &[0.0, 1.0], &[0.0, 1.0, 0.8, 0.6]),
            entry("c", "3", &[0.5, 0.5], &[0.6, 0.8, -0.6, 0.8]),
        ];
        let gallery = build_gallery(entries.clone(), 0.7, 0.001).unwrap();
        let probe = Probe {
            probe_id: "p".into(),
            global: entries[1].global.clone(),
            spatial: entries[1].spatial.clone(),
        };
        let ranking = match_probe(&probe, &gallery).unwrap();
        assert_eq!(ranking.best().unwrap().entry_id, "b");
        for s in &ranking.scored {
            assert_eq!(s.fused, 0.7 * s.global_distance + (1.0 - 0.7) * s.sfr_distance);
        }
        assert!(ranking.scored.windows(2).all(|w| w[0].fused <= w[1].fused));
    }

    #[test]
    fn subject_gallery_concatenates() {
        let entries = vec![
            entry("a1", "1", &[1.0, 0.0], &[1.0, 0.0]),
            entry("b1", "2", &[0.0, 1.0], &[0.0, 1.0]),
            entry("a2", "1", &[3.0, 0.0], &[0.0, 1.0, 1.0, 1.0]),
        ];
        let g = build_subject_gallery(entries, 0.5, 0.01).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.entries()[0].entry_id, "1");
        assert_eq!(g.entries()[0].spatial.count(), 3);
        assert_eq!(g.entries()[0].global.as_slice(), &[2.0, 0.0]);
    }
}
