use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::RetrievalRanking;
use crate::error::{Result, SfrError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Hit rate at ranks `1..=R`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub per_probe_ap: Vec<f64>,
}

/// The JSON summary written next to rankings and CMC files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub rank3: f64,
    pub rank5: f64,
    pub rank10: f64,
}

impl EvalReport {
    /// CMC at rank `k`, saturating at the gallery size.
    pub fn rank(&self, k: usize) -> f64 {
        match self.cmc.len() {
            0 => 0.0,
            n => self.cmc[k.clamp(1, n) - 1],
        }
    }

    pub fn summary(&self) -> Summary {
        Summary {
            map: self.map,
            rank1: self.rank(1),
            rank3: self.rank(3),
            rank5: self.rank(5),
            rank10: self.rank(10),
        }
    }
}

/// 1-based positions of the probe's true matches within its ranking.
fn match_positions(
    ranking: &RetrievalRanking,
    probe_subjects: &HashMap<String, String>,
    entry_subjects: &HashMap<String, String>,
) -> Result<Vec<usize>> {
    let subject = probe_subjects
        .get(&ranking.probe_id)
        .ok_or_else(|| SfrError::Unmatched(format!("probe {:?} has no truth entry", ranking.probe_id)))?;
    let mut positions = Vec::new();
    for (i, s) in ranking.scored.iter().enumerate() {
        let entry_subject = entry_subjects
            .get(&s.entry_id)
            .ok_or_else(|| SfrError::Unmatched(format!("gallery entry {:?} is unknown", s.entry_id)))?;
        if entry_subject == subject {
            positions.push(i + 1);
        }
    }
    if positions.is_empty() {
        return Err(SfrError::Unmatched(format!(
            "probe {:?} (subject {subject:?}) has no true match in the gallery",
            ranking.probe_id
        )));
    }
    Ok(positions)
}

/// `cmc[k-1]` = fraction of probes whose first true match is at rank `<= k`.
pub fn cmc_curve(
    rankings: &[RetrievalRanking],
    probe_subjects: &HashMap<String, String>,
    entry_subjects: &HashMap<String, String>,
) -> Result<Vec<f64>> {
    if rankings.is_empty() {
        return Err(SfrError::InvalidInput("no rankings to evaluate".into()));
    }
    let depth = rankings.iter().map(|r| r.scored.len()).max().unwrap_or(0);
    let mut hits = vec![0usize; depth];
    for r in rankings {
        let first = match_positions(r, probe_subjects, entry_subjects)?[0];
        hits[first - 1] += 1;
    }
    let n = rankings.len() as f64;
    let mut acc = 0;
    Ok(hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect())
}

/// Mean over true-match positions `p_i` of `i / p_i`.
pub fn average_precision(positions: &[usize]) -> f64 {
    positions
        .iter()
        .enumerate()
        .map(|(i, &p)| (i + 1) as f64 / p as f64)
        .sum::<f64>()
        / positions.len() as f64
}

pub fn mean_average_precision(
    rankings: &[RetrievalRanking],
    probe_subjects: &HashMap<String, String>,
    entry_subjects: &HashMap<String, String>,
) -> Result<f64> {
    Ok(evaluate(rankings, probe_subjects, entry_subjects)?.map)
}

pub fn evaluate(
    rankings: &[RetrievalRanking],
    probe_subjects: &HashMap<String, String>,
    entry_subjects: &HashMap<String, String>,
) -> Result<EvalReport> {
    let cmc = cmc_curve(rankings, probe_subjects, entry_subjects)?;
    let per_probe_ap = rankings
        .iter()
        .map(|r| Ok(average_precision(&match_positions(r, probe_subjects, entry_subjects)?)))
        .collect::<Result<Vec<_>>>()?;
    let map = per_probe_ap.iter().sum::<f64>() / per_probe_ap.len() as f64;
    Ok(EvalReport {
        cmc,
        map,
        per_probe_ap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ScoredEntry;

    fn ranking(probe: &str, entries: &[&str]) -> RetrievalRanking {
        RetrievalRanking {
            probe_id: probe.into(),
            scored: entries
                .iter()
                .enumerate()
                .map(|(i, e)| ScoredEntry {
                    entry_id: (*e).into(),
                    global_distance: i as f64,
                    sfr_distance: i as f64,
                    fused: i as f64,
                })
                .collect(),
        }
    }

    fn map_of(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(a, b)| ((*a).into(), (*b).into())).collect()
    }

    #[test]
    fn rank_two_single_match() {
        let entries = map_of(&[("a", "x"), ("b", "y"), ("c", "z")]);
        let probes = map_of(&[("p", "y")]);
        let r = [ranking("p", &["a", "b", "c"])];
        assert_eq!(cmc_curve(&r, &probes, &entries).unwrap(), vec![0.0, 1.0, 1.0]);
        assert_eq!(mean_average_precision(&r, &probes, &entries).unwrap(), 0.5);
    }

    #[test]
    fn two_probe_map() {
        let entries = map_of(&[("a", "x"), ("b", "y")]);
        let probes = map_of(&[("p", "x"), ("q", "x")]);
        let r = [ranking("p", &["a", "b"]), ranking("q", &["b", "a"])];
        let report = evaluate(&r, &probes, &entries).unwrap();
        assert_eq!(report.per_probe_ap, vec![1.0, 0.5]);
        assert_eq!(report.map, 0.75);
        assert_eq!(report.cmc, vec![0.5, 1.0]);
    }

    #[test]
    fn multi_shot_average_precision() {
        // True matches at positions 1 and 3: (1/1 + 2/3) / 2.
        assert!((average_precision(&[1, 3]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn missing_truth_and_no_match() {
        let entries = map_of(&[("a", "x")]);
        let r = [ranking("p", &["a"])];
        assert!(matches!(cmc_curve(&r, &map_of(&[]), &entries), Err(SfrError::Unmatched(_))));
        assert!(matches!(
            cmc_curve(&r, &map_of(&[("p", "nobody")]), &entries),
            Err(SfrError::Unmatched(_))
        ));
    }

    #[test]
    fn summary_saturates_at_gallery_size() {
        let report = EvalReport {
            cmc: vec![0.5, 0.75, 1.0],
            map: 0.6,
            per_probe_ap: vec![],
        };
        let s = report.summary();
        assert_eq!((s.rank1, s.rank3, s.rank5, s.rank10), (0.5, 1.0, 1.0, 1.0));
    }
}
