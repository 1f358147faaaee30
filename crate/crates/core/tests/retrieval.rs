use std::collections::HashMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sfr_core::features::l2_normalize_columns;
use sfr_core::reconstruction::sfr_distance;
use sfr_core::retrieval::{
    average_precision, build_gallery, build_subject_gallery, cmc_curve, evaluate, match_all,
    match_probe, mean_average_precision, read_manifest, read_rankings, write_cmc_csv,
    write_manifest, write_rankings, GalleryEntry, ManifestEntry, Probe, RetrievalRanking,
    ScoredEntry,
};
use sfr_core::{FeatureMatrix, GlobalFeature, SfrError};

fn features(rng: &mut ChaCha8Rng, d: usize, n: usize) -> (GlobalFeature, FeatureMatrix) {
    let g = DMatrix::<f64>::from_fn(d, 1, |_, _| StandardNormal.sample(rng));
    let x = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(rng));
    (
        GlobalFeature::new(g.column(0).into()).unwrap(),
        l2_normalize_columns(&FeatureMatrix::new(x).unwrap()),
    )
}

fn random_gallery(seed: u64, entries: usize, subjects: usize) -> Vec<GalleryEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..entries)
        .map(|i| {
            let (global, spatial) = features(&mut rng, 4, 3 + i % 4);
            GalleryEntry {
                entry_id: format!("e{i}"),
                subject_id: format!("s{}", i % subjects),
                global,
                spatial,
            }
        })
        .collect()
}

fn random_probes(seed: u64, n: usize) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (global, spatial) = features(&mut rng, 4, 5);
            Probe {
                probe_id: format!("p{i}"),
                global,
                spatial,
            }
        })
        .collect()
}

fn ranking(probe: &str, ids: &[&str]) -> RetrievalRanking {
    RetrievalRanking {
        probe_id: probe.into(),
        scored: ids
            .iter()
            .enumerate()
            .map(|(i, id)| ScoredEntry {
                entry_id: id.to_string(),
                global_distance: i as f64,
                sfr_distance: 0.5 * i as f64,
                fused: i as f64,
            })
            .collect(),
    }
}

fn map_of(pairs: &[(&str, &str)]) -> HashMap<String, String> {
    pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

#[test]
fn gallery_construction() {
    let g = build_gallery(random_gallery(1, 1, 1), 0.7, 0.001).unwrap();
    assert_eq!(g.len(), 1);

    let mut dup = random_gallery(1, 3, 3);
    dup[2].entry_id = "e0".into();
    assert!(build_gallery(dup, 0.7, 0.001).is_err());

    let mut mixed = random_gallery(1, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (g5, x5) = features(&mut rng, 5, 2);
    mixed[1].global = g5;
    mixed[1].spatial = x5;
    assert!(matches!(build_gallery(mixed, 0.7, 0.001), Err(SfrError::DimensionMismatch(_))));

    assert!(build_gallery(Vec::new(), 0.7, 0.001).is_err());
    assert!(build_gallery(random_gallery(1, 2, 2), 1.5, 0.001).is_err());

    let entries = random_gallery(2, 100, 10);
    let ids: Vec<String> = entries.iter().map(|e| e.entry_id.clone()).collect();
    let g = build_gallery(entries, 0.7, 0.001).unwrap();
    let kept: Vec<String> = g.entries().iter().map(|e| e.entry_id.clone()).collect();
    assert_eq!(ids, kept);
}

#[test]
fn fusion_is_linear_and_sorted() {
    let gallery = build_gallery(random_gallery(3, 30, 6), 0.7, 0.001).unwrap();
    for probe in random_probes(4, 5) {
        let r = match_probe(&probe, &gallery).unwrap();
        assert_eq!(r.scored.len(), 30);
        for w in r.scored.windows(2) {
            assert!(w[0].fused <= w[1].fused);
        }
        for s in &r.scored {
            let entry = gallery.entries().iter().find(|e| e.entry_id == s.entry_id).unwrap();
            let d = (probe.global.vector() - entry.global.vector()).norm();
            let rr = sfr_distance(&probe.spatial, &entry.spatial, 0.001).unwrap().distance;
            assert!((s.global_distance - d).abs() < 1e-12);
            assert!((s.sfr_distance - rr).abs() < 1e-12);
            assert_eq!(s.fused, 0.7 * s.global_distance + (1.0 - 0.7) * s.sfr_distance);
        }
    }
}

#[test]
fn alpha_endpoints_reduce_to_single_distances() {
    let entries = random_gallery(5, 50, 10);
    let gallery = build_gallery(entries, 1.0, 0.001).unwrap();
    for probe in random_probes(6, 20) {
        let d: Vec<f64> = gallery
            .entries()
            .iter()
            .map(|e| (probe.global.vector() - e.global.vector()).norm())
            .collect();
        let r: Vec<f64> = gallery
            .entries()
            .iter()
            .map(|e| sfr_distance(&probe.spatial, &e.spatial, 0.001).unwrap().distance)
            .collect();
        let pos = |rank: &RetrievalRanking| -> Vec<usize> {
            rank.scored.iter().map(|s| s.entry_id[1..].parse().unwrap()).collect()
        };
        assert_eq!(pos(&match_probe(&probe, &gallery).unwrap()), argsort(&d));
        let g0 = gallery.with_alpha(0.0).unwrap();
        assert_eq!(pos(&match_probe(&probe, &g0).unwrap()), argsort(&r));
    }
}

#[test]
fn self_match_ranks_first() {
    let entries = random_gallery(7, 20, 20);
    let gallery = build_gallery(entries.clone(), 0.7, 0.001).unwrap();
    for e in &entries {
        let probe = Probe {
            probe_id: e.entry_id.clone(),
            global: e.global.clone(),
            spatial: e.spatial.clone(),
        };
        assert_eq!(match_probe(&probe, &gallery).unwrap().best().unwrap().entry_id, e.entry_id);
    }
}

#[test]
fn probe_dimension_mismatch() {
    let gallery = build_gallery(random_gallery(1, 3, 3), 0.7, 0.001).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (global, spatial) = features(&mut rng, 6, 2);
    let probe = Probe {
        probe_id: "p".into(),
        global,
        spatial,
    };
    assert!(matches!(match_probe(&probe, &gallery), Err(SfrError::DimensionMismatch(_))));
}

#[test]
fn parallel_matching_is_deterministic() {
    let gallery = build_gallery(random_gallery(8, 25, 5), 0.7, 0.001).unwrap();
    let probes = random_probes(9, 40);
    let one = match_all(&probes, &gallery, 1).unwrap();
    for workers in [2, 3, 8] {
        assert_eq!(match_all(&probes, &gallery, workers).unwrap(), one);
    }
}

#[test]
fn subject_gallery_merges_entries() {
    let entries = random_gallery(10, 6, 2);
    let g = build_subject_gallery(entries.clone(), 0.7, 0.001).unwrap();
    assert_eq!(g.len(), 2);
    assert_eq!(g.entries()[0].entry_id, "s0");
    let count: usize = entries.iter().filter(|e| e.subject_id == "s0").map(|e| e.spatial.count()).sum();
    assert_eq!(g.entries()[0].spatial.count(), count);
    let mean = (entries[0].global.vector() + entries[2].global.vector() + entries[4].global.vector()) / 3.0;
    assert!((g.entries()[0].global.vector() - mean).amax() < 1e-12);
}

#[test]
fn cmc_examples() {
    let entries = map_of(&[("a", "x"), ("b", "y"), ("c", "z")]);
    let cmc = cmc_curve(&[ranking("p", &["b", "a", "c"])], &map_of(&[("p", "x")]), &entries).unwrap();
    assert_eq!(cmc, vec![0.0, 1.0, 1.0]);

    let perfect = [ranking("p", &["a", "b", "c"]), ranking("q", &["b", "a", "c"])];
    let truth = map_of(&[("p", "x"), ("q", "y")]);
    assert_eq!(cmc_curve(&perfect, &truth, &entries).unwrap(), vec![1.0; 3]);
    assert_eq!(mean_average_precision(&perfect, &truth, &entries).unwrap(), 1.0);

    assert!(matches!(
        cmc_curve(&[ranking("p", &["b", "c"])], &map_of(&[("p", "x")]), &entries),
        Err(SfrError::Unmatched(_))
    ));
    assert!(matches!(
        cmc_curve(&[ranking("r", &["a"])], &map_of(&[("p", "x")]), &entries),
        Err(SfrError::Unmatched(_))
    ));
}

#[test]
fn average_precision_examples() {
    assert_eq!(average_precision(&[1]), 1.0);
    assert_eq!(average_precision(&[2]), 0.5);
    assert!((average_precision(&[1, 3]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);

    let entries = map_of(&[("a", "x"), ("b", "y")]);
    let rankings = [ranking("p", &["a", "b"]), ranking("q", &["a", "b"])];
    let truth = map_of(&[("p", "x"), ("q", "y")]);
    assert_eq!(mean_average_precision(&rankings, &truth, &entries).unwrap(), 0.75);
}

#[test]
fn cmc_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gallery = build_gallery(random_gallery(13, 12, 4), 0.7, 0.001).unwrap();
    let probes = random_probes(14, 5);
    let rankings = match_all(&probes, &gallery, 2).unwrap();
    let subjects = gallery.subject_map();
    let truth: HashMap<String, String> = probes
        .iter()
        .map(|p| {
            let s: u64 = rand::Rng::random_range(&mut rng, 0..4);
            (p.probe_id.clone(), format!("s{s}"))
        })
        .collect();
    let report = evaluate(&rankings, &truth, &subjects).unwrap();
    for k in 1..=12 {
        let hits = rankings
            .iter()
            .filter(|r| r.scored[..k].iter().any(|s| subjects[&s.entry_id] == truth[&r.probe_id]))
            .count();
        assert_eq!(report.rank(k), hits as f64 / 5.0);
    }
    let s = report.summary();
    assert_eq!(s.rank1, report.cmc[0]);
    assert_eq!(s.rank10, report.cmc[9]);
    let json = serde_json::to_value(s).unwrap();
    assert!(json.get("mAP").is_some() && json.get("rank5").is_some());
}

#[test]
fn file_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = vec![
        ManifestEntry {
            entry_id: "a".into(),
            subject_id: "x".into(),
            path: Some("a.sfrf".into()),
        },
        ManifestEntry {
            entry_id: "b".into(),
            subject_id: "y".into(),
            path: None,
        },
    ];
    let p = dir.path().join("m.jsonl");
    write_manifest(&manifest, &p).unwrap();
    assert_eq!(read_manifest(&p).unwrap(), manifest);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with(r#"{"entryId":"a","subjectId":"x","path":"a.sfrf"}"#));
    std::fs::write(&p, "{not json\n").unwrap();
    assert!(matches!(read_manifest(&p), Err(SfrError::Format(_))));

    let gallery = build_gallery(random_gallery(15, 4, 2), 0.7, 0.001).unwrap();
    let rankings = match_all(&random_probes(16, 3), &gallery, 1).unwrap();
    let rp = dir.path().join("r.csv");
    write_rankings(&rankings, &rp).unwrap();
    let header = std::fs::read_to_string(&rp).unwrap();
    assert!(header.starts_with("probeId,rank,entryId,d,r,s\n"));
    assert_eq!(read_rankings(&rp).unwrap(), rankings);

    let cp = dir.path().join("cmc.csv");
    write_cmc_csv(&[0.5, 1.0], &cp).unwrap();
    assert_eq!(std::fs::read_to_string(&cp).unwrap(), "rank,cmc\n1,0.5\n2,1\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cmc_is_monotone_and_map_bounded(seed in any::<u64>(), n in 1usize..8) {
        let gallery = build_gallery(random_gallery(seed, 10, 3), 0.5, 0.001).unwrap();
        let probes = random_probes(seed.wrapping_add(1), n);
        let rankings = match_all(&probes, &gallery, 1).unwrap();
        let truth: HashMap<String, String> =
            probes.iter().enumerate().map(|(i, p)| (p.probe_id.clone(), format!("s{}", i % 3))).collect();
        let report = evaluate(&rankings, &truth, &gallery.subject_map()).unwrap();
        for w in report.cmc.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        prop_assert_eq!(*report.cmc.last().unwrap(), 1.0);
        prop_assert!(report.map > 0.0 && report.map <= 1.0);
    }
}
