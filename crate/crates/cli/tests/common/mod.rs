#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sfr_core::features::save_feature_map;
use sfr_core::retrieval::{write_manifest, ManifestEntry};
use sfr_core::SpatialFeatureMap;

pub fn sfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfr"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn noisy_map(base: &[f64], c: usize, h: usize, w: usize, noise: f64, rng: &mut ChaCha8Rng) -> SpatialFeatureMap {
    let values = base
        .iter()
        .map(|v| v + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SpatialFeatureMap::new(c, h, w, values).unwrap()
}

pub struct Dataset {
    pub gallery: PathBuf,
    pub probes: PathBuf,
}

/// `subjects` identity patterns on a `c`x8x4 grid; each subject gets
/// `per_subject` gallery maps, and probes cycle through the subjects.
pub fn write_dataset(dir: &Path, subjects: usize, per_subject: usize, probes: usize, c: usize, seed: u64) -> Dataset {
    let (h, w) = (8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<Vec<f64>> = (0..subjects)
        .map(|_| (0..c * h * w).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect())
        .collect();
    std::fs::create_dir_all(dir.join("maps")).unwrap();
    let mut gallery = Vec::new();
    for (s, base) in bases.iter().enumerate() {
        for j in 0..per_subject {
            let name = format!("maps/g{s}_{j}.sfrf");
            save_feature_map(&noisy_map(base, c, h, w, 0.3, &mut rng), dir.join(&name)).unwrap();
            gallery.push(ManifestEntry {
                entry_id: format!("g{s}_{j}"),
                subject_id: format!("s{s}"),
                path: Some(name),
            });
        }
    }
    let mut probe_entries = Vec::new();
    for i in 0..probes {
        let s = i % subjects;
        let name = format!("maps/p{i}.sfrf");
        save_feature_map(&noisy_map(&bases[s], c, h, w, 0.5, &mut rng), dir.join(&name)).unwrap();
        probe_entries.push(ManifestEntry {
            entry_id: format!("p{i}"),
            subject_id: format!("s{s}"),
            path: Some(name),
        });
    }
    let ds = Dataset {
        gallery: dir.join("gallery.jsonl"),
        probes: dir.join("probes.jsonl"),
    };
    write_manifest(&gallery, &ds.gallery).unwrap();
    write_manifest(&probe_entries, &ds.probes).unwrap();
    ds
}
