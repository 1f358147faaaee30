use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use sfr_core::features::{
    global_average_pool, l2_normalize_columns, load_feature_map, load_pooled, pyramid_pool,
    save_pooled, PooledFeatures,
};
use sfr_core::encoder::save_params;
use sfr_core::metric::TrainConfig;
use sfr_core::oracle::{run_suite, SuiteOptions};
use sfr_core::retrieval::{
    build_gallery, build_subject_gallery, evaluate, match_all, read_manifest, read_rankings,
    write_cmc_csv, write_rankings, GalleryEntry, ManifestEntry, Probe,
};
use sfr_core::toy::{run_demo, DemoConfig, ToyConfig};

use crate::config::RunConfig;
use crate::exit::{self, CliError};

type CmdResult = Result<(), CliError>;

/// Global and spatial descriptors of one file: a raw SFRF map is pooled with
/// the configured pyramid, a pooled SFRM container is used as stored.
fn describe(path: &Path, cfg: &RunConfig) -> Result<PooledFeatures, CliError> {
    let mut magic = [0u8; 4];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut pooled = if &magic == b"SFRM" {
        load_pooled(path)?
    } else {
        let map = load_feature_map(path)?;
        PooledFeatures {
            global: global_average_pool(&map),
            spatial: pyramid_pool(&map, &cfg.pyramid()?)?,
        }
    };
    if cfg.normalize && !pooled.spatial.is_normalized() {
        pooled.spatial = l2_normalize_columns(&pooled.spatial);
    }
    Ok(pooled)
}

pub fn pool(input: &Path, out: &Path, cfg: &RunConfig) -> CmdResult {
    let map = load_feature_map(input)?;
    let mut spatial = pyramid_pool(&map, &cfg.pyramid()?)?;
    if cfg.normalize {
        spatial = l2_normalize_columns(&spatial);
    }
    let count = spatial.count();
    let pooled = PooledFeatures {
        global: global_average_pool(&map),
        spatial,
    };
    save_pooled(&pooled, out)?;
    println!("{count} spatial features of dim {}", map.channels());
    Ok(())
}

fn load_manifest(path: &Path, what: &str) -> Result<Vec<(ManifestEntry, PathBuf)>, CliError> {
    let entries = read_manifest(path)?;
    if entries.is_empty() {
        return Err(CliError::input(format!("{what} manifest {} is empty", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    entries
        .into_iter()
        .map(|e| {
            let file = e.path.as_ref().ok_or_else(|| {
                CliError::input(format!("{what} entry {:?} has no feature path", e.entry_id))
            })?;
            let resolved = base.join(file);
            Ok((e, resolved))
        })
        .collect()
}

pub struct MatchArgs<'a> {
    pub gallery: &'a Path,
    pub probes: &'a Path,
    pub out: &'a Path,
    pub summary: Option<&'a Path>,
    pub subject_dictionary: bool,
}

pub fn match_probes(args: MatchArgs<'_>, cfg: &RunConfig) -> CmdResult {
    let gallery_manifest = load_manifest(args.gallery, "gallery")?;
    let probe_manifest = load_manifest(args.probes, "probe")?;

    let entries = gallery_manifest
        .iter()
        .map(|(e, path)| {
            let f = describe(path, cfg)?;
            Ok(GalleryEntry {
                entry_id: e.entry_id.clone(),
                subject_id: e.subject_id.clone(),
                global: f.global,
                spatial: f.spatial,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let gallery = if args.subject_dictionary {
        build_subject_gallery(entries, cfg.alpha, cfg.beta)?
    } else {
        build_gallery(entries, cfg.alpha, cfg.beta)?
    };

    let mut truth = HashMap::new();
    let probes = probe_manifest
        .iter()
        .map(|(e, path)| {
            if truth.insert(e.entry_id.clone(), e.subject_id.clone()).is_some() {
                return Err(CliError::input(format!("duplicate probe id {:?}", e.entry_id)));
            }
            let f = describe(path, cfg)?;
            Ok(Probe {
                probe_id: e.entry_id.clone(),
                global: f.global,
                spatial: f.spatial,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let rankings = match_all(&probes, &gallery, cfg.workers)?;
    write_rankings(&rankings, args.out)?;

    let report = evaluate(&rankings, &truth, &gallery.subject_map())?;
    let summary_path = args
        .summary
        .map(Path::to_path_buf)
        .unwrap_or_else(|| args.out.with_extension("summary.json"));
    let json = serde_json::to_string_pretty(&report.summary()).expect("plain numbers serialize");
    fs::write(&summary_path, format!("{json}\n"))
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", summary_path.display())))?;
    println!("{json}");
    Ok(())
}

pub fn eval(rankings_path: &Path, truth_paths: &[PathBuf], out: Option<&Path>) -> CmdResult {
    let rankings = read_rankings(rankings_path)?;
    if rankings.is_empty() {
        return Err(CliError::input(format!("{} holds no rankings", rankings_path.display())));
    }
    let mut truth: HashMap<String, String> = HashMap::new();
    for path in truth_paths {
        for e in read_manifest(path)? {
            if let Some(prev) = truth.get(&e.entry_id) {
                if *prev != e.subject_id {
                    return Err(CliError::with_code(
                        exit::MISMATCH,
                        format!("id {:?} is labelled both {prev:?} and {:?}", e.entry_id, e.subject_id),
                    ));
                }
            }
            truth.insert(e.entry_id, e.subject_id);
        }
    }
    let report = evaluate(&rankings, &truth, &truth)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| rankings_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    write_cmc_csv(&report.cmc, dir.join("cmc.csv"))?;
    let json = serde_json::to_string_pretty(&report.summary()).expect("plain numbers serialize");
    fs::write(dir.join("summary.json"), format!("{json}\n"))
        .map_err(|e| CliError::input(format!("cannot write summary: {e}")))?;
    println!("{json}");
    Ok(())
}

/// Rank-1 a toy run must reach to count as converged.
pub const TARGET_RANK1: f64 = 0.95;

pub fn train_demo(out: &Path, cfg: &RunConfig) -> CmdResult {
    let demo = DemoConfig {
        data: ToyConfig {
            seed: cfg.seed,
            ..ToyConfig::default()
        },
        train: TrainConfig {
            beta: cfg.beta,
            margin: cfg.margin,
            learning_rate: cfg.lr,
            normalize: cfg.normalize,
            pyramid: cfg.pyramid()?,
        },
        schedule: cfg.lr_schedule,
        epochs: cfg.epochs,
        subjects: cfg.p,
        per_subject: cfg.k,
        alpha: cfg.alpha,
        seed: cfg.seed,
        ..DemoConfig::default()
    };
    fs::create_dir_all(out).map_err(|e| CliError::input(format!("cannot create {}: {e}", out.display())))?;
    let outcome = run_demo(&demo, |_, _| {})?;

    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{loss}\n", i + 1));
    }
    let write = |name: &str, text: String| {
        fs::write(out.join(name), text).map_err(|e| CliError::input(format!("cannot write {name}: {e}")))
    };
    write("loss.csv", csv)?;
    let mut steps = String::from("step,loss\n");
    for (i, loss) in outcome.step_losses.iter().enumerate() {
        steps.push_str(&format!("{},{loss}\n", i + 1));
    }
    write("steps.csv", steps)?;
    let summary = serde_json::json!({
        "rank1": outcome.rank1,
        "mAP": outcome.map,
        "epochs": cfg.epochs,
        "steps": outcome.step_losses.len(),
    });
    write("summary.json", format!("{}\n", serde_json::to_string_pretty(&summary).unwrap()))?;
    save_params(&outcome.params, out.join("encoder.sfrf"))?;

    println!("rank-1 {:.4}  mAP {:.4}  after {} steps", outcome.rank1, outcome.map, outcome.step_losses.len());
    if outcome.rank1 >= TARGET_RANK1 {
        return Ok(());
    }
    let trace: Vec<String> = outcome.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
    Err(CliError::with_code(
        exit::CONVERGENCE,
        format!(
            "held-out rank-1 {:.4} is below {TARGET_RANK1}; epoch losses [{}]",
            outcome.rank1,
            trace.join(", ")
        ),
    ))
}

pub fn verify(verbose: bool, inject_fault: bool, cfg: &RunConfig) -> CmdResult {
    let reports = run_suite(SuiteOptions {
        seed: cfg.seed,
        inject_fault,
        verbose,
    });
    println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.check_name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::with_code(
            exit::VERIFICATION,
            format!("failed checks: {}", failed.join(", ")),
        ))
    }
}
