//! Seeded synthetic identities for desk-scale training runs.
//!
//! Every identity owns a smooth base pattern. An observation of an identity
//! is a random crop of its pattern under random contrast, brightness and
//! pixel noise, so two images of one identity rarely cover the same region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::encoder::{encode, init_params, EncoderParams, LayerSpec, ToyImage};
use crate::error::{Result, SfrError};
use crate::features::{global_average_pool, l2_normalize_columns, pyramid_pool, PyramidSpec};
use crate::metric::{sample_batch, training_step, LrSchedule, TrainConfig};
use crate::retrieval::{self, build_gallery, GalleryEntry, Probe};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub identities: usize,
    pub train_per_identity: usize,
    pub gallery_per_identity: usize,
    pub probes_per_identity: usize,
    pub height: usize,
    pub width: usize,
    /// Smallest crop as a fraction of the full pattern, per axis.
    pub min_crop: f64,
    /// Contrast is drawn from `[min_contrast, 1]`.
    pub min_contrast: f64,
    /// Brightness offsets are drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            identities: 10,
            train_per_identity: 4,
            gallery_per_identity: 1,
            probes_per_identity: 5,
            height: 24,
            width: 12,
            min_crop: 0.85,
            min_contrast: 0.85,
            brightness: 0.05,
            noise: 0.05,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub train: Vec<(usize, ToyImage)>,
    pub gallery: Vec<(usize, ToyImage)>,
    pub probes: Vec<(usize, ToyImage)>,
}

struct Pattern {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

fn base_pattern(rng: &mut impl Rng, height: usize, width: usize) -> Pattern {
    // Sum of a few random plane waves, rescaled to [0, 1].
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(0.2..0.9);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.5..1.0);
            (angle, freq, phase, amp)
        })
        .collect();
    let mut values = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let v: f64 = waves
                .iter()
                .map(|&(a, f, p, amp)| amp * (f * (r as f64 * a.cos() + c as f64 * a.sin()) + p).sin())
                .sum();
            values.push(v);
        }
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    for v in &mut values {
        *v = (*v - lo) / (hi - lo);
    }
    Pattern {
        height,
        width,
        values,
    }
}

fn observe(rng: &mut impl Rng, p: &Pattern, cfg: &ToyConfig, noise: &Normal<f64>) -> Result<ToyImage> {
    let min_crop = cfg.min_crop;
    let min_h = ((p.height as f64 * min_crop).ceil() as usize).clamp(1, p.height);
    let min_w = ((p.width as f64 * min_crop).ceil() as usize).clamp(1, p.width);
    let h = rng.random_range(min_h..=p.height);
    let w = rng.random_range(min_w..=p.width);
    let r0 = rng.random_range(0..=p.height - h);
    let c0 = rng.random_range(0..=p.width - w);
    let contrast = rng.random_range(cfg.min_contrast..=1.0);
    let brightness = rng.random_range(-cfg.brightness..=cfg.brightness);
    let mut pixels = Vec::with_capacity(h * w);
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            let base = p.values[r * p.width + c];
            let v = 0.5 + contrast * (base - 0.5) + brightness + noise.sample(rng);
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    ToyImage::new(1, h, w, pixels)
}

pub fn generate(cfg: &ToyConfig) -> Result<ToyDataset> {
    if cfg.identities < 2 {
        return Err(SfrError::InvalidInput("toy data needs at least two identities".into()));
    }
    if !(cfg.min_crop > 0.0 && cfg.min_crop <= 1.0) {
        return Err(SfrError::InvalidInput(format!("min_crop must lie in (0, 1], got {}", cfg.min_crop)));
    }
    if !(cfg.min_contrast > 0.0 && cfg.min_contrast <= 1.0) || !(cfg.brightness >= 0.0) {
        return Err(SfrError::InvalidInput("contrast must lie in (0, 1] and brightness be non-negative".into()));
    }
    let noise = Normal::new(0.0, cfg.noise)
        .map_err(|e| SfrError::InvalidInput(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let patterns: Vec<Pattern> = (0..cfg.identities)
        .map(|_| base_pattern(&mut rng, cfg.height, cfg.width))
        .collect();
    let mut split = |n: usize| -> Result<Vec<(usize, ToyImage)>> {
        let mut out = Vec::new();
        for (label, p) in patterns.iter().enumerate() {
            for _ in 0..n {
                out.push((label, observe(&mut rng, p, cfg, &noise)?));
            }
        }
        Ok(out)
    };
    Ok(ToyDataset {
        train: split(cfg.train_per_identity)?,
        gallery: split(cfg.gallery_per_identity)?,
        probes: split(cfg.probes_per_identity)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub data: ToyConfig,
    pub layers: Vec<LayerSpec>,
    pub train: TrainConfig,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub subjects: usize,
    pub per_subject: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            data: ToyConfig::default(),
            layers: default_layers(),
            train: TrainConfig::default(),
            schedule: LrSchedule::StepDecay {
                factor: 0.5,
                interval: 50,
            },
            epochs: 20,
            steps_per_epoch: 10,
            subjects: 32,
            per_subject: 4,
            alpha: crate::DEFAULT_ALPHA,
            seed: 7,
        }
    }
}

pub fn default_layers() -> Vec<LayerSpec> {
    vec![LayerSpec::new(1, 8, 3, true), LayerSpec::new(8, 16, 3, false)]
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoOutcome {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub rank1: f64,
    pub map: f64,
    #[serde(skip)]
    pub params: EncoderParams,
}

/// Encodes held-out gallery and probe images and scores rank-1 and mAP.
pub fn evaluate_encoder(
    data: &ToyDataset,
    params: &EncoderParams,
    pyramid: &PyramidSpec,
    normalize: bool,
    alpha: f64,
    beta: f64,
) -> Result<retrieval::EvalReport> {
    let describe = |img: &ToyImage| -> Result<_> {
        let map = encode(img, params)?;
        let mut spatial = pyramid_pool(&map, pyramid)?;
        if normalize {
            spatial = l2_normalize_columns(&spatial);
        }
        Ok((global_average_pool(&map), spatial))
    };
    let entries = data
        .gallery
        .iter()
        .enumerate()
        .map(|(i, (label, img))| {
            let (global, spatial) = describe(img)?;
            Ok(GalleryEntry {
                entry_id: format!("g{i}"),
                subject_id: label.to_string(),
                global,
                spatial,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gallery = build_gallery(entries, alpha, beta)?;
    let probes = data
        .probes
        .iter()
        .enumerate()
        .map(|(i, (_, img))| {
            let (global, spatial) = describe(img)?;
            Ok(Probe {
                probe_id: format!("p{i}"),
                global,
                spatial,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rankings = retrieval::match_all(&probes, &gallery, 1)?;
    let truth = data
        .probes
        .iter()
        .enumerate()
        .map(|(i, (label, _))| (format!("p{i}"), label.to_string()))
        .collect();
    retrieval::evaluate(&rankings, &truth, &gallery.subject_map())
}

/// Seeded end-to-end run: generate data, train, evaluate on held-out images.
pub fn run_demo(cfg: &DemoConfig, mut on_step: impl FnMut(usize, f64)) -> Result<DemoOutcome> {
    let data = generate(&cfg.data)?;
    let mut params = init_params(&cfg.layers, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let subjects = cfg.subjects.min(cfg.data.identities);
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for i in 0..cfg.steps_per_epoch {
            let step = epoch * cfg.steps_per_epoch + i;
            let batch = sample_batch(&data.train, subjects, cfg.per_subject, &mut rng)?;
            let train = TrainConfig {
                learning_rate: cfg.schedule.rate(cfg.train.learning_rate, step),
                ..cfg.train.clone()
            };
            let (next, report) = training_step(&batch, &params, &train)?;
            params = next;
            on_step(step, report.total_loss);
            step_losses.push(report.total_loss);
            sum += report.total_loss;
        }
        epoch_losses.push(sum / cfg.steps_per_epoch.max(1) as f64);
    }
    let report = evaluate_encoder(
        &data,
        &params,
        &cfg.train.pyramid,
        cfg.train.normalize,
        cfg.alpha,
        cfg.train.beta,
    )?;
    Ok(DemoOutcome {
        step_losses,
        epoch_losses,
        rank1: report.rank(1),
        map: report.map,
        params,
    })
}
