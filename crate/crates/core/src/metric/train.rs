//! Alternating optimization of the encoder under the SFR triplet loss.
//!
//! Step 1 holds the encoder fixed: features are extracted, triplets are
//! mined, and the coefficient matrices of every active triplet are solved
//! (along with the column normalization scales, when enabled). Step 2 holds
//! those fixed and backpropagates the squared-residual gradients and the
//! global Euclidean gradients into the encoder.

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{hinge_report, mine_from_distances, pairwise_combined, LossReport, Sample};
use crate::encoder::{encode_backward, encode_with_cache, EncoderGrads, EncoderParams, ForwardCache, ToyImage};
use crate::error::{Result, SfrError};
use crate::features::{
    global_average_pool, global_average_pool_backward, pyramid_pool, pyramid_pool_backward,
    FeatureMatrix, PyramidSpec,
};
use crate::reconstruction::{residual_energy, residual_gradients, Dictionary};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub margin: f64,
    pub learning_rate: f64,
    pub normalize: bool,
    pub pyramid: PyramidSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: crate::DEFAULT_BETA,
            margin: crate::DEFAULT_MARGIN,
            learning_rate: 0.01,
            normalize: true,
            pyramid: PyramidSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` every `interval` steps.
    StepDecay { factor: f64, interval: usize },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::StepDecay { factor, interval } => {
                base * factor.powi((step / interval.max(1)) as i32)
            }
        }
    }
}

/// Raw images laid out as `P` identities times `K` images.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub subjects: usize,
    pub per_subject: usize,
    pub samples: Vec<(usize, ToyImage)>,
}

impl ImageBatch {
    pub fn new(subjects: usize, per_subject: usize, samples: Vec<(usize, ToyImage)>) -> Result<Self> {
        super::validate_pk(subjects, per_subject, samples.iter().map(|s| s.0))?;
        Ok(Self {
            subjects,
            per_subject,
            samples,
        })
    }
}

/// Draws `p` distinct identities, then `k` images of each. Identities with
/// fewer than `k` images are sampled with replacement.
pub fn sample_batch(
    dataset: &[(usize, ToyImage)],
    p: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<ImageBatch> {
    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, (label, _)) in dataset.iter().enumerate() {
        by_label.entry(*label).or_default().push(i);
    }
    if by_label.len() < p {
        return Err(SfrError::InvalidInput(format!(
            "need {p} identities, dataset has {}",
            by_label.len()
        )));
    }
    let labels: Vec<usize> = by_label.keys().copied().collect();
    let chosen: Vec<usize> = labels.choose_multiple(rng, p).copied().collect();
    let mut samples = Vec::with_capacity(p * k);
    for label in chosen {
        let pool = &by_label[&label];
        let picks: Vec<usize> = if pool.len() >= k {
            pool.choose_multiple(rng, k).copied().collect()
        } else {
            (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        };
        samples.extend(picks.into_iter().map(|i| (label, dataset[i].1.clone())));
    }
    ImageBatch::new(p, k, samples)
}

struct Encoded {
    cache: ForwardCache,
    sample: Sample,
    /// Column norms used for normalization (all ones when disabled).
    scales: Vec<f64>,
}

fn encode_sample(label: usize, img: &ToyImage, params: &EncoderParams, cfg: &TrainConfig) -> Result<Encoded> {
    let cache = encode_with_cache(img, params)?;
    let map = cache.output();
    let global = global_average_pool(map);
    let raw = pyramid_pool(map, &cfg.pyramid)?.into_matrix();
    let scales: Vec<f64> = if cfg.normalize {
        raw.column_iter().map(|c| c.norm()).collect()
    } else {
        vec![1.0; raw.ncols()]
    };
    let spatial = FeatureMatrix::new(scale_columns(&raw, &scales))?;
    Ok(Encoded {
        cache,
        sample: Sample {
            label,
            global,
            spatial,
        },
        scales,
    })
}

/// Divides column `j` by `scales[j]`; zero-scale columns become zero.
fn scale_columns(m: &DMatrix<f64>, scales: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, &s) in out.column_iter_mut().zip(scales) {
        if s == 0.0 {
            col.fill(0.0);
        } else {
            col /= s;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ActiveTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub w_positive: DMatrix<f64>,
    pub w_negative: DMatrix<f64>,
}

/// Everything step 1 fixes for step 2.
#[derive(Debug, Clone)]
pub struct FrozenStep {
    pub triplets: Vec<ActiveTriplet>,
    pub scales: Vec<Vec<f64>>,
    pub margin: f64,
}

/// Runs step 1 and step 2 without updating the parameters.
pub fn training_gradient(
    batch: &ImageBatch,
    params: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(EncoderGrads, LossReport, FrozenStep)> {
    let encoded: Vec<Encoded> = batch
        .samples
        .par_iter()
        .map(|(label, img)| encode_sample(*label, img, params, cfg))
        .collect::<Result<_>>()?;
    let samples: Vec<Sample> = encoded.iter().map(|e| e.sample.clone()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();

    // Step 1.
    let dist = pairwise_combined(&samples, cfg.beta)?;
    let mined = mine_from_distances(&labels, &dist);
    let report = hinge_report(&mined, cfg.margin);
    let triplets: Vec<ActiveTriplet> = mined
        .iter()
        .zip(&report.per_triplet_terms)
        .filter(|(_, &term)| term > 0.0)
        .map(|(t, _)| {
            let xa = samples[t.anchor].spatial.matrix();
            let solve = |o: usize| -> Result<DMatrix<f64>> {
                let dict = Dictionary::new(&samples[o].spatial, cfg.beta)?;
                Ok(dict.coefficients(xa)?.matrix().clone())
            };
            Ok(ActiveTriplet {
                anchor: t.anchor,
                positive: t.positive,
                negative: t.negative,
                w_positive: solve(t.positive)?,
                w_negative: solve(t.negative)?,
            })
        })
        .collect::<Result<_>>()?;

    // Step 2.
    let n = samples.len();
    let mut g_global: Vec<Vec<f64>> = samples.iter().map(|s| vec![0.0; s.global.dim()]).collect();
    let mut g_spatial: Vec<DMatrix<f64>> = samples
        .iter()
        .map(|s| DMatrix::zeros(s.spatial.dim(), s.spatial.count()))
        .collect();
    for t in &triplets {
        for (other, w, sign) in [(t.positive, &t.w_positive, 1.0), (t.negative, &t.w_negative, -1.0)] {
            let diff = samples[t.anchor].global.vector() - samples[other].global.vector();
            let d = diff.norm();
            if d > 0.0 {
                for (i, v) in diff.iter().enumerate() {
                    g_global[t.anchor][i] += sign * v / d;
                    g_global[other][i] -= sign * v / d;
                }
            }
            let (ga, go) = residual_gradients(
                samples[t.anchor].spatial.matrix(),
                samples[other].spatial.matrix(),
                w,
            )?;
            g_spatial[t.anchor] += ga * sign;
            g_spatial[other] += go * sign;
        }
    }

    let per_sample: Vec<EncoderGrads> = (0..n)
        .into_par_iter()
        .map(|i| {
            let e = &encoded[i];
            let map = e.cache.output();
            let (c, h, w) = (map.channels(), map.height(), map.width());
            let g_raw = scale_columns(&g_spatial[i], &e.scales);
            let mut upstream = pyramid_pool_backward(c, h, w, &cfg.pyramid, &g_raw)?;
            for (u, g) in upstream.iter_mut().zip(global_average_pool_backward(c, h, w, &g_global[i])) {
                *u += g;
            }
            encode_backward(params, &e.cache, &upstream)
        })
        .collect::<Result<_>>()?;
    let mut grads = EncoderGrads::zeros_like(params);
    for g in &per_sample {
        grads.add_assign(g);
    }
    if !grads.all_finite() {
        return Err(SfrError::NonFinite(format!(
            "encoder gradient at loss {} with {} active triplets",
            report.total_loss, report.active_triplets
        )));
    }
    let frozen = FrozenStep {
        triplets,
        scales: encoded.into_iter().map(|e| e.scales).collect(),
        margin: cfg.margin,
    };
    Ok((grads, report, frozen))
}

/// The step-2 objective whose exact gradient [`training_gradient`] returns:
/// `sum [m + D(g_a,g_p) + ||X_a - X_p W_ap||^2 - D(g_a,g_n) - ||X_a - X_n W_an||^2]`
/// over the frozen active triplets, with normalization scales frozen too.
pub fn frozen_objective(
    batch: &ImageBatch,
    params: &EncoderParams,
    frozen: &FrozenStep,
    cfg: &TrainConfig,
) -> Result<f64> {
    let feats: Vec<(nalgebra::DVector<f64>, DMatrix<f64>)> = batch
        .samples
        .iter()
        .zip(&frozen.scales)
        .map(|((_, img), scales)| {
            let map = crate::encoder::encode(img, params)?;
            let raw = pyramid_pool(&map, &cfg.pyramid)?.into_matrix();
            Ok((global_average_pool(&map).vector().clone(), scale_columns(&raw, scales)))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for t in &frozen.triplets {
        let (ga, xa) = &feats[t.anchor];
        let (gp, xp) = &feats[t.positive];
        let (gn, xn) = &feats[t.negative];
        total += frozen.margin + (ga - gp).norm() + residual_energy(xa, xp, &t.w_positive)?
            - (ga - gn).norm()
            - residual_energy(xa, xn, &t.w_negative)?;
    }
    Ok(total)
}

/// One SGD update `theta - lr * grad`. Returns the new parameters and the
/// loss measured before the update.
pub fn training_step(
    batch: &ImageBatch,
    params: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, LossReport)> {
    let (grads, report, _) = training_gradient(batch, params, cfg)?;
    if cfg.learning_rate == 0.0 || report.active_triplets == 0 {
        return Ok((params.clone(), report));
    }
    let updated = params.sgd_update(&grads, cfg.learning_rate);
    updated.validate()?;
    Ok((updated, report))
}
