//! Brute-force reference implementations.
//!
//! Nothing here calls into the factorization, pooling or mining fast paths:
//! matrices are copied into plain nested vectors and every product, solve
//! and scan is written out with loops. Slow by design; keep instances small.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::encoder::{init_params, EncoderParams, LayerSpec, ToyImage};
use crate::error::{Result, SfrError};
use crate::features::{pyramid_pool, FeatureMatrix, GlobalFeature, PyramidSpec, SpatialFeatureMap};
use crate::metric::{self, MinedTriplet, Sample, TripletBatch};
use crate::reconstruction::{self, residual_energy, residual_gradients};

/// Tolerance for solver cross-checks.
pub const SOLVER_TOL: f64 = 1e-8;
/// Relative tolerance for analytic vs central-difference gradients.
pub const GRADIENT_TOL: f64 = 1e-4;
/// Relative tolerance for the end-to-end encoder gradient.
pub const END_TO_END_TOL: f64 = 1e-3;
/// Relative tolerance for pooled values against window loops.
pub const POOLING_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleReport {
    pub check_name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub cases_run: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cases: Vec<CaseError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CaseError {
    pub case: usize,
    pub abs_error: f64,
    pub rel_error: f64,
}

/// Accumulates per-case errors; `passed` compares `measure` against the
/// tolerance, where `measure` is either the absolute or the relative error.
struct Tally {
    name: &'static str,
    tolerance: f64,
    relative: bool,
    cases: Vec<CaseError>,
    hard_failure: bool,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64, relative: bool) -> Self {
        Self {
            name,
            tolerance,
            relative,
            cases: Vec::new(),
            hard_failure: false,
        }
    }

    fn record(&mut self, abs_error: f64, rel_error: f64) {
        let case = self.cases.len();
        self.cases.push(CaseError {
            case,
            abs_error,
            rel_error,
        });
    }

    fn fail(&mut self) {
        self.hard_failure = true;
    }

    fn finish(self, verbose: bool) -> OracleReport {
        let max_abs = self.cases.iter().map(|c| c.abs_error).fold(0.0, f64::max);
        let max_rel = self.cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
        let measure = if self.relative { max_rel } else { max_abs };
        let nan = self.cases.iter().any(|c| c.abs_error.is_nan() || c.rel_error.is_nan());
        OracleReport {
            check_name: self.name.to_string(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            tolerance: self.tolerance,
            passed: !self.hard_failure && !nan && measure <= self.tolerance,
            cases_run: self.cases.len(),
            cases: if verbose { self.cases } else { Vec::new() },
        }
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Solves `(Y^T Y + beta I) W = Y^T X` by Gaussian elimination with partial
/// pivoting.
pub fn ridge_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(SfrError::DimensionMismatch("X and Y row counts differ".into()));
    }
    let (xs, ys) = (to_rows(x), to_rows(y));
    let (d, m, n) = (x.nrows(), y.ncols(), x.ncols());
    // Augmented system [A | B], A = Y^T Y + beta I, B = Y^T X.
    let mut aug = vec![vec![0.0; m + n]; m];
    for i in 0..m {
        for j in 0..m {
            let mut s = 0.0;
            for r in 0..d {
                s += ys[r][i] * ys[r][j];
            }
            aug[i][j] = s + if i == j { beta } else { 0.0 };
        }
        for j in 0..n {
            let mut s = 0.0;
            for r in 0..d {
                s += ys[r][i] * xs[r][j];
            }
            aug[i][m + j] = s;
        }
    }
    let scale = aug
        .iter()
        .flat_map(|row| row[..m].iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap_or(col);
        if aug[pivot][col].abs() <= 1e-12 * scale {
            return Err(SfrError::Factorization(format!(
                "singular system at column {col} (pivot {:.3e})",
                aug[pivot][col]
            )));
        }
        aug.swap(col, pivot);
        for row in col + 1..m {
            let f = aug[row][col] / aug[col][col];
            if f != 0.0 {
                for j in col..m + n {
                    aug[row][j] -= f * aug[col][j];
                }
            }
        }
    }
    let mut w = DMatrix::zeros(m, n);
    for j in 0..n {
        for i in (0..m).rev() {
            let mut s = aug[i][m + j];
            for k in i + 1..m {
                s -= aug[i][k] * w[(k, j)];
            }
            w[(i, j)] = s / aug[i][i];
        }
    }
    Ok(w)
}

/// Central differences `(f(x + eps e) - f(x - eps e)) / (2 eps)` per entry.
pub fn finite_difference(
    f: impl Fn(&DMatrix<f64>) -> f64,
    at: &DMatrix<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    let flat = finite_difference_flat(
        |v| f(&DMatrix::from_column_slice(at.nrows(), at.ncols(), v)),
        at.as_slice(),
        eps,
    )?;
    Ok(DMatrix::from_vec(at.nrows(), at.ncols(), flat))
}

/// [`finite_difference`] over a flat parameter vector.
pub fn finite_difference_flat(f: impl Fn(&[f64]) -> f64, at: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(SfrError::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let mut x = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        x[i] = at[i] + eps;
        let plus = f(&x);
        x[i] = at[i] - eps;
        let minus = f(&x);
        x[i] = at[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(SfrError::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

fn oracle_sfr_distance(x: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<f64> {
    let w = ridge_oracle(x, y, beta)?;
    let (d, n, m) = (x.nrows(), x.ncols(), y.ncols());
    let mut total = 0.0;
    for j in 0..n {
        let mut sq = 0.0;
        for r in 0..d {
            let mut rec = 0.0;
            for k in 0..m {
                rec += y[(r, k)] * w[(k, j)];
            }
            let e = x[(r, j)] - rec;
            sq += e * e;
        }
        total += sq.sqrt();
    }
    Ok(total / n as f64)
}

fn oracle_euclidean(a: &GlobalFeature, b: &GlobalFeature) -> f64 {
    let mut s = 0.0;
    for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
        s += (p - q) * (p - q);
    }
    s.sqrt()
}

/// Computes every pairwise combined distance and scans each anchor's row,
/// keeping the first maximum over positives and first minimum over negatives.
pub fn exhaustive_mine(batch: &TripletBatch, beta: f64) -> Result<Vec<MinedTriplet>> {
    let s = batch.samples();
    let n = s.len();
    let mut dist = vec![vec![0.0; n]; n];
    for a in 0..n {
        for o in 0..n {
            if a != o {
                dist[a][o] = oracle_euclidean(&s[a].global, &s[o].global)
                    + oracle_sfr_distance(s[a].spatial.matrix(), s[o].spatial.matrix(), beta)?;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let (mut pos, mut neg) = (usize::MAX, usize::MAX);
        for o in 0..n {
            if o == a {
                continue;
            }
            if s[o].label == s[a].label {
                if pos == usize::MAX || dist[a][o] > dist[a][pos] {
                    pos = o;
                }
            } else if neg == usize::MAX || dist[a][o] < dist[a][neg] {
                neg = o;
            }
        }
        out.push(MinedTriplet {
            anchor: a,
            positive: pos,
            negative: neg,
            positive_distance: dist[a][pos],
            negative_distance: dist[a][neg],
        });
    }
    Ok(out)
}

/// Mean of each `k x k` window, enumerated with explicit loops, in the
/// kernel-ascending then row-major order.
pub fn pyramid_oracle(map: &SpatialFeatureMap, kernels: &[usize]) -> Vec<Vec<f64>> {
    let (c, h, w) = (map.channels(), map.height(), map.width());
    let mut cols = Vec::new();
    for &k in kernels {
        if k > h || k > w {
            continue;
        }
        for r0 in 0..=h - k {
            for c0 in 0..=w - k {
                let mut col = vec![0.0; c];
                for (ch, v) in col.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for r in r0..r0 + k {
                        for cc in c0..c0 + k {
                            s += map.get(ch, r, cc);
                        }
                    }
                    *v = s / (k * k) as f64;
                }
                cols.push(col);
            }
        }
    }
    cols
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

fn rel_error(approx: &DMatrix<f64>, exact: &DMatrix<f64>) -> (f64, f64) {
    let abs = max_abs(&(approx - exact));
    let scale = max_abs(exact).max(max_abs(approx));
    (abs, if scale > 0.0 { abs / scale } else { abs })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Perturbs the fast-path coefficients before comparison; used to prove
    /// the suite can fail.
    pub inject_fault: bool,
    /// Keep per-case errors in the reports.
    pub verbose: bool,
}

/// Fast ridge solve vs Gaussian elimination over 200 instances, plus the
/// stationarity identity `Y^T (X - YW) = beta W`.
pub fn check_ridge(opts: SuiteOptions) -> (OracleReport, OracleReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5249_4447);
    let mut cross = Tally::new("ridge_cross_check", SOLVER_TOL, false);
    let mut identity = Tally::new("normal_equation_identity", SOLVER_TOL, false);
    let betas = [1e-3, 1e-1, 1.0];
    for case in 0..200 {
        let d = rng.random_range(1..=16);
        let m = rng.random_range(1..=16);
        let n = rng.random_range(1..=16);
        let beta = betas[case % 3];
        let x = gaussian(&mut rng, d, n);
        let y = gaussian(&mut rng, d, m);
        let fast = reconstruction::solve_coefficients(
            &FeatureMatrix::new(x.clone()).expect("finite"),
            &FeatureMatrix::new(y.clone()).expect("finite"),
            beta,
        );
        let (Ok(fast), Ok(slow)) = (fast, ridge_oracle(&x, &y, beta)) else {
            cross.fail();
            identity.fail();
            continue;
        };
        let mut w = fast.matrix().clone();
        if opts.inject_fault {
            w[(0, 0)] += 1e-3;
        }
        let (abs, rel) = rel_error(&w, &slow);
        cross.record(abs, rel);
        let lhs = y.transpose() * (&x - &y * &w);
        let (abs, rel) = rel_error(&lhs, &(&w * beta));
        identity.record(abs, rel);
    }
    (cross.finish(opts.verbose), identity.finish(opts.verbose))
}

/// Orthonormal dictionary reconstructing itself at `beta = 1`: every
/// residual column has norm `beta / (1 + beta) = 0.5`.
pub fn check_orthonormal_closed_form(opts: SuiteOptions) -> OracleReport {
    let mut tally = Tally::new("orthonormal_closed_form", 1e-12, false);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4f52_5448);
    for case in 0..10 {
        let d = 2 + case % 6;
        let n = 1 + case % d;
        // Columns of a random orthogonal matrix via Gram-Schmidt.
        let g = gaussian(&mut rng, d, n);
        let mut q: Vec<Vec<f64>> = Vec::new();
        for j in 0..n {
            let mut v: Vec<f64> = (0..d).map(|i| g[(i, j)]).collect();
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
        let x = FeatureMatrix::from_columns(d, &q).expect("finite");
        match reconstruction::sfr_distance(&x, &x, 1.0) {
            Ok(r) => {
                let mut distance = r.distance;
                if opts.inject_fault {
                    distance += 1e-9;
                }
                let err = (distance - 0.5).abs();
                tally.record(err, err / 0.5);
            }
            Err(_) => tally.fail(),
        }
    }
    tally.finish(opts.verbose)
}

/// Analytic residual gradients vs central differences, 50 instances.
pub fn check_sfr_gradients(opts: SuiteOptions) -> OracleReport {
    let mut tally = Tally::new("sfr_gradient_finite_difference", GRADIENT_TOL, true);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4752_4144);
    for _ in 0..50 {
        let d = rng.random_range(2..=6);
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=6);
        let xa = gaussian(&mut rng, d, n);
        let xo = gaussian(&mut rng, d, m);
        let Ok(w) = ridge_oracle(&xa, &xo, 1e-3) else {
            tally.fail();
            continue;
        };
        let Ok((mut ga, go)) = residual_gradients(&xa, &xo, &w) else {
            tally.fail();
            continue;
        };
        if opts.inject_fault {
            ga *= 1.01;
        }
        let energy = |a: &DMatrix<f64>, o: &DMatrix<f64>| residual_energy(a, o, &w).unwrap_or(f64::NAN);
        let fa = finite_difference(|a| energy(a, &xo), &xa, 1e-5);
        let fo = finite_difference(|o| energy(&xa, o), &xo, 1e-5);
        match (fa, fo) {
            (Ok(fa), Ok(fo)) => {
                let (a1, r1) = rel_error(&ga, &fa);
                let (a2, r2) = rel_error(&go, &fo);
                tally.record(a1.max(a2), r1.max(r2));
            }
            _ => tally.fail(),
        }
    }
    tally.finish(opts.verbose)
}

fn random_batch(rng: &mut impl Rng, p: usize, k: usize) -> TripletBatch {
    let d = rng.random_range(2..=5);
    let mut samples = Vec::with_capacity(p * k);
    for label in 0..p {
        for _ in 0..k {
            let count = rng.random_range(1..=6);
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            samples.push(Sample {
                label,
                global: GlobalFeature::from_slice(&g).expect("finite"),
                spatial: FeatureMatrix::new(gaussian(rng, d, count)).expect("finite"),
            });
        }
    }
    // Shuffle so identities are interleaved.
    for i in (1..samples.len()).rev() {
        let j = rng.random_range(0..=i);
        samples.swap(i, j);
    }
    TripletBatch::new(p, k, samples).expect("valid layout")
}

/// Batch-hard mining vs the exhaustive scan on 100 batches with P <= 5, K <= 4.
/// Indices must agree exactly; distances within [`SOLVER_TOL`].
pub fn check_mining(opts: SuiteOptions) -> OracleReport {
    let mut tally = Tally::new("mining_equivalence", SOLVER_TOL, false);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4d49_4e45);
    for _ in 0..100 {
        let p = rng.random_range(2..=5);
        let k = rng.random_range(2..=4);
        let batch = random_batch(&mut rng, p, k);
        let beta = [1e-3, 1e-1][rng.random_range(0..2)];
        let (Ok(mut fast), Ok(slow)) = (metric::batch_hard_mine(&batch, beta), exhaustive_mine(&batch, beta)) else {
            tally.fail();
            continue;
        };
        if opts.inject_fault {
            fast[0].negative_distance += 1e-6;
        }
        let same_indices = fast.len() == slow.len()
            && fast
                .iter()
                .zip(&slow)
                .all(|(a, b)| (a.anchor, a.positive, a.negative) == (b.anchor, b.positive, b.negative));
        if !same_indices {
            tally.fail();
        }
        let err = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| {
                (a.positive_distance - b.positive_distance)
                    .abs()
                    .max((a.negative_distance - b.negative_distance).abs())
            })
            .fold(0.0, f64::max);
        tally.record(err, err);
    }
    tally.finish(opts.verbose)
}

/// Window counts against direct enumeration for every `H, W <= 8`, and
/// pooled values against window loops.
pub fn check_pyramid(opts: SuiteOptions) -> OracleReport {
    let mut tally = Tally::new("pyramid_geometry", POOLING_TOL, true);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5059_5241);
    let spec = PyramidSpec::default();
    for h in 1..=8 {
        for w in 1..=8 {
            let c = rng.random_range(1..=4);
            let values = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
            let map = SpatialFeatureMap::new(c, h, w, values).expect("finite");
            let want = pyramid_oracle(&map, spec.kernels());
            let Ok(got) = pyramid_pool(&map, &spec) else {
                tally.fail();
                continue;
            };
            let mut count = got.count();
            if opts.inject_fault && h == 8 && w == 4 {
                count += 1;
            }
            if count != want.len() {
                tally.fail();
                continue;
            }
            let (mut abs, mut rel) = (0.0f64, 0.0f64);
            for (j, col) in want.iter().enumerate() {
                for (ch, &v) in col.iter().enumerate() {
                    let e = (got.matrix()[(ch, j)] - v).abs();
                    abs = abs.max(e);
                    rel = rel.max(e / v.abs().max(1e-12));
                }
            }
            // Relative error is meaningless for near-zero window means.
            tally.record(abs, rel.min(abs / 1e-3));
        }
    }
    tally.finish(opts.verbose)
}

fn toy_image(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> ToyImage {
    let pixels = (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    ToyImage::new(c, h, w, pixels).expect("pixels in range")
}

/// Smallest allowed distance of any pre-activation from zero in the
/// finite-difference checks; closer draws are replaced.
const KINK_MARGIN: f64 = 1e-4;

/// Zero biases leave dead windows at exactly 0, where central differences
/// straddle the rectifier's kink.
fn with_small_biases(mut params: EncoderParams, rng: &mut impl Rng) -> EncoderParams {
    for l in &mut params.layers {
        for b in &mut l.bias {
            *b = rng.random_range(0.05..0.2);
        }
    }
    params
}

/// Encoder backward pass vs central differences of `<encode(img), G>`.
pub fn check_encoder_backward(opts: SuiteOptions) -> OracleReport {
    let mut tally = Tally::new("encoder_backward_finite_difference", GRADIENT_TOL, true);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x454e_4342);
    for case in 0..4u64 {
        let specs = [
            LayerSpec::new(2, 3, 3, case % 2 == 0),
            LayerSpec::new(3, 4, 2, case >= 2),
        ];
        let mut drawn = None;
        for attempt in 0..20u64 {
            let Ok(params) = init_params(&specs, opts.seed + case * 20 + attempt) else {
                break;
            };
            let params = with_small_biases(params, &mut rng);
            let img = toy_image(&mut rng, 2, 11, 9);
            let Ok(cache) = crate::encoder::encode_with_cache(&img, &params) else {
                break;
            };
            if cache.kink_margin() > KINK_MARGIN {
                drawn = Some((params, img, cache));
                break;
            }
        }
        let Some((params, img, cache)) = drawn else {
            tally.fail();
            continue;
        };
        let upstream: Vec<f64> = (0..cache.output().values().len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let Ok(grads) = crate::encoder::encode_backward(&params, &cache, &upstream) else {
            tally.fail();
            continue;
        };
        let mut analytic = grads.flat();
        if opts.inject_fault {
            analytic[0] += 0.1;
        }
        let objective = |flat: &[f64]| -> f64 {
            let p = params.with_flat(flat).expect("same length");
            crate::encoder::encode(&img, &p)
                .map(|m| m.values().iter().zip(&upstream).map(|(a, b)| a * b).sum())
                .unwrap_or(f64::NAN)
        };
        match finite_difference_flat(objective, &params.flat(), 1e-6) {
            Ok(numeric) => {
                let a = DMatrix::from_vec(analytic.len(), 1, analytic);
                let n = DMatrix::from_vec(numeric.len(), 1, numeric);
                let (abs, rel) = rel_error(&a, &n);
                tally.record(abs, rel);
            }
            Err(_) => tally.fail(),
        }
    }
    tally.finish(opts.verbose)
}

/// Gradient of the frozen step-2 objective w.r.t. every encoder parameter
/// vs central differences, on small batches (< 5k parameters).
pub fn check_end_to_end(opts: SuiteOptions) -> OracleReport {
    use crate::metric::{frozen_objective, training_gradient, ImageBatch, TrainConfig};

    let mut tally = Tally::new("end_to_end_finite_difference", END_TO_END_TOL, true);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4532_4532);
    let specs = [LayerSpec::new(1, 4, 3, true), LayerSpec::new(4, 6, 2, false)];
    for case in 0..3u64 {
        let cfg = TrainConfig {
            // Large margin keeps every hinge active so the check covers all terms.
            margin: 10.0,
            normalize: case != 1,
            ..TrainConfig::default()
        };
        // Rectifier kinks inside the difference stencil, or columns with a
        // tiny nonzero norm amplifying them, break the comparison; such
        // draws are replaced.
        let mut drawn = None;
        for attempt in 0..20u64 {
            let Ok(params) = init_params(&specs, opts.seed + 100 + case * 20 + attempt) else {
                break;
            };
            let params = with_small_biases(params, &mut rng);
            let mut samples = Vec::new();
            for label in 0..2 {
                for _ in 0..2 {
                    let h = rng.random_range(10..=13);
                    let w = rng.random_range(8..=10);
                    samples.push((label, toy_image(&mut rng, 1, h, w)));
                }
            }
            let batch = ImageBatch::new(2, 2, samples).expect("2x2 layout");
            let Ok((grads, _, frozen)) = training_gradient(&batch, &params, &cfg) else {
                break;
            };
            let clear_of_kinks = batch.samples.iter().all(|(_, img)| {
                crate::encoder::encode_with_cache(img, &params)
                    .map(|c| c.kink_margin() > KINK_MARGIN)
                    .unwrap_or(false)
            });
            let well_posed =
                clear_of_kinks && frozen.scales.iter().flatten().all(|&s| s == 0.0 || s > 1e-3);
            if well_posed {
                drawn = Some((params, batch, grads, frozen));
                break;
            }
        }
        let Some((params, batch, grads, frozen)) = drawn else {
            tally.fail();
            continue;
        };
        let mut analytic = grads.flat();
        if opts.inject_fault {
            analytic[1] *= 1.5;
        }
        let objective = |flat: &[f64]| {
            let p = params.with_flat(flat).expect("same length");
            frozen_objective(&batch, &p, &frozen, &cfg).unwrap_or(f64::NAN)
        };
        match finite_difference_flat(objective, &params.flat(), 1e-6) {
            Ok(numeric) => {
                let a = DMatrix::from_vec(analytic.len(), 1, analytic);
                let n = DMatrix::from_vec(numeric.len(), 1, numeric);
                let (abs, rel) = rel_error(&a, &n);
                tally.record(abs, rel);
            }
            Err(_) => tally.fail(),
        }
    }
    tally.finish(opts.verbose)
}

/// Every check, in a fixed order.
pub fn run_suite(opts: SuiteOptions) -> Vec<OracleReport> {
    let (cross, identity) = check_ridge(opts);
    vec![
        cross,
        identity,
        check_orthonormal_closed_form(opts),
        check_sfr_gradients(opts),
        check_encoder_backward(opts),
        check_end_to_end(opts),
        check_mining(opts),
        check_pyramid(opts),
    ]
}
