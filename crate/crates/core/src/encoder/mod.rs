//! A small convolutional encoder with hand-written backpropagation.
//!
//! Each layer is a valid-padding convolution, a rectifier, and an optional
//! non-overlapping 2x2 average downsample. A stack with no layers is the
//! identity adapter: the input grid is passed through as the feature map.

mod checkpoint;

pub use checkpoint::{load_params, read_params, save_params, write_params};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SfrError};
use crate::features::SpatialFeatureMap;

/// Shape of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub downsample: bool,
}

impl LayerSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, downsample: bool) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            downsample,
        }
    }

    /// Output spatial size for a given input size, `None` if the input is
    /// too small.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        if height < self.kernel || width < self.kernel {
            return None;
        }
        let (h, w) = (height - self.kernel + 1, width - self.kernel + 1);
        if self.downsample {
            (h >= 2 && w >= 2).then_some((h / 2, w / 2))
        } else {
            Some((h, w))
        }
    }

    fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// Output `(channels, height, width)` of a layer stack, or `None` when the
/// input is too small at some layer.
pub fn output_shape(
    specs: &[LayerSpec],
    channels: usize,
    height: usize,
    width: usize,
) -> Option<(usize, usize, usize)> {
    specs.iter().try_fold((channels, height, width), |(c, h, w), s| {
        if s.in_channels != c {
            return None;
        }
        let (h, w) = s.output_size(h, w)?;
        Some((s.out_channels, h, w))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: LayerSpec,
    /// `out x in x k x k`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    #[inline]
    fn w_index(&self, o: usize, i: usize, u: usize, v: usize) -> usize {
        let k = self.spec.kernel;
        ((o * self.spec.in_channels + i) * k + u) * k + v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<ConvLayer>,
    pub seed: u64,
}

/// Parameter gradients laid out like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            weights: params.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        let pairs = self
            .weights
            .iter_mut()
            .zip(&other.weights)
            .chain(self.bias.iter_mut().zip(&other.bias));
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Flattened in the same order as [`EncoderParams::flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().chain(&self.bias).flatten().all(|&v| v == 0.0)
    }
}

impl EncoderParams {
    /// Identity adapter: features are the raw input grid.
    pub fn identity() -> Self {
        Self {
            layers: Vec::new(),
            seed: 0,
        }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weights then bias, layer by layer.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Copy with parameters replaced by a flat vector in [`Self::flat`] order.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(SfrError::DimensionMismatch(format!(
                "{} parameters supplied, encoder has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for l in &mut out.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().unwrap_or_default();
            }
        }
        Ok(out)
    }

    /// `theta - lr * grad`.
    pub fn sgd_update(&self, grads: &EncoderGrads, lr: f64) -> Self {
        let mut out = self.clone();
        for ((l, gw), gb) in out.layers.iter_mut().zip(&grads.weights).zip(&grads.bias) {
            for (p, g) in l.weights.iter_mut().zip(gw).chain(l.bias.iter_mut().zip(gb)) {
                *p -= lr * g;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        check_chain(&self.specs())?;
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.spec.weight_len() || l.bias.len() != l.spec.out_channels {
                return Err(SfrError::DimensionMismatch(format!(
                    "layer {i} parameter lengths do not match its shape"
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(SfrError::NonFinite(format!("layer {i} parameter")));
            }
        }
        Ok(())
    }
}

fn check_chain(specs: &[LayerSpec]) -> Result<()> {
    for (i, s) in specs.iter().enumerate() {
        if s.in_channels == 0 || s.out_channels == 0 || s.kernel == 0 {
            return Err(SfrError::InvalidInput(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && specs[i - 1].out_channels != s.in_channels {
            return Err(SfrError::DimensionMismatch(format!(
                "layer {} outputs {} channels but layer {i} expects {}",
                i - 1,
                specs[i - 1].out_channels,
                s.in_channels
            )));
        }
    }
    Ok(())
}

/// Seeded initialization: kernels drawn from `N(0, 1) / sqrt(in * k^2)`,
/// biases zero.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<EncoderParams> {
    check_chain(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|&spec| {
            let scale = 1.0 / ((spec.in_channels * spec.kernel * spec.kernel) as f64).sqrt();
            let weights = (0..spec.weight_len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            ConvLayer {
                spec,
                weights,
                bias: vec![0.0; spec.out_channels],
            }
        })
        .collect();
    Ok(EncoderParams { layers, seed })
}

/// A synthetic input grid with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ToyImage {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(SfrError::InvalidInput("image dimensions must be positive".into()));
        }
        if pixels.len() != channels * height * width {
            return Err(SfrError::DimensionMismatch(format!(
                "{channels}x{height}x{width} image needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SfrError::InvalidInput("pixel outside [0, 1]".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

#[derive(Debug, Clone)]
struct Grid {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    fn at(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.h + r) * self.w + col
    }
}

/// Convolution plus bias, no rectification.
fn conv_forward(layer: &ConvLayer, input: &Grid) -> Grid {
    let k = layer.spec.kernel;
    let (oh, ow) = (input.h - k + 1, input.w - k + 1);
    let mut out = Grid::zeros(layer.spec.out_channels, oh, ow);
    for o in 0..layer.spec.out_channels {
        let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(layer.bias[o]);
        for i in 0..layer.spec.in_channels {
            for u in 0..k {
                for v in 0..k {
                    let wt = layer.weights[layer.w_index(o, i, u, v)];
                    for r in 0..oh {
                        let src = input.at(i, r + u, v);
                        let row = &input.data[src..src + ow];
                        for (dst, s) in plane[r * ow..(r + 1) * ow].iter_mut().zip(row) {
                            *dst += wt * s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn relu(g: &Grid) -> Grid {
    Grid {
        data: g.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*g
    }
}

fn downsample(g: &Grid) -> Grid {
    let (h, w) = (g.h / 2, g.w / 2);
    let mut out = Grid::zeros(g.c, h, w);
    for c in 0..g.c {
        for r in 0..h {
            for col in 0..w {
                let s = g.data[g.at(c, 2 * r, 2 * col)]
                    + g.data[g.at(c, 2 * r, 2 * col + 1)]
                    + g.data[g.at(c, 2 * r + 1, 2 * col)]
                    + g.data[g.at(c, 2 * r + 1, 2 * col + 1)];
                let idx = out.at(c, r, col);
                out.data[idx] = 0.25 * s;
            }
        }
    }
    out
}

/// Activations kept by the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Grid>,
    pre_activations: Vec<Grid>,
    output: SpatialFeatureMap,
}

impl ForwardCache {
    pub fn output(&self) -> &SpatialFeatureMap {
        &self.output
    }

    /// Distance of the closest pre-activation to the rectifier's kink.
    pub fn kink_margin(&self) -> f64 {
        self.pre_activations
            .iter()
            .flat_map(|g| g.data.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn check_input(img: &ToyImage, params: &EncoderParams) -> Result<()> {
    let specs = params.specs();
    if let Some(first) = specs.first() {
        if first.in_channels != img.channels {
            return Err(SfrError::DimensionMismatch(format!(
                "encoder expects {} input channels, image has {}",
                first.in_channels, img.channels
            )));
        }
    }
    if output_shape(&specs, img.channels, img.height, img.width).is_none() {
        return Err(SfrError::InvalidInput(format!(
            "{}x{} image is too small for the encoder's receptive field",
            img.height, img.width
        )));
    }
    Ok(())
}

pub fn encode_with_cache(img: &ToyImage, params: &EncoderParams) -> Result<ForwardCache> {
    check_input(img, params)?;
    let mut x = Grid {
        c: img.channels,
        h: img.height,
        w: img.width,
        data: img.pixels.clone(),
    };
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let pre = conv_forward(layer, &x);
        let act = relu(&pre);
        let next = if layer.spec.downsample {
            downsample(&act)
        } else {
            act
        };
        inputs.push(std::mem::replace(&mut x, next));
        pre_activations.push(pre);
    }
    let output = SpatialFeatureMap::new(x.c, x.h, x.w, x.data)?;
    Ok(ForwardCache {
        inputs,
        pre_activations,
        output,
    })
}

pub fn encode(img: &ToyImage, params: &EncoderParams) -> Result<SpatialFeatureMap> {
    Ok(encode_with_cache(img, params)?.output)
}

/// Reverse-mode gradients of the encoder parameters given the gradient of
/// some scalar w.r.t. the output map (same `(channel, row, col)` layout).
pub fn encode_backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<EncoderGrads> {
    let out = &cache.output;
    if upstream.len() != out.values().len() {
        return Err(SfrError::DimensionMismatch(format!(
            "upstream gradient has {} values, output map has {}",
            upstream.len(),
            out.values().len()
        )));
    }
    let mut grads = EncoderGrads::zeros_like(params);
    let mut g = Grid {
        c: out.channels(),
        h: out.height(),
        w: out.width(),
        data: upstream.to_vec(),
    };
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let pre = &cache.pre_activations[li];
        let input = &cache.inputs[li];
        // Through the downsample: each pooled cell feeds its 2x2 block.
        let mut g_act = if layer.spec.downsample {
            let mut up = Grid::zeros(pre.c, pre.h, pre.w);
            for c in 0..g.c {
                for r in 0..g.h {
                    for col in 0..g.w {
                        let v = 0.25 * g.data[g.at(c, r, col)];
                        for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let idx = up.at(c, 2 * r + dr, 2 * col + dc);
                            up.data[idx] = v;
                        }
                    }
                }
            }
            up
        } else {
            g
        };
        // Rectifier; subgradient 0 at exactly 0.
        for (gv, &p) in g_act.data.iter_mut().zip(&pre.data) {
            if p <= 0.0 {
                *gv = 0.0;
            }
        }
        let k = layer.spec.kernel;
        let (oh, ow) = (pre.h, pre.w);
        let gw = &mut grads.weights[li];
        let gb = &mut grads.bias[li];
        let mut g_in = Grid::zeros(input.c, input.h, input.w);
        for o in 0..layer.spec.out_channels {
            let gplane = &g_act.data[o * oh * ow..(o + 1) * oh * ow];
            gb[o] += gplane.iter().sum::<f64>();
            for i in 0..layer.spec.in_channels {
                for u in 0..k {
                    for v in 0..k {
                        let wi = layer.w_index(o, i, u, v);
                        let wt = layer.weights[wi];
                        let mut acc = 0.0;
                        for r in 0..oh {
                            let src = input.at(i, r + u, v);
                            let grow = &gplane[r * ow..(r + 1) * ow];
                            acc += grow
                                .iter()
                                .zip(&input.data[src..src + ow])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                            for (dst, gv) in g_in.data[src..src + ow].iter_mut().zip(grow) {
                                *dst += wt * gv;
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
        g = g_in;
    }
    Ok(grads)
}
