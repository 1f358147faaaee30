use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfr_core::encoder::{
    encode, encode_backward, encode_with_cache, init_params, load_params, output_shape,
    save_params, EncoderParams, LayerSpec, ToyImage,
};
use sfr_core::oracle::finite_difference_flat;

fn image(c: usize, h: usize, w: usize, seed: u64) -> ToyImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ToyImage::new(c, h, w, (0..c * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn symbolic_shape(specs: &[(usize, usize, bool)], h: usize, w: usize) -> Option<(usize, usize)> {
    let (mut h, mut w) = (h as i64, w as i64);
    for &(_, k, ds) in specs {
        h -= k as i64 - 1;
        w -= k as i64 - 1;
        if h < 1 || w < 1 {
            return None;
        }
        if ds {
            if h < 2 || w < 2 {
                return None;
            }
            h /= 2;
            w /= 2;
        }
    }
    Some((h as usize, w as usize))
}

#[test]
fn documented_shape_chain() {
    let specs = [LayerSpec::new(1, 4, 3, true), LayerSpec::new(4, 6, 3, true)];
    let params = init_params(&specs, 1).unwrap();
    let out = encode(&image(1, 32, 16, 0), &params).unwrap();
    assert_eq!((out.channels(), out.height(), out.width()), (6, 6, 2));
}

#[test]
fn too_small_images_and_bad_chains_are_rejected() {
    let params = init_params(&[LayerSpec::new(1, 2, 5, false)], 1).unwrap();
    assert!(encode(&image(1, 4, 8, 0), &params).is_err());
    assert!(encode(&image(2, 8, 8, 0), &params).is_err());
    assert!(init_params(&[LayerSpec::new(1, 2, 3, false), LayerSpec::new(3, 2, 3, false)], 1).is_err());
    assert!(ToyImage::new(1, 1, 2, vec![0.5, 1.5]).is_err());
}

#[test]
fn identity_encoder_passes_input_through() {
    let img = image(2, 3, 4, 5);
    let out = encode(&img, &EncoderParams::identity()).unwrap();
    assert_eq!(out.values(), img.pixels());
    assert_eq!(init_params(&[], 3).unwrap().param_count(), 0);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let specs = [LayerSpec::new(1, 3, 3, true), LayerSpec::new(3, 2, 1, false)];
    let params = init_params(&specs, 42).unwrap();
    let p = dir.path().join("enc.sfrf");
    save_params(&params, &p).unwrap();
    let back = load_params(&p).unwrap();
    assert_eq!(back.specs(), params.specs());
    assert_eq!(back.seed, 42);
    for (a, b) in back.flat().iter().zip(params.flat()) {
        assert_eq!(*a, b as f32 as f64);
    }
    std::fs::write(&p, b"SFRF\x01\0\0\0").unwrap();
    assert!(load_params(&p).is_err());
}

#[test]
fn initialization_scale_follows_fan_in() {
    let params = init_params(&[LayerSpec::new(4, 64, 3, false)], 9).unwrap();
    let w = &params.layers[0].weights;
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var * 36.0 - 1.0).abs() < 0.15, "variance {var}");
    assert!(params.layers[0].bias.iter().all(|&b| b == 0.0));
}

fn stack() -> impl Strategy<Value = Vec<(usize, usize, bool)>> {
    prop::collection::vec((1usize..4, 1usize..4, any::<bool>()), 0..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shape_law(layers in stack(), h in 1usize..40, w in 1usize..40) {
        let mut specs = Vec::new();
        let mut c = 1;
        for &(out, k, ds) in &layers {
            specs.push(LayerSpec::new(c, out, k, ds));
            c = out;
        }
        let expect = symbolic_shape(&layers, h, w);
        prop_assert_eq!(output_shape(&specs, 1, h, w).map(|(_, h, w)| (h, w)), expect);
        let params = init_params(&specs, 3).unwrap();
        match encode(&image(1, h, w, 1), &params) {
            Ok(m) => prop_assert_eq!(Some((m.height(), m.width())), expect),
            Err(_) => prop_assert_eq!(expect, None),
        }
    }

    #[test]
    fn backward_matches_finite_differences(seed in any::<u64>(), ds in any::<bool>()) {
        let specs = [LayerSpec::new(2, 3, 3, ds), LayerSpec::new(3, 2, 2, false)];
        let mut params = init_params(&specs, seed).unwrap();
        // Zero biases leave fully dead windows at exactly 0, where the
        // rectifier's one-sided slopes disagree.
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        for l in &mut params.layers {
            for b in &mut l.bias {
                *b = rng.random_range(0.05..0.2);
            }
        }
        let img = image(2, 9, 8, seed.wrapping_add(1));
        let out = encode(&img, &params).unwrap();
        let upstream: Vec<f64> = (0..out.values().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = encode_with_cache(&img, &params).unwrap();
        let analytic = encode_backward(&params, &cache, &upstream).unwrap().flat();
        let f = |flat: &[f64]| {
            let p = params.with_flat(flat).unwrap();
            encode(&img, &p).unwrap().values().iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
        };
        let numeric = finite_difference_flat(f, &params.flat(), 1e-6).unwrap();
        let scale = numeric.iter().fold(1e-3f64, |a, b| a.max(b.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            prop_assert!((a - n).abs() <= 1e-4 * scale, "{} vs {}", a, n);
        }
    }
}
