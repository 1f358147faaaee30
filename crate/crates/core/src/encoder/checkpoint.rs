//! Encoder checkpoints in the SFRF container (version 2).
//!
//! ```text
//! "SFRF" | u32 version = 2 | u32 layer count | u64 seed |
//! per layer: u32 out, u32 in, u32 k, u32 downsample (0 or 1) |
//! all kernels (layer order) then all biases, binary32 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_chain, ConvLayer, EncoderParams, LayerSpec};
use crate::error::{Result, SfrError};
use crate::features::sfrf::{check_f32_range, read_f32_payload, read_magic, read_u32, write_f32, MAP_MAGIC};

pub const CHECKPOINT_VERSION: u32 = 2;

pub fn write_params(params: &EncoderParams, w: &mut impl Write) -> Result<()> {
    params.validate()?;
    check_f32_range(params.flat())?;
    let io = |e| SfrError::io("<writer>", e);
    w.write_all(MAP_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&params.seed.to_le_bytes()).map_err(io)?;
    for l in &params.layers {
        let s = l.spec;
        for v in [s.out_channels, s.in_channels, s.kernel, usize::from(s.downsample)] {
            w.write_all(&(v as u32).to_le_bytes()).map_err(io)?;
        }
    }
    for l in &params.layers {
        for &v in &l.weights {
            write_f32(w, v).map_err(io)?;
        }
    }
    for l in &params.layers {
        for &v in &l.bias {
            write_f32(w, v).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_params(r: &mut impl Read) -> Result<EncoderParams> {
    read_magic(r, MAP_MAGIC)?;
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(SfrError::Format(format!(
            "SFRF version {version} is not an encoder checkpoint (expected {CHECKPOINT_VERSION})"
        )));
    }
    let n = read_u32(r)? as usize;
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed)
        .map_err(|e| SfrError::Format(format!("truncated header: {e}")))?;
    let mut specs = Vec::with_capacity(n);
    for _ in 0..n {
        let out_c = read_u32(r)? as usize;
        let in_c = read_u32(r)? as usize;
        let k = read_u32(r)? as usize;
        let flag = read_u32(r)?;
        if flag > 1 {
            return Err(SfrError::Format(format!("downsample flag {flag} is not 0 or 1")));
        }
        specs.push(LayerSpec::new(in_c, out_c, k, flag == 1));
    }
    check_chain(&specs).map_err(|e| SfrError::Format(e.to_string()))?;
    let n_weights: usize = specs.iter().map(LayerSpec::weight_len).sum();
    let n_bias: usize = specs.iter().map(|s| s.out_channels).sum();
    let payload = read_f32_payload(r, n_weights + n_bias)?;
    let (mut weights, mut biases) = payload.split_at(n_weights);
    let layers = specs
        .into_iter()
        .map(|spec| {
            let (w, rest) = weights.split_at(spec.weight_len());
            weights = rest;
            let (b, rest) = biases.split_at(spec.out_channels);
            biases = rest;
            ConvLayer {
                spec,
                weights: w.to_vec(),
                bias: b.to_vec(),
            }
        })
        .collect();
    Ok(EncoderParams {
        layers,
        seed: u64::from_le_bytes(seed),
    })
}

pub fn save_params(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SfrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_params(params, &mut w)?;
    w.flush().map_err(|e| SfrError::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SfrError::io(path, e))?;
    read_params(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::features::{read_feature_map, SpatialFeatureMap};

    #[test]
    fn round_trip_through_binary32() {
        let specs = [LayerSpec::new(1, 3, 3, true), LayerSpec::new(3, 4, 2, false)];
        let params = init_params(&specs, 42).unwrap();
        let mut buf = Vec::new();
        write_params(&params, &mut buf).unwrap();
        let back = read_params(&mut buf.as_slice()).unwrap();
        assert_eq!(back.specs(), params.specs());
        assert_eq!(back.seed, 42);
        for (a, b) in back.flat().iter().zip(params.flat()) {
            assert_eq!(*a, f64::from(b as f32));
        }
        // Kernels of every layer precede all biases.
        let header = 4 + 4 + 4 + 8 + 2 * 16;
        let first_bias = header + 4 * (27 + 48);
        assert_eq!(buf.len(), first_bias + 4 * 7);
    }

    #[test]
    fn map_and_checkpoint_versions_are_distinct() {
        let params = init_params(&[LayerSpec::new(1, 1, 1, false)], 0).unwrap();
        let mut buf = Vec::new();
        write_params(&params, &mut buf).unwrap();
        assert!(read_feature_map(&mut buf.as_slice()).is_err());

        let mut map_buf = Vec::new();
        crate::features::write_feature_map(
            &SpatialFeatureMap::filled(1, 1, 1, 0.0).unwrap(),
            &mut map_buf,
        )
        .unwrap();
        assert!(read_params(&mut map_buf.as_slice()).is_err());
    }
}
