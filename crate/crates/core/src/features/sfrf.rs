//! SFRF binary container.
//!
//! Layout (all little-endian):
//! ```text
//! "SFRF" | u32 version = 1 | u32 channels | u32 height | u32 width |
//! channels*height*width binary32 values, (channel, row, col) with channel outermost
//! ```
//! Values are stored as binary32, so a map round-trips bit-exactly whenever
//! its values are representable in single precision (every loaded map is).
//!
//! The pooled variant written by the `pool` command uses magic "SFRM":
//! ```text
//! "SFRM" | u32 version = 1 | u32 dim | u32 count | u32 flags (bit 0: normalized) |
//! dim binary32 global values | dim*count binary32 spatial values, column-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{FeatureMatrix, GlobalFeature, SpatialFeatureMap};
use crate::error::{Result, SfrError};

pub const MAP_MAGIC: &[u8; 4] = b"SFRF";
pub const POOLED_MAGIC: &[u8; 4] = b"SFRM";
pub const MAP_VERSION: u32 = 1;
pub const POOLED_VERSION: u32 = 1;

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| SfrError::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| SfrError::Format(format!("missing magic: {e}")))?;
    if &magic != expected {
        return Err(SfrError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expected)
        )));
    }
    Ok(())
}

/// Reads exactly `expected` binary32 values and rejects trailing bytes.
pub(crate) fn read_f32_payload(r: &mut impl Read, expected: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| SfrError::Format(format!("reading payload: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(SfrError::DimensionMismatch(format!(
            "header declares {expected} values but payload holds {} bytes ({} values)",
            bytes.len(),
            bytes.len() as f64 / 4.0
        )));
    }
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, b)| {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if v.is_finite() {
                Ok(f64::from(v))
            } else {
                Err(SfrError::NonFinite(format!("payload value {i} is {v}")))
            }
        })
        .collect()
}

pub(crate) fn write_f32(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&(v as f32).to_le_bytes())
}

pub(crate) fn check_f32_range(values: impl IntoIterator<Item = f64>) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        if !(v as f32).is_finite() {
            return Err(SfrError::NonFinite(format!(
                "value {i} ({v}) overflows binary32"
            )));
        }
    }
    Ok(())
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| SfrError::InvalidInput(format!("{what} {v} exceeds u32")))
}

pub fn read_feature_map(r: &mut impl Read) -> Result<SpatialFeatureMap> {
    read_magic(r, MAP_MAGIC)?;
    let version = read_u32(r)?;
    if version != MAP_VERSION {
        return Err(SfrError::Format(format!(
            "unsupported SFRF version {version}, expected {MAP_VERSION}"
        )));
    }
    let c = read_u32(r)? as usize;
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    if c == 0 || h == 0 || w == 0 {
        return Err(SfrError::Format(format!("zero dimension in header {c}x{h}x{w}")));
    }
    let values = read_f32_payload(r, c * h * w)?;
    SpatialFeatureMap::new(c, h, w, values)
}

pub fn write_feature_map(map: &SpatialFeatureMap, w: &mut impl Write) -> Result<()> {
    check_f32_range(map.values().iter().copied())?;
    let io = |e| SfrError::io("<writer>", e);
    w.write_all(MAP_MAGIC).map_err(io)?;
    for v in [
        MAP_VERSION,
        dim_u32(map.channels(), "channels")?,
        dim_u32(map.height(), "height")?,
        dim_u32(map.width(), "width")?,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for &v in map.values() {
        write_f32(w, v).map_err(io)?;
    }
    Ok(())
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<SpatialFeatureMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SfrError::io(path, e))?;
    read_feature_map(&mut BufReader::new(file))
}

pub fn save_feature_map(map: &SpatialFeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SfrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_feature_map(map, &mut w).map_err(|e| relabel(e, path))?;
    w.flush().map_err(|e| SfrError::io(path, e))
}

fn relabel(e: SfrError, path: &Path) -> SfrError {
    match e {
        SfrError::Io { source, .. } => SfrError::io(path, source),
        other => other,
    }
}

/// Global feature plus multi-scale spatial features of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    pub global: GlobalFeature,
    pub spatial: FeatureMatrix,
}

pub fn save_pooled(pooled: &PooledFeatures, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (g, x) = (&pooled.global, &pooled.spatial);
    if g.dim() != x.dim() {
        return Err(SfrError::DimensionMismatch(format!(
            "global dim {} vs spatial dim {}",
            g.dim(),
            x.dim()
        )));
    }
    check_f32_range(g.as_slice().iter().chain(x.matrix().iter()).copied())?;
    let file = File::create(path).map_err(|e| SfrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| SfrError::io(path, e);
    w.write_all(POOLED_MAGIC).map_err(io)?;
    for v in [
        POOLED_VERSION,
        dim_u32(x.dim(), "dim")?,
        dim_u32(x.count(), "count")?,
        u32::from(x.is_normalized()),
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for &v in g.as_slice().iter().chain(x.matrix().as_slice()) {
        write_f32(&mut w, v).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_pooled(path: impl AsRef<Path>) -> Result<PooledFeatures> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SfrError::io(path, e))?;
    let mut r = BufReader::new(file);
    read_magic(&mut r, POOLED_MAGIC)?;
    let version = read_u32(&mut r)?;
    if version != POOLED_VERSION {
        return Err(SfrError::Format(format!("unsupported SFRM version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let flags = read_u32(&mut r)?;
    let values = read_f32_payload(&mut r, dim * (count + 1))?;
    let global = GlobalFeature::new(DVector::from_column_slice(&values[..dim]))?;
    let mut spatial = FeatureMatrix::new(DMatrix::from_column_slice(dim, count, &values[dim..]))?;
    if flags & 1 == 1 {
        spatial = super::l2_normalize_columns(&spatial);
    }
    Ok(PooledFeatures { global, spatial })
}
