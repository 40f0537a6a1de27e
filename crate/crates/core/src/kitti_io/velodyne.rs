use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{io_err, KittiError};
use crate::geometry::{Point3, PointCloud};
use crate::seed::rng_from;

const RECORD: usize = 16;

/// Decodes little-endian `(x, y, z, reflectance)` f32 records.
pub fn parse_velodyne(bytes: &[u8]) -> Result<PointCloud, KittiError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(KittiError::InvalidLength { len: bytes.len() });
    }
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(KittiError::TruncatedRecord { len: bytes.len(), complete_points: bytes.len() / RECORD });
    }
    let n = bytes.len() / RECORD;
    let mut points = Vec::with_capacity(n);
    let mut refl = Vec::with_capacity(n);
    for (index, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let vals = [f(0), f(1), f(2), f(3)];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(KittiError::NonFinite { index });
        }
        points.push(Point3::new(vals[0] as f64, vals[1] as f64, vals[2] as f64));
        refl.push(vals[3] as f64);
    }
    Ok(PointCloud { points, reflectance: Some(refl) })
}

pub fn read_velodyne(path: impl AsRef<Path>) -> Result<PointCloud, KittiError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    parse_velodyne(&bytes)
}

/// Encodes a cloud as f32 records; absent reflectance is written as zero.
pub fn velodyne_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for (i, p) in cloud.points.iter().enumerate() {
        let r = cloud.reflectance.as_ref().map_or(0.0, |r| r[i]);
        for v in [p.x, p.y, p.z, r] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_velodyne(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), KittiError> {
    let path = path.as_ref();
    std::fs::write(path, velodyne_bytes(cloud)).map_err(io_err(path))
}

/// Resamples a cloud to exactly `n` points.
///
/// Clouds with at least `n` points are sampled without replacement. Smaller
/// clouds keep every point once and are topped up with draws with
/// replacement; the result is shuffled.
pub fn subsample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, KittiError> {
    if n == 0 {
        return Err(KittiError::ZeroSampleSize);
    }
    if cloud.is_empty() {
        return Err(KittiError::EmptyCloud);
    }
    let mut rng = rng_from(seed);
    let len = cloud.len();
    let indices: Vec<usize> = if len >= n {
        rand::seq::index::sample(&mut rng, len, n).into_vec()
    } else {
        let mut idx: Vec<usize> = (0..len).collect();
        idx.extend((len..n).map(|_| rng.random_range(0..len)));
        idx.shuffle(&mut rng);
        idx
    };
    Ok(cloud.select(&indices))
}
