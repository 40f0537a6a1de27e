//! Deterministic synthetic LiDAR-like scenes with ground truth, grouped into
//! pseudo-sequences.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bev_iou, Box3D, Detection, ObjectClass, Point3, PointCloud, Size3};
use crate::kitti_io::{export_scene, io_err, Difficulty, KittiError, KittiLayout};
use crate::scene::{GroundTruth, Scene};
use crate::seed::derive_rng;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth parameter: {0}")]
    InvalidParam(String),
}

/// Size distribution and per-scene count range of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    /// Mean (l, w, h).
    pub mean_size: [f64; 3],
    /// Each dimension is drawn uniformly within this relative band.
    pub rel_jitter: f64,
    /// Inclusive range of objects requested per scene.
    pub count: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub ground_z: f64,
    pub ground_points: usize,
    pub ground_z_noise: f64,
    /// Indexed by class id.
    pub classes: Vec<ClassSpec>,
    pub interior_points: [usize; 2],
    /// Interior counts at or above these mark Easy and Moderate objects.
    pub difficulty_points: [usize; 2],
    pub clutter_points: usize,
    /// Height band of uniform clutter above the ground.
    pub clutter_height: f64,
    /// Range of compact clutter blobs per scene (poles, bushes).
    pub clutter_blobs: [usize; 2],
    pub blob_points: [usize; 2],
    /// Blob footprint and height range.
    pub blob_size: [f64; 2],
    pub sequence_len: usize,
    /// Every sequence scales its object sizes by a factor drawn uniformly
    /// from `1 ± sequence_size_drift`.
    pub sequence_size_drift: f64,
    /// Applied to all sizes; set per sequence by `generate_dataset`.
    pub size_scale: f64,
    pub placement_retries: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            x_range: [2.0, 50.0],
            y_range: [-20.0, 20.0],
            ground_z: -1.7,
            ground_points: 2000,
            ground_z_noise: 0.02,
            classes: vec![
                ClassSpec { mean_size: [3.9, 1.6, 1.5], rel_jitter: 0.1, count: [1, 5] },
                ClassSpec { mean_size: [0.8, 0.6, 1.7], rel_jitter: 0.1, count: [0, 3] },
                ClassSpec { mean_size: [1.8, 0.6, 1.7], rel_jitter: 0.1, count: [0, 2] },
            ],
            interior_points: [30, 150],
            difficulty_points: [90, 50],
            clutter_points: 150,
            clutter_height: 2.5,
            clutter_blobs: [0, 3],
            blob_points: [10, 60],
            blob_size: [0.3, 1.5],
            sequence_len: 10,
            sequence_size_drift: 0.15,
            size_scale: 1.0,
            placement_retries: 100,
        }
    }
}

fn ordered<T: PartialOrd>(r: &[T; 2]) -> bool {
    r[0] <= r[1]
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParam(m.to_string()));
        if !(ordered(&self.x_range) && ordered(&self.y_range))
            || self.x_range[0] == self.x_range[1]
            || self.y_range[0] == self.y_range[1]
        {
            return bad("scene extent must be a non-empty range");
        }
        if self.ground_points == 0 {
            return bad("ground_points must be positive");
        }
        if !(self.ground_z_noise >= 0.0 && self.clutter_height >= 0.0) {
            return bad("noise and heights must be non-negative");
        }
        if self.classes.is_empty() {
            return bad("at least one class is required");
        }
        for c in &self.classes {
            if !c.mean_size.iter().all(|s| *s > 0.0) || !(0.0..1.0).contains(&c.rel_jitter) || !ordered(&c.count) {
                return bad("class sizes must be positive, jitter in [0,1), count ordered");
            }
        }
        if !ordered(&self.interior_points) || self.interior_points[0] == 0 {
            return bad("interior_points must be an ordered positive range");
        }
        if !(ordered(&self.clutter_blobs) && ordered(&self.blob_points) && ordered(&self.blob_size))
            || self.blob_size[0] <= 0.0
        {
            return bad("blob ranges must be ordered and positive");
        }
        if self.sequence_len == 0 {
            return bad("sequence_len must be positive");
        }
        if !(0.0..1.0).contains(&self.sequence_size_drift) || !(self.size_scale > 0.0) {
            return bad("size drift must be in [0,1) and size_scale positive");
        }
        Ok(())
    }

    fn difficulty(&self, points: usize) -> Difficulty {
        if points >= self.difficulty_points[0] {
            Difficulty::Easy
        } else if points >= self.difficulty_points[1] {
            Difficulty::Moderate
        } else {
            Difficulty::Hard
        }
    }
}

/// Values are rounded to `f32` so the velodyne round trip is exact.
fn f32_point(x: f64, y: f64, z: f64) -> Point3 {
    Point3::new(x as f32 as f64, y as f32 as f64, z as f32 as f64)
}

fn range(rng: &mut ChaCha8Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn interior_point(rng: &mut ChaCha8Rng, b: &Box3D) -> Point3 {
    let u = (rng.random::<f64>() - 0.5) * b.size.l;
    let v = (rng.random::<f64>() - 0.5) * b.size.w;
    let z = b.z_min() + rng.random::<f64>() * b.size.h;
    let (s, c) = b.yaw.sin_cos();
    f32_point(b.center.x + c * u - s * v, b.center.y + s * u + c * v, z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedScene {
    pub scene: Scene,
    /// Objects requested per class.
    pub requested: Vec<usize>,
    /// Objects placed per class; lower than requested after placement failures.
    pub placed: Vec<usize>,
}

/// One scene: flat noisy ground, non-overlapping boxes standing on it with
/// uniform interior points, then clutter.
pub fn generate_scene(id: &str, seed: u64, params: &SynthParams) -> Result<GeneratedScene, SynthError> {
    params.validate()?;
    let mut rng = derive_rng(seed, &["synth", id]);
    let mut points = Vec::new();
    for _ in 0..params.ground_points {
        let x = uniform(&mut rng, params.x_range);
        let y = uniform(&mut rng, params.y_range);
        let dz = (rng.random::<f64>() - 0.5) * 2.0 * params.ground_z_noise;
        points.push(f32_point(x, y, params.ground_z + dz));
    }

    let requested: Vec<usize> = params.classes.iter().map(|c| range(&mut rng, c.count)).collect();
    let mut placed = vec![0; params.classes.len()];
    let mut boxes: Vec<Box3D> = Vec::new();
    let mut ground_truth = Vec::new();
    for (k, spec) in params.classes.iter().enumerate() {
        for _ in 0..requested[k] {
            let dims: Vec<f64> = spec
                .mean_size
                .iter()
                .map(|m| m * params.size_scale * (1.0 + spec.rel_jitter * (2.0 * rng.random::<f64>() - 1.0)))
                .collect();
            let size = Size3::new(dims[0], dims[1], dims[2]);
            let mut found = None;
            for _ in 0..=params.placement_retries {
                let x = uniform(&mut rng, params.x_range);
                let y = uniform(&mut rng, params.y_range);
                let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let center = Point3::new(x, y, params.ground_z + size.h / 2.0);
                let Ok(candidate) = Box3D::new(center, size, yaw) else { continue };
                if boxes.iter().all(|b| bev_iou(b, &candidate) <= 0.0) {
                    found = Some(candidate);
                    break;
                }
            }
            let Some(bbox) = found else { continue };
            let n = range(&mut rng, params.interior_points);
            for _ in 0..n {
                points.push(interior_point(&mut rng, &bbox));
            }
            let detection = Detection::new(bbox, k, 1.0).expect("confidence 1 is valid");
            ground_truth.push(GroundTruth { detection, difficulty: params.difficulty(n) });
            boxes.push(bbox);
            placed[k] += 1;
        }
    }

    for _ in 0..params.clutter_points {
        let x = uniform(&mut rng, params.x_range);
        let y = uniform(&mut rng, params.y_range);
        let z = params.ground_z + rng.random::<f64>() * params.clutter_height;
        points.push(f32_point(x, y, z));
    }
    for _ in 0..range(&mut rng, params.clutter_blobs) {
        let cx = uniform(&mut rng, params.x_range);
        let cy = uniform(&mut rng, params.y_range);
        let r = uniform(&mut rng, params.blob_size) / 2.0;
        let h = uniform(&mut rng, params.blob_size);
        for _ in 0..range(&mut rng, params.blob_points) {
            let x = cx + (2.0 * rng.random::<f64>() - 1.0) * r;
            let y = cy + (2.0 * rng.random::<f64>() - 1.0) * r;
            points.push(f32_point(x, y, params.ground_z + rng.random::<f64>() * h));
        }
    }

    let reflectance = (0..points.len()).map(|_| rng.random::<f32>() as f64).collect();
    let cloud = PointCloud::with_reflectance(points, reflectance).expect("lengths match");
    let scene = Scene::new(id, cloud).with_ground_truth(ground_truth);
    Ok(GeneratedScene { scene, requested, placed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub scenes: Vec<Scene>,
    /// Scene id to sequence id.
    pub sequences: BTreeMap<String, String>,
    pub placement_failures: usize,
}

pub fn scene_id(i: usize) -> String {
    format!("{i:06}")
}

/// `n_scenes` scenes in consecutive sequences of `params.sequence_len`.
/// Sizes drift per sequence when `sequence_size_drift > 0`.
pub fn generate_dataset(n_scenes: usize, params: &SynthParams, seed: u64) -> Result<SynthDataset, SynthError> {
    if n_scenes == 0 {
        return Err(SynthError::InvalidParam("n_scenes must be positive".into()));
    }
    params.validate()?;
    let mut scenes = Vec::with_capacity(n_scenes);
    let mut sequences = BTreeMap::new();
    let mut placement_failures = 0;
    let mut seq_params = params.clone();
    for i in 0..n_scenes {
        let seq = format!("seq{:04}", i / params.sequence_len);
        if i % params.sequence_len == 0 {
            let u: f64 = derive_rng(seed, &["sequence", &seq]).random();
            seq_params.size_scale = params.size_scale * (1.0 + params.sequence_size_drift * (2.0 * u - 1.0));
        }
        let id = scene_id(i);
        let g = generate_scene(&id, seed, &seq_params)?;
        placement_failures += g.requested.iter().sum::<usize>() - g.placed.iter().sum::<usize>();
        sequences.insert(id, seq);
        scenes.push(g.scene);
    }
    Ok(SynthDataset { scenes, sequences, placement_failures })
}

/// Writes the scenes in KITTI layout plus `sequences.txt` under `root`.
pub fn export_dataset(root: impl AsRef<Path>, dataset: &SynthDataset) -> Result<(), KittiError> {
    let layout = KittiLayout::new(root.as_ref());
    layout.create_dirs()?;
    for scene in &dataset.scenes {
        export_scene(&layout, scene)?;
    }
    let path = root.as_ref().join("sequences.txt");
    let text: String = dataset.sequences.iter().map(|(id, seq)| format!("{id} {seq}\n")).collect();
    std::fs::write(&path, text).map_err(io_err(&path))
}

/// Class names in id order, for reports.
pub fn class_names(params: &SynthParams) -> Vec<String> {
    (0..params.classes.len())
        .map(|k| ObjectClass::from_index(k).map_or(format!("class{k}"), |c| c.name().to_string()))
        .collect()
}
