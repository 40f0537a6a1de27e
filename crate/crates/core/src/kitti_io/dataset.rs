use std::path::{Path, PathBuf};

use super::{
    io_err, read_calib, read_ground_truth, read_velodyne, write_calib, write_ground_truth, write_velodyne, Calibration,
    KittiError,
};
use crate::scene::Scene;

/// Directory layout of a KITTI object split: `velodyne/<id>.bin`,
/// `label_2/<id>.txt`, `calib/<id>.txt`.
#[derive(Debug, Clone)]
pub struct KittiLayout {
    pub root: PathBuf,
}

impl KittiLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn velodyne(&self, id: &str) -> PathBuf {
        self.root.join("velodyne").join(format!("{id}.bin"))
    }

    pub fn label(&self, id: &str) -> PathBuf {
        self.root.join("label_2").join(format!("{id}.txt"))
    }

    pub fn calib(&self, id: &str) -> PathBuf {
        self.root.join("calib").join(format!("{id}.txt"))
    }

    pub fn create_dirs(&self) -> Result<(), KittiError> {
        for sub in ["velodyne", "label_2", "calib"] {
            let p = self.root.join(sub);
            std::fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

/// Scene ids present under `velodyne/`, sorted.
pub fn list_scene_ids(root: impl AsRef<Path>) -> Result<Vec<String>, KittiError> {
    let dir = root.as_ref().join("velodyne");
    let mut ids: Vec<String> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "bin").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    ids.sort();
    Ok(ids)
}

/// Loads a scene's cloud and, when a label file exists, its ground truth.
/// A missing calibration file falls back to the identity.
pub fn load_scene(layout: &KittiLayout, id: &str) -> Result<Scene, KittiError> {
    let cloud = read_velodyne(layout.velodyne(id))?;
    let calib_path = layout.calib(id);
    let calib = if calib_path.exists() { read_calib(&calib_path)? } else { Calibration::identity() };
    let label_path = layout.label(id);
    let gt = if label_path.exists() { read_ground_truth(&label_path, &calib)? } else { Vec::new() };
    Ok(Scene::new(id, cloud).with_ground_truth(gt))
}

/// Writes a scene's cloud, ground truth and an identity calibration.
pub fn export_scene(layout: &KittiLayout, scene: &Scene) -> Result<(), KittiError> {
    let calib = Calibration::identity();
    write_velodyne(layout.velodyne(&scene.id), &scene.cloud)?;
    write_calib(layout.calib(&scene.id), &calib)?;
    write_ground_truth(layout.label(&scene.id), &scene.ground_truth, &calib)
}
