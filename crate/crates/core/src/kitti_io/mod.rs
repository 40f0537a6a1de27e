//! KITTI object-benchmark artifacts: velodyne scans, label files and
//! calibration, plus subsampling and sequence-aware dataset splits.

mod calib;
mod dataset;
mod label;
mod split;
mod velodyne;

use std::path::PathBuf;

use thiserror::Error;

pub use calib::{read_calib, write_calib, Calibration};
pub use dataset::{export_scene, list_scene_ids, load_scene, KittiLayout};
pub use label::{
    assign_difficulty, detection_to_label, label_to_detection, read_ground_truth, read_label, read_label_records,
    write_ground_truth, write_label, write_label_records, Difficulty, KittiLabel, LabelMeta,
};
pub use split::{
    block_sequence_map, fill_in_order, read_sequence_map, read_split_manifest, split_by_sequence, write_split_manifest,
    DatasetSplit, Ratio,
};
pub use velodyne::{parse_velodyne, read_velodyne, subsample, velodyne_bytes, write_velodyne};

/// Number of points each scene is resampled to before training.
pub const DEFAULT_SUBSAMPLE: usize = 16_384;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("velodyne data ends inside a record: {len} bytes hold {complete_points} whole points")]
    TruncatedRecord { len: usize, complete_points: usize },
    #[error("velodyne length {len} is not a multiple of the 4-byte float width")]
    InvalidLength { len: usize },
    #[error("non-finite value in velodyne point {index}")]
    NonFinite { index: usize },
    #[error("{path}:{line}: {reason}")]
    MalformedLine { path: PathBuf, line: usize, reason: String },
    #[error("calibration is missing key {0}")]
    MissingCalibKey(&'static str),
    #[error("cannot subsample an empty cloud")]
    EmptyCloud,
    #[error("subsample size must be positive")]
    ZeroSampleSize,
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("scene {0} has no sequence mapping")]
    UnmappedId(String),
    #[error("no scene ids to split")]
    NoIds,
    #[error("invalid manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> KittiError + '_ {
    move |source| KittiError::Io { path: path.to_path_buf(), source }
}
