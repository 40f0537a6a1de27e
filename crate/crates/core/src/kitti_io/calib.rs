use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{io_err, KittiError};
use crate::geometry::Point3;

/// Per-frame KITTI calibration. Matrices are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Left color camera projection. Parsed but not used for 3D work.
    pub p2: [f64; 12],
    pub r0_rect: [f64; 9],
    pub tr_velo_to_cam: [f64; 12],
}

impl Calibration {
    pub fn identity() -> Self {
        let mut p = [0.0; 12];
        p[0] = 1.0;
        p[5] = 1.0;
        p[10] = 1.0;
        Self { p2: p, r0_rect: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], tr_velo_to_cam: p }
    }

    fn r0(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.r0_rect)
    }

    fn tr(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let t = &self.tr_velo_to_cam;
        (Matrix3::new(t[0], t[1], t[2], t[4], t[5], t[6], t[8], t[9], t[10]), Vector3::new(t[3], t[7], t[11]))
    }

    /// LiDAR frame to rectified camera frame: `R0_rect * (R * p + t)`.
    pub fn velo_to_cam(&self, p: &Point3) -> Point3 {
        let (r, t) = self.tr();
        let v = self.r0() * (r * Vector3::new(p.x, p.y, p.z) + t);
        Point3::new(v.x, v.y, v.z)
    }

    /// Rectified camera frame to LiDAR frame, the inverse of [`velo_to_cam`].
    ///
    /// [`velo_to_cam`]: Calibration::velo_to_cam
    pub fn cam_to_velo(&self, p: &Point3) -> Point3 {
        let (r, t) = self.tr();
        let r0_inv = self.r0().try_inverse().unwrap_or_else(Matrix3::identity);
        let r_inv = r.try_inverse().unwrap_or_else(Matrix3::identity);
        let v = r_inv * (r0_inv * Vector3::new(p.x, p.y, p.z) - t);
        Point3::new(v.x, v.y, v.z)
    }

    /// Largest deviation of `R0_rect * R0_rectᵀ` from the identity.
    pub fn r0_orthonormality_error(&self) -> f64 {
        let r = self.r0();
        (r * r.transpose() - Matrix3::identity()).abs().max()
    }

    pub fn is_finite(&self) -> bool {
        self.p2.iter().chain(&self.r0_rect).chain(&self.tr_velo_to_cam).all(|v| v.is_finite())
    }
}

fn parse_values<const N: usize>(path: &Path, line: usize, key: &str, rest: &str) -> Result<[f64; N], KittiError> {
    let vals: Vec<f64> = rest
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| KittiError::MalformedLine { path: path.to_path_buf(), line, reason: format!("{key}: {e}") })?;
    vals.try_into().map_err(|v: Vec<f64>| KittiError::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason: format!("{key} expects {N} values, found {}", v.len()),
    })
}

pub(crate) fn parse_calib(path: &Path, text: &str) -> Result<Calibration, KittiError> {
    let (mut p2, mut r0, mut tr) = (None, None, None);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some((key, rest)) = raw.split_once(':') else {
            continue;
        };
        match key.trim() {
            "P2" => p2 = Some(parse_values::<12>(path, line, "P2", rest)?),
            "R0_rect" | "R_rect" => r0 = Some(parse_values::<9>(path, line, "R0_rect", rest)?),
            "Tr_velo_to_cam" | "Tr_velo_cam" => tr = Some(parse_values::<12>(path, line, "Tr_velo_to_cam", rest)?),
            _ => {}
        }
    }
    let calib = Calibration {
        p2: p2.ok_or(KittiError::MissingCalibKey("P2"))?,
        r0_rect: r0.ok_or(KittiError::MissingCalibKey("R0_rect"))?,
        tr_velo_to_cam: tr.ok_or(KittiError::MissingCalibKey("Tr_velo_to_cam"))?,
    };
    if !calib.is_finite() {
        return Err(KittiError::MalformedLine {
            path: path.to_path_buf(),
            line: 0,
            reason: "non-finite calibration value".into(),
        });
    }
    Ok(calib)
}

pub fn read_calib(path: impl AsRef<Path>) -> Result<Calibration, KittiError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_calib(path, &text)
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn write_calib(path: impl AsRef<Path>, calib: &Calibration) -> Result<(), KittiError> {
    let path = path.as_ref();
    let text = format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        join(&calib.p2),
        join(&calib.r0_rect),
        join(&calib.tr_velo_to_cam)
    );
    std::fs::write(path, text).map_err(io_err(path))
}
