use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use semi3d::geometry::{Box3D, Detection, Point3, PointCloud, Size3};
use semi3d::kitti_io::{
    detection_to_label, label_to_detection, load_scene, parse_velodyne, read_calib, read_label, read_label_records,
    read_velodyne, subsample, velodyne_bytes, write_label, write_velodyne, Calibration, KittiLayout, LabelMeta,
    DEFAULT_SUBSAMPLE,
};
use semi3d::synth::{export_dataset, generate_dataset, SynthParams};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn real_calibration_parses_and_is_orthonormal() {
    let calib = read_calib(fixture("calib_000000.txt")).unwrap();
    assert!(calib.is_finite());
    assert!(calib.r0_orthonormality_error() < 1e-3);
    assert_eq!(calib.p2[0], 707.0493);
    for p in [Point3::new(10.0, -2.0, 0.5), Point3::new(35.0, 8.0, -1.2), Point3::new(0.0, 0.0, 0.0)] {
        let back = calib.cam_to_velo(&calib.velo_to_cam(&p));
        assert!(back.distance(&p) < 1e-9);
    }
}

#[test]
fn real_label_lands_in_front_of_the_sensor() {
    let calib = read_calib(fixture("calib_000000.txt")).unwrap();
    let labels = read_label_records(fixture("label_000000.txt")).unwrap();
    assert_eq!(labels.len(), 1);
    let det = label_to_detection(&labels[0], &calib).unwrap().unwrap();
    let b = &det.bbox;
    assert!(b.center.x > 8.0 && b.center.x < 9.5, "x = {}", b.center.x);
    assert!(b.center.y.abs() < 3.0 && b.center.z.abs() < 2.0);
    assert_eq!((b.size.l, b.size.w, b.size.h), (1.2, 0.48, 1.89));
    let again = detection_to_label(&det, &calib, &LabelMeta::default(), false);
    for (a, e) in again.location.iter().zip(labels[0].location) {
        assert!((a - e).abs() < 1e-6);
    }
    assert!((again.rotation_y - labels[0].rotation_y).abs() < 1e-9);
}

#[test]
fn subsample_to_default_size() {
    let pts = (0..20_000).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
    let cloud = PointCloud::new(pts);
    let sub = subsample(&cloud, DEFAULT_SUBSAMPLE, 1).unwrap();
    let distinct: BTreeSet<u64> = sub.points.iter().map(|p| p.x.to_bits()).collect();
    assert_eq!(sub.len(), 16_384);
    assert_eq!(distinct.len(), 16_384);
}

#[test]
fn exported_synthetic_scenes_load_back() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_dataset(5, &SynthParams::default(), 2).unwrap();
    export_dataset(tmp.path(), &data).unwrap();
    let layout = KittiLayout::new(tmp.path());
    for s in &data.scenes {
        let back = load_scene(&layout, &s.id).unwrap();
        assert_eq!(back.cloud, s.cloud);
        assert_eq!(back.ground_truth.len(), s.ground_truth.len());
    }
}

fn cloud_strategy() -> impl Strategy<Value = Vec<[f32; 4]>> {
    proptest::collection::vec(proptest::array::uniform4(-100.0f32..100.0), 0..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn velodyne_file_round_trips_byte_for_byte(raw in cloud_strategy()) {
        let bytes: Vec<u8> = raw.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        let cloud = parse_velodyne(&bytes).unwrap();
        prop_assert_eq!(velodyne_bytes(&cloud), bytes.clone());
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("a.bin");
        write_velodyne(&path, &read_velodyne_from(&bytes, tmp.path())).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn label_file_round_trips_boxes(
        boxes in proptest::collection::vec(
            (-50.0..50.0f64, -50.0..50.0f64, -3.0..3.0f64, 0.2..6.0f64, 0.2..3.0f64, 0.2..3.0f64, -PI..PI, 0usize..3, 0.0..1.0f64),
            1..10,
        ),
    ) {
        let dets: Vec<Detection> = boxes
            .iter()
            .map(|&(x, y, z, l, w, h, yaw, k, c)| {
                Detection::new(Box3D::new(Point3::new(x, y, z), Size3::new(l, w, h), yaw).unwrap(), k, c).unwrap()
            })
            .collect();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("l.txt");
        write_label(&path, &dets, &Calibration::identity()).unwrap();
        let back = read_label(&path, &Calibration::identity()).unwrap();
        prop_assert_eq!(back.len(), dets.len());
        for (a, b) in back.iter().zip(&dets) {
            let (p, q) = (&a.bbox, &b.bbox);
            let dyaw = (p.yaw - q.yaw).rem_euclid(2.0 * PI);
            prop_assert!(dyaw.min(2.0 * PI - dyaw) < 1e-6);
            for (u, v) in [(p.center.x, q.center.x), (p.center.y, q.center.y), (p.center.z, q.center.z), (p.size.l, q.size.l), (p.size.w, q.size.w), (p.size.h, q.size.h), (a.confidence, b.confidence)] {
                prop_assert!((u - v).abs() < 1e-6);
            }
            prop_assert_eq!(a.class_id, b.class_id);
        }
    }
}

fn read_velodyne_from(bytes: &[u8], dir: &Path) -> PointCloud {
    let path = dir.join("src.bin");
    std::fs::write(&path, bytes).unwrap();
    read_velodyne(&path).unwrap()
}
