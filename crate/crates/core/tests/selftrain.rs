use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use semi3d::accs::{nearest_rank, ThresholdTable};
use semi3d::detector::{
    ClusterConfig, ClusterDetector, Detector, DetectorError, FitData, FitReport, OracleConfig, OracleDetector,
};
use semi3d::geometry::{iou_3d, Detection};
use semi3d::kitti_io::{split_by_sequence, DatasetSplit, Ratio};
use semi3d::scene::Scene;
use semi3d::selftrain::{
    last_checkpoint, resume, round_dir, run, supervised_only, PseudoSet, RoundRecord, RunHooks, SelfTrainConfig,
};
use semi3d::synth::{generate_dataset, SynthDataset, SynthParams};

fn dataset(n: usize, seed: u64) -> SynthDataset {
    generate_dataset(n, &SynthParams::default(), seed).unwrap()
}

fn ids(d: &SynthDataset) -> Vec<String> {
    d.scenes.iter().map(|s| s.id.clone()).collect()
}

fn cluster() -> ClusterDetector {
    ClusterDetector::new(ClusterConfig::default()).unwrap()
}

#[test]
fn single_round_without_unlabeled_is_a_supervised_fit() {
    let d = dataset(20, 1);
    let split = DatasetSplit { ratio: Ratio(1.0), seed: 0, labeled_ids: ids(&d), unlabeled_ids: vec![] };
    let cfg = SelfTrainConfig { rounds: 1, ..SelfTrainConfig::default() };
    let mut a = cluster();
    let out = run(&cfg, &split, &d.scenes, &mut a, &mut RunHooks::default()).unwrap();
    let mut b = cluster();
    let (_, preds) = supervised_only(&cfg, &split, &d.scenes, &mut b).unwrap();
    assert_eq!(out.predictions, preds);
    assert!(out.rounds[0].labeled_only);
    assert!(out.rounds[0].fit.is_none());
}

#[test]
fn exact_oracle_selects_top_fraction_of_ground_truth() {
    let d = dataset(60, 2);
    let split = split_by_sequence(&ids(&d), &d.sequences, 0.3, 0).unwrap();
    let cfg = SelfTrainConfig { rounds: 5, ..SelfTrainConfig::default() };
    let oracle_cfg = OracleConfig { confidence_jitter: 0.2, ..OracleConfig::default() };
    let mut det = OracleDetector::from_scenes(oracle_cfg, 3, &d.scenes).unwrap();
    let out = run(&cfg, &split, &d.scenes, &mut det, &mut RunHooks::default()).unwrap();
    let by_id: BTreeMap<&str, &Scene> = d.scenes.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut pool_per_class = [0usize; 3];
    for id in &split.unlabeled_ids {
        for g in &by_id[id.as_str()].ground_truth {
            pool_per_class[g.detection.class_id] += 1;
        }
    }
    for r in &out.rounds {
        for (k, &n) in pool_per_class.iter().enumerate() {
            assert_eq!(r.selected_per_class[k], nearest_rank(r.ratio, n), "round {} class {k}", r.round);
        }
    }
    for (id, labels) in &out.pseudo {
        let gt = by_id[id.as_str()].gt_detections();
        for sel in labels.selected() {
            assert!(gt.iter().any(|g| g.bbox == sel.bbox && g.class_id == sel.class_id));
        }
    }
}

#[test]
fn same_seed_same_output() {
    let d = dataset(40, 3);
    let split = split_by_sequence(&ids(&d), &d.sequences, 0.25, 0).unwrap();
    let cfg = SelfTrainConfig { rounds: 2, seed: 9, ..SelfTrainConfig::default() };
    let a = run(&cfg, &split, &d.scenes, &mut cluster(), &mut RunHooks::default()).unwrap();
    let b = run(&cfg, &split, &d.scenes, &mut cluster(), &mut RunHooks::default()).unwrap();
    assert_eq!(a, b);
    let ratios: Vec<f64> = a.rounds.iter().map(|r| r.ratio).collect();
    assert!(ratios.windows(2).all(|w| w[0] <= w[1]));
}

/// Wraps a detector and records any unlabeled scene that reaches it with
/// ground truth attached.
struct Guard<D> {
    inner: D,
    unlabeled: BTreeSet<String>,
    leaks: Mutex<Vec<String>>,
}

impl<D: Detector> Guard<D> {
    fn check(&self, s: &Scene) {
        if self.unlabeled.contains(&s.id) && !s.ground_truth.is_empty() {
            self.leaks.lock().unwrap().push(s.id.clone());
        }
    }
}

impl<D: Detector> Detector for Guard<D> {
    fn name(&self) -> &'static str {
        "guard"
    }
    fn fit(&mut self, data: &FitData<'_>) -> Result<FitReport, DetectorError> {
        data.labeled.iter().chain(data.pseudo).for_each(|s| self.check(s));
        self.inner.fit(data)
    }
    fn reset(&mut self) {
        self.inner.reset()
    }
    fn predict(&self, scene: &Scene) -> Vec<Detection> {
        self.check(scene);
        self.inner.predict(scene)
    }
    fn state_json(&self) -> Result<String, DetectorError> {
        self.inner.state_json()
    }
    fn load_state(&mut self, json: &str) -> Result<(), DetectorError> {
        self.inner.load_state(json)
    }
}

#[test]
fn unlabeled_ground_truth_never_reaches_the_detector() {
    let d = dataset(40, 4);
    let split = split_by_sequence(&ids(&d), &d.sequences, 0.25, 0).unwrap();
    let mut det =
        Guard { inner: cluster(), unlabeled: split.unlabeled_ids.iter().cloned().collect(), leaks: Mutex::new(vec![]) };
    let cfg = SelfTrainConfig { rounds: 2, ..SelfTrainConfig::default() };
    run(&cfg, &split, &d.scenes, &mut det, &mut RunHooks::default()).unwrap();
    assert!(det.leaks.lock().unwrap().is_empty());
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.json" {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn read<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn checkpoints_replay_bit_identically_and_match_records() {
    let d = dataset(40, 5);
    let split = split_by_sequence(&ids(&d), &d.sequences, 0.25, 1).unwrap();
    let cfg = SelfTrainConfig { rounds: 4, seed: 2, ..SelfTrainConfig::default() };
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("full");
    let mut hooks = RunHooks { checkpoint_dir: Some(dir.clone()), ..RunHooks::default() };
    let full_out = run(&cfg, &split, &d.scenes, &mut cluster(), &mut hooks).unwrap();
    let full = files(&dir);

    for t in 1..=4 {
        let pool: PseudoSet = read(&round_dir(&dir, t).join("pseudo_set.json"));
        let record: RoundRecord = read(&round_dir(&dir, t).join("record.json"));
        let table: ThresholdTable = read(&round_dir(&dir, t).join("thresholds.json"));
        assert_eq!(table, record.thresholds);
        let mut per_class = vec![0; 3];
        let fresh: Vec<_> = pool.values().filter(|p| p.round == t).collect();
        for p in &fresh {
            for det in p.selected() {
                per_class[det.class_id] += 1;
            }
        }
        assert_eq!(per_class, record.selected_per_class);
        assert_eq!(fresh.len(), record.scenes_selected);
        assert_eq!(pool.len(), record.pool_size);
    }

    for keep in 0..4 {
        let copy = tmp.path().join(format!("from_{keep}"));
        for (rel, bytes) in &full {
            let p = copy.join(rel);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, bytes).unwrap();
        }
        for t in keep + 1..=4 {
            std::fs::remove_dir_all(round_dir(&copy, t)).unwrap();
        }
        std::fs::remove_dir_all(copy.join("final")).unwrap();
        assert_eq!(last_checkpoint(&copy), Some(keep));
        let mut hooks = RunHooks { checkpoint_dir: Some(copy.clone()), ..RunHooks::default() };
        let out = resume(&cfg, &split, &d.scenes, &mut cluster(), &mut hooks).unwrap();
        assert_eq!(out, full_out);
        assert!(files(&copy) == full, "replay from round {keep} differs");
    }
}

/// Fails on its n-th fit.
struct Flaky {
    inner: ClusterDetector,
    fits: usize,
    fail_at: usize,
}

impl Detector for Flaky {
    fn name(&self) -> &'static str {
        "flaky"
    }
    fn fit(&mut self, data: &FitData<'_>) -> Result<FitReport, DetectorError> {
        self.fits += 1;
        if self.fits == self.fail_at {
            return Err(DetectorError::Fit("injected".into()));
        }
        self.inner.fit(data)
    }
    fn reset(&mut self) {
        self.inner.reset()
    }
    fn predict(&self, scene: &Scene) -> Vec<Detection> {
        self.inner.predict(scene)
    }
    fn state_json(&self) -> Result<String, DetectorError> {
        self.inner.state_json()
    }
    fn load_state(&mut self, json: &str) -> Result<(), DetectorError> {
        self.inner.load_state(json)
    }
}

#[test]
fn detector_failure_keeps_last_completed_round() {
    let d = dataset(30, 6);
    let split = split_by_sequence(&ids(&d), &d.sequences, 0.34, 0).unwrap();
    let cfg = SelfTrainConfig { rounds: 5, ..SelfTrainConfig::default() };
    let tmp = tempfile::tempdir().unwrap();
    let mut det = Flaky { inner: cluster(), fits: 0, fail_at: 3 };
    let mut hooks = RunHooks { checkpoint_dir: Some(tmp.path().to_path_buf()), ..RunHooks::default() };
    let err = run(&cfg, &split, &d.scenes, &mut det, &mut hooks).unwrap_err();
    assert!(err.to_string().contains("injected"));
    assert_eq!(last_checkpoint(tmp.path()), Some(1));
    assert!(!tmp.path().join("final").exists());
}

#[test]
fn selected_pseudo_labels_of_noisy_oracle_stay_close() {
    let d = dataset(40, 7);
    let split = split_by_sequence(&ids(&d), &d.sequences, 0.25, 0).unwrap();
    let oracle = OracleConfig { center_noise_sigma: vec![0.05; 3], confidence_decay: 5.0, ..OracleConfig::default() };
    let mut det = OracleDetector::from_scenes(oracle, 3, &d.scenes).unwrap();
    let out = run(
        &SelfTrainConfig { rounds: 2, ..SelfTrainConfig::default() },
        &split,
        &d.scenes,
        &mut det,
        &mut RunHooks::default(),
    )
    .unwrap();
    let by_id: BTreeMap<&str, &Scene> = d.scenes.iter().map(|s| (s.id.as_str(), s)).collect();
    for (id, p) in &out.pseudo {
        for sel in p.selected() {
            let best =
                by_id[id.as_str()].gt_detections().iter().map(|g| iou_3d(&g.bbox, &sel.bbox)).fold(0.0, f64::max);
            assert!(best > 0.5);
        }
    }
}
