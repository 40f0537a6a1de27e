//! The self-training loop: supervised fit, then rounds of predict, threshold,
//! select, augment and refit, then inference over every scene.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accs::{
    compute_thresholds, relabel, select_mask, selected_fraction_report, AccsError, ClassSelection, RatioSchedule,
    ThresholdTable,
};
use crate::detector::{Batch, Detector, DetectorError, FitData, FitReport, HpcaHook, LossNorm, NoAugment};
use crate::geometry::Detection;
use crate::hpca::{build_db, AugmentError, AugmentParams};
use crate::kitti_io::{subsample, write_label, Calibration, DatasetSplit, KittiError};
use crate::scene::{PseudoLabels, Scene};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Error)]
pub enum SelfTrainError {
    #[error("invalid self-training config: {0}")]
    Config(String),
    #[error("the labeled pool is empty")]
    EmptyLabeled,
    #[error("scene `{0}` is in the split but was not loaded")]
    UnknownScene(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Accs(#[from] AccsError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Kitti(#[from] KittiError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("checkpoint in {0} is incomplete")]
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainConfig {
    pub rounds: usize,
    pub schedule: RatioSchedule,
    pub augment: AugmentParams,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub seed: u64,
    /// Refit from the previous round's state rather than from scratch.
    pub warm_start: bool,
    pub loss_norm: LossNorm,
    /// Resample every cloud to this many points first.
    pub subsample: Option<usize>,
    pub num_classes: usize,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            schedule: RatioSchedule::default(),
            augment: AugmentParams::default(),
            batch_labeled: 1,
            batch_unlabeled: 1,
            seed: 0,
            warm_start: true,
            loss_norm: LossNorm::AllPositives,
            subsample: None,
            num_classes: 3,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        if self.rounds == 0 {
            return Err(SelfTrainError::Config("rounds must be at least 1".into()));
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return Err(SelfTrainError::Config("batch sizes must be positive".into()));
        }
        if self.num_classes == 0 || self.subsample == Some(0) {
            return Err(SelfTrainError::Config("num_classes and subsample must be positive".into()));
        }
        self.schedule.validate()?;
        self.augment.validate()?;
        Ok(())
    }
}

/// Pseudo labels by scene id.
pub type PseudoSet = BTreeMap<String, PseudoLabels>;

/// Union by scene id; a scene present in both keeps the newer labels.
pub fn accrete(previous: &PseudoSet, newer: &PseudoSet) -> PseudoSet {
    let mut out = previous.clone();
    for (id, labels) in newer {
        out.insert(id.clone(), labels.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    /// Set when there was no pseudo-labeled scene to draw from.
    pub labeled_only: bool,
}

fn draw(order: &mut [usize], cursor: &mut usize, n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    (0..n)
        .map(|_| {
            if *cursor == order.len() {
                order.shuffle(rng);
                *cursor = 0;
            }
            *cursor += 1;
            order[*cursor - 1]
        })
        .collect()
}

/// One epoch of batches with `b_l` labeled and `b_u` pseudo-labeled scene
/// indices each. The epoch covers the larger pool once; the smaller one
/// recycles through fresh shuffles.
pub fn make_batches(
    n_labeled: usize,
    n_pseudo: usize,
    b_l: usize,
    b_u: usize,
    seed: u64,
) -> Result<BatchPlan, SelfTrainError> {
    if n_labeled == 0 {
        return Err(SelfTrainError::EmptyLabeled);
    }
    if b_l == 0 || b_u == 0 {
        return Err(SelfTrainError::Config("batch sizes must be positive".into()));
    }
    let epoch = n_labeled.div_ceil(b_l).max(n_pseudo.div_ceil(b_u));
    let mut rng = rng_from(seed);
    let mut lab: Vec<usize> = (0..n_labeled).collect();
    let mut pse: Vec<usize> = (0..n_pseudo).collect();
    lab.shuffle(&mut rng);
    pse.shuffle(&mut rng);
    let (mut lc, mut pc) = (0, 0);
    let batches = (0..epoch)
        .map(|_| Batch {
            labeled: draw(&mut lab, &mut lc, b_l, &mut rng),
            pseudo: if n_pseudo == 0 { Vec::new() } else { draw(&mut pse, &mut pc, b_u, &mut rng) },
        })
        .collect();
    Ok(BatchPlan { batches, labeled_only: n_pseudo == 0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub ratio: f64,
    pub thresholds: ThresholdTable,
    /// Over all predictions of the round.
    pub selection: Vec<ClassSelection>,
    /// Selected boxes per class among this round's pseudo labels.
    pub selected_per_class: Vec<usize>,
    pub scenes_selected: usize,
    /// Scenes that were not in the pseudo-labeled pool before.
    pub scenes_added: usize,
    pub pool_size: usize,
    pub predictions: usize,
    pub labeled_only: bool,
    /// `None` when there was nothing new to refit on.
    pub fit: Option<FitReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainOutput {
    pub initial_fit: FitReport,
    pub rounds: Vec<RoundRecord>,
    pub pseudo: PseudoSet,
    /// Final predictions for every scene.
    pub predictions: BTreeMap<String, Vec<Detection>>,
}

/// Where checkpoints go, and how a caller hears about progress.
#[derive(Default)]
pub struct RunHooks<'a> {
    pub checkpoint_dir: Option<PathBuf>,
    pub on_round: Option<&'a mut dyn FnMut(&RoundRecord)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SelfTrainError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|source| SelfTrainError::Json { path: path.into(), source })?;
    std::fs::write(path, text + "\n").map_err(|source| SelfTrainError::Io { path: path.into(), source })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SelfTrainError> {
    let text = std::fs::read_to_string(path).map_err(|source| SelfTrainError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| SelfTrainError::Json { path: path.into(), source })
}

fn mkdir(path: &Path) -> Result<(), SelfTrainError> {
    std::fs::create_dir_all(path).map_err(|source| SelfTrainError::Io { path: path.into(), source })
}

pub fn round_dir(root: &Path, t: usize) -> PathBuf {
    root.join(format!("round_{t}"))
}

/// Checkpoint of the state after round `t` (0 is the supervised fit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RoundState {
    round: usize,
    initial_fit: FitReport,
}

struct Loop<'a> {
    config: &'a SelfTrainConfig,
    labeled: Vec<Scene>,
    unlabeled: Vec<Scene>,
    everything: Vec<Scene>,
}

impl<'a> Loop<'a> {
    fn new(config: &'a SelfTrainConfig, split: &DatasetSplit, scenes: &[Scene]) -> Result<Self, SelfTrainError> {
        config.validate()?;
        let by_id: BTreeMap<&str, &Scene> = scenes.iter().map(|s| (s.id.as_str(), s)).collect();
        let prepare = |id: &String| -> Result<Scene, SelfTrainError> {
            let s = by_id.get(id.as_str()).ok_or_else(|| SelfTrainError::UnknownScene(id.clone()))?;
            let mut s = (*s).clone();
            s.pseudo = None;
            if let Some(n) = config.subsample {
                s.cloud = subsample(&s.cloud, n, derive_seed(config.seed, &[&s.id, "subsample"]))?;
            }
            Ok(s)
        };
        let labeled: Vec<Scene> = split.labeled_ids.iter().map(prepare).collect::<Result<_, _>>()?;
        if labeled.is_empty() {
            return Err(SelfTrainError::EmptyLabeled);
        }
        // Unlabeled ground truth is dropped here, before any detector call.
        let unlabeled: Vec<Scene> =
            split.unlabeled_ids.iter().map(|id| prepare(id).map(|s| s.without_labels())).collect::<Result<_, _>>()?;
        let mut everything: Vec<Scene> = labeled.iter().chain(&unlabeled).map(Scene::without_labels).collect();
        everything.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { config, labeled, unlabeled, everything })
    }

    fn initial_fit(&self, detector: &mut dyn Detector) -> Result<FitReport, SelfTrainError> {
        let plan = make_batches(
            self.labeled.len(),
            0,
            self.config.batch_labeled,
            self.config.batch_unlabeled,
            derive_seed(self.config.seed, &["batches", "0"]),
        )?;
        detector.reset();
        let data = FitData {
            labeled: &self.labeled,
            pseudo: &[],
            batches: &plan.batches,
            augment: &NoAugment,
            loss_norm: self.config.loss_norm,
        };
        Ok(detector.fit(&data)?)
    }

    fn round(
        &self,
        t: usize,
        detector: &mut dyn Detector,
        pseudo: &PseudoSet,
    ) -> Result<(RoundRecord, PseudoSet, ThresholdTable), SelfTrainError> {
        let cfg = self.config;
        let det: &dyn Detector = detector;
        let predictions: Vec<Vec<Detection>> = self.unlabeled.par_iter().map(|s| det.predict(s)).collect();
        let ratio = cfg.schedule.ratio_at(t - 1);
        let mut table = compute_thresholds(predictions.iter().flatten(), ratio, cfg.num_classes)?;
        table.round = t;
        let relabeled: Vec<Vec<Detection>> =
            predictions.iter().map(|p| p.iter().map(|d| relabel(d, &table)).collect()).collect();

        let mut fresh = PseudoSet::new();
        let mut selected_per_class = vec![0; cfg.num_classes];
        for (scene, dets) in self.unlabeled.iter().zip(&relabeled) {
            let mask = select_mask(dets, &table);
            if mask.count() == 0 {
                continue;
            }
            for (d, _) in dets.iter().zip(&mask.0).filter(|(_, m)| **m) {
                if let Some(c) = selected_per_class.get_mut(d.class_id) {
                    *c += 1;
                }
            }
            fresh.insert(scene.id.clone(), PseudoLabels { detections: dets.clone(), mask, round: t });
        }
        let scenes_added = fresh.keys().filter(|id| !pseudo.contains_key(*id)).count();
        let pool = accrete(pseudo, &fresh);

        let attach = |set: &PseudoSet| -> Vec<Scene> {
            self.unlabeled
                .iter()
                .filter_map(|s| set.get(&s.id).map(|p| Scene { pseudo: Some(p.clone()), ..s.clone() }))
                .collect()
        };
        let fit = if pool.is_empty() {
            None
        } else {
            let db = build_db(&attach(&fresh), cfg.num_classes);
            let pseudo_scenes = attach(&pool);
            let plan = make_batches(
                self.labeled.len(),
                pseudo_scenes.len(),
                cfg.batch_labeled,
                cfg.batch_unlabeled,
                derive_seed(cfg.seed, &["batches", &t.to_string()]),
            )?;
            let hook =
                HpcaHook { db: &db, params: &cfg.augment, seed: derive_seed(cfg.seed, &["augment", &t.to_string()]) };
            if !cfg.warm_start {
                detector.reset();
            }
            let data = FitData {
                labeled: &self.labeled,
                pseudo: &pseudo_scenes,
                batches: &plan.batches,
                augment: &hook,
                loss_norm: cfg.loss_norm,
            };
            Some(detector.fit(&data)?)
        };
        let record = RoundRecord {
            round: t,
            ratio,
            thresholds: table.clone(),
            selection: selected_fraction_report(relabeled.iter().flatten(), &table),
            selected_per_class,
            scenes_selected: fresh.len(),
            scenes_added,
            pool_size: pool.len(),
            predictions: predictions.iter().map(Vec::len).sum(),
            labeled_only: pool.is_empty(),
            fit,
        };
        Ok((record, pool, table))
    }

    fn predict_all(&self, detector: &dyn Detector) -> BTreeMap<String, Vec<Detection>> {
        self.everything.par_iter().map(|s| (s.id.clone(), detector.predict(s))).collect()
    }
}

fn save_round(
    dir: &Path,
    t: usize,
    state: &RoundState,
    detector: &dyn Detector,
    record: Option<&RoundRecord>,
    pool: &PseudoSet,
) -> Result<(), SelfTrainError> {
    let rd = round_dir(dir, t);
    mkdir(&rd)?;
    let model = detector.state_json()?;
    std::fs::write(rd.join("model.json"), model + "\n")
        .map_err(|source| SelfTrainError::Io { path: rd.join("model.json"), source })?;
    write_json(&rd.join("pseudo_set.json"), pool)?;
    if let Some(record) = record {
        write_json(&rd.join("thresholds.json"), &record.thresholds)?;
        write_json(&rd.join("record.json"), record)?;
        let labels = rd.join("pseudo_labels");
        mkdir(&labels)?;
        let calib = Calibration::identity();
        for (id, p) in pool {
            let selected: Vec<Detection> = p.selected().cloned().collect();
            write_label(labels.join(format!("{id}.txt")), &selected, &calib)?;
        }
    }
    // Written last: its presence marks the round as complete.
    write_json(&rd.join("state.json"), state)
}

fn write_final(dir: &Path, predictions: &BTreeMap<String, Vec<Detection>>) -> Result<(), SelfTrainError> {
    let fd = dir.join("final");
    let labels = fd.join("predictions");
    mkdir(&labels)?;
    let calib = Calibration::identity();
    for (id, dets) in predictions {
        write_label(labels.join(format!("{id}.txt")), dets, &calib)?;
    }
    write_json(&fd.join("predictions.json"), predictions)
}

fn record_timing(dir: &Path, t: usize, seconds: f64) -> Result<(), SelfTrainError> {
    let path = dir.join("timing.json");
    let mut timing: BTreeMap<String, f64> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
    timing.insert(format!("round_{t}"), seconds);
    write_json(&path, &timing)
}

/// Last round with a complete checkpoint under `dir`.
pub fn last_checkpoint(dir: &Path) -> Option<usize> {
    (0..).take_while(|&t| round_dir(dir, t).join("state.json").exists()).last()
}

fn drive(
    config: &SelfTrainConfig,
    split: &DatasetSplit,
    scenes: &[Scene],
    detector: &mut dyn Detector,
    hooks: &mut RunHooks<'_>,
    resume: bool,
) -> Result<SelfTrainOutput, SelfTrainError> {
    let lp = Loop::new(config, split, scenes)?;
    let dir = hooks.checkpoint_dir.clone();
    if let Some(d) = &dir {
        mkdir(d)?;
    }
    let mut records = Vec::new();
    let mut pool = PseudoSet::new();
    let start = match (resume, dir.as_deref().and_then(last_checkpoint)) {
        (true, Some(t)) => {
            let d = dir.as_deref().expect("checkpoint dir present");
            let rd = round_dir(d, t);
            let model = std::fs::read_to_string(rd.join("model.json"))
                .map_err(|source| SelfTrainError::Io { path: rd.join("model.json"), source })?;
            detector.load_state(&model)?;
            pool = read_json(&rd.join("pseudo_set.json"))?;
            for r in 1..=t.min(config.rounds) {
                records.push(read_json(&round_dir(d, r).join("record.json"))?);
            }
            let state: RoundState = read_json(&rd.join("state.json"))?;
            Some(state)
        }
        _ => None,
    };
    let initial_fit = match &start {
        Some(s) => s.initial_fit,
        None => {
            let clock = Instant::now();
            let fit = lp.initial_fit(detector)?;
            if let Some(d) = &dir {
                save_round(d, 0, &RoundState { round: 0, initial_fit: fit }, detector, None, &pool)?;
                record_timing(d, 0, clock.elapsed().as_secs_f64())?;
            }
            fit
        }
    };
    let first = start.map_or(1, |s| s.round + 1);
    for t in first..=config.rounds {
        let clock = Instant::now();
        let (record, next, _) = lp.round(t, detector, &pool)?;
        pool = next;
        if let Some(d) = &dir {
            save_round(d, t, &RoundState { round: t, initial_fit }, detector, Some(&record), &pool)?;
            record_timing(d, t, clock.elapsed().as_secs_f64())?;
        }
        if let Some(cb) = hooks.on_round.as_mut() {
            cb(&record);
        }
        log::info!("round {t}: {} scenes selected, pool {}", record.scenes_selected, record.pool_size);
        records.push(record);
    }
    let predictions = lp.predict_all(detector);
    if let Some(d) = &dir {
        write_final(d, &predictions)?;
    }
    Ok(SelfTrainOutput { initial_fit, rounds: records, pseudo: pool, predictions })
}

/// Runs every round from scratch. Checkpoints go under
/// `hooks.checkpoint_dir` when set.
pub fn run(
    config: &SelfTrainConfig,
    split: &DatasetSplit,
    scenes: &[Scene],
    detector: &mut dyn Detector,
    hooks: &mut RunHooks<'_>,
) -> Result<SelfTrainOutput, SelfTrainError> {
    drive(config, split, scenes, detector, hooks, false)
}

/// Continues from the last complete checkpoint in `hooks.checkpoint_dir`,
/// or starts afresh when there is none.
pub fn resume(
    config: &SelfTrainConfig,
    split: &DatasetSplit,
    scenes: &[Scene],
    detector: &mut dyn Detector,
    hooks: &mut RunHooks<'_>,
) -> Result<SelfTrainOutput, SelfTrainError> {
    if hooks.checkpoint_dir.is_none() {
        return Err(SelfTrainError::Config("resume needs a checkpoint directory".into()));
    }
    drive(config, split, scenes, detector, hooks, true)
}

/// Fits on the labeled scenes only and predicts every scene: the baseline the
/// rounds are measured against.
pub fn supervised_only(
    config: &SelfTrainConfig,
    split: &DatasetSplit,
    scenes: &[Scene],
    detector: &mut dyn Detector,
) -> Result<(FitReport, BTreeMap<String, Vec<Detection>>), SelfTrainError> {
    let lp = Loop::new(config, split, scenes)?;
    let fit = lp.initial_fit(detector)?;
    Ok((fit, lp.predict_all(detector)))
}

/// Ids of the scenes a checkpointed pool holds.
pub fn pool_ids(pool: &PseudoSet) -> BTreeSet<&str> {
    pool.keys().map(String::as_str).collect()
}
