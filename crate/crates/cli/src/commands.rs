use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use semi3d::accs::SelectionMask;
use semi3d::detector::{ClusterDetector, Detector, OracleDetector};
use semi3d::eval::{evaluate, EvalConfig, EvalScene};
use semi3d::geometry::ObjectClass;
use semi3d::hpca::{build_db, hpca};
use semi3d::kitti_io::{
    block_sequence_map, list_scene_ids, load_scene, read_calib, read_ground_truth, read_label, read_sequence_map,
    read_split_manifest, split_by_sequence, write_calib, write_label, write_split_manifest, write_velodyne,
    Calibration, KittiLayout,
};
use semi3d::scene::{PseudoLabels, Scene};
use semi3d::selftrain::{resume, run, RunHooks};
use semi3d::synth::{export_dataset, generate_dataset};

use crate::config::{load_augment, load_section, DetectorKind, RunConfig, SynthConfig};
use crate::Global;

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn require_out(g: &Global) -> Result<&Path> {
    g.out.as_deref().context("--out is required")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_all(root: &Path, ids: &[String]) -> Result<Vec<Scene>> {
    let layout = KittiLayout::new(root);
    ids.par_iter().map(|id| load_scene(&layout, id).with_context(|| format!("loading scene {id}"))).collect()
}

pub fn split(g: &Global, dataset: &Path, ratio: f64, sequences: Option<&Path>, block_len: usize) -> Result<()> {
    let out = require_out(g)?;
    let ids = list_scene_ids(dataset)?;
    let default_map = dataset.join("sequences.txt");
    let map = match sequences {
        Some(p) => read_sequence_map(p)?,
        None if default_map.exists() => read_sequence_map(&default_map)?,
        None => block_sequence_map(&ids, block_len),
    };
    let split = split_by_sequence(&ids, &map, ratio, g.seed.unwrap_or(0))?;
    write_split_manifest(out, &split)?;
    emit(json!({
        "event": "split",
        "labeled": split.labeled_ids.len(),
        "unlabeled": split.unlabeled_ids.len(),
        "labeled_fraction": split.labeled_fraction(),
        "manifest": out,
    }));
    Ok(())
}

fn build_detector(cfg: &RunConfig, scenes: &[Scene]) -> Result<Box<dyn Detector>> {
    Ok(match cfg.detector.kind {
        DetectorKind::Cluster => Box::new(ClusterDetector::new(cfg.detector.cluster.clone())?),
        // The oracle is a test double: it is handed ground truth up front.
        DetectorKind::Oracle => {
            Box::new(OracleDetector::from_scenes(cfg.detector.oracle.clone(), cfg.selftrain.num_classes, scenes)?)
        }
    })
}

pub fn run_dir(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    Ok(out.join(format!("run-{}", cfg.hash()?)))
}

pub fn selftrain(g: &Global) -> Result<()> {
    let path = g.config.as_deref().context("--config is required")?;
    let cfg = RunConfig::load(path, g.seed)?;
    let dir = run_dir(&cfg, g.out.as_deref().unwrap_or(Path::new("runs")))?;
    if dir.exists() && !g.resume {
        bail!("{} already exists; pass --resume to continue it", dir.display());
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_text(&dir.join("config.json"), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;

    let split = read_split_manifest(&cfg.split)?;
    let ids: Vec<String> = split.labeled_ids.iter().chain(&split.unlabeled_ids).cloned().collect();
    let scenes = load_all(&cfg.dataset, &ids)?;
    let mut detector = build_detector(&cfg, &scenes)?;
    emit(
        json!({"event": "start", "run_dir": dir, "labeled": split.labeled_ids.len(), "unlabeled": split.unlabeled_ids.len()}),
    );

    let mut on_round = |r: &semi3d::selftrain::RoundRecord| emit(json!({"event": "round", "record": r}));
    let mut hooks = RunHooks { checkpoint_dir: Some(dir.clone()), on_round: Some(&mut on_round) };
    let output = if g.resume {
        resume(&cfg.selftrain, &split, &scenes, detector.as_mut(), &mut hooks)?
    } else {
        run(&cfg.selftrain, &split, &scenes, detector.as_mut(), &mut hooks)?
    };
    emit(
        json!({"event": "done", "run_dir": dir, "rounds": output.rounds.len(), "predictions": output.predictions.len()}),
    );

    if let Some(val) = &cfg.val_dataset {
        let val_scenes = load_all(val, &list_scene_ids(val)?)?;
        let preds: BTreeMap<String, _> =
            val_scenes.par_iter().map(|s| (s.id.clone(), detector.predict(&s.without_labels()))).collect();
        let gts: Vec<EvalScene> =
            val_scenes.iter().map(|s| EvalScene { id: s.id.clone(), ground_truth: s.ground_truth.clone() }).collect();
        let table = evaluate(&gts, &preds, &cfg.eval);
        write_text(&dir.join("eval.txt"), &table.render())?;
        write_text(&dir.join("eval.json"), &(serde_json::to_string_pretty(&table)? + "\n"))?;
        emit(json!({"event": "eval", "mean_ap": table.mean(), "table": table}));
    }
    Ok(())
}

fn label_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "txt").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    ids.sort();
    Ok(ids)
}

pub fn eval(g: &Global, gt: &Path, pred: &Path) -> Result<()> {
    let config: EvalConfig = match &g.config {
        Some(p) => load_section(p)?,
        None => EvalConfig::default(),
    };
    let layout = KittiLayout::new(gt);
    let gt_ids = label_ids(&gt.join("label_2"))?;
    let pred_ids = label_ids(pred)?;
    if let Some(extra) = pred_ids.iter().find(|id| gt_ids.binary_search(id).is_err()) {
        bail!("prediction `{extra}` has no ground truth in {}", gt.display());
    }
    let calib_of = |id: &str| -> Result<Calibration> {
        let p = layout.calib(id);
        Ok(if p.exists() { read_calib(&p)? } else { Calibration::identity() })
    };
    let mut scenes = Vec::new();
    let mut preds = BTreeMap::new();
    for id in &gt_ids {
        let calib = calib_of(id)?;
        scenes.push(EvalScene { id: id.clone(), ground_truth: read_ground_truth(layout.label(id), &calib)? });
        let p = pred.join(format!("{id}.txt"));
        if p.exists() {
            preds.insert(id.clone(), read_label(&p, &calib)?);
        }
    }
    let table = evaluate(&scenes, &preds, &config);
    print!("{}", table.render());
    if let Some(out) = &g.out {
        std::fs::create_dir_all(out)?;
        write_text(&out.join("eval.txt"), &table.render())?;
        write_text(&out.join("eval.json"), &(serde_json::to_string_pretty(&table)? + "\n"))?;
    }
    Ok(())
}

pub fn synth(g: &Global, scenes: usize) -> Result<()> {
    let out = require_out(g)?;
    let cfg = match &g.config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig { schema_version: crate::config::SCHEMA_VERSION, scenes, params: Default::default() },
    };
    let data = generate_dataset(cfg.scenes, &cfg.params, g.seed.unwrap_or(0))?;
    export_dataset(out, &data)?;
    emit(json!({
        "event": "synth",
        "scenes": data.scenes.len(),
        "objects": data.scenes.iter().map(|s| s.ground_truth.len()).sum::<usize>(),
        "placement_failures": data.placement_failures,
        "out": out,
    }));
    Ok(())
}

pub fn augment(g: &Global, dataset: &Path, scene_id: &str, db_root: Option<&Path>) -> Result<()> {
    let out = require_out(g)?;
    let params = load_augment(g.config.as_deref())?;
    let scene = load_scene(&KittiLayout::new(dataset), scene_id)?;
    let db_root = db_root.unwrap_or(dataset);
    let db_ids: Vec<String> = list_scene_ids(db_root)?.into_iter().filter(|id| id != scene_id).collect();
    let sources: Vec<Scene> = load_all(db_root, &db_ids)?
        .into_iter()
        .map(|mut s| {
            let detections = s.gt_detections();
            let mask = SelectionMask::ones(detections.len());
            s.pseudo = Some(PseudoLabels { detections, mask, round: 0 });
            s
        })
        .collect();
    let db = build_db(&sources, ObjectClass::COUNT);
    let aug = hpca(&scene, &db, &params, g.seed.unwrap_or(0));

    let layout = KittiLayout::new(out);
    layout.create_dirs()?;
    let calib = Calibration::identity();
    write_velodyne(layout.velodyne(scene_id), &aug.cloud)?;
    write_calib(layout.calib(scene_id), &calib)?;
    write_label(layout.label(scene_id), &aug.labels, &calib)?;
    let prov_dir = out.join("provenance");
    std::fs::create_dir_all(&prov_dir)?;
    let prov = json!({"scene": scene_id, "mask": aug.mask, "provenance": aug.provenance});
    write_text(&prov_dir.join(format!("{scene_id}.json")), &(serde_json::to_string_pretty(&prov)? + "\n"))?;
    emit(
        json!({"event": "augment", "scene": scene_id, "pasted": aug.provenance.pasted.len(), "points": aug.cloud.len()}),
    );
    Ok(())
}
