//! Non-neural reference detector: ground removal, grid clustering, oriented
//! box fitting, size-prior classification and isotonic confidence
//! calibration.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BoxLossTerms, Detector, DetectorError, FitData, FitReport, LossTally};
use crate::accs::SelectionMask;
use crate::geometry::{bev_iou, iou_3d, min_area_rect, Box3D, Detection, Point3, PointCloud, Rect2, Size3};
use crate::scene::Scene;

const MIN_DIM: f64 = 0.05;
const COV_FLOOR: f64 = 1e-4;
const TIE_BREAK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub num_classes: usize,
    pub cell_size: f64,
    /// Ground height is this quantile of z plus `ground_margin`.
    pub ground_quantile: f64,
    pub ground_margin: f64,
    pub min_cluster_points: usize,
    /// Clusters longer than this are discarded.
    pub max_cluster_length: f64,
    pub nms_iou: f64,
    pub min_confidence: f64,
    /// BEV IoU needed to pair a cluster with a training box.
    pub match_iou: f64,
    /// Pseudo-count of the prior each class's size model is shrunk toward.
    pub prior_strength: f64,
    /// Shrinkage target before any fit, as (l, w, h) mean and deviation.
    pub default_prior_mean: [f64; 3],
    pub default_prior_sd: [f64; 3],
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            cell_size: 0.4,
            ground_quantile: 0.05,
            ground_margin: 0.2,
            min_cluster_points: 8,
            max_cluster_length: 8.0,
            nms_iou: 0.1,
            min_confidence: 0.05,
            match_iou: 0.3,
            prior_strength: 20.0,
            default_prior_mean: [2.0, 1.0, 1.4],
            default_prior_sd: [1.0, 0.4, 0.3],
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if !(self.cell_size > 0.0) {
            return bad("cell_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.ground_quantile) {
            return bad("ground_quantile must lie in [0, 1]");
        }
        if self.min_cluster_points == 0 || self.num_classes == 0 {
            return bad("min_cluster_points and num_classes must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_confidence) || !(0.0..=1.0).contains(&self.match_iou) {
            return bad("min_confidence and match_iou must lie in [0, 1]");
        }
        if !(self.prior_strength >= 0.0) || !self.default_prior_sd.iter().all(|s| *s > 0.0) {
            return bad("prior strength must be non-negative and deviations positive");
        }
        Ok(())
    }
}

/// Gaussian model of a class's observed cluster dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePrior {
    pub mean: [f64; 3],
    pub cov: [[f64; 3]; 3],
    /// Effective sample count behind the estimate.
    pub count: f64,
}

impl SizePrior {
    fn cov_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.cov[i][j])
    }

    /// Squared Mahalanobis distance and log-density.
    fn score(&self, x: [f64; 3]) -> (f64, f64) {
        let cov = self.cov_matrix();
        let d = Vector3::from(x) - Vector3::from(self.mean);
        let inv = cov.try_inverse().unwrap_or_else(Matrix3::identity);
        let m = (d.transpose() * inv * d)[(0, 0)].max(0.0);
        let logdet = cov.determinant().max(f64::MIN_POSITIVE).ln();
        (m, -0.5 * m - 0.5 * logdet)
    }

    /// Posterior-style update: the sample moments pulled toward `base` with
    /// weight `strength`.
    fn shrunk(samples: &[[f64; 3]], base: &SizePrior, strength: f64) -> SizePrior {
        let n = samples.len() as f64;
        let mut xbar = [0.0; 3];
        for s in samples {
            for i in 0..3 {
                xbar[i] += s[i] / n;
            }
        }
        let mut scatter = [[0.0; 3]; 3];
        for s in samples {
            for i in 0..3 {
                for j in 0..3 {
                    scatter[i][j] += (s[i] - xbar[i]) * (s[j] - xbar[j]);
                }
            }
        }
        let tot = n + strength;
        let mut mean = [0.0; 3];
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            mean[i] = (n * xbar[i] + strength * base.mean[i]) / tot;
        }
        for i in 0..3 {
            for j in 0..3 {
                let between = n * strength / tot * (xbar[i] - base.mean[i]) * (xbar[j] - base.mean[j]);
                cov[i][j] = (scatter[i][j] + strength * base.cov[i][j] + between) / tot;
            }
            cov[i][i] = cov[i][i].max(COV_FLOOR);
        }
        SizePrior { mean, cov, count: tot }
    }
}

/// A connected group of above-ground points with its fitted BEV rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub indices: Vec<usize>,
    pub rect: Rect2,
    pub z_min: f64,
    pub z_max: f64,
}

impl Cluster {
    /// Observed (l, w, h).
    pub fn dims(&self) -> [f64; 3] {
        [self.rect.length.max(MIN_DIM), self.rect.width.max(MIN_DIM), (self.z_max - self.z_min).max(MIN_DIM)]
    }

    pub fn raw_box(&self) -> Box3D {
        let [l, w, h] = self.dims();
        let c = Point3::new(self.rect.center[0], self.rect.center[1], (self.z_min + self.z_max) / 2.0);
        Box3D::new(c, Size3::new(l, w, h), self.rect.angle).expect("finite cluster geometry")
    }

    /// Box with dimensions corrected by `offset`, anchored at the cluster top
    /// since the bottom is cut by ground removal.
    pub fn corrected_box(&self, offset: [f64; 3]) -> Box3D {
        let d = self.dims();
        let [l, w, h] = [0, 1, 2].map(|i| (d[i] + offset[i]).max(2.0 * MIN_DIM));
        let c = Point3::new(self.rect.center[0], self.rect.center[1], self.z_max - h / 2.0);
        Box3D::new(c, Size3::new(l, w, h), self.rect.angle).expect("finite cluster geometry")
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Points at or above `ground_z`, grouped by 8-connected occupied grid cells.
/// Clusters come out ordered by their smallest point index.
pub fn segment(cloud: &PointCloud, ground_z: f64, cell_size: f64, min_points: usize) -> Vec<Cluster> {
    let mut cells: HashMap<(i64, i64), usize> = HashMap::new();
    let mut cell_points: Vec<Vec<usize>> = Vec::new();
    let mut keys: Vec<(i64, i64)> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if p.z < ground_z {
            continue;
        }
        let key = ((p.x / cell_size).floor() as i64, (p.y / cell_size).floor() as i64);
        let slot = *cells.entry(key).or_insert_with(|| {
            keys.push(key);
            cell_points.push(Vec::new());
            cell_points.len() - 1
        });
        cell_points[slot].push(i);
    }
    let mut parent: Vec<usize> = (0..keys.len()).collect();
    for (slot, &(cx, cy)) in keys.iter().enumerate() {
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(&other) = cells.get(&(cx + dx, cy + dy)) {
                    let (a, b) = (find(&mut parent, slot), find(&mut parent, other));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (slot, points) in cell_points.iter().enumerate() {
        let root = find(&mut parent, slot);
        groups.entry(root).or_default().extend(points);
    }
    let mut out: Vec<Cluster> = groups
        .into_values()
        .filter(|idx| idx.len() >= min_points)
        .filter_map(|mut indices| {
            indices.sort_unstable();
            let bev: Vec<[f64; 2]> = indices.iter().map(|&i| [cloud.points[i].x, cloud.points[i].y]).collect();
            let rect = min_area_rect(&bev)?;
            let (z_min, z_max) = indices
                .iter()
                .map(|&i| cloud.points[i].z)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| (lo.min(z), hi.max(z)));
            Some(Cluster { indices, rect, z_min, z_max })
        })
        .collect();
    out.sort_by_key(|c| c.indices[0]);
    out
}

/// Pool-adjacent-violators fit of `y` on `x`, as interpolation knots.
fn isotonic(mut samples: Vec<(f64, f64)>) -> Vec<[f64; 2]> {
    samples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // (sum x, sum y, weight)
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for (x, y) in samples {
        blocks.push((x, y, 1.0));
        while blocks.len() >= 2 {
            let (b, a) = (blocks[blocks.len() - 1], blocks[blocks.len() - 2]);
            if a.1 / a.2 <= b.1 / b.2 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("two blocks");
            *last = (a.0 + b.0, a.1 + b.1, a.2 + b.2);
        }
    }
    blocks.iter().map(|(sx, sy, w)| [sx / w, sy / w]).collect()
}

fn interpolate(knots: &[[f64; 2]], x: f64) -> f64 {
    match knots {
        [] => x,
        [k] => k[1],
        _ => {
            let i = knots.partition_point(|k| k[0] <= x);
            if i == 0 {
                knots[0][1]
            } else if i == knots.len() {
                knots[i - 1][1]
            } else {
                let (a, b) = (knots[i - 1], knots[i]);
                let t = if b[0] > a[0] { (x - a[0]) / (b[0] - a[0]) } else { 1.0 };
                a[1] + t * (b[1] - a[1])
            }
        }
    }
}

/// Fitted state, persisted between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub config: ClusterConfig,
    pub ground_z: Option<f64>,
    /// `None` for classes never seen in training.
    pub priors: Vec<Option<SizePrior>>,
    /// Mean (label − observed) dimensions per class.
    pub size_offsets: Vec<[f64; 3]>,
    /// Isotonic knots `(raw score, calibrated confidence)` per class.
    pub calibration: Vec<Vec<[f64; 2]>>,
}

impl ClusterModel {
    fn unfitted(config: ClusterConfig) -> Self {
        let k = config.num_classes;
        Self {
            config,
            ground_z: None,
            priors: vec![None; k],
            size_offsets: vec![[0.0; 3]; k],
            calibration: vec![Vec::new(); k],
        }
    }

    fn default_prior(&self) -> SizePrior {
        let sd = self.config.default_prior_sd;
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            cov[i][i] = sd[i] * sd[i];
        }
        SizePrior { mean: self.config.default_prior_mean, cov, count: 0.0 }
    }

    /// Best class by log-density and the raw score `exp(-d²/2)` of every
    /// enabled class.
    fn classify(&self, dims: [f64; 3]) -> Option<(usize, Vec<f64>)> {
        let mut best: Option<(usize, f64)> = None;
        let mut raw = vec![0.0; self.priors.len()];
        for (k, prior) in self.priors.iter().enumerate() {
            let Some(prior) = prior else { continue };
            let (m, logp) = prior.score(dims);
            raw[k] = (-0.5 * m).exp();
            if best.is_none_or(|(_, b)| logp > b) {
                best = Some((k, logp));
            }
        }
        best.map(|(k, _)| (k, raw))
    }

    fn calibrate(&self, k: usize, raw: f64) -> f64 {
        let c = interpolate(&self.calibration[k], raw).clamp(0.0, 1.0);
        ((1.0 - TIE_BREAK) * c + TIE_BREAK * raw).clamp(0.0, 1.0)
    }

    fn detect(&self, cloud: &PointCloud) -> Vec<Detection> {
        let Some(ground_z) = self.ground_z else { return Vec::new() };
        let cfg = &self.config;
        let mut dets: Vec<Detection> = segment(cloud, ground_z, cfg.cell_size, cfg.min_cluster_points)
            .iter()
            .filter(|c| c.rect.length <= cfg.max_cluster_length)
            .filter_map(|c| {
                let (k, raw) = self.classify(c.dims())?;
                let scores: Vec<f64> = raw
                    .iter()
                    .enumerate()
                    .map(|(j, &r)| if self.priors[j].is_some() { self.calibrate(j, r) } else { 0.0 })
                    .collect();
                let confidence = scores[k];
                (confidence >= cfg.min_confidence).then(|| Detection {
                    bbox: c.corrected_box(self.size_offsets[k]),
                    class_id: k,
                    confidence,
                    scores,
                })
            })
            .collect();
        dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let mut kept: Vec<Detection> = Vec::new();
        for d in dets {
            if kept.iter().all(|k| bev_iou(&k.bbox, &d.bbox) <= cfg.nms_iou) {
                kept.push(d);
            }
        }
        kept
    }
}

/// One training view: its clusters and the boxes supervising it.
struct Example {
    clusters: Vec<Cluster>,
    labels: Vec<Detection>,
    mask: SelectionMask,
    pseudo: bool,
}

impl Example {
    /// Cluster index paired with each label, greedily in label order.
    fn pair(&self, match_iou: f64) -> Vec<Option<usize>> {
        let raw: Vec<Box3D> = self.clusters.iter().map(Cluster::raw_box).collect();
        let mut used = vec![false; raw.len()];
        self.labels
            .iter()
            .map(|l| {
                let mut best: Option<(usize, f64)> = None;
                for (i, b) in raw.iter().enumerate() {
                    let iou = bev_iou(b, &l.bbox);
                    if !used[i] && iou >= match_iou && best.is_none_or(|(_, v)| iou > v) {
                        best = Some((i, iou));
                    }
                }
                let hit = best.map(|(i, _)| i);
                if let Some(i) = hit {
                    used[i] = true;
                }
                hit
            })
            .collect()
    }
}

pub struct ClusterDetector {
    model: ClusterModel,
}

impl ClusterDetector {
    pub fn new(config: ClusterConfig) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(Self { model: ClusterModel::unfitted(config) })
    }

    pub fn model(&self) -> &ClusterModel {
        &self.model
    }

    fn example(
        &self,
        ground_z: f64,
        cloud: &PointCloud,
        labels: Vec<Detection>,
        mask: SelectionMask,
        pseudo: bool,
    ) -> Example {
        let cfg = &self.model.config;
        let clusters = segment(cloud, ground_z, cfg.cell_size, cfg.min_cluster_points)
            .into_iter()
            .filter(|c| c.rect.length <= cfg.max_cluster_length)
            .collect();
        Example { clusters, labels, mask, pseudo }
    }

    fn ground_level(&self, data: &FitData<'_>) -> Option<f64> {
        let mut zs: Vec<f64> =
            data.labeled.iter().chain(data.pseudo).flat_map(|s| s.cloud.points.iter().map(|p| p.z)).collect();
        if zs.is_empty() {
            return None;
        }
        zs.sort_by(f64::total_cmp);
        let q = self.model.config.ground_quantile;
        let idx = ((q * zs.len() as f64).floor() as usize).min(zs.len() - 1);
        Some(zs[idx] + self.model.config.ground_margin)
    }
}

impl Detector for ClusterDetector {
    fn name(&self) -> &'static str {
        "cluster"
    }

    fn fit(&mut self, data: &FitData<'_>) -> Result<FitReport, DetectorError> {
        let ground_z = self.ground_level(data).ok_or_else(|| DetectorError::Fit("no points to fit".into()))?;
        let cfg = self.model.config.clone();
        let k_classes = cfg.num_classes;

        // Labeled views never change, so each is built once.
        let labeled_views: Vec<Example> = data
            .labeled
            .par_iter()
            .map(|s| {
                self.example(ground_z, &s.cloud, s.gt_detections(), SelectionMask::ones(s.ground_truth.len()), false)
            })
            .collect();
        let mut jobs: Vec<(usize, usize)> = Vec::new();
        for batch in data.batches {
            for &i in &batch.pseudo {
                jobs.push((i, jobs.len()));
            }
        }
        let pseudo_views: Vec<Example> = jobs
            .par_iter()
            .map(|&(i, draw)| {
                let aug = data.augment.augment(&data.pseudo[i], draw);
                self.example(ground_z, &aug.cloud, aug.labels, aug.mask, true)
            })
            .collect();

        // Views in batch order, labeled ones repeated as the plan dictates.
        let mut order: Vec<&Example> = Vec::new();
        let mut next_pseudo = 0;
        for batch in data.batches {
            order.extend(batch.labeled.iter().map(|&i| &labeled_views[i]));
            order.extend(&pseudo_views[next_pseudo..next_pseudo + batch.pseudo.len()]);
            next_pseudo += batch.pseudo.len();
        }
        let pairs: Vec<Vec<Option<usize>>> = order.iter().map(|e| e.pair(cfg.match_iou)).collect();

        let mut dims: Vec<Vec<[f64; 3]>> = vec![Vec::new(); k_classes];
        let mut residual_sum = vec![[0.0; 3]; k_classes];
        let mut residual_n = vec![0usize; k_classes];
        for (ex, pair) in order.iter().zip(&pairs) {
            for ((label, &selected), hit) in ex.labels.iter().zip(&ex.mask.0).zip(pair) {
                let (Some(c), true) = (hit, selected) else { continue };
                let Some(k) = (label.class_id < k_classes).then_some(label.class_id) else { continue };
                let obs = ex.clusters[*c].dims();
                let truth = [label.bbox.size.l, label.bbox.size.w, label.bbox.size.h];
                dims[k].push(obs);
                if !ex.pseudo {
                    residual_n[k] += 1;
                    for i in 0..3 {
                        residual_sum[k][i] += truth[i] - obs[i];
                    }
                }
            }
        }

        let fallback = self.model.default_prior();
        let mut next = ClusterModel::unfitted(cfg.clone());
        next.ground_z = Some(ground_z);
        for k in 0..k_classes {
            if dims[k].is_empty() {
                next.priors[k] = self.model.priors[k].clone();
                next.size_offsets[k] = self.model.size_offsets[k];
                continue;
            }
            let base = self.model.priors[k].clone().unwrap_or_else(|| fallback.clone());
            next.priors[k] = Some(SizePrior::shrunk(&dims[k], &base, cfg.prior_strength));
            next.size_offsets[k] = match residual_n[k] {
                0 => self.model.size_offsets[k],
                n => residual_sum[k].map(|r| r / n as f64),
            };
        }

        // Calibration: each cluster scored under the new priors is a positive
        // when it pairs with a selected box of the predicted class. Clusters
        // on unselected boxes carry no information and are skipped.
        let mut samples: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k_classes];
        for (ex, pair) in order.iter().zip(&pairs) {
            let mut owner: Vec<Option<usize>> = vec![None; ex.clusters.len()];
            for (li, hit) in pair.iter().enumerate() {
                if let Some(c) = hit {
                    owner[*c] = Some(li);
                }
            }
            for (ci, cluster) in ex.clusters.iter().enumerate() {
                let Some((k, raw)) = next.classify(cluster.dims()) else { continue };
                let y = match owner[ci] {
                    Some(li) if !ex.mask.0[li] => continue,
                    Some(li) => f64::from(u8::from(ex.labels[li].class_id == k)),
                    None => 0.0,
                };
                samples[k].push((raw[k], y));
            }
        }
        next.calibration = samples.into_iter().map(isotonic).collect();

        // Training loss of the refit model, batch by batch.
        let mut tally = LossTally::default();
        let mut at = 0;
        for batch in data.batches {
            let mut sup = Vec::new();
            let mut unsup = Vec::new();
            let mut mask = Vec::new();
            for _ in 0..batch.labeled.len() + batch.pseudo.len() {
                let (ex, pair) = (order[at], &pairs[at]);
                at += 1;
                for (li, label) in ex.labels.iter().enumerate() {
                    let k = label.class_id.min(k_classes - 1);
                    let terms = match pair[li] {
                        Some(c) => {
                            let b = ex.clusters[c].corrected_box(next.size_offsets[k]);
                            let res = (b.size.l - label.bbox.size.l).abs()
                                + (b.size.w - label.bbox.size.w).abs()
                                + (b.size.h - label.bbox.size.h).abs();
                            BoxLossTerms { bin: 1.0 - iou_3d(&b, &label.bbox), res: res / 3.0 }
                        }
                        None => BoxLossTerms { bin: 1.0, res: 1.0 },
                    };
                    if ex.pseudo {
                        unsup.push(terms);
                        mask.push(ex.mask.0[li]);
                    } else {
                        sup.push(terms);
                    }
                }
            }
            tally.add_batch(&sup, &unsup, &SelectionMask(mask), data.loss_norm)?;
        }
        self.model = next;
        Ok(tally.report())
    }

    fn reset(&mut self) {
        self.model = ClusterModel::unfitted(self.model.config.clone());
    }

    fn predict(&self, scene: &Scene) -> Vec<Detection> {
        self.model.detect(&scene.cloud)
    }

    fn state_json(&self) -> Result<String, DetectorError> {
        Ok(serde_json::to_string_pretty(&self.model)?)
    }

    fn load_state(&mut self, json: &str) -> Result<(), DetectorError> {
        let model: ClusterModel = serde_json::from_str(json)?;
        model.config.validate()?;
        self.model = model;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::detector::{Batch, LossNorm, NoAugment};
    use crate::geometry::ObjectClass;
    use crate::synth::{generate_dataset, SynthParams};

    fn fit_on(scenes: &[Scene]) -> ClusterDetector {
        let mut det = ClusterDetector::new(ClusterConfig::default()).unwrap();
        let batches: Vec<Batch> = (0..scenes.len()).map(|i| Batch { labeled: vec![i], pseudo: vec![] }).collect();
        let data = FitData {
            labeled: scenes,
            pseudo: &[],
            batches: &batches,
            augment: &NoAugment,
            loss_norm: LossNorm::AllPositives,
        };
        det.fit(&data).unwrap();
        det
    }

    fn training() -> Vec<Scene> {
        generate_dataset(40, &SynthParams::default(), 11).unwrap().scenes
    }

    #[test]
    fn isotonic_is_monotone_and_pools() {
        let knots = isotonic(vec![(0.1, 1.0), (0.2, 0.0), (0.3, 1.0), (0.4, 1.0)]);
        assert_eq!(knots.len(), 3);
        assert!((knots[0][1] - 0.5).abs() < 1e-15);
        assert!(knots.windows(2).all(|w| w[0][1] <= w[1][1]));
        assert_eq!(interpolate(&knots, 0.0), 0.5);
        assert_eq!(interpolate(&knots, 1.0), 1.0);
    }

    #[test]
    fn ground_only_scene_has_no_detections() {
        let det = fit_on(&training());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = (0..3000)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..40.0),
                    rng.random_range(-20.0..20.0),
                    -1.7 + rng.random_range(-0.02..0.02),
                )
            })
            .collect();
        assert!(det.predict(&Scene::new("g", PointCloud::new(pts))).is_empty());
        assert!(det.predict(&Scene::new("e", PointCloud::default())).is_empty());
    }

    #[test]
    fn lone_car_is_detected_as_car() {
        let det = fit_on(&training());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bbox = Box3D::new(Point3::new(15.0, 3.0, -1.7 + 0.75), Size3::new(3.9, 1.6, 1.5), 0.4).unwrap();
        let mut pts: Vec<Point3> = (0..2000)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..40.0),
                    rng.random_range(-20.0..20.0),
                    -1.7 + rng.random_range(-0.02..0.02),
                )
            })
            .collect();
        let (s, c) = bbox.yaw.sin_cos();
        for _ in 0..150 {
            let u = rng.random_range(-1.95..1.95);
            let v = rng.random_range(-0.8..0.8);
            pts.push(Point3::new(15.0 + c * u - s * v, 3.0 + s * u + c * v, rng.random_range(-1.7..-0.2)));
        }
        let pred = det.predict(&Scene::new("car", PointCloud::new(pts)));
        assert_eq!(pred.len(), 1);
        assert_eq!(pred[0].class_id, ObjectClass::Car.index());
        assert!(iou_3d(&pred[0].bbox, &bbox) > 0.7, "iou {}", iou_3d(&pred[0].bbox, &bbox));
        assert!((0.0..=1.0).contains(&pred[0].confidence));
    }

    #[test]
    fn boxes_no_larger_than_hull_bounding_rectangle() {
        let scenes = training();
        let det = fit_on(&scenes);
        let gz = det.model().ground_z.unwrap();
        for s in &scenes[..10] {
            for c in segment(&s.cloud, gz, 0.4, 8) {
                assert!(c.indices.len() >= 8);
                let bev: Vec<[f64; 2]> =
                    c.indices.iter().map(|&i| [s.cloud.points[i].x, s.cloud.points[i].y]).collect();
                let (mut x0, mut x1, mut y0, mut y1) =
                    (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                for p in &bev {
                    x0 = x0.min(p[0]);
                    x1 = x1.max(p[0]);
                    y0 = y0.min(p[1]);
                    y1 = y1.max(p[1]);
                }
                assert!(c.rect.area() <= (x1 - x0) * (y1 - y0) + 1e-9);
            }
        }
    }

    #[test]
    fn predict_is_deterministic_and_state_round_trips() {
        let scenes = training();
        let det = fit_on(&scenes);
        let a = det.predict(&scenes[0]);
        assert_eq!(a, det.predict(&scenes[0]));
        let mut other = ClusterDetector::new(ClusterConfig::default()).unwrap();
        other.load_state(&det.state_json().unwrap()).unwrap();
        assert_eq!(other.model(), det.model());
        assert_eq!(other.predict(&scenes[0]), a);
        for d in &a {
            assert!(d.confidence >= ClusterConfig::default().min_confidence);
            assert!(d.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn unseen_class_is_disabled() {
        let mut p = SynthParams::default();
        p.classes[2].count = [0, 0];
        let scenes = generate_dataset(20, &p, 2).unwrap().scenes;
        let det = fit_on(&scenes);
        assert!(det.model().priors[2].is_none());
        assert!(det.model().priors[0].is_some());
    }

    #[test]
    fn priors_are_positive_definite() {
        let det = fit_on(&training());
        for p in det.model().priors.iter().flatten() {
            let m = p.cov_matrix();
            assert!(m.cholesky().is_some());
        }
    }
}
