//! Test double that perturbs ground truth it holds on the side.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Detector, DetectorError, FitData, FitReport};
use crate::geometry::{Box3D, Detection, Point3, Size3};
use crate::scene::Scene;
use crate::seed::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Per class id.
    pub center_noise_sigma: Vec<f64>,
    pub size_noise_sigma: Vec<f64>,
    pub yaw_noise_sigma: Vec<f64>,
    pub miss_rate: f64,
    /// Chance of one spurious box per scene.
    pub false_positive_rate: f64,
    /// Confidence is `exp(-confidence_decay * perturbation)`.
    pub confidence_decay: f64,
    /// Scales each confidence by `1 - jitter * u`, `u ~ U[0, 1)`, so that
    /// exact boxes can still be ranked.
    pub confidence_jitter: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            center_noise_sigma: vec![0.0; 3],
            size_noise_sigma: vec![0.0; 3],
            yaw_noise_sigma: vec![0.0; 3],
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            confidence_decay: 2.0,
            confidence_jitter: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        let mut sigmas = self.center_noise_sigma.iter().chain(&self.size_noise_sigma).chain(&self.yaw_noise_sigma);
        if !rate(self.miss_rate) || !rate(self.false_positive_rate) {
            return Err(DetectorError::Config("rates must lie in [0, 1]".into()));
        }
        if !rate(self.confidence_jitter) {
            return Err(DetectorError::Config("confidence_jitter must lie in [0, 1]".into()));
        }
        if !sigmas.all(|s| *s >= 0.0) || !(self.confidence_decay >= 0.0) {
            return Err(DetectorError::Config("sigmas and decay must be non-negative".into()));
        }
        Ok(())
    }

    fn sigma(v: &[f64], k: usize) -> f64 {
        v.get(k).copied().unwrap_or(0.0)
    }
}

pub struct OracleDetector {
    config: OracleConfig,
    num_classes: usize,
    truth: BTreeMap<String, Vec<Detection>>,
}

impl OracleDetector {
    /// `truth` maps scene id to its ground-truth boxes.
    pub fn new(
        config: OracleConfig,
        num_classes: usize,
        truth: BTreeMap<String, Vec<Detection>>,
    ) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(Self { config, num_classes, truth })
    }

    pub fn from_scenes<'a>(
        config: OracleConfig,
        num_classes: usize,
        scenes: impl IntoIterator<Item = &'a Scene>,
    ) -> Result<Self, DetectorError> {
        let truth = scenes.into_iter().map(|s| (s.id.clone(), s.gt_detections())).collect();
        Self::new(config, num_classes, truth)
    }

    fn one_hot(&self, k: usize, conf: f64) -> Vec<f64> {
        (0..self.num_classes).map(|j| if j == k { conf } else { 0.0 }).collect()
    }

    fn normal(rng: &mut impl Rng, sigma: f64) -> f64 {
        if sigma == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
        }
    }
}

impl Detector for OracleDetector {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn fit(&mut self, data: &FitData<'_>) -> Result<FitReport, DetectorError> {
        Ok(FitReport { batches: data.batches.len(), ..FitReport::default() })
    }

    fn reset(&mut self) {}

    fn predict(&self, scene: &Scene) -> Vec<Detection> {
        let c = &self.config;
        let mut rng = derive_rng(c.seed, &["oracle", &scene.id]);
        let mut out = Vec::new();
        for gt in self.truth.get(&scene.id).into_iter().flatten() {
            if rng.random::<f64>() < c.miss_rate {
                continue;
            }
            let k = gt.class_id;
            let b = &gt.bbox;
            let sc = OracleConfig::sigma(&c.center_noise_sigma, k);
            let ss = OracleConfig::sigma(&c.size_noise_sigma, k);
            let sy = OracleConfig::sigma(&c.yaw_noise_sigma, k);
            let dc = [Self::normal(&mut rng, sc), Self::normal(&mut rng, sc), Self::normal(&mut rng, sc)];
            let ds = [Self::normal(&mut rng, ss), Self::normal(&mut rng, ss), Self::normal(&mut rng, ss)];
            let dy = Self::normal(&mut rng, sy);
            let size =
                Size3::new((b.size.l + ds[0]).max(0.05), (b.size.w + ds[1]).max(0.05), (b.size.h + ds[2]).max(0.05));
            let center = Point3::new(b.center.x + dc[0], b.center.y + dc[1], b.center.z + dc[2]);
            let Ok(bbox) = Box3D::new(center, size, b.yaw + dy) else { continue };
            let magnitude = dc.iter().chain(&ds).map(|v| v * v).sum::<f64>().sqrt() + dy.abs();
            let jitter = if c.confidence_jitter > 0.0 { 1.0 - c.confidence_jitter * rng.random::<f64>() } else { 1.0 };
            let conf = (-c.confidence_decay * magnitude).exp() * jitter;
            out.push(Detection { bbox, class_id: k, confidence: conf, scores: self.one_hot(k, conf) });
        }
        if self.num_classes > 0 && rng.random::<f64>() < c.false_positive_rate && !scene.cloud.is_empty() {
            let p = scene.cloud.points[rng.random_range(0..scene.cloud.len())];
            let k = rng.random_range(0..self.num_classes);
            let size = Size3::new(rng.random_range(0.5..4.0), rng.random_range(0.5..2.0), rng.random_range(1.0..2.0));
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let conf = rng.random::<f64>();
            if let Ok(bbox) = Box3D::new(p, size, yaw) {
                out.push(Detection { bbox, class_id: k, confidence: conf, scores: self.one_hot(k, conf) });
            }
        }
        out
    }

    fn state_json(&self) -> Result<String, DetectorError> {
        Ok(serde_json::to_string_pretty(&self.config)?)
    }

    fn load_state(&mut self, json: &str) -> Result<(), DetectorError> {
        let config: OracleConfig = serde_json::from_str(json)?;
        config.validate()?;
        self.config = config;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, scene_id, SynthParams};

    fn scenes(n: usize) -> Vec<Scene> {
        let p = SynthParams { ground_points: 20, clutter_points: 0, clutter_blobs: [0, 0], ..SynthParams::default() };
        (0..n).map(|i| generate_scene(&scene_id(i), 1, &p).unwrap().scene).collect()
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = scenes(5);
        let det = OracleDetector::from_scenes(OracleConfig::default(), 3, &s).unwrap();
        for scene in &s {
            let pred = det.predict(&scene.without_labels());
            let gt = scene.gt_detections();
            assert_eq!(pred.len(), gt.len());
            for (p, g) in pred.iter().zip(&gt) {
                assert_eq!(p.bbox, g.bbox);
                assert_eq!(p.class_id, g.class_id);
                assert_eq!(p.confidence, 1.0);
            }
        }
    }

    #[test]
    fn full_miss_leaves_only_false_positives() {
        let s = scenes(20);
        let cfg = OracleConfig { miss_rate: 1.0, false_positive_rate: 1.0, ..OracleConfig::default() };
        let det = OracleDetector::from_scenes(cfg, 3, &s).unwrap();
        for scene in &s {
            let pred = det.predict(scene);
            assert_eq!(pred.len(), 1);
            assert!(scene.ground_truth.iter().all(|g| g.detection.bbox != pred[0].bbox));
        }
    }

    #[test]
    fn miss_frequency_within_three_standard_errors() {
        let s = scenes(1000);
        let rate = 0.3;
        let cfg = OracleConfig { miss_rate: rate, ..OracleConfig::default() };
        let det = OracleDetector::from_scenes(cfg, 3, &s).unwrap();
        let total: usize = s.iter().map(|x| x.ground_truth.len()).sum();
        let kept: usize = s.iter().map(|x| det.predict(x).len()).sum();
        let freq = 1.0 - kept as f64 / total as f64;
        let se = (rate * (1.0 - rate) / total as f64).sqrt();
        assert!((freq - rate).abs() < 3.0 * se, "freq {freq}, se {se}");
    }

    #[test]
    fn confidence_falls_with_perturbation() {
        let s = scenes(30);
        let cfg =
            OracleConfig { center_noise_sigma: vec![0.5; 3], yaw_noise_sigma: vec![0.1; 3], ..OracleConfig::default() };
        let det = OracleDetector::from_scenes(cfg, 3, &s).unwrap();
        let mut pairs = Vec::new();
        for scene in &s {
            for (p, g) in det.predict(scene).iter().zip(scene.gt_detections()) {
                assert!((0.0..=1.0).contains(&p.confidence));
                let d = p.bbox.center.distance(&g.bbox.center);
                pairs.push((d, p.confidence));
            }
        }
        // Larger center error alone cannot raise confidence beyond exp(-k d).
        assert!(pairs.iter().all(|(d, c)| *c <= (-2.0 * d).exp() + 1e-12));
    }

    #[test]
    fn rejects_bad_rates() {
        let cfg = OracleConfig { miss_rate: 1.5, ..OracleConfig::default() };
        assert!(OracleDetector::new(cfg, 3, BTreeMap::new()).is_err());
    }
}
