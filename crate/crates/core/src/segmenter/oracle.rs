use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::RenderedView;
use crate::rng::stream_rng;

use super::{LogitTensor, Segmenter};

/// Noisy stand-in for a trained model, driven by the rendered label image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Probability of replacing a pixel's class with a uniformly drawn one.
    pub flip_prob: f64,
    pub logit_scale: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { flip_prob: 0.0, logit_scale: 1.0, noise_sigma: 0.0, seed: 0 }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if !(self.logit_scale > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("oracle needs logit_scale > 0 and noise_sigma >= 0".into()));
        }
        Ok(())
    }
}

/// One-hot logits of the (possibly flipped) label per pixel plus Gaussian
/// noise; unlabeled pixels get all-zero logits.
pub fn oracle_infer(view: &RenderedView, classes: usize, cfg: &OracleConfig) -> Result<LogitTensor> {
    cfg.validate()?;
    let labels = view
        .label_image
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("view {} has no label image for the oracle", view.view_id)))?;
    let (w, h) = (view.width(), view.height());
    let plane = w * h;
    let mut out = LogitTensor::zeros(view.view_id, classes, h, w);
    let mut rng = stream_rng(cfg.seed, view.view_id as u64);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0f32, cfg.noise_sigma).expect("sigma validated"));
    for (i, &label) in labels.data().iter().enumerate() {
        if label == 255 {
            continue;
        }
        let truth = label as usize;
        if truth >= classes {
            return Err(Error::Shape(format!("view {}: label {truth} with {classes} classes", view.view_id)));
        }
        let class = if cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob {
            rng.random_range(0..classes)
        } else {
            truth
        };
        out.data[class * plane + i] = cfg.logit_scale;
        if let Some(n) = &noise {
            for c in 0..classes {
                out.data[c * plane + i] += n.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    pub classes: usize,
    pub config: OracleConfig,
}

impl OracleSegmenter {
    pub fn new(classes: usize, config: OracleConfig) -> Self {
        Self { classes, config }
    }
}

impl Segmenter for OracleSegmenter {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn infer_batch(&self, views: &[RenderedView]) -> Result<Vec<LogitTensor>> {
        views.par_iter().map(|v| oracle_infer(v, self.classes, &self.config)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{ChannelSource, Grid};

    fn labeled_view(view_id: u32, w: usize, h: usize, label: impl Fn(usize) -> u8) -> RenderedView {
        RenderedView {
            view_id,
            channel_config_name: "points".into(),
            channel_sources: vec![ChannelSource::PointIntensity],
            channels: vec![Grid::new(w, h, 0.0)],
            point_depth: Grid::new(w, h, f64::INFINITY),
            mesh_depth: None,
            label_image: Some(Grid::from_vec(w, h, (0..w * h).map(label).collect())),
        }
    }

    #[test]
    fn identity_oracle_reproduces_labels() {
        let v = labeled_view(3, 16, 8, |i| if i % 7 == 0 { 255 } else { (i % 4) as u8 });
        let t = oracle_infer(&v, 4, &OracleConfig::default()).unwrap();
        let labels = v.label_image.as_ref().unwrap();
        for y in 0..8 {
            for x in 0..16 {
                let l = labels.get(x, y);
                if l == 255 {
                    assert!(t.pixel(x, y).all(|v| v == 0.0));
                } else {
                    assert_eq!(t.argmax(x, y), Some(l as u16));
                }
            }
        }
    }

    #[test]
    fn full_flip_matches_truth_at_chance() {
        let classes = 5;
        let v = labeled_view(0, 400, 300, |i| (i % classes) as u8);
        let cfg = OracleConfig { flip_prob: 1.0, seed: 11, ..Default::default() };
        let t = oracle_infer(&v, classes, &cfg).unwrap();
        let labels = v.label_image.as_ref().unwrap();
        let mut hits = 0usize;
        for y in 0..300 {
            for x in 0..400 {
                hits += (t.argmax(x, y) == Some(labels.get(x, y) as u16)) as usize;
            }
        }
        let rate = hits as f64 / 120_000.0;
        assert!((rate - 1.0 / classes as f64).abs() < 0.01, "{rate}");
    }

    #[test]
    fn deterministic_per_view_streams() {
        let cfg = OracleConfig { flip_prob: 0.3, noise_sigma: 0.5, seed: 9, ..Default::default() };
        let a = labeled_view(1, 20, 10, |i| (i % 3) as u8);
        let b = labeled_view(2, 20, 10, |i| (i % 3) as u8);
        assert_eq!(oracle_infer(&a, 3, &cfg).unwrap(), oracle_infer(&a, 3, &cfg).unwrap());
        assert_ne!(oracle_infer(&a, 3, &cfg).unwrap().data, oracle_infer(&b, 3, &cfg).unwrap().data);
    }

    #[test]
    fn rejects_bad_config_and_missing_labels() {
        let mut v = labeled_view(0, 2, 2, |_| 0);
        assert!(oracle_infer(&v, 2, &OracleConfig { flip_prob: 1.5, ..Default::default() }).is_err());
        v.label_image = None;
        assert!(oracle_infer(&v, 2, &OracleConfig::default()).is_err());
    }
}
