//! Sharded (image, label) dataset emission from labeled scenes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Resolution};
use crate::error::{Error, Result};
use crate::ingest::{Scene, IGNORE};
use crate::render::{compose_view, write_label_png, write_view_png, ChannelConfig, ChannelSource, RenderOptions, RenderedView};
use crate::rng::stream_rng;
use crate::vgo::{sample_view, VgoConfig};

pub const DATASET_SCHEMA: &str = "pc2dseg.dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Training-set size used for the published 2D models: 90 000 iterations of 16 images.
pub const FULL_SCALE_SAMPLES: usize = 90_000 * 16;
pub const DEFAULT_SHARD_SIZE: usize = 1000;
pub const MIN_LABEL_FRACTION: f64 = 0.01;
pub const MAX_REDRAWS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub vgo: VgoConfig,
    pub channel_config: String,
    pub resolution: Resolution,
    pub n_samples: usize,
    pub seed: u64,
    pub shard_size: usize,
    #[serde(default)]
    pub render: RenderOptions,
}

impl DatasetSpec {
    pub fn new(n_samples: usize, resolution: Resolution, seed: u64) -> Self {
        Self {
            vgo: VgoConfig::default(),
            channel_config: "trimerge".into(),
            resolution,
            n_samples,
            seed,
            shard_size: DEFAULT_SHARD_SIZE,
            render: RenderOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.shard_size == 0 {
            return Err(Error::Config("dataset needs n_samples >= 1 and shard_size >= 1".into()));
        }
        self.vgo.validate()?;
        ChannelConfig::lookup(&self.channel_config)?.validate()
    }

    pub fn shard_count(&self) -> usize {
        self.n_samples.div_ceil(self.shard_size)
    }

    fn vgo_at_resolution(&self) -> VgoConfig {
        VgoConfig { resolution: self.resolution, ..self.vgo.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: u64,
    pub scene_id: String,
    pub view: CameraView,
    pub image: String,
    pub label: String,
    /// Poses rejected for too few labeled pixels before this one.
    pub redraws: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub channel_config: String,
    pub channels: Vec<ChannelSource>,
    pub resolution: Resolution,
    pub seed: u64,
    pub n_samples: usize,
    pub shard_size: usize,
    pub total_redraws: u64,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

pub fn sample_paths(sample_id: u64, shard_size: usize) -> (String, String) {
    let shard = sample_id / shard_size as u64;
    (format!("images/shard_{shard}/{sample_id:08}.png"), format!("labels/shard_{shard}/{sample_id:08}.png"))
}

fn label_fraction(view: &RenderedView) -> f64 {
    let labels = view.label_image.as_ref().expect("dataset views carry labels");
    let n = labels.data().len();
    labels.data().iter().filter(|&&l| l != IGNORE as u8).count() as f64 / n as f64
}

/// Draws and renders one sample: the scene is picked round-robin, the pose
/// family and pose from the sample's own random stream.
pub fn render_sample(
    spec: &DatasetSpec,
    scenes: &[(String, Scene)],
    channels: &ChannelConfig,
    sample_id: u64,
) -> Result<(usize, CameraView, RenderedView, u32)> {
    let scene_index = (sample_id % scenes.len() as u64) as usize;
    let scene = &scenes[scene_index].1;
    let vgo = spec.vgo_at_resolution();
    let mut rng = stream_rng(spec.seed, sample_id);
    let mut redraws = 0;
    loop {
        let family = vgo.families[rng.random_range(0..vgo.families.len())];
        let view = sample_view(&scene.sensor_trajectory, family, &vgo, sample_id as u32, &mut rng)?;
        let rendered = compose_view(scene, &view, channels, &spec.render)?;
        if label_fraction(&rendered) >= MIN_LABEL_FRACTION || redraws == MAX_REDRAWS {
            return Ok((scene_index, view, rendered, redraws));
        }
        redraws += 1;
    }
}

/// Renders the stored pose of a manifest entry again.
pub fn rerender_entry(
    entry: &SampleEntry,
    manifest: &DatasetManifest,
    scene: &Scene,
    render: &RenderOptions,
) -> Result<RenderedView> {
    compose_view(scene, &entry.view, &ChannelConfig::lookup(&manifest.channel_config)?, render)
}

fn prepare_out_dir(out_dir: &Path, overwrite: bool) -> Result<()> {
    let occupied = out_dir.join(MANIFEST_FILE).exists() || out_dir.join("images").exists() || out_dir.join("labels").exists();
    if occupied {
        if !overwrite {
            return Err(Error::Config(format!(
                "{} already holds a dataset; pass --overwrite to replace it",
                out_dir.display()
            )));
        }
        for sub in ["images", "labels"] {
            let p = out_dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))
}

/// Writes `n_samples` image/label PNG pairs into shard directories and a
/// manifest that records every pose. Output does not depend on thread count.
pub fn emit_dataset(
    spec: &DatasetSpec,
    scenes: &[(String, Scene)],
    out_dir: &Path,
    overwrite: bool,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if scenes.is_empty() {
        return Err(Error::Invalid("dataset needs at least one scene".into()));
    }
    for (id, scene) in scenes {
        if scene.labels.iter().all(|&l| l == IGNORE) {
            return Err(Error::Invalid(format!("scene {id} has no labels")));
        }
        if scene.sensor_trajectory.is_empty() {
            return Err(Error::Invalid(format!("scene {id} has no trajectory")));
        }
    }
    let channels = ChannelConfig::lookup(&spec.channel_config)?;
    prepare_out_dir(out_dir, overwrite)?;
    for shard in 0..spec.shard_count() {
        for sub in ["images", "labels"] {
            let d = out_dir.join(sub).join(format!("shard_{shard}"));
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    let samples: Vec<SampleEntry> = (0..spec.n_samples as u64)
        .into_par_iter()
        .map(|sample_id| {
            let (scene_index, view, rendered, redraws) = render_sample(spec, scenes, &channels, sample_id)?;
            let (image, label) = sample_paths(sample_id, spec.shard_size);
            write_view_png(&out_dir.join(&image), &rendered)?;
            write_label_png(&out_dir.join(&label), rendered.label_image.as_ref().expect("labels rendered"))?;
            Ok(SampleEntry { sample_id, scene_id: scenes[scene_index].0.clone(), view, image, label, redraws })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.into(),
        channel_config: channels.name.clone(),
        channels: channels.channels.clone(),
        resolution: spec.resolution,
        seed: spec.seed,
        n_samples: spec.n_samples,
        shard_size: spec.shard_size,
        total_redraws: samples.iter().map(|s| s.redraws as u64).sum(),
        samples,
    };
    let path: PathBuf = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{read_channels_png, read_label_png};
    use crate::synthetic::SceneRecipe;

    fn tiny_spec(n: usize, shard: usize) -> DatasetSpec {
        let mut spec = DatasetSpec::new(n, Resolution::Ld, 4);
        spec.shard_size = shard;
        spec
    }

    fn scenes() -> Vec<(String, Scene)> {
        let a = SceneRecipe::small().generate().unwrap();
        let mut r = SceneRecipe::small();
        r.seed = 99;
        vec![("a".into(), a), ("b".into(), r.generate().unwrap())]
    }

    #[test]
    fn full_scale_sample_count() {
        assert_eq!(FULL_SCALE_SAMPLES, 1_440_000);
        let spec = DatasetSpec { shard_size: DEFAULT_SHARD_SIZE, ..DatasetSpec::new(FULL_SCALE_SAMPLES, Resolution::Hd, 0) };
        assert_eq!(spec.shard_count(), 1440);
    }

    #[test]
    fn shards_balance_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = scenes();
        let spec = tiny_spec(8, 4);
        let m = emit_dataset(&spec, &scenes, dir.path(), false).unwrap();
        assert_eq!(m.samples.len(), 8);
        for shard in 0..2 {
            let n = fs::read_dir(dir.path().join(format!("images/shard_{shard}"))).unwrap().count();
            assert_eq!(n, 4);
        }
        assert_eq!(m.samples.iter().filter(|s| s.scene_id == "a").count(), 4);
        let classes = scenes[0].1.label_set();
        for s in &m.samples {
            let labels = read_label_png(&dir.path().join(&s.label)).unwrap();
            assert!(labels.data().iter().all(|&l| l == 255 || classes.contains(&(l as u16))));
        }
        assert!(emit_dataset(&spec, &scenes, dir.path(), false).is_err());
        let again = emit_dataset(&spec, &scenes, dir.path(), true).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn manifest_reconstructs_images() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = scenes();
        let spec = tiny_spec(3, 2);
        let m = emit_dataset(&spec, &scenes, dir.path(), false).unwrap();
        for s in &m.samples {
            let scene = &scenes.iter().find(|(id, _)| *id == s.scene_id).unwrap().1;
            let view = rerender_entry(s, &m, scene, &spec.render).unwrap();
            let path = dir.path().join("re.png");
            write_view_png(&path, &view).unwrap();
            assert_eq!(fs::read(&path).unwrap(), fs::read(dir.path().join(&s.image)).unwrap());
            assert_eq!(read_channels_png(&path).unwrap().len(), 3);
        }
    }

    #[test]
    fn unlabeled_scenes_are_rejected() {
        let mut scene = SceneRecipe::small().generate().unwrap();
        scene.labels.iter_mut().for_each(|l| *l = IGNORE);
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_dataset(&tiny_spec(1, 1), &[("x".into(), scene)], dir.path(), false).is_err());
    }
}
