//! Stage-by-stage pipeline over an output directory.
//!
//! Each command reads the artifacts of its predecessor and writes its own
//! plus `runs/<command>/run.json`:
//!
//! ```text
//! scenes/index.json, scenes/<id>.pc2dscene      prepare
//! views/<id>.json                               gen-views
//! renders/<id>/<view>.tensor|.png|_label.png    render
//! logits/<id>/<view>.logits                     infer
//! fused/<id>.label, fused/<id>.summary.json     fuse
//! pseudo/<scan>.label                           pseudo-label
//! metrics/report.json, metrics/report.txt       evaluate
//! dataset/                                      gen-dataset
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{CameraView, Resolution, ViewManifest, VIEW_MANIFEST_SCHEMA};
use crate::error::{Error, Result};
use crate::fuse::{
    export_pseudolabels, fuse_precomputed, fuse_scene, FuseConfig, FuseOutcome, PseudoLabelOptions,
};
use crate::ingest::{
    assemble_scene, crop_ground, densify_labels, map_classes, normalize_intensity, read_labels, read_ply,
    read_sequence, write_labels, ClassId, ClassMapping, Scene, IGNORE,
};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::pc2d::{emit_dataset, DatasetManifest, DatasetSpec, DATASET_SCHEMA, DEFAULT_SHARD_SIZE};
use crate::render::{
    compose_view, read_label_png, write_label_png, write_view_png, ChannelConfig, Grid, RenderOptions,
    RenderedView,
};
use crate::rng::derive_seed;
use crate::scene_file::{read_scene, write_scene, SCENE_EXTENSION, SCENE_VERSION};
use crate::segmenter::{
    ExternalSegmenter, LogitTensor, OracleConfig, OracleSegmenter, Segmenter, DEFAULT_BATCH_SIZE,
    DEFAULT_TIMEOUT_SECS, REQUEST_SCHEMA,
};
use crate::synthetic::SceneRecipe;
use crate::tensor::RawTensor;
use crate::vgo::{generate_views, VgoConfig};

pub const RUN_SCHEMA: &str = "pc2dseg.run/1";
pub const SCENE_INDEX_SCHEMA: &str = "pc2dseg.scenes/1";
pub const FUSE_SUMMARY_SCHEMA: &str = "pc2dseg.fuse/1";
pub const REPORT_SCHEMA: &str = "pc2dseg.metrics/1";

const VIEW_SEED_STREAM: u64 = 0x7669_6577;
const ORACLE_SEED_STREAM: u64 = 0x6f72_6163;
const DATASET_SEED_STREAM: u64 = 0x6461_7461;

/// Every file format with its version identifier.
pub fn schema_versions() -> Vec<(&'static str, String)> {
    vec![
        ("scene container", format!("PC2DSCEN v{SCENE_VERSION}")),
        ("raw tensor", "PC2DTNSR".to_string()),
        ("scene index", SCENE_INDEX_SCHEMA.to_string()),
        ("view manifest", VIEW_MANIFEST_SCHEMA.to_string()),
        ("adapter request", REQUEST_SCHEMA.to_string()),
        ("dataset manifest", DATASET_SCHEMA.to_string()),
        ("fuse summary", FUSE_SUMMARY_SCHEMA.to_string()),
        ("metrics report", REPORT_SCHEMA.to_string()),
        ("run record", RUN_SCHEMA.to_string()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputConfig {
    /// KITTI-style sequence; meshes are read from `<mesh_dir>/<scene id>.ply`.
    Kitti {
        scan_dir: PathBuf,
        pose_file: PathBuf,
        #[serde(default)]
        label_dir: Option<PathBuf>,
        #[serde(default)]
        mesh_dir: Option<PathBuf>,
    },
    /// A built-in recipe name or a recipe JSON file.
    Synthetic { recipe: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmenterConfig {
    Oracle(OracleConfig),
    External {
        command: Vec<String>,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSettings {
    /// Samples for `gen-dataset`; `run-all` skips the dataset when 0.
    pub n_samples: usize,
    pub shard_size: usize,
    pub resolution: Resolution,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self { n_samples: 0, shard_size: DEFAULT_SHARD_SIZE, resolution: Resolution::Ld }
    }
}

/// The whole pipeline configuration. `vgo.seed`, the oracle seed and the
/// dataset seed are derived from `seed` per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub group_size: usize,
    pub normalize_intensity: bool,
    /// Ground crop relative to the first sensor pose; `None` keeps every point.
    pub crop_z_min: Option<f64>,
    /// KNN label densification of unlabeled points; `None` disables it.
    pub densify_k: Option<usize>,
    /// Raw-to-common class mapping, built-in name or JSON path.
    pub mapping: Option<String>,
    pub vgo: VgoConfig,
    pub channels: String,
    pub render: RenderOptions,
    pub fuse: FuseConfig,
    pub segmenter: SegmenterConfig,
    /// Evaluation protocol; defaults to `mapping`, then to the scene's classes.
    pub protocol: Option<String>,
    pub dataset: DatasetSettings,
    pub pseudo: PseudoLabelOptions,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::Synthetic { recipe: "small".into() },
            group_size: crate::ingest::DEFAULT_GROUP_SIZE,
            normalize_intensity: true,
            crop_z_min: None,
            densify_k: None,
            mapping: None,
            vgo: VgoConfig::default(),
            channels: "trimerge".into(),
            render: RenderOptions::default(),
            fuse: FuseConfig::default(),
            segmenter: SegmenterConfig::Oracle(OracleConfig::default()),
            protocol: None,
            dataset: DatasetSettings::default(),
            pseudo: PseudoLabelOptions::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::Config("group_size must be at least 1".into()));
        }
        self.vgo.validate().map_err(as_config)?;
        ChannelConfig::lookup(&self.channels)?.validate()?;
        self.fuse.validate()?;
        if let Some(m) = &self.mapping {
            ClassMapping::resolve(m).map_err(as_config)?;
        }
        if let Some(p) = &self.protocol {
            ClassMapping::resolve(p).map_err(as_config)?;
        }
        match &self.segmenter {
            SegmenterConfig::Oracle(o) => o.validate()?,
            SegmenterConfig::External { command, batch_size, .. } => {
                if command.is_empty() || *batch_size == 0 {
                    return Err(Error::Config("external segmenter needs a command and batch_size >= 1".into()));
                }
            }
        }
        match &self.input {
            InputConfig::Synthetic { recipe } => {
                SceneRecipe::resolve(recipe).map_err(as_config)?;
            }
            InputConfig::Kitti { scan_dir, pose_file, .. } => {
                for p in [scan_dir, pose_file] {
                    if !p.exists() {
                        return Err(Error::Config(format!("input path {} does not exist", p.display())));
                    }
                }
            }
        }
        Ok(())
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn scene_vgo(&self, scene_index: usize) -> VgoConfig {
        VgoConfig { seed: derive_seed(self.seed ^ VIEW_SEED_STREAM, scene_index as u64), ..self.vgo.clone() }
    }

    fn scene_segmenter(&self, scene_index: usize, classes: usize, work_dir: PathBuf) -> Box<dyn Segmenter> {
        match &self.segmenter {
            SegmenterConfig::Oracle(o) => {
                let seed = derive_seed(self.seed ^ ORACLE_SEED_STREAM, scene_index as u64);
                Box::new(OracleSegmenter::new(classes, OracleConfig { seed, ..*o }))
            }
            SegmenterConfig::External { command, batch_size, timeout_secs } => Box::new(
                ExternalSegmenter::new(command.clone(), work_dir, classes)
                    .with_batch_size(*batch_size)
                    .with_timeout(Duration::from_secs(*timeout_secs)),
            ),
        }
    }

    /// Class list used for inference and evaluation.
    pub fn class_mapping(&self) -> Result<ClassMapping> {
        if let Some(p) = self.protocol.as_ref().or(self.mapping.as_ref()) {
            return ClassMapping::resolve(p).map_err(as_config);
        }
        match &self.input {
            InputConfig::Synthetic { recipe } => {
                let r = SceneRecipe::resolve(recipe).map_err(as_config)?;
                let names: Vec<&str> = r.classes.iter().map(String::as_str).collect();
                Ok(ClassMapping::identity(&r.name, &names))
            }
            InputConfig::Kitti { .. } => {
                Err(Error::Config("set `mapping` or `protocol` to define the classes of a KITTI input".into()))
            }
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub file: String,
    pub points: usize,
    pub scans: usize,
    pub has_mesh: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneIndex {
    pub schema: String,
    pub scenes: Vec<SceneEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub command: String,
    pub version: String,
    pub unix_time: u64,
    pub config: PipelineConfig,
    /// SHA-256 of every artifact written, keyed by path relative to `out_dir`.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, producer: &'static str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.into(), producer });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact { path: path.into(), producer })
    }
}

/// Writes `runs/<command>/run.json` with hashes of `artifacts`.
pub fn record_run(cfg: &PipelineConfig, command: &str, artifacts: &[PathBuf]) -> Result<RunRecord> {
    let hashes: Vec<(String, String)> = artifacts
        .par_iter()
        .map(|p| {
            let rel = p.strip_prefix(&cfg.out_dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            Ok((rel, sha256_file(p)?))
        })
        .collect::<Result<_>>()?;
    let record = RunRecord {
        schema: RUN_SCHEMA.into(),
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config: cfg.clone(),
        artifacts: hashes.into_iter().collect(),
    };
    write_json(&cfg.path(format!("runs/{command}/run.json")), &record)?;
    Ok(record)
}

fn scene_id(index: usize) -> String {
    format!("scene_{index:03}")
}

/// Reads, assembles, normalizes, maps, densifies and crops the input into
/// scene containers.
pub fn prepare(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let (mut scenes, mesh_dir): (Vec<Scene>, Option<PathBuf>) = match &cfg.input {
        InputConfig::Synthetic { recipe } => (vec![SceneRecipe::resolve(recipe)?.generate()?], None),
        InputConfig::Kitti { scan_dir, pose_file, label_dir, mesh_dir } => {
            let seq = read_sequence(scan_dir, pose_file, label_dir.as_deref())?;
            (assemble_scene(&seq.scans, &seq.poses, cfg.group_size)?, mesh_dir.clone())
        }
    };
    let mapping = cfg.mapping.as_deref().map(ClassMapping::resolve).transpose()?;
    let dir = cfg.path("scenes");
    ensure_dir(&dir)?;
    let mut entries = Vec::with_capacity(scenes.len());
    let mut artifacts = Vec::new();
    for (i, scene) in scenes.iter_mut().enumerate() {
        let id = scene_id(i);
        if cfg.normalize_intensity {
            *scene = normalize_intensity(scene);
        }
        if let Some(m) = &mapping {
            *scene = map_classes(scene, m);
        }
        if let Some(k) = cfg.densify_k {
            let labeled: Vec<bool> = scene.labels.iter().map(|&l| l != IGNORE).collect();
            if labeled.iter().any(|&b| b) && labeled.iter().any(|&b| !b) {
                *scene = densify_labels(scene, &labeled, k)?;
            }
        }
        if let Some(z) = cfg.crop_z_min {
            *scene = crop_ground(scene, z);
        }
        if let Some(mesh_dir) = &mesh_dir {
            let path = mesh_dir.join(format!("{id}.ply"));
            if path.exists() {
                let mut mesh = read_ply(&path)?;
                if let Some(m) = &mapping {
                    if let Some(labels) = mesh.vertex_label.as_mut() {
                        labels.iter_mut().for_each(|l| *l = m.map(*l));
                    }
                }
                mesh.attach_scene_attributes(&scene.points, &scene.intensity, &scene.labels, None);
                scene.mesh = Some(mesh);
            }
        }
        let file = format!("{id}.{SCENE_EXTENSION}");
        let path = dir.join(&file);
        write_scene(&path, scene)?;
        info!("prepared {id}: {} points", scene.len());
        entries.push(SceneEntry {
            id,
            file,
            points: scene.len(),
            scans: scene.source_scans.len(),
            has_mesh: scene.mesh.is_some(),
        });
        artifacts.push(path);
    }
    let index_path = dir.join("index.json");
    write_json(&index_path, &SceneIndex { schema: SCENE_INDEX_SCHEMA.into(), scenes: entries })?;
    artifacts.push(index_path);
    record_run(cfg, "prepare", &artifacts)
}

pub fn load_scene_index(cfg: &PipelineConfig) -> Result<SceneIndex> {
    read_json(&cfg.path("scenes/index.json"), "prepare")
}

pub fn load_scenes(cfg: &PipelineConfig) -> Result<Vec<(String, Scene)>> {
    load_scene_index(cfg)?
        .scenes
        .into_iter()
        .map(|e| {
            let path = cfg.path("scenes").join(&e.file);
            require(&path, "prepare")?;
            Ok((e.id, read_scene(&path)?))
        })
        .collect()
}

fn views_path(cfg: &PipelineConfig, id: &str) -> PathBuf {
    cfg.path(format!("views/{id}.json"))
}

pub fn gen_views(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let mut artifacts = Vec::new();
    for (i, (id, scene)) in load_scenes(cfg)?.iter().enumerate() {
        let views = generate_views(scene, &cfg.scene_vgo(i))?;
        info!("{id}: {} views", views.len());
        let path = views_path(cfg, id);
        ensure_dir(path.parent().unwrap())?;
        ViewManifest::new(id.clone(), views).write(&path)?;
        artifacts.push(path);
    }
    record_run(cfg, "gen-views", &artifacts)
}

pub fn load_views(cfg: &PipelineConfig, id: &str) -> Result<Vec<CameraView>> {
    let path = views_path(cfg, id);
    require(&path, "gen-views")?;
    Ok(ViewManifest::read(&path)?.views)
}

fn render_dir(cfg: &PipelineConfig, id: &str) -> PathBuf {
    cfg.path(format!("renders/{id}"))
}

fn logits_dir(cfg: &PipelineConfig, id: &str) -> PathBuf {
    cfg.path(format!("logits/{id}"))
}

const RENDER_CHUNK: usize = 64;

pub fn render(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let channels = ChannelConfig::lookup(&cfg.channels)?;
    let mut artifacts = Vec::new();
    for (id, scene) in load_scenes(cfg)? {
        let views = load_views(cfg, &id)?;
        let dir = render_dir(cfg, &id);
        ensure_dir(&dir)?;
        for chunk in views.chunks(RENDER_CHUNK) {
            let written: Vec<Vec<PathBuf>> = chunk
                .par_iter()
                .map(|v| {
                    let r = compose_view(&scene, v, &channels, &cfg.render)?;
                    let tensor = dir.join(format!("{}.tensor", v.view_id));
                    let png = dir.join(format!("{}.png", v.view_id));
                    r.to_tensor().write(&tensor)?;
                    write_view_png(&png, &r)?;
                    let mut files = vec![tensor, png];
                    if let Some(labels) = &r.label_image {
                        let lp = dir.join(format!("{}_label.png", v.view_id));
                        write_label_png(&lp, labels)?;
                        files.push(lp);
                    }
                    Ok(files)
                })
                .collect::<Result<_>>()?;
            artifacts.extend(written.into_iter().flatten());
        }
        info!("{id}: rendered {} views", views.len());
    }
    record_run(cfg, "render", &artifacts)
}

/// Rebuilds a rendered view from its stored tensor and label image.
pub fn load_rendered(cfg: &PipelineConfig, id: &str, view: &CameraView) -> Result<RenderedView> {
    let dir = render_dir(cfg, id);
    let tensor_path = dir.join(format!("{}.tensor", view.view_id));
    require(&tensor_path, "render")?;
    let tensor = RawTensor::read(&tensor_path)?;
    let (w, h) = (view.intrinsics.width as usize, view.intrinsics.height as usize);
    let [c, th, tw] = tensor.dims[..] else {
        return Err(Error::format(&tensor_path, "rendered tensor is not C x H x W"));
    };
    if (th as usize, tw as usize) != (h, w) {
        return Err(Error::format(&tensor_path, "rendered tensor size differs from the view"));
    }
    let channels_cfg = ChannelConfig::lookup(&cfg.channels)?;
    if c as usize != channels_cfg.channels.len() {
        return Err(Error::format(&tensor_path, "rendered channel count differs from the configuration"));
    }
    let channels = tensor.data.chunks(w * h).map(|d| Grid::from_vec(w, h, d.to_vec())).collect();
    let label_path = dir.join(format!("{}_label.png", view.view_id));
    let label_image = if label_path.exists() { Some(read_label_png(&label_path)?) } else { None };
    Ok(RenderedView {
        view_id: view.view_id,
        channel_config_name: channels_cfg.name,
        channel_sources: channels_cfg.channels,
        channels,
        point_depth: Grid::new(w, h, f64::INFINITY),
        mesh_depth: None,
        label_image,
    })
}

pub fn infer(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let classes = cfg.class_mapping()?.class_count();
    let mut artifacts = Vec::new();
    for (i, (id, _)) in load_scene_index(cfg)?.scenes.iter().map(|e| (e.id.clone(), ())).enumerate() {
        let views = load_views(cfg, &id)?;
        let segmenter = cfg.scene_segmenter(i, classes, cfg.path(format!("work/{id}")));
        let dir = logits_dir(cfg, &id);
        ensure_dir(&dir)?;
        for chunk in views.chunks(segmenter.preferred_batch().max(1)) {
            let rendered: Vec<RenderedView> =
                chunk.par_iter().map(|v| load_rendered(cfg, &id, v)).collect::<Result<_>>()?;
            let logits = segmenter.infer_batch(&rendered)?;
            for l in &logits {
                let path = dir.join(format!("{}.logits", l.view_id));
                l.write(&path)?;
                artifacts.push(path);
            }
        }
        info!("{id}: inferred {} views", views.len());
    }
    record_run(cfg, "infer", &artifacts)
}

fn fused_path(cfg: &PipelineConfig, id: &str) -> PathBuf {
    cfg.path(format!("fused/{id}.label"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseRecord {
    pub schema: String,
    pub scene_id: String,
    #[serde(flatten)]
    pub summary: crate::fuse::FuseSummary,
}

fn write_fused(cfg: &PipelineConfig, id: &str, outcome: &FuseOutcome) -> Result<Vec<PathBuf>> {
    let path = fused_path(cfg, id);
    ensure_dir(path.parent().unwrap())?;
    let words: Vec<u32> = outcome.labels.iter().map(|&l| l as u32).collect();
    write_labels(&path, &words)?;
    let summary_path = cfg.path(format!("fused/{id}.summary.json"));
    let record = FuseRecord {
        schema: FUSE_SUMMARY_SCHEMA.into(),
        scene_id: id.into(),
        summary: outcome.summary(&cfg.fuse, &cfg.channels),
    };
    write_json(&summary_path, &record)?;
    Ok(vec![path, summary_path])
}

pub fn load_fused(cfg: &PipelineConfig, id: &str, points: usize) -> Result<Vec<ClassId>> {
    let path = fused_path(cfg, id);
    require(&path, "fuse")?;
    let words = read_labels(&path)?;
    if words.len() != points {
        return Err(Error::format(&path, format!("{} labels for {points} points", words.len())));
    }
    Ok(words.into_iter().map(|w| w as ClassId).collect())
}

pub fn fuse(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let classes = cfg.class_mapping()?.class_count();
    let mut artifacts = Vec::new();
    for (id, scene) in load_scenes(cfg)? {
        let views = load_views(cfg, &id)?;
        let dir = logits_dir(cfg, &id);
        let outcome = fuse_precomputed(&scene, &views, &cfg.fuse, classes, DEFAULT_BATCH_SIZE, |chunk| {
            chunk
                .par_iter()
                .map(|v| {
                    let path = dir.join(format!("{}.logits", v.view_id));
                    require(&path, "infer")?;
                    let (w, h) = (v.intrinsics.width as usize, v.intrinsics.height as usize);
                    LogitTensor::from_tensor(v.view_id, RawTensor::read(&path)?, classes, h, w)
                })
                .collect()
        })?;
        info!("{id}: {} of {} points voted", outcome.voted_points(), scene.len());
        artifacts.extend(write_fused(cfg, &id, &outcome)?);
    }
    record_run(cfg, "fuse", &artifacts)
}

fn pseudo_options(cfg: &PipelineConfig) -> PseudoLabelOptions {
    PseudoLabelOptions { allow_missing: cfg.pseudo.allow_missing || cfg.crop_z_min.is_some(), ..cfg.pseudo }
}

pub fn pseudo_label(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let dir = cfg.path("pseudo");
    let mut artifacts = Vec::new();
    for (id, scene) in load_scenes(cfg)? {
        let labels = load_fused(cfg, &id, scene.len())?;
        artifacts.extend(export_pseudolabels(&scene, &labels, &dir, &pseudo_options(cfg))?);
    }
    record_run(cfg, "pseudo-label", &artifacts)
}

fn write_report(cfg: &PipelineConfig, report: &MetricsReport) -> Result<Vec<PathBuf>> {
    let json_path = cfg.path("metrics/report.json");
    write_json(&json_path, report)?;
    let txt_path = cfg.path("metrics/report.txt");
    fs::write(&txt_path, report.to_table(&cfg.channels)).map_err(|e| Error::io(&txt_path, e))?;
    Ok(vec![json_path, txt_path])
}

/// Scores fused labels against the prepared scenes' labels.
pub fn evaluate(cfg: &PipelineConfig) -> Result<(RunRecord, MetricsReport)> {
    cfg.validate()?;
    let protocol = cfg.class_mapping()?;
    let mut cm = ConfusionMatrix::for_mapping(&protocol);
    for (id, scene) in load_scenes(cfg)? {
        let pred = load_fused(cfg, &id, scene.len())?;
        cm.accumulate(&scene.labels, &pred)?;
    }
    let report = cm.report(&protocol);
    let artifacts = write_report(cfg, &report)?;
    Ok((record_run(cfg, "evaluate", &artifacts)?, report))
}

fn label_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        crate::ingest::list_with_extension(path, "label")
    } else {
        require(path, "pseudo-label")?;
        Ok(vec![path.to_path_buf()])
    }
}

/// Scores `.label` files (or directories of them, matched by name) directly;
/// the low 16 bits of each word are taken as common class ids.
pub fn evaluate_files(truth: &Path, pred: &Path, protocol: &ClassMapping) -> Result<MetricsReport> {
    let truth_files = label_files(truth)?;
    let pred_files = label_files(pred)?;
    let mut cm = ConfusionMatrix::for_mapping(protocol);
    for t in &truth_files {
        let p = if pred.is_dir() { pred.join(t.file_name().unwrap()) } else { pred_files[0].clone() };
        require(&p, "pseudo-label")?;
        let tl: Vec<ClassId> = read_labels(t)?.into_iter().map(crate::ingest::semantic_id).collect();
        let pl: Vec<ClassId> = read_labels(&p)?.into_iter().map(crate::ingest::semantic_id).collect();
        cm.accumulate(&tl, &pl)?;
    }
    Ok(cm.report(protocol))
}

pub fn gen_dataset(cfg: &PipelineConfig, overwrite: bool) -> Result<(RunRecord, DatasetManifest)> {
    cfg.validate()?;
    if cfg.dataset.n_samples == 0 {
        return Err(Error::Config("dataset.n_samples must be at least 1".into()));
    }
    let scenes = load_scenes(cfg)?;
    let spec = DatasetSpec {
        vgo: cfg.vgo.clone(),
        channel_config: cfg.channels.clone(),
        resolution: cfg.dataset.resolution,
        n_samples: cfg.dataset.n_samples,
        seed: derive_seed(cfg.seed, DATASET_SEED_STREAM),
        shard_size: cfg.dataset.shard_size,
        render: cfg.render,
    };
    let out = cfg.path("dataset");
    let manifest = emit_dataset(&spec, &scenes, &out, overwrite)?;
    let mut artifacts: Vec<PathBuf> =
        manifest.samples.iter().flat_map(|s| [out.join(&s.image), out.join(&s.label)]).collect();
    artifacts.push(out.join(crate::pc2d::MANIFEST_FILE));
    Ok((record_run(cfg, "gen-dataset", &artifacts)?, manifest))
}

/// Renders, segments and fuses each scene in memory, writing only the fused
/// labels. Equals `render` + `infer` + `fuse` without the intermediate files.
pub fn fuse_streaming(cfg: &PipelineConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let classes = cfg.class_mapping()?.class_count();
    let channels = ChannelConfig::lookup(&cfg.channels)?;
    let mut artifacts = Vec::new();
    for (i, (id, scene)) in load_scenes(cfg)?.iter().enumerate() {
        let views = load_views(cfg, id)?;
        let segmenter = cfg.scene_segmenter(i, classes, cfg.path(format!("work/{id}")));
        let outcome = fuse_scene(scene, &views, &cfg.fuse, segmenter.as_ref(), &channels, &cfg.render)?;
        info!("{id}: {} of {} points voted", outcome.voted_points(), scene.len());
        artifacts.extend(write_fused(cfg, id, &outcome)?);
    }
    record_run(cfg, "fuse", &artifacts)
}

/// Runs every stage in order. With `stream` the render and infer artifacts
/// are skipped and fusion happens in memory.
pub fn run_all(cfg: &PipelineConfig, stream: bool) -> Result<MetricsReport> {
    let mut records = vec![prepare(cfg)?, gen_views(cfg)?];
    if stream {
        records.push(fuse_streaming(cfg)?);
    } else {
        records.extend([render(cfg)?, infer(cfg)?, fuse(cfg)?]);
    }
    records.push(pseudo_label(cfg)?);
    let (record, report) = evaluate(cfg)?;
    records.push(record);
    if cfg.dataset.n_samples > 0 {
        records.push(gen_dataset(cfg, true)?.0);
    }
    let mut artifacts = BTreeMap::new();
    for r in records {
        artifacts.extend(r.artifacts);
    }
    let record = RunRecord {
        schema: RUN_SCHEMA.into(),
        command: "run-all".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config: cfg.clone(),
        artifacts,
    };
    write_json(&cfg.path("runs/run-all/run.json"), &record)?;
    Ok(report)
}
