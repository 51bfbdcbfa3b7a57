use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pc2dseg::camera::Resolution;
use pc2dseg::fuse::VoteMode;
use pc2dseg::ingest::{write_ply, ClassMapping};
use pc2dseg::pipeline::{self, InputConfig, PipelineConfig, SegmenterConfig};
use pc2dseg::render::DepthRange;
use pc2dseg::segmenter::OracleConfig;
use pc2dseg::synthetic::SceneRecipe;
use pc2dseg::vgo::VgoConfig;
use pc2dseg::{Error, Result};

#[derive(Parser)]
#[command(name = "pc2dseg", about = "Multi-view projection pipeline for Lidar semantic segmentation", disable_version_flag = true)]
struct Cli {
    /// Print the version and the schema of every file format.
    #[arg(long, global = true)]
    version: bool,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Read the input and write scene containers.
    Prepare,
    /// Generate virtual camera views per scene.
    GenViews,
    /// Render every view to tensors and PNGs.
    Render,
    /// Emit a sharded (image, label) training dataset.
    GenDataset {
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        shard_size: Option<usize>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Run the segmenter on rendered views.
    Infer,
    /// Back-project logits onto scene points.
    Fuse,
    /// Write fused labels back to per-scan label files.
    PseudoLabel,
    /// Score fused labels, or two label files/directories.
    Evaluate {
        #[arg(long, requires = "pred")]
        truth: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        pred: Option<PathBuf>,
    },
    /// Run every stage in order.
    RunAll {
        /// Fuse in memory without writing render and logit artifacts.
        #[arg(long)]
        stream: bool,
    },
    /// Export a synthetic recipe as a KITTI-style sequence plus mesh.
    Synth {
        #[arg(long, default_value = "small")]
        recipe: String,
        #[arg(long)]
        root: PathBuf,
    },
    /// Print the resolved configuration as JSON.
    PrintConfig,
}

#[derive(Args)]
struct Overrides {
    /// JSON pipeline configuration; flags below take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Synthetic recipe name or JSON file as input.
    #[arg(long, global = true)]
    recipe: Option<String>,
    /// KITTI-style root holding `velodyne/`, `poses.txt` and optionally `labels/`.
    #[arg(long, global = true)]
    kitti: Option<PathBuf>,
    #[arg(long, global = true)]
    mesh_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    mapping: Option<String>,
    #[arg(long, global = true)]
    protocol: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    crop_z_min: Option<f64>,
    #[arg(long, global = true)]
    densify_k: Option<usize>,
    #[arg(long, global = true)]
    group_size: Option<usize>,
    #[arg(long, global = true)]
    vgo_preset: Option<String>,
    #[arg(long, global = true)]
    poses_per_family: Option<usize>,
    #[arg(long, global = true, value_parser = parse_resolution)]
    resolution: Option<Resolution>,
    #[arg(long, global = true)]
    channels: Option<String>,
    #[arg(long, global = true, overrides_with = "no_occlusion")]
    occlusion: bool,
    #[arg(long, global = true, overrides_with = "occlusion")]
    no_occlusion: bool,
    /// Occlusion margin in meters.
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true, num_args = 2, value_names = ["NEAR", "FAR"])]
    depth_range: Option<Vec<f64>>,
    #[arg(long, global = true, value_parser = parse_vote_mode)]
    vote_mode: Option<VoteMode>,
    /// `oracle` or `external`.
    #[arg(long, global = true)]
    segmenter: Option<String>,
    /// External adapter command line, split on whitespace.
    #[arg(long, global = true)]
    adapter: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    flip_prob: Option<f64>,
    #[arg(long, global = true)]
    noise_sigma: Option<f32>,
}

fn parse_resolution(s: &str) -> std::result::Result<Resolution, String> {
    Resolution::parse(s).ok_or_else(|| format!("unknown resolution {s:?} (LD or HD)"))
}

fn parse_vote_mode(s: &str) -> std::result::Result<VoteMode, String> {
    VoteMode::parse(s).ok_or_else(|| format!("unknown vote mode {s:?} (logits or masks)"))
}

fn resolve(o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &o.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.recipe {
        cfg.input = InputConfig::Synthetic { recipe: v.clone() };
    }
    if let Some(root) = &o.kitti {
        cfg.input = InputConfig::Kitti {
            scan_dir: root.join("velodyne"),
            pose_file: root.join("poses.txt"),
            label_dir: Some(root.join("labels")).filter(|p| p.exists()),
            mesh_dir: o.mesh_dir.clone(),
        };
    } else if let (Some(dir), InputConfig::Kitti { mesh_dir, .. }) = (&o.mesh_dir, &mut cfg.input) {
        *mesh_dir = Some(dir.clone());
    }
    if let Some(v) = &o.mapping {
        cfg.mapping = Some(v.clone());
    }
    if let Some(v) = &o.protocol {
        cfg.protocol = Some(v.clone());
    }
    if let Some(v) = o.crop_z_min {
        cfg.crop_z_min = Some(v);
    }
    if let Some(v) = o.densify_k {
        cfg.densify_k = Some(v);
    }
    if let Some(v) = o.group_size {
        cfg.group_size = v;
    }
    if let Some(v) = &o.vgo_preset {
        cfg.vgo.families = VgoConfig::preset(v).map_err(|e| Error::Config(e.to_string()))?.families;
    }
    if let Some(v) = o.poses_per_family {
        cfg.vgo.poses_per_family = v;
    }
    if let Some(v) = o.resolution {
        cfg.vgo.resolution = v;
        cfg.dataset.resolution = v;
    }
    if let Some(v) = &o.channels {
        cfg.channels = v.clone();
    }
    if o.occlusion {
        cfg.fuse.occlusion_enabled = true;
    }
    if o.no_occlusion {
        cfg.fuse.occlusion_enabled = false;
    }
    if let Some(v) = o.delta {
        cfg.fuse.occlusion_margin = v;
    }
    if let Some(v) = &o.depth_range {
        cfg.fuse.depth_range = DepthRange::new(v[0], v[1]);
    }
    if let Some(v) = o.vote_mode {
        cfg.fuse.vote_mode = v;
    }
    match o.segmenter.as_deref() {
        None => {}
        Some("oracle") => {
            if !matches!(cfg.segmenter, SegmenterConfig::Oracle(_)) {
                cfg.segmenter = SegmenterConfig::Oracle(OracleConfig::default());
            }
        }
        Some("external") => {}
        Some(other) => return Err(Error::Config(format!("unknown segmenter {other:?}"))),
    }
    if let Some(cmd) = &o.adapter {
        let command = cmd.split_whitespace().map(String::from).collect();
        let batch_size = match &cfg.segmenter {
            SegmenterConfig::External { batch_size, .. } => *batch_size,
            _ => pc2dseg::segmenter::DEFAULT_BATCH_SIZE,
        };
        cfg.segmenter =
            SegmenterConfig::External { command, batch_size, timeout_secs: pc2dseg::segmenter::DEFAULT_TIMEOUT_SECS };
    } else if o.segmenter.as_deref() == Some("external") && !matches!(cfg.segmenter, SegmenterConfig::External { .. }) {
        return Err(Error::Config("--segmenter external needs --adapter or a configured command".into()));
    }
    match &mut cfg.segmenter {
        SegmenterConfig::Oracle(oracle) => {
            if let Some(v) = o.flip_prob {
                oracle.flip_prob = v;
            }
            if let Some(v) = o.noise_sigma {
                oracle.noise_sigma = v;
            }
        }
        SegmenterConfig::External { batch_size, .. } => {
            if let Some(v) = o.batch_size {
                *batch_size = v;
            }
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.overrides)?;
    if let Some(jobs) = cli.overrides.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no command given; see --help".into()));
    };
    match command {
        Command::Prepare => pipeline::prepare(&cfg).map(drop),
        Command::GenViews => pipeline::gen_views(&cfg).map(drop),
        Command::Render => pipeline::render(&cfg).map(drop),
        Command::GenDataset { n_samples, shard_size, overwrite } => {
            let mut cfg = cfg;
            if let Some(n) = n_samples {
                cfg.dataset.n_samples = n;
            }
            if let Some(s) = shard_size {
                cfg.dataset.shard_size = s;
            }
            let (_, manifest) = pipeline::gen_dataset(&cfg, overwrite)?;
            println!("{} samples, {} redraws", manifest.samples.len(), manifest.total_redraws);
            Ok(())
        }
        Command::Infer => pipeline::infer(&cfg).map(drop),
        Command::Fuse => pipeline::fuse(&cfg).map(drop),
        Command::PseudoLabel => pipeline::pseudo_label(&cfg).map(drop),
        Command::Evaluate { truth: Some(truth), pred: Some(pred) } => {
            let protocol = cfg.class_mapping()?;
            let report = pipeline::evaluate_files(&truth, &pred, &protocol)?;
            print!("{}", report.to_table("eval"));
            Ok(())
        }
        Command::Evaluate { .. } => {
            let (_, report) = pipeline::evaluate(&cfg)?;
            print!("{}", report.to_table(&cfg.channels));
            Ok(())
        }
        Command::RunAll { stream } => {
            let report = pipeline::run_all(&cfg, stream)?;
            print!("{}", report.to_table(&cfg.channels));
            Ok(())
        }
        Command::Synth { recipe, root } => {
            let recipe = SceneRecipe::resolve(&recipe)?;
            let seq = recipe.export_kitti(&root)?;
            let mesh_dir = root.join("meshes");
            std::fs::create_dir_all(&mesh_dir).map_err(|e| Error::Config(format!("{}: {e}", mesh_dir.display())))?;
            write_ply(&mesh_dir.join("scene_000.ply"), &recipe.mesh())?;
            let names: Vec<&str> = recipe.classes.iter().map(String::as_str).collect();
            let mapping_path = root.join("mapping.json");
            std::fs::write(&mapping_path, ClassMapping::identity(&recipe.name, &names).to_json())
                .map_err(|e| Error::Config(format!("{}: {e}", mapping_path.display())))?;
            println!("{} scans written to {}", seq.scans.len(), root.display());
            Ok(())
        }
        Command::PrintConfig => {
            println!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.version {
        println!("pc2dseg {}", env!("CARGO_PKG_VERSION"));
        for (name, schema) in pipeline::schema_versions() {
            println!("  {name}: {schema}");
        }
        return ExitCode::SUCCESS;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
