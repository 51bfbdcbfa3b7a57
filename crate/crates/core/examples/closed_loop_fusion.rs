//! Fuses oracle segmentations of a synthetic street back onto its points
//! and scores the result.
//!
//! cargo run --release --example closed_loop_fusion -- [poses_per_family]

use pc2dseg::fuse::{fuse_scene, FuseConfig};
use pc2dseg::ingest::ClassMapping;
use pc2dseg::metrics::ConfusionMatrix;
use pc2dseg::render::{ChannelConfig, RenderOptions};
use pc2dseg::segmenter::{OracleConfig, OracleSegmenter};
use pc2dseg::synthetic::{SceneRecipe, SYNTHETIC_CLASSES};
use pc2dseg::vgo::{generate_views, VgoConfig, DEFAULT_PRESET};

fn main() -> pc2dseg::Result<()> {
    let poses: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let scene = SceneRecipe::closed_loop().generate()?;
    let vgo = VgoConfig { poses_per_family: poses, ..VgoConfig::preset(DEFAULT_PRESET)? };
    let views = generate_views(&scene, &vgo)?;
    println!("{} points, {} views", scene.len(), views.len());

    let segmenter = OracleSegmenter::new(SYNTHETIC_CLASSES.len(), OracleConfig::default());
    let start = std::time::Instant::now();
    let out = fuse_scene(
        &scene,
        &views,
        &FuseConfig::default(),
        &segmenter,
        &ChannelConfig::trimerge(),
        &RenderOptions::default(),
    )?;
    println!("fused in {:.2?}; {} points received votes", start.elapsed(), out.voted_points());

    let protocol = ClassMapping::identity("synthetic", &SYNTHETIC_CLASSES);
    let mut cm = ConfusionMatrix::for_mapping(&protocol);
    cm.accumulate(&scene.labels, &out.labels)?;
    print!("{}", cm.report(&protocol).to_table("oracle"));
    Ok(())
}
