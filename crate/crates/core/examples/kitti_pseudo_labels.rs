//! Writes a synthetic sequence in KITTI layout, reads it back, prepares a
//! scene and exports fused labels as per-scan pseudo-label files.
//!
//! cargo run --release --example kitti_pseudo_labels -- [root]

use std::path::PathBuf;

use pc2dseg::fuse::{export_pseudolabels, fuse_scene, FuseConfig, PseudoLabelOptions};
use pc2dseg::ingest::{assemble_scene, crop_ground, normalize_intensity, read_labels, read_sequence, CROP_Z_SEMANTICKITTI};
use pc2dseg::render::{ChannelConfig, RenderOptions};
use pc2dseg::segmenter::{OracleConfig, OracleSegmenter};
use pc2dseg::synthetic::SceneRecipe;
use pc2dseg::vgo::{generate_views, VgoConfig};

fn main() -> pc2dseg::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "kitti_pseudo_labels".into()));
    let recipe = SceneRecipe::small();
    recipe.export_kitti(&root)?;
    let seq = read_sequence(&root.join("velodyne"), &root.join("poses.txt"), Some(&root.join("labels")))?;
    println!("read {} scans", seq.scans.len());

    let mut scene = assemble_scene(&seq.scans, &seq.poses, 100)?.remove(0);
    scene = normalize_intensity(&scene);
    scene = crop_ground(&scene, CROP_Z_SEMANTICKITTI);
    scene.mesh = Some(recipe.mesh());

    let vgo = VgoConfig { poses_per_family: 10, ..VgoConfig::default() };
    let views = generate_views(&scene, &vgo)?;
    let segmenter = OracleSegmenter::new(4, OracleConfig { flip_prob: 0.2, seed: 1, ..Default::default() });
    let out = fuse_scene(&scene, &views, &FuseConfig::default(), &segmenter, &ChannelConfig::trimerge(), &RenderOptions::default())?;

    let pseudo = root.join("pseudo");
    let opts = PseudoLabelOptions { allow_missing: true, ..Default::default() };
    let files = export_pseudolabels(&scene, &out.labels, &pseudo, &opts)?;
    let mut agree = 0usize;
    let mut total = 0usize;
    for (scan, file) in seq.scans.iter().zip(&files) {
        let words = read_labels(file)?;
        for (w, t) in words.iter().zip(scan.labels.as_ref().unwrap()) {
            total += 1;
            agree += (*w as u16 == *t) as usize;
        }
    }
    println!("{} pseudo-label files; {:.2}% agree with the source labels", files.len(), 100.0 * agree as f64 / total as f64);
    Ok(())
}
