//! Emits a small sharded (image, label) dataset from two synthetic scenes.
//!
//! cargo run --release --example pc2d_dataset -- [out_dir] [n_samples]

use std::path::PathBuf;

use pc2dseg::camera::Resolution;
use pc2dseg::pc2d::{emit_dataset, DatasetSpec, FULL_SCALE_SAMPLES};
use pc2dseg::synthetic::SceneRecipe;

fn main() -> pc2dseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "pc2d_dataset".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let mut second = SceneRecipe::closed_loop();
    second.seed += 1;
    let scenes = vec![
        ("street_a".to_string(), SceneRecipe::closed_loop().generate()?),
        ("street_b".to_string(), second.generate()?),
    ];
    let spec = DatasetSpec { shard_size: 8, ..DatasetSpec::new(n, Resolution::Ld, 42) };
    let manifest = emit_dataset(&spec, &scenes, &out, true)?;
    println!(
        "{} samples in {} shards under {} ({} redraws); full-scale training uses {} samples",
        manifest.samples.len(),
        spec.shard_count(),
        out.display(),
        manifest.total_redraws,
        FULL_SCALE_SAMPLES
    );
    Ok(())
}
