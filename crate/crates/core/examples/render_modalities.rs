//! Renders one car view of a synthetic scene with each registered channel
//! configuration and writes the PNGs plus point and mesh label images.
//!
//! cargo run --release --example render_modalities -- [out_dir]

use std::path::PathBuf;

use pc2dseg::camera::PoseFamily;
use pc2dseg::render::{compose_view, write_label_png, write_view_png, ChannelConfig, RenderOptions};
use pc2dseg::synthetic::SceneRecipe;
use pc2dseg::vgo::{generate_views, VgoConfig};

fn main() -> pc2dseg::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_modalities".into()));
    std::fs::create_dir_all(&out).map_err(|e| pc2dseg::Error::Invalid(e.to_string()))?;
    let scene = SceneRecipe::closed_loop().generate()?;
    let vgo = VgoConfig { families: vec![PoseFamily::Car], poses_per_family: 1, seed: 1, ..VgoConfig::default() };
    let view = generate_views(&scene, &vgo)?.remove(0);
    for mut cfg in ChannelConfig::registry() {
        let r = compose_view(&scene, &view, &cfg, &RenderOptions::default())?;
        let names: Vec<_> = r.channel_sources.iter().map(|c| c.name()).collect();
        let path = out.join(format!("{}.png", cfg.name));
        write_view_png(&path, &r)?;
        println!("{:<22} {:?} -> {}", cfg.name, names, path.display());
        cfg.name = format!("{}_mfl", cfg.name);
        cfg.label_source = pc2dseg::render::LabelSource::Mfl;
        if let Ok(m) = compose_view(&scene, &view, &cfg, &RenderOptions::default()) {
            write_label_png(&out.join(format!("{}_labels.png", cfg.name)), m.label_image.as_ref().unwrap())?;
        }
        write_label_png(&out.join("pfl_labels.png"), r.label_image.as_ref().unwrap())?;
    }
    Ok(())
}
