//! Compares single-view pixel accuracy of a noisy segmenter with the
//! accuracy of the labels fused from many views.
//!
//! cargo run --release --example noisy_voting -- [flip_prob]

use pc2dseg::fuse::{fuse_scene, FuseConfig};
use pc2dseg::render::{compose_view, ChannelConfig, RenderOptions};
use pc2dseg::segmenter::{oracle_infer, OracleConfig, OracleSegmenter};
use pc2dseg::synthetic::SceneRecipe;
use pc2dseg::vgo::{generate_views, VgoConfig};

fn main() -> pc2dseg::Result<()> {
    let flip: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let scene = SceneRecipe::small().generate()?;
    let views = generate_views(&scene, &VgoConfig { poses_per_family: 15, seed: 2, ..VgoConfig::default() })?;
    let oracle = OracleConfig { flip_prob: flip, seed: 9, ..Default::default() };
    let channels = ChannelConfig::trimerge();
    let render = RenderOptions::default();

    let (mut hits, mut pixels) = (0usize, 0usize);
    for v in &views {
        let r = compose_view(&scene, v, &channels, &render)?;
        let logits = oracle_infer(&r, 4, &oracle)?;
        let labels = r.label_image.as_ref().unwrap();
        for y in 0..labels.height() {
            for x in 0..labels.width() {
                let l = labels.get(x, y);
                if l != 255 {
                    pixels += 1;
                    hits += (logits.argmax(x, y) == Some(l as u16)) as usize;
                }
            }
        }
    }
    let single = hits as f64 / pixels as f64;
    let out = fuse_scene(&scene, &views, &FuseConfig::default(), &OracleSegmenter::new(4, oracle), &channels, &render)?;
    let voted: Vec<usize> = (0..scene.len()).filter(|&i| out.table.counts[i] > 0).collect();
    let fused = voted.iter().filter(|&&i| out.labels[i] == scene.labels[i]).count() as f64 / voted.len() as f64;
    println!("flip {flip}: single-view accuracy {:.1}%, fused accuracy {:.1}% over {} views", 100.0 * single, 100.0 * fused, views.len());
    Ok(())
}
