//! Generates the four-family virtual camera set around a trajectory and
//! writes it as a view manifest.
//!
//! cargo run --example generate_views -- [out.json]

use nalgebra::Vector3;
use pc2dseg::camera::{PoseFamily, ViewManifest};
use pc2dseg::synthetic::SceneRecipe;
use pc2dseg::vgo::{generate_views, VgoConfig, DEFAULT_PRESET};

fn main() -> pc2dseg::Result<()> {
    let scene = SceneRecipe::closed_loop().generate()?;
    let vgo = VgoConfig::preset(DEFAULT_PRESET)?;
    let views = generate_views(&scene, &vgo)?;
    println!("preset {}: {} views", vgo.preset_name(), views.len());
    for family in PoseFamily::ALL {
        let fam: Vec<_> = views.iter().filter(|v| v.family == family).collect();
        let mean_height = fam.iter().map(|v| v.position().z).sum::<f64>() / fam.len() as f64;
        let mean_pitch = fam.iter().map(|v| v.forward().dot(&Vector3::z()).asin().to_degrees()).sum::<f64>() / fam.len() as f64;
        println!("{:>7}: {:>3} views, mean height {mean_height:6.2} m, mean pitch {mean_pitch:6.1} deg", family.name(), fam.len());
    }
    if let Some(path) = std::env::args().nth(1) {
        ViewManifest::new("closed_loop", views).write(path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
