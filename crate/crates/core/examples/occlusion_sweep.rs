//! Counts the votes that reach points hidden behind a wall as the occlusion
//! margin grows, against the analytic ray-visibility oracle.
//!
//! cargo run --release --example occlusion_sweep

use nalgebra::{Point3, Vector3};
use pc2dseg::camera::{look_at, CameraView, Intrinsics, PoseFamily};
use pc2dseg::fuse::{fuse_scene, FuseConfig};
use pc2dseg::render::{ChannelConfig, RenderOptions};
use pc2dseg::segmenter::{OracleConfig, OracleSegmenter};
use pc2dseg::synthetic::{classify_visibility, SceneRecipe};

fn main() -> pc2dseg::Result<()> {
    let recipe = SceneRecipe::wall_fixture();
    let scene = recipe.generate()?;
    let quads = recipe.quads();
    let intrinsics = Intrinsics::from_hfov(1024, 512, 90.0)?;
    let views: Vec<CameraView> = (0..4)
        .map(|i| {
            let eye = Point3::new(0.0, -3.0 + 2.0 * i as f64, 2.0);
            let pose = look_at(&eye, &(eye + Vector3::x()), &Vector3::z())?;
            Ok(CameraView { view_id: i, family: PoseFamily::Car, pose, intrinsics })
        })
        .collect::<pc2dseg::Result<_>>()?;
    let segmenter = OracleSegmenter::new(4, OracleConfig::default());
    println!("{:>10} {:>14} {:>14}", "margin", "hidden votes", "total votes");
    for (label, occlusion, delta) in
        [("0", true, 0.0), ("0.5", true, 0.5), ("5", true, 5.0), ("off", false, 0.0)]
    {
        let mut hidden_votes = 0u64;
        let mut total = 0u64;
        for view in &views {
            let cfg = FuseConfig { occlusion_enabled: occlusion, occlusion_margin: delta, ..FuseConfig::default() };
            let out = fuse_scene(&scene, std::slice::from_ref(view), &cfg, &segmenter, &ChannelConfig::trimerge(), &RenderOptions::default())?;
            for (p, &c) in scene.points.iter().zip(&out.table.counts) {
                total += c as u64;
                if classify_visibility(&quads, &view.position(), p, 0.1) == Some(true) {
                    hidden_votes += c as u64;
                }
            }
        }
        println!("{label:>10} {hidden_votes:>14} {total:>14}");
    }
    Ok(())
}
