use std::time::{Duration, Instant};

use nalgebra::{Point3, Vector3};

use pc2dseg::camera::{look_at, CameraView, Intrinsics, PoseFamily};
use pc2dseg::fuse::{fuse_scene, FuseConfig};
use pc2dseg::render::{compose_view, ChannelConfig, RenderOptions, RenderedView};
use pc2dseg::segmenter::{ExternalSegmenter, OracleConfig, OracleSegmenter, Segmenter};
use pc2dseg::synthetic::{SceneRecipe, SYNTHETIC_CLASSES};
use pc2dseg::vgo::{generate_views, VgoConfig};
use pc2dseg::Error;

/// Adapter that copies every input tensor to its output path.
const ECHO: &str = r#"dir=$(dirname "$2"); for f in "$dir"/*.tensor; do cp "$f" "${f%.tensor}.logits"; done; echo '{"status":"ok"}' > "$dir/done.json""#;

fn sh(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into(), "adapter".into()]
}

fn view(id: u32, width: u32, height: u32) -> CameraView {
    let eye = Point3::new(-6.0, -1.0, 1.7);
    CameraView {
        view_id: id,
        family: PoseFamily::Car,
        pose: look_at(&eye, &(eye + Vector3::new(1.0, 0.1 * id as f64, 0.0)), &Vector3::z()).unwrap(),
        intrinsics: Intrinsics::from_hfov(width, height, 90.0).unwrap(),
    }
}

fn rendered(views: &[CameraView], channels: &ChannelConfig) -> Vec<RenderedView> {
    let scene = SceneRecipe::small().generate().unwrap();
    views.iter().map(|v| compose_view(&scene, v, channels, &RenderOptions::default()).unwrap()).collect()
}

#[test]
fn echo_adapter_returns_inputs_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let views: Vec<CameraView> = (0..5).map(|i| view(i, 64, 32)).collect();
    let inputs = rendered(&views, &ChannelConfig::points_only());
    let seg = ExternalSegmenter::new(sh(ECHO), tmp.path(), 2).with_batch_size(2);
    let out = seg.infer_batch(&inputs).unwrap();
    assert_eq!(seg.invocations(), 3);
    for (r, l) in inputs.iter().zip(&out) {
        assert_eq!(l.view_id, r.view_id);
        let want: Vec<u32> = r.to_tensor().data.iter().map(|x| x.to_bits()).collect();
        let got: Vec<u32> = l.data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn wrong_logit_shape_names_the_view() {
    let tmp = tempfile::tempdir().unwrap();
    let views = [view(0, 64, 32), view(7, 32, 16)];
    let inputs = rendered(&views, &ChannelConfig::points_only());
    let script = r#"dir=$(dirname "$2"); cp "$dir/0.tensor" "$dir/0.logits"; cp "$dir/0.tensor" "$dir/7.logits"; echo ok > "$dir/done.json""#;
    let err = ExternalSegmenter::new(sh(script), tmp.path(), 2).run(&inputs).unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
    assert!(err.to_string().contains("view 7"), "{err}");
}

#[test]
fn eight_hundred_views_take_twenty_five_batches_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let views: Vec<CameraView> = (0..800).rev().map(|i| view(i, 4, 2)).collect();
    let inputs = rendered(&views, &ChannelConfig::points_only());
    let seg = ExternalSegmenter::new(sh(ECHO), tmp.path(), 2);
    assert_eq!(seg.preferred_batch(), 32);
    let out = seg.run(&inputs).unwrap();
    assert_eq!(seg.invocations(), 25);
    let ids: Vec<u32> = out.iter().map(|l| l.view_id).collect();
    assert_eq!(ids, (0..800).rev().collect::<Vec<_>>());
}

#[test]
fn nonzero_exit_reports_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = rendered(&[view(0, 8, 4)], &ChannelConfig::points_only());
    let err = ExternalSegmenter::new(sh("echo model weights missing >&2; exit 3"), tmp.path(), 2).run(&inputs).unwrap_err();
    assert!(matches!(err, Error::Adapter(_)));
    assert!(err.to_string().contains("model weights missing"), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn missing_done_file_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = rendered(&[view(0, 8, 4)], &ChannelConfig::points_only());
    let script = r#"dir=$(dirname "$2"); cp "$dir/0.tensor" "$dir/0.logits""#;
    let err = ExternalSegmenter::new(sh(script), tmp.path(), 2).run(&inputs).unwrap_err();
    assert!(err.to_string().contains("done.json"), "{err}");
}

#[test]
fn missing_logits_name_the_view() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = rendered(&[view(3, 8, 4)], &ChannelConfig::points_only());
    let script = r#"echo ok > "$(dirname "$2")/done.json""#;
    let err = ExternalSegmenter::new(sh(script), tmp.path(), 2).run(&inputs).unwrap_err();
    assert!(err.to_string().contains("view 3"), "{err}");
}

#[test]
fn slow_adapter_times_out() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = rendered(&[view(0, 8, 4)], &ChannelConfig::points_only());
    let seg = ExternalSegmenter::new(sh("sleep 10"), tmp.path(), 2).with_timeout(Duration::from_millis(300));
    let start = Instant::now();
    let err = seg.run(&inputs).unwrap_err();
    assert!(err.to_string().contains("timed out"), "{err}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn request_describes_the_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = rendered(&[view(4, 16, 8), view(9, 16, 8)], &ChannelConfig::trimerge());
    let script = r#"cp "$2" "$(dirname "$2")/../request.copy.json"; exit 1"#;
    let _ = ExternalSegmenter::new(sh(script), tmp.path(), 4).run(&inputs);
    let req = pc2dseg::segmenter::read_request(&tmp.path().join("request.copy.json")).unwrap();
    assert_eq!(req.class_count, 4);
    assert_eq!(req.channel_config, "trimerge");
    assert_eq!(req.channels, ChannelConfig::trimerge().channels);
    let ids: Vec<u32> = req.views.iter().map(|v| v.view_id).collect();
    assert_eq!(ids, vec![4, 9]);
    assert_eq!((req.views[0].height, req.views[0].width), (8, 16));
    assert_eq!(req.views[1].input, "9.tensor");
    assert_eq!(req.views[1].output, "9.logits");
}

#[test]
fn adapter_fusion_matches_in_process_fusion() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = SceneRecipe::small().generate().unwrap();
    let views = generate_views(&scene, &VgoConfig { poses_per_family: 2, ..VgoConfig::default() }).unwrap();
    let channels = ChannelConfig::points_only();
    let render = RenderOptions::default();
    let cfg = FuseConfig::default();
    let external = ExternalSegmenter::new(sh(ECHO), tmp.path(), 2).with_batch_size(3);
    let a = fuse_scene(&scene, &views, &cfg, &external, &channels, &render).unwrap();

    struct Echo;
    impl Segmenter for Echo {
        fn class_count(&self) -> usize {
            2
        }
        fn infer_batch(&self, views: &[RenderedView]) -> pc2dseg::Result<Vec<pc2dseg::segmenter::LogitTensor>> {
            views
                .iter()
                .map(|v| pc2dseg::segmenter::LogitTensor::from_tensor(v.view_id, v.to_tensor(), 2, v.height(), v.width()))
                .collect()
        }
    }
    let b = fuse_scene(&scene, &views, &cfg, &Echo, &channels, &render).unwrap();
    assert_eq!(a, b);
    assert!(a.voted_points() > 0);

    let oracle = OracleSegmenter::new(SYNTHETIC_CLASSES.len(), OracleConfig::default());
    assert_eq!(oracle.class_count(), 4);
}
