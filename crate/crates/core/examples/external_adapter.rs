//! A segmentation adapter speaking the file-exchange protocol.
//!
//! Built-in model `threshold`: class 1 where the first channel exceeds 0.5,
//! class 0 elsewhere. Use it as the pipeline's external segmenter:
//!
//! pc2dseg run-all --adapter "target/release/examples/external_adapter"
//!
//! `--echo <dir>` instead copies precomputed `<view_id>.logits` files.

use std::path::PathBuf;
use std::process::ExitCode;

use pc2dseg::segmenter::{read_request, write_done, write_logits};
use pc2dseg::tensor::RawTensor;

fn serve(manifest: PathBuf, echo: Option<PathBuf>) -> pc2dseg::Result<()> {
    let request = read_request(&manifest)?;
    let dir = manifest.parent().map(PathBuf::from).unwrap_or_default();
    for view in &request.views {
        let logits = match &echo {
            Some(src) => RawTensor::read(&src.join(&view.output))?,
            None => {
                let input = RawTensor::read(&dir.join(&view.input))?;
                let plane = (view.height * view.width) as usize;
                let mut data = vec![0.0f32; request.class_count * plane];
                for (i, &v) in input.data[..plane].iter().enumerate() {
                    let class = usize::from(v > 0.5).min(request.class_count - 1);
                    data[class * plane + i] = 1.0;
                }
                RawTensor::new(vec![request.class_count as u32, view.height, view.width], data)?
            }
        };
        write_logits(&dir, view, &logits)?;
    }
    write_done(&dir, &request)
}

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let (mut manifest, mut echo) = (None, None);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--manifest" => manifest = args.next().map(PathBuf::from),
            "--echo" => echo = args.next().map(PathBuf::from),
            other => {
                eprintln!("unknown argument {other}");
                return ExitCode::from(2);
            }
        }
    }
    let Some(manifest) = manifest else {
        eprintln!("usage: external_adapter --manifest <request.json> [--echo <dir>]");
        return ExitCode::from(2);
    };
    match serve(manifest, echo) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
