//! Scores predictions under the shipped DG and UDA class protocols.
//!
//! cargo run --example evaluate_protocols

use pc2dseg::ingest::ClassMapping;
use pc2dseg::metrics::ConfusionMatrix;

fn main() -> pc2dseg::Result<()> {
    for name in ["dg_semantickitti", "uda_semantickitti"] {
        let protocol = ClassMapping::builtin(name)?;
        let c = protocol.class_count() as u16;
        // Every class predicted right three times out of four.
        let mut cm = ConfusionMatrix::for_mapping(&protocol);
        for class in 0..c {
            cm.accumulate(&[class; 4], &[class, class, class, (class + 1) % c])?;
        }
        let report = cm.report(&protocol);
        println!("{name}: {} classes, excluded from mIoU: {:?}", c, protocol.excluded_from_miou);
        print!("{}", report.to_table("example"));
        println!();
    }
    Ok(())
}
