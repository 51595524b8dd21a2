//! Rescores a short clip of detections with Seq-NMS+ and with the original
//! ordering, and prints both.

use featflow::seqnms::{seqnms, BBox, Detection, RescoreOp, SeqNmsConfig, SeqNmsVariant};

fn main() {
    let car = BBox::new(10.0, 10.0, 30.0, 25.0);
    let dets = vec![
        Detection::new(0, 0, 0.5, car),
        Detection::new(0, 0, 0.45, car.translate(1.0, 0.5)),
        Detection::new(1, 0, 0.9, car.translate(1.0, 0.0)),
        Detection::new(1, 0, 0.6, BBox::new(60.0, 60.0, 70.0, 70.0)),
        Detection::new(2, 0, 0.3, car.translate(2.0, 0.0)),
        Detection::new(2, 1, 0.8, BBox::new(0.0, 40.0, 8.0, 52.0)),
    ];

    let configs = [
        ("plus", SeqNmsConfig::default()),
        (
            "original/mean",
            SeqNmsConfig { variant: SeqNmsVariant::Original, rescore_op: RescoreOp::Mean, ..SeqNmsConfig::default() },
        ),
        (
            "original/max",
            SeqNmsConfig { variant: SeqNmsVariant::Original, rescore_op: RescoreOp::Max, ..SeqNmsConfig::default() },
        ),
    ];
    for (name, cfg) in configs {
        println!("{name}:");
        for r in seqnms(&dets, &cfg) {
            let d = r.detection;
            println!("  seq {} frame {} class {} score {:.4} box {:?}", r.sequence_id, d.frame, d.class_id, d.score, <[f64; 4]>::from(d.bbox));
        }
    }
    println!("{}", serde_json::to_string(&dets[..1]).unwrap());
}
