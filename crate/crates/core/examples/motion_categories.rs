//! Classifies objects moving at different speeds into slow, middle and fast
//! by their average IoU over a +-10 frame window.

use featflow::harness::motion::{average_iou, motion_category, TrackAnnotation, DEFAULT_RADIUS};
use featflow::seqnms::BBox;

fn main() {
    for speed in [0.0, 0.005, 0.02, 0.05, 0.2] {
        let track = TrackAnnotation::new(0, (0..30).map(|t| {
            let x = speed * t as f64;
            (t, BBox::new(x, 0.0, x + 1.0, 1.0))
        }));
        let t = 15;
        let avg = average_iou(&track, t, DEFAULT_RADIUS).unwrap();
        let cat = motion_category(&track, t, DEFAULT_RADIUS).unwrap();
        println!("speed {speed:>5} widths/frame: average IoU {avg:.4} -> {cat:?}");
    }
    let lonely = TrackAnnotation::new(1, [(3, BBox::new(0.0, 0.0, 1.0, 1.0))]);
    println!("single-frame track: {:?}", motion_category(&lonely, 3, DEFAULT_RADIUS));
}
