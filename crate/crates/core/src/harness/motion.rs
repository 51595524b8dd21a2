//! Slow / middle / fast motion classes from the average ground-truth IoU of
//! an object with itself over a temporal window.

use std::collections::BTreeMap;

use crate::seqnms::{iou, BBox};

/// Default half-width of the temporal window, in frames.
pub const DEFAULT_RADIUS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackAnnotation {
    pub object_id: usize,
    /// Ground-truth box per frame index.
    pub boxes: BTreeMap<usize, BBox>,
}

impl TrackAnnotation {
    pub fn new(object_id: usize, boxes: impl IntoIterator<Item = (usize, BBox)>) -> Self {
        Self {
            object_id,
            boxes: boxes.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionCategory {
    Slow,
    Middle,
    Fast,
}

/// `> 0.9` slow, `[0.7, 0.9]` middle, `< 0.7` fast.
pub fn category_for_iou(avg_iou: f64) -> MotionCategory {
    if avg_iou > 0.9 {
        MotionCategory::Slow
    } else if avg_iou >= 0.7 {
        MotionCategory::Middle
    } else {
        MotionCategory::Fast
    }
}

/// Mean IoU between the box at `t` and the boxes at the other annotated
/// frames in `[t - radius, t + radius]`. `None` if there is no box at `t` or
/// no other box in the window.
pub fn average_iou(track: &TrackAnnotation, t: usize, radius: usize) -> Option<f64> {
    let centre = track.boxes.get(&t)?;
    let window = t.saturating_sub(radius)..=t.saturating_add(radius);
    let ious: Vec<f64> = track
        .boxes
        .range(window)
        .filter(|(&f, _)| f != t)
        .map(|(_, b)| iou(centre, b))
        .collect();
    if ious.is_empty() {
        return None;
    }
    Some(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Motion class of the object at frame `t`; `None` when undefined.
pub fn motion_category(track: &TrackAnnotation, t: usize, radius: usize) -> Option<MotionCategory> {
    average_iou(track, t, radius).map(category_for_iou)
}
