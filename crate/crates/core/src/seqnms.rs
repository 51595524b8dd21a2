//! Sequence-level post-processing of per-frame detections.
//!
//! Boxes of one class in consecutive frames are linked when their IoU reaches
//! `link_iou`. The chain with the largest score sum is selected by dynamic
//! programming, its members are rescored with a single sequence score, and
//! they leave the pool; this repeats until the pool is empty.
//!
//! Two orderings are supported:
//!
//! * [`SeqNmsVariant::Plus`]: per-frame NMS runs **first**, and sequences are
//!   rescored with `0.5 * mean + 0.5 * max`.
//! * [`SeqNmsVariant::Original`]: no upfront NMS; after each selection, boxes
//!   in the member frames overlapping a member by `nms_iou` or more are
//!   suppressed. Rescoring uses either the mean or the max.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    #[serde(rename = "class")]
    pub class_id: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl Detection {
    pub fn new(frame: usize, class_id: usize, score: f64, bbox: BBox) -> Self {
        Self {
            frame,
            class_id,
            score,
            bbox,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidInput(format!(
                "detection score {} outside [0, 1]",
                self.score
            )));
        }
        if !self.bbox.is_valid() {
            return Err(Error::InvalidInput(format!("invalid box {:?}", <[f64; 4]>::from(self.bbox))));
        }
        Ok(())
    }
}

/// A detection after sequence rescoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescoredDetection {
    #[serde(flatten)]
    pub detection: Detection,
    pub sequence_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqNmsVariant {
    Original,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescoreOp {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqNmsConfig {
    pub link_iou: f64,
    pub nms_iou: f64,
    pub variant: SeqNmsVariant,
    /// Only consulted by [`SeqNmsVariant::Original`].
    pub rescore_op: RescoreOp,
}

impl Default for SeqNmsConfig {
    fn default() -> Self {
        Self {
            link_iou: 0.5,
            nms_iou: 0.3,
            variant: SeqNmsVariant::Plus,
            rescore_op: RescoreOp::Mean,
        }
    }
}

impl SeqNmsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("link_iou", self.link_iou), ("nms_iou", self.nms_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Greedy NMS over one frame and class. Returns indices into `dets` of the
/// kept boxes, highest score first; equal scores keep list order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&dets[k].bbox, &dets[i].bbox) < iou_thresh) {
            kept.push(i);
        }
    }
    kept
}

/// A chain of linked detections in consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSequence {
    pub start_frame: usize,
    /// Index of each member within its frame's list.
    pub indices: Vec<usize>,
    pub members: Vec<Detection>,
    /// Sum of member scores in frame order; the selection objective.
    pub score_sum: f64,
}

impl BoxSequence {
    pub fn raw_scores(&self) -> Vec<f64> {
        self.members.iter().map(|d| d.score).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Chain {
    sum: f64,
    start: usize,
    path: Vec<usize>,
}

/// Selection order: larger sum, then earlier start, then lexicographically
/// smaller member indices.
fn chain_order(a: &Chain, b: &Chain) -> Ordering {
    b.sum
        .total_cmp(&a.sum)
        .then(a.start.cmp(&b.start))
        .then_with(|| a.path.cmp(&b.path))
}

/// Highest-scoring chain over `frames` (index = frame number), or `None` when
/// every frame is empty.
pub fn best_sequence(frames: &[Vec<Detection>], link_iou: f64) -> Option<BoxSequence> {
    let mut prev: Vec<Chain> = Vec::new();
    let mut best: Option<Chain> = None;
    for (t, dets) in frames.iter().enumerate() {
        let mut cur = Vec::with_capacity(dets.len());
        for (b, det) in dets.iter().enumerate() {
            let mut top = Chain {
                sum: det.score,
                start: t,
                path: vec![b],
            };
            for (pb, pchain) in prev.iter().enumerate() {
                if iou(&frames[t - 1][pb].bbox, &det.bbox) < link_iou {
                    continue;
                }
                let mut path = pchain.path.clone();
                path.push(b);
                let cand = Chain {
                    sum: pchain.sum + det.score,
                    start: pchain.start,
                    path,
                };
                if chain_order(&cand, &top) == Ordering::Less {
                    top = cand;
                }
            }
            if best.as_ref().is_none_or(|bc| chain_order(&top, bc) == Ordering::Less) {
                best = Some(top.clone());
            }
            cur.push(top);
        }
        prev = cur;
    }
    best.map(|c| BoxSequence {
        start_frame: c.start,
        members: c
            .path
            .iter()
            .enumerate()
            .map(|(k, &b)| frames[c.start + k][b])
            .collect(),
        indices: c.path,
        score_sum: c.sum,
    })
}

fn mean_and_max(scores: &[f64]) -> (f64, f64, f64) {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().sum();
    // rounding can push the mean a hair outside [min, max]
    let mean = (sum / scores.len() as f64).clamp(min, max);
    (min, mean, max)
}

/// Sequence score for non-empty `scores`.
pub fn rescore_scores(scores: &[f64], cfg: &SeqNmsConfig) -> f64 {
    let (_, mean, max) = mean_and_max(scores);
    match (cfg.variant, cfg.rescore_op) {
        (SeqNmsVariant::Plus, _) => 0.5 * mean + 0.5 * max,
        (SeqNmsVariant::Original, RescoreOp::Mean) => mean,
        (SeqNmsVariant::Original, RescoreOp::Max) => max,
    }
}

/// Replaces every member's score with the sequence score and returns it.
pub fn rescore(seq: &mut BoxSequence, cfg: &SeqNmsConfig) -> f64 {
    let score = rescore_scores(&seq.raw_scores(), cfg);
    for m in &mut seq.members {
        m.score = score;
    }
    score
}

/// Pool of one class: per frame, `(input index, detection)` in input order.
type Pool = Vec<Vec<(usize, Detection)>>;

fn select(pool: &Pool, link_iou: f64) -> Option<BoxSequence> {
    let frames: Vec<Vec<Detection>> = pool.iter().map(|f| f.iter().map(|(_, d)| *d).collect()).collect();
    best_sequence(&frames, link_iou)
}

/// Runs the full post-processor. Output is grouped by sequence (ascending
/// `sequence_id`, classes in ascending order), members in frame order.
pub fn seqnms(all: &[Detection], cfg: &SeqNmsConfig) -> Vec<RescoredDetection> {
    let mut by_class: BTreeMap<usize, Vec<(usize, Detection)>> = BTreeMap::new();
    for (i, d) in all.iter().enumerate() {
        by_class.entry(d.class_id).or_default().push((i, *d));
    }
    let mut out = Vec::new();
    let mut next_id = 0;
    for dets in by_class.values() {
        let frames = dets.iter().map(|(_, d)| d.frame).max().map_or(0, |m| m + 1);
        let mut pool: Pool = vec![Vec::new(); frames];
        for &(i, d) in dets {
            pool[d.frame].push((i, d));
        }
        if cfg.variant == SeqNmsVariant::Plus {
            for frame in pool.iter_mut() {
                let plain: Vec<Detection> = frame.iter().map(|(_, d)| *d).collect();
                let mut keep = nms(&plain, cfg.nms_iou);
                keep.sort_unstable();
                *frame = keep.into_iter().map(|k| frame[k]).collect();
            }
        }
        while let Some(mut seq) = select(&pool, cfg.link_iou) {
            rescore(&mut seq, cfg);
            for (k, (&idx, member)) in seq.indices.iter().zip(&seq.members).enumerate() {
                let frame = &mut pool[seq.start_frame + k];
                let (_, original) = frame.remove(idx);
                if cfg.variant == SeqNmsVariant::Original {
                    frame.retain(|(_, d)| iou(&d.bbox, &original.bbox) < cfg.nms_iou);
                }
                // indices of later members refer to other frames, so removal here is safe
                out.push(RescoredDetection {
                    detection: *member,
                    sequence_id: next_id,
                });
            }
            next_id += 1;
        }
    }
    out
}
