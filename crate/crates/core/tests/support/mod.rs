#![allow(dead_code)]

use std::collections::BTreeSet;

use featflow::seqnms::{iou, BBox, Detection, RescoredDetection, SeqNmsConfig, SeqNmsVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Greedy NMS by definition: repeatedly take the highest remaining score
/// (lowest position on ties) and drop everything overlapping it.
pub fn greedy_nms(dets: &[Detection], thr: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut top = 0;
        for k in 1..alive.len() {
            if dets[alive[k]].score > dets[alive[top]].score {
                top = k;
            }
        }
        let winner = alive.remove(top);
        kept.push(winner);
        alive.retain(|&i| iou(&dets[i].bbox, &dets[winner].bbox) < thr);
    }
    kept
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub start: usize,
    pub path: Vec<usize>,
    pub sum: f64,
}

/// Every chain of linked boxes over consecutive frames, of every length.
pub fn all_chains(frames: &[Vec<Detection>], link_iou: f64) -> Vec<Chain> {
    fn extend(frames: &[Vec<Detection>], link: f64, chain: Chain, out: &mut Vec<Chain>) {
        out.push(chain.clone());
        let t = chain.start + chain.path.len();
        if t >= frames.len() {
            return;
        }
        let last = &frames[t - 1][*chain.path.last().unwrap()];
        for (b, d) in frames[t].iter().enumerate() {
            if iou(&last.bbox, &d.bbox) >= link {
                let mut path = chain.path.clone();
                path.push(b);
                extend(frames, link, Chain { start: chain.start, path, sum: chain.sum + d.score }, out);
            }
        }
    }
    let mut out = Vec::new();
    for (t, dets) in frames.iter().enumerate() {
        for (b, d) in dets.iter().enumerate() {
            extend(frames, link_iou, Chain { start: t, path: vec![b], sum: d.score }, &mut out);
        }
    }
    out
}

/// Best chain by exhaustive search: max sum, then earliest start, then
/// lexicographically smallest path.
pub fn brute_best(frames: &[Vec<Detection>], link_iou: f64) -> Option<Chain> {
    all_chains(frames, link_iou).into_iter().min_by(|a, b| {
        b.sum
            .partial_cmp(&a.sum)
            .unwrap()
            .then(a.start.cmp(&b.start))
            .then_with(|| a.path.cmp(&b.path))
    })
}

pub fn plus_score(raw: &[f64]) -> f64 {
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let max = raw.iter().cloned().fold(f64::MIN, f64::max);
    0.5 * mean + 0.5 * max
}

/// Brute-force Seq-NMS+: NMS per frame, then repeatedly take the best chain
/// found by enumeration and remove it. Also returns each sequence's raw scores.
pub fn brute_seqnms_plus(all: &[Detection], cfg: &SeqNmsConfig) -> (Vec<RescoredDetection>, Vec<Vec<f64>>) {
    assert_eq!(cfg.variant, SeqNmsVariant::Plus);
    let classes: BTreeSet<usize> = all.iter().map(|d| d.class_id).collect();
    let mut out = Vec::new();
    let mut raws = Vec::new();
    let mut next_id = 0;
    for class in classes {
        let mine: Vec<Detection> = all.iter().filter(|d| d.class_id == class).copied().collect();
        let n_frames = mine.iter().map(|d| d.frame + 1).max().unwrap_or(0);
        let mut frames: Vec<Vec<Detection>> = (0..n_frames)
            .map(|t| {
                let here: Vec<Detection> = mine.iter().filter(|d| d.frame == t).copied().collect();
                let mut keep = greedy_nms(&here, cfg.nms_iou);
                keep.sort();
                keep.into_iter().map(|k| here[k]).collect()
            })
            .collect();
        while let Some(chain) = brute_best(&frames, cfg.link_iou) {
            let raw: Vec<f64> = chain
                .path
                .iter()
                .enumerate()
                .map(|(k, &b)| frames[chain.start + k][b].score)
                .collect();
            let score = plus_score(&raw);
            for (k, &b) in chain.path.iter().enumerate() {
                let mut d = frames[chain.start + k].remove(b);
                d.score = score;
                out.push(RescoredDetection { detection: d, sequence_id: next_id });
            }
            raws.push(raw);
            next_id += 1;
        }
    }
    (out, raws)
}

/// Random instance with at most `max_frames` frames, `max_boxes` boxes per
/// frame and class, and `max_classes` classes. Boxes jitter around a few
/// anchors so that links and overlaps are common. With `dyadic` scores are
/// multiples of 1/16, so sums are exact and ties actually occur.
pub fn random_instance(seed: u64, max_frames: usize, max_boxes: usize, max_classes: usize, dyadic: bool) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(1..=max_frames);
    let classes = rng.random_range(1..=max_classes);
    let anchors: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)))
        .collect();
    let mut out = Vec::new();
    for t in 0..frames {
        for class in 0..classes {
            for _ in 0..rng.random_range(0..=max_boxes) {
                let (ax, ay) = anchors[rng.random_range(0..anchors.len())];
                let x = ax + rng.random_range(-1.0..1.0) + 0.3 * t as f64;
                let y = ay + rng.random_range(-1.0..1.0);
                let (w, h) = (rng.random_range(2.0..4.0), rng.random_range(2.0..4.0));
                let score = if dyadic {
                    rng.random_range(1..=16) as f64 / 16.0
                } else {
                    rng.random_range(0.01..1.0)
                };
                out.push(Detection::new(t, class, score, BBox::new(x, y, x + w, y + h)));
            }
        }
    }
    out
}

/// Three frames: a stationary track scored 0.5 / 0.9 / 0.5 and an isolated
/// 0.6 box far away in the middle frame.
pub fn toy_track() -> Vec<Detection> {
    let track = BBox::new(0.0, 0.0, 10.0, 10.0);
    vec![
        Detection::new(0, 0, 0.5, track),
        Detection::new(1, 0, 0.9, track.translate(0.5, 0.0)),
        Detection::new(1, 0, 0.6, BBox::new(50.0, 50.0, 60.0, 60.0)),
        Detection::new(2, 0, 0.5, track.translate(1.0, 0.0)),
    ]
}
