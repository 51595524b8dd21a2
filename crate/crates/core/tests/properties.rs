mod support;

use featflow::aggregate::{adaptive_weights, AggregationInput};
use featflow::flow::{bilinear_warp, correlation, CorrConfig};
use featflow::io::{decode_ftz, encode_ftz};
use featflow::seqnms::{best_sequence, iou, nms, seqnms, BBox, Detection, SeqNmsConfig, SeqNmsVariant};
use featflow::trl::{trl_forward, TrlConfig};
use featflow::{FlowMap, Shape, Tensor};
use proptest::prelude::*;

fn tensor(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, c * h * w).prop_map(move |d| Tensor::from_vec(Shape::new(c, h, w), d).unwrap())
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0f64..10.0, 0.0f64..10.0, 0.5f64..5.0, 0.5f64..5.0).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn zero_flow_warp_is_identity(t in tensor(3, 5, 4)) {
        let out = bilinear_warp(&t, &FlowMap::zeros(5, 4)).unwrap();
        prop_assert_eq!(out, t);
    }

    #[test]
    fn integer_flow_copies_or_zero_pads(t in tensor(2, 5, 6), dx in -6i32..6, dy in -6i32..6) {
        let out = bilinear_warp(&t, &FlowMap::constant(5, 6, dx as f64, dy as f64)).unwrap();
        for c in 0..2 {
            for y in 0..5i32 {
                for x in 0..6i32 {
                    let (sy, sx) = (y + dy, x + dx);
                    let want = if (0..5).contains(&sy) && (0..6).contains(&sx) { t.get(c, sy as usize, sx as usize) } else { 0.0 };
                    prop_assert_eq!(out.get(c, y as usize, x as usize), want);
                }
            }
        }
    }

    #[test]
    fn correlation_swap_symmetry(a in tensor(3, 6, 6), b in tensor(3, 6, 6)) {
        let cfg = CorrConfig::new(2, 1).unwrap();
        let ab = correlation(&a, &b, &cfg).unwrap();
        let ba = correlation(&b, &a, &cfg).unwrap();
        for k in 0..cfg.output_channels() {
            let (dx, dy) = cfg.displacement(k);
            let back = cfg.channel_of(-dx, -dy).unwrap();
            for y in 0..6isize {
                for x in 0..6isize {
                    let (qy, qx) = (y + dy, x + dx);
                    if (0..6).contains(&qy) && (0..6).contains(&qx) {
                        let l = ab.get(k, y as usize, x as usize);
                        let r = ba.get(back, qy as usize, qx as usize);
                        prop_assert!((l - r).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn aggregation_weights_sum_to_one(cur in tensor(3, 4, 4), n1 in tensor(3, 4, 4), n2 in tensor(3, 4, 4)) {
        let weights = adaptive_weights(&AggregationInput::new(cur, vec![n1, n2]).unwrap()).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let s: f64 = weights.iter().map(|w| w.get(0, y, x)).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(weights.iter().all(|w| w.get(0, y, x) > 0.0));
            }
        }
    }

    #[test]
    fn trl_is_non_negative(a in tensor(2, 4, 4), b in tensor(2, 4, 4), fx in -2.0f64..2.0, fy in -2.0f64..2.0) {
        let loss = trl_forward(&a, &b, &FlowMap::constant(4, 4, fx, fy), &TrlConfig::default()).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }

    #[test]
    fn ftz_round_trip(t in tensor(2, 3, 5)) {
        let mut buf = Vec::new();
        encode_ftz(&t, &mut buf).unwrap();
        prop_assert_eq!(decode_ftz(&mut &buf[..]).unwrap(), t);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nms_matches_greedy_definition(boxes in prop::collection::vec((bbox(), 0.0f64..1.0), 0..6), thr in 0.1f64..0.9) {
        let dets: Vec<Detection> = boxes.iter().map(|&(b, s)| Detection::new(0, 0, s, b)).collect();
        let kept = nms(&dets, thr);
        prop_assert_eq!(&kept, &support::greedy_nms(&dets, thr));
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                prop_assert!(iou(&dets[a].bbox, &dets[b].bbox) < thr);
            }
        }
    }

    #[test]
    fn best_sequence_matches_enumeration(seed in 0u64..10_000) {
        let dets = support::random_instance(seed, 4, 3, 1, seed % 2 == 0);
        let frames_n = dets.iter().map(|d| d.frame + 1).max().unwrap_or(0);
        let frames: Vec<Vec<Detection>> = (0..frames_n).map(|t| dets.iter().filter(|d| d.frame == t).copied().collect()).collect();
        let dp = best_sequence(&frames, 0.5);
        let bf = support::brute_best(&frames, 0.5);
        prop_assert_eq!(dp.is_some(), bf.is_some());
        if let (Some(dp), Some(bf)) = (dp, bf) {
            prop_assert_eq!(dp.start_frame, bf.start);
            prop_assert_eq!(dp.indices, bf.path);
        }
    }

    #[test]
    fn seqnms_conserves_boxes_and_bounds_scores(seed in 0u64..10_000, original in any::<bool>()) {
        let dets = support::random_instance(seed, 4, 4, 2, false);
        let cfg = SeqNmsConfig {
            variant: if original { SeqNmsVariant::Original } else { SeqNmsVariant::Plus },
            ..SeqNmsConfig::default()
        };
        let out = seqnms(&dets, &cfg);
        prop_assert!(out.len() <= dets.len());
        let lo = dets.iter().map(|d| d.score).fold(f64::INFINITY, f64::min);
        let hi = dets.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
        for r in &out {
            let d = r.detection;
            prop_assert!(dets.iter().any(|i| i.frame == d.frame && i.class_id == d.class_id && i.bbox == d.bbox));
            prop_assert!(d.score >= lo && d.score <= hi);
        }
        // members of a sequence share one score, one class, consecutive frames
        let ids: std::collections::BTreeSet<usize> = out.iter().map(|r| r.sequence_id).collect();
        for id in ids {
            let members: Vec<&Detection> = out.iter().filter(|r| r.sequence_id == id).map(|r| &r.detection).collect();
            prop_assert!(members.iter().all(|m| m.score == members[0].score && m.class_id == members[0].class_id));
            prop_assert!(members.windows(2).all(|w| w[1].frame == w[0].frame + 1));
        }
    }

    #[test]
    fn seqnms_class_relabeling_permutes_output(seed in 0u64..10_000) {
        let dets = support::random_instance(seed, 3, 3, 2, false);
        let swapped: Vec<Detection> = dets.iter().map(|d| Detection { class_id: 1 - d.class_id, ..*d }).collect();
        let cfg = SeqNmsConfig::default();
        let key = |out: Vec<featflow::seqnms::RescoredDetection>, flip: bool| {
            let mut v: Vec<(usize, usize, u64, [u64; 4])> = out
                .iter()
                .map(|r| {
                    let d = r.detection;
                    let b: [f64; 4] = d.bbox.into();
                    (if flip { 1 - d.class_id } else { d.class_id }, d.frame, d.score.to_bits(), b.map(f64::to_bits))
                })
                .collect();
            v.sort();
            v
        };
        prop_assert_eq!(key(seqnms(&dets, &cfg), false), key(seqnms(&swapped, &cfg), true));
    }
}
