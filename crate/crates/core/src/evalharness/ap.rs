//! Average precision at IoU 0.5.

use serde::{Deserialize, Serialize};

use super::detect::{Detection, Region};

pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    Box,
    Mask,
}

/// A detection reduced to what matching needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub category: u8,
    pub confidence: f64,
    /// IoU with each ground-truth instance of the frame.
    pub iou: Vec<f64>,
}

/// One frame's ground-truth categories and scored detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchFrame {
    pub ground_truth: Vec<u8>,
    pub detections: Vec<ScoredDetection>,
}

impl MatchFrame {
    pub fn new(detections: &[Detection], ground_truth: &[Region], mode: IouMode) -> Self {
        Self {
            ground_truth: ground_truth.iter().map(|g| g.category).collect(),
            detections: detections
                .iter()
                .map(|d| ScoredDetection {
                    category: d.region.category,
                    confidence: d.confidence,
                    iou: ground_truth
                        .iter()
                        .map(|g| {
                            if g.category != d.region.category {
                                0.0
                            } else {
                                match mode {
                                    IouMode::Box => d.region.box_iou(g),
                                    IouMode::Mask => d.region.mask_iou(g),
                                }
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// All-point interpolated AP from a ranked list of hit flags.
pub fn average_precision(ranked_hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut prec = Vec::with_capacity(ranked_hits.len());
    let mut rec = Vec::with_capacity(ranked_hits.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked_hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        prec.push(tp as f64 / (i + 1) as f64);
        rec.push(tp as f64 / num_gt as f64);
    }
    // precision envelope from the right
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for i in 0..prec.len() {
        if rec[i] > prev_r {
            ap += (rec[i] - prev_r) * prec[i];
            prev_r = rec[i];
        }
    }
    ap
}

/// AP of one category over a set of frames. Detections are ranked by
/// descending confidence (ties keep frame then detection order) and matched
/// greedily to the unmatched ground truth of highest IoU in their frame.
/// Returns `None` when the category has no ground truth.
pub fn category_ap(frames: &[MatchFrame], category: u8) -> Option<f64> {
    let num_gt: usize = frames.iter().map(|f| f.ground_truth.iter().filter(|&&g| g == category).count()).sum();
    if num_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for (di, d) in f.detections.iter().enumerate() {
            if d.category == category {
                ranked.push((fi, di, d.confidence));
            }
        }
    }
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.ground_truth.len()]).collect();
    let hits: Vec<bool> = ranked
        .iter()
        .map(|&(fi, di, _)| {
            let det = &frames[fi].detections[di];
            let mut best: Option<(f64, usize)> = None;
            for (gi, &g) in frames[fi].ground_truth.iter().enumerate() {
                if g != category || used[fi][gi] {
                    continue;
                }
                let v = det.iou[gi];
                if v >= IOU_THRESHOLD && best.is_none_or(|b| v > b.0) {
                    best = Some((v, gi));
                }
            }
            match best {
                Some((_, gi)) => {
                    used[fi][gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    Some(average_precision(&hits, num_gt))
}

/// Per-category AP (index `c - 1`) and their mean over categories present
/// in the ground truth; 0 when none is present.
pub fn ap50(frames: &[MatchFrame], categories: usize) -> (f64, Vec<Option<f64>>) {
    let per: Vec<Option<f64>> = (1..=categories as u8).map(|c| category_ap(frames, c)).collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (mean, per)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: u32, y: u32, s: u32, w: u32) -> Region {
        let mut pixels = Vec::new();
        for yy in y..y + s {
            for xx in x..x + s {
                pixels.push(yy * w + xx);
            }
        }
        Region {
            category: 1,
            pixels,
            bbox: [x, y, x + s - 1, y + s - 1],
        }
    }

    fn det(r: Region, c: f64) -> Detection {
        Detection { region: r, confidence: c }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let g = square(2, 2, 5, 32);
        for mode in [IouMode::Box, IouMode::Mask] {
            let f = MatchFrame::new(&[det(g.clone(), 1.0)], std::slice::from_ref(&g), mode);
            assert_eq!(ap50(&[f], 6).0, 1.0);
        }
    }

    #[test]
    fn no_predictions_score_zero() {
        let f = MatchFrame::new(&[], &[square(2, 2, 5, 32)], IouMode::Box);
        assert_eq!(ap50(&[f], 6).0, 0.0);
    }

    #[test]
    fn ranking_of_true_positive_matters() {
        // shifted 10x10 prediction overlaps 8x10 of the ground truth:
        // IoU 80/120; the distant one has IoU 0
        let g = [square(0, 0, 10, 64)];
        let good = square(2, 0, 10, 64);
        let bad = square(40, 40, 10, 64);
        let frame = |cg: f64, cb: f64| MatchFrame::new(&[det(good.clone(), cg), det(bad.clone(), cb)], &g, IouMode::Box);
        assert_eq!(category_ap(&[frame(0.9, 0.8)], 1), Some(1.0));
        assert_eq!(category_ap(&[frame(0.8, 0.9)], 1), Some(0.5));
    }
}
