//! Instances from per-pixel scores and from ground truth.

use std::collections::BTreeMap;

use crate::envsim::GroundTruthFrame;
use crate::labelprop::MIN_INSTANCE_PIXELS;
use crate::perception::{PerceptionModel, ScoreImage};

/// Pixel set of one instance with its box `[x0, y0, x1, y1]` (inclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub category: u8,
    /// Sorted row-major pixel indices.
    pub pixels: Vec<u32>,
    pub bbox: [u32; 4],
}

impl Region {
    fn from_pixels(category: u8, mut pixels: Vec<u32>, width: usize) -> Self {
        pixels.sort_unstable();
        let w = width as u32;
        let mut b = [u32::MAX, u32::MAX, 0, 0];
        for &p in &pixels {
            let (x, y) = (p % w, p / w);
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
        }
        Self { category, pixels, bbox: b }
    }

    pub fn box_iou(&self, other: &Region) -> f64 {
        box_iou(self.bbox, other.bbox)
    }

    pub fn mask_iou(&self, other: &Region) -> f64 {
        let (a, b) = (&self.pixels, &other.pixels);
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// IoU of inclusive pixel boxes.
pub fn box_iou(a: [u32; 4], b: [u32; 4]) -> f64 {
    let area = |r: [u32; 4]| ((r[2] - r[0] + 1) as u64 * (r[3] - r[1] + 1) as u64) as f64;
    let ix0 = a[0].max(b[0]);
    let iy0 = a[1].max(b[1]);
    let ix1 = a[2].min(b[2]);
    let iy1 = a[3].min(b[3]);
    let inter = if ix0 > ix1 || iy0 > iy1 {
        0.0
    } else {
        area([ix0, iy0, ix1, iy1])
    };
    inter / (area(a) + area(b) - inter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub region: Region,
    pub confidence: f64,
}

/// Threshold calibrated scores at each category's floor and split the
/// foreground into 4-connected components of at least
/// [`MIN_INSTANCE_PIXELS`]; confidence is the mean score over a component.
pub fn detections_from_scores(scores: &ScoreImage, floor: &[f64]) -> Vec<Detection> {
    let (w, h) = (scores.width, scores.height);
    let n = w * h;
    let entries = scores.palette_len();
    let mut out = Vec::new();
    let mut label = vec![0u32; n];
    let mut stack = Vec::new();
    for c in 0..scores.categories {
        // per palette entry: above the floor?
        let on: Vec<bool> = (0..entries)
            .map(|e| scores.palette()[e * scores.categories + c] as f64 >= floor[c])
            .collect();
        if !on.iter().any(|&b| b) {
            continue;
        }
        label.iter_mut().for_each(|l| *l = 0);
        let idx = scores.index();
        let mut next = 0u32;
        for start in 0..n {
            if label[start] != 0 || !on[idx[start] as usize] {
                continue;
            }
            next += 1;
            label[start] = next;
            stack.push(start);
            let mut pixels = Vec::new();
            let mut sum = 0.0f64;
            while let Some(p) = stack.pop() {
                pixels.push(p as u32);
                sum += scores.score(p, c) as f64;
                let (x, y) = (p % w, p / w);
                let mut visit = |q: usize| {
                    if label[q] == 0 && on[idx[q] as usize] {
                        label[q] = next;
                        stack.push(q);
                    }
                };
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < w {
                    visit(p + 1);
                }
                if y > 0 {
                    visit(p - w);
                }
                if y + 1 < h {
                    visit(p + w);
                }
            }
            if pixels.len() >= MIN_INSTANCE_PIXELS {
                let confidence = sum / pixels.len() as f64;
                out.push(Detection {
                    region: Region::from_pixels(c as u8 + 1, pixels, w),
                    confidence,
                });
            }
        }
    }
    out
}

/// Detections of a model on a raw prediction.
pub fn detect(model: &PerceptionModel, raw: &ScoreImage) -> Vec<Detection> {
    detections_from_scores(&model.calibrate_image(raw), &model.floor)
}

/// Ground-truth instances with at least [`MIN_INSTANCE_PIXELS`] visible
/// pixels.
pub fn ground_truth_regions(gt: &GroundTruthFrame) -> Vec<Region> {
    let mut by_id: BTreeMap<u16, (u8, Vec<u32>)> = BTreeMap::new();
    for (p, (&id, &cat)) in gt.instance.iter().zip(&gt.category).enumerate() {
        if id != 0 && cat != 0 {
            by_id.entry(id).or_insert((cat, Vec::new())).1.push(p as u32);
        }
    }
    by_id
        .into_values()
        .filter(|(_, px)| px.len() >= MIN_INSTANCE_PIXELS)
        .map(|(cat, px)| Region::from_pixels(cat, px, gt.width()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_iou_of_disjoint_and_identical() {
        assert_eq!(box_iou([0, 0, 3, 3], [0, 0, 3, 3]), 1.0);
        assert_eq!(box_iou([0, 0, 1, 1], [2, 2, 3, 3]), 0.0);
        // 2x2 overlap of two 4x4 boxes: 4 / (16 + 16 - 4)
        assert!((box_iou([0, 0, 3, 3], [2, 2, 5, 5]) - 4.0 / 28.0).abs() < 1e-12);
    }

    #[test]
    fn components_split_and_filter() {
        let (w, h) = (20, 6);
        let mut data = vec![0.0f32; w * h * 2];
        // two 3x4 blobs of category 1 and a 2x2 speck of category 2
        for y in 1..5 {
            for x in 1..4 {
                data[(y * w + x) * 2] = 0.8;
            }
            for x in 10..13 {
                data[(y * w + x) * 2] = 0.6;
            }
        }
        for y in 0..2 {
            for x in 17..19 {
                data[(y * w + x) * 2 + 1] = 0.9;
            }
        }
        let s = ScoreImage::from_dense(w, h, 2, &data).unwrap();
        let d = detections_from_scores(&s, &[0.5, 0.5]);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].region.bbox, [1, 1, 3, 4]);
        assert!((d[0].confidence - 0.8).abs() < 1e-6);
        assert_eq!(d[1].region.pixels.len(), 12);
    }
}
