//! Noisy per-pixel semantic scores and the trainable recalibration model.
//!
//! Raw scores come from a seeded corruption of ground truth: each visible
//! instance is either missed, seen confidently or seen with a low score,
//! decided once per (instance, pose bin). Background pixels carry a
//! scene-dependent clutter level and occasional false-positive blobs. The
//! model maps raw scores through a per-category logistic link.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{GroundTruthFrame, NUM_CATEGORIES};
use crate::error::{Result, SealError};
use crate::geometry::Pose;
use crate::seeding::{rng_for, tags};

/// Per-pixel category scores, stored as a palette of score vectors plus a
/// per-pixel palette index. Frames contain few distinct score vectors so
/// this keeps recorded episodes small.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreImage {
    pub width: usize,
    pub height: usize,
    pub categories: usize,
    palette: Vec<f32>,
    index: Vec<u32>,
}

impl ScoreImage {
    pub fn zeros(width: usize, height: usize, categories: usize) -> Self {
        Self {
            width,
            height,
            categories,
            palette: vec![0.0; categories],
            index: vec![0; width * height],
        }
    }

    /// Build from a dense pixel-major buffer of `width * height * categories`.
    pub fn from_dense(width: usize, height: usize, categories: usize, data: &[f32]) -> Result<Self> {
        if data.len() != width * height * categories {
            return Err(SealError::DimensionMismatch {
                expected: (height, width * categories),
                found: (data.len() / (width * categories).max(1), width * categories),
            });
        }
        let mut lookup: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut palette = Vec::new();
        let mut index = Vec::with_capacity(width * height);
        for px in data.chunks(categories.max(1)) {
            let key: Vec<u32> = px.iter().map(|v| v.to_bits()).collect();
            let next = lookup.len() as u32;
            let id = *lookup.entry(key).or_insert_with(|| {
                palette.extend_from_slice(px);
                next
            });
            index.push(id);
        }
        if categories == 0 {
            index = vec![0; width * height];
        }
        Ok(Self {
            width,
            height,
            categories,
            palette,
            index,
        })
    }

    pub fn from_parts(width: usize, height: usize, categories: usize, palette: Vec<f32>, index: Vec<u32>) -> Result<Self> {
        let n = palette.len() / categories.max(1);
        if index.len() != width * height || palette.len() % categories.max(1) != 0 || index.iter().any(|&i| i as usize >= n) {
            return Err(SealError::InvalidArgument("inconsistent score palette".into()));
        }
        Ok(Self {
            width,
            height,
            categories,
            palette,
            index,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, p: usize) -> &[f32] {
        let i = self.index[p] as usize * self.categories;
        &self.palette[i..i + self.categories]
    }

    pub fn score(&self, p: usize, c: usize) -> f32 {
        self.palette[self.index[p] as usize * self.categories + c]
    }

    pub fn palette(&self) -> &[f32] {
        &self.palette
    }

    pub fn palette_len(&self) -> usize {
        self.palette.len() / self.categories.max(1)
    }

    pub fn index(&self) -> &[u32] {
        &self.index
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.pixels() * self.categories);
        for p in 0..self.pixels() {
            out.extend_from_slice(self.pixel(p));
        }
        out
    }

    /// Apply `f` to every palette entry (and thus every pixel).
    pub fn map_entries(&self, mut f: impl FnMut(&[f32], &mut [f32])) -> ScoreImage {
        let mut palette = vec![0.0; self.palette.len()];
        for (src, dst) in self.palette.chunks(self.categories.max(1)).zip(palette.chunks_mut(self.categories.max(1))) {
            f(src, dst);
        }
        ScoreImage {
            palette,
            ..self.clone()
        }
    }
}

/// Seeded corruption model for raw scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    /// Per-category probability that a visible instance is missed.
    pub miss_rate: Vec<f64>,
    /// Probability of a false-positive blob per pose bin.
    pub false_positive_rate: f64,
    /// Relative weights for the category of a false-positive blob.
    pub confusion_weights: Vec<f64>,
    pub area_gain: f64,
    pub confidence_cap: f64,
    /// Scale confident-view probability by `1 - distance / depth_max`.
    pub distance_falloff: bool,
    pub confident_range: [f64; 2],
    pub unconfident_range: [f64; 2],
    /// Upper bound of the per-scene, per-category background score.
    pub clutter_max: f64,
    /// Blob side length as a fraction of the image side.
    pub blob_fraction: [f64; 2],
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            miss_rate: vec![0.3; NUM_CATEGORIES],
            false_positive_rate: 0.1,
            confusion_weights: vec![1.0; NUM_CATEGORIES],
            area_gain: 2.5,
            confidence_cap: 0.9,
            distance_falloff: true,
            confident_range: [0.9, 1.0],
            unconfident_range: [0.2, 0.9],
            clutter_max: 0.05,
            blob_fraction: [0.04, 0.10],
            seed: 0,
        }
    }
}

impl NoiseProfile {
    /// Noise-free profile: every visible instance scores 1.0, background 0.
    pub fn perfect() -> Self {
        Self {
            miss_rate: vec![0.0; NUM_CATEGORIES],
            false_positive_rate: 0.0,
            area_gain: f64::INFINITY,
            confidence_cap: 1.0,
            distance_falloff: false,
            confident_range: [1.0, 1.0],
            clutter_max: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.miss_rate.len() != NUM_CATEGORIES || !self.miss_rate.iter().all(|&m| unit(m)) {
            return Err(SealError::Config("miss_rate needs one value in [0,1] per category".into()));
        }
        if !unit(self.false_positive_rate) || !unit(self.confidence_cap) || !unit(self.clutter_max) {
            return Err(SealError::Config("noise rates must lie in [0,1]".into()));
        }
        if self.confusion_weights.len() != NUM_CATEGORIES
            || self.confusion_weights.iter().any(|w| !(*w >= 0.0))
            || self.confusion_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(SealError::Config("confusion_weights must be nonnegative with positive sum".into()));
        }
        for r in [self.confident_range, self.unconfident_range] {
            if !(unit(r[0]) && unit(r[1]) && r[0] <= r[1]) {
                return Err(SealError::Config("score ranges must be ordered within [0,1]".into()));
            }
        }
        if !(self.area_gain >= 0.0) || !(0.0 < self.blob_fraction[0] && self.blob_fraction[0] <= self.blob_fraction[1] && self.blob_fraction[1] <= 1.0) {
            return Err(SealError::Config("bad area_gain or blob_fraction".into()));
        }
        Ok(())
    }

    /// Probability that a view of an instance is confident.
    pub fn p_conf(&self, area_fraction: f64, distance: f64, depth_max: f64) -> f64 {
        let a = if area_fraction <= 0.0 {
            0.0
        } else {
            (area_fraction * self.area_gain).clamp(0.0, self.confidence_cap)
        };
        if self.distance_falloff {
            a * (1.0 - distance / depth_max).clamp(0.0, 1.0)
        } else {
            a
        }
    }

    /// Per-category background score for a scene.
    pub fn scene_clutter(&self, scene_seed: u64) -> Vec<f64> {
        if self.clutter_max <= 0.0 {
            return vec![0.0; NUM_CATEGORIES];
        }
        let mut rng = rng_for(&[self.seed, scene_seed, tags::CLUTTER]);
        (0..NUM_CATEGORIES).map(|_| rng.gen::<f64>() * self.clutter_max).collect()
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Identifies a view for keyed noise draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewKey {
    pub scene_seed: u64,
    pub pose: Pose,
}

impl ViewKey {
    /// Pose discretized to 0.25 m and 30 degrees.
    pub fn pose_bin(&self) -> [u64; 3] {
        let bx = (self.pose.x / 0.25).floor() as i64;
        let by = (self.pose.y / 0.25).floor() as i64;
        let bt = ((self.pose.theta / 30.0).round() as i64).rem_euclid(12);
        [bx as u64, by as u64, bt as u64]
    }
}

/// Outcome of the keyed draw for one visible instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InstanceDraw {
    Missed,
    Seen { score: f64, confident: bool },
}

pub fn draw_instance(
    noise: &NoiseProfile,
    view: &ViewKey,
    instance: u16,
    category: u8,
    area_fraction: f64,
    mean_depth: f64,
    depth_max: f64,
) -> InstanceDraw {
    let [bx, by, bt] = view.pose_bin();
    let mut rng = rng_for(&[noise.seed, view.scene_seed, instance as u64, bx, by, bt, tags::INSTANCE]);
    let u_miss: f64 = rng.gen();
    let u_conf: f64 = rng.gen();
    if u_miss < noise.miss_rate[category as usize - 1] {
        return InstanceDraw::Missed;
    }
    let confident = u_conf < noise.p_conf(area_fraction, mean_depth, depth_max);
    let score = uniform(&mut rng, if confident { noise.confident_range } else { noise.unconfident_range });
    InstanceDraw::Seen { score, confident }
}

/// Raw (uncalibrated) scores for a rendered frame.
pub fn predict_raw(gt: &GroundTruthFrame, noise: &NoiseProfile, view: &ViewKey, depth_max: f64) -> ScoreImage {
    let (w, h) = (gt.width(), gt.height());
    let n = w * h;
    let clutter = noise.scene_clutter(view.scene_seed);
    // instance -> (category, pixel count, depth sum)
    let mut stats: BTreeMap<u16, (u8, usize, f64)> = BTreeMap::new();
    for p in 0..n {
        let id = gt.instance[p];
        if id != 0 {
            let e = stats.entry(id).or_insert((gt.category[p], 0, 0.0));
            e.1 += 1;
            e.2 += gt.depth.data[p] as f64;
        }
    }
    let mut palette: Vec<f32> = clutter.iter().map(|&k| k as f32).collect();
    let mut entry_of: HashMap<u16, u32> = HashMap::new();
    for (&id, &(cat, count, dsum)) in &stats {
        let draw = draw_instance(noise, view, id, cat, count as f64 / n as f64, dsum / count as f64, depth_max);
        if let InstanceDraw::Seen { score, .. } = draw {
            let e = (palette.len() / NUM_CATEGORIES) as u32;
            let mut v = vec![0.0f32; NUM_CATEGORIES];
            v[cat as usize - 1] = score as f32;
            palette.extend_from_slice(&v);
            entry_of.insert(id, e);
        }
    }
    let mut index: Vec<u32> = gt.instance.iter().map(|id| entry_of.get(id).copied().unwrap_or(0)).collect();

    let [bx, by, bt] = view.pose_bin();
    let mut rng = rng_for(&[noise.seed, view.scene_seed, bx, by, bt, tags::FALSE_POSITIVE]);
    let u: f64 = rng.gen();
    if u < noise.false_positive_rate {
        let bw = ((uniform(&mut rng, noise.blob_fraction) * w as f64).round() as usize).clamp(1, w);
        let bh = ((uniform(&mut rng, noise.blob_fraction) * h as f64).round() as usize).clamp(1, h);
        let x0 = rng.gen_range(0..=w - bw);
        let y0 = rng.gen_range(0..=h - bh);
        let total: f64 = noise.confusion_weights.iter().sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut cat = NUM_CATEGORIES - 1;
        for (c, wgt) in noise.confusion_weights.iter().enumerate() {
            if pick < *wgt {
                cat = c;
                break;
            }
            pick -= wgt;
        }
        let score = uniform(&mut rng, noise.unconfident_range) as f32;
        let e = (palette.len() / NUM_CATEGORIES) as u32;
        let mut v: Vec<f32> = clutter.iter().map(|&k| k as f32).collect();
        v[cat] = v[cat].max(score);
        palette.extend_from_slice(&v);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                let p = y * w + x;
                if gt.instance[p] == 0 {
                    index[p] = e;
                }
            }
        }
    }
    ScoreImage {
        width: w,
        height: h,
        categories: NUM_CATEGORIES,
        palette,
        index,
    }
}

/// Calibrated scores: raw prediction passed through the model.
pub fn predict(gt: &GroundTruthFrame, model: &PerceptionModel, noise: &NoiseProfile, view: &ViewKey, depth_max: f64) -> ScoreImage {
    model.calibrate_image(&predict_raw(gt, noise, view, depth_max))
}

/// Score 1.0 on the ground-truth category of every labeled pixel.
pub fn annotate_ground_truth(gt: &GroundTruthFrame) -> ScoreImage {
    let mut palette = vec![0.0f32; NUM_CATEGORIES * (NUM_CATEGORIES + 1)];
    for c in 1..=NUM_CATEGORIES {
        palette[c * NUM_CATEGORIES + c - 1] = 1.0;
    }
    ScoreImage {
        width: gt.width(),
        height: gt.height(),
        categories: NUM_CATEGORIES,
        palette,
        index: gt.category.iter().map(|&c| c as u32).collect(),
    }
}

fn logit(s: f64) -> f64 {
    (s / (1.0 - s)).ln()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub const MIN_GAIN: f64 = 1e-3;

/// Per-category logistic recalibration `sigmoid(a * logit(s) + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionModel {
    pub version: u32,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Detection floor per category on calibrated scores.
    pub floor: Vec<f64>,
}

impl Default for PerceptionModel {
    fn default() -> Self {
        Self::identity(0.5)
    }
}

impl PerceptionModel {
    pub fn identity(floor: f64) -> Self {
        Self {
            version: 0,
            a: vec![1.0; NUM_CATEGORIES],
            b: vec![0.0; NUM_CATEGORIES],
            floor: vec![floor; NUM_CATEGORIES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = NUM_CATEGORIES;
        if self.a.len() != n || self.b.len() != n || self.floor.len() != n {
            return Err(SealError::Format(format!("model needs {n} values per field")));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) || self.a.iter().any(|&a| a <= 0.0) {
            return Err(SealError::Format("model gains must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn calibrate(&self, c: usize, s: f32) -> f32 {
        let (a, b) = (self.a[c], self.b[c]);
        if a == 1.0 && b == 0.0 {
            return s;
        }
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        sigmoid(a * logit(s as f64) + b) as f32
    }

    pub fn calibrate_image(&self, raw: &ScoreImage) -> ScoreImage {
        raw.map_entries(|src, dst| {
            for c in 0..src.len() {
                dst[c] = self.calibrate(c, src[c]);
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: PerceptionModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// Sufficient statistics of one labeled frame: for each category, the
/// distinct raw scores with their positive and negative pixel counts.
/// Raw scores of exactly 0 or 1 are fixed points of the calibration and do
/// not enter the objective.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingFrame {
    pub stats: Vec<Vec<ScoreStat>>,
    /// Pixels labeled with each category, including those with unusable raw
    /// scores.
    pub labeled_pixels: Vec<u64>,
}

/// Label value for pixels that carry no supervision.
pub const IGNORE_LABEL: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStat {
    pub raw: f32,
    pub positives: u32,
    pub negatives: u32,
}

impl TrainingFrame {
    /// `labels` holds a category per pixel (0 = background); pixels set to
    /// [`IGNORE_LABEL`] are skipped.
    pub fn from_labels(raw: &ScoreImage, labels: &[u8]) -> Result<Self> {
        if labels.len() != raw.pixels() {
            return Err(SealError::DimensionMismatch {
                expected: (raw.height, raw.width),
                found: (labels.len() / raw.width.max(1), raw.width),
            });
        }
        let mut counts: HashMap<(u32, u8), u32> = HashMap::new();
        for (p, &l) in labels.iter().enumerate() {
            if l == IGNORE_LABEL {
                continue;
            }
            *counts.entry((raw.index[p], l)).or_insert(0) += 1;
        }
        let mut per_cat: Vec<BTreeMap<u32, (u32, u32)>> = vec![BTreeMap::new(); raw.categories];
        let mut labeled_pixels = vec![0u64; raw.categories];
        for (&(e, l), &n) in &counts {
            if l >= 1 && (l as usize) <= raw.categories {
                labeled_pixels[l as usize - 1] += n as u64;
            }
            for (c, map) in per_cat.iter_mut().enumerate() {
                let s = raw.palette[e as usize * raw.categories + c];
                if !(s > 0.0 && s < 1.0) {
                    continue;
                }
                let slot = map.entry(s.to_bits()).or_insert((0, 0));
                if l as usize == c + 1 {
                    slot.0 += n;
                } else {
                    slot.1 += n;
                }
            }
        }
        Ok(Self {
            stats: per_cat
                .into_iter()
                .map(|m| {
                    m.into_iter()
                        .map(|(bits, (p, n))| ScoreStat {
                            raw: f32::from_bits(bits),
                            positives: p,
                            negatives: n,
                        })
                        .collect()
                })
                .collect(),
            labeled_pixels,
        })
    }

    pub fn positives(&self, c: usize) -> u64 {
        self.stats.get(c).map_or(0, |s| s.iter().map(|x| x.positives as u64).sum())
    }
}

/// Summed pixel cross-entropy over frames and its gradient in `(a, b)`.
pub fn loss_and_gradient(model: &PerceptionModel, frames: &[&TrainingFrame]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = model.a.len();
    let mut loss = 0.0;
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    for f in frames {
        for (c, stats) in f.stats.iter().enumerate().take(n) {
            for st in stats {
                let l = logit(st.raw as f64);
                let z = model.a[c] * l + model.b[c];
                let (pos, neg) = (st.positives as f64, st.negatives as f64);
                loss += pos * softplus(-z) + neg * softplus(z);
                let p = sigmoid(z);
                let dz = pos * (p - 1.0) + neg * p;
                ga[c] += dz * l;
                gb[c] += dz;
            }
        }
    }
    (loss, ga, gb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub iters: usize,
    pub batch_size: usize,
    /// Largest change of a single parameter in one iteration.
    pub max_step: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            iters: 5000,
            batch_size: 4,
            max_step: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub trained_categories: Vec<u8>,
    /// Categories with labels but no usable raw signal.
    pub degenerate_categories: Vec<u8>,
    /// Categories with no positive labels in the dataset.
    pub unlabeled_categories: Vec<u8>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Minibatch SGD on the recalibration parameters. An empty dataset returns
/// the model unchanged.
pub fn fine_tune(model: &PerceptionModel, frames: &[TrainingFrame], cfg: &FineTuneConfig) -> (PerceptionModel, FineTuneReport) {
    let mut report = FineTuneReport::default();
    if frames.is_empty() {
        return (model.clone(), report);
    }
    let n = model.a.len();
    let mut active = vec![false; n];
    for c in 0..n {
        let labeled = frames.iter().any(|f| f.labeled_pixels.get(c).copied().unwrap_or(0) > 0 || f.positives(c) > 0);
        let cat = (c + 1) as u8;
        if !labeled {
            report.unlabeled_categories.push(cat);
            continue;
        }
        if frames.iter().all(|f| f.positives(c) == 0) {
            log::warn!("category {cat}: labels present but raw scores are zero on every labeled pixel, skipping");
            report.degenerate_categories.push(cat);
            continue;
        }
        active[c] = true;
        report.trained_categories.push(cat);
    }
    let all: Vec<&TrainingFrame> = frames.iter().collect();
    report.initial_loss = loss_and_gradient(model, &all).0;
    let mut m = model.clone();
    let mut rng = rng_for(&[cfg.seed, tags::FINETUNE]);
    let batch = cfg.batch_size.max(1);
    let mut picks: Vec<&TrainingFrame> = Vec::with_capacity(batch);
    for _ in 0..cfg.iters {
        picks.clear();
        for _ in 0..batch {
            picks.push(all.choose(&mut rng).unwrap());
        }
        let (_, ga, gb) = loss_and_gradient(&m, &picks);
        for c in 0..n {
            if !active[c] {
                continue;
            }
            let da = (cfg.lr * ga[c] / batch as f64).clamp(-cfg.max_step, cfg.max_step);
            let db = (cfg.lr * gb[c] / batch as f64).clamp(-cfg.max_step, cfg.max_step);
            m.a[c] = (m.a[c] - da).max(MIN_GAIN);
            m.b[c] -= db;
        }
    }
    m.version = model.version + 1;
    report.final_loss = loss_and_gradient(&m, &all).0;
    (m, report)
}
