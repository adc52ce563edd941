//! Evaluation quantities: geometric IoU/precision/recall, per-class IoU,
//! occupied recall, class-coverage gap and average set size, plus the
//! recall/IoU sweep over occupancy gates built from different scores.
//!
//! Ratios whose denominator is zero are `None`, never 0.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::conformal::{conformal_threshold, kl_score, ClassRates, ClassSet};
use crate::error::{bail, Result};
use crate::grid::{BinaryOccupancyGrid, LabelGrid, SoftmaxGrid, EMPTY_CLASS};

#[inline]
fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        bail!(Validation, "prediction covers {a} voxels, ground truth {b}");
    }
    Ok(())
}

/// Geometric completion scores over occupied (`label >= 2`) voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeometryScores {
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// IoU, precision and recall of a predicted occupancy layer.
pub fn geometry_scores(pred: &[u8], gt: &[u16]) -> Result<GeometryScores> {
    check_len(pred.len(), gt.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &y) in pred.iter().zip(gt) {
        match (p == 1, y != EMPTY_CLASS) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(GeometryScores { iou: ratio(tp, tp + fp + fn_), precision: ratio(tp, tp + fp), recall: ratio(tp, tp + fn_) })
}

pub fn geometry_metrics(pred: &BinaryOccupancyGrid, gt: &LabelGrid) -> Result<GeometryScores> {
    if pred.geometry.dims != gt.geometry.dims {
        bail!(Validation, "grid dims differ: {:?} vs {:?}", pred.geometry.dims, gt.geometry.dims);
    }
    geometry_scores(&pred.values, &gt.labels)
}

/// Per-class IoUs keyed by label, and their mean.
pub type PerClassIou = (BTreeMap<u16, Option<f64>>, Option<f64>);

/// Per-class IoU for classes `2..=class_count` (indexed by label) and their
/// mean over classes present in either labeling.
pub fn semantic_iou(pred: &[u16], gt: &[u16], class_count: usize) -> Result<PerClassIou> {
    check_len(pred.len(), gt.len())?;
    let mut tp = vec![0usize; class_count + 1];
    let mut fp = vec![0usize; class_count + 1];
    let mut fn_ = vec![0usize; class_count + 1];
    for (&p, &y) in pred.iter().zip(gt) {
        if p as usize > class_count || y as usize > class_count || p == 0 || y == 0 {
            bail!(Validation, "label outside 1..={class_count}");
        }
        if p == y {
            tp[y as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[y as usize] += 1;
        }
    }
    let per_class: BTreeMap<u16, Option<f64>> =
        (2..=class_count).map(|y| (y as u16, ratio(tp[y], tp[y] + fp[y] + fn_[y]))).collect();
    let present: Vec<f64> = per_class.values().flatten().copied().collect();
    let miou = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok((per_class, miou))
}

pub fn semantic_miou(pred: &LabelGrid, gt: &LabelGrid) -> Result<PerClassIou> {
    if pred.geometry.dims != gt.geometry.dims || pred.class_count != gt.class_count {
        bail!(Validation, "label grids differ in dims or class count");
    }
    semantic_iou(&pred.labels, &gt.labels, gt.class_count)
}

/// Fraction of voxels labeled `y` that the prediction marks occupied.
pub fn occupied_recall(pred_occ: &[u8], gt: &[u16], y: u16) -> Result<Option<f64>> {
    if y <= EMPTY_CLASS {
        bail!(Domain, "occupied recall is undefined for class {y}");
    }
    check_len(pred_occ.len(), gt.len())?;
    let (mut hit, mut n) = (0, 0);
    for (&p, &l) in pred_occ.iter().zip(gt) {
        if l == y {
            n += 1;
            hit += usize::from(p == 1);
        }
    }
    Ok(ratio(hit, n))
}

/// Empirical coverage `P(Y in C(X) | Y = y)` for each label `1..=class_count`.
pub fn class_coverage(sets: &[ClassSet], gt: &[u16], class_count: usize) -> Result<BTreeMap<u16, Option<f64>>> {
    check_len(sets.len(), gt.len())?;
    let mut hit = vec![0usize; class_count + 1];
    let mut n = vec![0usize; class_count + 1];
    for (s, &y) in sets.iter().zip(gt) {
        if y == 0 || y as usize > class_count {
            bail!(Validation, "label {y} outside 1..={class_count}");
        }
        n[y as usize] += 1;
        hit[y as usize] += usize::from(s.contains(y));
    }
    Ok((1..=class_count).map(|y| (y as u16, ratio(hit[y], n[y]))).collect())
}

/// Mean over occupied classes present in `gt` of `|coverage_y - (1 - alpha_y)|`.
pub fn cov_gap(sets: &[ClassSet], gt: &[u16], alpha_target: &ClassRates) -> Result<Option<f64>> {
    let class_count = gt.iter().copied().max().unwrap_or(1).max(alpha_target.keys().copied().max().unwrap_or(1)) as usize;
    let coverage = class_coverage(sets, gt, class_count)?;
    let mut gaps = Vec::new();
    for (&y, c) in coverage.iter().skip(1) {
        let Some(c) = c else { continue };
        let Some(&a) = alpha_target.get(&y) else {
            bail!(Config, "no alpha target for class {y}");
        };
        gaps.push(libm::fabs(c - (1.0 - a)));
    }
    Ok((!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64))
}

/// Mean number of occupied classes per prediction set.
pub fn avg_size(sets: &[ClassSet]) -> Result<f64> {
    if sets.is_empty() {
        bail!(Domain, "average size of zero prediction sets");
    }
    Ok(sets.iter().map(|s| s.occupied_len()).sum::<usize>() as f64 / sets.len() as f64)
}

/// Evaluation summary of one predictor on one split.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub voxels: usize,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub per_class_iou: BTreeMap<u16, Option<f64>>,
    pub miou: Option<f64>,
    pub occupied_recall: BTreeMap<u16, Option<f64>>,
    pub coverage: BTreeMap<u16, Option<f64>>,
    pub cov_gap: Option<f64>,
    pub avg_size: f64,
}

/// Full report for prediction sets `sets`, occupancy decisions `occ` and
/// point labels `pred_labels` against `gt`, all over the same voxels.
pub fn report(
    occ: &[u8],
    pred_labels: &[u16],
    sets: &[ClassSet],
    gt: &[u16],
    class_count: usize,
    alpha_target: &ClassRates,
) -> Result<MetricsReport> {
    let geo = geometry_scores(occ, gt)?;
    let (per_class_iou, miou) = semantic_iou(pred_labels, gt, class_count)?;
    let mut occupied = BTreeMap::new();
    for y in 2..=class_count as u16 {
        occupied.insert(y, occupied_recall(occ, gt, y)?);
    }
    let mut coverage = class_coverage(sets, gt, class_count)?;
    coverage.remove(&EMPTY_CLASS);
    Ok(MetricsReport {
        voxels: gt.len(),
        iou: geo.iou,
        precision: geo.precision,
        recall: geo.recall,
        per_class_iou,
        miou,
        occupied_recall: occupied,
        coverage,
        cov_gap: cov_gap(sets, gt, alpha_target)?,
        avg_size: avg_size(sets)?,
    })
}

/// Score used to gate occupancy in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ScoreKind {
    /// KL divergence to the occupancy reference.
    Kl,
    /// `1 - f_y` of the rare class.
    Class,
    /// Empty-class probability `f_1`.
    Occupied,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Kl, ScoreKind::Class, ScoreKind::Occupied];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Kl => "kl",
            ScoreKind::Class => "class",
            ScoreKind::Occupied => "occupied",
        }
    }

    #[inline]
    pub fn score(self, f: &[f32], rare: u16, epsilon: f64) -> f64 {
        match self {
            ScoreKind::Kl => kl_score(f, epsilon),
            ScoreKind::Class => 1.0 - f[rare as usize - 1] as f64,
            ScoreKind::Occupied => f[0] as f64,
        }
    }
}

/// One row of a recall/IoU sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepRow {
    pub score: ScoreKind,
    pub target_recall: f64,
    pub threshold: f64,
    pub achieved_recall: Option<f64>,
    pub iou: Option<f64>,
}

/// Inputs shared by every row of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepSetup<'a> {
    pub softmax: &'a SoftmaxGrid,
    pub labels: &'a LabelGrid,
    pub calibration: &'a [usize],
    pub test: &'a [usize],
    pub rare: u16,
    pub epsilon: f64,
}

/// For each target recall `r`, gate voxels with `score <= q`, where `q` is the
/// conformal quantile at rate `1 - r` of the rare class's calibration scores,
/// and report the rare-class occupied recall and the geometric IoU on the
/// test voxels. A target of 0 gives a threshold of `-inf`.
pub fn recall_iou_sweep(setup: &SweepSetup<'_>, kind: ScoreKind, targets: &[f64]) -> Result<Vec<SweepRow>> {
    let SweepSetup { softmax, labels, calibration, test, rare, epsilon } = *setup;
    crate::conformal::check_pair(softmax, labels)?;
    if rare <= EMPTY_CLASS || rare as usize > softmax.class_count {
        bail!(Config, "rare class {rare} outside 2..={}", softmax.class_count);
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        bail!(Config, "epsilon must lie in (0, 1) (got {epsilon})");
    }
    for w in targets.windows(2) {
        if !(w[0] < w[1]) {
            bail!(Config, "recall targets must be strictly increasing");
        }
    }
    if let Some(t) = targets.iter().find(|t| !(0.0..1.0).contains(*t)) {
        bail!(Config, "recall target {t} outside [0, 1)");
    }
    let n = labels.labels.len();
    if let Some(&i) = calibration.iter().chain(test).find(|&&i| i >= n) {
        bail!(Validation, "voxel index {i} out of range");
    }
    let cal_scores: Vec<f64> = calibration
        .iter()
        .filter(|&&i| labels.labels[i] == rare)
        .map(|&i| kind.score(softmax.vector(i), rare, epsilon))
        .collect();
    let test_scores: Vec<f64> = test.iter().map(|&i| kind.score(softmax.vector(i), rare, epsilon)).collect();
    let gt: Vec<u16> = test.iter().map(|&i| labels.labels[i]).collect();
    let mut occ = vec![0u8; test.len()];
    let mut rows = Vec::with_capacity(targets.len());
    for &target in targets {
        let q = conformal_threshold(&cal_scores, 1.0 - target);
        for (o, &s) in occ.iter_mut().zip(&test_scores) {
            *o = u8::from(s <= q);
        }
        rows.push(SweepRow {
            score: kind,
            target_recall: target,
            threshold: q,
            achieved_recall: occupied_recall(&occ, &gt, rare)?,
            iou: geometry_scores(&occ, &gt)?.iou,
        });
    }
    Ok(rows)
}
