//! Split conformal prediction for voxel classification: score functions,
//! conformal quantiles, the marginal (SCP) and class-conditional (CCCP)
//! baselines, and the hierarchical procedure that gates occupancy with a
//! KL-divergence score before thresholding per-class scores.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::grid::{check_softmax, BinaryOccupancyGrid, LabelGrid, SoftmaxGrid, EMPTY_CLASS};

/// Per-class value keyed by 1-based label.
pub type ClassRates = BTreeMap<u16, f64>;

/// Largest class count a [`ClassSet`] can hold.
pub const MAX_CLASSES: usize = 64;

/// Set of 1-based class labels, stored as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ClassSet(u64);

/// Output of the hierarchical predictor. It never contains the empty class;
/// an empty set means the voxel is predicted empty.
pub type PredictionSet = ClassSet;

impl ClassSet {
    pub const fn empty() -> Self {
        Self(0)
    }

    /// All labels in `lo..=hi`.
    pub fn range(lo: u16, hi: u16) -> Self {
        let mut s = Self::empty();
        for y in lo..=hi {
            s.insert(y);
        }
        s
    }

    #[inline]
    pub fn insert(&mut self, y: u16) {
        debug_assert!(y >= 1 && y as usize <= MAX_CLASSES);
        self.0 |= 1 << (y - 1);
    }

    #[inline]
    pub fn contains(&self, y: u16) -> bool {
        y >= 1 && y as usize <= MAX_CLASSES && self.0 & (1 << (y - 1)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    /// Cardinality without the empty class.
    pub fn occupied_len(&self) -> usize {
        (self.0 & !1).count_ones() as usize
    }

    pub fn bits(&self) -> u64 {
        self.0
    }

    pub fn from_bits(bits: u64) -> Self {
        Self(bits)
    }

    pub fn iter(&self) -> impl Iterator<Item = u16> + '_ {
        (1..=MAX_CLASSES as u16).filter(move |&y| self.contains(y))
    }
}

fn check_label(y: u16, m: usize) -> Result<()> {
    if y == 0 || y as usize > m {
        bail!(Domain, "class {y} outside 1..={m}");
    }
    Ok(())
}

fn check_rate(name: &str, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Domain, "{name} must lie in (0, 1) (got {alpha})");
    }
    Ok(())
}

/// Class score `1 - f_y`.
pub fn score_class<T: Copy + Into<f64>>(f: &[T], y: u16) -> Result<f64> {
    check_label(y, f.len())?;
    Ok(1.0 - f[y as usize - 1].into())
}

/// Occupied score `1 - sum_{y >= 2} f_y`, i.e. the empty-class probability.
pub fn score_occupied<T: Copy + Into<f64>>(f: &[T]) -> f64 {
    f[0].into()
}

/// KL divergence from `f` to the occupancy reference `(eps, 1, ..., 1)`:
/// `p_1 ln(p_1 / eps) + sum_{i >= 2} p_i ln p_i`, with `0 ln 0 = 0`.
pub fn score_kl<T: Copy + Into<f64>>(f: &[T], epsilon: f64) -> Result<f64> {
    check_rate("epsilon", epsilon)?;
    if f.is_empty() {
        bail!(Domain, "empty probability vector");
    }
    Ok(kl_score(f, epsilon))
}

#[inline]
pub(crate) fn kl_score<T: Copy + Into<f64>>(f: &[T], epsilon: f64) -> f64 {
    let mut s = 0.0;
    for (i, &p) in f.iter().enumerate() {
        let p: f64 = p.into();
        if p > 0.0 {
            s += if i == 0 { p * libm::log(p / epsilon) } else { p * libm::log(p) };
        }
    }
    s
}

/// Rank `k = ceil((n + 1)(1 - alpha))` of the conformal order statistic.
///
/// Products within a relative 1e-9 of an integer are snapped to it, so that
/// e.g. `(9 + 1) * (1 - 0.3)` gives 7 and not 8.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let r = libm::round(x);
    let k = if libm::fabs(x - r) <= 1e-9 * r.max(1.0) { r } else { libm::ceil(x) };
    k.max(0.0) as usize
}

/// `k`-th smallest score (1-based) for `1 <= k <= scores.len()`.
fn order_statistic(scores: &[f64], k: usize) -> f64 {
    let mut buf = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Conformal threshold at any level `alpha` in `[0, 1]`: `-inf` when the rank
/// is 0 (accept nothing), `+inf` when it exceeds the sample size.
pub fn conformal_threshold(scores: &[f64], alpha: f64) -> f64 {
    let k = conformal_rank(scores.len(), alpha);
    if k == 0 {
        f64::NEG_INFINITY
    } else if k > scores.len() {
        f64::INFINITY
    } else {
        order_statistic(scores, k)
    }
}

/// The `ceil((N + 1)(1 - alpha))`-th smallest score, or `+inf` when that rank
/// exceeds `N` (including `N = 0`).
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_rate("alpha", alpha)?;
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Domain, "scores contain NaN");
    }
    Ok(conformal_threshold(scores, alpha))
}

/// Labeled probability vectors held out for calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    class_count: usize,
    probs: Vec<f32>,
    labels: Vec<u16>,
}

impl CalibrationSet {
    pub fn new(class_count: usize, probs: Vec<f32>, labels: Vec<u16>) -> Result<Self> {
        if !(2..=MAX_CLASSES).contains(&class_count) {
            bail!(Validation, "class count {class_count} outside 2..={MAX_CLASSES}");
        }
        if probs.len() != labels.len() * class_count {
            bail!(Validation, "{} probabilities for {} records of {class_count} classes", probs.len(), labels.len());
        }
        for (row, &y) in probs.chunks_exact(class_count).zip(&labels) {
            check_softmax(row)?;
            if y == 0 || y as usize > class_count {
                bail!(Validation, "label {y} outside 1..={class_count}");
            }
        }
        Ok(Self { class_count, probs, labels })
    }

    /// Records at `indices` of a softmax grid and its labels.
    pub fn from_grids(softmax: &SoftmaxGrid, labels: &LabelGrid, indices: &[usize]) -> Result<Self> {
        check_pair(softmax, labels)?;
        let m = softmax.class_count;
        let mut probs = Vec::with_capacity(indices.len() * m);
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= labels.labels.len() {
                bail!(Validation, "voxel index {i} out of range");
            }
            probs.extend_from_slice(softmax.vector(i));
            ys.push(labels.labels[i]);
        }
        Self::new(m, probs, ys)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.probs[i * self.class_count..(i + 1) * self.class_count]
    }

    pub fn label(&self, i: usize) -> u16 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f32], u16)> + '_ {
        self.probs.chunks_exact(self.class_count).zip(self.labels.iter().copied())
    }
}

/// Dimensions and class counts of a softmax grid and a label grid must agree.
pub fn check_pair(softmax: &SoftmaxGrid, labels: &LabelGrid) -> Result<()> {
    if softmax.geometry.dims != labels.geometry.dims {
        bail!(Validation, "softmax dims {:?} differ from label dims {:?}", softmax.geometry.dims, labels.geometry.dims);
    }
    if softmax.class_count != labels.class_count {
        bail!(Validation, "softmax has {} classes, labels have {}", softmax.class_count, labels.class_count);
    }
    Ok(())
}

/// Marginal quantile of the class score `1 - f_Y` at rate `alpha`.
pub fn scp_calibrate(cal: &CalibrationSet, alpha: f64) -> Result<f64> {
    let scores: Vec<f64> = cal.iter().map(|(f, y)| 1.0 - f[y as usize - 1] as f64).collect();
    conformal_quantile(&scores, alpha)
}

/// `{y : 1 - f_y <= q}` over all classes, the empty class included.
pub fn scp_predict<T: Copy + Into<f64>>(f: &[T], q: f64) -> ClassSet {
    let mut set = ClassSet::empty();
    for (k, &p) in f.iter().enumerate() {
        if 1.0 - p.into() <= q {
            set.insert(k as u16 + 1);
        }
    }
    set
}

fn check_targets(alpha: &ClassRates, labels: core::ops::RangeInclusive<u16>) -> Result<()> {
    for y in labels.clone() {
        match alpha.get(&y) {
            Some(&a) => check_rate("alpha target", a).map_err(|_| crate::Error::Config(alloc::format!("alpha target for class {y} must lie in (0, 1) (got {a})")))?,
            None => bail!(Config, "missing alpha target for class {y}"),
        }
    }
    if let Some(y) = alpha.keys().find(|y| !labels.contains(y)) {
        bail!(Config, "alpha target given for class {y} outside {}..={}", labels.start(), labels.end());
    }
    Ok(())
}

/// Per-class quantiles: class `y` uses the scores of its own records at
/// rate `alpha[y]`. `alpha` must cover every class `1..=M`.
pub fn cccp_calibrate(cal: &CalibrationSet, alpha: &ClassRates) -> Result<ClassRates> {
    let m = cal.class_count();
    check_targets(alpha, 1..=m as u16)?;
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); m];
    for (f, y) in cal.iter() {
        per_class[y as usize - 1].push(1.0 - f[y as usize - 1] as f64);
    }
    Ok((1..=m as u16)
        .map(|y| (y, conformal_threshold(&per_class[y as usize - 1], alpha[&y])))
        .collect())
}

/// `{y : 1 - f_y <= q_y}`.
pub fn cccp_predict<T: Copy + Into<f64>>(f: &[T], quantiles: &ClassRates) -> ClassSet {
    let mut set = ClassSet::empty();
    for (k, &p) in f.iter().enumerate() {
        let y = k as u16 + 1;
        if quantiles.get(&y).is_some_and(|&q| 1.0 - p.into() <= q) {
            set.insert(y);
        }
    }
    set
}

/// Semantic rate from the total and occupancy rates:
/// `1 - (1 - alpha) / (1 - alpha_o)`, clamped to `[0, 1)`.
pub fn split_alpha(alpha: f64, alpha_o: f64) -> f64 {
    let a = 1.0 - (1.0 - alpha) / (1.0 - alpha_o);
    if a.is_nan() {
        0.0
    } else {
        a.clamp(0.0, 1.0 - f64::EPSILON)
    }
}

/// Settings of the hierarchical calibration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HcpConfig {
    pub class_count: usize,
    /// Rare classes whose occupancy recall is controlled directly.
    pub rare: Vec<u16>,
    /// Occupancy miss rate per rare class.
    pub alpha_o: ClassRates,
    /// Total miss rate per occupied class `2..=M`.
    pub alpha_target: ClassRates,
    /// Empty-class entry of the occupancy reference distribution.
    pub epsilon: f64,
}

/// Default empty-class floor of the occupancy reference.
pub const DEFAULT_EPSILON: f64 = 0.01;

impl HcpConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.class_count;
        if !(2..=MAX_CLASSES).contains(&m) {
            bail!(Config, "class count {m} outside 2..={MAX_CLASSES}");
        }
        if self.rare.is_empty() {
            bail!(Config, "rare class set is empty");
        }
        for &y in &self.rare {
            if y < 2 || y as usize > m {
                bail!(Config, "rare class {y} outside 2..={m}");
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bail!(Config, "epsilon must lie in (0, 1) (got {})", self.epsilon);
        }
        check_targets(&self.alpha_target, 2..=m as u16)?;
        for &y in &self.rare {
            let Some(&ao) = self.alpha_o.get(&y) else {
                bail!(Config, "missing alpha_o for rare class {y}");
            };
            if !(ao > 0.0 && ao < 1.0) {
                bail!(Config, "alpha_o for class {y} must lie in (0, 1) (got {ao})");
            }
            if ao >= self.alpha_target[&y] {
                bail!(Config, "alpha_o for class {y} ({ao}) must be below its alpha target ({})", self.alpha_target[&y]);
            }
        }
        if let Some(y) = self.alpha_o.keys().find(|y| !self.rare.contains(y)) {
            bail!(Config, "alpha_o given for class {y}, which is not rare");
        }
        Ok(())
    }
}

/// Calibration counts of one occupied class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassCounts {
    /// Calibration records with this label.
    pub n: usize,
    /// Of those, records passing the occupancy gate.
    pub tp: usize,
    /// Records failing the gate.
    pub fn_: usize,
}

/// Calibrated hierarchical predictor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HcpModel {
    pub class_count: usize,
    pub rare: Vec<u16>,
    pub epsilon: f64,
    /// Occupancy quantile of the KL score per rare class.
    pub q_o: ClassRates,
    /// Occupancy miss rate per occupied class: configured for rare classes,
    /// measured on calibration data for the others.
    pub alpha_o: ClassRates,
    pub alpha_s: ClassRates,
    pub q_s: ClassRates,
    pub alpha_target: ClassRates,
    pub counts: BTreeMap<u16, ClassCounts>,
}

impl HcpModel {
    /// KL-score threshold of the occupancy gate: the largest rare-class quantile.
    pub fn gate_threshold(&self) -> f64 {
        self.q_o.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rare classes without calibration records; their quantile is `+inf`.
    pub fn absent_rare_classes(&self) -> Vec<u16> {
        self.rare.iter().copied().filter(|y| self.counts.get(y).is_none_or(|c| c.n == 0)).collect()
    }

    /// Semantic quantiles indexed by `label - 1`; the empty class gets `-inf`.
    fn q_s_table(&self) -> Vec<f64> {
        (1..=self.class_count as u16)
            .map(|y| self.q_s.get(&y).copied().unwrap_or(f64::NEG_INFINITY))
            .collect()
    }
}

/// Hierarchical calibration: occupancy quantiles of the KL score on the rare
/// classes, then per-class semantic quantiles on the records that pass the
/// resulting gate, at rates split so that the two levels compose to the
/// requested per-class coverage.
pub fn hcp_calibrate(cal: &CalibrationSet, cfg: &HcpConfig) -> Result<HcpModel> {
    cfg.validate()?;
    let m = cfg.class_count;
    if cal.class_count() != m {
        bail!(Validation, "calibration data has {} classes, config has {m}", cal.class_count());
    }
    if cal.is_empty() {
        bail!(Domain, "calibration set is empty");
    }
    let kl: Vec<f64> = cal.iter().map(|(f, _)| kl_score(f, cfg.epsilon)).collect();

    let mut q_o = ClassRates::new();
    for &y in &cfg.rare {
        let s: Vec<f64> = kl.iter().zip(cal.labels()).filter(|(_, &l)| l == y).map(|(&s, _)| s).collect();
        q_o.insert(y, conformal_threshold(&s, cfg.alpha_o[&y]));
    }
    let gate = q_o.values().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut counts: BTreeMap<u16, ClassCounts> = (2..=m as u16).map(|y| (y, ClassCounts::default())).collect();
    let mut passed: Vec<Vec<f64>> = vec![Vec::new(); m];
    for ((f, y), &s) in cal.iter().zip(&kl) {
        if y == EMPTY_CLASS {
            continue;
        }
        let c = counts.get_mut(&y).expect("label range checked");
        c.n += 1;
        if s <= gate {
            c.tp += 1;
            passed[y as usize - 1].push(1.0 - f[y as usize - 1] as f64);
        } else {
            c.fn_ += 1;
        }
    }

    let mut alpha_o = ClassRates::new();
    let mut alpha_s = ClassRates::new();
    let mut q_s = ClassRates::new();
    for y in 2..=m as u16 {
        let c = counts[&y];
        let target = cfg.alpha_target[&y];
        let (ao, a_s, q) = if c.n == 0 {
            (1.0, 0.0, f64::INFINITY)
        } else {
            let ao = match cfg.alpha_o.get(&y) {
                Some(&ao) => ao,
                None => 1.0 - c.tp as f64 / c.n as f64,
            };
            let a_s = split_alpha(target, ao);
            let q = if a_s <= 0.0 { f64::INFINITY } else { conformal_threshold(&passed[y as usize - 1], a_s) };
            (ao, a_s, q)
        };
        alpha_o.insert(y, ao);
        alpha_s.insert(y, a_s);
        q_s.insert(y, q);
    }

    Ok(HcpModel {
        class_count: m,
        rare: cfg.rare.clone(),
        epsilon: cfg.epsilon,
        q_o,
        alpha_o,
        alpha_s,
        q_s,
        alpha_target: cfg.alpha_target.clone(),
        counts,
    })
}

fn predict_with(f: &[f32], gate: f64, epsilon: f64, q_s: &[f64]) -> PredictionSet {
    let mut set = ClassSet::empty();
    if kl_score(f, epsilon) > gate {
        return set;
    }
    for (k, &p) in f.iter().enumerate().skip(1) {
        if 1.0 - p as f64 <= q_s[k] {
            set.insert(k as u16 + 1);
        }
    }
    set
}

/// Empty set when the KL score exceeds the gate, otherwise
/// `{y >= 2 : 1 - f_y <= q_s[y]}`.
pub fn hcp_predict(f: &[f32], model: &HcpModel) -> Result<PredictionSet> {
    if f.len() != model.class_count {
        bail!(Validation, "vector has {} classes, model has {}", f.len(), model.class_count);
    }
    Ok(predict_with(f, model.gate_threshold(), model.epsilon, &model.q_s_table()))
}

/// Precomputed form of a model for predicting many vectors.
#[derive(Debug, Clone)]
pub struct HcpPredictor {
    gate: f64,
    epsilon: f64,
    q_s: Vec<f64>,
}

impl HcpPredictor {
    pub fn new(model: &HcpModel) -> Self {
        Self { gate: model.gate_threshold(), epsilon: model.epsilon, q_s: model.q_s_table() }
    }

    pub fn predict(&self, f: &[f32]) -> PredictionSet {
        predict_with(f, self.gate, self.epsilon, &self.q_s)
    }
}

/// Occupancy decision and prediction set for every voxel of `grid`.
pub fn hcp_grid_predict(grid: &SoftmaxGrid, model: &HcpModel) -> Result<(BinaryOccupancyGrid, Vec<PredictionSet>)> {
    if grid.class_count != model.class_count {
        bail!(Validation, "grid has {} classes, model has {}", grid.class_count, model.class_count);
    }
    let p = HcpPredictor::new(model);
    let gate = p.gate;
    let mut occ = BinaryOccupancyGrid::zeros(grid.geometry);
    let mut sets = Vec::with_capacity(grid.voxel_count());
    for (i, f) in grid.probs.chunks_exact(grid.class_count).enumerate() {
        occ.values[i] = u8::from(kl_score(f, model.epsilon) <= gate);
        sets.push(p.predict(f));
    }
    Ok((occ, sets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn score_examples() {
        assert_eq!(score_class(&[0.0, 1.0, 0.0], 2).unwrap(), 0.0);
        assert_eq!(score_class(&[0.25f64; 4], 3).unwrap(), 0.75);
        assert!(close(score_class(&[0.7, 0.2, 0.1], 2).unwrap(), 0.8, 1e-15));
        assert!(score_class(&[0.5, 0.5], 3).is_err());
        assert!(score_class(&[0.5, 0.5], 0).is_err());
        assert_eq!(score_occupied(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(score_occupied(&[0.0, 0.5, 0.5]), 0.0);
        assert_eq!(score_occupied(&[0.3, 0.5, 0.2]), 0.3);
    }

    #[test]
    fn kl_score_examples() {
        assert_eq!(score_kl(&[0.0, 1.0, 0.0], 0.01).unwrap(), 0.0);
        assert!(close(score_kl(&[1.0, 0.0, 0.0], 0.01).unwrap(), 100f64.ln(), 1e-12));
        assert!(close(score_kl(&[1.0, 0.0, 0.0], 0.01).unwrap(), 4.605170, 1e-6));
        let want = 0.5 * 50f64.ln() + 0.5 * 0.25f64.ln();
        assert!(close(score_kl(&[0.5, 0.25, 0.25], 0.01).unwrap(), want, 1e-12));
        assert!(close(want, 1.262864, 1e-6));
        assert!(score_kl(&[1.0], 0.0).is_err());
        assert!(score_kl(&[1.0], 1.0).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(conformal_quantile(&[0.3], 0.5).unwrap(), 0.3);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(conformal_quantile(&ten, 0.1).unwrap(), 10.0);
        assert_eq!(conformal_quantile(&[1.0, 2.0, 3.0], 0.05).unwrap(), f64::INFINITY);
        assert_eq!(conformal_quantile(&[], 0.5).unwrap(), f64::INFINITY);
        assert!(conformal_quantile(&[1.0], 0.0).is_err());
        assert!(conformal_quantile(&[1.0], 1.0).is_err());
        // (9 + 1)(1 - 0.3) is 7 exactly, not 7.000000000000001
        assert_eq!(conformal_rank(9, 0.3), 7);
        assert_eq!(conformal_rank(99, 0.1), 90);
        assert_eq!(conformal_threshold(&[1.0], 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn split_alpha_examples() {
        assert!(close(split_alpha(0.19, 0.10), 0.10, 1e-12));
        assert_eq!(split_alpha(0.2, 0.2), 0.0);
        assert_eq!(split_alpha(0.10, 0.20), 0.0);
        assert_eq!(split_alpha(0.10, 1.0), 0.0);
    }

    #[test]
    fn scp_confident_classifier() {
        let cal = CalibrationSet::new(3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0], vec![2, 1, 3]).unwrap();
        let q = scp_calibrate(&cal, 0.1).unwrap();
        // k = ceil(4 * 0.9) = 4 > 3
        assert_eq!(q, f64::INFINITY);
        let probs: Vec<f32> = (0..20).flat_map(|i| if i % 2 == 0 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] }).collect();
        let labels: Vec<u16> = (0..20).map(|i| if i % 2 == 0 { 2 } else { 1 }).collect();
        let cal = CalibrationSet::new(3, probs, labels).unwrap();
        let q = scp_calibrate(&cal, 0.1).unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(scp_predict(&[0.0f32, 0.0, 1.0], q).iter().collect::<Vec<_>>(), vec![3]);
        assert_eq!(scp_predict(&[0.2f32, 0.3, 0.5], f64::INFINITY), ClassSet::range(1, 3));
    }

    #[test]
    fn cccp_single_class_present() {
        let probs: Vec<f32> = (0..30).flat_map(|_| [0.1, 0.8, 0.1]).collect();
        let cal = CalibrationSet::new(3, probs, vec![2; 30]).unwrap();
        let alpha: ClassRates = [(1, 0.1), (2, 0.1), (3, 0.1)].into_iter().collect();
        let q = cccp_calibrate(&cal, &alpha).unwrap();
        assert_eq!(q[&1], f64::INFINITY);
        assert_eq!(q[&3], f64::INFINITY);
        assert!(close(q[&2], 0.2, 1e-6));
        let missing: ClassRates = [(1, 0.1), (2, 0.1)].into_iter().collect();
        assert!(cccp_calibrate(&cal, &missing).is_err());
    }

    #[test]
    fn cccp_uniform_classifier_covers() {
        // M = 3 with two occupied classes, every vector uniform: all scores
        // tie at 2/3, so each class covers every one of its records.
        let n = 400;
        let probs: Vec<f32> = (0..n).flat_map(|_| [1.0 / 3.0; 3]).collect();
        let labels: Vec<u16> = (0..n).map(|i| 2 + (i % 2) as u16).collect();
        let cal = CalibrationSet::new(3, probs, labels).unwrap();
        let alpha: ClassRates = [(1, 0.5), (2, 0.5), (3, 0.5)].into_iter().collect();
        let q = cccp_calibrate(&cal, &alpha).unwrap();
        let set = cccp_predict(&[1.0f32 / 3.0; 3], &q);
        assert!(set.contains(2) && set.contains(3));
    }

    fn random_cal(seed: u64, n: usize, m: usize) -> CalibrationSet {
        let mut rng = crate::rng::SplitMix64::new(seed);
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = 1 + rng.below(m) as u16;
            let w: Vec<f64> = (0..m).map(|k| rng.gamma(if k + 1 == y as usize { 3.0 } else { 1.0 })).collect();
            let s: f64 = w.iter().sum();
            probs.extend(w.iter().map(|x| (x / s) as f32));
            labels.push(y);
        }
        // renormalize in f32 to stay inside the tolerance
        CalibrationSet::new(m, probs, labels).unwrap()
    }

    fn cfg(m: usize, rare: &[u16], ao: f64, a: f64, eps: f64) -> HcpConfig {
        HcpConfig {
            class_count: m,
            rare: rare.to_vec(),
            alpha_o: rare.iter().map(|&y| (y, ao)).collect(),
            alpha_target: (2..=m as u16).map(|y| (y, a)).collect(),
            epsilon: eps,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(4, &[4], 0.1, 0.2, 0.01).validate().is_ok());
        assert!(cfg(4, &[], 0.1, 0.2, 0.01).validate().is_err());
        assert!(cfg(4, &[1], 0.1, 0.2, 0.01).validate().is_err());
        assert!(cfg(4, &[4], 0.3, 0.2, 0.01).validate().is_err());
        assert!(cfg(4, &[4], 0.1, 0.2, 1.5).validate().is_err());
        let mut c = cfg(4, &[4], 0.1, 0.2, 0.01);
        c.alpha_target.remove(&3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn hcp_one_hot_occupied_limit() {
        // occupied records are one-hot on their label, empty records one-hot on 1
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60u16 {
            let y = 1 + i % 4;
            let mut f = [0.0f32; 4];
            f[y as usize - 1] = 1.0;
            probs.extend(f);
            labels.push(y);
        }
        let cal = CalibrationSet::new(4, probs, labels).unwrap();
        let model = hcp_calibrate(&cal, &cfg(4, &[4], 0.1, 0.2, 0.01)).unwrap();
        assert_eq!(model.q_o[&4], 0.0);
        for y in 2..=4 {
            assert_eq!(model.alpha_o[&y], if y == 4 { 0.1 } else { 0.0 });
            assert_eq!(model.counts[&y].fn_, 0);
        }
        // the empty one-hot scores ln(100) and is gated out
        assert!(hcp_predict(&[1.0, 0.0, 0.0, 0.0], &model).unwrap().is_empty());
    }

    #[test]
    fn hcp_all_empty_calibration() {
        let probs: Vec<f32> = (0..10).flat_map(|_| [0.9, 0.05, 0.05]).collect();
        let cal = CalibrationSet::new(3, probs, vec![1; 10]).unwrap();
        let model = hcp_calibrate(&cal, &cfg(3, &[3], 0.1, 0.2, 0.01)).unwrap();
        assert_eq!(model.q_o[&3], f64::INFINITY);
        assert_eq!(model.absent_rare_classes(), vec![3]);
        assert_eq!(model.alpha_o[&2], 1.0);
        assert_eq!(model.q_s[&2], f64::INFINITY);
        assert_eq!(hcp_predict(&[1.0, 0.0, 0.0], &model).unwrap(), ClassSet::range(2, 3));
    }

    #[test]
    fn open_model_returns_all_occupied_classes() {
        let model = HcpModel {
            class_count: 4,
            rare: vec![4],
            epsilon: 0.01,
            q_o: [(4, f64::INFINITY)].into_iter().collect(),
            alpha_o: ClassRates::new(),
            alpha_s: ClassRates::new(),
            q_s: (2..=4).map(|y| (y, f64::INFINITY)).collect(),
            alpha_target: ClassRates::new(),
            counts: BTreeMap::new(),
        };
        assert_eq!(hcp_predict(&[1.0, 0.0, 0.0, 0.0], &model).unwrap(), ClassSet::range(2, 4));
        assert_eq!(hcp_predict(&[0.1, 0.2, 0.3, 0.4], &model).unwrap(), ClassSet::range(2, 4));
        assert!(hcp_predict(&[0.5, 0.5], &model).is_err());
    }

    #[test]
    fn grid_predict_matches_pointwise() {
        let cal = random_cal(4, 500, 4);
        let model = hcp_calibrate(&cal, &cfg(4, &[4], 0.1, 0.2, 0.01)).unwrap();
        let geometry = GridGeometry::new([2, 3, 4], 0.2, [0.0; 3]).unwrap();
        let sub = random_cal(5, 24, 4);
        let grid = SoftmaxGrid { geometry, class_count: 4, probs: (0..24).flat_map(|i| sub.vector(i).to_vec()).collect() };
        let (occ, sets) = hcp_grid_predict(&grid, &model).unwrap();
        let gate = model.gate_threshold();
        for i in 0..24 {
            let f = grid.vector(i);
            assert_eq!(sets[i], hcp_predict(f, &model).unwrap());
            assert_eq!(occ.values[i] == 1, score_kl(f, 0.01).unwrap() <= gate);
            if occ.values[i] == 0 {
                assert!(sets[i].is_empty());
            }
        }
        let bad = SoftmaxGrid { geometry, class_count: 3, probs: vec![1.0 / 3.0; 72] };
        assert!(hcp_grid_predict(&bad, &model).is_err());
    }

    proptest! {
        #[test]
        fn quantile_monotone(scores in proptest::collection::vec(-5.0f64..5.0, 0..60), a in 0.01f64..0.99, b in 0.01f64..0.99, extra in 0.0f64..5.0, bump in 0.0f64..3.0, which in any::<prop::sample::Index>()) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let q = conformal_quantile(&scores, a).unwrap();
            prop_assert!(conformal_quantile(&scores, lo).unwrap() >= conformal_quantile(&scores, hi).unwrap());
            // adding a score at or above the current quantile
            let mut more = scores.clone();
            more.push(if q.is_finite() { q + extra } else { extra });
            if q.is_finite() {
                prop_assert!(conformal_quantile(&more, a).unwrap() >= q);
            }
            // raising one score
            if !scores.is_empty() {
                let mut raised = scores.clone();
                raised[which.index(scores.len())] += bump;
                prop_assert!(conformal_quantile(&raised, a).unwrap() >= q);
            }
        }

        #[test]
        fn adding_a_low_score_can_lower_the_quantile(_x in 0..1u8) {
            // {1, 5} at alpha 0.6 selects rank 2; adding 0 keeps rank 2
            prop_assert_eq!(conformal_quantile(&[1.0, 5.0], 0.6).unwrap(), 5.0);
            prop_assert_eq!(conformal_quantile(&[1.0, 5.0, 0.0], 0.6).unwrap(), 1.0);
        }

        #[test]
        fn quantile_is_an_order_statistic(scores in proptest::collection::vec(-5.0f64..5.0, 1..60), a in 0.01f64..0.99) {
            let q = conformal_quantile(&scores, a).unwrap();
            let k = conformal_rank(scores.len(), a);
            // brute force oracle: smallest value with at least k scores at or below it
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            if k > scores.len() {
                prop_assert_eq!(q, f64::INFINITY);
            } else {
                prop_assert_eq!(q, sorted[k - 1]);
                prop_assert!((k as f64) >= (scores.len() as f64 + 1.0) * (1.0 - a) - 1e-9);
            }
        }

        #[test]
        fn kl_along_path_to_empty(w in proptest::collection::vec(0.01f64..1.0, 4), eps in 1e-4f64..0.5) {
            // f(t) = (1 - t) g + t e_1 with g supported on the occupied classes.
            // d/dt s(f(t)) = ln(t / (eps (1 - t))) + H(g), so the score falls
            // until t* = c / (1 + c) with c = eps exp(-H(g)) and rises after.
            let s: f64 = w.iter().sum();
            let g: Vec<f64> = w.iter().map(|x| x / s).collect();
            let entropy: f64 = -g.iter().map(|p| p * p.ln()).sum::<f64>();
            let c = eps * (-entropy).exp();
            let t_star = c / (1.0 + c);
            let at = |t: f64| {
                let mut f = vec![t];
                f.extend(g.iter().map(|p| (1.0 - t) * p));
                score_kl(&f, eps).unwrap()
            };
            let mut prev = at(t_star);
            for step in 1..=50 {
                let t = t_star + (1.0 - t_star) * step as f64 / 50.0;
                let v = at(t);
                prop_assert!(v > prev);
                prev = v;
            }
            let mut prev = at(t_star);
            for step in 1..=20 {
                let t = t_star * (1.0 - step as f64 / 20.0);
                let v = at(t);
                prop_assert!(v > prev);
                prev = v;
            }
        }

        #[test]
        fn hcp_nesting_in_alpha(seed in 0u64..1000, y in 2u16..=4, a_hi in 0.15f64..0.5, shrink in 0.1f64..1.0) {
            let cal = random_cal(seed, 300, 4);
            let base = cfg(4, &[4], 0.1, 0.3, 0.01);
            let a_lo = 0.1 + (a_hi - 0.1) * shrink * 0.999;
            let mut loose = base.clone();
            loose.alpha_target.insert(y, a_hi);
            let mut tight = base;
            tight.alpha_target.insert(y, a_lo);
            let ml = hcp_calibrate(&cal, &loose).unwrap();
            let mt = hcp_calibrate(&cal, &tight).unwrap();
            prop_assert!(mt.q_s[&y] >= ml.q_s[&y]);
            let test = random_cal(seed + 1, 50, 4);
            for (f, _) in test.iter() {
                if hcp_predict(f, &ml).unwrap().contains(y) {
                    prop_assert!(hcp_predict(f, &mt).unwrap().contains(y));
                }
            }
        }

        #[test]
        fn hcp_gate_consistency(seed in 0u64..1000) {
            let cal = random_cal(seed, 200, 5);
            let model = hcp_calibrate(&cal, &cfg(5, &[4, 5], 0.1, 0.2, 0.01)).unwrap();
            let gate = model.gate_threshold();
            for (f, _) in random_cal(seed + 7, 100, 5).iter() {
                let set = hcp_predict(f, &model).unwrap();
                prop_assert!(!set.contains(EMPTY_CLASS));
                if !set.is_empty() {
                    prop_assert!(score_kl(f, 0.01).unwrap() <= gate);
                }
            }
        }

        #[test]
        fn hcp_with_open_gate_equals_cccp(seed in 0u64..1000, a in 0.05f64..0.5) {
            // every occupied class rare with a negligible occupancy rate: the
            // gate quantiles are +inf and the semantic rates equal the targets
            let cal = random_cal(seed, 300, 4);
            let c = cfg(4, &[2, 3, 4], 1e-12, a, 0.01);
            let model = hcp_calibrate(&cal, &c).unwrap();
            prop_assert!(model.q_o.values().all(|q| q.is_infinite()));
            let mut alpha = c.alpha_target.clone();
            alpha.insert(1, a);
            let q = cccp_calibrate(&cal, &alpha).unwrap();
            for y in 2..=4u16 {
                prop_assert_eq!(model.q_s[&y], q[&y]);
            }
            for (f, _) in random_cal(seed + 3, 100, 4).iter() {
                let mut c_set = cccp_predict(f, &q);
                c_set = ClassSet::from_bits(c_set.bits() & !1);
                prop_assert_eq!(hcp_predict(f, &model).unwrap(), c_set);
            }
        }
    }
}
