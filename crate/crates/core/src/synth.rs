//! Synthetic street scenes: class-imbalanced label grids, rendered noisy depth
//! maps and a miscalibrated surrogate classifier.
//!
//! Every function is a pure function of its inputs and seed; see [`crate::rng`]
//! for the random stream.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::conformal::ClassRates;
use crate::error::{bail, Result};
use crate::grid::{CameraIntrinsics, DepthEstimate, GridGeometry, GroundTruthDepth, LabelGrid, SoftmaxGrid, EMPTY_CLASS};
use crate::projection::{ray_direction, RayWalk};
use crate::rng::SplitMix64;

/// Labels of the default scene.
pub mod classes {
    pub const EMPTY: u16 = 1;
    pub const GROUND: u16 = 2;
    pub const BUILDING: u16 = 3;
    pub const CAR: u16 = 4;
    pub const PERSON: u16 = 5;
    pub const NAMES: [&str; 5] = ["empty", "ground", "building", "car", "person"];
}

/// Where box objects may stand, relative to the ground strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Placement {
    /// Footprint inside the ground strip.
    Road,
    /// Footprint outside the ground strip.
    Roadside,
    Anywhere,
}

/// Shape of the objects a template places.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "shape", rename_all = "snake_case"))]
pub enum Shape {
    /// A strip of the bottom layer centred laterally and running the full
    /// depth of the grid; its width follows from the class's target fraction.
    GroundStrip,
    /// Axis-aligned boxes standing on the layer above the bottom one. Sizes
    /// are `[height, lateral, depth]` in meters.
    Box { size_min: [f64; 3], size_max: [f64; 3], placement: Placement },
}

/// Objects of one class.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectTemplate {
    pub class: u16,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub shape: Shape,
}

/// Description of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneSpec {
    pub geometry: GridGeometry,
    pub class_count: usize,
    /// Target voxel fraction per occupied class; the empty class takes the rest.
    pub class_mix: ClassRates,
    /// Templates are placed in order; ground strips should come first.
    pub templates: Vec<ObjectTemplate>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

/// Relative tolerance of realized class fractions around their targets.
pub const MIX_TOLERANCE: f64 = 0.2;

impl SceneSpec {
    /// Street scene on the desk-scale grid: 93% empty, a ground strip,
    /// roadside buildings, cars on the road and 0.7% persons.
    pub fn desk_default(seed: u64) -> Self {
        use classes::*;
        let box_t = |class, lo: [f64; 3], hi: [f64; 3], placement| ObjectTemplate {
            class,
            shape: Shape::Box { size_min: lo, size_max: hi, placement },
        };
        Self {
            geometry: GridGeometry::desk_default(),
            class_count: 5,
            class_mix: [(GROUND, 0.04), (BUILDING, 0.015), (CAR, 0.008), (PERSON, 0.007)].into_iter().collect(),
            templates: vec![
                ObjectTemplate { class: GROUND, shape: Shape::GroundStrip },
                box_t(BUILDING, [1.6, 0.6, 1.0], [2.8, 1.4, 3.0], Placement::Roadside),
                box_t(CAR, [0.8, 0.8, 1.2], [1.2, 1.2, 2.0], Placement::Road),
                box_t(PERSON, [1.4, 0.2, 0.2], [1.8, 0.4, 0.4], Placement::Anywhere),
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let m = self.class_count;
        if !(2..=crate::conformal::MAX_CLASSES).contains(&m) {
            bail!(Config, "class count {m} outside 2..={}", crate::conformal::MAX_CLASSES);
        }
        let mut total = 0.0;
        for (&y, &f) in &self.class_mix {
            if y < 2 || y as usize > m {
                bail!(Config, "class_mix entry for class {y} outside 2..={m}");
            }
            if !(0.0..=1.0).contains(&f) {
                bail!(Config, "class_mix fraction {f} for class {y} outside [0, 1]");
            }
            total += f;
        }
        if total > 1.0 + 1e-12 {
            bail!(Config, "occupied class fractions sum to {total} > 1");
        }
        for t in &self.templates {
            if t.class < 2 || t.class as usize > m {
                bail!(Config, "template class {} outside 2..={m}", t.class);
            }
            if let Shape::Box { size_min, size_max, .. } = &t.shape {
                for a in 0..3 {
                    if !(size_min[a] > 0.0 && size_min[a] <= size_max[a] && size_max[a].is_finite()) {
                        bail!(Config, "template for class {}: size range {size_min:?}..{size_max:?} is invalid", t.class);
                    }
                }
            }
        }
        for (&y, &f) in &self.class_mix {
            if f > 0.0 && !self.templates.iter().any(|t| t.class == y) {
                bail!(Config, "class {y} has a target fraction but no template");
            }
        }
        Ok(())
    }
}

/// Lateral cell range `[lo, hi)` of the ground strip.
fn strip_columns(geom: &GridGeometry, target_voxels: f64) -> (usize, usize) {
    let [_, nv, nd] = geom.dims;
    let width = (libm::round(target_voxels / nd as f64) as usize).clamp(0, nv);
    let lo = (nv - width) / 2;
    (lo, lo + width)
}

/// Label grid with the spec's objects placed until each class reaches its
/// target fraction. Objects only claim empty voxels, so later templates never
/// overwrite earlier ones.
pub fn generate_scene(spec: &SceneSpec) -> Result<LabelGrid> {
    spec.validate()?;
    let geom = spec.geometry;
    let [nu, nv, nd] = geom.dims;
    let n = geom.voxel_count() as f64;
    let mut world = LabelGrid::filled(geom, spec.class_count, EMPTY_CLASS);
    let mut rng = SplitMix64::substream(spec.seed, 0x5CE7E);
    let mut strip = (0, 0);
    let mut placed: BTreeMap<u16, usize> = BTreeMap::new();

    for t in &spec.templates {
        let target = spec.class_mix.get(&t.class).copied().unwrap_or(0.0) * n;
        if target <= 0.0 {
            continue;
        }
        let have = placed.entry(t.class).or_insert(0);
        match &t.shape {
            Shape::GroundStrip => {
                strip = strip_columns(&geom, target - *have as f64);
                for v in strip.0..strip.1 {
                    for d in 0..nd {
                        let vox = [nu - 1, v, d];
                        if world.get(vox) == EMPTY_CLASS {
                            world.set(vox, t.class);
                            *have += 1;
                        }
                    }
                }
            }
            Shape::Box { size_min, size_max, placement } => {
                if nu < 2 {
                    bail!(Generation, "grid has a single layer; boxes need a layer above the ground");
                }
                let hi = target * (1.0 + MIX_TOLERANCE);
                let mut failures = 0;
                while (*have as f64) < target && failures < 2000 {
                    let cells: [usize; 3] = core::array::from_fn(|a| {
                        let s = rng.uniform(size_min[a], size_max[a]);
                        (libm::round(s / geom.voxel_edge) as usize).max(1)
                    });
                    let [h, w, l] = cells;
                    let (v_lo, v_hi) = match placement {
                        Placement::Road => (strip.0, strip.1),
                        Placement::Roadside | Placement::Anywhere => (0, nv),
                    };
                    if h > nu - 1 || w > v_hi.saturating_sub(v_lo) || l > nd {
                        failures += 1;
                        continue;
                    }
                    let v0 = v_lo + rng.below(v_hi - v_lo - w + 1);
                    let d0 = rng.below(nd - l + 1);
                    if *placement == Placement::Roadside && v0 < strip.1 && v0 + w > strip.0 {
                        failures += 1;
                        continue;
                    }
                    // standing on the ground level: top layer index is smaller
                    let u_hi = nu - 1;
                    let u_lo = u_hi - h;
                    let mut free = Vec::new();
                    for u in u_lo..u_hi {
                        for v in v0..v0 + w {
                            for d in d0..d0 + l {
                                if world.get([u, v, d]) == EMPTY_CLASS {
                                    free.push([u, v, d]);
                                }
                            }
                        }
                    }
                    if free.is_empty() || *have as f64 + free.len() as f64 > hi {
                        failures += 1;
                        continue;
                    }
                    for vox in free {
                        world.set(vox, t.class);
                        *have += 1;
                    }
                }
            }
        }
    }

    for (&y, &f) in &spec.class_mix {
        let got = placed.get(&y).copied().unwrap_or(0) as f64;
        let target = f * n;
        if target > 0.0 && (got < target * (1.0 - MIX_TOLERANCE) || got > target * (1.0 + MIX_TOLERANCE)) {
            bail!(
                Generation,
                "class {y}: placed {got} voxels, target {target:.0}; templates do not fit the grid"
            );
        }
    }
    Ok(world)
}

/// Affine depth noise `sigma(d) = a + b d`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseModel {
    pub a: f64,
    pub b: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a + self.b > 0.0 && (self.a + self.b).is_finite()) {
            bail!(Config, "noise model needs a >= 0, b >= 0, a + b > 0 (got a={}, b={})", self.a, self.b);
        }
        Ok(())
    }

    pub fn sigma(&self, depth: f64) -> f64 {
        self.a + self.b * depth
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { a: 0.1, b: 0.02 }
    }
}

/// True depth of the first occupied voxel along every pixel ray and a noisy
/// estimate whose sigma is the noise model itself. Rays that hit nothing, or
/// start inside an occupied voxel, give invalid pixels.
pub fn render_depth(
    world: &LabelGrid,
    intr: &CameraIntrinsics,
    geom: &GridGeometry,
    noise: &NoiseModel,
    seed: u64,
) -> Result<(GroundTruthDepth, DepthEstimate)> {
    intr.validate()?;
    world.validate()?;
    noise.validate()?;
    if world.geometry.dims != geom.dims {
        bail!(Validation, "world dims {:?} differ from geometry dims {:?}", world.geometry.dims, geom.dims);
    }
    let (hh, ww) = (intr.height, intr.width);
    let mut truth = vec![0.0f32; hh * ww];
    let mut mean = vec![0.0f32; hh * ww];
    let mut sigma = vec![0.0f32; hh * ww];
    let mut valid = vec![false; hh * ww];
    let mut rng = SplitMix64::substream(seed, 0xDE97);
    for h in 0..hh {
        for w in 0..ww {
            let i = h * ww + w;
            let hit = RayWalk::new(ray_direction(h, w, intr), geom, f64::INFINITY)
                .find(|s| world.labels[geom.linear_index(s.voxel)] != EMPTY_CLASS);
            let Some(seg) = hit else { continue };
            if !(seg.z_entry > 0.0) {
                continue;
            }
            let d = seg.z_entry as f32 as f64;
            let s = noise.sigma(d);
            // a non-positive estimate is redrawn; at desk depths this is
            // many standard deviations away
            let est = loop {
                let e = d + s * rng.normal();
                if e > 0.0 && e as f32 > 0.0 {
                    break e;
                }
            };
            truth[i] = d as f32;
            mean[i] = est as f32;
            sigma[i] = (s as f32).max(f32::MIN_POSITIVE);
            valid[i] = true;
        }
    }
    Ok((
        GroundTruthDepth { height: hh, width: ww, depth: truth, valid: valid.clone() },
        DepthEstimate { height: hh, width: ww, mean, sigma: Some(sigma), valid },
    ))
}

/// Surrogate classifier. For a voxel of true class `i` a focus class `j` is
/// drawn from `confusion[i]`, then a Dirichlet vector with concentrations
/// `sharpness * [k = j] + residual[i][k]` is sampled and sharpened or
/// flattened as `p^(1/temperature)`. The residual row shapes where a class's
/// leftover probability goes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassifierSpec {
    /// Row-stochastic `M x M` matrix; row `i - 1` belongs to true label `i`.
    pub confusion: Vec<Vec<f64>>,
    pub sharpness: f64,
    /// Positive `M x M` concentrations, row per true label.
    pub residual: Vec<Vec<f64>>,
    pub temperature: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

impl ClassifierSpec {
    /// Classifier for the default five-class scene. Empty and ground are
    /// recognized reliably, persons are often mistaken for empty space. An
    /// empty voxel's leftover mass goes mostly to ground, an occupied voxel's
    /// is spread over the occupied classes.
    pub fn desk_default(seed: u64) -> Self {
        Self {
            confusion: vec![
                vec![0.96, 0.02, 0.01, 0.005, 0.005],
                vec![0.03, 0.94, 0.01, 0.01, 0.01],
                vec![0.04, 0.01, 0.92, 0.02, 0.01],
                vec![0.10, 0.03, 0.05, 0.78, 0.04],
                vec![0.30, 0.05, 0.05, 0.15, 0.45],
            ],
            sharpness: 6.0,
            residual: vec![
                vec![0.3, 2.0, 0.1, 0.1, 0.1],
                vec![0.6, 0.8, 0.8, 0.8, 0.8],
                vec![0.6, 0.8, 0.8, 0.8, 0.8],
                vec![0.6, 0.8, 0.8, 0.8, 0.8],
                vec![0.6, 0.8, 0.8, 0.8, 0.8],
            ],
            temperature: 1.5,
            seed,
        }
    }

    /// Identity confusion with the given sharpness and a flat residual.
    pub fn identity(class_count: usize, sharpness: f64, seed: u64) -> Self {
        let confusion = (0..class_count)
            .map(|i| (0..class_count).map(|k| if i == k { 1.0 } else { 0.0 }).collect())
            .collect();
        let residual = vec![vec![0.05; class_count]; class_count];
        Self { confusion, sharpness, residual, temperature: 1.0, seed }
    }

    pub fn class_count(&self) -> usize {
        self.confusion.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.confusion.len();
        if !(2..=crate::conformal::MAX_CLASSES).contains(&m) {
            bail!(Config, "confusion matrix needs 2..={} classes (got {m})", crate::conformal::MAX_CLASSES);
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.len() != m {
                bail!(Config, "confusion row {} has {} entries, expected {m}", i + 1, row.len());
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                bail!(Config, "confusion row {} has a negative entry", i + 1);
            }
            let s: f64 = row.iter().sum();
            if libm::fabs(s - 1.0) > 1e-9 {
                bail!(Config, "confusion row {} sums to {s}", i + 1);
            }
        }
        if self.residual.len() != m || self.residual.iter().any(|r| r.len() != m) {
            bail!(Config, "residual must be {m} x {m}");
        }
        if self.residual.iter().flatten().any(|&a| !(a > 0.0 && a.is_finite())) {
            bail!(Config, "residual concentrations must be positive and finite");
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            bail!(Config, "sharpness must be positive (got {})", self.sharpness);
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            bail!(Config, "temperature must be positive (got {})", self.temperature);
        }
        Ok(())
    }
}

/// Softmax vector for one voxel of label `y`.
fn classify_voxel(spec: &ClassifierSpec, y: u16, rng: &mut SplitMix64, out: &mut [f32]) {
    let row = &spec.confusion[y as usize - 1];
    let residual = &spec.residual[y as usize - 1];
    let j = rng.categorical(row);
    let mut p = [0.0f64; crate::conformal::MAX_CLASSES];
    let p = &mut p[..row.len()];
    let mut sum = 0.0;
    for (k, pk) in p.iter_mut().enumerate() {
        let a = if k == j { spec.sharpness } else { 0.0 } + residual[k];
        *pk = rng.gamma(a);
        sum += *pk;
    }
    if !(sum > 0.0) {
        p.fill(0.0);
        p[j] = 1.0;
        sum = 1.0;
    }
    // temperature on log-probabilities, shifted by the maximum for range
    let inv_t = 1.0 / spec.temperature;
    let top = p.iter().copied().fold(0.0f64, f64::max) / sum;
    let mut z = 0.0;
    for pk in p.iter_mut() {
        *pk = if *pk > 0.0 { libm::pow(*pk / sum / top, inv_t) } else { 0.0 };
        z += *pk;
    }
    for (o, &pk) in out.iter_mut().zip(p.iter()) {
        *o = (pk / z) as f32;
    }
}

/// Softmax grid drawn independently per voxel given its label, in voxel order.
pub fn synth_classifier(world: &LabelGrid, spec: &ClassifierSpec) -> Result<SoftmaxGrid> {
    spec.validate()?;
    world.validate()?;
    let m = spec.class_count();
    if m != world.class_count {
        bail!(Validation, "classifier has {m} classes, world has {}", world.class_count);
    }
    let mut rng = SplitMix64::substream(spec.seed, 0xC1A55);
    let mut probs = vec![0.0f32; world.labels.len() * m];
    for (out, &y) in probs.chunks_exact_mut(m).zip(&world.labels) {
        classify_voxel(spec, y, &mut rng, out);
    }
    Ok(SoftmaxGrid { geometry: world.geometry, class_count: m, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::check_softmax;

    fn small_geom() -> GridGeometry {
        GridGeometry::new([8, 16, 16], 0.2, [-0.8, -1.6, 0.0]).unwrap()
    }

    #[test]
    fn only_empty_gives_all_ones() {
        let spec = SceneSpec { class_mix: ClassRates::new(), templates: vec![], ..SceneSpec::desk_default(1) };
        let world = generate_scene(&spec).unwrap();
        assert!(world.labels.iter().all(|&l| l == 1));
        let mut zero = SceneSpec::desk_default(1);
        zero.class_mix.values_mut().for_each(|f| *f = 0.0);
        assert!(generate_scene(&zero).unwrap().labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn default_scene_mix() {
        for seed in 0..5 {
            let spec = SceneSpec::desk_default(seed);
            let world = generate_scene(&spec).unwrap();
            assert_eq!(world, generate_scene(&spec).unwrap());
            let counts = world.class_counts();
            let n = world.labels.len() as f64;
            let empty = counts[0] as f64 / n;
            assert!((0.85..=0.97).contains(&empty), "empty fraction {empty}");
            for (&y, &f) in &spec.class_mix {
                let got = counts[y as usize - 1] as f64 / n;
                assert!((got - f).abs() <= 0.2 * f, "class {y}: {got} vs {f}");
            }
            // ground sits on the bottom layer only
            let [nu, nv, nd] = spec.geometry.dims;
            for u in 0..nu {
                for v in 0..nv {
                    for d in 0..nd {
                        if world.get([u, v, d]) == classes::GROUND {
                            assert_eq!(u, nu - 1);
                        }
                    }
                }
            }
        }
        assert_ne!(generate_scene(&SceneSpec::desk_default(0)).unwrap(), generate_scene(&SceneSpec::desk_default(1)).unwrap());
    }

    #[test]
    fn oversized_templates_fail() {
        let mut spec = SceneSpec::desk_default(0);
        spec.templates[1] = ObjectTemplate {
            class: classes::BUILDING,
            shape: Shape::Box { size_min: [10.0, 1.0, 1.0], size_max: [10.0, 1.0, 1.0], placement: Placement::Anywhere },
        };
        assert!(matches!(generate_scene(&spec), Err(crate::Error::Generation(_))));
        let mut bad = SceneSpec::desk_default(0);
        bad.class_mix.insert(3, 0.99);
        assert!(matches!(generate_scene(&bad), Err(crate::Error::Config(_))));
    }

    fn wall_world(geom: GridGeometry, d: usize) -> LabelGrid {
        let mut world = LabelGrid::filled(geom, 3, 1);
        for u in 0..geom.dims[0] {
            for v in 0..geom.dims[1] {
                world.set([u, v, d], 2);
            }
        }
        world
    }

    #[test]
    fn render_empty_world_is_invalid() {
        let geom = small_geom();
        let intr = CameraIntrinsics::new(16.0, 16.0, 8.0, 8.0, 16, 16).unwrap();
        let world = LabelGrid::filled(geom, 3, 1);
        let (gt, est) = render_depth(&world, &intr, &geom, &NoiseModel::default(), 0).unwrap();
        assert_eq!(gt.valid.iter().filter(|&&v| v).count(), 0);
        assert_eq!(est.valid_count(), 0);
        let bad = NoiseModel { a: 0.0, b: 0.0 };
        assert!(render_depth(&world, &intr, &geom, &bad, 0).is_err());
    }

    #[test]
    fn render_tiny_noise_matches_truth() {
        let geom = small_geom();
        let intr = CameraIntrinsics::new(16.0, 16.0, 8.0, 8.0, 16, 16).unwrap();
        let world = wall_world(geom, 10);
        let (gt, est) = render_depth(&world, &intr, &geom, &NoiseModel { a: 1e-9, b: 0.0 }, 0).unwrap();
        assert!(est.valid_count() > 0);
        for i in 0..gt.depth.len() {
            if gt.valid[i] {
                assert!((gt.depth[i] - 2.0).abs() < 1e-6);
                assert!((est.mean[i] - gt.depth[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn render_residuals_are_standard_normal() {
        // wall at z = 10 filling the lateral extent of a tall grid
        let geom = GridGeometry::new([102, 102, 51], 0.2, [-10.2, -10.2, 0.0]).unwrap();
        let intr = CameraIntrinsics::desk_default();
        let world = wall_world(geom, 50);
        let noise = NoiseModel { a: 0.2, b: 0.0 };
        let (gt, est) = render_depth(&world, &intr, &geom, &noise, 42).unwrap();
        let sigma = est.sigma.as_ref().unwrap();
        let r: Vec<f64> = (0..gt.depth.len())
            .filter(|&i| gt.valid[i])
            .map(|i| (est.mean[i] as f64 - gt.depth[i] as f64) / sigma[i] as f64)
            .collect();
        let p = r.len() as f64;
        assert_eq!(r.len(), 64 * 64);
        let mean = r.iter().sum::<f64>() / p;
        let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / p;
        assert!(mean.abs() <= 3.0 / p.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() <= 5.0 / p.sqrt(), "var {var}");
    }

    #[test]
    fn classifier_outputs_are_softmax() {
        let world = generate_scene(&SceneSpec::desk_default(3)).unwrap();
        let spec = ClassifierSpec::desk_default(3);
        let grid = synth_classifier(&world, &spec).unwrap();
        for row in grid.probs.chunks_exact(5) {
            check_softmax(row).unwrap();
        }
        assert_eq!(grid, synth_classifier(&world, &spec).unwrap());
    }

    #[test]
    fn sharp_identity_classifier_is_exact() {
        let world = generate_scene(&SceneSpec::desk_default(2)).unwrap();
        let grid = synth_classifier(&world, &ClassifierSpec::identity(5, 1e6, 2)).unwrap();
        assert_eq!(grid.argmax_labels().labels, world.labels);
    }

    #[test]
    fn uniform_confusion_is_chance_level() {
        let geom = small_geom();
        let mut world = LabelGrid::filled(geom, 4, 1);
        for (i, l) in world.labels.iter_mut().enumerate() {
            *l = 1 + (i % 4) as u16;
        }
        let mut spec = ClassifierSpec::identity(4, 5.0, 8);
        spec.confusion = vec![vec![0.25; 4]; 4];
        spec.residual = vec![vec![0.5; 4]; 4];
        let grid = synth_classifier(&world, &spec).unwrap();
        let pred = grid.argmax_labels();
        let n = world.labels.len() as f64;
        let acc = pred.labels.iter().zip(&world.labels).filter(|(a, b)| a == b).count() as f64 / n;
        let se = (0.25f64 * 0.75 / n).sqrt();
        assert!((acc - 0.25).abs() <= 3.0 * se, "accuracy {acc}");
    }

    #[test]
    fn temperature_flattens_without_moving_argmax() {
        let world = generate_scene(&SceneSpec::desk_default(4)).unwrap();
        let mut spec = ClassifierSpec::desk_default(4);
        spec.temperature = 1.0;
        let t1 = synth_classifier(&world, &spec).unwrap();
        spec.temperature = 2.0;
        let t2 = synth_classifier(&world, &spec).unwrap();
        assert_eq!(t1.argmax_labels(), t2.argmax_labels());
        for (a, b) in t1.probs.chunks_exact(5).zip(t2.probs.chunks_exact(5)) {
            let ma = a.iter().copied().fold(0.0f32, f32::max);
            let mb = b.iter().copied().fold(0.0f32, f32::max);
            assert!(mb < ma);
        }
    }

    #[test]
    fn classifier_validation() {
        let mut spec = ClassifierSpec::desk_default(0);
        spec.confusion[0][0] = 0.5;
        assert!(spec.validate().is_err());
        let mut spec = ClassifierSpec::desk_default(0);
        spec.temperature = 0.0;
        assert!(spec.validate().is_err());
        let world = LabelGrid::filled(small_geom(), 3, 1);
        assert!(synth_classifier(&world, &ClassifierSpec::desk_default(0)).is_err());
    }
}
