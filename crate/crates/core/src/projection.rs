//! Back-projection of pixels along camera rays, exact ray/voxel traversal and
//! construction of probabilistic and binary occupancy grids.
//!
//! A pixel `(h, w)` at depth `z` maps to the camera-frame point
//! `x = (h - c_h) z / f_u`, `y = (w - c_w) z / f_v`, `z`. Rays are therefore
//! parameterized by depth: every crossing reported here is a camera-frame `z`
//! value, not an arc length.

use alloc::vec::Vec;

use crate::depth_uq::interval_mass;
use crate::error::{bail, Result};
use crate::grid::{BinaryOccupancyGrid, CameraIntrinsics, DepthEstimate, GridGeometry, ProbOccupancyGrid};

/// Camera-frame point of pixel `(h, w)` at depth `z`.
pub fn pixel_to_point(h: usize, w: usize, z: f64, intr: &CameraIntrinsics) -> Result<[f64; 3]> {
    if !(z > 0.0) || !z.is_finite() {
        bail!(Domain, "depth must be positive and finite (got {z})");
    }
    if h >= intr.height || w >= intr.width {
        bail!(Domain, "pixel ({h}, {w}) outside {}x{} image", intr.height, intr.width);
    }
    let [a, b, _] = ray_direction(h, w, intr);
    Ok([a * z, b * z, z])
}

/// Direction of the ray through pixel `(h, w)`, scaled so its `z` component is 1.
#[inline]
pub fn ray_direction(h: usize, w: usize, intr: &CameraIntrinsics) -> [f64; 3] {
    [(h as f64 - intr.c_h) / intr.f_u, (w as f64 - intr.c_w) / intr.f_v, 1.0]
}

/// Portion of a ray inside one voxel, bounded by the entry and exit depths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegment {
    pub voxel: [usize; 3],
    pub z_entry: f64,
    pub z_exit: f64,
}

/// Depth interval `[z_in, z_out)` over which the ray `z * dir` lies inside the
/// grid box, clipped to `(0, z_max]`.
pub fn box_interval(dir: [f64; 3], geom: &GridGeometry, z_max: f64) -> Option<(f64, f64)> {
    let mut z_in = 0.0f64;
    let mut z_out = z_max;
    for axis in 0..3 {
        let (lo, hi) = (geom.lower(axis), geom.upper(axis));
        let k = dir[axis];
        if k == 0.0 {
            if !(lo <= 0.0 && 0.0 < hi) {
                return None;
            }
        } else {
            let (a, b) = if k > 0.0 { (lo / k, hi / k) } else { (hi / k, lo / k) };
            z_in = z_in.max(a);
            z_out = z_out.min(b);
        }
    }
    (z_in < z_out).then_some((z_in, z_out))
}

/// Iterator over the voxels crossed by one pixel ray, in order of increasing depth.
///
/// Cells are stepped one boundary at a time; each crossing depth is computed
/// directly from the boundary position, so no error accumulates along the
/// ray. When several axes cross at the same depth they are stepped together,
/// which drops zero-length corner grazes.
#[derive(Debug, Clone)]
pub struct RayWalk {
    geom: GridGeometry,
    dir: [f64; 3],
    cell: [isize; 3],
    step: [isize; 3],
    z: f64,
    z_end: f64,
    done: bool,
}

impl RayWalk {
    pub fn new(dir: [f64; 3], geom: &GridGeometry, z_max: f64) -> Self {
        let mut walk = Self {
            geom: *geom,
            dir,
            cell: [0; 3],
            step: [0; 3],
            z: 0.0,
            z_end: 0.0,
            done: true,
        };
        let Some((z_in, z_out)) = box_interval(dir, geom, z_max) else {
            return walk;
        };
        // An entry point sitting on a cell face belongs to the cell the ray
        // moves into.
        for axis in 0..3 {
            let k = dir[axis];
            walk.step[axis] = if k > 0.0 { 1 } else if k < 0.0 { -1 } else { 0 };
            let c = z_in * k;
            let n = geom.dims[axis] as isize;
            let t = (c - geom.lower(axis)) / geom.voxel_edge;
            let mut cell = libm::floor(t) as isize;
            if k < 0.0 && (geom.lower(axis) + cell as f64 * geom.voxel_edge) >= c {
                cell -= 1;
            }
            walk.cell[axis] = cell.clamp(0, n - 1);
        }
        walk.z = z_in;
        walk.z_end = z_out;
        walk.done = false;
        walk
    }

    #[inline]
    fn next_crossing(&self, axis: usize) -> f64 {
        let k = self.dir[axis];
        if self.step[axis] == 0 {
            return f64::INFINITY;
        }
        let boundary = if k > 0.0 { self.cell[axis] + 1 } else { self.cell[axis] };
        (self.geom.lower(axis) + boundary as f64 * self.geom.voxel_edge) / k
    }
}

impl Iterator for RayWalk {
    type Item = RaySegment;

    fn next(&mut self) -> Option<RaySegment> {
        while !self.done {
            let crossings = [self.next_crossing(0), self.next_crossing(1), self.next_crossing(2)];
            let z_next = crossings[0].min(crossings[1]).min(crossings[2]);
            let z_exit = z_next.min(self.z_end);
            let voxel = [self.cell[0] as usize, self.cell[1] as usize, self.cell[2] as usize];
            let z_entry = self.z;
            if z_next >= self.z_end {
                self.done = true;
            } else {
                for axis in 0..3 {
                    if crossings[axis] == z_next {
                        self.cell[axis] += self.step[axis];
                        if self.cell[axis] < 0 || self.cell[axis] >= self.geom.dims[axis] as isize {
                            self.done = true;
                        }
                    }
                }
                self.z = z_next;
            }
            if z_exit > z_entry {
                return Some(RaySegment { voxel, z_entry, z_exit });
            }
        }
        None
    }
}

/// Ordered voxel segments crossed by the ray of pixel `(h, w)` for depths in `(0, z_max]`.
pub fn traverse_ray(
    h: usize,
    w: usize,
    intr: &CameraIntrinsics,
    geom: &GridGeometry,
    z_max: f64,
) -> Result<Vec<RaySegment>> {
    if !(z_max > 0.0) {
        bail!(Domain, "z_max must be positive (got {z_max})");
    }
    if h >= intr.height || w >= intr.width {
        bail!(Domain, "pixel ({h}, {w}) outside {}x{} image", intr.height, intr.width);
    }
    Ok(RayWalk::new(ray_direction(h, w, intr), geom, z_max).collect())
}

/// Probability mass one valid pixel deposits into each voxel along its ray.
pub fn ray_contributions(
    h: usize,
    w: usize,
    mean: f64,
    sigma: f64,
    intr: &CameraIntrinsics,
    geom: &GridGeometry,
) -> impl Iterator<Item = (usize, f64)> {
    let geom_copy = *geom;
    RayWalk::new(ray_direction(h, w, intr), geom, f64::INFINITY).filter_map(move |seg| {
        let p = interval_mass(seg.z_entry, seg.z_exit, mean, sigma);
        (p > 0.0).then(|| (geom_copy.linear_index(seg.voxel), p))
    })
}

/// Check an estimate against the camera and return its sigma channel.
pub fn checked_sigma<'a>(est: &'a DepthEstimate, intr: &CameraIntrinsics, geom: &GridGeometry) -> Result<&'a [f32]> {
    intr.validate()?;
    geom.validate()?;
    est.check_matches(intr)?;
    est.validate()?;
    match &est.sigma {
        Some(s) => Ok(s),
        None => bail!(Domain, "depth estimate has no sigma channel; build a binary grid instead"),
    }
}

/// Accumulator for probabilistic occupancy. Contributions are summed in f64
/// and clamped to 1 only when the grid is finished.
#[derive(Debug, Clone)]
pub struct ProbAccumulator {
    geometry: GridGeometry,
    sums: Vec<f64>,
}

impl ProbAccumulator {
    pub fn new(geometry: GridGeometry) -> Self {
        Self { geometry, sums: alloc::vec![0.0; geometry.voxel_count()] }
    }

    #[inline]
    pub fn add(&mut self, index: usize, p: f64) {
        self.sums[index] += p;
    }

    pub fn finish(self) -> ProbOccupancyGrid {
        ProbOccupancyGrid {
            geometry: self.geometry,
            values: self.sums.iter().map(|&s| s.min(1.0) as f32).collect(),
        }
    }
}

/// Probabilistic occupancy grid: every voxel receives the Gaussian depth mass
/// of each valid pixel ray over the ray's depth span inside that voxel,
/// summed over rays in raster order and clamped to 1.
pub fn build_prob_grid(est: &DepthEstimate, intr: &CameraIntrinsics, geom: &GridGeometry) -> Result<ProbOccupancyGrid> {
    let sigma = checked_sigma(est, intr, geom)?;
    let mut acc = ProbAccumulator::new(*geom);
    for h in 0..est.height {
        for w in 0..est.width {
            let i = h * est.width + w;
            if !est.valid[i] {
                continue;
            }
            for (index, p) in ray_contributions(h, w, est.mean[i] as f64, sigma[i] as f64, intr, geom) {
                acc.add(index, p);
            }
        }
    }
    Ok(acc.finish())
}

/// Binary occupancy grid: a voxel is 1 iff some valid pixel's back-projected
/// mean-depth point falls inside it.
pub fn build_binary_grid(est: &DepthEstimate, intr: &CameraIntrinsics, geom: &GridGeometry) -> Result<BinaryOccupancyGrid> {
    intr.validate()?;
    geom.validate()?;
    est.check_matches(intr)?;
    est.validate()?;
    let mut grid = BinaryOccupancyGrid::zeros(*geom);
    for h in 0..est.height {
        for w in 0..est.width {
            let i = h * est.width + w;
            if !est.valid[i] {
                continue;
            }
            let point = pixel_to_point(h, w, est.mean[i] as f64, intr)?;
            if let Some(voxel) = geom.voxel_of_point(point) {
                grid.values[geom.linear_index(voxel)] = 1;
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn depth_map(h: usize, w: usize, mean: f32, sigma: Option<f32>) -> DepthEstimate {
        DepthEstimate {
            height: h,
            width: w,
            mean: vec![mean; h * w],
            sigma: sigma.map(|s| vec![s; h * w]),
            valid: vec![true; h * w],
        }
    }

    /// Independent slab test: in-box depth extent of the ray `z * dir`, z in (0, z_max].
    fn slab_extent(dir: [f64; 3], geom: &GridGeometry, z_max: f64) -> f64 {
        let mut lo_z = 0.0f64;
        let mut hi_z = z_max;
        for axis in 0..3 {
            let lo = geom.origin[axis];
            let hi = geom.origin[axis] + geom.dims[axis] as f64 * geom.voxel_edge;
            if dir[axis].abs() < 1e-300 {
                if !(lo <= 0.0 && 0.0 < hi) {
                    return 0.0;
                }
                continue;
            }
            let t1 = lo / dir[axis];
            let t2 = hi / dir[axis];
            lo_z = lo_z.max(t1.min(t2));
            hi_z = hi_z.min(t1.max(t2));
        }
        (hi_z - lo_z).max(0.0)
    }

    #[test]
    fn principal_point_projects_on_axis() {
        let intr = CameraIntrinsics::new(500.0, 500.0, 250.0, 250.0, 500, 500).unwrap();
        assert_eq!(pixel_to_point(250, 250, 10.0, &intr).unwrap(), [0.0, 0.0, 10.0]);
        let p = pixel_to_point(300, 250, 10.0, &intr).unwrap();
        assert_eq!(p, [1.0, 0.0, 10.0]);
        let q = pixel_to_point(300, 250, 20.0, &intr).unwrap();
        assert_eq!([q[0], q[1]], [2.0 * p[0], 2.0 * p[1]]);
        assert!(pixel_to_point(300, 250, 0.0, &intr).is_err());
        assert!(pixel_to_point(300, 250, -1.0, &intr).is_err());
    }

    #[test]
    fn axis_aligned_ray_walks_every_layer() {
        let intr = CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0, 1, 1).unwrap();
        let geom = GridGeometry::new([1, 1, 50], 0.2, [-0.1, -0.1, 0.0]).unwrap();
        let segs = traverse_ray(0, 0, &intr, &geom, 10.0).unwrap();
        assert_eq!(segs.len(), 50);
        for (k, s) in segs.iter().enumerate() {
            assert_eq!(s.voxel, [0, 0, k]);
            assert!((s.z_entry - 0.2 * k as f64).abs() < 1e-12);
            assert!((s.z_exit - 0.2 * (k + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_missing_the_box_is_empty() {
        let intr = CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0, 20, 20).unwrap();
        // Grid sits entirely at negative x; pixel rows >= c_h only reach x >= 0.
        let geom = GridGeometry::new([4, 4, 4], 0.2, [-5.0, -0.4, 1.0]).unwrap();
        assert!(traverse_ray(10, 0, &intr, &geom, 100.0).unwrap().is_empty());
        assert!(traverse_ray(0, 0, &intr, &geom, 0.0).is_err());
    }

    #[test]
    fn z_max_truncates_the_walk() {
        let intr = CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0, 1, 1).unwrap();
        let geom = GridGeometry::new([1, 1, 50], 0.2, [-0.1, -0.1, 0.0]).unwrap();
        let segs = traverse_ray(0, 0, &intr, &geom, 1.0).unwrap();
        assert_eq!(segs.len(), 5);
        assert!((segs[4].z_exit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_one_sigma_voxel() {
        // One voxel spanning z in [mean - sigma, mean + sigma] on the principal ray.
        let intr = CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0, 1, 1).unwrap();
        let geom = GridGeometry::new([1, 1, 1], 0.5, [-0.25, -0.25, 4.75]).unwrap();
        let est = depth_map(1, 1, 5.0, Some(0.25));
        let grid = build_prob_grid(&est, &intr, &geom).unwrap();
        assert!((grid.values[0] as f64 - 0.682_689_492_1).abs() < 1e-7);
    }

    #[test]
    fn overlapping_rays_clamp_at_one() {
        // Two identical pixels, each depositing 0.6 in the voxel.
        let intr = CameraIntrinsics::new(1e6, 1e6, 0.0, 0.0, 1, 2).unwrap();
        let geom = GridGeometry::new([1, 1, 1], 1.0, [-0.5, -0.5, 4.5]).unwrap();
        let one = gaussian_width_for(0.6);
        let est = depth_map(1, 2, 5.0, Some((0.5 / one) as f32));
        let p = crate::depth_uq::gaussian_cdf_interval(4.5, 5.5, 5.0, (0.5 / one) as f32 as f64).unwrap();
        assert!((p - 0.6).abs() < 1e-6);
        let grid = build_prob_grid(&est, &intr, &geom).unwrap();
        assert_eq!(grid.values[0], 1.0);
    }

    /// Half-width in standard deviations whose central mass equals `p`.
    fn gaussian_width_for(p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if crate::depth_uq::gaussian_cdf_interval(-mid, mid, 0.0, 1.0).unwrap() < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn missing_sigma_is_reported() {
        let intr = CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0, 1, 1).unwrap();
        let geom = GridGeometry::new([1, 1, 1], 0.5, [-0.25, -0.25, 4.75]).unwrap();
        let est = depth_map(1, 1, 5.0, None);
        assert!(build_prob_grid(&est, &intr, &geom).is_err());
        assert_eq!(build_binary_grid(&est, &intr, &geom).unwrap().values, vec![1]);
    }

    #[test]
    fn binary_grid_cases() {
        let intr = CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0, 1, 1).unwrap();
        let geom = GridGeometry::new([1, 1, 4], 0.25, [-0.125, -0.125, 1.0]).unwrap();
        let grid = build_binary_grid(&depth_map(1, 1, 1.3, None), &intr, &geom).unwrap();
        assert_eq!(grid.values, vec![0, 1, 0, 0]);
        // exactly on the face between cells 1 and 2
        let grid = build_binary_grid(&depth_map(1, 1, 1.5, None), &intr, &geom).unwrap();
        assert_eq!(grid.values, vec![0, 0, 1, 0]);
        let grid = build_binary_grid(&depth_map(1, 1, 3.0, None), &intr, &geom).unwrap();
        assert_eq!(grid.occupied_count(), 0);
    }

    fn arb_case() -> impl Strategy<Value = (CameraIntrinsics, GridGeometry, usize, usize, f64)> {
        (
            1usize..40,
            1usize..40,
            5.0f64..80.0,
            5.0f64..80.0,
            prop::array::uniform3(1usize..12),
            0.05f64..1.0,
            prop::array::uniform3(-3.0f64..3.0),
            0.5f64..30.0,
        )
            .prop_flat_map(|(hh, ww, fu, fv, dims, edge, origin, zmax)| {
                (0..hh, 0..ww, 0.0..hh as f64, 0.0..ww as f64).prop_map(move |(h, w, ch, cw)| {
                    let intr = CameraIntrinsics::new(fu, fv, ch, cw, hh, ww).unwrap();
                    let geom = GridGeometry::new(dims, edge, origin).unwrap();
                    (intr, geom, h, w, zmax)
                })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn traversal_matches_slab_extent((intr, geom, h, w, zmax) in arb_case()) {
            let segs = traverse_ray(h, w, &intr, &geom, zmax).unwrap();
            let dir = ray_direction(h, w, &intr);
            let total: f64 = segs.iter().map(|s| s.z_exit - s.z_entry).sum();
            prop_assert!((total - slab_extent(dir, &geom, zmax)).abs() <= 1e-9);
            for pair in segs.windows(2) {
                prop_assert_eq!(pair[0].z_exit, pair[1].z_entry);
                prop_assert_ne!(pair[0].voxel, pair[1].voxel);
            }
            let mut seen: Vec<[usize; 3]> = segs.iter().map(|s| s.voxel).collect();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), segs.len());
            for s in &segs {
                prop_assert!(s.z_entry >= 0.0 && s.z_entry < s.z_exit);
                prop_assert!((0..3).all(|a| s.voxel[a] < geom.dims[a]));
                // the segment midpoint lies in the reported voxel
                let zm = 0.5 * (s.z_entry + s.z_exit);
                let p = [dir[0] * zm, dir[1] * zm, zm];
                if let Some(v) = geom.voxel_of_point(p) {
                    prop_assert_eq!(v, s.voxel);
                }
            }
        }

        #[test]
        fn adding_a_pixel_never_lowers_probability(
            means in proptest::collection::vec(0.5f32..8.0, 16),
            sigmas in proptest::collection::vec(0.05f32..2.0, 16),
            mask in proptest::collection::vec(any::<bool>(), 16),
            extra in 0usize..16,
        ) {
            let intr = CameraIntrinsics::new(3.0, 3.0, 2.0, 2.0, 4, 4).unwrap();
            let geom = GridGeometry::new([6, 6, 10], 0.5, [-1.5, -1.5, 0.5]).unwrap();
            let mut est = DepthEstimate { height: 4, width: 4, mean: means, sigma: Some(sigmas), valid: mask };
            est.valid[extra] = false;
            let before = build_prob_grid(&est, &intr, &geom).unwrap();
            est.valid[extra] = true;
            let after = build_prob_grid(&est, &intr, &geom).unwrap();
            for (a, b) in before.values.iter().zip(&after.values) {
                prop_assert!(b >= a);
                prop_assert!((0.0..=1.0).contains(b));
            }
        }
    }
}
