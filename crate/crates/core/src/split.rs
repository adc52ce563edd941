//! Calibration/test partitions of voxel indices.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::rng::{mix64, SplitMix64};

/// Voxel indices assigned to calibration and test.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

/// True when voxel `index` belongs to the calibration part.
///
/// The decision depends only on `(seed, index)`: the voxel goes to
/// calibration iff `mix64(seed ^ mix64(index))`, read as a uniform via its top
/// 53 bits, is below `fraction`.
#[inline]
pub fn is_calibration(seed: u64, index: usize, fraction: f64) -> bool {
    let h = mix64(seed ^ mix64(index as u64));
    ((h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)) < fraction
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        bail!(Config, "split fraction must lie in (0, 1) (got {fraction})");
    }
    Ok(())
}

/// Per-voxel Bernoulli split of `0..n` with calibration probability `fraction`.
pub fn hash_split(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    check_fraction(fraction)?;
    let mut split = Split::default();
    for i in 0..n {
        if is_calibration(seed, i, fraction) {
            split.calibration.push(i);
        } else {
            split.test.push(i);
        }
    }
    Ok(split)
}

/// Disjoint uniform samples of exactly `n_cal` and `n_test` indices from `0..n`,
/// each returned in increasing order.
pub fn sample_split(n: usize, n_cal: usize, n_test: usize, seed: u64) -> Result<Split> {
    if n_cal + n_test > n {
        bail!(Config, "cannot draw {n_cal} + {n_test} voxels from {n}");
    }
    let mut rng = SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates over the first n_cal + n_test positions
    for i in 0..n_cal + n_test {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    let mut calibration = idx[..n_cal].to_vec();
    let mut test = idx[n_cal..n_cal + n_test].to_vec();
    calibration.sort_unstable();
    test.sort_unstable();
    Ok(Split { calibration, test })
}
