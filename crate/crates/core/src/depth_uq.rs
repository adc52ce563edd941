//! Gaussian depth uncertainty: interval probabilities and the direct-modeling
//! KL loss between a Gaussian depth estimate and a Dirac ground truth.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::grid::{DepthEstimate, GroundTruthDepth};

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Lower tail `P(Z <= x)` of the standard normal.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `P(Z > x)` of the standard normal.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Probability mass of `N(mean, sigma^2)` on `[z_lo, z_hi]`.
///
/// Bounds may be infinite. Both tails are evaluated through `erfc` on the side
/// where the argument is positive, so tiny tail masses keep full relative
/// precision instead of cancelling against 1.
pub fn gaussian_cdf_interval(z_lo: f64, z_hi: f64, mean: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        bail!(Domain, "sigma must be positive and finite (got {sigma})");
    }
    if z_lo.is_nan() || z_hi.is_nan() || z_lo > z_hi {
        bail!(Domain, "interval bounds out of order: [{z_lo}, {z_hi}]");
    }
    Ok(interval_mass(z_lo, z_hi, mean, sigma))
}

/// Unchecked form of [`gaussian_cdf_interval`]; callers guarantee
/// `sigma > 0` and `z_lo <= z_hi`.
#[inline]
pub(crate) fn interval_mass(z_lo: f64, z_hi: f64, mean: f64, sigma: f64) -> f64 {
    if z_lo == z_hi {
        return 0.0;
    }
    let a = (z_lo - mean) / sigma;
    let b = (z_hi - mean) / sigma;
    let p = if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    };
    p.clamp(0.0, 1.0)
}

/// Loss value and gradients with respect to the estimated mean and sigma.
#[derive(Debug, Clone, PartialEq)]
pub struct KlLossReport {
    pub loss: f64,
    pub grad_mean: Vec<f64>,
    pub grad_sigma: Vec<f64>,
    /// Number of pixels that entered the average.
    pub valid_pixels: usize,
}

/// KL divergence between per-pixel Gaussians `N(mean, sigma^2)` and Dirac
/// ground truth, averaged over pixels where both maps are valid.
///
/// Gradients are zero on excluded pixels.
pub fn kl_loss(gt: &GroundTruthDepth, est: &DepthEstimate) -> Result<KlLossReport> {
    if gt.height != est.height || gt.width != est.width {
        bail!(
            Domain,
            "ground truth is {}x{} but estimate is {}x{}",
            gt.height, gt.width, est.height, est.width
        );
    }
    let Some(sigma) = &est.sigma else {
        bail!(Domain, "depth estimate carries no sigma channel");
    };
    let n = gt.height * gt.width;
    let depth: Vec<f64> = gt.depth.iter().map(|&v| v as f64).collect();
    let mean: Vec<f64> = est.mean.iter().map(|&v| v as f64).collect();
    let sigma: Vec<f64> = sigma.iter().map(|&v| v as f64).collect();
    let valid: Vec<bool> = (0..n).map(|i| gt.valid[i] && est.valid[i]).collect();
    kl_loss_values(&depth, &mean, &sigma, &valid)
}

/// Slice form of [`kl_loss`] in full precision.
pub fn kl_loss_values(depth: &[f64], mean: &[f64], sigma: &[f64], valid: &[bool]) -> Result<KlLossReport> {
    let n = depth.len();
    if mean.len() != n || sigma.len() != n || valid.len() != n {
        bail!(Domain, "input lengths differ");
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        bail!(Domain, "no valid pixels");
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut grad_mean = vec![0.0; n];
    let mut grad_sigma = vec![0.0; n];
    for i in (0..n).filter(|&i| valid[i]) {
        let s = sigma[i];
        if !(s > 0.0) || !s.is_finite() {
            bail!(Domain, "pixel {i}: sigma {s} must be positive");
        }
        let r = depth[i] - mean[i];
        let s2 = s * s;
        loss += r * r / (2.0 * s2) + libm::log(s);
        grad_mean[i] = -r / s2 * scale;
        grad_sigma[i] = (1.0 / s - r * r / (s2 * s)) * scale;
    }
    Ok(KlLossReport { loss: loss * scale, grad_mean, grad_sigma, valid_pixels: count })
}
