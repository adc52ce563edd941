//! Multi-threaded variants of the core builders. Results are bit-identical to
//! the sequential versions for any thread count.

use rayon::prelude::*;
use uqvox_core::conformal::{HcpModel, HcpPredictor, PredictionSet};
use uqvox_core::projection::{checked_sigma, ray_contributions, ProbAccumulator};
use uqvox_core::{BinaryOccupancyGrid, CameraIntrinsics, DepthEstimate, GridGeometry, ProbOccupancyGrid, SoftmaxGrid};

// image rows traced per parallel batch
const ROWS_PER_BATCH: usize = 16;

/// Probabilistic occupancy grid with rays traced in parallel. Contributions
/// are added to the grid in raster order, so the floating-point sums match
/// [`uqvox_core::projection::build_prob_grid`] exactly.
pub fn build_prob_grid(
    est: &DepthEstimate,
    intr: &CameraIntrinsics,
    geom: &GridGeometry,
) -> uqvox_core::Result<ProbOccupancyGrid> {
    let sigma = checked_sigma(est, intr, geom)?;
    let mut acc = ProbAccumulator::new(*geom);
    let width = est.width;
    for start in (0..est.height).step_by(ROWS_PER_BATCH) {
        let rows = start..(start + ROWS_PER_BATCH).min(est.height);
        let traced: Vec<Vec<(usize, f64)>> = rows
            .flat_map(|h| (0..width).map(move |w| (h, w)))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(h, w)| {
                let i = h * width + w;
                if !est.valid[i] {
                    return Vec::new();
                }
                ray_contributions(h, w, est.mean[i] as f64, sigma[i] as f64, intr, geom).collect()
            })
            .collect();
        for (index, p) in traced.into_iter().flatten() {
            acc.add(index, p);
        }
    }
    Ok(acc.finish())
}

/// HCP occupancy and prediction sets for every voxel, computed in parallel.
pub fn hcp_grid_predict(
    grid: &SoftmaxGrid,
    model: &HcpModel,
) -> uqvox_core::Result<(BinaryOccupancyGrid, Vec<PredictionSet>)> {
    let indices: Vec<usize> = (0..grid.voxel_count()).collect();
    let (occ, sets) = hcp_predict_indices(grid, model, &indices)?;
    Ok((BinaryOccupancyGrid { geometry: grid.geometry, values: occ }, sets))
}

/// HCP occupancy decisions and sets for the listed voxels.
pub fn hcp_predict_indices(
    grid: &SoftmaxGrid,
    model: &HcpModel,
    indices: &[usize],
) -> uqvox_core::Result<(Vec<u8>, Vec<PredictionSet>)> {
    grid.validate()?;
    if grid.class_count != model.class_count {
        return Err(uqvox_core::Error::Validation(format!(
            "model has {} classes, grid has {}",
            model.class_count, grid.class_count
        )));
    }
    let predictor = HcpPredictor::new(model);
    let gate = model.gate_threshold();
    let out: Vec<(u8, PredictionSet)> = indices
        .par_iter()
        .map(|&i| {
            let f = grid.vector(i);
            let occupied = uqvox_core::conformal::score_kl(f, model.epsilon).is_ok_and(|s| s <= gate);
            (occupied as u8, predictor.predict(f))
        })
        .collect();
    Ok(out.into_iter().unzip())
}
