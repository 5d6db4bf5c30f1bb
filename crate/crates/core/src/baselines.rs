//! Ratio-average shaping factors and their arbitrage repair.

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// `beta_k = mean_i y_ik / x_i`.
pub fn ratio_average_fit(dataset: &Dataset) -> Result<Vec<f64>> {
    let x = dataset.x();
    if let Some(i) = x.iter().position(|v| *v == 0.0) {
        return Err(Error::ZeroParentPrice(dataset.case_ids()[i].clone()));
    }
    let n = dataset.n() as f64;
    Ok((0..dataset.k())
        .map(|c| dataset.y().column(c).iter().zip(x).map(|(y, x)| y / x).sum::<f64>() / n)
        .collect())
}

/// `sum_k h_k beta_k`.
pub fn weighted_average(betas: &[f64], weights: &[f64]) -> Result<f64> {
    if betas.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} factors, {} weights",
            betas.len(),
            weights.len()
        )));
    }
    Ok(betas.iter().zip(weights).map(|(b, h)| b * h).sum())
}

/// Divides every factor by the weighted average so that it becomes one.
pub fn rescale_to_no_arbitrage(betas: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let avg = weighted_average(betas, weights)?;
    if !(avg > 0.0) {
        return Err(Error::NonPositiveSlopeSum(avg));
    }
    Ok(betas.iter().map(|b| b / avg).collect())
}
