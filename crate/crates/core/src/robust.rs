//! Scalar robust-statistics primitives: location, scale and the bounded
//! loss / downweighting functions used by the estimator.
//!
//! The loss `rho`, its derivative `psi = rho'` and the rescaled weight
//! `omega(x) = psi(x) / x` are kept as separate functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal-consistency factor for the median absolute deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;

/// Asymptotic normal-consistency constant of Qn.
pub const QN_CONSISTENCY: f64 = 2.2219;

/// Standard-normal 0.95, 0.975 and 0.99 quantiles.
pub const HAMPEL_A: f64 = 1.6449;
pub const HAMPEL_B: f64 = 1.9600;
pub const HAMPEL_R: f64 = 2.3263;

/// Tukey bisquare constant giving 95% Gaussian efficiency.
pub const BISQUARE_K: f64 = 4.685;

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Sample median; even-length samples average the two central order statistics.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(median_of_sorted(&sorted_finite(values)?))
}

/// `consistency * median(|v - median(v)|)`.
pub fn mad_scale(values: &[f64], consistency: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::DegenerateSample { needed: 2, got: values.len() });
    }
    let center = median(values)?;
    let deviations: Vec<f64> = values.iter().map(|v| (v - center).abs()).collect();
    Ok(consistency * median(&deviations)?)
}

/// Finite-sample correction applied on top of [`QN_CONSISTENCY`].
pub fn qn_correction(n: usize) -> f64 {
    const SMALL: [f64; 8] = [0.399, 0.994, 0.512, 0.844, 0.611, 0.857, 0.669, 0.872];
    match n {
        0 | 1 => 1.0,
        2..=9 => SMALL[n - 2],
        _ if n % 2 == 1 => n as f64 / (n as f64 + 1.4),
        _ => n as f64 / (n as f64 + 3.8),
    }
}

/// 1-based rank `C(h, 2)`, `h = floor(n/2) + 1`, of the pairwise difference Qn selects.
pub fn qn_rank(n: usize) -> usize {
    let h = n / 2 + 1;
    h * (h - 1) / 2
}

/// Number of pairs `i < j` with `sorted[j] - sorted[i] <= t`.
fn pairs_within(sorted: &[f64], t: f64) -> usize {
    let mut count = 0;
    let mut lo = 0;
    for (j, &hi) in sorted.iter().enumerate() {
        while hi - sorted[lo] > t {
            lo += 1;
        }
        count += j - lo;
    }
    count
}

/// k-th smallest (1-based) pairwise difference of an ascending sample.
///
/// Non-negative floats order like their bit patterns, so bisecting over
/// `u64` lands exactly on an attained difference.
fn kth_pairwise_difference(sorted: &[f64], k: usize) -> f64 {
    let span = sorted[sorted.len() - 1] - sorted[0];
    let (mut lo, mut hi) = (0u64, span.to_bits());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pairs_within(sorted, f64::from_bits(mid)) >= k {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    f64::from_bits(lo)
}

/// Rousseeuw-Croux Qn scale estimator with finite-sample correction.
pub fn qn_scale(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::DegenerateSample { needed: 2, got: n });
    }
    let sorted = sorted_finite(values)?;
    let order_stat = kth_pairwise_difference(&sorted, qn_rank(n));
    Ok(QN_CONSISTENCY * qn_correction(n) * order_stat)
}

/// Hampel's three-part redescending weight.
pub fn hampel_weight(x: f64, a: f64, b: f64, r: f64) -> f64 {
    let u = x.abs();
    if u <= a {
        1.0
    } else if u <= b {
        a / u
    } else if u <= r {
        (r - u) / (r - b) * a / u
    } else {
        0.0
    }
}

/// Tukey bisquare loss, saturating at `k^2 / 6`.
pub fn bisquare_loss(x: f64, k: f64) -> f64 {
    let plateau = k * k / 6.0;
    if x.abs() <= k {
        let t = 1.0 - (x / k).powi(2);
        plateau * (1.0 - t * t * t)
    } else {
        plateau
    }
}

/// Bisquare weight `psi(x) / x`.
pub fn bisquare_weight(x: f64, k: f64) -> f64 {
    if x.abs() <= k {
        let t = 1.0 - (x / k).powi(2);
        t * t
    } else {
        0.0
    }
}

/// Downweighting function applied to standardized distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightFunctionSpec {
    Hampel { a: f64, b: f64, r: f64 },
    Bisquare { k: f64 },
    /// Constant weight one; turns the reweighting loop into a single least-squares solve.
    Unit,
}

impl WeightFunctionSpec {
    pub fn hampel() -> Self {
        WeightFunctionSpec::Hampel { a: HAMPEL_A, b: HAMPEL_B, r: HAMPEL_R }
    }

    pub fn bisquare() -> Self {
        WeightFunctionSpec::Bisquare { k: BISQUARE_K }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightFunctionSpec::Hampel { a, b, r } => {
                if !(0.0 < a && a < b && b < r && r.is_finite()) {
                    return Err(Error::InvalidWeightFunction(format!(
                        "hampel cutoffs must satisfy 0 < a < b < r, got {a}, {b}, {r}"
                    )));
                }
            }
            WeightFunctionSpec::Bisquare { k } => {
                if !(k > 0.0 && k.is_finite()) {
                    return Err(Error::InvalidWeightFunction(format!(
                        "bisquare k must be positive, got {k}"
                    )));
                }
            }
            WeightFunctionSpec::Unit => {}
        }
        Ok(())
    }

    pub fn weight(&self, x: f64) -> f64 {
        match *self {
            WeightFunctionSpec::Hampel { a, b, r } => hampel_weight(x, a, b, r),
            WeightFunctionSpec::Bisquare { k } => bisquare_weight(x, k),
            WeightFunctionSpec::Unit => 1.0,
        }
    }
}

impl Default for WeightFunctionSpec {
    fn default() -> Self {
        Self::hampel()
    }
}

/// Scale estimator used to standardize residual columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleEstimator {
    #[default]
    Mad,
    Qn,
}

impl ScaleEstimator {
    pub fn scale(&self, values: &[f64]) -> Result<f64> {
        match self {
            ScaleEstimator::Mad => mad_scale(values, MAD_CONSISTENCY),
            ScaleEstimator::Qn => qn_scale(values),
        }
    }
}
