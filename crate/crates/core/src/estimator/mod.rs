//! Penalized least squares and the robust reweighting loop built on it.

mod irls;
mod solve;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use irls::{
    classical_fit, initial_weights, irls_fit, irls_fit_fixed, residual_distances, residual_distances_with,
    AlphaPolicy, FitConfig, InitialWeights, ResidualDistances,
};
pub use solve::{penalized_wls_solve, penalized_wls_solve_reduced};

use crate::constraints::{intercept_index, max_abs_gap, slope_index, ConstraintSystem};
use crate::error::{Error, Result};

/// Default flagging threshold on final case weights.
pub const OUTLIER_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    /// `(A_1, B_1, ..., A_K, B_K)`.
    pub gamma: Vec<f64>,
    pub case_ids: Vec<String>,
    pub case_weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub arbitrage_gap_maxabs: f64,
    pub residual_scales: Vec<f64>,
    pub alpha_used: f64,
    pub degenerate_scale: bool,
    /// Child contract labels, empty when unknown.
    pub child_labels: Vec<String>,
}

impl FitResult {
    pub fn k(&self) -> usize {
        self.gamma.len() / 2
    }

    pub fn slopes(&self) -> Vec<f64> {
        (0..self.k()).map(|k| self.gamma[slope_index(k)]).collect()
    }

    pub fn intercepts(&self) -> Vec<f64> {
        (0..self.k()).map(|k| self.gamma[intercept_index(k)]).collect()
    }

    /// Child prices `A_k x + B_k`.
    pub fn predict(&self, x: f64) -> Vec<f64> {
        (0..self.k())
            .map(|k| self.gamma[slope_index(k)] * x + self.gamma[intercept_index(k)])
            .collect()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.child_labels = labels;
        self
    }

    /// Recomputes the stored gap from `gamma`.
    pub fn refresh_gap(&mut self, system: &ConstraintSystem) -> Result<()> {
        self.arbitrage_gap_maxabs = max_abs_gap(system, &self.gamma)?;
        Ok(())
    }

    fn label(&self, k: usize) -> String {
        self.child_labels.get(k).cloned().unwrap_or_else(|| format!("child{}", k + 1))
    }

    pub fn report(&self, split_name: Option<&str>) -> FitReport {
        let coefficients = (0..self.k())
            .map(|k| NamedCoefficient {
                child: self.label(k),
                slope: self.gamma[slope_index(k)],
                intercept: self.gamma[intercept_index(k)],
            })
            .collect();
        let weights = self.case_ids.iter().cloned().zip(self.case_weights.iter().copied()).collect();
        FitReport {
            method: self.method.clone(),
            split: split_name.map(str::to_string),
            gamma: self.gamma.clone(),
            coefficients,
            weights,
            diagnostics: Diagnostics {
                iterations: self.iterations,
                converged: self.converged,
                arbitrage_gap_maxabs: self.arbitrage_gap_maxabs,
                residual_scales: self.residual_scales.clone(),
                alpha_used: self.alpha_used,
                degenerate_scale: self.degenerate_scale,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCoefficient {
    pub child: String,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub arbitrage_gap_maxabs: f64,
    pub residual_scales: Vec<f64>,
    pub alpha_used: f64,
    pub degenerate_scale: bool,
}

/// Serializable view of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub gamma: Vec<f64>,
    pub coefficients: Vec<NamedCoefficient>,
    pub weights: BTreeMap<String, f64>,
    pub diagnostics: Diagnostics,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: FitReport = serde_json::from_str(text)?;
        if report.gamma.len() != 2 * report.coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "gamma has {} entries for {} children",
                report.gamma.len(),
                report.coefficients.len()
            )));
        }
        Ok(report)
    }

    /// `(A, B)` keyed by child label.
    pub fn coefficient_map(&self) -> BTreeMap<String, (f64, f64)> {
        self.coefficients.iter().map(|c| (c.child.clone(), (c.slope, c.intercept))).collect()
    }
}

/// Cases with weight below `threshold`, lowest weight first.
pub fn outlier_report(result: &FitResult, threshold: f64) -> Vec<(String, f64)> {
    let mut flagged: Vec<(String, f64)> = result
        .case_ids
        .iter()
        .zip(&result.case_weights)
        .filter(|(_, w)| **w < threshold)
        .map(|(id, w)| (id.clone(), *w))
        .collect();
    flagged.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    flagged
}
