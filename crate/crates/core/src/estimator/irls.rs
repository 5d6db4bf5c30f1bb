//! Iteratively reweighted constrained M-regression.
//!
//! Starting weights come from a coarse outlyingness measure in `x` and in the
//! rows of `Y`. Each pass solves the penalized weighted least-squares problem,
//! standardizes the residual columns robustly and updates the case weights
//! `w_i = sqrt(w_x(d_i^x) * w(d_i^r))`. The `x` part is computed once.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constraints::{fix_coefficients, max_abs_gap, ConstraintSystem, ReducedSystem};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::solve::penalized_wls_solve_reduced;
use crate::estimator::FitResult;
use crate::robust::{median, qn_scale, ScaleEstimator, WeightFunctionSpec, MAD_CONSISTENCY};

/// Denominator used when a robust scale collapses to zero.
const SCALE_FLOOR: f64 = f64::MIN_POSITIVE;

/// Column scales at or below this are treated as zero.
const DEGENERATE_RESIDUAL_SCALE: f64 = 1e-12;

/// How the constraint penalty `alpha` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaPolicy {
    /// `multiplier * N * Qn(Y)`, Qn over all N*K response entries.
    Auto { multiplier: f64 },
    Fixed(f64),
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Auto { multiplier: 1.0 }
    }
}

impl AlphaPolicy {
    pub fn resolve(&self, dataset: &Dataset) -> Result<f64> {
        let alpha = match *self {
            AlphaPolicy::Fixed(a) => a,
            AlphaPolicy::Auto { multiplier } => {
                let pooled: Vec<f64> = dataset.y().iter().copied().collect();
                multiplier * dataset.n() as f64 * qn_scale(&pooled)?
            }
        };
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("penalty must be finite and >= 0, got {alpha}")));
        }
        Ok(alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub weight_spec: WeightFunctionSpec,
    pub alpha: AlphaPolicy,
    /// Standardizes residual columns.
    pub scale_estimator: ScaleEstimator,
    /// Convergence threshold on the largest intercept change between passes.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Median-center `x` and the rows of `Y` before the starting distances.
    pub center_for_distances: bool,
    /// Re-runs with `alpha * 10` while the fitted gap exceeds `gap_tolerance`.
    pub feasibility_escalations: u32,
    pub gap_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            weight_spec: WeightFunctionSpec::hampel(),
            alpha: AlphaPolicy::default(),
            scale_estimator: ScaleEstimator::Mad,
            tolerance: 1e-8,
            max_iterations: 100,
            center_for_distances: true,
            feasibility_escalations: 1,
            gap_tolerance: 1e-6,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weight_spec.validate()?;
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.gap_tolerance > 0.0) {
            return Err(Error::InvalidConfig("gap_tolerance must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialWeights {
    pub weights: Vec<f64>,
    /// The `x` factor `w(d_i^x)`, reused in every later pass.
    pub x_weights: Vec<f64>,
    /// A zero denominator was replaced by the floor.
    pub degenerate: bool,
}

fn column_medians(y: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..y.ncols())
        .map(|c| median(&y.column(c).iter().copied().collect::<Vec<_>>()))
        .collect()
}

/// Starting case weights from robust distances in `x` and in the response rows.
pub fn initial_weights(dataset: &Dataset, spec: &WeightFunctionSpec) -> Result<InitialWeights> {
    initial_weights_with(dataset, spec, true)
}

pub(crate) fn initial_weights_with(
    dataset: &Dataset,
    spec: &WeightFunctionSpec,
    center: bool,
) -> Result<InitialWeights> {
    let y = dataset.y();
    let x = dataset.x();
    let mut degenerate = false;

    let y_center = if center { column_medians(y)? } else { vec![0.0; y.ncols()] };
    let norms: Vec<f64> = (0..dataset.n())
        .map(|i| {
            y.row(i).iter().zip(&y_center).map(|(v, m)| (v - m).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let mut y_denom = median(&norms)?;
    if y_denom <= 0.0 {
        y_denom = SCALE_FLOOR;
        degenerate = true;
    }

    let x_center = if center { median(x)? } else { 0.0 };
    let x_dev: Vec<f64> = x.iter().map(|v| (v - x_center).abs()).collect();
    let mut x_denom = MAD_CONSISTENCY * median(&x_dev)?;
    if x_denom <= 0.0 {
        x_denom = SCALE_FLOOR;
        degenerate = true;
    }

    let x_weights: Vec<f64> = x_dev.iter().map(|d| spec.weight(d / x_denom)).collect();
    let weights = x_weights
        .iter()
        .zip(&norms)
        .map(|(wx, norm)| (wx * spec.weight(norm / y_denom)).sqrt())
        .collect();
    Ok(InitialWeights { weights, x_weights, degenerate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDistances {
    pub distances: Vec<f64>,
    /// Robust scale of each residual column (before the zero check).
    pub column_scales: Vec<f64>,
    /// Some column had zero scale; its standardized values were set to 0.
    pub degenerate: bool,
}

/// Case distances of median-centered, MAD-scaled residual columns, combined as `|z_i| / sqrt(K)`.
pub fn residual_distances(residuals: &DMatrix<f64>) -> Result<ResidualDistances> {
    residual_distances_with(residuals, ScaleEstimator::Mad)
}

pub fn residual_distances_with(
    residuals: &DMatrix<f64>,
    estimator: ScaleEstimator,
) -> Result<ResidualDistances> {
    let (n, k) = residuals.shape();
    if n < 3 {
        return Err(Error::DegenerateSample { needed: 3, got: n });
    }
    let mut sq = vec![0.0; n];
    let mut column_scales = Vec::with_capacity(k);
    let mut degenerate = false;
    for c in 0..k {
        let col: Vec<f64> = residuals.column(c).iter().copied().collect();
        let center = median(&col)?;
        let scale = estimator.scale(&col)?;
        column_scales.push(scale);
        if scale <= DEGENERATE_RESIDUAL_SCALE {
            degenerate = true;
            continue;
        }
        for (acc, r) in sq.iter_mut().zip(&col) {
            *acc += ((r - center) / scale).powi(2);
        }
    }
    let root_k = (k as f64).sqrt();
    let distances = sq.into_iter().map(|s| s.sqrt() / root_k).collect();
    Ok(ResidualDistances { distances, column_scales, degenerate })
}

fn residual_matrix(dataset: &Dataset, gamma: &[f64]) -> DMatrix<f64> {
    let x = dataset.x();
    DMatrix::from_fn(dataset.n(), dataset.k(), |i, c| {
        dataset.y()[(i, c)] - gamma[2 * c] * x[i] - gamma[2 * c + 1]
    })
}

fn intercepts(gamma: &[f64]) -> Vec<f64> {
    gamma.iter().skip(1).step_by(2).copied().collect()
}

struct Pass {
    gamma: Vec<f64>,
    weights: Vec<f64>,
    iterations: usize,
    converged: bool,
    column_scales: Vec<f64>,
    degenerate: bool,
}

fn reweight(
    dataset: &Dataset,
    reduced: &ReducedSystem,
    config: &FitConfig,
    start: &InitialWeights,
    alpha: f64,
) -> Result<Pass> {
    let mut weights = start.weights.clone();
    let mut previous: Option<Vec<f64>> = None;
    let mut degenerate = start.degenerate;
    for iteration in 1..=config.max_iterations {
        let gamma = penalized_wls_solve_reduced(dataset.x(), dataset.y(), &weights, reduced, alpha)?;
        let rd = residual_distances_with(&residual_matrix(dataset, &gamma), config.scale_estimator)?;
        degenerate |= rd.degenerate;
        weights = start
            .x_weights
            .iter()
            .zip(&rd.distances)
            .map(|(wx, d)| (wx * config.weight_spec.weight(*d)).sqrt())
            .collect();
        let b = intercepts(&gamma);
        let converged = previous.as_ref().is_some_and(|p| {
            p.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max) < config.tolerance
        });
        if converged || iteration == config.max_iterations {
            return Ok(Pass {
                gamma,
                weights,
                iterations: iteration,
                converged,
                column_scales: rd.column_scales,
                degenerate,
            });
        }
        previous = Some(b);
    }
    unreachable!("max_iterations >= 1 is validated")
}

fn fit_reduced(
    dataset: &Dataset,
    system: &ConstraintSystem,
    reduced: &ReducedSystem,
    config: &FitConfig,
    escalations: u32,
) -> Result<FitResult> {
    config.validate()?;
    let start = initial_weights_with(dataset, &config.weight_spec, config.center_for_distances)?;
    let mut alpha = config.alpha.resolve(dataset)?;
    let mut tries = 0;
    loop {
        let pass = reweight(dataset, reduced, config, &start, alpha)?;
        let gap = max_abs_gap(system, &pass.gamma)?;
        if gap <= config.gap_tolerance || tries >= escalations || alpha == 0.0 {
            return Ok(FitResult {
                method: "mcrm".into(),
                gamma: pass.gamma,
                case_ids: dataset.case_ids().to_vec(),
                case_weights: pass.weights,
                iterations: pass.iterations,
                converged: pass.converged,
                arbitrage_gap_maxabs: gap,
                residual_scales: pass.column_scales,
                alpha_used: alpha,
                degenerate_scale: pass.degenerate,
                child_labels: Vec::new(),
            });
        }
        alpha *= 10.0;
        tries += 1;
    }
}

/// Robust constrained M-regression of every child price on the parent price.
///
/// Non-convergence within `max_iterations` is reported through
/// [`FitResult::converged`], not as an error.
pub fn irls_fit(dataset: &Dataset, system: &ConstraintSystem, config: &FitConfig) -> Result<FitResult> {
    let reduced = fix_coefficients(system, &BTreeMap::new())?;
    fit_reduced(dataset, system, &reduced, config, config.feasibility_escalations)
}

/// [`irls_fit`] over the coefficients left free after pinning `fixed`.
pub fn irls_fit_fixed(
    dataset: &Dataset,
    system: &ConstraintSystem,
    fixed: &BTreeMap<usize, f64>,
    config: &FitConfig,
    escalations: u32,
) -> Result<FitResult> {
    let reduced = fix_coefficients(system, fixed)?;
    fit_reduced(dataset, system, &reduced, config, escalations)
}

/// Single penalized least-squares solve with every case weight equal to one.
pub fn classical_fit(dataset: &Dataset, system: &ConstraintSystem, alpha: f64) -> Result<FitResult> {
    let reduced = fix_coefficients(system, &BTreeMap::new())?;
    let ones = vec![1.0; dataset.n()];
    let gamma = penalized_wls_solve_reduced(dataset.x(), dataset.y(), &ones, &reduced, alpha)?;
    let residuals = residual_matrix(dataset, &gamma);
    let residual_scales = (0..dataset.k())
        .map(|c| {
            let col: Vec<f64> = residuals.column(c).iter().copied().collect();
            ScaleEstimator::Mad.scale(&col)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitResult {
        method: "classical".into(),
        arbitrage_gap_maxabs: max_abs_gap(system, &gamma)?,
        gamma,
        case_ids: dataset.case_ids().to_vec(),
        case_weights: ones,
        iterations: 1,
        converged: true,
        residual_scales,
        alpha_used: alpha,
        degenerate_scale: false,
        child_labels: Vec::new(),
    })
}
