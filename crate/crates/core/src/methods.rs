//! Shaping-coefficient estimators selectable by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::baselines::{ratio_average_fit, rescale_to_no_arbitrage};
use crate::constraints::{max_abs_gap, slope_index, ConstraintSystem};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{classical_fit, irls_fit, FitConfig, FitResult};

pub trait ShapingMethod: Send + Sync {
    fn name(&self) -> &str;

    fn fit(&self, dataset: &Dataset, system: &ConstraintSystem, config: &FitConfig) -> Result<FitResult>;
}

/// Robust constrained M-regression.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mcrm;

impl ShapingMethod for Mcrm {
    fn name(&self) -> &str {
        "mcrm"
    }

    fn fit(&self, dataset: &Dataset, system: &ConstraintSystem, config: &FitConfig) -> Result<FitResult> {
        irls_fit(dataset, system, config)
    }
}

/// Penalized least squares with unit case weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct Classical;

impl ShapingMethod for Classical {
    fn name(&self) -> &str {
        "classical"
    }

    fn fit(&self, dataset: &Dataset, system: &ConstraintSystem, config: &FitConfig) -> Result<FitResult> {
        classical_fit(dataset, system, config.alpha.resolve(dataset)?)
    }
}

/// Mean of child-to-parent ratios, intercepts zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct RatioAverage {
    /// Divide the factors by their weighted average.
    pub rescale: bool,
}

impl ShapingMethod for RatioAverage {
    fn name(&self) -> &str {
        if self.rescale {
            "ratio-average-rescaled"
        } else {
            "ratio-average"
        }
    }

    fn fit(&self, dataset: &Dataset, system: &ConstraintSystem, _config: &FitConfig) -> Result<FitResult> {
        let k = dataset.k();
        if system.cols() != 2 * k {
            return Err(Error::DimensionMismatch(format!(
                "constraint system has {} columns for {k} children",
                system.cols()
            )));
        }
        let mut betas = ratio_average_fit(dataset)?;
        if self.rescale {
            let weights: Vec<f64> = (0..k).map(|c| system.matrix[(0, slope_index(c))]).collect();
            betas = rescale_to_no_arbitrage(&betas, &weights)?;
        }
        let gamma: Vec<f64> = betas.iter().flat_map(|b| [*b, 0.0]).collect();
        Ok(FitResult {
            method: self.name().to_string(),
            arbitrage_gap_maxabs: max_abs_gap(system, &gamma)?,
            gamma,
            case_ids: dataset.case_ids().to_vec(),
            case_weights: vec![1.0; dataset.n()],
            iterations: 1,
            converged: true,
            residual_scales: Vec::new(),
            alpha_used: 0.0,
            degenerate_scale: false,
            child_labels: Vec::new(),
        })
    }
}

/// Estimators keyed by name.
#[derive(Clone, Default)]
pub struct MethodRegistry {
    methods: BTreeMap<String, Arc<dyn ShapingMethod>>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        MethodRegistry::default()
    }

    /// `mcrm`, `classical`, `ratio-average` and `ratio-average-rescaled`.
    pub fn with_defaults() -> Self {
        let mut registry = MethodRegistry::new();
        registry.register(Arc::new(Mcrm));
        registry.register(Arc::new(Classical));
        registry.register(Arc::new(RatioAverage { rescale: false }));
        registry.register(Arc::new(RatioAverage { rescale: true }));
        registry
    }

    /// Adds or replaces a method under its own name.
    pub fn register(&mut self, method: Arc<dyn ShapingMethod>) {
        self.methods.insert(method.name().to_string(), method);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ShapingMethod>> {
        self.methods.get(name).cloned().ok_or_else(|| {
            Error::UnknownMethod(format!("{name} (known: {})", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.methods.keys().cloned().collect()
    }
}
