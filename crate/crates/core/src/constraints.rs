//! Non-arbitrage equality systems `A_eq * gamma = b_eq`.
//!
//! Coefficients are stored interleaved as `(A_1, B_1, ..., A_K, B_K)`: slope
//! of child `k` at column `2k`, intercept at `2k + 1` (zero-based).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calendar::{delivery_hours, CalendarConfig, DeliveryPeriod, Granularity};
use crate::error::{Error, Result};

/// Column of the slope of child `k`.
pub fn slope_index(k: usize) -> usize {
    2 * k
}

/// Column of the intercept of child `k`.
pub fn intercept_index(k: usize) -> usize {
    2 * k + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularitySplit {
    pub parent: DeliveryPeriod,
    pub children: Vec<DeliveryPeriod>,
    pub weights: Vec<f64>,
}

fn check_partition(parent: &DeliveryPeriod, children: &[DeliveryPeriod]) -> Result<()> {
    let fail = |why: String| Err(Error::NotAPartition(format!("{parent}: {why}")));
    let (Some(first), Some(last)) = (children.first(), children.last()) else {
        return fail("no children".into());
    };
    if first.start != parent.start {
        return fail(format!("{first} does not start with the parent"));
    }
    if last.end != parent.end {
        return fail(format!("{last} does not end with the parent"));
    }
    for pair in children.windows(2) {
        if pair[0].end != pair[1].start {
            return fail(format!("gap or overlap between {} and {}", pair[0], pair[1]));
        }
    }
    Ok(())
}

impl GranularitySplit {
    /// Split with explicit weights; weights must be positive and sum to one.
    pub fn with_weights(
        parent: DeliveryPeriod,
        children: Vec<DeliveryPeriod>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        check_partition(&parent, &children)?;
        if weights.len() != children.len() {
            return Err(Error::InvalidSplit(format!(
                "{} weights for {} children",
                weights.len(),
                children.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidSplit("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSplit(format!("weights sum to {total}, not 1")));
        }
        Ok(GranularitySplit { parent, children, weights })
    }

    pub fn equal(parent: DeliveryPeriod, children: Vec<DeliveryPeriod>) -> Result<Self> {
        let k = children.len().max(1);
        Self::with_weights(parent, children, vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn child_granularity(&self) -> Granularity {
        self.children[0].granularity
    }

    /// Position keys of the children (`Q1`, `Apr`, `H07`, ...).
    pub fn labels(&self) -> Vec<String> {
        self.children.iter().map(|c| c.position_key()).collect()
    }
}

/// Split whose weights are each child's share of the parent's delivery hours.
pub fn build_split(
    parent: DeliveryPeriod,
    children: Vec<DeliveryPeriod>,
    calendar: &CalendarConfig,
) -> Result<GranularitySplit> {
    check_partition(&parent, &children)?;
    let total = delivery_hours(&parent, calendar)? as f64;
    let weights = children
        .iter()
        .map(|c| Ok(delivery_hours(c, calendar)? as f64 / total))
        .collect::<Result<Vec<_>>>()?;
    GranularitySplit::with_weights(parent, children, weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl ConstraintSystem {
    pub fn new(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} constraint rows but {} right-hand sides",
                matrix.nrows(),
                rhs.len()
            )));
        }
        Ok(ConstraintSystem { matrix, rhs })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Stacks the rows of `other` below these rows.
    pub fn append(&self, other: &ConstraintSystem) -> Result<ConstraintSystem> {
        if other.cols() != self.cols() {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {}-column rows onto {} columns",
                other.cols(),
                self.cols()
            )));
        }
        let m = self.rows() + other.rows();
        let matrix = DMatrix::from_fn(m, self.cols(), |i, j| {
            if i < self.rows() {
                self.matrix[(i, j)]
            } else {
                other.matrix[(i - self.rows(), j)]
            }
        });
        let rhs = DVector::from_fn(m, |i, _| {
            if i < self.rows() {
                self.rhs[i]
            } else {
                other.rhs[i - self.rows()]
            }
        });
        ConstraintSystem::new(matrix, rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct ConstraintSystemRepr {
    matrix: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

impl Serialize for ConstraintSystem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ConstraintSystemRepr {
            matrix: self.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
            rhs: self.rhs.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConstraintSystem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ConstraintSystemRepr::deserialize(d)?;
        let cols = repr.matrix.first().map_or(0, Vec::len);
        if repr.matrix.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged constraint matrix"));
        }
        let matrix = DMatrix::from_fn(repr.matrix.len(), cols, |i, j| repr.matrix[i][j]);
        ConstraintSystem::new(matrix, DVector::from_vec(repr.rhs)).map_err(D::Error::custom)
    }
}

/// Canonical system: `sum h_k A_k = 1` and `sum h_k B_k = 0`.
pub fn build_constraints(split: &GranularitySplit) -> ConstraintSystem {
    let k = split.len();
    let mut matrix = DMatrix::zeros(2, 2 * k);
    for (c, &h) in split.weights.iter().enumerate() {
        matrix[(0, slope_index(c))] = h;
        matrix[(1, intercept_index(c))] = h;
    }
    ConstraintSystem { matrix, rhs: DVector::from_vec(vec![1.0, 0.0]) }
}

/// `A_eq * gamma - b_eq`.
pub fn arbitrage_gap(system: &ConstraintSystem, gamma: &[f64]) -> Result<Vec<f64>> {
    if gamma.len() != system.cols() {
        return Err(Error::DimensionMismatch(format!(
            "gamma has {} entries, system has {} columns",
            gamma.len(),
            system.cols()
        )));
    }
    let residual = &system.matrix * DVector::from_column_slice(gamma) - &system.rhs;
    Ok(residual.iter().copied().collect())
}

pub fn max_abs_gap(system: &ConstraintSystem, gamma: &[f64]) -> Result<f64> {
    Ok(arbitrage_gap(system, gamma)?.into_iter().fold(0.0, |m, g| m.max(g.abs())))
}

/// One row per child forcing its intercept to zero (pure scaling model).
pub fn zero_intercept_constraints(k: usize) -> ConstraintSystem {
    let mut matrix = DMatrix::zeros(k, 2 * k);
    for c in 0..k {
        matrix[(c, intercept_index(c))] = 1.0;
    }
    ConstraintSystem { matrix, rhs: DVector::zeros(k) }
}

/// A constraint system over the free coefficients after some were pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub system: ConstraintSystem,
    /// Full-vector index of each reduced column.
    pub free: Vec<usize>,
    pub fixed: BTreeMap<usize, f64>,
    pub full_len: usize,
}

impl ReducedSystem {
    /// Re-inserts the fixed values around a reduced solution.
    pub fn expand(&self, free_values: &[f64]) -> Result<Vec<f64>> {
        if free_values.len() != self.free.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} free values for {} free coefficients",
                free_values.len(),
                self.free.len()
            )));
        }
        let mut gamma = vec![0.0; self.full_len];
        for (&idx, &v) in self.free.iter().zip(free_values) {
            gamma[idx] = v;
        }
        for (&idx, &v) in &self.fixed {
            gamma[idx] = v;
        }
        Ok(gamma)
    }
}

const FEASIBILITY_TOL: f64 = 1e-9;

/// Eliminates pinned coefficients, moving their contribution to the right-hand side.
///
/// Rows left without free coefficients are dropped once checked to hold.
pub fn fix_coefficients(
    system: &ConstraintSystem,
    fixed: &BTreeMap<usize, f64>,
) -> Result<ReducedSystem> {
    let n = system.cols();
    if let Some((&bad, _)) = fixed.iter().find(|(&i, _)| i >= n) {
        return Err(Error::DimensionMismatch(format!(
            "coefficient index {bad} out of range for {n} columns"
        )));
    }
    let free: Vec<usize> = (0..n).filter(|i| !fixed.contains_key(i)).collect();
    let mut rhs = system.rhs.clone();
    for (&idx, &value) in fixed {
        rhs -= system.matrix.column(idx) * value;
    }
    let reduced = DMatrix::from_fn(system.rows(), free.len(), |i, j| system.matrix[(i, free[j])]);

    // the reduced rows must admit some solution
    let scale = 1.0 + rhs.amax();
    let consistent = if free.is_empty() {
        rhs.amax() <= FEASIBILITY_TOL * scale
    } else {
        let svd = reduced.clone().svd(true, true);
        let z = svd.solve(&rhs, 1e-12).map_err(|e| Error::InfeasibleFixing(e.to_string()))?;
        (&reduced * z - &rhs).amax() <= FEASIBILITY_TOL * scale
    };
    if !consistent {
        return Err(Error::InfeasibleFixing(format!(
            "pinned values leave the constraints unsatisfiable (rhs {:?})",
            rhs.as_slice()
        )));
    }

    let keep: Vec<usize> =
        (0..system.rows()).filter(|&i| reduced.row(i).iter().any(|v| *v != 0.0)).collect();
    let matrix = DMatrix::from_fn(keep.len(), free.len(), |i, j| reduced[(keep[i], j)]);
    let rhs = DVector::from_fn(keep.len(), |i, _| rhs[keep[i]]);
    Ok(ReducedSystem {
        system: ConstraintSystem { matrix, rhs },
        free,
        fixed: fixed.clone(),
        full_len: n,
    })
}

/// How split weights are chosen in a config block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    /// `"hours"` or `"equal"`.
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for WeightsSpec {
    fn default() -> Self {
        WeightsSpec::Named("hours".into())
    }
}

/// Declarative description of a split, as read from a TOML or JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub parent: DeliveryPeriod,
    /// Child granularity; the children are the parent's calendar sub-periods.
    #[serde(default)]
    pub child: Option<Granularity>,
    /// Explicit children, overriding `child`.
    #[serde(default)]
    pub children: Option<Vec<DeliveryPeriod>>,
    #[serde(default)]
    pub weights: WeightsSpec,
    #[serde(default)]
    pub calendar: CalendarConfig,
}

impl SplitConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn children(&self) -> Result<Vec<DeliveryPeriod>> {
        match (&self.children, self.child) {
            (Some(list), _) => Ok(list.clone()),
            (None, Some(g)) => self.parent.children(g),
            (None, None) => Err(Error::InvalidSplit("split config needs `child` or `children`".into())),
        }
    }

    pub fn to_split(&self) -> Result<GranularitySplit> {
        let children = self.children()?;
        match &self.weights {
            WeightsSpec::Named(n) if n == "hours" => build_split(self.parent, children, &self.calendar),
            WeightsSpec::Named(n) if n == "equal" => GranularitySplit::equal(self.parent, children),
            WeightsSpec::Named(other) => Err(Error::InvalidSplit(format!(
                "unknown weights `{other}` (expected hours, equal or a list)"
            ))),
            WeightsSpec::Explicit(w) => GranularitySplit::with_weights(self.parent, children, w.clone()),
        }
    }
}
