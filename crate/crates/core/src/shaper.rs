//! Applying shaping coefficients: single levels, cascades down to hours,
//! recalibration once a child contract trades, and stress shifts.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarConfig, DayType, DeliveryPeriod, Granularity};
use crate::constraints::{
    build_split, intercept_index, slope_index, ConstraintSystem, GranularitySplit, WeightsSpec,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{irls_fit, irls_fit_fixed, FitConfig, FitResult};

pub const DEFAULT_GAP_TOLERANCE: f64 = 1e-6;

/// Escalations allowed when recalibrating against a pinned child.
const RECALIBRATION_ESCALATIONS: u32 = 12;

/// A split together with one `(A, B)` pair per child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingLevel {
    pub name: String,
    pub split: GranularitySplit,
    pub coefficients: Vec<(f64, f64)>,
    pub gap_tolerance: f64,
    /// Apply even when the level violates the no-arbitrage rows.
    #[serde(default)]
    pub allow_arbitrage: bool,
}

impl ShapingLevel {
    pub fn new(name: impl Into<String>, split: GranularitySplit, coefficients: Vec<(f64, f64)>) -> Result<Self> {
        if coefficients.len() != split.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficient pairs for {} children",
                coefficients.len(),
                split.len()
            )));
        }
        Ok(ShapingLevel {
            name: name.into(),
            split,
            coefficients,
            gap_tolerance: DEFAULT_GAP_TOLERANCE,
            allow_arbitrage: false,
        })
    }

    /// `(sum h A - 1, sum h B)`.
    pub fn gaps(&self) -> (f64, f64) {
        let w = &self.split.weights;
        let a: f64 = self.coefficients.iter().zip(w).map(|((a, _), h)| h * a).sum();
        let b: f64 = self.coefficients.iter().zip(w).map(|((_, b), h)| h * b).sum();
        (a - 1.0, b)
    }

    pub fn max_gap(&self) -> f64 {
        let (a, b) = self.gaps();
        a.abs().max(b.abs())
    }

    pub fn is_arbitrage_free(&self) -> bool {
        self.max_gap() <= self.gap_tolerance
    }

    pub fn check(&self) -> Result<()> {
        if self.allow_arbitrage || self.is_arbitrage_free() {
            return Ok(());
        }
        Err(Error::ArbitrageViolation {
            level: self.name.clone(),
            gap: self.max_gap(),
            tolerance: self.gap_tolerance,
        })
    }

    /// Rescales slopes and shifts intercepts so both rows hold exactly.
    pub fn repaired(&self) -> Result<ShapingLevel> {
        let (a_gap, b_sum) = self.gaps();
        let slope_sum = a_gap + 1.0;
        if !(slope_sum > 0.0) {
            return Err(Error::NonPositiveSlopeSum(slope_sum));
        }
        let mut out = self.clone();
        out.coefficients = self.coefficients.iter().map(|(a, b)| (a / slope_sum, b - b_sum)).collect();
        Ok(out)
    }

    /// Adds `delta` to child `k`'s intercept and spreads the offsetting
    /// weighted amount evenly over the other children.
    pub fn stress_shift(&self, k: usize, delta: f64) -> Result<ShapingLevel> {
        let n = self.coefficients.len();
        if k >= n {
            return Err(Error::DimensionMismatch(format!("child {k} of {n}")));
        }
        let mut out = self.clone();
        out.coefficients[k].1 += delta;
        if n > 1 {
            let share = self.split.weights[k] * delta / (n - 1) as f64;
            for (j, (c, h)) in out.coefficients.iter_mut().zip(&self.split.weights).enumerate() {
                if j != k {
                    c.1 -= share / h;
                }
            }
        }
        Ok(out)
    }
}

/// Child prices `A_k x + B_k`.
pub fn apply_level(parent_price: f64, level: &ShapingLevel) -> Result<Vec<f64>> {
    level.check()?;
    Ok(level.coefficients.iter().map(|(a, b)| a * parent_price + b).collect())
}

/// `sum h_k child_k - parent`.
pub fn verify_consistency(parent_price: f64, child_prices: &[f64], weights: &[f64]) -> Result<f64> {
    if child_prices.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} prices, {} weights",
            child_prices.len(),
            weights.len()
        )));
    }
    Ok(child_prices.iter().zip(weights).map(|(p, h)| p * h).sum::<f64>() - parent_price)
}

/// Which calendar feature selects a child's coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyKind {
    /// `Q1`..`Q4`
    QuarterOfYear,
    /// `Jan`..`Dec`
    MonthOfYear,
    /// `D01`..`D31`
    DayOfMonth,
    /// `WD`, `SAT`, `SUN`
    DayType,
    /// `H00`..`H23`
    HourOfDay,
}

impl KeyKind {
    pub fn key(self, period: &DeliveryPeriod) -> Result<String> {
        let ok = match self {
            KeyKind::QuarterOfYear => period.granularity == Granularity::Quarter,
            KeyKind::MonthOfYear => period.granularity == Granularity::Month,
            KeyKind::DayOfMonth | KeyKind::DayType => period.granularity == Granularity::Day,
            KeyKind::HourOfDay => period.granularity == Granularity::Hour,
        };
        if !ok {
            return Err(Error::InvalidConfig(format!("{self:?} key does not apply to {period}")));
        }
        Ok(match self {
            KeyKind::DayType => DayType::of(period.start_date()).code().to_string(),
            _ => period.position_key(),
        })
    }
}

/// Coefficients for one parent-to-child step, looked up per child by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTemplate {
    pub name: String,
    pub parent: Granularity,
    pub child: Granularity,
    pub key: KeyKind,
    /// When set, coefficients are looked up as `"<parent key>/<child key>"` first.
    #[serde(default)]
    pub scope: Option<KeyKind>,
    /// `[A, B]` by key.
    #[serde(default)]
    pub coefficients: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub weights: WeightsSpec,
    /// Project each instantiated level onto the no-arbitrage rows.
    #[serde(default)]
    pub repair: bool,
}

impl LevelTemplate {
    fn lookup(&self, parent: &DeliveryPeriod, child: &DeliveryPeriod) -> Result<(f64, f64)> {
        let child_key = self.key.key(child)?;
        if let Some(scope) = self.scope {
            let scoped = format!("{}/{child_key}", scope.key(parent)?);
            if let Some([a, b]) = self.coefficients.get(&scoped) {
                return Ok((*a, *b));
            }
        }
        self.coefficients
            .get(&child_key)
            .map(|[a, b]| (*a, *b))
            .ok_or_else(|| Error::MissingCoefficients { level: self.name.clone(), key: child_key })
    }

    /// The concrete level for one parent period.
    pub fn instantiate(
        &self,
        parent: &DeliveryPeriod,
        calendar: &CalendarConfig,
        gap_tolerance: f64,
    ) -> Result<ShapingLevel> {
        if parent.granularity != self.parent {
            return Err(Error::NoShapingPath(format!("level {} does not split {parent}", self.name)));
        }
        let children = parent.children(self.child)?;
        let split = match &self.weights {
            WeightsSpec::Named(n) if n == "hours" => build_split(*parent, children, calendar)?,
            WeightsSpec::Named(n) if n == "equal" => GranularitySplit::equal(*parent, children)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "level {}: weights must be \"hours\" or \"equal\", got {other:?}",
                    self.name
                )))
            }
        };
        let coefficients =
            split.children.iter().map(|c| self.lookup(parent, c)).collect::<Result<Vec<_>>>()?;
        let mut level = ShapingLevel::new(self.name.clone(), split, coefficients)?;
        level.gap_tolerance = gap_tolerance;
        if self.repair {
            level = level.repaired()?;
        }
        level.check()?;
        Ok(level)
    }
}

fn default_gap_tolerance() -> f64 {
    DEFAULT_GAP_TOLERANCE
}

/// Ordered levels from a root granularity down to the finest one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingCascade {
    pub root: Granularity,
    #[serde(default = "default_gap_tolerance")]
    pub gap_tolerance: f64,
    #[serde(default)]
    pub calendar: CalendarConfig,
    pub levels: Vec<LevelTemplate>,
}

impl ShapingCascade {
    pub fn new(root: Granularity, levels: Vec<LevelTemplate>) -> Result<Self> {
        let cascade = ShapingCascade {
            root,
            gap_tolerance: DEFAULT_GAP_TOLERANCE,
            calendar: CalendarConfig::default(),
            levels,
        };
        cascade.validate()?;
        Ok(cascade)
    }

    pub fn validate(&self) -> Result<()> {
        let mut current = self.root;
        for level in &self.levels {
            if level.parent != current {
                return Err(Error::InvalidConfig(format!(
                    "level {} starts at {} but the previous level ends at {current}",
                    level.name, level.parent
                )));
            }
            if level.child >= level.parent {
                return Err(Error::InvalidConfig(format!("level {} does not refine", level.name)));
            }
            current = level.child;
        }
        if !(self.gap_tolerance > 0.0) {
            return Err(Error::InvalidConfig("gap_tolerance must be > 0".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cascade: ShapingCascade = toml::from_str(text)?;
        cascade.validate()?;
        Ok(cascade)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn level_mut(&mut self, name: &str) -> Option<&mut LevelTemplate> {
        self.levels.iter_mut().find(|l| l.name == name)
    }

    /// Price of `target` obtained by applying the levels along its parent chain.
    pub fn cascade(&self, root: &DeliveryPeriod, price: f64, target: &DeliveryPeriod) -> Result<f64> {
        let no_path = || Error::NoShapingPath(format!("{target} from {root}"));
        if root.granularity != self.root || !root.contains(target) {
            return Err(no_path());
        }
        let mut current = *root;
        let mut value = price;
        for level in &self.levels {
            if current == *target {
                return Ok(value);
            }
            let shaping = level.instantiate(&current, &self.calendar, self.gap_tolerance)?;
            let idx = shaping.split.children.iter().position(|c| c.contains(target)).ok_or_else(no_path)?;
            let (a, b) = shaping.coefficients[idx];
            value = a * value + b;
            current = shaping.split.children[idx];
        }
        if current == *target {
            Ok(value)
        } else {
            Err(no_path())
        }
    }

    /// Every period of `granularity` under `root` with its shaped price.
    pub fn shape_curve(
        &self,
        root: &DeliveryPeriod,
        price: f64,
        granularity: Granularity,
    ) -> Result<Vec<(DeliveryPeriod, f64)>> {
        if root.granularity != self.root {
            return Err(Error::NoShapingPath(format!("cascade root is {}, got {root}", self.root)));
        }
        let mut curve = vec![(*root, price)];
        for level in &self.levels {
            if curve[0].0.granularity == granularity {
                return Ok(curve);
            }
            let mut next = Vec::new();
            for (period, value) in &curve {
                let shaping = level.instantiate(period, &self.calendar, self.gap_tolerance)?;
                let prices = apply_level(*value, &shaping)?;
                next.extend(shaping.split.children.iter().copied().zip(prices));
            }
            curve = next;
        }
        if curve[0].0.granularity == granularity {
            Ok(curve)
        } else {
            Err(Error::NoShapingPath(format!("no {granularity} level below {root}")))
        }
    }
}

/// Writes `start,end,price` rows.
pub fn write_curve_csv<W: Write>(curve: &[(DeliveryPeriod, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["start", "end", "price"])?;
    for (p, v) in curve {
        w.write_record([
            p.start.format("%Y-%m-%dT%H:%M").to_string(),
            p.end.format("%Y-%m-%dT%H:%M").to_string(),
            v.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// How a traded child price is turned into pinned coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Keep `B` from the unrestricted fit and solve `A`.
    #[default]
    KeepIntercept,
    /// Keep `A` from the unrestricted fit and solve `B`.
    KeepSlope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TradedFix {
    Coefficients { slope: f64, intercept: f64 },
    /// The child traded at `price` while the parent quoted `parent_price`.
    MarketPrice { price: f64, parent_price: f64, mode: MatchMode },
}

/// Refits with some children pinned; the result still satisfies the
/// no-arbitrage rows of `system` (up to the escalated penalty).
pub fn recalibrate_with_traded(
    dataset: &Dataset,
    system: &ConstraintSystem,
    config: &FitConfig,
    fixes: &BTreeMap<usize, TradedFix>,
) -> Result<FitResult> {
    let needs_prior = fixes.values().any(|f| matches!(f, TradedFix::MarketPrice { .. }));
    let prior = if needs_prior { Some(irls_fit(dataset, system, config)?) } else { None };
    let mut pinned = BTreeMap::new();
    for (&k, fix) in fixes {
        if k >= dataset.k() {
            return Err(Error::DimensionMismatch(format!("child {k} of {}", dataset.k())));
        }
        let (a, b) = match *fix {
            TradedFix::Coefficients { slope, intercept } => (slope, intercept),
            TradedFix::MarketPrice { price, parent_price, mode } => {
                let prior = prior.as_ref().expect("prior fit computed for market fixes");
                match mode {
                    MatchMode::KeepIntercept => {
                        if parent_price == 0.0 {
                            return Err(Error::ZeroParentPrice(format!("recalibration of child {k}")));
                        }
                        let b = prior.gamma[intercept_index(k)];
                        ((price - b) / parent_price, b)
                    }
                    MatchMode::KeepSlope => {
                        let a = prior.gamma[slope_index(k)];
                        (a, price - a * parent_price)
                    }
                }
            }
        };
        pinned.insert(slope_index(k), a);
        pinned.insert(intercept_index(k), b);
    }
    let escalations = config.feasibility_escalations.max(RECALIBRATION_ESCALATIONS);
    irls_fit_fixed(dataset, system, &pinned, config, escalations)
}
