//! Seeded synthetic forward markets with known shaping coefficients.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarConfig, DeliveryPeriod, Granularity};
use crate::constraints::{build_constraints, build_split, max_abs_gap, GranularitySplit, WeightsSpec};
use crate::error::{Error, Result};
use crate::market::QuoteTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Contamination {
    /// One child price shifted by `magnitude` noise scales.
    #[default]
    Vertical,
    /// The parent price multiplied by `magnitude`.
    Leverage,
}

/// Law of the parent price across quote dates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PricePath {
    /// `x_t = x0 + phi (x_{t-1} - x0) + sigma e_t`.
    Ar1 { phi: f64, sigma: f64 },
    /// Independent draws from `[x0 - half_width, x0 + half_width]`.
    Uniform { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticMarketConfig {
    /// `(A_1, B_1, ..., A_K, B_K)` for the year-to-child split.
    pub gamma: Vec<f64>,
    pub child: Granularity,
    pub weights: WeightsSpec,
    pub start: NaiveDate,
    /// Business days with contaminable quotes.
    pub n_dates: usize,
    /// Further business days appended without contamination.
    pub clean_tail: usize,
    pub x0: f64,
    pub path: PricePath,
    /// Noise standard deviation per child (one value is broadcast).
    pub noise: Vec<f64>,
    pub fraction: f64,
    pub magnitude: f64,
    pub contamination: Contamination,
    /// Child hit by vertical contamination; a random child per row when unset.
    pub target_child: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticMarketConfig {
    fn default() -> Self {
        SyntheticMarketConfig {
            gamma: vec![1.121, -1.604, 0.875, 1.406, 0.921, 0.930, 1.083, -0.732],
            child: Granularity::Quarter,
            weights: WeightsSpec::Named("equal".into()),
            start: NaiveDate::from_ymd_opt(2012, 1, 2).expect("valid date"),
            n_dates: 250,
            clean_tail: 0,
            x0: 45.0,
            path: PricePath::Uniform { half_width: 10.0 },
            noise: vec![0.5],
            fraction: 0.0,
            magnitude: 10.0,
            contamination: Contamination::Vertical,
            target_child: None,
            seed: 1,
        }
    }
}

/// Generated quotes plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub table: QuoteTable,
    /// Contamination flag by case id (`<date>/<parent code>`).
    pub labels: BTreeMap<String, bool>,
    /// Dates of the uncontaminated tail.
    pub tail_dates: Vec<NaiveDate>,
}

impl SyntheticMarket {
    pub fn contaminated_ids(&self) -> Vec<String> {
        self.labels.iter().filter(|(_, c)| **c).map(|(id, _)| id.clone()).collect()
    }
}

fn split_for(parent: DeliveryPeriod, child: Granularity, weights: &WeightsSpec) -> Result<GranularitySplit> {
    let children = parent.children(child)?;
    match weights {
        WeightsSpec::Named(n) if n == "hours" => build_split(parent, children, &CalendarConfig::default()),
        WeightsSpec::Named(n) if n == "equal" => GranularitySplit::equal(parent, children),
        WeightsSpec::Explicit(w) => GranularitySplit::with_weights(parent, children, w.clone()),
        other => Err(Error::InvalidConfig(format!("unknown weights {other:?}"))),
    }
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

impl SyntheticMarketConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.fraction) {
            return Err(Error::InvalidConfig(format!("fraction must be in [0, 0.5), got {}", self.fraction)));
        }
        if self.n_dates + self.clean_tail < 3 {
            return Err(Error::InvalidConfig("need at least 3 quote dates".into()));
        }
        if self.noise.is_empty() || self.noise.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig("noise scales must be >= 0".into()));
        }
        if !self.gamma.len().is_multiple_of(2) || self.gamma.is_empty() {
            return Err(Error::InvalidConfig("gamma needs (A, B) pairs".into()));
        }
        Ok(())
    }

    fn noise_scale(&self, k: usize) -> f64 {
        if self.noise.len() == 1 {
            self.noise[0]
        } else {
            self.noise[k]
        }
    }
}

/// Quotes for each business day: the next calendar year and its children.
///
/// Clean child noise has zero weighted mean, so clean rows are arbitrage-consistent.
pub fn synthesize_market(config: &SyntheticMarketConfig) -> Result<SyntheticMarket> {
    config.validate()?;
    let k = config.gamma.len() / 2;
    if config.noise.len() != 1 && config.noise.len() != k {
        return Err(Error::InvalidConfig(format!("{} noise scales for {k} children", config.noise.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // separate stream, so the clean draws do not depend on the contamination settings
    let mut bad_rng = ChaCha8Rng::seed_from_u64(config.seed);
    bad_rng.set_stream(1);
    let total = config.n_dates + config.clean_tail;
    let dates = business_days(config.start, total);

    let mut flagged = vec![false; total];
    let n_bad = (config.fraction * config.n_dates as f64).round() as usize;
    let mut order: Vec<usize> = (0..config.n_dates).collect();
    order.shuffle(&mut bad_rng);
    for &i in &order[..n_bad] {
        flagged[i] = true;
    }

    let mut splits: BTreeMap<i32, GranularitySplit> = BTreeMap::new();
    let mut table = QuoteTable::new();
    let mut labels = BTreeMap::new();
    let mut x = config.x0;
    for (i, date) in dates.iter().enumerate() {
        x = match config.path {
            PricePath::Ar1 { phi, sigma } => {
                config.x0 + phi * (x - config.x0) + sigma * rng.sample::<f64, _>(StandardNormal)
            }
            PricePath::Uniform { half_width } => config.x0 + rng.gen_range(-half_width..=half_width),
        };
        let year = date.year() + 1;
        if let std::collections::btree_map::Entry::Vacant(slot) = splits.entry(year) {
            let split = split_for(DeliveryPeriod::year(year)?, config.child, &config.weights)?;
            if split.len() != k {
                return Err(Error::DimensionMismatch(format!("{} children in {year}, gamma has {k}", split.len())));
            }
            let gap = max_abs_gap(&build_constraints(&split), &config.gamma)?;
            if gap > 1e-10 {
                return Err(Error::ArbitrageViolation { level: format!("gamma for {year}"), gap, tolerance: 1e-10 });
            }
            slot.insert(split);
        }
        let split = &splits[&year];

        let eps: Vec<f64> =
            (0..k).map(|c| config.noise_scale(c) * rng.sample::<f64, _>(StandardNormal)).collect();
        let mean: f64 = eps.iter().zip(&split.weights).map(|(e, h)| e * h).sum();
        let mut children: Vec<f64> = (0..k)
            .map(|c| config.gamma[2 * c] * x + config.gamma[2 * c + 1] + eps[c] - mean)
            .collect();
        let mut parent = x;
        if flagged[i] {
            match config.contamination {
                Contamination::Vertical => {
                    let c = match config.target_child {
                        Some(c) => c,
                        None => bad_rng.gen_range(0..k),
                    };
                    children[c] += config.magnitude * config.noise_scale(c);
                }
                Contamination::Leverage => parent *= config.magnitude,
            }
        }
        table.insert(*date, split.parent, parent)?;
        for (period, price) in split.children.iter().zip(children) {
            table.insert(*date, *period, price)?;
        }
        labels.insert(format!("{date}/{}", split.parent.code()), flagged[i]);
    }
    Ok(SyntheticMarket { table, labels, tail_dates: dates[config.n_dates..].to_vec() })
}
