//! Error metrics and in-sample / out-of-sample method comparison.

use std::io::{Read, Write};
use std::ops::RangeInclusive;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{build_constraints, GranularitySplit};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{FitConfig, FitResult};
use crate::market::{build_regression_dataset, QuoteTable};
use crate::methods::MethodRegistry;
use crate::robust::median;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_ae: f64,
    pub med_ae: f64,
    pub mean_se: f64,
    pub med_se: f64,
}

/// Mean and median (over cases, of the row mean) absolute and squared errors.
pub fn compute_metrics(actual: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<MetricsReport> {
    if actual.shape() != predicted.shape() {
        return Err(Error::DimensionMismatch(format!(
            "actual {:?}, predicted {:?}",
            actual.shape(),
            predicted.shape()
        )));
    }
    let (n, k) = actual.shape();
    if n == 0 || k == 0 {
        return Err(Error::EmptySample);
    }
    let err = actual - predicted;
    let row_ae: Vec<f64> = err.row_iter().map(|r| r.iter().map(|e| e.abs()).sum::<f64>() / k as f64).collect();
    let row_se: Vec<f64> = err.row_iter().map(|r| r.iter().map(|e| e * e).sum::<f64>() / k as f64).collect();
    Ok(MetricsReport {
        mean_ae: row_ae.iter().sum::<f64>() / n as f64,
        med_ae: median(&row_ae)?,
        mean_se: row_se.iter().sum::<f64>() / n as f64,
        med_se: median(&row_se)?,
    })
}

/// Child prices predicted by `fit` for every case of `dataset`.
pub fn predict_dataset(fit: &FitResult, dataset: &Dataset) -> Result<DMatrix<f64>> {
    if fit.k() != dataset.k() {
        return Err(Error::DimensionMismatch(format!("fit has {} children, data {}", fit.k(), dataset.k())));
    }
    Ok(DMatrix::from_fn(dataset.n(), dataset.k(), |i, c| {
        fit.gamma[2 * c] * dataset.x()[i] + fit.gamma[2 * c + 1]
    }))
}

/// How test-range coefficients are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutOfSample {
    /// Coefficients from the training range are reused unchanged.
    #[default]
    Frozen,
    /// Before each test date, refit on the training range plus all earlier test dates.
    Expanding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub train: RangeInclusive<NaiveDate>,
    pub test: RangeInclusive<NaiveDate>,
    pub methods: Vec<String>,
    pub fit: FitConfig,
    pub out_of_sample: OutOfSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: String,
    pub in_sample: MetricsReport,
    pub out_of_sample: MetricsReport,
    /// Fit on the training range.
    pub fit: FitResult,
}

/// One row per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub in_mean_ae: f64,
    pub in_med_ae: f64,
    pub in_mean_se: f64,
    pub in_med_se: f64,
    pub out_mean_ae: f64,
    pub out_med_ae: f64,
    pub out_mean_se: f64,
    pub out_med_se: f64,
}

impl ComparisonRow {
    pub fn new(method: &str, in_sample: &MetricsReport, out_of_sample: &MetricsReport) -> Self {
        ComparisonRow {
            method: method.to_string(),
            in_mean_ae: in_sample.mean_ae,
            in_med_ae: in_sample.med_ae,
            in_mean_se: in_sample.mean_se,
            in_med_se: in_sample.med_se,
            out_mean_ae: out_of_sample.mean_ae,
            out_med_ae: out_of_sample.med_ae,
            out_mean_se: out_of_sample.mean_se,
            out_med_se: out_of_sample.med_se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn from_outcomes(outcomes: &[MethodOutcome]) -> Self {
        ComparisonTable {
            rows: outcomes
                .iter()
                .map(|o| ComparisonRow::new(&o.method, &o.in_sample, &o.out_of_sample))
                .collect(),
        }
    }

    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<std::result::Result<Vec<ComparisonRow>, _>>()?;
        Ok(ComparisonTable { rows })
    }
}

fn dataset_for(table: &QuoteTable, range: &RangeInclusive<NaiveDate>, split: &GranularitySplit, what: &str) -> Result<Dataset> {
    let filtered = table.filter_dates(range);
    build_regression_dataset(&filtered, split).map(|(ds, _)| ds).map_err(|e| match e {
        Error::NoJointObservations => Error::InvalidDataset(format!(
            "no complete {what} rows between {} and {}",
            range.start(),
            range.end()
        )),
        other => other,
    })
}

fn case_date(id: &str) -> &str {
    id.split('/').next().unwrap_or(id)
}

/// Fits each method on the training dates and scores it on both ranges.
pub fn backtest(
    table: &QuoteTable,
    split: &GranularitySplit,
    registry: &MethodRegistry,
    config: &BacktestConfig,
) -> Result<Vec<MethodOutcome>> {
    let system = build_constraints(split);
    let train = dataset_for(table, &config.train, split, "training")?;
    let test = dataset_for(table, &config.test, split, "test")?;
    let methods = config.methods.iter().map(|m| registry.get(m)).collect::<Result<Vec<_>>>()?;
    methods
        .par_iter()
        .map(|method| {
            let fit = method.fit(&train, &system, &config.fit)?.with_labels(split.labels());
            let in_sample = compute_metrics(train.y(), &predict_dataset(&fit, &train)?)?;
            let predicted = match config.out_of_sample {
                OutOfSample::Frozen => predict_dataset(&fit, &test)?,
                OutOfSample::Expanding => {
                    let mut pred = DMatrix::zeros(test.n(), test.k());
                    let mut i = 0;
                    while i < test.n() {
                        let date = case_date(&test.case_ids()[i]);
                        let end = (i..test.n()).find(|&j| case_date(&test.case_ids()[j]) != date).unwrap_or(test.n());
                        let fit_now = if i == 0 {
                            fit.clone()
                        } else {
                            let history = combine(&train, &test, i)?;
                            method.fit(&history, &system, &config.fit)?
                        };
                        for r in i..end {
                            for c in 0..test.k() {
                                pred[(r, c)] = fit_now.gamma[2 * c] * test.x()[r] + fit_now.gamma[2 * c + 1];
                            }
                        }
                        i = end;
                    }
                    pred
                }
            };
            let out_of_sample = compute_metrics(test.y(), &predicted)?;
            Ok(MethodOutcome { method: method.name().to_string(), in_sample, out_of_sample, fit })
        })
        .collect()
}

/// Training cases followed by the first `upto` test cases.
fn combine(train: &Dataset, test: &Dataset, upto: usize) -> Result<Dataset> {
    let n = train.n() + upto;
    let x: Vec<f64> = train.x().iter().chain(&test.x()[..upto]).copied().collect();
    let y = DMatrix::from_fn(n, train.k(), |i, c| {
        if i < train.n() {
            train.y()[(i, c)]
        } else {
            test.y()[(i - train.n(), c)]
        }
    });
    let ids = train.case_ids().iter().chain(&test.case_ids()[..upto]).cloned().collect();
    Dataset::new(x, y, ids)
}

/// Scores externally produced predictions against a dataset.
pub fn score_predictions(dataset: &Dataset, predicted: &DMatrix<f64>) -> Result<MetricsReport> {
    compute_metrics(dataset.y(), predicted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_instance() {
        let actual = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 3.0, 3.0]);
        let m = compute_metrics(&actual, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(m, MetricsReport { mean_ae: 2.0, med_ae: 2.0, mean_se: 5.0, med_se: 5.0 });
        assert_eq!(compute_metrics(&actual, &actual).unwrap(), MetricsReport::default());
        assert!(compute_metrics(&actual, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = ComparisonTable {
            rows: vec![ComparisonRow::new(
                "mcrm",
                &MetricsReport { mean_ae: 0.1, med_ae: 0.2, mean_se: 0.3, med_se: 1.0 / 3.0 },
                &MetricsReport { mean_ae: 1.5, med_ae: 2.5, mean_se: 3.5, med_se: 4.5 },
            )],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("method,in_mean_ae,in_med_ae,in_mean_se,in_med_se,out_mean_ae"));
        assert_eq!(ComparisonTable::read_csv(buf.as_slice()).unwrap(), t);
    }
}
