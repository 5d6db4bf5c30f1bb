use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// N paired observations: one parent price and K child prices per case.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: DMatrix<f64>,
    case_ids: Vec<String>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: DMatrix<f64>, case_ids: Vec<String>) -> Result<Self> {
        let n = x.len();
        if n < 3 {
            return Err(Error::InvalidDataset(format!("need at least 3 cases, got {n}")));
        }
        if y.nrows() != n || case_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} parent prices, {} response rows, {} case ids",
                y.nrows(),
                case_ids.len()
            )));
        }
        if y.ncols() == 0 {
            return Err(Error::InvalidDataset("no child columns".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite price".into()));
        }
        if x.iter().all(|v| *v == x[0]) {
            return Err(Error::InvalidDataset("parent prices are constant".into()));
        }
        Ok(Dataset { x, y, case_ids })
    }

    /// Builds from row vectors; case ids default to `0..N`.
    pub fn from_rows(x: Vec<f64>, rows: &[Vec<f64>], case_ids: Option<Vec<String>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch("ragged response rows".into()));
        }
        let y = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        let ids = case_ids.unwrap_or_else(|| (0..rows.len()).map(|i| i.to_string()).collect());
        Dataset::new(x, y, ids)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn case_ids(&self) -> &[String] {
        &self.case_ids
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.y.row(i).iter().copied().collect()
    }

    /// Cases at the given positions, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let x = indices.iter().map(|&i| self.x[i]).collect();
        let y = DMatrix::from_fn(indices.len(), self.k(), |r, c| self.y[(indices[r], c)]);
        let ids = indices.iter().map(|&i| self.case_ids[i].clone()).collect();
        Dataset::new(x, y, ids)
    }

    /// Multiplies every price by `s`.
    pub fn scaled(&self, s: f64) -> Result<Dataset> {
        Dataset::new(self.x.iter().map(|v| v * s).collect(), &self.y * s, self.case_ids.clone())
    }
}
