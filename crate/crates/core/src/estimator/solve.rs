//! Penalized weighted least squares: the inner solve of the reweighting loop.
//!
//! Minimizes
//! `sum_k sum_i w_i^2 (y_ik - A_k x_i - B_k)^2 + alpha * |A_eq gamma - b_eq|^2`.
//! The normal matrix is `G + alpha * A_eq' A_eq` with `G` block diagonal
//! (one 2x2 Gram block per child). It is solved by eliminating the
//! constraint rows: with `lambda = alpha (A_eq gamma - b_eq)`,
//! `(A_eq G^-1 A_eq' + I / alpha) lambda = A_eq G^-1 r - b_eq`, which keeps
//! the solve accurate when `alpha` is very large.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::constraints::{fix_coefficients, ConstraintSystem, ReducedSystem};
use crate::error::{Error, Result};

/// Relative floor on the weighted variance of `x` below which the design is singular.
const RANK_TOL: f64 = 1e-12;

/// Weighted moments of the parent price.
struct Moments {
    sum_w: f64,
    mean_x: f64,
    /// `sum w (x - mean)^2`
    sxx: f64,
    /// `sum w x^2`
    sum_x2: f64,
}

impl Moments {
    fn new(x: &[f64], w2: &[f64]) -> Moments {
        let sum_w: f64 = w2.iter().sum();
        let mean_x = x.iter().zip(w2).map(|(x, w)| w * x).sum::<f64>() / sum_w;
        let sxx = x.iter().zip(w2).map(|(x, w)| w * (x - mean_x).powi(2)).sum();
        let sum_x2 = x.iter().zip(w2).map(|(x, w)| w * x * x).sum();
        Moments { sum_w, mean_x, sxx, sum_x2 }
    }
}

/// Which coefficients of one child are free.
#[derive(Clone, Copy)]
enum Free {
    Both,
    Slope,
    Intercept,
    None,
}

fn free_pattern(reduced: &ReducedSystem, k: usize) -> Free {
    match (reduced.fixed.contains_key(&(2 * k)), reduced.fixed.contains_key(&(2 * k + 1))) {
        (false, false) => Free::Both,
        (false, true) => Free::Slope,
        (true, false) => Free::Intercept,
        (true, true) => Free::None,
    }
}

/// Applies the inverse Gram block of one child to `v` (length 1 or 2).
fn gram_inverse(m: &Moments, free: Free, v: &[f64]) -> Vec<f64> {
    match free {
        Free::Both => {
            let a = (v[0] - m.mean_x * v[1]) / m.sxx;
            vec![a, v[1] / m.sum_w - m.mean_x * a]
        }
        Free::Slope => vec![v[0] / m.sum_x2],
        Free::Intercept => vec![v[0] / m.sum_w],
        Free::None => vec![],
    }
}

/// Unpenalized weighted fit of the free coefficients of one child.
fn free_fit(x: &[f64], y: &[f64], w2: &[f64], m: &Moments, free: Free) -> Vec<f64> {
    match free {
        Free::Both => {
            let mean_y = y.iter().zip(w2).map(|(y, w)| w * y).sum::<f64>() / m.sum_w;
            let sxy: f64 = x
                .iter()
                .zip(y)
                .zip(w2)
                .map(|((x, y), w)| w * (x - m.mean_x) * (y - mean_y))
                .sum();
            let a = sxy / m.sxx;
            vec![a, mean_y - a * m.mean_x]
        }
        Free::Slope => {
            let sxy: f64 = x.iter().zip(y).zip(w2).map(|((x, y), w)| w * x * y).sum();
            vec![sxy / m.sum_x2]
        }
        Free::Intercept => vec![y.iter().zip(w2).map(|(y, w)| w * y).sum::<f64>() / m.sum_w],
        Free::None => vec![],
    }
}

fn check_inputs(x: &[f64], y: &DMatrix<f64>, weights: &[f64], cols: usize, alpha: f64) -> Result<()> {
    if y.nrows() != x.len() || weights.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parent prices, {} response rows, {} weights",
            x.len(),
            y.nrows(),
            weights.len()
        )));
    }
    if cols != 2 * y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "constraint system has {cols} columns for {} children",
            y.ncols()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("penalty must be finite and >= 0, got {alpha}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidConfig("case weights must be finite and >= 0".into()));
    }
    Ok(())
}

/// Minimizer of the penalized weighted least-squares cost over all `2K` coefficients.
pub fn penalized_wls_solve(
    x: &[f64],
    y: &DMatrix<f64>,
    weights: &[f64],
    system: &ConstraintSystem,
    alpha: f64,
) -> Result<Vec<f64>> {
    let reduced = fix_coefficients(system, &BTreeMap::new())?;
    penalized_wls_solve_reduced(x, y, weights, &reduced, alpha)
}

/// As [`penalized_wls_solve`] with some coefficients pinned; returns the full vector.
pub fn penalized_wls_solve_reduced(
    x: &[f64],
    y: &DMatrix<f64>,
    weights: &[f64],
    reduced: &ReducedSystem,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_inputs(x, y, weights, reduced.full_len, alpha)?;
    let w2: Vec<f64> = weights.iter().map(|w| w * w).collect();
    if w2.iter().filter(|w| **w > 0.0).count() < 2 {
        return Err(Error::RankDeficient);
    }
    let m = Moments::new(x, &w2);
    if !(m.sxx > RANK_TOL * m.sum_x2) {
        return Err(Error::RankDeficient);
    }

    let k = y.ncols();
    let patterns: Vec<Free> = (0..k).map(|c| free_pattern(reduced, c)).collect();

    // unpenalized solution of the free coefficients, child by child
    let mut z0 = Vec::with_capacity(reduced.free.len());
    for (c, &free) in patterns.iter().enumerate() {
        let slope = reduced.fixed.get(&(2 * c)).copied().unwrap_or(0.0);
        let intercept = reduced.fixed.get(&(2 * c + 1)).copied().unwrap_or(0.0);
        let adjusted: Vec<f64> =
            x.iter().enumerate().map(|(i, xi)| y[(i, c)] - slope * xi - intercept).collect();
        z0.extend(free_fit(x, &adjusted, &w2, &m, free));
    }
    let z0 = DVector::from_vec(z0);

    let sys = &reduced.system;
    if alpha == 0.0 || sys.rows() == 0 {
        return reduced.expand(z0.as_slice());
    }

    // G^-1 C' column by column
    let c_mat = &sys.matrix;
    let mut ginv_ct = DMatrix::zeros(c_mat.ncols(), c_mat.nrows());
    for row in 0..c_mat.nrows() {
        let mut offset = 0;
        for &free in &patterns {
            let width = match free {
                Free::Both => 2,
                Free::Slope | Free::Intercept => 1,
                Free::None => 0,
            };
            let v: Vec<f64> = (0..width).map(|j| c_mat[(row, offset + j)]).collect();
            for (j, val) in gram_inverse(&m, free, &v).into_iter().enumerate() {
                ginv_ct[(offset + j, row)] = val;
            }
            offset += width;
        }
    }

    let schur = c_mat * &ginv_ct + DMatrix::identity(sys.rows(), sys.rows()) / alpha;
    let target = c_mat * &z0 - &sys.rhs;
    let lambda = match schur.clone().cholesky() {
        Some(ch) => ch.solve(&target),
        None => schur.lu().solve(&target).ok_or(Error::RankDeficient)?,
    };
    let z = z0 - ginv_ct * lambda;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient);
    }
    reduced.expand(z.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::{DeliveryPeriod, Granularity};
    use crate::constraints::{build_constraints, max_abs_gap, GranularitySplit};
    use approx::assert_relative_eq;

    fn quarters_system() -> ConstraintSystem {
        let p = DeliveryPeriod::year(2014).unwrap();
        build_constraints(&GranularitySplit::equal(p, p.children(Granularity::Quarter).unwrap()).unwrap())
    }

    /// A year split into two half-year windows with equal weights.
    fn two_child_system() -> ConstraintSystem {
        let year = DeliveryPeriod::year(2014).unwrap();
        let mid = DeliveryPeriod::month(2014, 7).unwrap().start;
        let halves = vec![DeliveryPeriod { end: mid, ..year }, DeliveryPeriod { start: mid, ..year }];
        build_constraints(&GranularitySplit::with_weights(year, halves, vec![0.5, 0.5]).unwrap())
    }

    fn exact_data(gamma: &[f64], xs: &[f64]) -> DMatrix<f64> {
        let k = gamma.len() / 2;
        DMatrix::from_fn(xs.len(), k, |i, c| gamma[2 * c] * xs[i] + gamma[2 * c + 1])
    }

    #[test]
    fn exact_recovery_for_any_alpha() {
        let gamma = [1.121, -1.604, 0.875, 1.406, 0.921, 0.930, 1.083, -0.732];
        let xs: Vec<f64> = (0..20).map(|i| 40.0 + 1.3 * i as f64 + (i as f64).sin()).collect();
        let y = exact_data(&gamma, &xs);
        let sys = quarters_system();
        for alpha in [0.0, 1.0, 1e3, 1e9] {
            let got = penalized_wls_solve(&xs, &y, &[1.0; 20], &sys, alpha).unwrap();
            for (g, e) in got.iter().zip(gamma) {
                assert!((g - e).abs() < 1e-10, "alpha {alpha}: {got:?}");
            }
        }
    }

    #[test]
    fn zero_penalty_is_per_column_ols() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 3.0, 4.0, 2.0, 2.0, 5.0, 0.0]);
        let sys = two_child_system();
        let got = penalized_wls_solve(&xs, &y, &[1.0; 4], &sys, 0.0).unwrap();
        // column 0: x = 1..4, y = 1,3,2,5 -> slope 1.1, intercept 0
        assert_relative_eq!(got[0], 1.1, epsilon = 1e-12);
        assert!(got[1].abs() < 1e-12);
        // column 1: y = 5,4,2,0 -> slope -1.7, intercept 7.0
        assert_relative_eq!(got[2], -1.7, epsilon = 1e-12);
        assert_relative_eq!(got[3], 7.0, epsilon = 1e-12);
    }

    #[test]
    fn penalty_shrinks_gap() {
        let xs: Vec<f64> = (0..30).map(|i| 1.0 + 0.1 * i as f64).collect();
        let y = DMatrix::from_fn(30, 4, |i, c| (c as f64 + 1.0) * xs[i] + ((i * 7 + c * 3) % 5) as f64 * 0.1);
        let sys = quarters_system();
        let mut last = f64::INFINITY;
        for alpha in [0.0, 1.0, 100.0, 1e4, 1e8, 1e13] {
            let g = penalized_wls_solve(&xs, &y, &vec![1.0; 30], &sys, alpha).unwrap();
            let gap = max_abs_gap(&sys, &g).unwrap();
            assert!(gap <= last + 1e-12);
            last = gap;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn rank_deficiency() {
        let sys = quarters_system();
        let y = DMatrix::from_element(5, 4, 1.0);
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(
            penalized_wls_solve(&xs, &y, &[1.0, 0.0, 0.0, 0.0, 0.0], &sys, 1.0),
            Err(Error::RankDeficient)
        ));
        assert!(matches!(
            penalized_wls_solve(&[2.0; 5], &y, &[1.0; 5], &sys, 1.0),
            Err(Error::RankDeficient)
        ));
        // the same x only among the positively weighted cases
        assert!(matches!(
            penalized_wls_solve(&[2.0, 2.0, 2.0, 4.0, 5.0], &y, &[1.0, 1.0, 1.0, 0.0, 0.0], &sys, 1.0),
            Err(Error::RankDeficient)
        ));
        assert!(penalized_wls_solve(&xs, &y, &[1.0; 5], &sys, -1.0).is_err());
    }
}
