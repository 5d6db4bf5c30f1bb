//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use fwdshape::calendar::{DeliveryPeriod, Granularity};
use fwdshape::constraints::{ConstraintSystem, GranularitySplit};
use nalgebra::DMatrix;

pub fn objective(x: &[f64], y: &DMatrix<f64>, w: &[f64], sys: &ConstraintSystem, alpha: f64, g: &[f64]) -> f64 {
    let mut cost = 0.0;
    for i in 0..x.len() {
        for c in 0..y.ncols() {
            let r = w[i] * y[(i, c)] - g[2 * c] * w[i] * x[i] - g[2 * c + 1] * w[i];
            cost += r * r;
        }
    }
    for row in 0..sys.matrix.nrows() {
        let v: f64 = (0..g.len()).map(|l| sys.matrix[(row, l)] * g[l]).sum::<f64>() - sys.rhs[row];
        cost += alpha * v * v;
    }
    cost
}

/// Minimizer of a quadratic known only through evaluations: Hessian and
/// gradient from exact second differences, then Gaussian elimination.
#[allow(clippy::needless_range_loop)]
pub fn quadratic_minimizer(f: &dyn Fn(&[f64]) -> f64, dim: usize) -> Vec<f64> {
    let zero = vec![0.0; dim];
    let f0 = f(&zero);
    let unit = |i: usize| {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        e
    };
    let fi: Vec<f64> = (0..dim).map(|i| f(&unit(i))).collect();
    let fmi: Vec<f64> = (0..dim)
        .map(|i| {
            let mut e = vec![0.0; dim];
            e[i] = -1.0;
            f(&e)
        })
        .collect();
    let mut h = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        h[i][i] = fi[i] + fmi[i] - 2.0 * f0;
        for j in 0..i {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e[j] = 1.0;
            let v = f(&e) - fi[i] - fi[j] + f0;
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    let grad: Vec<f64> = (0..dim).map(|i| (fi[i] - fmi[i]) / 2.0).collect();
    // solve H z = -grad
    let mut a: Vec<Vec<f64>> = h.iter().zip(&grad).map(|(row, g)| {
        let mut r = row.clone();
        r.push(-g);
        r
    }).collect();
    for col in 0..dim {
        let piv = (col..dim).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        for row in col + 1..dim {
            let m = a[row][col] / a[col][col];
            for k in col..=dim {
                a[row][k] -= m * a[col][k];
            }
        }
    }
    let mut z = vec![0.0; dim];
    for row in (0..dim).rev() {
        let s: f64 = (row + 1..dim).map(|k| a[row][k] * z[k]).sum();
        z[row] = (a[row][dim] - s) / a[row][row];
    }
    z
}


pub fn year_quarters(year: i32) -> GranularitySplit {
    let p = DeliveryPeriod::year(year).unwrap();
    GranularitySplit::equal(p, p.children(Granularity::Quarter).unwrap()).unwrap()
}

pub const TABLE_GAMMA: [f64; 8] = [1.121, -1.604, 0.875, 1.406, 0.921, 0.930, 1.083, -0.732];
