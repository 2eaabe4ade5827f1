//! Small least-squares polynomial fits.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    /// `coefficients[j]` multiplies `x^j`.
    pub coefficients: Vec<f64>,
    pub r2: f64,
}

/// Ordinary least squares of `y` on `1, x, ..., x^degree`.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<PolyFit> {
    let n = x.len();
    if n != y.len() || n <= degree {
        return Err(Error::InsufficientData(format!(
            "{n} points cannot determine a degree-{degree} fit"
        )));
    }
    // center and scale x for conditioning
    let mean = x.iter().sum::<f64>() / n as f64;
    let scale = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    let t: Vec<f64> = x.iter().map(|v| (v - mean) / scale).collect();
    let k = degree + 1;
    let mut a = vec![vec![0.0; k + 1]; k];
    for (ti, yi) in t.iter().zip(y) {
        let mut powers = vec![1.0; k];
        for j in 1..k {
            powers[j] = powers[j - 1] * ti;
        }
        for r in 0..k {
            for c in 0..k {
                a[r][c] += powers[r] * powers[c];
            }
            a[r][k] += powers[r] * yi;
        }
    }
    let scaled = solve(a)?;

    // expand sum_j s_j ((x - mean)/scale)^j into powers of x
    let mut coefficients = vec![0.0; k];
    for (j, s) in scaled.iter().enumerate() {
        let s = s / scale.powi(j as i32);
        for (i, c) in coefficients.iter_mut().enumerate().take(j + 1) {
            *c += s * binomial(j, i) * (-mean).powi((j - i) as i32);
        }
    }

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (ti, yi) in t.iter().zip(y) {
        let fitted = scaled.iter().rev().fold(0.0, |acc, c| acc * ti + c);
        ss_res += (yi - fitted).powi(2);
        ss_tot += (yi - y_mean).powi(2);
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(PolyFit { coefficients, r2 })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn solve(mut a: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let k = a.len();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Numerical("singular normal equations".into()));
        }
        a.swap(col, pivot);
        for r in 0..k {
            if r != col {
                let factor = a[r][col] / a[col][col];
                let pivot_row = a[col].clone();
                for (x, p) in a[r].iter_mut().zip(&pivot_row).skip(col) {
                    *x -= factor * p;
                }
            }
        }
    }
    Ok((0..k).map(|r| a[r][k] / a[r][r]).collect())
}
