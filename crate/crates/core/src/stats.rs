//! Small statistics toolkit: Monte Carlo summaries, log-log fits, rank
//! correlation.

use serde::{Deserialize, Serialize};

use crate::exec::pairwise_sum;

/// Mean and standard error of a sample of i.i.d. realizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (Bessel-corrected).
    pub std: f64,
    /// `std / sqrt(count)`.
    pub stderr: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        if count == 0 {
            return Summary { count, mean: f64::NAN, std: f64::NAN, stderr: f64::NAN };
        }
        let mean = pairwise_sum(values) / count as f64;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if count > 1 { pairwise_sum(&sq) / (count - 1) as f64 } else { 0.0 };
        let std = var.sqrt();
        Summary { count, mean, std, stderr: std / (count as f64).sqrt() }
    }

    /// z-score of the sample mean against `target`.
    pub fn z_against(&self, target: f64) -> f64 {
        if self.stderr == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY.copysign(self.mean - target)
            }
        } else {
            (self.mean - target) / self.stderr
        }
    }
}

/// Second-moment estimate with its standard error.
pub fn second_moment(values: &[f64]) -> Summary {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    Summary::of(&sq)
}

/// z-score of the difference of two independent estimates.
pub fn combined_z(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    let s = (sa * sa + sb * sb).sqrt();
    if s == 0.0 {
        if a == b {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b) / s
    }
}

/// Ordinary least squares `y = a + b x`; returns `(intercept, slope)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).1
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
