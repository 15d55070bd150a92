//! Gauss–Legendre rules and Legendre polynomials.

use std::f64::consts::PI;

/// Legendre polynomial `P_l(x)` and its derivative, by the three-term
/// recurrence.
pub fn legendre_with_derivative(l: usize, x: f64) -> (f64, f64) {
    if l == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=l {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let l = l as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint value l(l+1)/2 · x^{l+1}
        0.5 * l * (l + 1.0) * x.powf(l + 1.0)
    } else {
        l * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, dp)
}

pub fn legendre(l: usize, x: f64) -> f64 {
    legendre_with_derivative(l, x).0
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1],
/// nodes in increasing order. Exact for polynomials of degree `2n − 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (x.iter().map(|t| mid + half * t).collect(), w.iter().map(|v| v * half).collect())
}
