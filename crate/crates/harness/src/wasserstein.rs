//! Wasserstein-1 distance between weighted atom sets on `ℝ³ × S²` with
//! ground cost `|x − x′| + d_{S²}(ξ, ξ′)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use suspension_core::{Orientation, Vec3};

use crate::error::{HarnessError, Result};

/// Largest atom count on either side for which the exact solver is used.
pub const EXACT_CAP: usize = 5000;

const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: Vec3,
    pub xi: Orientation,
    pub weight: f64,
}

impl Atom {
    pub fn new(x: Vec3, xi: Orientation, weight: f64) -> Atom {
        Atom { x, xi, weight }
    }
}

pub fn ground_cost(a: &Atom, b: &Atom) -> f64 {
    (a.x - b.x).norm() + a.xi.geodesic(&b.xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W1Method {
    Exact,
    Entropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1Result {
    pub value: f64,
    pub method: W1Method,
    /// Entropic regularization used, if any.
    pub epsilon: Option<f64>,
}

fn check_atoms(a: &[Atom], b: &[Atom]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(HarnessError::Invalid("wasserstein1 needs nonempty atom sets".into()));
    }
    if a.iter().chain(b).any(|t| !(t.weight >= 0.0 && t.weight.is_finite())) {
        return Err(HarnessError::Invalid("atom weights must be finite and nonnegative".into()));
    }
    let ma: f64 = a.iter().map(|t| t.weight).sum();
    let mb: f64 = b.iter().map(|t| t.weight).sum();
    if (ma - mb).abs() > MASS_TOL * ma.max(mb).max(1.0) {
        return Err(suspension_core::Error::Unbalanced(ma, mb).into());
    }
    Ok((ma, mb))
}

fn cost_matrix(a: &[Atom], b: &[Atom]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| ground_cost(&a[i], &b[j]))
}

/// Exact below [`EXACT_CAP`], entropic with `epsilon` above it.
pub fn wasserstein1(a: &[Atom], b: &[Atom], epsilon: f64) -> Result<W1Result> {
    if a.len() <= EXACT_CAP && b.len() <= EXACT_CAP {
        Ok(W1Result { value: wasserstein1_exact(a, b)?, method: W1Method::Exact, epsilon: None })
    } else {
        Ok(W1Result { value: wasserstein1_entropic(a, b, epsilon)?, method: W1Method::Entropic, epsilon: Some(epsilon) })
    }
}

/// Exact optimal transport by successive shortest augmenting paths with
/// node potentials (dense Dijkstra on the bipartite residual graph).
pub fn wasserstein1_exact(a: &[Atom], b: &[Atom]) -> Result<f64> {
    let (ma, mb) = check_atoms(a, b)?;
    let c = cost_matrix(a, b);
    let (n, m) = (a.len(), b.len());
    let scale = ma.max(1e-300);
    let mut supply: Vec<f64> = a.iter().map(|t| t.weight / ma).collect();
    // rescale so both sides carry exactly the same total
    let mut demand: Vec<f64> = b.iter().map(|t| t.weight / mb).collect();
    let eps = 1e-13;
    // flow carried on edge (i, j); backward residual edges are the nonzero entries
    let mut flow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    let mut pot_s = vec![0.0; n];
    let mut pot_t = vec![0.0; m];
    let mut guard = 0usize;
    while supply.iter().any(|s| *s > eps) && demand.iter().any(|d| *d > eps) {
        guard += 1;
        if guard > 50 * (n + m) + 16 {
            return Err(suspension_core::Error::Numerical("transport solver failed to terminate".into()).into());
        }
        // dense Dijkstra over sources (0..n) and sinks (n..n+m)
        let mut dist = vec![f64::INFINITY; n + m];
        let mut prev = vec![usize::MAX; n + m];
        let mut done = vec![false; n + m];
        for i in 0..n {
            if supply[i] > eps {
                dist[i] = 0.0;
            }
        }
        let target = loop {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for (v, d) in dist.iter().enumerate() {
                if !done[v] && *d < bd {
                    bd = *d;
                    best = v;
                }
            }
            if best == usize::MAX {
                return Err(suspension_core::Error::Numerical("no augmenting path".into()).into());
            }
            done[best] = true;
            if best < n {
                let i = best;
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let nd = bd + (c[(i, j)] - pot_s[i] + pot_t[j]).max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = i;
                    }
                }
            } else {
                let j = best - n;
                if demand[j] > eps {
                    break j;
                }
                for &(i, f) in &flow[j] {
                    if f <= eps || done[i] {
                        continue;
                    }
                    let nd = bd + (-c[(i, j)] - pot_t[j] + pot_s[i]).max(0.0);
                    if nd < dist[i] {
                        dist[i] = nd;
                        prev[i] = best;
                    }
                }
            }
        };
        let dt = dist[n + target];
        for i in 0..n {
            pot_s[i] -= dist[i].min(dt);
        }
        for j in 0..m {
            pot_t[j] -= dist[n + j].min(dt);
        }
        // bottleneck along the path
        let mut delta = demand[target];
        let mut v = n + target;
        loop {
            let u = prev[v];
            if v >= n {
                // forward edge u -> v, unbounded
            } else {
                let j = u - n;
                let f = flow[j].iter().find(|e| e.0 == v).map_or(0.0, |e| e.1);
                delta = delta.min(f);
            }
            if u < n && prev[u] == usize::MAX {
                delta = delta.min(supply[u]);
                break;
            }
            v = u;
        }
        // augment
        let mut v = n + target;
        loop {
            let u = prev[v];
            if v >= n {
                let (i, j) = (u, v - n);
                match flow[j].iter_mut().find(|e| e.0 == i) {
                    Some(e) => e.1 += delta,
                    None => flow[j].push((i, delta)),
                }
            } else {
                let (i, j) = (v, u - n);
                if let Some(e) = flow[j].iter_mut().find(|e| e.0 == i) {
                    e.1 -= delta;
                }
                flow[j].retain(|e| e.1 > eps);
            }
            if u < n && prev[u] == usize::MAX {
                supply[u] -= delta;
                break;
            }
            v = u;
        }
        demand[target] -= delta;
    }
    let mut total = 0.0;
    for (j, edges) in flow.iter().enumerate() {
        for &(i, f) in edges {
            total += f * c[(i, j)];
        }
    }
    Ok(total * scale)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let mx = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Transport cost `⟨P_ε, C⟩` of the entropic plan at regularization `ε`,
/// computed by log-domain Sinkhorn with ε-scaling.
pub fn sinkhorn_cost(a: &[Atom], b: &[Atom], epsilon: f64) -> Result<f64> {
    let (ma, mb) = check_atoms(a, b)?;
    if !(epsilon > 0.0) {
        return Err(HarnessError::Invalid("epsilon must be > 0".into()));
    }
    let c = cost_matrix(a, b);
    let la: Vec<f64> = a.iter().map(|t| (t.weight / ma).ln()).collect();
    let lb: Vec<f64> = b.iter().map(|t| (t.weight / mb).ln()).collect();
    let (n, m) = (a.len(), b.len());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];
    let mut eps = c.max().max(epsilon);
    loop {
        // intermediate levels only warm-start the potentials
        let tol = if eps <= epsilon { 1e-6 } else { 1e-3 };
        for _ in 0..5000 {
            for i in 0..n {
                for j in 0..m {
                    buf[j] = lb[j] + (g[j] - c[(i, j)]) / eps;
                }
                f[i] = -eps * log_sum_exp(&buf[..m]);
            }
            for j in 0..m {
                for i in 0..n {
                    buf[i] = la[i] + (f[i] - c[(i, j)]) / eps;
                }
                g[j] = -eps * log_sum_exp(&buf[..n]);
            }
            // g-update makes column marginals exact; check the rows
            let mut err = 0.0;
            for i in 0..n {
                for j in 0..m {
                    buf[j] = lb[j] + (f[i] + g[j] - c[(i, j)]) / eps;
                }
                err += (log_sum_exp(&buf[..m]).exp() - 1.0).abs() * la[i].exp();
            }
            if err < tol {
                break;
            }
        }
        if eps <= epsilon {
            break;
        }
        eps = (eps * 0.5).max(epsilon);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            total += (la[i] + lb[j] + (f[i] + g[j] - c[(i, j)]) / eps).exp() * c[(i, j)];
        }
    }
    Ok(total * ma)
}

/// Richardson extrapolation `2 W(ε/2) − W(ε)` of the entropic transport
/// cost, whose bias is first order in `ε` up to logarithms.
pub fn wasserstein1_entropic(a: &[Atom], b: &[Atom], epsilon: f64) -> Result<f64> {
    let coarse = sinkhorn_cost(a, b, epsilon)?;
    let fine = sinkhorn_cost(a, b, 0.5 * epsilon)?;
    Ok(2.0 * fine - coarse)
}
