//! Frozen particle centers and the geometric diluteness checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::tensor::Vec3;

/// Limits enforced by [`build_config_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLimits {
    /// Separation constant `c`: requires `d_min ≥ c n^{-1/3}` and a surface
    /// gap of at least `c r` between every pair.
    pub c_sep: f64,
    /// Bound on `max |x_i|`.
    pub box_radius: f64,
    /// Warn when `φ_n log n` exceeds this.
    pub dilute_warn: f64,
}

impl ConfigLimits {
    pub fn new(c_sep: f64) -> ConfigLimits {
        ConfigLimits { c_sep, box_radius: 10.0, dilute_warn: 0.1 }
    }
}

/// Diagnostics of the modelling assumptions for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDiagnostics {
    pub n: usize,
    pub r: f64,
    pub phi_n: f64,
    pub phi_n_log_n: f64,
    pub d_min: f64,
    pub d_min_n13: f64,
    pub max_abs_x: f64,
    pub closest_pair: Option<(usize, usize)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfiguration {
    pub centers: Vec<Vec3>,
    pub r: f64,
    pub diagnostics: ConfigDiagnostics,
}

impl ParticleConfiguration {
    pub fn n(&self) -> usize {
        self.centers.len()
    }

    /// Volume fraction `n r³`.
    pub fn phi_n(&self) -> f64 {
        self.diagnostics.phi_n
    }

    pub fn d_min(&self) -> f64 {
        self.diagnostics.d_min
    }

    /// Builds a configuration without enforcing any limit; violations are
    /// recorded as warnings only. Used to probe the non-dilute regime.
    pub fn unchecked(centers: Vec<Vec3>, r: f64) -> ParticleConfiguration {
        let mut diagnostics = diagnose(&centers, r, ExecMode::Parallel);
        if diagnostics.n > 1 && diagnostics.d_min < 2.0 * r {
            diagnostics.warnings.push(format!("particles overlap: d_min = {:.4e} < 2r", diagnostics.d_min));
        }
        if diagnostics.phi_n_log_n > 1.0 {
            diagnostics.warnings.push(format!("not dilute: phi_n log n = {:.3}", diagnostics.phi_n_log_n));
        }
        ParticleConfiguration { centers, r, diagnostics }
    }
}

fn diagnose(centers: &[Vec3], r: f64, mode: ExecMode) -> ConfigDiagnostics {
    let n = centers.len();
    let closest = map_indexed(mode, n, |i| {
        let mut best = (f64::INFINITY, i);
        for (j, c) in centers.iter().enumerate().skip(i + 1) {
            let d = (centers[i] - c).norm();
            if d < best.0 {
                best = (d, j);
            }
        }
        best
    });
    let mut d_min = f64::INFINITY;
    let mut pair = None;
    for (i, (d, j)) in closest.into_iter().enumerate() {
        if d < d_min {
            d_min = d;
            pair = Some((i, j));
        }
    }
    let phi_n = n as f64 * r.powi(3);
    let nf = n as f64;
    ConfigDiagnostics {
        n,
        r,
        phi_n,
        phi_n_log_n: phi_n * nf.ln(),
        d_min,
        d_min_n13: d_min * nf.cbrt(),
        max_abs_x: centers.iter().map(|c| c.norm()).fold(0.0, f64::max),
        closest_pair: pair,
        warnings: vec![],
    }
}

pub fn build_config(centers: Vec<Vec3>, r: f64, c_sep: f64) -> Result<ParticleConfiguration> {
    build_config_with(centers, r, &ConfigLimits::new(c_sep))
}

/// Validates separation, clearance and boundedness; reports `φ_n log n`.
pub fn build_config_with(centers: Vec<Vec3>, r: f64, limits: &ConfigLimits) -> Result<ParticleConfiguration> {
    if centers.is_empty() {
        return Err(Error::InvalidParameter { name: "centers", reason: "need at least one particle".into() });
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidParameter { name: "r", reason: format!("must be > 0, got {r}") });
    }
    if !(limits.c_sep > 0.0) {
        return Err(Error::InvalidParameter { name: "c_sep", reason: "must be > 0".into() });
    }
    if centers.iter().any(|c| !c.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("particle center"));
    }
    let mut diagnostics = diagnose(&centers, r, ExecMode::Parallel);
    let n = centers.len();
    if n > 1 {
        let (i, j) = diagnostics.closest_pair.expect("n > 1");
        let need = limits.c_sep / (n as f64).cbrt();
        if diagnostics.d_min < need {
            return Err(Error::Assumption {
                assumption: "separation",
                detail: format!("d_min = {:.4e} < c n^(-1/3) = {:.4e} for pair ({i}, {j})", diagnostics.d_min, need),
            });
        }
        if diagnostics.d_min - 2.0 * r < limits.c_sep * r {
            return Err(Error::Assumption {
                assumption: "clearance",
                detail: format!("gap {:.4e} < c r = {:.4e} for pair ({i}, {j})", diagnostics.d_min - 2.0 * r, limits.c_sep * r),
            });
        }
    }
    if let Some((k, c)) = centers.iter().enumerate().find(|(_, c)| c.norm() > limits.box_radius) {
        return Err(Error::Assumption {
            assumption: "bounded_box",
            detail: format!("|x_{k}| = {:.4e} exceeds {}", c.norm(), limits.box_radius),
        });
    }
    if diagnostics.phi_n_log_n > limits.dilute_warn {
        let w = format!("phi_n log n = {:.4} above {}", diagnostics.phi_n_log_n, limits.dilute_warn);
        log::warn!("{w}");
        diagnostics.warnings.push(w);
    }
    Ok(ParticleConfiguration { centers, r, diagnostics })
}

/// Cell-centred `k³` lattice in the cube `[-half, half]³`; spacing `2 half / k`.
pub fn cubic_lattice(k: usize, half: f64) -> Vec<Vec3> {
    let h = 2.0 * half / k as f64;
    let mut out = Vec::with_capacity(k * k * k);
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                let p = |i: usize| -half + (i as f64 + 0.5) * h;
                out.push(Vec3::new(p(c), p(b), p(a)));
            }
        }
    }
    out
}

/// Lattice with at least `n` nodes in the unit cube `[-1/2, 1/2]³`,
/// truncated to `n` and jittered uniformly by less than a quarter spacing.
pub fn jittered_lattice(n: usize, jitter_fraction: f64, rng: &mut impl Rng) -> Vec<Vec3> {
    let k = (n as f64).cbrt().ceil() as usize;
    let h = 1.0 / k as f64;
    let j = jitter_fraction.clamp(0.0, 0.249) * h;
    cubic_lattice(k, 0.5)
        .into_iter()
        .take(n)
        .map(|p| {
            if j > 0.0 {
                p + Vec3::new(rng.random_range(-j..j), rng.random_range(-j..j), rng.random_range(-j..j)) / 3f64.sqrt()
            } else {
                p
            }
        })
        .collect()
}
