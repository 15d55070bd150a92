//! Stokes singularity kernels and the fields built from them.
//!
//! Contractions of a matrix with the gradient of the Oseen tensor follow
//! `(M : ∇Φ)_α = Σ_{β,γ} M_{γβ} ∂_β Φ_{αγ}`. With that convention a
//! symmetric `M` gives the classical stresslet and `u = Σ σ(y) : ∇Φ(x − y)`
//! solves `−Δu + ∇p = div σ`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_slice, ExecMode};
use crate::particles::ParticleConfiguration;
use crate::tensor::{skew_matrix, stresslet_coupling, Mat3, Orientation, ResistanceParams, SymTraceless3, Vec3};

const INV_8PI: f64 = 1.0 / (8.0 * PI);

fn nonsingular(x: &Vec3) -> Result<f64> {
    let r = x.norm();
    if !r.is_finite() {
        return Err(Error::NonFinite("kernel argument"));
    }
    if r == 0.0 {
        return Err(Error::Singular);
    }
    Ok(r)
}

/// Oseen tensor `(1/8π)(Id/|x| + x⊗x/|x|³)`.
pub fn oseen(x: &Vec3) -> Result<Mat3> {
    let r = nonsingular(x)?;
    Ok((Mat3::identity() / r + x * x.transpose() / (r * r * r)) * INV_8PI)
}

/// `∂_β Φ_{αγ}(x)`, indexed `[β][(α, γ)]`.
pub fn oseen_gradient(x: &Vec3) -> Result<[Mat3; 3]> {
    let r = nonsingular(x)?;
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    let mut g = [Mat3::zeros(); 3];
    for (b, gb) in g.iter_mut().enumerate() {
        for a in 0..3 {
            for c in 0..3 {
                let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
                gb[(a, c)] = INV_8PI
                    * ((-d(a, c) * x[b] + d(a, b) * x[c] + d(c, b) * x[a]) / r3 - 3.0 * x[a] * x[c] * x[b] / r5);
            }
        }
    }
    Ok(g)
}

/// `M : ∇Φ(x)` for an arbitrary 3×3 matrix, in closed form:
/// `(1/8π)[(Mᵀx − Mx + tr(M) x)/|x|³ − 3x (x·Mx)/|x|⁵]`.
pub fn dipole_field(m: &Mat3, x: &Vec3) -> Result<Vec3> {
    let r = nonsingular(x)?;
    let r3 = r * r * r;
    let mx = m * x;
    let q = x.dot(&mx);
    Ok(((m.transpose() * x - mx + x * m.trace()) / r3 - x * (3.0 * q / (r3 * r * r))) * INV_8PI)
}

/// Velocity of a point torque, `T×x/(8π|x|³)`.
///
/// Applying the contraction above literally to `[T]_M` yields
/// `−2 T×x/(8π|x|³)`; the kernel is normalized to the point-torque
/// solution of the Stokes equations, i.e. `−½ [T]_M : ∇Φ`.
pub fn rotlet_field(t: &Vec3, x: &Vec3) -> Result<Vec3> {
    Ok(dipole_field(&skew_matrix(t), x)? * -0.5)
}

/// `S : ∇Φ(x) = −3x (x·Sx)/(8π|x|⁵)`.
pub fn stresslet_field(s: &SymTraceless3, x: &Vec3) -> Result<Vec3> {
    let r = nonsingular(x)?;
    let sm = s.to_matrix();
    let q = x.dot(&(sm * x));
    Ok(x * (-3.0 * q * INV_8PI / r.powi(5)))
}

/// Velocity gradient `G_{αδ} = ∂_δ u_α` of the rotlet field.
pub fn rotlet_gradient(t: &Vec3, x: &Vec3) -> Result<Mat3> {
    let r = nonsingular(x)?;
    let r3 = r * r * r;
    Ok((skew_matrix(t) / r3 - t.cross(x) * x.transpose() * (3.0 / (r3 * r * r))) * INV_8PI)
}

/// Velocity gradient of the stresslet field.
pub fn stresslet_gradient(s: &SymTraceless3, x: &Vec3) -> Result<Mat3> {
    let r = nonsingular(x)?;
    let r2 = r * r;
    let r5 = r2 * r2 * r;
    let sm = s.to_matrix();
    let sx = sm * x;
    let q = x.dot(&sx);
    let g = Mat3::identity() * q + x * sx.transpose() * 2.0 - x * x.transpose() * (5.0 * q / r2);
    Ok(g * (-3.0 * INV_8PI / r5))
}

/// Stresslet of particle `i`'s torque.
pub fn particle_stresslet(xi: &Orientation, p: &ResistanceParams, t: &Vec3) -> SymTraceless3 {
    stresslet_coupling(xi, p, t)
}

fn check_lengths(config: &ParticleConfiguration, orientations: &[Orientation], torques: &[Vec3]) -> Result<()> {
    if orientations.len() != config.n() {
        return Err(Error::LengthMismatch { what: "orientations", expected: config.n(), got: orientations.len() });
    }
    if torques.len() != config.n() {
        return Err(Error::LengthMismatch { what: "torques", expected: config.n(), got: torques.len() });
    }
    Ok(())
}

/// Superposed single-particle field `Σ_i rotlet(T_i) + stresslet(S(ξ_i)T_i)`.
pub fn l_n_app_eval(
    config: &ParticleConfiguration,
    orientations: &[Orientation],
    torques: &[Vec3],
    params: &ResistanceParams,
    x: &Vec3,
) -> Result<Vec3> {
    check_lengths(config, orientations, torques)?;
    let mut u = Vec3::zeros();
    for (i, c) in config.centers.iter().enumerate() {
        let d = x - c;
        if d.norm() == 0.0 {
            return Err(Error::ProbeAtCenter { probe: [x.x, x.y, x.z], index: i });
        }
        u += rotlet_field(&torques[i], &d)?;
        u += stresslet_field(&stresslet_coupling(&orientations[i], params, &torques[i]), &d)?;
    }
    Ok(u)
}

/// Derivative of the stresslet coupling along a tangent direction of `ξ`.
pub fn stresslet_coupling_derivative(xi: &Orientation, p: &ResistanceParams, t: &Vec3, tangent: &Vec3) -> SymTraceless3 {
    let x = xi.vec();
    let c = p.gamma_e / p.gamma_rot;
    let a = t.cross(tangent) * x.transpose() + t.cross(x) * tangent.transpose();
    SymTraceless3::from_matrix(&((a + a.transpose()) * (0.5 * c)))
}

fn check_tangent(xi: &Orientation, tangent: &Vec3) -> Result<()> {
    let dot = xi.vec().dot(tangent);
    if dot.abs() > 1e-10 * tangent.norm().max(1.0) {
        return Err(Error::NotTangent(dot.abs()));
    }
    Ok(())
}

/// Derivative of [`l_n_app_eval`] with respect to `ξ_j` along `tangent`.
pub fn l_n_app_orientation_grad(
    config: &ParticleConfiguration,
    orientations: &[Orientation],
    torques: &[Vec3],
    params: &ResistanceParams,
    x: &Vec3,
    j: usize,
    tangent: &Vec3,
) -> Result<Vec3> {
    check_lengths(config, orientations, torques)?;
    if j >= config.n() {
        return Err(Error::InvalidParameter { name: "j", reason: format!("index {j} out of range") });
    }
    check_tangent(&orientations[j], tangent)?;
    let d = x - config.centers[j];
    if d.norm() == 0.0 {
        return Err(Error::ProbeAtCenter { probe: [x.x, x.y, x.z], index: j });
    }
    stresslet_field(&stresslet_coupling_derivative(&orientations[j], params, &torques[j], tangent), &d)
}

/// Uniform rectilinear node set `origin + h·(i, j, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid3 {
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl Grid3 {
    /// Cell-centred grid covering the cube `[-half, half]³` with `k` cells
    /// per side.
    pub fn centered_cube(half: f64, k: usize) -> Grid3 {
        let h = 2.0 * half / k as f64;
        Grid3 { origin: [-half + 0.5 * h; 3], spacing: h, dims: [k; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::InvalidParameter { name: "grid.spacing", reason: "must be > 0".into() });
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidParameter { name: "grid.dims", reason: "empty grid".into() });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    /// Node position for flat index `n` (x fastest).
    pub fn node(&self, n: usize) -> Vec3 {
        let [nx, ny, _] = self.dims;
        let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
            self.origin[2] + k as f64 * self.spacing,
        )
    }

    pub fn nodes(&self) -> Vec<Vec3> {
        (0..self.len()).map(|n| self.node(n)).collect()
    }
}

/// Symmetric traceless stress sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StressField {
    pub grid: Grid3,
    pub values: Vec<SymTraceless3>,
}

impl StressField {
    pub fn new(grid: Grid3, values: Vec<SymTraceless3>) -> Result<StressField> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { what: "stress values", expected: grid.len(), got: values.len() });
        }
        Ok(StressField { grid, values })
    }

    pub fn from_fn(grid: Grid3, f: impl Fn(&Vec3) -> SymTraceless3) -> Result<StressField> {
        let values = grid.nodes().iter().map(f).collect();
        StressField::new(grid, values)
    }

    /// `Σ σ(y) : M(y) Δy³`.
    pub fn pair_with(&self, m: impl Fn(&Vec3) -> Mat3) -> f64 {
        let terms: Vec<f64> = self.values.iter().enumerate().map(|(n, s)| s.contract(&m(&self.grid.node(n)))).collect();
        crate::exec::pairwise_sum(&terms) * self.grid.cell_volume()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProbe {
    pub points: Vec<Vec3>,
    pub values: Vec<Vec3>,
    /// Probes that coincided with a grid node (that node was skipped).
    pub excluded: Vec<usize>,
}

/// Midpoint quadrature of `u(x) = ∫ σ(y) : ∇Φ(x − y) dy`, the velocity
/// solving `−Δu + ∇p = div σ`, so that `⟨u, Δφ⟩ = ⟨σ, ∇φ⟩` for
/// divergence-free `φ`.
pub fn velocity_from_stress(sigma: &StressField, probes: &[Vec3], mode: ExecMode) -> Result<VelocityProbe> {
    if probes.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite("velocity probe"));
    }
    let dv = sigma.grid.cell_volume();
    let nodes = sigma.grid.nodes();
    let out = map_slice(mode, probes, |p| {
        let mut u = Vec3::zeros();
        let mut hit = false;
        for (y, s) in nodes.iter().zip(&sigma.values) {
            let d = p - y;
            if d.norm() == 0.0 {
                hit = true;
                continue;
            }
            u += stresslet_field(s, &d).expect("nonzero separation") * dv;
        }
        (u, hit)
    });
    let excluded: Vec<usize> = out.iter().enumerate().filter(|(_, (_, hit))| *hit).map(|(i, _)| i).collect();
    if !excluded.is_empty() {
        log::warn!("{} probes coincide with stress nodes; node-excluded sums used", excluded.len());
    }
    Ok(VelocityProbe { points: probes.to_vec(), values: out.into_iter().map(|(u, _)| u).collect(), excluded })
}
