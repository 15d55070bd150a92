//! Tensor algebra for axisymmetric rigid particles: rotational resistance,
//! its square root and inverse, the torque-to-stresslet coupling and the
//! Brownian diffusion matrix on the sphere.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Unit axis of an axisymmetric particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation(Vec3);

impl Orientation {
    /// Normalizes `v`; fails for zero or non-finite input.
    pub fn new(v: Vec3) -> Result<Orientation> {
        let norm = v.norm();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::NotNormalizable([v.x, v.y, v.z]));
        }
        Ok(Orientation(v / norm))
    }

    /// Wraps a vector already known to be unit length (debug-checked).
    pub fn from_unit(v: Vec3) -> Orientation {
        debug_assert!((v.norm() - 1.0).abs() < 1e-12);
        Orientation(v)
    }

    pub fn e3() -> Orientation {
        Orientation(Vec3::z())
    }

    pub fn vec(&self) -> &Vec3 {
        &self.0
    }

    pub fn into_vec(self) -> Vec3 {
        self.0
    }

    /// Orthogonal projection onto the tangent plane at this orientation.
    pub fn project_tangent(&self, v: &Vec3) -> Vec3 {
        v - self.0 * self.0.dot(v)
    }

    /// Great-circle distance.
    pub fn geodesic(&self, other: &Orientation) -> f64 {
        // atan2 form is accurate for nearly parallel and antipodal pairs
        let c = self.0.dot(&other.0);
        let s = self.0.cross(&other.0).norm();
        s.atan2(c)
    }
}

/// The five scalars describing the Stokes resistance of an axisymmetric
/// particle (translation, rotation about the two principal axes, and the
/// rotation-strain coupling).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResistanceParams {
    pub gamma_perp: f64,
    pub gamma_par: f64,
    pub gamma_rot: f64,
    pub gamma_rot_par: f64,
    #[serde(rename = "gamma_E")]
    pub gamma_e: f64,
}

impl ResistanceParams {
    pub fn new(
        gamma_perp: f64,
        gamma_par: f64,
        gamma_rot: f64,
        gamma_rot_par: f64,
        gamma_e: f64,
    ) -> Result<ResistanceParams> {
        let p = ResistanceParams { gamma_perp, gamma_par, gamma_rot, gamma_rot_par, gamma_e };
        p.validate()?;
        Ok(p)
    }

    /// Spheres carry no rotation-strain coupling.
    pub fn sphere() -> ResistanceParams {
        ResistanceParams {
            gamma_perp: 1.0,
            gamma_par: 1.0,
            gamma_rot: 1.0,
            gamma_rot_par: 1.0,
            gamma_e: 0.0,
        }
    }

    /// Generic anisotropic particle used by the convergence experiments.
    pub fn anisotropic() -> ResistanceParams {
        ResistanceParams {
            gamma_perp: 1.0,
            gamma_par: 1.0,
            gamma_rot: 1.0,
            gamma_rot_par: 1.0,
            gamma_e: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma_perp", self.gamma_perp),
            ("gamma_par", self.gamma_par),
            ("gamma_rot", self.gamma_rot),
            ("gamma_rot_par", self.gamma_rot_par),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter { name, reason: format!("must be > 0, got {v}") });
            }
        }
        if !self.gamma_e.is_finite() {
            return Err(Error::InvalidParameter { name: "gamma_E", reason: "must be finite".into() });
        }
        Ok(())
    }
}

/// Symmetric traceless 3x3 matrix stored by five independent entries
/// `(s11, s22, s12, s13, s23)`; `s33 = -(s11 + s22)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymTraceless3(pub [f64; 5]);

impl SymTraceless3 {
    pub const ZERO: SymTraceless3 = SymTraceless3([0.0; 5]);

    /// Symmetric traceless part of an arbitrary matrix.
    pub fn from_matrix(m: &Mat3) -> SymTraceless3 {
        let tr3 = (m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) / 3.0;
        SymTraceless3([
            m[(0, 0)] - tr3,
            m[(1, 1)] - tr3,
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            0.5 * (m[(1, 2)] + m[(2, 1)]),
        ])
    }

    pub fn to_matrix(&self) -> Mat3 {
        let [a, b, c, d, e] = self.0;
        let f = -(a + b);
        Mat3::new(a, c, d, c, b, e, d, e, f)
    }

    /// Frobenius inner product with a general matrix.
    pub fn contract(&self, m: &Mat3) -> f64 {
        self.to_matrix().component_mul(m).sum()
    }

    pub fn norm(&self) -> f64 {
        self.to_matrix().norm()
    }

    /// `R S Rᵀ`.
    pub fn rotate(&self, r: &Mat3) -> SymTraceless3 {
        SymTraceless3::from_matrix(&(r * self.to_matrix() * r.transpose()))
    }
}

impl Add for SymTraceless3 {
    type Output = SymTraceless3;
    fn add(self, o: SymTraceless3) -> SymTraceless3 {
        let mut out = self.0;
        for (a, b) in out.iter_mut().zip(o.0) {
            *a += b;
        }
        SymTraceless3(out)
    }
}

impl AddAssign for SymTraceless3 {
    fn add_assign(&mut self, o: SymTraceless3) {
        *self = *self + o;
    }
}

impl Sub for SymTraceless3 {
    type Output = SymTraceless3;
    fn sub(self, o: SymTraceless3) -> SymTraceless3 {
        self + (-o)
    }
}

impl Neg for SymTraceless3 {
    type Output = SymTraceless3;
    fn neg(self) -> SymTraceless3 {
        SymTraceless3(self.0.map(|v| -v))
    }
}

impl Mul<f64> for SymTraceless3 {
    type Output = SymTraceless3;
    fn mul(self, s: f64) -> SymTraceless3 {
        SymTraceless3(self.0.map(|v| v * s))
    }
}

/// `[T]_M`, the skew matrix with `[T]_M v = T x v`.
pub fn skew_matrix(t: &Vec3) -> Mat3 {
    Mat3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

fn projector_split(xi: &Vec3, perp: f64, par: f64) -> Mat3 {
    let xx = xi * xi.transpose();
    (Mat3::identity() - xx) * perp + xx * par
}

/// Translational resistance (present for completeness; translations are
/// frozen in the dynamics).
pub fn r1(xi: &Orientation, p: &ResistanceParams) -> Mat3 {
    projector_split(xi.vec(), p.gamma_perp, p.gamma_par)
}

/// Rotational resistance `γ_rot (Id − ξ⊗ξ) + γ_rot∥ ξ⊗ξ`.
pub fn r2(xi: &Orientation, p: &ResistanceParams) -> Mat3 {
    projector_split(xi.vec(), p.gamma_rot, p.gamma_rot_par)
}

pub fn r2_sqrt(xi: &Orientation, p: &ResistanceParams) -> Mat3 {
    r2_sqrt_ambient(xi.vec(), p)
}

/// The square-root formula evaluated at an arbitrary (not necessarily
/// unit) vector; this is the extension used by the Itô–Stratonovich
/// correction.
pub fn r2_sqrt_ambient(v: &Vec3, p: &ResistanceParams) -> Mat3 {
    projector_split(v, p.gamma_rot.sqrt(), p.gamma_rot_par.sqrt())
}

pub fn r2_inv(xi: &Orientation, p: &ResistanceParams) -> Mat3 {
    projector_split(xi.vec(), 1.0 / p.gamma_rot, 1.0 / p.gamma_rot_par)
}

/// Directional structure of the orientation gradient of `√R₂ b`:
/// `(√γ_rot∥ − √γ_rot) [(ξ·b) Id + ξ⊗b]`. Rows index the output
/// component, columns the derivative direction.
pub fn r2_sqrt_grad(xi: &Orientation, p: &ResistanceParams, b: &Vec3) -> Mat3 {
    let xi = xi.vec();
    let c = p.gamma_rot_par.sqrt() - p.gamma_rot.sqrt();
    (Mat3::identity() * xi.dot(b) + xi * b.transpose()) * c
}

/// Stresslet induced by a torque on a force-free, strain-free particle:
/// `(γ_E/γ_rot) sym((T×ξ)⊗ξ)`.
pub fn stresslet_coupling(xi: &Orientation, p: &ResistanceParams, t: &Vec3) -> SymTraceless3 {
    let x = xi.vec();
    let a = t.cross(x) * (p.gamma_e / p.gamma_rot);
    // (T×ξ)·ξ = 0, so the symmetric part is already traceless
    SymTraceless3([
        a.x * x.x,
        a.y * x.y,
        0.5 * (a.x * x.y + a.y * x.x),
        0.5 * (a.x * x.z + a.z * x.x),
        0.5 * (a.y * x.z + a.z * x.y),
    ])
}

/// Brownian diffusion matrix `√2 [ξ]_M`.
pub fn sigma_d(xi: &Orientation) -> Mat3 {
    skew_matrix(xi.vec()) * std::f64::consts::SQRT_2
}
