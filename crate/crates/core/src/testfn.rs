//! Smooth compactly supported test functions with analytic derivatives.
//!
//! Spatial profiles are polynomial bumps `B(x) = (1 − |x−c|²/R²)^k` on the
//! ball of radius `R`; divergence-free fields are `φ = w(t) ∇B × a`, so
//! `div φ = 0` holds identically. Orientation dependence uses harmonic
//! polynomials of degree ≤ 2, whose Laplace–Beltrami eigenvalues are exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat3, Orientation, SymTraceless3, Vec3};

/// Smooth time profile `w(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeWindow {
    One,
    /// `sin²(π t / t_end)`, vanishing to second order at both ends.
    SinSquared { t_end: f64 },
    /// `e^{−rate t}`.
    Decay { rate: f64 },
}

impl TimeWindow {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeWindow::One => 1.0,
            TimeWindow::SinSquared { t_end } => (std::f64::consts::PI * t / t_end).sin().powi(2),
            TimeWindow::Decay { rate } => (-rate * t).exp(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TimeWindow::One => 0.0,
            TimeWindow::SinSquared { t_end } => {
                let a = std::f64::consts::PI / t_end;
                a * (2.0 * a * t).sin()
            }
            TimeWindow::Decay { rate } => -rate * (-rate * t).exp(),
        }
    }

    /// `∫_0^T w`.
    pub fn integral(&self, t: f64) -> f64 {
        match *self {
            TimeWindow::One => t,
            TimeWindow::SinSquared { t_end } => {
                let a = std::f64::consts::PI / t_end;
                0.5 * t - (2.0 * a * t).sin() / (4.0 * a)
            }
            TimeWindow::Decay { rate } => {
                if rate == 0.0 {
                    t
                } else {
                    (1.0 - (-rate * t).exp()) / rate
                }
            }
        }
    }
}

/// `B(x) = (1 − |x − c|²/R²)^k` inside the ball, zero outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 3],
    pub radius: f64,
    pub power: u32,
}

/// Value and derivatives up to third order of a bump at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpJet {
    pub value: f64,
    pub gradient: Vec3,
    pub hessian: Mat3,
    /// `∇(ΔB)`.
    pub grad_laplacian: Vec3,
}

impl Bump {
    pub fn new(center: Vec3, radius: f64, power: u32) -> Bump {
        Bump { center: center.into(), radius, power }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter { name: "bump.radius", reason: "must be > 0".into() });
        }
        if self.power < 4 {
            return Err(Error::InvalidParameter { name: "bump.power", reason: "need power >= 4 for C³ profiles".into() });
        }
        Ok(())
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        let y = x - Vec3::from(self.center);
        let q = 1.0 - y.norm_squared() / (self.radius * self.radius);
        if q <= 0.0 {
            0.0
        } else {
            q.powi(self.power as i32)
        }
    }

    pub fn jet(&self, x: &Vec3) -> BumpJet {
        let y = x - Vec3::from(self.center);
        let r2 = self.radius * self.radius;
        let q = 1.0 - y.norm_squared() / r2;
        if q <= 0.0 {
            return BumpJet { value: 0.0, gradient: Vec3::zeros(), hessian: Mat3::zeros(), grad_laplacian: Vec3::zeros() };
        }
        let k = self.power as f64;
        let kp = self.power as i32;
        // B = F(s), s = |y|²; derivatives of F
        let f0 = q.powi(kp);
        let f1 = -k / r2 * q.powi(kp - 1);
        let f2 = k * (k - 1.0) / (r2 * r2) * q.powi(kp - 2);
        let f3 = -k * (k - 1.0) * (k - 2.0) / (r2 * r2 * r2) * q.powi(kp - 3);
        let yy = y * y.transpose();
        let s = y.norm_squared();
        // ∂_a∂_b∂_c B = 8F''' y_a y_b y_c + 4F''(δ_ab y_c + δ_ac y_b + δ_bc y_a);
        // contracting b = c gives ∇ΔB = (8F''' s + 20F'') y
        BumpJet {
            value: f0,
            gradient: y * (2.0 * f1),
            hessian: yy * (4.0 * f2) + Mat3::identity() * (2.0 * f1),
            grad_laplacian: y * (8.0 * f3 * s + 20.0 * f2),
        }
    }

    /// `∫_{ℝ³} B = 4π R³ · ½ B(3/2, k+1)` with `B(3/2, k+1) = k!/Π_{j=0}^{k}(3/2 + j)`.
    pub fn integral(&self) -> f64 {
        let k = self.power as usize;
        let mut beta = 1.0;
        for j in 1..=k {
            beta *= j as f64;
        }
        for j in 0..=k {
            beta /= 1.5 + j as f64;
        }
        2.0 * std::f64::consts::PI * self.radius.powi(3) * beta
    }
}

/// Divergence-free `φ(t, x) = w(t) ∇B(x) × a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivFreeField {
    pub bump: Bump,
    pub axis: [f64; 3],
    pub window: TimeWindow,
}

/// Spatial derivatives of `φ` at a point, at unit time weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivFreeJet {
    pub value: Vec3,
    /// `[α][δ] = ∂_δ φ_α`.
    pub gradient: Mat3,
    pub curl: Vec3,
    pub laplacian: Vec3,
}

impl DivFreeJet {
    /// Symmetric part `Dφ`.
    pub fn strain(&self) -> SymTraceless3 {
        SymTraceless3::from_matrix(&self.gradient)
    }
}

impl DivFreeField {
    pub fn new(bump: Bump, axis: Vec3, window: TimeWindow) -> DivFreeField {
        DivFreeField { bump, axis: axis.into(), window }
    }

    pub fn validate(&self) -> Result<()> {
        self.bump.validate()
    }

    /// Spatial jet without the time window.
    pub fn jet(&self, x: &Vec3) -> DivFreeJet {
        let a = Vec3::from(self.axis);
        let j = self.bump.jet(x);
        // ∂_δ φ_α = ε_{αβγ} ∂_δ∂_β B a_γ, i.e. column δ is (H e_δ) × a
        let mut grad = Mat3::zeros();
        for d in 0..3 {
            grad.set_column(d, &j.hessian.column(d).into_owned().cross(&a));
        }
        DivFreeJet {
            value: j.gradient.cross(&a),
            gradient: grad,
            curl: j.hessian * a - a * j.hessian.trace(),
            laplacian: j.grad_laplacian.cross(&a),
        }
    }

    pub fn eval(&self, t: f64, x: &Vec3) -> Vec3 {
        self.bump.jet(x).gradient.cross(&Vec3::from(self.axis)) * self.window.value(t)
    }
}

/// Degree ≤ 2 spherical harmonic in polynomial form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SphereHarmonic {
    Constant { c: f64 },
    Linear { c: [f64; 3] },
    /// `ξ·Qξ` with `Q` symmetric traceless.
    Quadratic { q: SymTraceless3 },
}

impl SphereHarmonic {
    pub fn degree(&self) -> usize {
        match self {
            SphereHarmonic::Constant { .. } => 0,
            SphereHarmonic::Linear { .. } => 1,
            SphereHarmonic::Quadratic { .. } => 2,
        }
    }

    pub fn value(&self, xi: &Vec3) -> f64 {
        match self {
            SphereHarmonic::Constant { c } => *c,
            SphereHarmonic::Linear { c } => Vec3::from(*c).dot(xi),
            SphereHarmonic::Quadratic { q } => xi.dot(&(q.to_matrix() * xi)),
        }
    }

    /// Tangential gradient on the sphere.
    pub fn surface_gradient(&self, xi: &Orientation) -> Vec3 {
        let ambient = match self {
            SphereHarmonic::Constant { .. } => Vec3::zeros(),
            SphereHarmonic::Linear { c } => Vec3::from(*c),
            SphereHarmonic::Quadratic { q } => q.to_matrix() * xi.vec() * 2.0,
        };
        xi.project_tangent(&ambient)
    }

    /// `Δ_{S²} Y = −l(l+1) Y`.
    pub fn laplace_beltrami(&self, xi: &Vec3) -> f64 {
        let l = self.degree() as f64;
        -l * (l + 1.0) * self.value(xi)
    }

    /// Expectation under a law with the given first and second moments.
    pub fn expectation(&self, mean: &Vec3, second: &Mat3) -> f64 {
        match self {
            SphereHarmonic::Constant { c } => *c,
            SphereHarmonic::Linear { c } => Vec3::from(*c).dot(mean),
            SphereHarmonic::Quadratic { q } => q.contract(second),
        }
    }
}

/// `ψ(t, x, ξ) = w(t) B(x) Y(ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarTestFunction {
    pub window: TimeWindow,
    pub bump: Option<Bump>,
    pub harmonic: SphereHarmonic,
}

impl ScalarTestFunction {
    pub fn spatial(&self, x: &Vec3) -> f64 {
        self.bump.map_or(1.0, |b| b.value(x))
    }

    pub fn value(&self, t: f64, x: &Vec3, xi: &Vec3) -> f64 {
        self.window.value(t) * self.spatial(x) * self.harmonic.value(xi)
    }

    pub fn dt(&self, t: f64, x: &Vec3, xi: &Vec3) -> f64 {
        self.window.derivative(t) * self.spatial(x) * self.harmonic.value(xi)
    }

    pub fn grad_xi(&self, t: f64, x: &Vec3, xi: &Orientation) -> Vec3 {
        self.harmonic.surface_gradient(xi) * (self.window.value(t) * self.spatial(x))
    }

    pub fn laplace_beltrami(&self, t: f64, x: &Vec3, xi: &Vec3) -> f64 {
        self.window.value(t) * self.spatial(x) * self.harmonic.laplace_beltrami(xi)
    }
}

/// `θ(t, x) = w(t) B(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialTestFunction {
    pub window: TimeWindow,
    pub bump: Bump,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field() -> DivFreeField {
        DivFreeField::new(Bump::new(Vec3::new(0.1, -0.05, 0.0), 0.6, 8), Vec3::new(0.3, -0.8, 0.5), TimeWindow::One)
    }

    #[test]
    fn bump_jet_matches_finite_differences() {
        let b = Bump::new(Vec3::new(0.1, 0.2, -0.1), 0.7, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-5;
        for _ in 0..20 {
            let x = Vec3::new(rng.random_range(-0.3..0.5), rng.random_range(-0.2..0.6), rng.random_range(-0.5..0.3));
            let j = b.jet(&x);
            for d in 0..3 {
                let mut e = Vec3::zeros();
                e[d] = h;
                let (jp, jm) = (b.jet(&(x + e)), b.jet(&(x - e)));
                assert!(((b.value(&(x + e)) - b.value(&(x - e))) / (2.0 * h) - j.gradient[d]).abs() < 1e-8);
                assert!(((jp.gradient - jm.gradient) / (2.0 * h) - j.hessian.column(d)).norm() < 1e-7);
                let lap = |m: &Mat3| m.trace();
                assert!(((lap(&jp.hessian) - lap(&jm.hessian)) / (2.0 * h) - j.grad_laplacian[d]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn bump_integral_closed_form() {
        let b = Bump::new(Vec3::zeros(), 0.5, 8);
        let (x, w) = crate::quadrature::gauss_legendre(80);
        // radial quadrature 4π ∫ r² B(r) dr
        let q: f64 = x.iter().zip(&w).map(|(s, ws)| {
            let r = 0.25 * (s + 1.0);
            0.25 * ws * 4.0 * std::f64::consts::PI * r * r * b.value(&Vec3::new(r, 0.0, 0.0))
        }).sum();
        assert!((q - b.integral()).abs() < 1e-14);
    }

    #[test]
    fn divfree_field_is_divergence_free_with_consistent_jet() {
        let f = field();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-5;
        for _ in 0..50 {
            let x = Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
            let j = f.jet(&x);
            assert!(j.gradient.trace().abs() <= 1e-12 * j.gradient.norm().max(1.0));
            for d in 0..3 {
                let mut e = Vec3::zeros();
                e[d] = h;
                let fd = (f.eval(0.0, &(x + e)) - f.eval(0.0, &(x - e))) / (2.0 * h);
                assert!((fd - j.gradient.column(d)).norm() < 1e-7);
            }
            let g = j.gradient;
            let curl = Vec3::new(g[(2, 1)] - g[(1, 2)], g[(0, 2)] - g[(2, 0)], g[(1, 0)] - g[(0, 1)]);
            assert!((curl - j.curl).norm() < 1e-10 * curl.norm().max(1.0));
        }
        // compact support
        assert_eq!(f.eval(0.5, &Vec3::new(2.0, 0.0, 0.0)), Vec3::zeros());
    }

    #[test]
    fn windows_integrate_consistently() {
        for w in [TimeWindow::One, TimeWindow::SinSquared { t_end: 1.3 }, TimeWindow::Decay { rate: 0.7 }] {
            let (x, ww) = crate::quadrature::gauss_legendre_on(40, 0.0, 1.3);
            let q: f64 = x.iter().zip(&ww).map(|(t, a)| a * w.value(*t)).sum();
            assert!((q - w.integral(1.3)).abs() < 1e-13);
            let d = (w.value(0.4 + 1e-6) - w.value(0.4 - 1e-6)) / 2e-6;
            assert!((d - w.derivative(0.4)).abs() < 1e-8);
        }
    }

    #[test]
    fn harmonic_gradients_and_eigenvalues() {
        let q = SymTraceless3([0.3, -0.1, 0.2, 0.5, -0.4]);
        let y = SphereHarmonic::Quadratic { q };
        let xi = Orientation::new(Vec3::new(0.2, 0.7, -0.4)).unwrap();
        let g = y.surface_gradient(&xi);
        assert!(g.dot(xi.vec()).abs() < 1e-15);
        let t = xi.project_tangent(&Vec3::new(1.0, 0.0, 0.3)).normalize();
        let h = 1e-6;
        let fd = (y.value(&(xi.vec() + t * h).normalize()) - y.value(&(xi.vec() - t * h).normalize())) / (2.0 * h);
        assert!((fd - g.dot(&t)).abs() < 1e-8);
        assert_eq!(y.laplace_beltrami(xi.vec()), -6.0 * y.value(xi.vec()));
    }
}
