//! Real orthonormal spherical harmonics and product quadrature on S².
//!
//! Basis index of `(l, m)` is `l² + l + m`, `|m| ≤ l`. For `m > 0` the
//! function is `√2 P̄_l^m(cos θ) cos(mφ)`, for `m < 0` it is
//! `√2 P̄_l^|m|(cos θ) sin(|m|φ)`, where `P̄` are the associated Legendre
//! functions normalized to `∫ Y² = 1` (no Condon–Shortley phase).

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::tensor::{Mat3, Vec3};

pub fn sh_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

pub fn sh_len(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// `(l, m)` for every basis index.
pub fn sh_degrees(l_max: usize) -> Vec<(usize, i64)> {
    (0..=l_max).flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m))).collect()
}

/// Normalized associated Legendre functions `P̄_l^m(x)` for `0 ≤ m ≤ l ≤ L`
/// and `(1 − x²) dP̄_l^m/dx`, both stored at `[l][m]`.
fn assoc_legendre(l_max: usize, x: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut p = vec![vec![0.0; l_max + 1]; l_max + 1];
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            let mf = m as f64;
            pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
        }
        p[m][m] = pmm;
        if m < l_max {
            p[m + 1][m] = (2.0 * m as f64 + 3.0).sqrt() * x * pmm;
        }
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    let mut dp = vec![vec![0.0; l_max + 1]; l_max + 1];
    for l in 0..=l_max {
        for m in 0..=l {
            let (lf, mf) = (l as f64, m as f64);
            let prev = if l > m {
                ((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf * lf - mf * mf)).sqrt() * p[l - 1][m]
            } else {
                0.0
            };
            dp[l][m] = prev - lf * x * p[l][m];
        }
    }
    (p, dp)
}

fn spherical_angles(xi: &Vec3) -> (f64, f64) {
    let z = (xi.z / xi.norm()).clamp(-1.0, 1.0);
    (z, xi.y.atan2(xi.x))
}

/// All basis values at a unit vector.
pub fn sh_eval(l_max: usize, xi: &Vec3) -> Vec<f64> {
    let (z, phi) = spherical_angles(xi);
    let (p, _) = assoc_legendre(l_max, z);
    let mut out = vec![0.0; sh_len(l_max)];
    for l in 0..=l_max {
        out[sh_index(l, 0)] = p[l][0];
        for m in 1..=l {
            let mf = m as f64;
            out[sh_index(l, m as i64)] = std::f64::consts::SQRT_2 * p[l][m] * (mf * phi).cos();
            out[sh_index(l, -(m as i64))] = std::f64::consts::SQRT_2 * p[l][m] * (mf * phi).sin();
        }
    }
    out
}

/// Basis values and surface gradients at a point with `sin θ > 0`.
fn sh_eval_with_gradient(l_max: usize, z: f64, phi: f64) -> (Vec<f64>, Vec<Vec3>) {
    let s = (1.0 - z * z).sqrt();
    let (p, dp) = assoc_legendre(l_max, z);
    let e_theta = Vec3::new(z * phi.cos(), z * phi.sin(), -s);
    let e_phi = Vec3::new(-phi.sin(), phi.cos(), 0.0);
    let n = sh_len(l_max);
    let mut val = vec![0.0; n];
    let mut grad = vec![Vec3::zeros(); n];
    for l in 0..=l_max {
        // ∂θ P̄ = −(1/s)(1 − z²) dP̄/dz
        let dth = |m: usize| -dp[l][m] / s;
        val[sh_index(l, 0)] = p[l][0];
        grad[sh_index(l, 0)] = e_theta * dth(0);
        for m in 1..=l {
            let mf = m as f64;
            let (c, sn) = ((mf * phi).cos(), (mf * phi).sin());
            let r2 = std::f64::consts::SQRT_2;
            let ip = sh_index(l, m as i64);
            let im = sh_index(l, -(m as i64));
            val[ip] = r2 * p[l][m] * c;
            val[im] = r2 * p[l][m] * sn;
            grad[ip] = (e_theta * (dth(m) * c) - e_phi * (mf * p[l][m] * sn / s)) * r2;
            grad[im] = (e_theta * (dth(m) * sn) + e_phi * (mf * p[l][m] * c / s)) * r2;
        }
    }
    (val, grad)
}

/// Gauss–Legendre nodes in `cos θ` times uniform azimuths, with basis
/// values and surface gradients tabulated at every node.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    pub l_max: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// `points × basis`.
    pub values: DMatrix<f64>,
    /// Surface gradient components, `points × basis` each.
    pub gradients: [DMatrix<f64>; 3],
}

impl SphereGrid {
    /// Grid for truncation degree `l_max`, exact for polynomials of degree
    /// `2 l_max + 3`, which covers every product the solver projects.
    pub fn new(l_max: usize) -> SphereGrid {
        SphereGrid::with_nodes(l_max, l_max + 2, 2 * l_max + 4)
    }

    pub fn with_nodes(l_max: usize, n_theta: usize, n_phi: usize) -> SphereGrid {
        let (zs, wz) = gauss_legendre(n_theta);
        let n = sh_len(l_max);
        let np = n_theta * n_phi;
        let mut points = Vec::with_capacity(np);
        let mut weights = Vec::with_capacity(np);
        let mut values = DMatrix::zeros(np, n);
        let mut gradients = [DMatrix::zeros(np, n), DMatrix::zeros(np, n), DMatrix::zeros(np, n)];
        for (it, (&z, &w)) in zs.iter().zip(&wz).enumerate() {
            let s = (1.0 - z * z).sqrt();
            for ip in 0..n_phi {
                let phi = TAU * ip as f64 / n_phi as f64;
                let row = it * n_phi + ip;
                points.push(Vec3::new(s * phi.cos(), s * phi.sin(), z));
                weights.push(w * TAU / n_phi as f64);
                let (v, g) = sh_eval_with_gradient(l_max, z, phi);
                for k in 0..n {
                    values[(row, k)] = v[k];
                    for c in 0..3 {
                        gradients[c][(row, k)] = g[k][c];
                    }
                }
            }
        }
        SphereGrid { l_max, n_theta, n_phi, points, weights, values, gradients }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&Vec3) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    /// Grid values of a coefficient vector.
    pub fn synthesize(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.values * coeffs
    }

    /// Coefficients of a function given on the grid.
    pub fn analyze(&self, grid_values: &DVector<f64>) -> DVector<f64> {
        let weighted = DVector::from_iterator(self.len(), grid_values.iter().zip(&self.weights).map(|(v, w)| v * w));
        self.values.transpose() * weighted
    }

    pub fn project(&self, f: impl Fn(&Vec3) -> f64) -> DVector<f64> {
        self.analyze(&DVector::from_iterator(self.len(), self.points.iter().map(f)))
    }
}

/// Density on S² in the real spherical-harmonic basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalDensity {
    pub l_max: usize,
    pub coeffs: Vec<f64>,
}

impl SphericalDensity {
    pub fn new(l_max: usize, coeffs: Vec<f64>) -> Result<SphericalDensity> {
        if coeffs.len() != sh_len(l_max) {
            return Err(Error::LengthMismatch { what: "sh coefficients", expected: sh_len(l_max), got: coeffs.len() });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("sh coefficients"));
        }
        Ok(SphericalDensity { l_max, coeffs })
    }

    pub fn uniform(l_max: usize, mass: f64) -> SphericalDensity {
        let mut coeffs = vec![0.0; sh_len(l_max)];
        coeffs[0] = mass / (4.0 * PI).sqrt();
        SphericalDensity { l_max, coeffs }
    }

    /// Density of a law that is rotationally symmetric about `axis`, given
    /// its Legendre moments `E[P_l(ξ·axis)]`.
    pub fn zonal(l_max: usize, axis: &Vec3, mass: f64, legendre_moment: impl Fn(usize) -> f64) -> SphericalDensity {
        let y = sh_eval(l_max, axis);
        let coeffs = sh_degrees(l_max)
            .iter()
            .zip(&y)
            .map(|((l, _), yv)| mass * legendre_moment(*l) * yv)
            .collect();
        SphericalDensity { l_max, coeffs }
    }

    pub fn from_dvector(l_max: usize, v: &DVector<f64>) -> SphericalDensity {
        SphericalDensity { l_max, coeffs: v.iter().copied().collect() }
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    /// `∫ f = √(4π) a₀₀`.
    pub fn mass(&self) -> f64 {
        (4.0 * PI).sqrt() * self.coeffs[0]
    }

    pub fn eval(&self, xi: &Vec3) -> f64 {
        sh_eval(self.l_max, xi).iter().zip(&self.coeffs).map(|(y, a)| y * a).sum()
    }

    /// Coefficients of degree `l`, ordered `m = −l..=l`.
    pub fn degree(&self, l: usize) -> &[f64] {
        &self.coeffs[l * l..(l + 1) * (l + 1)]
    }

    /// L² distance (Parseval).
    pub fn l2_distance(&self, other: &SphericalDensity) -> f64 {
        let n = self.coeffs.len().max(other.coeffs.len());
        (0..n)
            .map(|k| self.coeffs.get(k).unwrap_or(&0.0) - other.coeffs.get(k).unwrap_or(&0.0))
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `∫ ξ f` from the degree-1 coefficients.
    pub fn first_moment(&self) -> Vec3 {
        let c = (4.0 * PI / 3.0).sqrt();
        if self.l_max < 1 {
            return Vec3::zeros();
        }
        let d = self.degree(1);
        // Y_{1,-1} ∝ y, Y_{1,0} ∝ z, Y_{1,1} ∝ x
        Vec3::new(d[2], d[0], d[1]) * c
    }

    /// `∫ ξ⊗ξ f`, computed on a grid exact for this degree.
    pub fn second_moment(&self) -> Mat3 {
        let l = self.l_max.min(2);
        let grid = SphereGrid::new(l);
        let trunc = SphericalDensity { l_max: l, coeffs: self.coeffs[..sh_len(l)].to_vec() };
        let f = grid.synthesize(&trunc.to_dvector());
        let mut m = Mat3::zeros();
        for ((p, w), fv) in grid.points.iter().zip(&grid.weights).zip(f.iter()) {
            m += p * p.transpose() * (w * fv);
        }
        m
    }

    /// Minimum and maximum of the density on a grid.
    pub fn grid_extrema(&self, grid: &SphereGrid) -> (f64, f64) {
        let v = grid.synthesize(&self.to_dvector());
        (v.min(), v.max())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::legendre;

    #[test]
    fn basis_is_orthonormal_on_the_grid() {
        let l = 8;
        let g = SphereGrid::new(l);
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&g.weights));
        let gram = g.values.transpose() * &w * &g.values;
        assert!((gram - DMatrix::identity(sh_len(l), sh_len(l))).amax() < 1e-13);
    }

    #[test]
    fn gradients_carry_the_laplace_beltrami_eigenvalues() {
        let l = 6;
        let g = SphereGrid::new(l);
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&g.weights));
        let mut k = DMatrix::zeros(sh_len(l), sh_len(l));
        for c in 0..3 {
            k += g.gradients[c].transpose() * &w * &g.gradients[c];
        }
        for (i, (li, _)) in sh_degrees(l).iter().enumerate() {
            for j in 0..sh_len(l) {
                let want = if i == j { (li * (li + 1)) as f64 } else { 0.0 };
                assert!((k[(i, j)] - want).abs() < 1e-11, "{i} {j}: {}", k[(i, j)]);
            }
        }
        // gradients are tangent
        for (row, p) in g.points.iter().enumerate() {
            for j in 0..sh_len(l) {
                let v = Vec3::new(g.gradients[0][(row, j)], g.gradients[1][(row, j)], g.gradients[2][(row, j)]);
                assert!(v.dot(p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let l = 5;
        let (z, phi) = (0.3, 1.1);
        let (_, grad) = sh_eval_with_gradient(l, z, phi);
        let s = (1.0f64 - z * z).sqrt();
        let xi = Vec3::new(s * phi.cos(), s * phi.sin(), z);
        let h = 1e-6;
        for (t, _) in [(Vec3::x(), 0), (Vec3::y(), 1), (Vec3::z(), 2)] {
            let tan = t - xi * xi.dot(&t);
            let yp = sh_eval(l, &(xi + tan * h).normalize());
            let ym = sh_eval(l, &(xi - tan * h).normalize());
            for k in 0..sh_len(l) {
                let fd = (yp[k] - ym[k]) / (2.0 * h);
                assert!((fd - grad[k].dot(&tan)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn grid_is_exact_to_degree_two_l() {
        let l = 7;
        let g = SphereGrid::new(l);
        // ∫ z^{2k} = 4π/(2k+1), ∫ x^a y^b z^c vanishes for any odd exponent
        for k in 0..=l {
            let q = g.integrate(|p| p.z.powi(2 * k as i32));
            assert!((q - 4.0 * PI / (2 * k + 1) as f64).abs() < 1e-12);
        }
        assert!(g.integrate(|p| p.x.powi(3) * p.y.powi(5) * p.z.powi(6)).abs() < 1e-14);
        let q = g.integrate(|p| p.x.powi(4) * p.y.powi(2) * p.z.powi(2 * l as i32 - 6));
        let direct = SphereGrid::with_nodes(l, 3 * l, 6 * l).integrate(|p| p.x.powi(4) * p.y.powi(2) * p.z.powi(2 * l as i32 - 6));
        assert!((q - direct).abs() < 1e-13);
    }

    #[test]
    fn zonal_density_reproduces_legendre_moments() {
        let axis = Vec3::new(0.2, -0.5, 0.8).normalize();
        let moments = |l: usize| 0.7f64.powi(l as i32);
        let f = SphericalDensity::zonal(10, &axis, 1.0, moments);
        assert!((f.mass() - 1.0).abs() < 1e-14);
        let g = SphereGrid::new(12);
        for l in 0..=10 {
            let coeffs = f.to_dvector();
            let vals = g.synthesize(&{
                let mut c = DVector::zeros(sh_len(12));
                c.rows_mut(0, coeffs.len()).copy_from(&coeffs);
                c
            });
            let m: f64 = g.points.iter().zip(&g.weights).zip(vals.iter()).map(|((p, w), v)| w * v * legendre(l, p.dot(&axis))).sum();
            assert!((m - moments(l)).abs() < 1e-12, "l={l}");
        }
        assert!((f.first_moment() - axis * 0.7).norm() < 1e-14);
        let ez2 = (2.0 * 0.49 + 1.0) / 3.0;
        let want = axis * axis.transpose() * ez2 + (Mat3::identity() - axis * axis.transpose()) * ((1.0 - ez2) / 2.0);
        assert!((f.second_moment() - want).norm() < 1e-13);
    }
}
