//! Spectral solver for `∂_t f = Δ_ξ f − div_ξ(P_{ξ⊥} h(t) f)` on S².
//!
//! Diffusion is diagonal in the harmonic basis. The drift acts through the
//! Galerkin matrices `A_c[k][j] = ∫ Y_j ∂_c^S Y_k`, assembled once by grid
//! quadrature that is exact for these integrands, so that the drift
//! coefficient vector is `(h_x A_x + h_y A_y + h_z A_z) f`. Row 0 of every
//! drift matrix vanishes, which makes mass conservation exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_slice, ExecMode};
use crate::orientation::TorqueField;
use crate::sphere::{sh_degrees, sh_len, SphereGrid, SphericalDensity};
use crate::stokes::{Grid3, StressField};
use crate::tensor::{Mat3, SymTraceless3, Vec3};

#[derive(Debug, Clone)]
pub struct FokkerPlanck {
    pub l_max: usize,
    pub grid: SphereGrid,
    /// `−l(l+1)` per basis index.
    pub eigenvalues: DVector<f64>,
    pub drift: [DMatrix<f64>; 3],
}

/// Result of a stationary solve together with the kernel diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub density: SphericalDensity,
    /// Smallest singular value of the operator (kernel residual).
    pub kernel_residual: f64,
    /// Smallest and second-smallest eigenvalue moduli.
    pub smallest_eigenvalue: f64,
    pub spectral_gap: f64,
    /// Ratio of grid minimum to grid maximum of the density.
    pub sign_ratio: f64,
}

/// Tolerance for the kernel checks of the stationary operator.
pub const KERNEL_TOL: f64 = 1e-8;

impl FokkerPlanck {
    pub fn new(l_max: usize) -> Result<FokkerPlanck> {
        if l_max < 4 {
            return Err(Error::InvalidParameter { name: "l_max", reason: format!("need l_max >= 4, got {l_max}") });
        }
        let grid = SphereGrid::new(l_max);
        let eigenvalues = DVector::from_iterator(sh_len(l_max), sh_degrees(l_max).iter().map(|(l, _)| -((l * (l + 1)) as f64)));
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&grid.weights));
        let wy = &w * &grid.values;
        let drift = [0, 1, 2].map(|c| grid.gradients[c].transpose() * &wy);
        Ok(FokkerPlanck { l_max, grid, eigenvalues, drift })
    }

    pub fn drift_matrix(&self, b: &Vec3) -> DMatrix<f64> {
        &self.drift[0] * b.x + &self.drift[1] * b.y + &self.drift[2] * b.z
    }

    /// Full operator `Δ − div(P b ·)` in coefficient space.
    pub fn operator(&self, b: &Vec3) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.eigenvalues) + self.drift_matrix(b)
    }

    fn check(&self, f: &SphericalDensity) -> Result<()> {
        if f.l_max != self.l_max {
            return Err(Error::LengthMismatch { what: "density degree", expected: self.l_max, got: f.l_max });
        }
        Ok(())
    }

    /// Default step `min(1e-3, 0.1/‖h‖_∞)` on `[0, t_end]`.
    pub fn default_dt(h: &TorqueField, t_end: f64) -> f64 {
        let s = h.sup_norm(t_end);
        if s > 0.0 {
            (0.1 / s).min(1e-3)
        } else {
            1e-3
        }
    }

    /// States at the requested (increasing) times, starting from `f0` at
    /// `t = 0`. Integrating-factor midpoint scheme: diffusion exact,
    /// drift second order.
    pub fn evolve(&self, f0: &SphericalDensity, h: &TorqueField, times: &[f64], dt: f64) -> Result<Vec<SphericalDensity>> {
        self.check(f0)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter { name: "dt", reason: "must be > 0".into() });
        }
        if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
            return Err(Error::InvalidParameter { name: "times", reason: "must be nonnegative and increasing".into() });
        }
        let coeffs = h.coefficients();
        let drift_at = |t: f64, f: &DVector<f64>| -> DVector<f64> {
            if coeffs.is_empty() {
                return DVector::zeros(f.len());
            }
            let b = h.eval(t);
            self.drift_matrix(&b) * f
        };
        let mut f = f0.to_dvector();
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            while t < target - 1e-14 {
                let step = dt.min(target - t);
                let e_full = self.eigenvalues.map(|l| (l * step).exp());
                let e_half = self.eigenvalues.map(|l| (0.5 * l * step).exp());
                let mid = (&f + drift_at(t, &f) * (0.5 * step)).component_mul(&e_half);
                let d_mid = drift_at(t + 0.5 * step, &mid).component_mul(&e_half);
                f = f.component_mul(&e_full) + d_mid * step;
                t += step;
                if !f.iter().all(|c| c.is_finite()) || f.amax() > 1e100 {
                    return Err(Error::Numerical(format!("coefficient blow-up at t = {t:.4}, |a|_max = {:.3e}", f.amax())));
                }
            }
            out.push(SphericalDensity::from_dvector(self.l_max, &f));
        }
        Ok(out)
    }

    /// Normalized kernel of the stationary operator for a time-independent
    /// torque field, with checks that the kernel is one-dimensional and the
    /// kernel element has a sign.
    pub fn stationary_solve(&self, h: &TorqueField, mass: f64) -> Result<StationaryReport> {
        if !h.is_time_independent() {
            return Err(Error::InvalidParameter { name: "h", reason: "stationary solve needs a time-independent field".into() });
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidParameter { name: "mass", reason: "must be > 0".into() });
        }
        let op = self.operator(&h.eval(0.0));
        let n = op.nrows();
        let svd = op.clone().svd(false, true);
        let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Numerical("svd failed".into()))?;
        let (imin, smin) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
        let kernel: DVector<f64> = v_t.row(imin).transpose();
        if kernel[0].abs() < 1e-12 {
            return Err(Error::Numerical("kernel vector has no mass component".into()));
        }
        let scale = mass / ((4.0 * std::f64::consts::PI).sqrt() * kernel[0]);
        let density = SphericalDensity::from_dvector(self.l_max, &(kernel * scale));

        let mut moduli: Vec<f64> = op.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(f64::total_cmp);
        let (smallest, gap) = (moduli[0], if n > 1 { moduli[1] } else { f64::INFINITY });
        if gap <= 10.0 * KERNEL_TOL || smallest > KERNEL_TOL {
            return Err(Error::Numerical(format!(
                "kernel not numerically one-dimensional: |λ|_0 = {smallest:.3e}, |λ|_1 = {gap:.3e}"
            )));
        }
        let (lo, hi) = density.grid_extrema(&self.grid);
        let sign_ratio = lo / hi;
        if sign_ratio < -1e-8 {
            return Err(Error::Numerical(format!("kernel element changes sign: min/max = {sign_ratio:.3e}")));
        }
        Ok(StationaryReport { density, kernel_residual: smin, smallest_eigenvalue: smallest, spectral_gap: gap, sign_ratio })
    }
}

/// Viscoelastic stress `γ_E ∫ (Id − 3ξ⊗ξ) f dξ`.
pub fn stress_moment(f: &SphericalDensity, gamma_e: f64) -> SymTraceless3 {
    let m2 = f.second_moment();
    SymTraceless3::from_matrix(&((Mat3::identity() * f.mass() - m2 * 3.0) * gamma_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldMode {
    Instationary { t: f64 },
    Stationary,
}

#[derive(Debug, Clone)]
pub struct DensityField {
    pub densities: Vec<SphericalDensity>,
    pub stress: StressField,
}

/// Solves independently at every spatial node (positions are frozen, so
/// the nodes decouple) and assembles the stress field.
pub fn density_field(
    solver: &FokkerPlanck,
    grid: &Grid3,
    f0: &[SphericalDensity],
    h: &TorqueField,
    mode: FieldMode,
    gamma_e: f64,
    exec: ExecMode,
) -> Result<DensityField> {
    grid.validate()?;
    if f0.len() != grid.len() {
        return Err(Error::LengthMismatch { what: "initial densities", expected: grid.len(), got: f0.len() });
    }
    let dt = FokkerPlanck::default_dt(h, match mode {
        FieldMode::Instationary { t } => t,
        FieldMode::Stationary => 1.0,
    });
    let solved = map_slice(exec, f0, |f| -> Result<SphericalDensity> {
        match mode {
            FieldMode::Instationary { t } => Ok(solver.evolve(f, h, &[t], dt)?.remove(0)),
            FieldMode::Stationary => {
                let mass = f.mass();
                if mass == 0.0 {
                    Ok(SphericalDensity::uniform(solver.l_max, 0.0))
                } else {
                    Ok(solver.stationary_solve(h, mass)?.density)
                }
            }
        }
    });
    let mut densities = Vec::with_capacity(solved.len());
    for (node, r) in solved.into_iter().enumerate() {
        densities.push(r.map_err(|e| Error::Numerical(format!("node {node}: {e}")))?);
    }
    let values = densities.iter().map(|f| stress_moment(f, gamma_e)).collect();
    Ok(DensityField { densities, stress: StressField::new(grid.clone(), values)? })
}
