//! Method of reflections truncated at the stresslet response.
//!
//! Starting from the superposed single-particle field, each sweep lets
//! every particle respond rigidly to the strain produced at its center by
//! the most recent correction of all other particles. The response is the
//! stresslet `α r³ E_i`; forces and torques of the response vanish.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, pairwise_sum, ExecMode};
use crate::particles::ParticleConfiguration;
use crate::stokes::{rotlet_field, rotlet_gradient, stresslet_field, stresslet_gradient};
use crate::tensor::{stresslet_coupling, Orientation, ResistanceParams, SymTraceless3, Vec3};

/// Stresslet response coefficient of a rigid sphere in a pure strain,
/// `S = (20π/3) r³ E`.
pub const SPHERE_RESPONSE: f64 = 20.0 * std::f64::consts::PI / 3.0;

/// Singularities carried by the particles before any reflection.
#[derive(Debug, Clone)]
pub struct ReflectionProblem<'a> {
    pub config: &'a ParticleConfiguration,
    pub torques: Vec<Vec3>,
    pub stresslets: Vec<SymTraceless3>,
    pub alpha: f64,
    pub mode: ExecMode,
}

impl<'a> ReflectionProblem<'a> {
    /// Rotlets of `torques` plus the torque-induced stresslets `S(ξ_i)T_i`.
    pub fn new(
        config: &'a ParticleConfiguration,
        orientations: &[Orientation],
        torques: &[Vec3],
        params: &ResistanceParams,
    ) -> Result<ReflectionProblem<'a>> {
        let n = config.n();
        if orientations.len() != n {
            return Err(Error::LengthMismatch { what: "orientations", expected: n, got: orientations.len() });
        }
        if torques.len() != n {
            return Err(Error::LengthMismatch { what: "torques", expected: n, got: torques.len() });
        }
        let stresslets = orientations.iter().zip(torques).map(|(o, t)| stresslet_coupling(o, params, t)).collect();
        Ok(ReflectionProblem { config, torques: torques.to_vec(), stresslets, alpha: SPHERE_RESPONSE, mode: ExecMode::Parallel })
    }

    /// Arbitrary singularity data; lengths must match the configuration.
    pub fn from_sources(config: &'a ParticleConfiguration, torques: Vec<Vec3>, stresslets: Vec<SymTraceless3>) -> Result<Self> {
        if torques.len() != config.n() || stresslets.len() != config.n() {
            return Err(Error::LengthMismatch { what: "sources", expected: config.n(), got: torques.len().min(stresslets.len()) });
        }
        Ok(ReflectionProblem { config, torques, stresslets, alpha: SPHERE_RESPONSE, mode: ExecMode::Parallel })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    /// Strain at `x_i` generated by particles `j ≠ i` carrying the given
    /// rotlets and stresslets.
    fn strain_at(&self, i: usize, torques: Option<&[Vec3]>, stresslets: &[SymTraceless3]) -> SymTraceless3 {
        let xi = self.config.centers[i];
        let mut g = nalgebra::Matrix3::zeros();
        for (j, c) in self.config.centers.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = xi - c;
            if let Some(t) = torques {
                g += rotlet_gradient(&t[j], &d).expect("distinct centers");
            }
            g += stresslet_gradient(&stresslets[j], &d).expect("distinct centers");
        }
        SymTraceless3::from_matrix(&g)
    }

    /// Symmetric part of the velocity gradient at particle `i` of the
    /// unreflected field of all other particles.
    pub fn ambient_strain(&self, i: usize) -> SymTraceless3 {
        self.strain_at(i, Some(&self.torques), &self.stresslets)
    }

    pub fn initial_state(&self) -> ReflectionState {
        let n = self.config.n();
        let pending: Vec<SymTraceless3> = map_indexed(self.mode, n, |i| self.ambient_strain(i));
        let residuals: Vec<f64> = pending.iter().map(|e| e.norm()).collect();
        ReflectionState {
            iteration: 0,
            induced: vec![SymTraceless3::ZERO; n],
            history: vec![pairwise_sum(&residuals)],
            pending,
            residuals,
            corrections: vec![],
        }
    }

    /// One Jacobi sweep: absorb the pending strains into induced stresslets
    /// and compute the strain produced by this correction.
    pub fn reflect_once(&self, state: &ReflectionState) -> ReflectionState {
        let scale = self.alpha * self.config.r.powi(3);
        let delta: Vec<SymTraceless3> = state.pending.iter().map(|e| *e * scale).collect();
        let induced = state.induced.iter().zip(&delta).map(|(a, b)| *a + *b).collect();
        let pending: Vec<SymTraceless3> = map_indexed(self.mode, self.config.n(), |i| self.strain_at(i, None, &delta));
        let residuals: Vec<f64> = pending.iter().map(|e| e.norm()).collect();
        let mut history = state.history.clone();
        history.push(pairwise_sum(&residuals));
        let mut corrections = state.corrections.clone();
        corrections.push(delta);
        ReflectionState { iteration: state.iteration + 1, induced, pending, residuals, history, corrections }
    }

    /// Field of the unreflected singularities.
    pub fn base_field(&self, x: &Vec3) -> Result<Vec3> {
        let mut u = Vec3::zeros();
        for (i, c) in self.config.centers.iter().enumerate() {
            let d = x - c;
            if d.norm() == 0.0 {
                return Err(Error::ProbeAtCenter { probe: [x.x, x.y, x.z], index: i });
            }
            u += rotlet_field(&self.torques[i], &d)? + stresslet_field(&self.stresslets[i], &d)?;
        }
        Ok(u)
    }

    /// Field of the given per-particle stresslets alone.
    pub fn stresslet_sum(&self, stresslets: &[SymTraceless3], x: &Vec3) -> Result<Vec3> {
        let mut u = Vec3::zeros();
        for (i, (c, s)) in self.config.centers.iter().zip(stresslets).enumerate() {
            let d = x - c;
            if d.norm() == 0.0 {
                return Err(Error::ProbeAtCenter { probe: [x.x, x.y, x.z], index: i });
            }
            u += stresslet_field(s, &d)?;
        }
        Ok(u)
    }

    /// Base field plus all induced stresslets of `state`.
    pub fn corrected_field(&self, state: &ReflectionState, x: &Vec3) -> Result<Vec3> {
        Ok(self.base_field(x)? + self.stresslet_sum(&state.induced, x)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionState {
    pub iteration: usize,
    pub induced: Vec<SymTraceless3>,
    /// Strain at each center produced by the latest correction.
    pub pending: Vec<SymTraceless3>,
    /// Frobenius norms of `pending`.
    pub residuals: Vec<f64>,
    /// Σ_i residual after each sweep, starting with the unreflected field.
    pub history: Vec<f64>,
    /// Stresslet increments of each sweep.
    pub corrections: Vec<Vec<SymTraceless3>>,
}

impl ReflectionState {
    /// Ratio of the last two residual sums.
    pub fn last_ratio(&self) -> Option<f64> {
        let k = self.history.len();
        (k >= 2 && self.history[k - 2] > 0.0).then(|| self.history[k - 1] / self.history[k - 2])
    }

    /// Geometric mean of the successive residual ratios.
    pub fn rho(&self) -> Option<f64> {
        let h: Vec<f64> = self.history.iter().copied().take_while(|v| *v > 0.0).collect();
        if h.len() < 2 {
            return None;
        }
        Some((h[h.len() - 1] / h[0]).powf(1.0 / (h.len() - 1) as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorStatus {
    Converged,
    MaxIterations,
    Diverging,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorReport {
    pub state: ReflectionState,
    pub status: MorStatus,
    /// Geometric-decay estimate; `None` when the initial residual is zero.
    pub rho: Option<f64>,
}

impl MorReport {
    pub fn diverging(&self) -> bool {
        self.status == MorStatus::Diverging
    }
}

/// Iterates [`ReflectionProblem::reflect_once`] until the residual sum
/// falls below `tol` times its initial value, `k_max` sweeps are done, or
/// the residual stops contracting.
pub fn mor_solve(problem: &ReflectionProblem, tol: f64, k_max: usize) -> Result<MorReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter { name: "tol", reason: "must be > 0".into() });
    }
    let mut state = problem.initial_state();
    let r0 = state.history[0];
    if !r0.is_finite() {
        return Err(Error::Numerical("non-finite initial residual".into()));
    }
    if r0 == 0.0 {
        return Ok(MorReport { state, status: MorStatus::Converged, rho: None });
    }
    let mut status = MorStatus::MaxIterations;
    while state.iteration < k_max {
        state = problem.reflect_once(&state);
        let last = *state.history.last().unwrap();
        if !last.is_finite() {
            status = MorStatus::Diverging;
            break;
        }
        if last <= tol * r0 {
            status = MorStatus::Converged;
            break;
        }
        if state.last_ratio().is_some_and(|q| q >= 1.0) && state.iteration >= 2 {
            status = MorStatus::Diverging;
            break;
        }
    }
    let rho = state.rho();
    if rho.is_some_and(|q| q >= 1.0) {
        status = MorStatus::Diverging;
    }
    if status == MorStatus::Diverging {
        log::warn!("reflections not contracting: rho = {:?}, history = {:?}", rho, state.history);
    }
    Ok(MorReport { state, status, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::build_config;
    use crate::stokes::l_n_app_eval;

    fn two(d: f64, r: f64) -> ParticleConfiguration {
        build_config(vec![Vec3::zeros(), Vec3::new(d, 0.0, 0.0)], r, 0.5).unwrap()
    }

    #[test]
    fn single_particle_is_a_fixed_point() {
        let c = build_config(vec![Vec3::zeros()], 0.1, 1.0).unwrap();
        let xi = [Orientation::e3()];
        let p = ReflectionProblem::new(&c, &xi, &[Vec3::x()], &ResistanceParams::sphere()).unwrap();
        assert_eq!(p.ambient_strain(0), SymTraceless3::ZERO);
        let rep = mor_solve(&p, 1e-10, 10).unwrap();
        assert_eq!(rep.status, MorStatus::Converged);
        assert_eq!(rep.state.iteration, 0);
    }

    #[test]
    fn rotlet_strain_matches_closed_form_gradient() {
        let r = 0.05;
        let c = two(1.0, r);
        let t1 = Vec3::new(0.2, -0.5, 1.0);
        let xi = [Orientation::e3(), Orientation::e3()];
        let p = ReflectionProblem::new(&c, &xi, &[t1, Vec3::zeros()], &ResistanceParams::sphere()).unwrap();
        let e = p.ambient_strain(1).to_matrix();
        // u = T×x/(8π|x|³); sym ∇u = −3/(8π|x|⁵) sym((T×x)⊗x)
        let x = c.centers[1] - c.centers[0];
        let a = t1.cross(&x) * x.transpose();
        let want = (a + a.transpose()) * (-1.5 / (8.0 * std::f64::consts::PI * x.norm().powi(5)));
        assert!((e - want).norm() < 1e-10);
    }

    #[test]
    fn two_sphere_contraction_at_ten_radii() {
        let r = 0.05;
        let c = two(10.0 * r, r);
        let xi = [Orientation::e3(), Orientation::new(Vec3::new(1.0, 1.0, 0.0)).unwrap()];
        let p = ReflectionProblem::new(&c, &xi, &[Vec3::new(0.3, 1.0, 0.0), Vec3::z()], &ResistanceParams::anisotropic()).unwrap();
        let s0 = p.initial_state();
        let s1 = p.reflect_once(&s0);
        assert!(s1.history[1] / s1.history[0] <= 1e-2);
    }

    #[test]
    fn corrected_field_is_linear_in_torque() {
        let r = 0.03;
        let centers = crate::particles::cubic_lattice(3, 0.5);
        let c = build_config(centers, r, 0.5).unwrap();
        let xi: Vec<Orientation> = (0..c.n()).map(|i| Orientation::new(Vec3::new(1.0, i as f64, 0.5)).unwrap()).collect();
        let t: Vec<Vec3> = (0..c.n()).map(|i| Vec3::new(0.1 * i as f64, 1.0, -0.3)).collect();
        let t2: Vec<Vec3> = t.iter().map(|v| v * 2.0).collect();
        let prm = ResistanceParams::anisotropic();
        let p1 = ReflectionProblem::new(&c, &xi, &t, &prm).unwrap();
        let p2 = ReflectionProblem::new(&c, &xi, &t2, &prm).unwrap();
        let a = mor_solve(&p1, 1e-12, 5).unwrap().state;
        let b = mor_solve(&p2, 1e-12, 5).unwrap().state;
        for (x, y) in a.induced.iter().zip(&b.induced) {
            assert!((*x * 2.0 - *y).norm() <= 1e-12 * y.norm().max(1e-300));
        }
        let probe = Vec3::new(0.11, 0.07, 0.02);
        let fa = p1.corrected_field(&a, &probe).unwrap();
        let fb = p2.corrected_field(&b, &probe).unwrap();
        assert!((fa * 2.0 - fb).norm() <= 1e-12 * fb.norm());
        let app = l_n_app_eval(&c, &xi, &t, &prm, &probe).unwrap();
        assert!((p1.base_field(&probe).unwrap() - app).norm() < 1e-14);
    }
}
