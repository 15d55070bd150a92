//! Stochastic integrals along simulated orientation paths and the weak-form
//! functionals built from them.
//!
//! Stratonovich integrals use the midpoint sum `Σ ½(g_k + g_{k+1})·ΔB_k`
//! on the ensemble grid, which matches the Heun integrator; Itô integrals
//! use left endpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, mix_seed, pairwise_sum, ExecMode};
use crate::fokker_planck::FokkerPlanck;
use crate::orientation::{simulate_path, OrientationLaw, ParticlePath, PathEnsemble, Scaling, SdeParams, TorqueField};
use crate::quadrature::gauss_legendre_on;
use crate::sphere::SphericalDensity;
use crate::stats::Summary;
use crate::tensor::{r2_sqrt, Mat3, Orientation, ResistanceParams, SymTraceless3, Vec3};
use crate::testfn::{DivFreeField, ScalarTestFunction, SpatialTestFunction, TimeWindow};

/// Sign of the particle-reaction stress relative to the applied torque.
/// Multiplies the stochastic part of the Stokes functional so that its
/// mean matches the stress `γ_E ∫(Id − 3ξ⊗ξ) f`.
pub const TORQUE_REACTION_SIGN: f64 = -1.0;

/// `Σ ½(g_k + g_{k+1})·ΔB_k` with `g` sampled at the `m + 1` grid points.
pub fn stratonovich_sum(g: &[Vec3], db: &[Vec3]) -> Result<f64> {
    if g.len() != db.len() + 1 {
        return Err(Error::LengthMismatch { what: "integrand samples", expected: db.len() + 1, got: g.len() });
    }
    let terms: Vec<f64> = db.iter().enumerate().map(|(k, d)| 0.5 * (g[k] + g[k + 1]).dot(d)).collect();
    Ok(pairwise_sum(&terms))
}

/// `Σ g_k·ΔB_k`; `g` may carry a trailing sample, which is ignored.
pub fn ito_sum(g: &[Vec3], db: &[Vec3]) -> Result<f64> {
    if g.len() != db.len() && g.len() != db.len() + 1 {
        return Err(Error::LengthMismatch { what: "integrand samples", expected: db.len(), got: g.len() });
    }
    let terms: Vec<f64> = db.iter().zip(g).map(|(d, gk)| gk.dot(d)).collect();
    Ok(pairwise_sum(&terms))
}

/// Trapezoidal rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        m => dt * (pairwise_sum(&values[1..m - 1]) + 0.5 * (values[0] + values[m - 1])),
    }
}

/// Vector `g` with `A : S(ξ)√R₂ v = g·v` for symmetric `A`:
/// `g = (γ_E/γ_rot) √R₂ (ξ × Aξ)`.
pub fn strain_torque_vector(xi: &Orientation, p: &ResistanceParams, a: &Mat3) -> Vec3 {
    let x = xi.vec();
    r2_sqrt(xi, p) * x.cross(&(a * x)) * (p.gamma_e / p.gamma_rot)
}

/// Per-realization values and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    pub values: Vec<f64>,
    pub summary: Summary,
}

impl PairingResult {
    pub fn from_values(values: Vec<f64>) -> PairingResult {
        let summary = Summary::of(&values);
        PairingResult { values, summary }
    }

    /// Summary of the squared values, i.e. the second moment estimate.
    pub fn second_moment(&self) -> Summary {
        crate::stats::second_moment(&self.values)
    }
}

/// One particle's contribution to the Stokes functional, before the `1/n`
/// average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiTerms {
    /// `∫ Dφ:S√R₂ ∘ dB`.
    pub stress: f64,
    /// `2 ∫ curl φ·√R₂ ∘ dB`.
    pub rotation: f64,
    /// `stress + rotation`.
    pub stochastic: f64,
    /// `∫ (Id − 3ξ⊗ξ):∇φ dt`.
    pub deterministic: f64,
    pub value: f64,
}

/// Factor turning the stochastic integrals of [`PhiTerms`] into the
/// pairing `⟨φ_n⁻¹ u_app, Δφ⟩`: `TORQUE_REACTION_SIGN · √(2γ_rot) / (noise factor)`.
pub fn stochastic_pairing_factor(params: &ResistanceParams, scaling: Scaling) -> f64 {
    TORQUE_REACTION_SIGN * (2.0 * params.gamma_rot).sqrt() / scaling.noise_factor()
}

/// Contribution of a particle centred at `x` with orientation path `path`.
pub fn phi_particle(
    path: &ParticlePath,
    dt: f64,
    x: &Vec3,
    params: &ResistanceParams,
    phi: &DivFreeField,
    scaling: Scaling,
) -> Result<PhiTerms> {
    let jet = phi.jet(x);
    let strain = jet.strain().to_matrix();
    let m = path.states.len();
    let mut gs = Vec::with_capacity(m);
    let mut gr = Vec::with_capacity(m);
    let mut det = Vec::with_capacity(m);
    for (k, xi) in path.states.iter().enumerate() {
        let w = phi.window.value(k as f64 * dt);
        gs.push(strain_torque_vector(xi, params, &strain) * w);
        gr.push(r2_sqrt(xi, params) * jet.curl * (2.0 * w));
        // div φ = 0, so (Id − 3ξ⊗ξ):∇φ = −3 ξ·Dφ ξ
        det.push(-3.0 * w * xi.vec().dot(&(strain * xi.vec())));
    }
    let stress = stratonovich_sum(&gs, &path.increments)?;
    let rotation = stratonovich_sum(&gr, &path.increments)?;
    let stochastic = stress + rotation;
    let deterministic = trapezoid(&det, dt);
    let value = stochastic_pairing_factor(params, scaling) * stochastic - params.gamma_e * deterministic;
    Ok(PhiTerms { stress, rotation, stochastic, deterministic, value })
}

fn check_centers(n: usize, centers: &[Vec3]) -> Result<()> {
    if centers.len() != n {
        return Err(Error::LengthMismatch { what: "centers", expected: n, got: centers.len() });
    }
    Ok(())
}

/// The Stokes functional `Φ_φ` for one stored realization.
pub fn phi_functional(
    ensemble: &PathEnsemble,
    centers: &[Vec3],
    params: &ResistanceParams,
    phi: &DivFreeField,
    mode: ExecMode,
) -> Result<f64> {
    check_centers(ensemble.n(), centers)?;
    let terms = map_indexed(mode, ensemble.n(), |i| {
        phi_particle(&ensemble.paths[i], ensemble.sde.dt, &centers[i], params, phi, ensemble.sde.scaling).map(|t| t.value)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&terms) / ensemble.n() as f64)
}

/// Everything needed to simulate one realization without storing paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationSpec<'a> {
    pub centers: &'a [Vec3],
    pub initial: OrientationLaw,
    pub sde: SdeParams,
    pub h: TorqueField,
}

impl RealizationSpec<'_> {
    fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::InvalidParameter { name: "n", reason: "need at least one particle".into() });
        }
        self.initial.validate()?;
        self.sde.validate()?;
        self.h.validate()
    }

    fn with_seed(&self, seed: u64) -> SdeParams {
        SdeParams { seed, ..self.sde }
    }
}

/// `Φ_φ` for `realizations` independent realizations, seeded by
/// `mix_seed(sde.seed, r)`. Paths are streamed particle by particle.
pub fn phi_realizations(
    spec: &RealizationSpec,
    realizations: usize,
    params: &ResistanceParams,
    phi: &DivFreeField,
    mode: ExecMode,
) -> Result<PairingResult> {
    spec.validate()?;
    params.validate()?;
    phi.validate()?;
    let n = spec.centers.len();
    let values = map_indexed(mode, realizations, |r| -> Result<f64> {
        let sde = spec.with_seed(mix_seed(spec.sde.seed, r as u64));
        let mut terms = Vec::with_capacity(n);
        for (i, x) in spec.centers.iter().enumerate() {
            let path = simulate_path(i, &spec.initial, &sde, &spec.h)?;
            terms.push(phi_particle(&path, sde.dt, x, params, phi, sde.scaling)?.value);
        }
        Ok(pairwise_sum(&terms) / n as f64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(PairingResult::from_values(values))
}

/// Spatial part of the initial law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialLaw {
    /// Empirical measure of the given points.
    Atoms { points: Vec<[f64; 3]> },
    /// Uniform on `[−half_width, half_width]³`.
    UniformBox { half_width: f64 },
    /// Density proportional to a bump profile.
    BumpDensity { bump: crate::testfn::Bump },
}

impl SpatialLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            SpatialLaw::Atoms { points } if points.is_empty() => {
                Err(Error::InvalidParameter { name: "spatial.points", reason: "empty".into() })
            }
            SpatialLaw::UniformBox { half_width } if !(*half_width > 0.0) => {
                Err(Error::InvalidParameter { name: "spatial.half_width", reason: "must be > 0".into() })
            }
            SpatialLaw::BumpDensity { bump } => bump.validate(),
            _ => Ok(()),
        }
    }

    /// `E[B(x)]` for a bump; for the box the bump must lie inside.
    pub fn bump_expectation(&self, bump: &crate::testfn::Bump) -> Result<f64> {
        match self {
            SpatialLaw::Atoms { points } => {
                let v: Vec<f64> = points.iter().map(|p| bump.value(&Vec3::from(*p))).collect();
                Ok(pairwise_sum(&v) / points.len() as f64)
            }
            SpatialLaw::UniformBox { half_width } => {
                let c = Vec3::from(bump.center);
                if c.iter().any(|ci| ci.abs() + bump.radius > *half_width) {
                    return Err(Error::InvalidParameter {
                        name: "bump",
                        reason: "support must lie inside the uniform box".into(),
                    });
                }
                Ok(bump.integral() / (2.0 * half_width).powi(3))
            }
            SpatialLaw::BumpDensity { bump: rho } => {
                let q = bump_quadrature(rho, 48);
                let v: Vec<f64> = q.iter().map(|(x, w)| w * bump.value(x)).collect();
                Ok(pairwise_sum(&v) / rho.integral())
            }
        }
    }

    /// Density at `x`, where one exists.
    pub fn density(&self, x: &Vec3) -> Option<f64> {
        match self {
            SpatialLaw::Atoms { .. } => None,
            SpatialLaw::UniformBox { half_width } => {
                Some(if x.iter().all(|c| c.abs() <= *half_width) { (2.0 * half_width).powi(-3) } else { 0.0 })
            }
            SpatialLaw::BumpDensity { bump } => Some(bump.value(x) / bump.integral()),
        }
    }

    /// `n` centres: the atoms themselves (requires `n` = number of atoms)
    /// or i.i.d. uniform points.
    pub fn sample(&self, n: usize, rng: &mut impl rand::Rng) -> Result<Vec<Vec3>> {
        match self {
            SpatialLaw::Atoms { points } => {
                check_centers(points.len(), &vec![Vec3::zeros(); n])?;
                Ok(points.iter().map(|p| Vec3::from(*p)).collect())
            }
            SpatialLaw::UniformBox { half_width } => Ok((0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-half_width..*half_width),
                        rng.random_range(-half_width..*half_width),
                        rng.random_range(-half_width..*half_width),
                    )
                })
                .collect()),
            SpatialLaw::BumpDensity { bump } => {
                let c = Vec3::from(bump.center);
                let r = bump.radius;
                let mut out = Vec::with_capacity(n);
                // rejection from the bounding cube; the profile is bounded by 1
                while out.len() < n {
                    let x = c + Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r));
                    if rng.random::<f64>() < bump.value(&x) {
                        out.push(x);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Tensor Gauss–Legendre nodes and weights on the bounding cube of a bump.
pub fn bump_quadrature(bump: &crate::testfn::Bump, nodes: usize) -> Vec<(Vec3, f64)> {
    let c = Vec3::from(bump.center);
    let r = bump.radius;
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..3).map(|d| gauss_legendre_on(nodes, c[d] - r, c[d] + r)).collect();
    let mut out = Vec::with_capacity(nodes.pow(3));
    for (z, wz) in axes[2].0.iter().zip(&axes[2].1) {
        for (y, wy) in axes[1].0.iter().zip(&axes[1].1) {
            for (x, wx) in axes[0].0.iter().zip(&axes[0].1) {
                out.push((Vec3::new(*x, *y, *z), wx * wy * wz));
            }
        }
    }
    out
}

/// Product initial law `f₀ = (spatial law) ⊗ (orientation law)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialLaw {
    pub spatial: SpatialLaw,
    pub orientation: OrientationLaw,
}

impl InitialLaw {
    /// `⟨f₀, ψ(0)⟩`.
    pub fn pair_at_zero(&self, psi: &ScalarTestFunction) -> Result<f64> {
        let spatial = match &psi.bump {
            Some(b) => self.spatial.bump_expectation(b)?,
            None => 1.0,
        };
        let o = &self.orientation;
        Ok(psi.window.value(0.0) * spatial * psi.harmonic.expectation(&o.mean(), &o.second_moment()))
    }
}

/// The two evaluations of the transport functional `Ψ_ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiValue {
    /// `⟨f₀,ψ(0)⟩ − ⟨S_n(T),ψ(T)⟩ + ∫⟨S_n, ∂_tψ + ∇_ξψ·Ph + Δ_S ψ⟩dt`.
    pub direct: f64,
    /// `⟨f₀ − S_n(0), ψ(0)⟩ − (1/n) Σ_i ∫ ∇_ξψ σ_D dB_i`.
    pub identity: f64,
}

/// One particle's `(direct, identity)` contributions to `Ψ_ψ`, without the
/// common `⟨f₀, ψ(0)⟩` term.
pub fn psi_particle(path: &ParticlePath, dt: f64, x: &Vec3, psi: &ScalarTestFunction, h: &TorqueField, scaling: Scaling) -> (f64, f64) {
    let a = scaling.drift_factor();
    let c = scaling.noise_factor() * std::f64::consts::SQRT_2;
    let m = path.increments.len();
    let mut gen = Vec::with_capacity(m + 1);
    let mut noise = Vec::with_capacity(m);
    for (k, xi) in path.states.iter().enumerate() {
        let t = k as f64 * dt;
        let v = xi.vec();
        let grad = psi.grad_xi(t, x, xi);
        gen.push(psi.dt(t, x, v) + a * (grad.dot(&h.eval(t)) + psi.laplace_beltrami(t, x, v)));
        if k < m {
            noise.push(grad.dot(&(v.cross(&path.increments[k]) * c)));
        }
    }
    let t_end = m as f64 * dt;
    let direct = -psi.value(t_end, x, path.states[m].vec()) + trapezoid(&gen, dt);
    let identity = -psi.value(0.0, x, path.states[0].vec()) - pairwise_sum(&noise);
    (direct, identity)
}

/// Evaluate `Ψ_ψ` on one stored realization in both forms.
pub fn psi_functional(
    ensemble: &PathEnsemble,
    centers: &[Vec3],
    f0: &InitialLaw,
    psi: &ScalarTestFunction,
    mode: ExecMode,
) -> Result<PsiValue> {
    check_centers(ensemble.n(), centers)?;
    let base = f0.pair_at_zero(psi)?;
    let parts = map_indexed(mode, ensemble.n(), |i| {
        psi_particle(&ensemble.paths[i], ensemble.sde.dt, &centers[i], psi, &ensemble.h, ensemble.sde.scaling)
    });
    let n = ensemble.n() as f64;
    let direct: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let identity: Vec<f64> = parts.iter().map(|p| p.1).collect();
    Ok(PsiValue { direct: base + pairwise_sum(&direct) / n, identity: base + pairwise_sum(&identity) / n })
}

/// `Θ_θ = ⟨f₀ − S_n, θ ⊗ 1⟩` over `(0, T) × ℝ³ × S²`; positions are frozen.
pub fn theta_functional(centers: &[Vec3], f0: &SpatialLaw, theta: &SpatialTestFunction, t_end: f64) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::InvalidParameter { name: "n", reason: "need at least one particle".into() });
    }
    let v: Vec<f64> = centers.iter().map(|x| theta.bump.value(x)).collect();
    let empirical = pairwise_sum(&v) / centers.len() as f64;
    Ok(theta.window.integral(t_end) * (f0.bump_expectation(&theta.bump)? - empirical))
}

/// Monte Carlo estimates of `E∫A(t):S√R₂∘dB` and `E∫b(t)·√R₂∘dB` against
/// the Fokker-Planck prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationCheck {
    pub strain: Summary,
    /// `γ_E/√(2γ_rot) · ∫ (3 M₂(t) − Id):A(t) dt` scaled by the noise factor.
    pub strain_prediction: f64,
    pub strain_z: f64,
    pub torque: Summary,
    pub torque_z: f64,
}

/// Inputs of the expectation identity check; `A(t) = w(t) A₀`, `b(t) = w(t) b₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationSetup {
    pub n: usize,
    pub initial: OrientationLaw,
    pub sde: SdeParams,
    pub h: TorqueField,
    pub params: ResistanceParams,
    pub a: SymTraceless3,
    pub b: Vec3,
    pub window: TimeWindow,
    /// Truncation degree of the Fokker-Planck reference.
    pub l_max: usize,
    /// Gauss–Legendre nodes for the time integral of the reference.
    pub time_nodes: usize,
}

/// Second moments `∫ξ⊗ξ f(t)` at the given times from the Fokker-Planck
/// reference, accounting for the time scaling.
pub fn reference_second_moments(
    initial: &OrientationLaw,
    h: &TorqueField,
    scaling: Scaling,
    l_max: usize,
    times: &[f64],
) -> Result<Vec<Mat3>> {
    let fp = FokkerPlanck::new(l_max)?;
    let f0 = SphericalDensity::zonal(l_max, &initial.axis(), 1.0, |l| initial.legendre_moment(l));
    // ∂_t f = a L_{h(t)} f becomes ∂_s g = L_{h(s/a)} g with s = a t
    let a = scaling.drift_factor();
    let hs = if a == 1.0 { h.clone() } else { h.time_scaled(1.0 / a) };
    let scaled: Vec<f64> = times.iter().map(|t| a * t).collect();
    let s_end = scaled.iter().cloned().fold(0.0, f64::max);
    let dt = FokkerPlanck::default_dt(&hs, s_end.max(1e-12));
    let out = fp.evolve(&f0, &hs, &scaled, dt)?;
    Ok(out.iter().map(|f| f.second_moment()).collect())
}

pub fn expectation_identity_check(setup: &ExpectationSetup, mode: ExecMode) -> Result<ExpectationCheck> {
    let ExpectationSetup { n, initial, sde, h, params, a, b, window, l_max, time_nodes } = setup;
    initial.validate()?;
    sde.validate()?;
    h.validate()?;
    params.validate()?;
    if *n < 2 {
        return Err(Error::InvalidParameter { name: "n", reason: "need at least two samples".into() });
    }
    let am = a.to_matrix();
    let samples = map_indexed(mode, *n, |i| -> Result<(f64, f64)> {
        let path = simulate_path(i, initial, sde, h)?;
        let mut gs = Vec::with_capacity(path.states.len());
        let mut gb = Vec::with_capacity(path.states.len());
        for (k, xi) in path.states.iter().enumerate() {
            let w = window.value(k as f64 * sde.dt);
            gs.push(strain_torque_vector(xi, params, &am) * w);
            gb.push(r2_sqrt(xi, params) * b * w);
        }
        Ok((stratonovich_sum(&gs, &path.increments)?, stratonovich_sum(&gb, &path.increments)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let strain = Summary::of(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    let torque = Summary::of(&samples.iter().map(|s| s.1).collect::<Vec<_>>());

    let t_end = sde.steps() as f64 * sde.dt;
    let (tn, tw) = gauss_legendre_on(*time_nodes, 0.0, t_end);
    let moments = reference_second_moments(initial, h, sde.scaling, *l_max, &tn)?;
    let integral: f64 = tn
        .iter()
        .zip(&tw)
        .zip(&moments)
        .map(|((t, w), m2)| w * window.value(*t) * a.contract(&(m2 * 3.0 - Mat3::identity())))
        .sum();
    let strain_prediction = params.gamma_e / (2.0 * params.gamma_rot).sqrt() * sde.scaling.noise_factor() * integral;
    Ok(ExpectationCheck {
        strain,
        strain_prediction,
        strain_z: strain.z_against(strain_prediction),
        torque,
        torque_z: torque.z_against(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orientation::{simulate_ensemble, Scheme};
    use crate::testfn::{Bump, SphereHarmonic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stratonovich_sum_of_brownian_motion_is_exact() {
        // ∫B∘dB = B(T)²/2 holds exactly for the midpoint sum
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let db = crate::orientation::brownian_increments(&mut rng, 500, 0.002);
        let mut b = vec![Vec3::zeros()];
        for d in &db {
            b.push(b.last().unwrap() + d);
        }
        let g: Vec<Vec3> = b.iter().map(|v| Vec3::new(v.x, 0.0, 0.0)).collect();
        let s = stratonovich_sum(&g, &db).unwrap();
        assert!((s - 0.5 * b[500].x * b[500].x).abs() < 1e-12);
        let ito = ito_sum(&g, &db).unwrap();
        let qv: f64 = db.iter().map(|d| d.x * d.x).sum();
        assert!((s - ito - 0.5 * qv).abs() < 1e-12);
        assert!(stratonovich_sum(&g[..10], &db).is_err());
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let v: Vec<f64> = (0..=10).map(|k| 2.0 + 0.1 * k as f64).collect();
        assert!((trapezoid(&v, 0.1) - (2.0 + 0.5 * 1.0)).abs() < 1e-14);
    }

    #[test]
    fn strain_torque_vector_represents_the_contraction() {
        let p = ResistanceParams::new(1.0, 1.0, 1.3, 0.7, 0.9).unwrap();
        let xi = Orientation::new(Vec3::new(0.3, -0.4, 0.8)).unwrap();
        let a = SymTraceless3([0.2, -0.5, 0.3, 0.1, -0.2]).to_matrix();
        let v = Vec3::new(0.7, 0.1, -0.3);
        let s = crate::tensor::stresslet_coupling(&xi, &p, &(r2_sqrt(&xi, &p) * v)).to_matrix();
        let lhs = (a.transpose() * s).trace();
        assert!((lhs - strain_torque_vector(&xi, &p, &a).dot(&v)).abs() < 1e-14);
    }

    #[test]
    fn psi_forms_agree_for_static_spatial_test_function() {
        let sde = SdeParams { dt: 1e-3, t_end: 0.5, scaling: Scaling::DeborahOne, scheme: Scheme::HeunStratonovich, seed: 11 };
        let h = TorqueField::constant(Vec3::new(0.0, 1.0, 0.5));
        let initial = OrientationLaw::Cap { axis: [0.0, 0.0, 1.0], half_angle: 0.5 };
        let ens = simulate_ensemble(40, &initial, &sde, &h, ExecMode::Sequential).unwrap();
        let centers = vec![Vec3::zeros(); 40];
        let f0 = InitialLaw { spatial: SpatialLaw::Atoms { points: vec![[0.0; 3]] }, orientation: initial };
        let psi = ScalarTestFunction {
            window: TimeWindow::One,
            bump: None,
            harmonic: SphereHarmonic::Quadratic { q: SymTraceless3([0.5, -0.2, 0.1, 0.0, 0.3]) },
        };
        let v = psi_functional(&ens, &centers, &f0, &psi, ExecMode::Parallel).unwrap();
        assert!((v.direct - v.identity).abs() < 2e-2, "{v:?}");
    }

    #[test]
    fn theta_vanishes_for_matching_atoms() {
        let pts = vec![[0.1, 0.0, 0.0], [-0.2, 0.1, 0.0]];
        let theta = SpatialTestFunction { window: TimeWindow::One, bump: Bump::new(Vec3::zeros(), 0.5, 6) };
        let centers: Vec<Vec3> = pts.iter().map(|p| Vec3::from(*p)).collect();
        let v = theta_functional(&centers, &SpatialLaw::Atoms { points: pts }, &theta, 1.0).unwrap();
        assert!(v.abs() < 1e-15);
    }
}
