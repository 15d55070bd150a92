//! Orientation SDEs on the unit sphere.
//!
//! Each particle axis follows
//!
//! ```text
//! dξ = c ξ × ∘dB + a P_{ξ⊥} h(t) dt
//! ```
//!
//! with `(c, a) = (√2, 1)` on the diffusive time scale and
//! `(√(2/φ_n), 1/φ_n)` on the viscoelastic time scale. The Brownian
//! increments that drive each path are stored next to it so that
//! Stratonovich pairings can later be evaluated against the same noise.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::quadrature::{gauss_legendre, legendre};
use crate::tensor::{Mat3, Orientation, Vec3};

/// External torque field `h`. Only spatially uniform, orientation
/// independent fields are supported; the solver applies `P_{ξ⊥}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TorqueField {
    #[default]
    Zero,
    ConstantB { b: [f64; 3] },
    /// `b(t) = Σ_k coefficients[k] t^k`.
    TimeVarying { coefficients: Vec<[f64; 3]> },
}

impl TorqueField {
    pub fn constant(b: Vec3) -> TorqueField {
        TorqueField::ConstantB { b: [b.x, b.y, b.z] }
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        match self {
            TorqueField::Zero => Vec3::zeros(),
            TorqueField::ConstantB { b } => Vec3::from(*b),
            TorqueField::TimeVarying { coefficients } => {
                // Horner
                coefficients.iter().rev().fold(Vec3::zeros(), |acc, c| acc * t + Vec3::from(*c))
            }
        }
    }

    /// Polynomial coefficients of `b(t)` (empty for the zero field).
    pub fn coefficients(&self) -> Vec<Vec3> {
        match self {
            TorqueField::Zero => vec![],
            TorqueField::ConstantB { b } => vec![Vec3::from(*b)],
            TorqueField::TimeVarying { coefficients } => coefficients.iter().map(|c| Vec3::from(*c)).collect(),
        }
    }

    pub fn is_time_independent(&self) -> bool {
        self.coefficients().len() <= 1
    }

    /// Upper bound of `|b(t)|` on `[0, t_end]`.
    pub fn sup_norm(&self, t_end: f64) -> f64 {
        self.coefficients()
            .iter()
            .enumerate()
            .map(|(k, c)| c.norm() * t_end.max(1.0).powi(k as i32))
            .sum()
    }

    /// The field `R h`.
    pub fn rotated(&self, r: &Mat3) -> TorqueField {
        match self {
            TorqueField::Zero => TorqueField::Zero,
            _ => TorqueField::TimeVarying {
                coefficients: self.coefficients().iter().map(|c| (r * c).into()).collect(),
            },
        }
    }

    /// The field `t ↦ h(s t)`.
    pub fn time_scaled(&self, s: f64) -> TorqueField {
        match self {
            TorqueField::Zero => TorqueField::Zero,
            _ => TorqueField::TimeVarying {
                coefficients: self
                    .coefficients()
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (c * s.powi(k as i32)).into())
                    .collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients().iter().any(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidParameter { name: "h", reason: "non-finite coefficient".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scaling {
    /// Time measured in units of the rotational diffusion time.
    DeborahOne,
    /// Time measured in units of the viscoelastic time; diffusion is
    /// `1/φ_n` faster.
    SmallDeborah { phi_n: f64 },
}

impl Scaling {
    /// Multiplier of the drift relative to the diffusive scaling.
    pub fn drift_factor(&self) -> f64 {
        match self {
            Scaling::DeborahOne => 1.0,
            Scaling::SmallDeborah { phi_n } => 1.0 / phi_n,
        }
    }

    /// Multiplier of `√2 ξ × dB`.
    pub fn noise_factor(&self) -> f64 {
        self.drift_factor().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    HeunStratonovich,
    EulerMaruyamaIto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeParams {
    pub dt: f64,
    pub t_end: f64,
    pub scaling: Scaling,
    #[serde(default)]
    pub scheme: Scheme,
    pub seed: u64,
}

impl SdeParams {
    pub fn deborah_one(dt: f64, t_end: f64, seed: u64) -> SdeParams {
        SdeParams { dt, t_end, scaling: Scaling::DeborahOne, scheme: Scheme::HeunStratonovich, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter { name: "dt", reason: format!("must be > 0, got {}", self.dt) });
        }
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return Err(Error::InvalidParameter { name: "t_end", reason: "must be >= dt".into() });
        }
        if let Scaling::SmallDeborah { phi_n } = self.scaling {
            if !(phi_n > 0.0 && phi_n < 1.0) {
                return Err(Error::InvalidParameter { name: "phi_n", reason: format!("must lie in (0,1), got {phi_n}") });
            }
        }
        Ok(())
    }

    /// Number of steps `m`; the grid is `t_k = k dt`, `k = 0..=m`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| k as f64 * self.dt).collect()
    }
}

/// Law of the initial orientations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OrientationLaw {
    Uniform,
    Delta { axis: [f64; 3] },
    /// Uniform on the spherical cap `{ξ·axis ≥ cos(half_angle)}`.
    Cap { axis: [f64; 3], half_angle: f64 },
    /// von Mises–Fisher density `∝ exp(kappa ξ·axis)`.
    VonMises { axis: [f64; 3], kappa: f64 },
}

impl OrientationLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OrientationLaw::Uniform => Ok(()),
            OrientationLaw::Delta { axis } => Orientation::new(axis.into()).map(|_| ()),
            OrientationLaw::Cap { axis, half_angle } => {
                Orientation::new(axis.into())?;
                if !(half_angle > 0.0 && half_angle <= std::f64::consts::PI) {
                    return Err(Error::InvalidParameter { name: "half_angle", reason: format!("{half_angle} not in (0, π]") });
                }
                Ok(())
            }
            OrientationLaw::VonMises { axis, kappa } => {
                Orientation::new(axis.into())?;
                if !(kappa.is_finite() && kappa >= 0.0) {
                    return Err(Error::InvalidParameter { name: "kappa", reason: format!("{kappa} must be >= 0") });
                }
                Ok(())
            }
        }
    }

    /// Symmetry axis (e₃ for the uniform law).
    pub fn axis(&self) -> Vec3 {
        match *self {
            OrientationLaw::Uniform => Vec3::z(),
            OrientationLaw::Delta { axis }
            | OrientationLaw::Cap { axis, .. }
            | OrientationLaw::VonMises { axis, .. } => Vec3::from(axis).normalize(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Orientation {
        let z_and_frame = |z: f64, rng: &mut dyn rand::RngCore| {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).max(0.0).sqrt();
            let (a, b) = orthonormal_frame(&self.axis());
            Orientation::new(self.axis() * z + (a * phi.cos() + b * phi.sin()) * s).expect("unit sample")
        };
        match *self {
            OrientationLaw::Uniform => loop {
                let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                if let Ok(o) = Orientation::new(v) {
                    return o;
                }
            },
            OrientationLaw::Delta { .. } => Orientation::from_unit(self.axis()),
            OrientationLaw::Cap { half_angle, .. } => {
                let c = half_angle.cos();
                let u: f64 = rng.random();
                z_and_frame(1.0 - u * (1.0 - c), rng)
            }
            OrientationLaw::VonMises { kappa, .. } => {
                let u: f64 = rng.random();
                let z = if kappa < 1e-8 {
                    2.0 * u - 1.0
                } else {
                    (1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa).clamp(-1.0, 1.0)
                };
                z_and_frame(z, rng)
            }
        }
    }

    /// `E[P_l(ξ·axis)]`; together with the axis this determines every
    /// spherical-harmonic coefficient of the (zonal) law.
    pub fn legendre_moment(&self, l: usize) -> f64 {
        if l == 0 {
            return 1.0;
        }
        match *self {
            OrientationLaw::Uniform => 0.0,
            OrientationLaw::Delta { .. } => 1.0,
            OrientationLaw::Cap { half_angle, .. } => {
                let c = half_angle.cos();
                (legendre(l - 1, c) - legendre(l + 1, c)) / ((2 * l + 1) as f64 * (1.0 - c))
            }
            OrientationLaw::VonMises { kappa, .. } => {
                let (x, w) = gauss_legendre(96);
                // shift the exponent to avoid overflow
                let num: f64 = x.iter().zip(&w).map(|(z, wz)| wz * legendre(l, *z) * (kappa * (z - 1.0)).exp()).sum();
                let den: f64 = x.iter().zip(&w).map(|(z, wz)| wz * (kappa * (z - 1.0)).exp()).sum();
                num / den
            }
        }
    }

    /// `E[ξ]`.
    pub fn mean(&self) -> Vec3 {
        self.axis() * self.legendre_moment(1)
    }

    /// `E[ξ⊗ξ]`.
    pub fn second_moment(&self) -> Mat3 {
        // E[z²] from E[P_2] = (3E[z²] − 1)/2
        let ez2 = (2.0 * self.legendre_moment(2) + 1.0) / 3.0;
        let m = self.axis();
        let mm = m * m.transpose();
        mm * ez2 + (Mat3::identity() - mm) * ((1.0 - ez2) / 2.0)
    }
}

/// Two unit vectors completing `n` to a right-handed orthonormal basis.
pub fn orthonormal_frame(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = n.cross(&helper).normalize();
    let b = n.cross(&a);
    (a, b)
}

/// Itô drift of the diffusive-scale SDE: `−2ξ + P_{ξ⊥} h(t)`.
pub fn ito_drift(xi: &Orientation, t: f64, h: &TorqueField) -> Vec3 {
    -2.0 * xi.vec() + xi.project_tangent(&h.eval(t))
}

fn tangent_drift(v: &Vec3, hv: &Vec3) -> Vec3 {
    let n2 = v.norm_squared();
    hv - v * (v.dot(hv) / n2)
}

fn check_finite(what: &'static str, v: &Vec3) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// One Heun predictor–corrector step of the Stratonovich SDE followed by
/// projection back onto the sphere.
pub fn heun_step(xi: &Orientation, t: f64, dt: f64, db: &Vec3, h: &TorqueField, scaling: Scaling) -> Result<Orientation> {
    check_finite("heun_step increment", db)?;
    if !dt.is_finite() {
        return Err(Error::NonFinite("heun_step dt"));
    }
    let a = scaling.drift_factor();
    let c = std::f64::consts::SQRT_2 * scaling.noise_factor();
    let x = xi.vec();
    let f0 = tangent_drift(x, &h.eval(t)) * a;
    let pred = x + f0 * dt + x.cross(db) * c;
    let f1 = tangent_drift(&pred, &h.eval(t + dt)) * a;
    let next = x + (f0 + f1) * (0.5 * dt) + (x + pred).cross(db) * (0.5 * c);
    check_finite("heun_step state", &next)?;
    Orientation::new(next)
}

/// Euler–Maruyama on the Itô form (drift `−2ξ + P h`), renormalized.
pub fn euler_ito_step(xi: &Orientation, t: f64, dt: f64, db: &Vec3, h: &TorqueField, scaling: Scaling) -> Result<Orientation> {
    check_finite("euler_ito_step increment", db)?;
    let a = scaling.drift_factor();
    let c = std::f64::consts::SQRT_2 * scaling.noise_factor();
    let x = xi.vec();
    let next = x + ito_drift(xi, t, h) * (a * dt) + x.cross(db) * c;
    check_finite("euler_ito_step state", &next)?;
    Orientation::new(next)
}

pub fn step(scheme: Scheme, xi: &Orientation, t: f64, dt: f64, db: &Vec3, h: &TorqueField, scaling: Scaling) -> Result<Orientation> {
    match scheme {
        Scheme::HeunStratonovich => heun_step(xi, t, dt, db, h, scaling),
        Scheme::EulerMaruyamaIto => euler_ito_step(xi, t, dt, db, h, scaling),
    }
}

/// One particle's trajectory on the ensemble grid and the Brownian
/// increments that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePath {
    /// `m + 1` states.
    pub states: Vec<Orientation>,
    /// `m` increments; `increments[k] = B(t_{k+1}) − B(t_k)`.
    pub increments: Vec<Vec3>,
}

/// Integrate a path driven by given increments on a uniform grid.
pub fn integrate_path(
    xi0: Orientation,
    increments: &[Vec3],
    dt: f64,
    h: &TorqueField,
    scaling: Scaling,
    scheme: Scheme,
) -> Result<Vec<Orientation>> {
    let mut states = Vec::with_capacity(increments.len() + 1);
    states.push(xi0);
    let mut xi = xi0;
    for (k, db) in increments.iter().enumerate() {
        xi = step(scheme, &xi, k as f64 * dt, dt, db, h, scaling)?;
        states.push(xi);
    }
    Ok(states)
}

/// RNG stream for particle `i`: ChaCha8 keyed by the run seed with the
/// particle index as stream id.
pub fn particle_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

pub fn brownian_increments(rng: &mut impl Rng, steps: usize, dt: f64) -> Vec<Vec3> {
    let s = dt.sqrt();
    (0..steps)
        .map(|_| {
            Vec3::new(
                rng.sample::<f64, _>(StandardNormal) * s,
                rng.sample::<f64, _>(StandardNormal) * s,
                rng.sample::<f64, _>(StandardNormal) * s,
            )
        })
        .collect()
}

/// Simulate particle `i` of a run. The initial orientation is drawn first
/// from the particle's stream, then the increments.
pub fn simulate_path(i: usize, initial: &OrientationLaw, sde: &SdeParams, h: &TorqueField) -> Result<ParticlePath> {
    let mut rng = particle_rng(sde.seed, i);
    let xi0 = initial.sample(&mut rng);
    let increments = brownian_increments(&mut rng, sde.steps(), sde.dt);
    let states = integrate_path(xi0, &increments, sde.dt, h, sde.scaling, sde.scheme)?;
    Ok(ParticlePath { states, increments })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub paths: Vec<ParticlePath>,
    pub sde: SdeParams,
    pub h: TorqueField,
    pub initial: OrientationLaw,
}

pub fn simulate_ensemble(
    n: usize,
    initial: &OrientationLaw,
    sde: &SdeParams,
    h: &TorqueField,
    mode: ExecMode,
) -> Result<PathEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter { name: "n", reason: "need at least one particle".into() });
    }
    initial.validate()?;
    sde.validate()?;
    h.validate()?;
    let paths = map_indexed(mode, n, |i| simulate_path(i, initial, sde, h))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble { times: sde.times(), paths, sde: *sde, h: h.clone(), initial: *initial })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementsHeader {
    /// `[n, m, 3]`.
    pub shape: [usize; 3],
    pub seed: u64,
    pub dtype: String,
    pub sde: SdeParams,
    pub h: TorqueField,
    pub initial: OrientationLaw,
}

impl PathEnsemble {
    pub fn n(&self) -> usize {
        self.paths.len()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Largest deviation `||ξ| − 1|` over all stored states.
    pub fn max_norm_defect(&self) -> f64 {
        self.paths
            .iter()
            .flat_map(|p| p.states.iter())
            .map(|s| (s.vec().norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `paths.csv` (columns t,i,xi1,xi2,xi3), `increments.bin`
    /// (little-endian f64, row-major n×m×3) and `increments.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(File::create(dir.join("paths.csv"))?);
        writeln!(csv, "t,i,xi1,xi2,xi3")?;
        for (i, p) in self.paths.iter().enumerate() {
            for (t, s) in self.times.iter().zip(&p.states) {
                let v = s.vec();
                writeln!(csv, "{},{},{},{},{}", t, i, v.x, v.y, v.z)?;
            }
        }
        csv.flush()?;
        let mut bin = BufWriter::new(File::create(dir.join("increments.bin"))?);
        for p in &self.paths {
            for db in &p.increments {
                for c in db.iter() {
                    bin.write_all(&c.to_le_bytes())?;
                }
            }
        }
        bin.flush()?;
        let header = IncrementsHeader {
            shape: [self.n(), self.steps(), 3],
            seed: self.sde.seed,
            dtype: "<f8".into(),
            sde: self.sde,
            h: self.h.clone(),
            initial: self.initial,
        };
        std::fs::write(dir.join("increments.json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }
}

/// Reads back the increments written by [`PathEnsemble::write_to`].
pub fn read_increments(dir: &Path) -> Result<(IncrementsHeader, Vec<Vec<Vec3>>)> {
    let header: IncrementsHeader = serde_json::from_str(&std::fs::read_to_string(dir.join("increments.json"))?)?;
    let mut bytes = Vec::new();
    File::open(dir.join("increments.bin"))?.read_to_end(&mut bytes)?;
    let [n, m, d] = header.shape;
    if bytes.len() != n * m * d * 8 {
        return Err(Error::LengthMismatch { what: "increments.bin", expected: n * m * d * 8, got: bytes.len() });
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let out = (0..n)
        .map(|i| (0..m).map(|k| Vec3::from_column_slice(&vals[(i * m + k) * 3..(i * m + k) * 3 + 3])).collect())
        .collect();
    Ok((header, out))
}
