//! Run configuration: parsed from JSON with unknown keys rejected, every
//! field defaulted, and hashed in canonical form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use suspension_core::orientation::{OrientationLaw, Scaling, Scheme, SdeParams, TorqueField};
use suspension_core::pairing::SpatialLaw;
use suspension_core::testfn::{Bump, DivFreeField, ScalarTestFunction, SpatialTestFunction, SphereHarmonic, TimeWindow};
use suspension_core::{ResistanceParams, SymTraceless3, Vec3};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulate,
    FokkerPlanck,
    VerifyIdentities,
    SweepDe1,
    SweepSmallDe,
    CompareFields,
    KernelsSelftest,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::FokkerPlanck => "fokker-planck",
            Mode::VerifyIdentities => "verify",
            Mode::SweepDe1 => "sweep-de1",
            Mode::SweepSmallDe => "sweep-small-de",
            Mode::CompareFields => "compare-fields",
            Mode::KernelsSelftest => "kernels-selftest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sphere,
    Anisotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsSpec {
    Preset(Preset),
    Explicit(ResistanceParams),
}

impl ParamsSpec {
    pub fn resolve(&self) -> Result<ResistanceParams> {
        let p = match self {
            ParamsSpec::Preset(Preset::Sphere) => ResistanceParams::sphere(),
            ParamsSpec::Preset(Preset::Anisotropic) => ResistanceParams::anisotropic(),
            ParamsSpec::Explicit(p) => *p,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Time discretization; the seed lives at the top level of [`RunConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSpec {
    pub dt: f64,
    pub t_end: f64,
    pub scaling: Scaling,
    pub scheme: Scheme,
}

impl Default for SdeSpec {
    fn default() -> Self {
        SdeSpec { dt: 0.01, t_end: 1.0, scaling: Scaling::DeborahOne, scheme: Scheme::HeunStratonovich }
    }
}

impl SdeSpec {
    pub fn with_seed(&self, seed: u64) -> SdeParams {
        SdeParams { dt: self.dt, t_end: self.t_end, scaling: self.scaling, scheme: self.scheme, seed }
    }
}

/// How particle centres are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterSpec {
    /// Cell-centred lattice in the unit cube with uniform jitter of at most
    /// `jitter` lattice spacings (clamped below ¼).
    JitteredLattice { jitter: f64 },
    /// Fresh i.i.d. draws from a spatial law for every realization.
    Sampled { law: SpatialLaw },
    /// Whitespace- or comma-separated `x y z` rows.
    File { path: PathBuf },
}

impl Default for CenterSpec {
    fn default() -> Self {
        CenterSpec::JitteredLattice { jitter: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestFunctions {
    pub phi: DivFreeField,
    pub psi: ScalarTestFunction,
    pub theta: SpatialTestFunction,
}

impl Default for TestFunctions {
    fn default() -> Self {
        TestFunctions {
            phi: DivFreeField::new(
                Bump::new(Vec3::zeros(), 0.45, 6),
                Vec3::new(0.0, 0.6, 0.8),
                TimeWindow::SinSquared { t_end: 1.0 },
            ),
            psi: ScalarTestFunction {
                window: TimeWindow::SinSquared { t_end: 1.0 },
                bump: Some(Bump::new(Vec3::zeros(), 0.45, 4)),
                harmonic: SphereHarmonic::Quadratic { q: SymTraceless3([0.5, -0.25, 0.0, 0.2, 0.0]) },
            },
            theta: SpatialTestFunction { window: TimeWindow::One, bump: Bump::new(Vec3::zeros(), 0.4, 4) },
        }
    }
}

/// Stress/velocity grid for the field comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Grid spacing of the stress quadrature.
    pub spacing: f64,
    /// Gauss–Legendre nodes per axis for the reference quadrature.
    pub quadrature_nodes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { spacing: 0.04, quadrature_nodes: 48 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpSpec {
    pub l_max: usize,
    /// Gauss–Legendre nodes for time integrals against the reference.
    pub time_nodes: usize,
}

impl Default for FpSpec {
    fn default() -> Self {
        FpSpec { l_max: 16, time_nodes: 24 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct W1Spec {
    /// Checkpoint times; empty disables the diagnostic.
    pub checkpoints: Vec<f64>,
    /// At most this many particles enter the transport problem.
    pub max_atoms: usize,
    /// Atoms drawn from the reference density.
    pub reference_atoms: usize,
    /// Independent seeds per `n` (the median is reported).
    pub seeds: usize,
    /// Regularization for the entropic fallback.
    pub epsilon: f64,
}

impl Default for W1Spec {
    fn default() -> Self {
        W1Spec { checkpoints: vec![0.5, 1.0], max_atoms: 1024, reference_atoms: 1024, seeds: 3, epsilon: 1e-3 }
    }
}

/// Inputs of the identity checks (`verify` mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentitySpec {
    pub a: SymTraceless3,
    pub b: [f64; 3],
    pub window: TimeWindow,
    pub samples: usize,
}

impl Default for IdentitySpec {
    fn default() -> Self {
        IdentitySpec {
            a: SymTraceless3([0.4, -0.1, 0.2, 0.0, -0.3]),
            b: [0.3, -0.5, 1.0],
            window: TimeWindow::One,
            samples: 20_000,
        }
    }
}

/// Small-Deborah sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmallDeSpec {
    pub phi_n: Vec<f64>,
    /// Particles simulated for the moment averages.
    pub particles: usize,
    /// Start of the time average, in units of `φ_n` (diffusive times).
    pub average_from: f64,
    /// Diffusive time step `dt/φ_n`.
    pub diffusive_dt: f64,
    /// End time in units of `φ_n`.
    pub diffusive_t_end: f64,
}

impl Default for SmallDeSpec {
    fn default() -> Self {
        SmallDeSpec { phi_n: vec![0.01], particles: 2000, average_from: 5.0, diffusive_dt: 5e-4, diffusive_t_end: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub particle_counts: Vec<usize>,
    pub params: ParamsSpec,
    pub h: TorqueField,
    pub sde: SdeSpec,
    pub initial: OrientationLaw,
    pub centers: CenterSpec,
    /// Volume fraction `φ_n = n r³` used to size particles (De ~ 1 runs).
    pub volume_fraction: f64,
    /// Separation constant for the assumption checks.
    pub c_sep: f64,
    pub test_functions: TestFunctions,
    /// Spatial law of the initial data for `Ψ`, `Θ` and field comparisons.
    pub spatial: SpatialLaw,
    pub grid: GridSpec,
    pub fp: FpSpec,
    pub realizations: usize,
    pub w1: W1Spec,
    pub identity: IdentitySpec,
    pub small_de: SmallDeSpec,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::default(),
            particle_counts: vec![64, 256],
            params: ParamsSpec::Preset(Preset::Anisotropic),
            h: TorqueField::Zero,
            sde: SdeSpec::default(),
            initial: OrientationLaw::Cap { axis: [0.0, 0.0, 1.0], half_angle: 0.3 },
            centers: CenterSpec::default(),
            volume_fraction: 0.01,
            c_sep: 0.5,
            test_functions: TestFunctions::default(),
            spatial: SpatialLaw::UniformBox { half_width: 0.5 },
            grid: GridSpec::default(),
            fp: FpSpec::default(),
            realizations: 100,
            w1: W1Spec::default(),
            identity: IdentitySpec::default(),
            small_de: SmallDeSpec::default(),
            seed: 1,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.particle_counts.is_empty() || self.particle_counts.contains(&0) {
            return bad("particle_counts must be a nonempty list of positive integers");
        }
        if self.realizations < 2 {
            return bad("realizations must be >= 2");
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return bad("volume_fraction must lie in (0, 1)");
        }
        if self.small_de.phi_n.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad("small_de.phi_n entries must lie in (0, 1)");
        }
        if !(self.grid.spacing > 0.0) || self.grid.quadrature_nodes < 2 {
            return bad("grid.spacing must be > 0 and grid.quadrature_nodes >= 2");
        }
        self.params.resolve()?;
        self.h.validate()?;
        self.initial.validate()?;
        self.spatial.validate()?;
        self.sde.with_seed(self.seed).validate()?;
        self.test_functions.phi.validate()?;
        if let CenterSpec::Sampled { law } = &self.centers {
            law.validate()?;
        }
        Ok(())
    }

    /// Canonical JSON: keys sorted (serde_json's default map), compact.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Deterministic run identifier.
    pub fn run_id(&self) -> String {
        format!("{}-{}", self.mode.name(), &self.hash()[..12])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 3, "bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sde": {"dt": 0.1, "tend": 1.0}}"#).is_err());
    }

    #[test]
    fn presets_parse() {
        let cfg = RunConfig::from_json(r#"{"params": "sphere"}"#).unwrap();
        assert_eq!(cfg.params.resolve().unwrap().gamma_e, 0.0);
        let cfg = RunConfig::from_json(
            r#"{"params": {"gamma_perp": 1, "gamma_par": 1, "gamma_rot": 2, "gamma_rot_par": 1, "gamma_E": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.params.resolve().unwrap().gamma_rot, 2.0);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 2, ..RunConfig::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.run_id(), RunConfig::default().run_id());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"particle_counts": []}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sde": {"dt": -1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"volume_fraction": 2.0}"#).is_err());
    }
}
