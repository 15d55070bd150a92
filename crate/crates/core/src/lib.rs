//! Numerics for suspensions of Brownian axisymmetric particles in Stokes
//! flow with frozen centers: resistance tensor algebra, orientation SDEs on
//! the sphere, Stokes singularity kernels, a method-of-reflections solver,
//! stochastic pairings against smooth test functions, and a spectral
//! Fokker-Planck solver on the sphere.

pub mod error;
pub mod exec;
pub mod fokker_planck;
pub mod orientation;
pub mod pairing;
pub mod particles;
pub mod quadrature;
pub mod reflections;
pub mod sphere;
pub mod stats;
pub mod stokes;
pub mod tensor;
pub mod testfn;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use tensor::{Mat3, Orientation, ResistanceParams, SymTraceless3, Vec3};
