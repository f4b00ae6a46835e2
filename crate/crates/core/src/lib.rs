//! Numerics for the isotropic α-stable process reflected from the complement
//! of a bounded open set.
//!
//! The process runs as a stable Lévy process inside `D`; at the first exit,
//! landing at `z ∈ Dᶜ`, it is restarted inside `D` according to a reflection
//! kernel `μ(z, ·)`. The crate provides
//!
//! * exact samplers for stable increments and ball exit positions ([`stable`]),
//! * domain geometry and exterior quadrature ([`geometry`]),
//! * reflection kernels and their admissibility check ([`reflection`]),
//! * grid discretizations of the killed process: generator, heat kernel,
//!   Green and harmonic kernels, resolvents ([`killed`]),
//! * the perturbation (Duhamel) series of the reflected kernel, its ladder
//!   lift and the supermedian functions built from it ([`perturbation`]),
//! * Monte Carlo simulation of the ladder pair `(N_t, X_t)` ([`pathsim`]),
//! * stationary laws of the reflection chain and of the semigroup
//!   ([`stationary`]),
//! * a batch experiment runner with JSON configs and CSV/JSON outputs
//!   ([`experiment`]).

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod killed;
pub mod linalg;
pub mod pathsim;
pub mod perturbation;
pub mod point;
pub mod reflection;
pub mod rng;
pub mod special;
pub mod stable;
pub mod stationary;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{Domain, Grid, Region};
pub use killed::{GridOperator, OperatorKind};
pub use point::Point;
pub use reflection::{EntryLaw, ReflectionKernel};
pub use stable::StableParams;
