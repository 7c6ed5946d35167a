//! Monte Carlo, multilevel Monte Carlo and multi-index Monte Carlo estimators
//! for expectations of mean-field limits of interacting particle systems.
//!
//! The simulation layer ([`model`], [`stepping`], [`samplers`]) is generic over
//! the floating-point type through [`Real`]; statistics are accumulated in
//! `f64`. Concrete aliases for the common cases live at the crate root.
//!
//! The two discretization parameters are the number of time steps `N` and the
//! number of particles `P`. A sample of the particle-averaged observable costs
//! `N * P^gamma_p` work units.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod stepping;

pub use error::{Error, Result};
pub use scalar::Real;

pub use analysis::{ComplexityLaw, MultiIndexSet, RateFit};
pub use estimators::{ErrorBudget, EstimateReport, EstimatorSettings, LevelStats, MlmcVariant};
pub use model::{Law, ParticleModel, QoiSpec, RandomInput};
pub use rng::{SampleKey, StreamContext};
pub use samplers::{DiffSample, Hierarchy, Sampler, SamplerKind, WorkModel};
pub use stepping::{PathResult, Scheme};

/// The Kuramoto oscillator system in double precision.
pub type Kuramoto64 = model::Kuramoto<f64>;
/// The Kuramoto oscillator system in single precision.
pub type Kuramoto32 = model::Kuramoto<f32>;
/// Linear non-interacting test system in double precision.
pub type Linear64 = model::LinearModel<f64>;
/// Linear non-interacting test system in single precision.
pub type Linear32 = model::LinearModel<f32>;
/// Double-precision observables.
pub type Qoi64 = QoiSpec<f64>;
/// Single-precision observables.
pub type Qoi32 = QoiSpec<f32>;
