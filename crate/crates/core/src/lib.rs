//! Numerical toolkit for a hybrid heat system: two rods with variable
//! coefficients on `(-1, 0)` and `(0, 1)`, coupled at `x = 0` by a point mass,
//! with a Dirichlet or Neumann input at `x = 1`.
//!
//! The crate computes the spectrum of the coupled operator by shooting,
//! certifies interlacing and gap properties, builds a null control by the
//! moment method and checks it by two independent forward simulations.

// Checks are written as `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeffs;
pub mod dd;
pub mod expr;
pub mod linalg;
pub mod moments;
pub mod ode;
pub mod quad;
pub mod roots;
pub mod shooting;
pub mod simulator;
pub mod spectrum;
pub mod spline;
pub mod state;

pub use coeffs::{BcVariant, CoefficientSet, ProblemConfig, Tolerances, TravelTimes};
pub use moments::{BiorthogonalFamily, ControlSignal, MomentProblem, Precision};
pub use shooting::{Side, ShootingTrace};
pub use simulator::{SimulationResult, VerificationReport};
pub use spectrum::{AuxiliarySpectra, Eigenpair, SpectralReport};
pub use state::StateSnapshot;
