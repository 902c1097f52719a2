//! Multilevel Euler-Maruyama for SDEs whose drift is available through a
//! ladder of approximations of increasing accuracy and cost.
//!
//! The crate provides the plain Euler-Maruyama baseline ([`em`]), the
//! randomized multilevel integrator ([`mlem`]), learned time-dependent
//! level probabilities ([`adaptive`]), the cost and error bounds behind the
//! parameter choices ([`theory`]) and a Gaussian-mixture diffusion testbed
//! ([`diffusion`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod autodiff;
pub mod diffusion;
pub mod em;
pub mod error;
pub mod mlem;
pub mod sde;
pub mod theory;

pub use error::{Error, Result};
pub use sde::drift::{Drift, DriftField};
pub use sde::ladder::{make_synthetic_ladder, DriftLadder, Level};
pub use sde::noise::{BrownianPath, NoiseDriver};
pub use sde::{CostMode, Direction, InitialState, NoiseSchedule, SdeProblem, Trajectory};
