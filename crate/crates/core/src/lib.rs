//! Coarse-graining of agent-based models into polynomial SDEs.
//!
//! The pipeline runs from agent-level simulators through Kramers–Moyal
//! estimation of drift and diffusion on a grid of macrostates to a generator
//! fit over a monomial dictionary, then to Euler–Maruyama prediction with the
//! identified model. Everything here is `no_std` with `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dictionary;
pub mod error;
pub mod gedmd;
pub mod km;
pub mod linalg;
pub mod math;
pub mod mjp;
pub mod poly;
pub mod prey;
pub mod rng;
pub mod sde;
pub mod voter;

pub use dictionary::{DiffusionField, MonomialDictionary, PolynomialField};
pub use error::{Error, Result};
pub use mjp::{JumpModel, PopulationState, TransitionRule, Trajectory};
pub use poly::Polynomial;
