//! Image restoration by guided propagation of learned modules.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod error;
pub mod fidelity;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod propagate;
pub mod prox;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
pub use fidelity::{Fidelity, FidelityKind};
pub use grid::{BlurKernel, ImageGrid};
pub use neural::{dm_apply, gm_apply, ConvNetModule, Role};
pub use prox::{prox_prior, Exponent, Frame, PriorSpec};
pub use rng::SeedStreams;
pub use tasks::{TaskKind, TaskSpec};
