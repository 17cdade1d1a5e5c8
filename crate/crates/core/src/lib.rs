//! Monte Carlo laboratory for classical quasi one-dimensional jellium: a
//! one-component plasma on the periodic strip `R x [0, W)` with a uniform
//! neutralizing background.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod error;
pub mod kfield;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod potential;
pub mod quad;
pub mod sampler;

pub use energy::{EnergyBreakdown, EnergyModel, Mode};
pub use error::{Error, Result};
pub use kfield::{CrossingEvent, CrossingKind, KField, Side};
pub use model::{build_domain, canonicalize, Configuration, Domain, ModelParams, Point};
pub use sampler::{Chain, ChainReport, SamplerSpec};
