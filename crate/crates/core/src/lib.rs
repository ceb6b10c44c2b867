//! Normal variance mixtures: distribution functions, densities, fitting and
//! sampling driven by randomized quasi-Monte Carlo.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod density;
pub mod distribution;
pub mod error;
pub mod fitting;
pub mod gammamix;
pub mod linalg;
pub mod mixtures;
pub mod model;
pub mod rqmc;
pub mod sampling;
pub mod special;
pub mod stats;

pub use error::{NvmixError, Result};
pub use mixtures::MixtureSpec;
pub use model::NvmModel;
pub use rqmc::{RqmcConfig, RqmcResult};
