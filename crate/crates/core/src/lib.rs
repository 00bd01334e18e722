//! Finite-dimensional quantum metric geometry: quantum compact metric
//! spaces, metrized and metrical Hilbert bundles, bridges and tunnels, and
//! the numeric kernels used to estimate their statistics.

pub mod algebra;
pub mod bundle;
pub mod convex;
pub mod error;
pub mod estimate;
pub mod metrical;
pub mod modular;
pub mod qcms;
pub mod seminorm;

pub use error::{Error, Result};
