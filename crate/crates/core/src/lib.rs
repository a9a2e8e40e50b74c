//! Space-time domain decomposition for advection-diffusion with
//! heterogeneous coefficients, discretized by upwind mixed hybrid finite
//! elements on rectangles and backward Euler in time.

pub mod bench;
pub mod error;
pub mod geometry;
pub mod interface;
pub mod linsolve;
pub mod mhfe;
pub mod optim;
pub mod propagate;
pub mod timegrid;

pub use error::{Error, Result};
