//! Structure learning for simulated physical processes.
//!
//! The crate covers the whole path from a periodic advection–diffusion
//! simulation to a scored velocity field:
//!
//! * [`pde_sim`] generates impulse-response runs for the benchmark flows,
//! * [`dataset`] turns runs into a lagged, z-scored design and its covariance,
//! * [`aclime`] estimates a sparse precision matrix (ACLIME or CLIME) with a
//!   column-block inexact ADMM built from the primitives in [`admm`],
//! * [`graph_velocity`] decodes lagged edges, reconstructs velocities and
//!   scores them against the true flow,
//! * [`container`] reads and writes the binary matrix format used on disk.

pub mod aclime;
pub mod admm;
pub mod container;
pub mod dataset;
pub mod error;
pub mod graph_velocity;
pub mod lp;
pub mod pde_sim;
pub mod synthetic;

pub use error::{Error, Result};
