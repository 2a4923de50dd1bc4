//! Phase-space simulation of classical Hamiltonian measurement.

// `!(x > 0.0)` is used on purpose so NaN is rejected too; stencils index
// several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod apparatus;
pub mod artifacts;
pub mod error;
pub mod expr;
pub mod figdata;
pub mod master;
pub mod observable;
pub mod phase_space;
pub mod scenario;
pub mod single_shot;
pub mod sweep;
pub mod verify;

pub use apparatus::{ApparatusConfig, StreamRng};
pub use error::{Error, ErrorKind, Result};
pub use observable::ObservableSpec;
pub use phase_space::{BoundaryMode, DensityField, Grid2D, ScalarField};
