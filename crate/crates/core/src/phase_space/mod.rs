//! Discretised phase space: grids, fields, Poisson brackets, flows,
//! entropy, marginals and cumulants.

mod bracket;
mod field;
mod flow;
mod grid;
pub mod snapshot;
mod stats;

pub use bracket::{gradient, phase_space_average, poisson_bracket, poisson_bracket_with, DiffOrder};
pub(crate) use bracket::FlowDerivative;
pub use field::{pairwise_sum, DensityField, ScalarField, DEFAULT_MARGIN_CELLS, MARGIN_MASS_LIMIT};
pub(crate) use field::pairwise_sum_by;
pub use flow::{advect_along_flow, flow_point, Advected, Interpolator, BOUNDARY_FLUX_TOLERANCE};
pub use grid::{BoundaryMode, Grid2D, MIN_CELLS};
pub use stats::{cumulants_of_marginal, marginal_over_observable, shannon_entropy, Marginal, ENTROPY_FLOOR};
