//! Numerical building blocks: grids, quadrature, monotone interpolation,
//! root finding, differentiation and isotonic regression.

mod diff;
mod grid;
mod pava;
mod quad;
mod root;
mod spline;

pub use diff::{stencil_slopes, three_point_slopes};
pub use grid::{chebyshev_grid, uniform_grid, DEFAULT_GRID_SIZE};
pub use pava::isotonic_increasing;
pub use quad::{adaptive_integral, gauss_legendre, gauss_legendre_rule};
pub use root::{bisect, golden_min, loglog_slope, Bracket};
pub use spline::Hermite;
