//! Divisor-sum moments: exact divisor-function tables, residue main terms,
//! a multiplicative several-variable kernel, error-term evaluation, and
//! closed-form moment integration, all with verified high-precision paths.

pub mod error;
pub mod hp;
pub mod delta;
pub mod mainterm;
pub mod multivar;
pub mod moments;
pub mod series;
pub mod sieve;
pub mod voronoi;
pub mod zeta;

pub use error::{DmError, Result};
