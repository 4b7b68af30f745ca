//! Labor-market model in which occupations substitute according to their
//! distance in skill space.

// `!(x > 0.0)` checks are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod corr_core;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod hat_algebra;
pub mod incidence;
pub mod labor_supply;
pub mod numeric;
pub mod spectral;
pub mod synthetic;

pub use error::{DidesError, ErrorClass, Result};
pub use corr_core::{FrechetParams, SkillSpace};
pub use dynamics::{DynamicParams, FundamentalHats, Fundamentals, TransitionPanel};
pub use estimation::{EulerPanel, PpmlProblem};
pub use hat_algebra::GroupPanel;
pub use incidence::Shock;
pub use labor_supply::{Economy, ElasticityMatrix};
pub use numeric::SolverOptions;
pub use spectral::Spectrum;
