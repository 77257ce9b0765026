//! Functional data analysis for daily hydrological series.
//!
//! Discrete daily measurements are smoothed into curves over B-spline or
//! Fourier bases ([`smoothing`]), then related through penalized functional
//! linear models: a scalar response on a functional covariate
//! ([`flm_scalar`]) and a functional response on a functional covariate
//! ([`flm_full`]). [`baselines`] holds the aggregate linear model and the
//! lagged feed-forward network used for comparison, and [`metrics`] the
//! comparison criteria.

pub mod baselines;
pub mod basis;
pub mod cv;
pub mod error;
pub mod flm_full;
pub mod flm_scalar;
pub mod linalg;
pub mod metrics;
pub mod quadrature;
pub mod smoothing;
pub mod synth;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use basis::{gram_matrix, penalty_matrix, BasisKind, BasisSystem, DiffOperator, Interval};
pub use cv::{CVResult, SelectionRule};
pub use error::{FdaError, Result};
pub use smoothing::{DiscreteSeries, FunctionalDataset, SmoothReport};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always follows input order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}
