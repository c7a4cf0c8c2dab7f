//! Mean estimation for functional outcomes that are missing at random.
//!
//! Entire outcome curves may be unobserved; covariates are observed for all
//! units and drive both a working outcome regression and a logistic model
//! for the missingness mechanism. The crate provides:
//!
//! - [`estimators`]: outcome-regression (OR), double robust (DR), and
//!   complete-case (CC) mean-curve estimators with plug-in asymptotic
//!   covariances;
//! - [`bands`]: simultaneous confidence bands from a Kac-Rice critical
//!   value (constant or fairness-partitioned) and pointwise t-bands;
//! - [`simulation`]: the data-generating process and a seeded, parallel
//!   Monte Carlo harness for coverage and error studies;
//! - [`model`] and [`nuisance`]: shared data types and the working-model
//!   fitters.

pub mod bands;
pub mod error;
pub mod estimators;
pub mod model;
pub mod nuisance;
pub mod simulation;

pub use bands::{Band, BandKind, Partition};
pub use error::{Error, Result};
pub use model::{CovariateMoments, Dataset, Grid, MeanEstimate, Method};
pub use nuisance::{OutcomeModel, PropensityModel};
pub use simulation::{ErrorKind, Misspec, SimConfig, StudyResult};
