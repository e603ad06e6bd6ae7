//! Outbreak detection for univariate and multivariate count time series.
//!
//! The [`sts`] module holds the shared data model. Detectors:
//!
//! * [`ears::ears_c1`] for short baselines,
//! * [`farrington::farrington_flexible`] for quasi-Poisson one-timepoint thresholds,
//! * [`glrcusum::glrnb`] / [`glrcusum::glrpois`] for sustained shifts in counts,
//! * [`catcusum::categorical_cusum`] for proportions and compositions.
//!
//! [`runlength`] approximates false-alarm probabilities of CUSUM schemes and
//! calibrates their thresholds.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod catcusum;
pub mod control;
pub mod cusum;
pub mod dist;
pub mod ears;
pub mod error;
pub mod farrington;
pub mod glrcusum;
pub mod regress;
pub mod runlength;
pub mod sts;

pub use control::ControlSpec;
pub use cusum::{CusumTrace, Ret};
pub use error::{Error, Result};
pub use regress::{CategoricalFit, DesignMatrix, GlmFit};
pub use sts::{Aggregate, EpochSpec, MonitoringRange, StsFrame, SurveillanceResult};

/// Re-exported linear algebra types used throughout the public API.
pub use nalgebra::{DMatrix, DVector};
