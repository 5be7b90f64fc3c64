//! Capacity-fade regression for lithium-ion cycling data.
//!
//! The crate fits parametric degradation curves (a five-parameter sigmoid
//! plus three classic baselines) by nonlinear least squares, quantifies
//! their uncertainty with asymptotic and parametric-bootstrap bands, and
//! predicts end-of-life cycle counts with cross-validated accuracy reports.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to the usual precision. Data ingestion and the
//! cross-validation harness work in `f64`.

// `!(a > b)` is used deliberately so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
mod error;
pub mod inference;
pub mod lifetime;
pub mod linalg;
pub mod models;
pub mod nls;
mod rng;
pub mod roots;
mod scalar;
pub mod spline;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use data::{Dataset, Trace, Unit};
pub use inference::{Band, BandKind, BootstrapEnsemble};
pub use lifetime::{CvReport, CvSummary, EolReport, Metrics};
pub use models::{Bound, Family, ModelSpec, ParamVector};
pub use nls::{FitConfig, FitError, FitResult};
pub use roots::{Crossing, InverseOptions};

pub type Spec = ModelSpec<f64>;
pub type Params = ParamVector<f64>;
pub type Fit = FitResult<f64>;
pub type Config = FitConfig<f64>;
pub type CurveBand = Band<f64>;
pub type Ensemble = BootstrapEnsemble<f64>;
pub type Eol = EolReport<f64>;

pub type Spec32 = ModelSpec<f32>;
pub type Params32 = ParamVector<f32>;
pub type Fit32 = FitResult<f32>;
pub type Config32 = FitConfig<f32>;
