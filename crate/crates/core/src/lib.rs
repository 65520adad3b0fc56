//! Approximate factor models whose latent factors follow a Markovian vine
//! copula (M-vine) process.
//!
//! The estimation path is: [`factors::pca_factors`] for the factor space,
//! [`pipeline::fit`] for the oblique rotation together with the kernel
//! entropy margins and stepwise copula fit, and [`forecast`] for Monte-Carlo
//! predictive distributions and VaR backtests. [`dgp`] reproduces the
//! simulation designs used to validate the estimator.

pub mod dataio;
pub mod dgp;
pub mod error;
pub mod factors;
pub mod forecast;
pub mod margins;
pub mod mvine;
pub mod numeric;
pub mod optim;
pub mod paircop;
pub mod pipeline;
pub mod rotation;

pub use dataio::{load_csv, load_model, save_model, write_csv, PanelData, SCHEMA_VERSION};
pub use error::{ErrorKind, Result, SvfError};
pub use factors::{pca_factors, select_k, FactorDecomposition};
pub use forecast::{ForecastEnsemble, ForecastOptions};
pub use margins::MarginModel;
pub use mvine::{ClassId, MVineModel, MVineStructure, VineEdge};
pub use paircop::{Family, FamilySet, PairCopula, Reflection};
pub use pipeline::{FitOptions, FittedModel, KChoice, SignSearch};
pub use rotation::RotationAngles;

/// Dense column-major matrix used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;
