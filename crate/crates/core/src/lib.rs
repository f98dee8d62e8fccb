//! Semiparametric additive risks model for case-II interval-censored data.
//!
//! The hazard is `h(t | X) = lambda(t) + beta' X(t)` with a step-function
//! baseline that puts mass `lambda_k = exp(eta_k)` on each distinct inspection
//! time. [`solver::fit`] maximizes the likelihood by a gradient MM algorithm,
//! [`inference::profile_covariance`] gives profile-likelihood standard errors and
//! [`bootstrap::boot_analyze`] gives resampling SEs and intervals.
//!
//! ```no_run
//! use arm_mm::{ingest, solver, CovariateProcess, SolverConfig};
//!
//! let data = ingest::read_csv_path("data/bcos.csv")?;
//! let fit = solver::fit(&data, &CovariateProcess::TimeIndependent, &SolverConfig::default())?;
//! println!("beta = {:?}, loglik = {}", fit.params.beta, fit.loglik);
//! # Ok::<(), arm_mm::Error>(())
//! ```
//!
//! The data model and likelihood kernels are generic over [`Scalar`] (`f32`
//! or `f64`); the optimizers work in `f64`.

pub mod bootstrap;
pub mod direct;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod likelihood;
pub mod model;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
pub use likelihood::{loglik, u_terms, LogLik, UTerms};
pub use model::{
    canonicalize, cumulative_hazard, survival, Censoring, CovariateProcess, Dataset, Design, FitResult,
    InspectionGrid, ModelParams, Observation, RawRow, Scalar,
};
pub use solver::SolverConfig;

pub type ObservationF32 = Observation<f32>;
pub type ObservationF64 = Observation<f64>;
pub type DatasetF32 = Dataset<f32>;
pub type DatasetF64 = Dataset<f64>;
pub type GridF32 = InspectionGrid<f32>;
pub type GridF64 = InspectionGrid<f64>;
pub type ParamsF32 = ModelParams<f32>;
pub type ParamsF64 = ModelParams<f64>;
pub type DesignF32 = Design<f32>;
pub type DesignF64 = Design<f64>;
