pub mod error;
pub mod linalg;
pub mod par;

pub use error::{DbError, Result};
pub use par::Execution;
pub mod cluster;
pub mod design;
pub mod covariates;
pub mod estimators;
pub mod optimal;
pub mod bounds;
pub mod io;
pub mod simulation;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
