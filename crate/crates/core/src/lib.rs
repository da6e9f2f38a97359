//! Two-state mixed Poisson hidden Markov model for panels of weekly loan
//! counts, with a mixed-effects Poisson baseline.

pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod ingest;
pub mod likelihood;
pub mod model;
pub mod policy;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{BorrowerSeries, ModelParameters, PanelDataset, PriorConfig, State};
