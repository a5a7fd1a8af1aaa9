//! Attentive interaction model for predicting whether a challenger's comment
//! changes an opinion holder's view, with the surrounding data pipeline,
//! baselines and evaluation statistics.

pub mod aim;
pub mod analysis;
pub mod baseline;
pub mod corpus;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod text;
pub mod topics;
pub mod training;

pub use error::{Error, Result};
pub use par::Execution;
pub use tensor::{ParamStore, Tape, Tensor};
