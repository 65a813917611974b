//! Health-cost prediction from longitudinal claims records.
//!
//! The pipeline encodes each patient's quarterly claims into a sparse
//! count vector, fits a skip-connection feedforward network and a ridge
//! baseline with ADAM, evaluates both against naive history-based
//! predictors, and attributes predictions back to individual codes with
//! integrated gradients.

pub mod attribution;
pub mod baselines;
pub mod claims_data;
pub mod evaluation;
pub mod model;
pub mod network;
pub mod rng;
pub mod trainer;
pub mod vocab_encoder;
