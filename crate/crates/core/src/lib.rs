//! Semi-supervised anomaly detection under distribution mismatch between
//! labeled and unlabeled data. An ensemble of Gaussian one-class models
//! pseudo-labels the unlabeled pool each epoch; an encoder/predictor network
//! is trained on labels, pseudo-labels and a reconstruction loss.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod linalg;
pub mod neuralnet;
pub mod occ;
pub mod par;
pub mod pseudo_labeler;
pub mod synthetic;
pub mod thresholding;
pub mod trainer;

pub use error::{Result, SpadeError};
