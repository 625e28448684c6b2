//! Dense networks trained by hand-written backprop, the losses the trainer
//! needs, Adam, and a small logistic regression used by scenario oracles.

mod adam;
mod logistic;
mod loss;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use logistic::{fit_logistic, LogisticConfig, LogisticModel};
pub use loss::{bce_probabilities, bce_with_logits, mse_loss, sigmoid};
pub use mlp::{Activation, Cache, Dense, Gradients, Mlp};
