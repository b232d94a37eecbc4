//! Feed-forward networks with exact analytic gradients.
//!
//! Only one topology is differentiated: a window encoder, a tanh trunk and a
//! linear head ([`Tower`]). The policy puts a state-independent diagonal
//! Gaussian on top; the value network reads the head's single output.

pub mod adam;
pub mod checkpoint;
mod mlp;
mod networks;
mod normalizer;
mod tower;

pub use adam::{clip_grad_norm, Adam};
pub use mlp::{Activation, Layer, Mlp, MlpCache, MlpGrads};
pub use networks::{
    gaussian_entropy, gaussian_log_prob, GaussianPolicy, PolicyGrads, PolicySample, ValueNet, ACTION_DIM,
    DEFAULT_HIDDEN, LOG_STD_MAX, LOG_STD_MIN,
};
pub use normalizer::Normalizer;
pub use tower::{Tower, TowerCache, TowerGrads, SCALAR_FEATURES};
