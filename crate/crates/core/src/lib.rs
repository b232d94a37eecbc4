//! Vehicle-specific waypoint generation.
//!
//! A waypoint-following controller is trained with PPO for each vehicle type
//! inside a small kinematic simulator. Its value function then scores
//! trajectory proposals drawn from a vehicle-agnostic behavioral prior, and
//! importance resampling keeps the proposals that vehicle can actually follow.
//!
//! Module map:
//! - [`vehicle`]: kinematic bicycle simulator and the built-in fleet
//! - [`env`]: the waypoint-following MDP (observation, reward, termination)
//! - [`nn`]: MLPs with analytic gradients, Gaussian policy, value network, checkpoints
//! - [`ppo`]: GAE, clipped-surrogate updates, the training loop
//! - [`prior`]: scripted expert scenarios, burn-in, the stochastic trajectory prior
//! - [`refine`]: value-based importance weighting and resampling
//! - [`eval`]: prior-vs-posterior comparison harness and reports

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod ppo;
pub mod prior;
pub mod refine;
pub mod rng;
pub mod stats;
pub mod vehicle;

pub use error::{Error, Result};
