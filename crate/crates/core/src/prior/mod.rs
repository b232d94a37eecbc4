//! Target trajectory sources: scripted expert scenarios for training, burn-in
//! records that fix an initial condition, and the vehicle-agnostic stochastic
//! prior that proposes continuations of a burn-in.

mod burnin;
mod sampler;
mod scenario;

pub use burnin::{builtin_burnins, burn_in_execute, BurnIn, BurnInRecord, DEFAULT_BURNIN_STEPS};
pub use sampler::{sample_prior, PriorConfig, PriorSample};
pub use scenario::{
    default_scenarios, default_specs, generate_scenario, load_scenarios, ramp_rate, required_duration, Scenario,
    ScenarioKind, ScenarioSpec, FEASIBILITY_MARGIN,
};
