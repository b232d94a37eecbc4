use super::rollout::{collect_parallel, CollectContext, Worker};
use super::update::{ppo_update, Optimizers};
use super::{TrainConfig, TrainingLog, UpdateRecord};
use crate::env::{hit_fraction, EnvConfig};
use crate::error::{Error, Result};
use crate::eval::execute_follower;
use crate::nn::{GaussianPolicy, ValueNet};
use crate::prior::Scenario;
use crate::rng::stream;
use crate::vehicle::{VehicleParams, VehicleState};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1_000_000;
const WORKER_STREAM_BASE: u64 = 1;

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: GaussianPolicy,
    pub value: ValueNet,
    pub log: TrainingLog,
}

/// The unperturbed initial state for a scenario: its anchor pose and speed.
pub fn start_state(vehicle: &VehicleParams, scenario: &Scenario) -> VehicleState {
    let a = scenario.anchor;
    VehicleState::at_pose(vehicle, a.x, a.y, a.psi, a.v)
}

/// Noise-free hit fraction of `policy` on each scenario from its anchor.
pub fn evaluate_scenarios(
    policy: &GaussianPolicy,
    vehicle: &VehicleParams,
    scenarios: &[Scenario],
    eps: f64,
) -> Result<Vec<f64>> {
    scenarios
        .iter()
        .map(|sc| {
            let trace = execute_follower(policy, vehicle, &sc.trajectory, start_state(vehicle, sc), eps)?;
            Ok(hit_fraction(&trace, eps))
        })
        .collect()
}

/// Train a follower and its value function on `scenarios`.
///
/// Per update: collect `steps_per_update` transitions across the workers with
/// the observation statistics frozen, fold the batch into the statistics,
/// re-evaluate old log-probabilities and values, then run the PPO epochs.
pub fn train(vehicle: &VehicleParams, scenarios: &[Scenario], config: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    config.validate()?;
    vehicle.validate()?;
    if scenarios.is_empty() {
        return Err(Error::Config("training needs at least one scenario".into()));
    }
    let cfg = &config.ppo;
    let mut init_rng = stream(seed, INIT_STREAM);
    let mut policy = GaussianPolicy::new(config.window, config.hidden, config.init_log_std, &mut init_rng);
    let mut value = ValueNet::new(config.window, config.hidden, &mut init_rng);
    let mut opt = Optimizers::new(&policy, &value, cfg.learning_rate);
    let mut shuffle_rng = stream(seed, SHUFFLE_STREAM);
    let mut workers: Vec<Worker> = (0..config.num_envs as u64)
        .map(|i| Worker::new(stream(seed, WORKER_STREAM_BASE + i)))
        .collect();
    let ctx = CollectContext {
        vehicle,
        scenarios,
        env_config: EnvConfig {
            eps: config.eps,
            window: config.window,
            max_steps: None,
        },
        jitter_pos: config.jitter_pos,
        jitter_yaw: config.jitter_yaw,
    };
    let per_worker = cfg.steps_per_update.div_ceil(config.num_envs);
    // never exceed the step budget, but always run at least one update
    let num_updates = (cfg.total_steps / (per_worker * config.num_envs)).max(1);

    let mut log = TrainingLog::default();
    let mut env_steps = 0;
    let mut last_reward = 0.0;
    let mut last_hit = 0.0;
    for u in 0..num_updates {
        let (mut batch, finished) = collect_parallel(&mut workers, per_worker, &policy, &ctx)?;
        env_steps += batch.len();

        policy.normalizer.update(batch.observations.iter().map(Vec::as_slice));
        value.normalizer = policy.normalizer.clone();
        batch.refresh(&policy, &value)?;
        batch.compute_advantages(&value, cfg.gamma, cfg.gae_lambda)?;

        if !finished.is_empty() {
            let n = finished.len() as f64;
            last_reward = finished.iter().map(|e| e.total_reward).sum::<f64>() / n;
            last_hit = finished.iter().map(|e| e.hit_fraction).sum::<f64>() / n;
        }
        if last_reward.is_nan() {
            return Err(Error::Diverged {
                update: u,
                partial_log: Box::new(log),
            });
        }

        let losses = match ppo_update(&mut policy, &mut value, &batch, cfg, &mut opt, u, &mut shuffle_rng) {
            Ok(l) => l,
            Err(Error::NonFiniteLoss { .. }) => {
                return Err(Error::Diverged {
                    update: u,
                    partial_log: Box::new(log),
                });
            }
            Err(e) => return Err(e),
        };

        let last = u + 1 == num_updates;
        let eval_hit_fraction = if (config.eval_every > 0 && (u + 1) % config.eval_every == 0) || last {
            let hits = evaluate_scenarios(&policy, vehicle, scenarios, config.eps)?;
            Some(hits.iter().sum::<f64>() / hits.len() as f64)
        } else {
            None
        };
        log.push(UpdateRecord {
            update: u,
            env_steps,
            episodes: finished.len(),
            mean_episode_reward: last_reward,
            mean_hit_fraction: last_hit,
            eval_hit_fraction,
            value_loss: losses.value_loss,
            policy_loss: losses.policy_loss,
            entropy: losses.entropy,
            clip_fraction: losses.clip_fraction,
        });
    }
    Ok(TrainOutput { policy, value, log })
}
