//! Proximal policy optimization for the waypoint follower.
//!
//! Rollouts are collected by `num_envs` independent workers, each with its own
//! derived random stream, and merged in worker order. Updates run on a single
//! thread, so a run is reproducible for a fixed master seed.

mod gae;
mod rollout;
mod train;
mod update;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env::{DEFAULT_EPS, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::nn::DEFAULT_HIDDEN;

pub use gae::{compute_gae, normalize_advantages};
pub use rollout::{RolloutBatch, Segment, SegmentEnd};
pub use train::{evaluate_scenarios, start_state, train, TrainOutput};
pub use update::{loss_and_grads, objective, ppo_update, Losses, Optimizers, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub steps_per_update: usize,
    pub total_steps: usize,
    /// applied to each network's gradient separately
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs: 4,
            minibatch_size: 64,
            learning_rate: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            steps_per_update: 2048,
            total_steps: 200_000,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_ratio > 0.0) {
            return bad("clip_ratio must be > 0");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.steps_per_update == 0 || self.total_steps == 0 {
            return bad("epochs, minibatch_size, steps_per_update and total_steps must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.value_coef > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate, value_coef and max_grad_norm must be > 0");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub eps: f64,
    pub window: usize,
    pub hidden: usize,
    pub init_log_std: f64,
    pub num_envs: usize,
    /// start position perturbation radius, m
    pub jitter_pos: f64,
    /// start heading perturbation, rad
    pub jitter_yaw: f64,
    /// run a noise-free evaluation on every scenario each this many updates (0 disables)
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            eps: DEFAULT_EPS,
            window: DEFAULT_WINDOW,
            hidden: DEFAULT_HIDDEN,
            init_log_std: -0.5,
            num_envs: 8,
            jitter_pos: 0.1,
            jitter_yaw: 0.02,
            eval_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if !(self.eps > 0.0) || self.window == 0 || self.hidden == 0 || self.num_envs == 0 {
            return Err(Error::Config(
                "eps, window, hidden and num_envs must be positive".into(),
            ));
        }
        if !(self.jitter_pos >= 0.0 && self.jitter_yaw >= 0.0) {
            return Err(Error::Config("jitter must be >= 0".into()));
        }
        Ok(())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub env_steps: usize,
    /// episodes finished during this collection
    pub episodes: usize,
    pub mean_episode_reward: f64,
    pub mean_hit_fraction: f64,
    /// noise-free hit fraction averaged over the training scenarios, when evaluated
    pub eval_hit_fraction: Option<f64>,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<UpdateRecord>,
}

impl TrainingLog {
    pub fn push(&mut self, record: UpdateRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.update < record.update));
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&UpdateRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let records = rd
            .deserialize()
            .collect::<std::result::Result<Vec<UpdateRecord>, _>>()?;
        Ok(Self { records })
    }
}
