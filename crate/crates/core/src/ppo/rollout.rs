use rand::Rng;
use rayon::prelude::*;

use super::gae::compute_gae;
use crate::env::{hit_fraction, EnvConfig, TerminatedBy, WaypointEnv};
use crate::error::{Error, Result};
use crate::nn::{GaussianPolicy, ValueNet, ACTION_DIM};
use crate::prior::Scenario;
use crate::rng::SimRng;
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentEnd {
    /// the episode ended (completed or left the radius): bootstrap 0
    Terminal,
    /// cut by the time limit or the end of the buffer: bootstrap `V(next)`
    Truncated { next_observation: Vec<f64> },
}

/// Half-open index range `[start, end)` of one episode inside a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub end_kind: SegmentEnd,
}

/// Time-aligned transitions from one collection phase. Observations are the
/// raw flat vectors; `refresh` evaluates them under the current normalizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub observations: Vec<Vec<f64>>,
    pub raw_actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values_old: Vec<f64>,
    pub segments: Vec<Segment>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Lengths agree and the segments tile `0..len` in order.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.observations.len(),
            self.raw_actions.len(),
            self.log_probs_old.len(),
            self.values_old.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Config(format!(
                "rollout batch fields disagree in length: {lens:?} vs {n}"
            )));
        }
        let mut cursor = 0;
        for s in &self.segments {
            if s.start != cursor || s.end <= s.start {
                return Err(Error::Config("rollout segments do not tile the batch".into()));
            }
            cursor = s.end;
        }
        if cursor != n {
            return Err(Error::Config("rollout segments do not cover the batch".into()));
        }
        Ok(())
    }

    fn append(&mut self, mut other: RolloutBatch) {
        let offset = self.len();
        for s in &mut other.segments {
            s.start += offset;
            s.end += offset;
        }
        self.observations.append(&mut other.observations);
        self.raw_actions.append(&mut other.raw_actions);
        self.log_probs_old.append(&mut other.log_probs_old);
        self.rewards.append(&mut other.rewards);
        self.values_old.append(&mut other.values_old);
        self.segments.append(&mut other.segments);
    }

    /// Recompute old log-probabilities and values with the networks as they
    /// stand, e.g. after the observation statistics moved.
    pub fn refresh(&mut self, policy: &GaussianPolicy, value: &ValueNet) -> Result<()> {
        let log_std = policy.log_std();
        let pairs: Vec<(f64, f64)> = self
            .observations
            .par_iter()
            .zip(self.raw_actions.par_iter())
            .map(|(obs, raw)| {
                let zp = policy.normalizer.normalize(obs);
                let mean = policy.mean_normalized(&zp)?;
                let zv = value.normalizer.normalize(obs);
                Ok((
                    crate::nn::gaussian_log_prob(&mean, &log_std, raw),
                    value.value_normalized(&zv)?,
                ))
            })
            .collect::<Result<_>>()?;
        (self.log_probs_old, self.values_old) = pairs.into_iter().unzip();
        Ok(())
    }

    /// GAE per segment, bootstrapping truncated segments with the current value net.
    pub fn compute_advantages(&mut self, value: &ValueNet, gamma: f64, lambda: f64) -> Result<()> {
        self.validate()?;
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for s in &self.segments {
            let bootstrap = match &s.end_kind {
                SegmentEnd::Terminal => 0.0,
                SegmentEnd::Truncated { next_observation } => {
                    value.value_normalized(&value.normalizer.normalize(next_observation))?
                }
            };
            let (adv, ret) = compute_gae(
                &self.rewards[s.start..s.end],
                &self.values_old[s.start..s.end],
                bootstrap,
                gamma,
                lambda,
            );
            self.advantages[s.start..s.end].copy_from_slice(&adv);
            self.returns[s.start..s.end].copy_from_slice(&ret);
        }
        Ok(())
    }
}

/// Summary of one finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EpisodeStats {
    pub total_reward: f64,
    pub hit_fraction: f64,
}

/// Shared read-only context for collection.
pub(crate) struct CollectContext<'a> {
    pub vehicle: &'a VehicleParams,
    pub scenarios: &'a [Scenario],
    pub env_config: EnvConfig,
    pub jitter_pos: f64,
    pub jitter_yaw: f64,
}

/// One environment instance with its own random stream. Episodes carry over
/// between collection phases.
pub(crate) struct Worker {
    rng: SimRng,
    env: Option<WaypointEnv>,
}

impl Worker {
    pub fn new(rng: SimRng) -> Self {
        Self { rng, env: None }
    }

    fn reset(&mut self, ctx: &CollectContext<'_>) -> Result<WaypointEnv> {
        let idx = self.rng.random_range(0..ctx.scenarios.len());
        let sc = &ctx.scenarios[idx];
        let mut s0 = super::train::start_state(ctx.vehicle, sc);
        let r = ctx.jitter_pos * self.rng.random::<f64>().sqrt();
        let a = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        s0.x += r * a.cos();
        s0.y += r * a.sin();
        if ctx.jitter_yaw > 0.0 {
            s0.yaw += self.rng.random_range(-ctx.jitter_yaw..=ctx.jitter_yaw);
        }
        WaypointEnv::new(ctx.vehicle.clone(), sc.trajectory.clone(), s0, ctx.env_config)
    }

    pub fn collect(
        &mut self,
        steps: usize,
        policy: &GaussianPolicy,
        ctx: &CollectContext<'_>,
    ) -> Result<(RolloutBatch, Vec<EpisodeStats>)> {
        let mut batch = RolloutBatch::default();
        let mut finished = Vec::new();
        let mut seg_start = 0;
        for i in 0..steps {
            let env = match self.env.take() {
                Some(e) => e,
                None => self.reset(ctx)?,
            };
            let mut env = env;
            let obs = env.observation();
            let sample = policy.sample(&obs, &mut self.rng)?;
            let out = env.step(sample.action)?;
            batch.observations.push(obs.flatten());
            batch.raw_actions.push(sample.raw);
            batch.log_probs_old.push(sample.log_prob);
            batch.rewards.push(out.reward);
            batch.values_old.push(0.0);
            match out.done {
                Some(how) => {
                    let end_kind = match how {
                        TerminatedBy::TimeLimit => SegmentEnd::Truncated {
                            next_observation: out.observation.flatten(),
                        },
                        TerminatedBy::Completed | TerminatedBy::DistanceExceeded => SegmentEnd::Terminal,
                    };
                    batch.segments.push(Segment {
                        start: seg_start,
                        end: i + 1,
                        end_kind,
                    });
                    seg_start = i + 1;
                    let trace = env.into_trace();
                    finished.push(EpisodeStats {
                        total_reward: trace.total_reward(),
                        hit_fraction: hit_fraction(&trace, ctx.env_config.eps),
                    });
                }
                None => {
                    if i + 1 == steps {
                        batch.segments.push(Segment {
                            start: seg_start,
                            end: steps,
                            end_kind: SegmentEnd::Truncated {
                                next_observation: out.observation.flatten(),
                            },
                        });
                    }
                    self.env = Some(env);
                }
            }
        }
        Ok((batch, finished))
    }
}

/// Collect `steps_per_worker` transitions from every worker in parallel and
/// merge them in worker order.
pub(crate) fn collect_parallel(
    workers: &mut [Worker],
    steps_per_worker: usize,
    policy: &GaussianPolicy,
    ctx: &CollectContext<'_>,
) -> Result<(RolloutBatch, Vec<EpisodeStats>)> {
    let parts: Vec<(RolloutBatch, Vec<EpisodeStats>)> = workers
        .par_iter_mut()
        .map(|w| w.collect(steps_per_worker, policy, ctx))
        .collect::<Result<_>>()?;
    let mut batch = RolloutBatch::default();
    let mut stats = Vec::new();
    for (b, s) in parts {
        batch.append(b);
        stats.extend(s);
    }
    Ok((batch, stats))
}
