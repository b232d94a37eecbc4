//! Value-based refinement of prior samples.
//!
//! Each candidate is scored with the value network at its initial observation;
//! `V(s_0)` lower-bounds the log-likelihood of staying on the candidate up to a
//! constant `-log Z`. Weights are the softmax of the scores, so that constant
//! never needs a numeric value.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{observe, TargetTrajectory};
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{GaussianPolicy, ValueNet};
use crate::prior::{burn_in_execute, sample_prior, BurnIn, PriorConfig};
use crate::vehicle::{VehicleParams, VehicleState};

/// Bernoulli optimality observations with `log p(O_t = 1) = r_t - log Z_0`.
/// `log_z_per_step` is carried symbolically; nothing downstream depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityModel {
    pub eps: f64,
    pub log_z_per_step: f64,
    pub horizon: usize,
}

impl OptimalityModel {
    pub fn log_z(&self) -> f64 {
        self.horizon as f64 * self.log_z_per_step
    }

    /// Lower bound on `log p(O_{1:T} | s_0)` given `V(s_0)`.
    pub fn log_likelihood_bound(&self, s0_value: f64) -> f64 {
        s0_value - self.log_z()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTrajectory {
    pub trajectory: TargetTrajectory,
    pub s0_value: f64,
    /// normalized over the batch
    pub weight: f64,
}

/// `V(s_0)` against the candidate's first `window` targets.
pub fn score_s0(value: &ValueNet, trajectory: &TargetTrajectory, s0: &VehicleState, window: usize) -> Result<f64> {
    if value.window() != window {
        return Err(Error::HorizonMismatch {
            expected: window,
            found: value.window(),
        });
    }
    value.value(&observe(s0, trajectory, 0, window)?)
}

/// Softmax of the scores with max-subtraction.
pub fn importance_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Config("importance weights need at least one score".into()));
    }
    ensure_finite(scores, "scores")?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log(mean(exp(scores)))`, stabilized.
pub fn log_evidence(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Config("log evidence needs at least one score".into()));
    }
    ensure_finite(scores, "scores")?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = scores.iter().map(|s| (s - max).exp()).sum::<f64>() / scores.len() as f64;
    Ok(max + mean.ln())
}

/// `count` i.i.d. draws from `Discrete(weights)`.
pub fn resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R, count: usize) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::Config(format!("resampling weights: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

/// Everything one refinement produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    /// state after the burn-in, shared by every candidate
    pub s0: VehicleState,
    pub candidates: Vec<WeightedTrajectory>,
    /// index of the resampled candidate
    pub selected: usize,
    pub log_evidence: f64,
}

impl Refinement {
    pub fn selected_trajectory(&self) -> &TargetTrajectory {
        &self.candidates[self.selected].trajectory
    }

    pub fn weights(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.weight).collect()
    }
}

/// Score an existing candidate set from `s0` and weight it.
pub fn weigh(
    value: &ValueNet,
    s0: &VehicleState,
    candidates: Vec<TargetTrajectory>,
) -> Result<Vec<WeightedTrajectory>> {
    let window = value.window();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|t| score_s0(value, t, s0, window))
        .collect::<Result<_>>()?;
    let weights = importance_weights(&scores)?;
    Ok(candidates
        .into_iter()
        .zip(scores)
        .zip(weights)
        .map(|((trajectory, s0_value), weight)| WeightedTrajectory {
            trajectory,
            s0_value,
            weight,
        })
        .collect())
}

/// Draw `num_samples` prior continuations of `burnin`, weight them by
/// `exp(V(s_0))` and resample one.
#[allow(clippy::too_many_arguments)]
pub fn refine<R: Rng + ?Sized>(
    prior: &PriorConfig,
    policy: &GaussianPolicy,
    value: &ValueNet,
    vehicle: &VehicleParams,
    burnin: &BurnIn,
    num_samples: usize,
    eps: f64,
    rng: &mut R,
) -> Result<Refinement> {
    if num_samples == 0 {
        return Err(Error::Config("refinement needs at least one prior sample".into()));
    }
    if policy.window() != value.window() {
        return Err(Error::HorizonMismatch {
            expected: policy.window(),
            found: value.window(),
        });
    }
    let s0 = burn_in_execute(policy, vehicle, burnin, eps)?;
    let samples = (0..num_samples)
        .map(|_| sample_prior(burnin, prior, rng).map(|s| s.trajectory))
        .collect::<Result<Vec<_>>>()?;
    let candidates = weigh(value, &s0, samples)?;
    let scores: Vec<f64> = candidates.iter().map(|c| c.s0_value).collect();
    let weights: Vec<f64> = candidates.iter().map(|c| c.weight).collect();
    let selected = resample(&weights, rng, 1)?[0];
    Ok(Refinement {
        s0,
        candidates,
        selected,
        log_evidence: log_evidence(&scores)?,
    })
}
