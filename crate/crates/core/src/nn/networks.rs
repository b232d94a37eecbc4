use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::normalizer::Normalizer;
use super::tower::{Tower, TowerCache, TowerGrads};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::vehicle::Action;

pub const ACTION_DIM: usize = 2;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Width of the encoder and trunk layers.
pub const DEFAULT_HIDDEN: usize = 64;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian log density.
pub fn gaussian_log_prob(mean: &[f64; ACTION_DIM], log_std: &[f64; ACTION_DIM], x: &[f64; ACTION_DIM]) -> f64 {
    (0..ACTION_DIM)
        .map(|i| {
            let z = (x[i] - mean[i]) * (-log_std[i]).exp();
            -0.5 * z * z - log_std[i] - HALF_LOG_2PI
        })
        .sum()
}

/// Entropy of a diagonal Gaussian with the given log standard deviations.
pub fn gaussian_entropy(log_std: &[f64; ACTION_DIM]) -> f64 {
    log_std
        .iter()
        .map(|l| l + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
        .sum()
}

fn flat_obs(obs: &Observation, expected_window: usize) -> Result<Vec<f64>> {
    if obs.window() != expected_window {
        return Err(Error::Shape {
            context: "observation window",
            expected: expected_window,
            actual: obs.window(),
        });
    }
    Ok(obs.flatten())
}

/// State-dependent mean, state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub tower: Tower,
    log_std: [f64; ACTION_DIM],
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySample {
    /// clamped control sent to the simulator
    pub action: Action,
    /// pre-clamp Gaussian draw
    pub raw: [f64; ACTION_DIM],
    /// log density of `raw`
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub tower: TowerGrads,
    pub log_std: [f64; ACTION_DIM],
}

impl PolicyGrads {
    pub fn zeros_like(p: &GaussianPolicy) -> Self {
        Self {
            tower: TowerGrads::zeros_like(&p.tower),
            log_std: [0.0; ACTION_DIM],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.tower.write_flat(&mut out);
        out.extend(self.log_std);
        out
    }
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(window: usize, hidden: usize, init_log_std: f64, rng: &mut R) -> Self {
        let tower = Tower::new(window, hidden, ACTION_DIM, 0.01, rng);
        Self::from_parts(tower, [init_log_std; ACTION_DIM], Normalizer::new(3 * (window + 1)))
    }

    pub fn from_parts(tower: Tower, log_std: [f64; ACTION_DIM], normalizer: Normalizer) -> Self {
        Self {
            tower,
            log_std: log_std.map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)),
            normalizer,
        }
    }

    pub fn window(&self) -> usize {
        self.tower.window()
    }

    pub fn log_std(&self) -> [f64; ACTION_DIM] {
        self.log_std
    }

    pub fn set_log_std(&mut self, log_std: [f64; ACTION_DIM]) {
        self.log_std = log_std.map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn normalize(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.normalizer.normalize(&flat_obs(obs, self.window())?))
    }

    pub fn mean_normalized(&self, z: &[f64]) -> Result<[f64; ACTION_DIM]> {
        let m = self.tower.forward(z)?;
        Ok([m[0], m[1]])
    }

    pub fn mean(&self, obs: &Observation) -> Result<[f64; ACTION_DIM]> {
        self.mean_normalized(&self.normalize(obs)?)
    }

    /// Noise-free control: the mean, clamped to the action box.
    pub fn act_deterministic(&self, obs: &Observation) -> Result<Action> {
        let m = self.mean(obs)?;
        Ok(Action::new(m[0], m[1]))
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<PolicySample> {
        let mean = self.mean(obs)?;
        let mut raw = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            let xi: f64 = StandardNormal.sample(rng);
            raw[i] = mean[i] + self.log_std[i].exp() * xi;
        }
        Ok(PolicySample {
            action: Action::new(raw[0], raw[1]),
            raw,
            log_prob: gaussian_log_prob(&mean, &self.log_std, &raw),
        })
    }

    /// Log density of a pre-clamp action.
    pub fn log_prob(&self, obs: &Observation, raw: &[f64; ACTION_DIM]) -> Result<f64> {
        Ok(gaussian_log_prob(&self.mean(obs)?, &self.log_std, raw))
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(&self.log_std)
    }

    /// Forward on a normalized observation, keeping the cache for [`Self::backward_log_prob`].
    pub fn forward_cached(&self, z: &[f64]) -> Result<TowerCache> {
        self.tower.forward_cached(z)
    }

    /// Accumulate `scale * d log_prob(raw) / d params` into `grads`.
    pub fn backward_log_prob(
        &self,
        cache: &TowerCache,
        raw: &[f64; ACTION_DIM],
        scale: f64,
        grads: &mut PolicyGrads,
    ) -> Result<()> {
        let mean = cache.output();
        let mut d_mean = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            let inv_var = (-2.0 * self.log_std[i]).exp();
            let diff = raw[i] - mean[i];
            d_mean[i] = scale * diff * inv_var;
            grads.log_std[i] += scale * (diff * diff * inv_var - 1.0);
        }
        self.tower.backward_into(cache, &d_mean, &mut grads.tower)
    }

    pub fn num_params(&self) -> usize {
        self.tower.num_params() + ACTION_DIM
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.tower.write_params(&mut out);
        out.extend(self.log_std);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                context: "policy parameters",
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut src = flat;
        self.tower.read_params(&mut src)?;
        self.set_log_std([src[0], src[1]]);
        Ok(())
    }
}

/// Scalar critic over the same observation layout as the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub tower: Tower,
    pub normalizer: Normalizer,
}

impl ValueNet {
    /// The head starts at zero, so a fresh network predicts 0 everywhere.
    pub fn new<R: Rng + ?Sized>(window: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            tower: Tower::new(window, hidden, 1, 0.0, rng),
            normalizer: Normalizer::new(3 * (window + 1)),
        }
    }

    pub fn window(&self) -> usize {
        self.tower.window()
    }

    pub fn normalize(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.normalizer.normalize(&flat_obs(obs, self.window())?))
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        self.value_normalized(&self.normalize(obs)?)
    }

    pub fn value_normalized(&self, z: &[f64]) -> Result<f64> {
        Ok(self.tower.forward(z)?[0])
    }

    pub fn num_params(&self) -> usize {
        self.tower.num_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.tower.write_params(&mut out);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                context: "value parameters",
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        self.tower.read_params(&mut &flat[..])
    }
}
