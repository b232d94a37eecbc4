use rand::seq::SliceRandom;
use rand::Rng;

use super::gae::normalize_advantages;
use super::rollout::RolloutBatch;
use super::PpoConfig;
use crate::error::{Error, Result};
use crate::nn::{
    clip_grad_norm, gaussian_log_prob, Adam, GaussianPolicy, PolicyGrads, TowerGrads, ValueNet, ACTION_DIM,
};

/// One training example with observations already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z_policy: Vec<f64>,
    pub z_value: Vec<f64>,
    pub raw_action: [f64; ACTION_DIM],
    pub log_prob_old: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Minibatch-averaged diagnostics. `policy_loss` is the negated clipped surrogate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Losses {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

impl Losses {
    fn is_finite(&self) -> bool {
        self.policy_loss.is_finite() && self.value_loss.is_finite() && self.entropy.is_finite()
    }
}

/// The two minimized objectives: `policy_loss - entropy_coef * entropy` for the
/// policy and `value_coef * value_loss` for the value network.
pub fn objective(losses: &Losses, cfg: &PpoConfig) -> (f64, f64) {
    (
        losses.policy_loss - cfg.entropy_coef * losses.entropy,
        cfg.value_coef * losses.value_loss,
    )
}

fn surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    // the clipped branch is flat in the ratio; it is the active one only when strictly smaller
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

/// Losses and their exact gradients over `samples` (flattened in parameter order).
pub fn loss_and_grads(
    policy: &GaussianPolicy,
    value: &ValueNet,
    samples: &[&Sample],
    cfg: &PpoConfig,
) -> Result<(Losses, Vec<f64>, Vec<f64>)> {
    let n = samples.len() as f64;
    let mut pg = PolicyGrads::zeros_like(policy);
    let mut vg = TowerGrads::zeros_like(&value.tower);
    let mut surr_sum = 0.0;
    let mut vloss_sum = 0.0;
    let mut clipped = 0usize;
    let log_std = policy.log_std();
    for s in samples {
        let cache = policy.forward_cached(&s.z_policy)?;
        let out = cache.output();
        let mean = [out[0], out[1]];
        let logp = gaussian_log_prob(&mean, &log_std, &s.raw_action);
        let ratio = (logp - s.log_prob_old).exp();
        let (surr, is_clipped) = surrogate(ratio, s.advantage, cfg.clip_ratio);
        surr_sum += surr;
        if is_clipped {
            clipped += 1;
        } else {
            // d(-ratio*A/n)/dlogp = -ratio*A/n
            policy.backward_log_prob(&cache, &s.raw_action, -ratio * s.advantage / n, &mut pg)?;
        }

        let vcache = value.tower.forward_cached(&s.z_value)?;
        let err = vcache.output()[0] - s.ret;
        vloss_sum += err * err;
        value
            .tower
            .backward_into(&vcache, &[cfg.value_coef * 2.0 * err / n], &mut vg)?;
    }
    for g in pg.log_std.iter_mut() {
        *g -= cfg.entropy_coef;
    }
    let losses = Losses {
        policy_loss: -surr_sum / n,
        value_loss: vloss_sum / n,
        entropy: policy.entropy(),
        clip_fraction: clipped as f64 / n,
    };
    let mut vflat = Vec::with_capacity(value.num_params());
    vg.write_flat(&mut vflat);
    Ok((losses, pg.to_flat(), vflat))
}

/// One Adam state per network.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub policy: Adam,
    pub value: Adam,
}

impl Optimizers {
    pub fn new(policy: &GaussianPolicy, value: &ValueNet, lr: f64) -> Self {
        Self {
            policy: Adam::new(policy.num_params(), lr),
            value: Adam::new(value.num_params(), lr),
        }
    }
}

/// `epochs` passes of shuffled minibatch steps over `batch`, which must have
/// advantages computed. Advantages are normalized over the whole batch first.
/// Returns the losses averaged over all minibatch steps.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    value: &mut ValueNet,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    opt: &mut Optimizers,
    update_index: usize,
    rng: &mut R,
) -> Result<Losses> {
    batch.validate()?;
    if batch.is_empty() || batch.advantages.len() != batch.len() {
        return Err(Error::Config(
            "ppo_update needs a nonempty batch with advantages".into(),
        ));
    }
    let mut adv = batch.advantages.clone();
    normalize_advantages(&mut adv);
    let samples: Vec<Sample> = (0..batch.len())
        .map(|i| Sample {
            z_policy: policy.normalizer.normalize(&batch.observations[i]),
            z_value: value.normalizer.normalize(&batch.observations[i]),
            raw_action: batch.raw_actions[i],
            log_prob_old: batch.log_probs_old[i],
            advantage: adv[i],
            ret: batch.returns[i],
        })
        .collect();

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut total = Losses::default();
    let mut steps = 0usize;
    let mut pparams = policy.params_flat();
    let mut vparams = value.params_flat();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (losses, mut gp, mut gv) = loss_and_grads(policy, value, &mb, cfg)?;
            if !losses.is_finite() || gp.iter().chain(&gv).any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { update: update_index });
            }
            clip_grad_norm(&mut gp, cfg.max_grad_norm);
            clip_grad_norm(&mut gv, cfg.max_grad_norm);
            // minimization: Adam steps against the gradient
            opt.policy.step(&mut pparams, &gp);
            opt.value.step(&mut vparams, &gv);
            policy.set_params_flat(&pparams)?;
            value.set_params_flat(&vparams)?;
            // the policy clamps log_std; keep the flat copy in sync
            pparams = policy.params_flat();
            total.policy_loss += losses.policy_loss;
            total.value_loss += losses.value_loss;
            total.entropy += losses.entropy;
            total.clip_fraction += losses.clip_fraction;
            steps += 1;
        }
    }
    let k = steps as f64;
    Ok(Losses {
        policy_loss: total.policy_loss / k,
        value_loss: total.value_loss / k,
        entropy: total.entropy / k,
        clip_fraction: total.clip_fraction / k,
    })
}
