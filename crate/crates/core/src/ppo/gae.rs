/// Generalized advantage estimation over one episode segment.
///
/// `values[t]` is `V(s_t)` for each step, `bootstrap` the value of the state
/// after the last step: 0 when the episode terminated, `V(s_T)` when it was
/// cut by a time limit or the end of a rollout buffer. Returns
/// `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "rewards and values must align");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shift and scale to zero mean and unit (population) variance.
/// A constant vector is only centered.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if var > 1e-24 { 1.0 / std } else { 1.0 };
    for a in adv.iter_mut() {
        *a = (*a - mean) * scale;
    }
    // second pass removes the rounding residue of the first
    let resid = adv.iter().sum::<f64>() / n;
    for a in adv.iter_mut() {
        *a -= resid;
    }
}
