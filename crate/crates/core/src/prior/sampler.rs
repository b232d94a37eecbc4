use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::burnin::BurnIn;
use crate::env::{TargetTrajectory, Waypoint};
use crate::error::{Error, Result};
use crate::vehicle::wrap_angle;

const SUBSTEPS: usize = 10;

/// Parameters of the mode-mixture curvature/speed process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// intents, with target curvatures evenly spaced over `[-max_mode_curvature, max_mode_curvature]`
    pub num_modes: usize,
    /// 1/m
    pub max_mode_curvature: f64,
    /// std of the per-sample offset added to the mode curvature, 1/m
    pub curvature_noise: f64,
    /// rate at which curvature relaxes toward its target, 1/s
    pub curvature_response: f64,
    /// heading change after which the path straightens, rad
    pub max_heading_change: f64,
    /// std of the piecewise-constant longitudinal acceleration, m/s^2
    pub speed_noise: f64,
    /// how long each acceleration draw is held, s
    pub speed_hold: f64,
    /// acceleration draws are clipped to this magnitude, m/s^2
    pub max_accel: f64,
    /// m/s
    pub max_speed: f64,
    /// waypoints per sample
    pub horizon: usize,
    pub rate_hz: f64,
    /// maximum distance from the mode's nominal path, m
    pub corridor_half_width: f64,
    pub max_redraws: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            num_modes: 5,
            max_mode_curvature: 0.12,
            curvature_noise: 0.015,
            curvature_response: 1.0,
            max_heading_change: FRAC_PI_2,
            speed_noise: 0.3,
            speed_hold: 3.0,
            max_accel: 3.0,
            max_speed: 15.0,
            horizon: 90,
            rate_hz: 10.0,
            corridor_half_width: 4.0,
            max_redraws: 100,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_modes >= 1
            && self.horizon >= 2
            && self.rate_hz > 0.0
            && self.max_mode_curvature >= 0.0
            && self.curvature_noise >= 0.0
            && self.curvature_response > 0.0
            && self.max_heading_change > 0.0
            && self.speed_noise >= 0.0
            && self.speed_hold > 0.0
            && self.max_accel >= 0.0
            && self.max_speed > 0.0
            && self.corridor_half_width > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid prior config: {self:?}")));
        }
        Ok(())
    }

    /// Target curvature of mode `m`.
    pub fn mode_curvature(&self, m: usize) -> f64 {
        if self.num_modes == 1 {
            return 0.0;
        }
        let f = m as f64 / (self.num_modes - 1) as f64;
        -self.max_mode_curvature + 2.0 * self.max_mode_curvature * f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSample {
    pub trajectory: TargetTrajectory,
    pub mode: usize,
    /// rejected draws before this one
    pub redraws: usize,
}

/// Kinematic summary of the burn-in that seeds the process.
#[derive(Debug, Clone, Copy)]
struct Seed {
    start: Waypoint,
    kappa: f64,
}

/// Integrate the process for `steps` waypoints with a fixed curvature target
/// and a per-block acceleration sequence.
fn roll(seed: Seed, cfg: &PriorConfig, kappa_target: f64, accels: &[f64], steps: usize) -> Vec<Waypoint> {
    let dt = 1.0 / cfg.rate_hz;
    let h = dt / SUBSTEPS as f64;
    let relax = 1.0 - (-cfg.curvature_response * h).exp();
    let w = seed.start;
    let (mut x, mut y, mut psi, mut v, mut kappa) = (w.x, w.y, w.psi, w.v.min(cfg.max_speed), seed.kappa);
    let mut turned = 0.0f64;
    let mut straightened = false;
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        for j in 0..SUBSTEPS {
            let t = i as f64 * dt + j as f64 * h;
            let block = ((t / cfg.speed_hold) as usize).min(accels.len().saturating_sub(1));
            let a = accels.get(block).copied().unwrap_or(0.0);
            if turned.abs() >= cfg.max_heading_change {
                straightened = true;
            }
            let target = if straightened { 0.0 } else { kappa_target };
            kappa += (target - kappa) * relax;
            let v_next = (v + a * h).clamp(0.0, cfg.max_speed);
            let v_mid = 0.5 * (v + v_next);
            let dpsi = kappa * v_mid * h;
            let psi_mid = psi + 0.5 * dpsi;
            x += v_mid * h * psi_mid.cos();
            y += v_mid * h * psi_mid.sin();
            psi += dpsi;
            turned += dpsi;
            v = v_next;
        }
        out.push(Waypoint::new(x, y, v, wrap_angle(psi)));
    }
    out
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - s * dx).hypot(p.1 - a.1 - s * dy)
}

/// Largest distance from any sample point to the nominal polyline.
fn corridor_deviation(sample: &[Waypoint], nominal: &[(f64, f64)]) -> f64 {
    sample
        .iter()
        .map(|w| {
            let p = (w.x, w.y);
            nominal
                .windows(2)
                .map(|s| point_segment_distance(p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Draw one continuation of `burnin`.
///
/// A mode is drawn uniformly; its target curvature is perturbed once per
/// sample, and the curvature relaxes from the burn-in's final curvature toward
/// it until the heading has turned `max_heading_change`, after which it
/// relaxes to zero. Speed follows piecewise-constant random accelerations.
/// Samples straying more than `corridor_half_width` from the mode's noiseless
/// path are redrawn.
pub fn sample_prior<R: Rng + ?Sized>(burnin: &BurnIn, cfg: &PriorConfig, rng: &mut R) -> Result<PriorSample> {
    cfg.validate()?;
    let last = burnin.last().waypoint;
    let seed = Seed {
        start: last,
        kappa: burnin.end_curvature(),
    };
    let curv_noise = Normal::new(0.0, cfg.curvature_noise).map_err(|e| Error::Config(e.to_string()))?;
    let speed_noise = Normal::new(0.0, cfg.speed_noise).map_err(|e| Error::Config(e.to_string()))?;
    let blocks = ((cfg.horizon as f64 / cfg.rate_hz) / cfg.speed_hold).ceil() as usize + 1;
    let mut nominal_cache: Vec<Option<Vec<(f64, f64)>>> = vec![None; cfg.num_modes];
    for redraws in 0..=cfg.max_redraws {
        let mode = rng.random_range(0..cfg.num_modes);
        let offset = curv_noise.sample(rng);
        let accels: Vec<f64> = (0..blocks)
            .map(|_| speed_noise.sample(rng).clamp(-cfg.max_accel, cfg.max_accel))
            .collect();
        let base = cfg.mode_curvature(mode);
        let waypoints = roll(seed, cfg, base + offset, &accels, cfg.horizon);
        let nominal = nominal_cache[mode].get_or_insert_with(|| {
            // twice the horizon, so slower samples cannot run off its end
            let mut pts = vec![(last.x, last.y)];
            pts.extend(roll(seed, cfg, base, &[], 2 * cfg.horizon).iter().map(|w| (w.x, w.y)));
            pts
        });
        if corridor_deviation(&waypoints, nominal) <= cfg.corridor_half_width {
            return Ok(PriorSample {
                trajectory: TargetTrajectory::new(waypoints, cfg.rate_hz)?,
                mode,
                redraws,
            });
        }
    }
    Err(Error::CorridorRejection {
        budget: cfg.max_redraws,
        half_width: cfg.corridor_half_width,
    })
}
