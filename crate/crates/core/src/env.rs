//! The waypoint-following MDP.
//!
//! A target trajectory `k_1..k_T` is followed from an initial state `s_0`.
//! Targets advance with time, not with progress: after step `t` the vehicle
//! is compared against `k_t`. Internally waypoints are stored 0-based, so
//! `waypoints[i]` is `k_{i+1}`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::vehicle::{self, wrap_angle, Action, VehicleParams, VehicleState};

/// Default success radius in meters.
pub const DEFAULT_EPS: f64 = 1.0;
/// Default look-ahead window.
pub const DEFAULT_WINDOW: usize = 30;
/// Default extra steps allowed past the trajectory length.
pub const TIME_LIMIT_SLACK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// target speed, m/s
    pub v: f64,
    /// target heading, radians
    pub psi: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, v: f64, psi: f64) -> Self {
        Self { x, y, v, psi }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTrajectory {
    waypoints: Vec<Waypoint>,
    rate_hz: f64,
}

impl TargetTrajectory {
    pub fn new(waypoints: Vec<Waypoint>, rate_hz: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidTrajectory(format!("rate_hz must be > 0, got {rate_hz}")));
        }
        for w in &waypoints {
            ensure_finite(&[w.x, w.y, w.v, w.psi], "waypoint")?;
            if w.v < 0.0 {
                return Err(Error::InvalidTrajectory(format!("negative waypoint speed {}", w.v)));
            }
        }
        Ok(Self { waypoints, rate_hz })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn last(&self) -> &Waypoint {
        self.waypoints.last().expect("trajectory is never empty")
    }

    /// Largest spatial gap between consecutive waypoints.
    pub fn max_gap(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].distance_to(w[1].x, w[1].y))
            .fold(0.0, f64::max)
    }

    /// Sanity bound: no gap may exceed what a vehicle at `max_speed` covers in one period.
    pub fn check_spacing(&self, max_speed: f64) -> Result<()> {
        let bound = max_speed / self.rate_hz;
        let gap = self.max_gap();
        if gap > bound + 1e-9 {
            return Err(Error::InvalidTrajectory(format!(
                "waypoint gap {gap:.3} m exceeds {bound:.3} m per period"
            )));
        }
        Ok(())
    }

    /// Write `t,x,y,v,psi` rows with `t` the 1-based step index. An `anchor`
    /// (the pose the trajectory starts from) is written as row `t = 0`.
    pub fn write_csv<W: Write>(&self, anchor: Option<&Waypoint>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "v", "psi"])?;
        let rows = anchor
            .into_iter()
            .map(|a| (0, a))
            .chain(self.waypoints.iter().enumerate().map(|(i, wp)| (i + 1, wp)));
        for (t, wp) in rows {
            w.write_record([
                t.to_string(),
                wp.x.to_string(),
                wp.y.to_string(),
                wp.v.to_string(),
                wp.psi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); a `t = 0` row is returned as the anchor.
    pub fn read_csv<R: Read>(input: R, rate_hz: f64) -> Result<(Option<Waypoint>, Self)> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            x: f64,
            y: f64,
            v: f64,
            psi: f64,
        }
        let mut anchor = None;
        let mut wps = Vec::new();
        for (i, row) in csv::Reader::from_reader(input).deserialize::<Row>().enumerate() {
            let row = row?;
            let wp = Waypoint::new(row.x, row.y, row.v, row.psi);
            if row.t == 0 && i == 0 {
                anchor = Some(wp);
                continue;
            }
            if row.t != wps.len() + 1 {
                return Err(Error::InvalidTrajectory(format!(
                    "rows must be consecutive step indices; found t={} after {} waypoints",
                    row.t,
                    wps.len()
                )));
            }
            wps.push(wp);
        }
        Ok((anchor, Self::new(wps, rate_hz)?))
    }
}

/// The MDP state: `[v_lon, v_lat, gear, dx_1..dx_H, dy_1..dy_H, dpsi_1..dpsi_H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub v_lon: f64,
    pub v_lat: f64,
    pub gear: f64,
    pub rel_x: Vec<f64>,
    pub rel_y: Vec<f64>,
    pub rel_psi: Vec<f64>,
}

impl Observation {
    pub fn window(&self) -> usize {
        self.rel_x.len()
    }

    pub fn flat_len(window: usize) -> usize {
        3 * (window + 1)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::flat_len(self.window()));
        v.extend([self.v_lon, self.v_lat, self.gear]);
        v.extend(&self.rel_x);
        v.extend(&self.rel_y);
        v.extend(&self.rel_psi);
        v
    }
}

/// Build the observation for `state` against the targets following step `t`
/// (`k_{t+1}..k_{t+H}`). Indices past the end repeat the final waypoint.
pub fn observe(state: &VehicleState, traj: &TargetTrajectory, t: usize, window: usize) -> Result<Observation> {
    if t >= traj.len() {
        return Err(Error::IndexOutOfRange { t, len: traj.len() });
    }
    if window == 0 {
        return Err(Error::Config("observation window must be >= 1".into()));
    }
    observe_with(state, window, |j| traj.waypoints[(t + j).min(traj.len() - 1)])
}

/// Observation against an arbitrary window source `j -> waypoint`.
pub(crate) fn observe_with(
    state: &VehicleState,
    window: usize,
    waypoint: impl Fn(usize) -> Waypoint,
) -> Result<Observation> {
    let (sin, cos) = state.yaw.sin_cos();
    let mut rel_x = Vec::with_capacity(window);
    let mut rel_y = Vec::with_capacity(window);
    let mut rel_psi = Vec::with_capacity(window);
    for j in 0..window {
        let wp = waypoint(j);
        let dx = wp.x - state.x;
        let dy = wp.y - state.y;
        // row vector [dx dy] times [[cos, -sin], [sin, cos]]
        rel_x.push(dx * cos + dy * sin);
        rel_y.push(-dx * sin + dy * cos);
        rel_psi.push(wrap_angle(wp.psi - state.yaw));
    }
    let obs = Observation {
        v_lon: state.v_lon,
        v_lat: state.v_lat,
        gear: state.gear as f64,
        rel_x,
        rel_y,
        rel_psi,
    };
    Ok(obs)
}

/// `eps - d`: positive inside the success radius, at most `eps`.
pub fn reward(state: &VehicleState, waypoint: &Waypoint, eps: f64) -> f64 {
    eps - waypoint.distance_to(state.x, state.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Completed,
    DistanceExceeded,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub states: Vec<VehicleState>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub distances: Vec<f64>,
    pub terminated_by: Option<TerminatedBy>,
    /// number of waypoints T of the followed trajectory
    pub target_len: usize,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Rows `t,x,y,yaw,v_lon,gear,steer_cmd,pedal_cmd,reward,d`; row 0 is `s_0`
    /// with empty action and reward columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "x",
            "y",
            "yaw",
            "v_lon",
            "gear",
            "steer_cmd",
            "pedal_cmd",
            "reward",
            "d",
        ])?;
        for (t, s) in self.states.iter().enumerate() {
            let step = t
                .checked_sub(1)
                .map(|i| (self.actions[i], self.rewards[i], self.distances[i]));
            let opt =
                |f: fn(&(Action, f64, f64)) -> f64| step.as_ref().map(f).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                t.to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.yaw.to_string(),
                s.v_lon.to_string(),
                s.gear.to_string(),
                opt(|s| s.0.steer()),
                opt(|s| s.0.pedal()),
                opt(|s| s.1),
                opt(|s| s.2),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Success: every waypoint visited and every distance within `eps`.
pub fn success(trace: &EpisodeTrace, eps: f64) -> bool {
    trace.distances.len() == trace.target_len && trace.distances.iter().all(|&d| d <= eps)
}

/// Fraction of the T waypoints passed within `eps`.
pub fn hit_fraction(trace: &EpisodeTrace, eps: f64) -> f64 {
    if trace.target_len == 0 {
        return 0.0;
    }
    trace.distances.iter().filter(|&&d| d <= eps).count() as f64 / trace.target_len as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub eps: f64,
    pub window: usize,
    /// Maximum number of steps; `None` means `T + TIME_LIMIT_SLACK`.
    pub max_steps: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            window: DEFAULT_WINDOW,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: Option<TerminatedBy>,
}

/// One episode of waypoint following. The simulator period is the trajectory's `1 / rate_hz`.
#[derive(Debug, Clone)]
pub struct WaypointEnv {
    vehicle: VehicleParams,
    traj: TargetTrajectory,
    config: EnvConfig,
    state: VehicleState,
    t: usize,
    trace: EpisodeTrace,
}

impl WaypointEnv {
    pub fn new(vehicle: VehicleParams, traj: TargetTrajectory, s0: VehicleState, config: EnvConfig) -> Result<Self> {
        if !(config.eps.is_finite() && config.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", config.eps)));
        }
        if config.window == 0 {
            return Err(Error::Config("observation window must be >= 1".into()));
        }
        let target_len = traj.len();
        Ok(Self {
            vehicle,
            traj,
            config,
            state: s0,
            t: 0,
            trace: EpisodeTrace {
                states: vec![s0],
                actions: Vec::new(),
                rewards: Vec::new(),
                distances: Vec::new(),
                terminated_by: None,
                target_len,
            },
        })
    }

    pub fn observation(&self) -> Observation {
        observe(
            &self.state,
            &self.traj,
            self.t.min(self.traj.len() - 1),
            self.config.window,
        )
        .expect("index clamped and window validated")
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn trajectory(&self) -> &TargetTrajectory {
        &self.traj
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn vehicle(&self) -> &VehicleParams {
        &self.vehicle
    }

    pub fn is_done(&self) -> bool {
        self.trace.terminated_by.is_some()
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EpisodeTrace {
        self.trace
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps.unwrap_or(self.traj.len() + TIME_LIMIT_SLACK)
    }

    /// Advance one period and compare against the next target.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if let Some(how) = self.trace.terminated_by {
            return Err(Error::EpisodeTerminated(how));
        }
        let next = vehicle::step(&self.state, action, &self.vehicle, self.traj.dt())?;
        let target = self.traj.waypoints[self.t];
        let d = target.distance_to(next.x, next.y);
        let r = self.config.eps - d;
        self.state = next;
        self.t += 1;

        let done = if d > self.config.eps {
            Some(TerminatedBy::DistanceExceeded)
        } else if self.t == self.traj.len() {
            Some(TerminatedBy::Completed)
        } else if self.t >= self.max_steps() {
            Some(TerminatedBy::TimeLimit)
        } else {
            None
        };

        self.trace.states.push(next);
        self.trace.actions.push(action);
        self.trace.rewards.push(r);
        self.trace.distances.push(d);
        self.trace.terminated_by = done;

        Ok(StepOutcome {
            observation: self.observation(),
            reward: r,
            done,
        })
    }
}
