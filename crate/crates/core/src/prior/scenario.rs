//! Scripted expert scenarios.
//!
//! Each scenario is built in the time domain from a piecewise-linear speed
//! profile `v(t)` and a piecewise-linear curvature profile `kappa(t)`, then
//! integrated on a fine substep grid. Turns slow down to a hold speed, ramp the
//! curvature in and out at a rate the steering can follow, and hold a
//! constant-curvature arc in between.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::FRAC_PI_4;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{TargetTrajectory, Waypoint};
use crate::error::{Error, Result};
use crate::vehicle::{wrap_angle, VehicleParams};

/// Fraction of any vehicle limit an expert scenario may use.
pub const FEASIBILITY_MARGIN: f64 = 0.9;
/// Curvature ramps use this fraction of the steering-rate-limited ramp rate.
const RAMP_FRACTION: f64 = 0.6;
/// Turns slow to this fraction of the entry speed.
const TURN_SPEED_FRACTION: f64 = 0.7;
/// Cruise time before the first maneuver, s.
const LEAD_IN: f64 = 1.5;
/// Straight margin around the curvature ramps inside the slow hold, s.
const HOLD_MARGIN: f64 = 0.5;
/// Fraction of the duration spent cruising before a full stop begins braking.
const STOP_CRUISE_FRACTION: f64 = 0.4;
const SUBSTEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LeftTurn,
    RightTurn,
    FullStop,
    SShape,
    Straight,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::LeftTurn,
        ScenarioKind::RightTurn,
        ScenarioKind::FullStop,
        ScenarioKind::SShape,
        ScenarioKind::Straight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::LeftTurn => "left_turn",
            ScenarioKind::RightTurn => "right_turn",
            ScenarioKind::FullStop => "full_stop",
            ScenarioKind::SShape => "s_shape",
            ScenarioKind::Straight => "straight",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// m/s
    pub entry_speed: f64,
    /// arc curvature magnitude, 1/m (turn kinds)
    pub curvature: f64,
    /// magnitude of longitudinal speed changes, m/s^2 (braking for `full_stop`)
    pub accel: f64,
    /// number of waypoints
    pub duration: usize,
    pub rate_hz: f64,
}

/// A target trajectory plus the pose it starts from (`t = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub anchor: Waypoint,
    pub trajectory: TargetTrajectory,
}

impl Scenario {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.trajectory.write_csv(Some(&self.anchor), f)
    }

    pub fn read_csv(path: &Path, rate_hz: f64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let (anchor, trajectory) = TargetTrajectory::read_csv(f, rate_hz)?;
        let anchor = anchor
            .ok_or_else(|| Error::InvalidTrajectory(format!("{}: scenario needs a t=0 start row", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            name,
            anchor,
            trajectory,
        })
    }
}

/// Read every `*.csv` in `dir`, sorted by file name.
pub fn load_scenarios(dir: &Path, rate_hz: f64) -> Result<Vec<Scenario>> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir.to_path_buf()));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no scenario CSVs in {}", dir.display())));
    }
    paths.iter().map(|p| Scenario::read_csv(p, rate_hz)).collect()
}

/// Piecewise-linear function of time given by knots `(t, value)`, constant
/// outside the knot range.
#[derive(Debug, Clone, Default)]
struct Profile {
    knots: Vec<(f64, f64)>,
}

impl Profile {
    fn start(v: f64) -> Self {
        Self { knots: vec![(0.0, v)] }
    }

    fn end_time(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.0)
    }

    fn end_value(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.1)
    }

    /// Move linearly to `value` over `dt`.
    fn ramp(&mut self, value: f64, dt: f64) {
        let t = self.end_time() + dt;
        self.knots.push((t, value));
    }

    fn hold(&mut self, dt: f64) {
        let v = self.end_value();
        self.ramp(v, dt);
    }

    fn at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                if t1 <= t0 {
                    return v1;
                }
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        self.end_value()
    }

    /// Largest |slope| over all segments.
    fn max_rate(&self) -> f64 {
        self.knots
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }

    fn max_decel(&self) -> f64 {
        self.knots
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| (w[0].1 - w[1].1) / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }

    fn max_accel(&self) -> f64 {
        self.knots
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }

    fn max_abs(&self) -> f64 {
        self.knots.iter().map(|k| k.1.abs()).fold(0.0, f64::max)
    }
}

fn infeasible(vehicle: &VehicleParams, limit: &'static str, value: f64, bound: f64) -> Error {
    Error::InfeasibleScenario {
        vehicle: vehicle.name.clone(),
        limit,
        value,
        bound,
    }
}

/// Curvature ramp rate used by the generators, 1/(m s).
pub fn ramp_rate(vehicle: &VehicleParams) -> f64 {
    RAMP_FRACTION * vehicle.steer_rate_limit / vehicle.wheelbase
}

/// Duration of the curvature program that turns `heading` radians on an arc
/// of curvature `kappa` at constant speed `v`, ramping at `rate`.
fn turn_time(heading: f64, kappa: f64, v: f64, rate: f64) -> Result<(f64, f64)> {
    let t_ramp = kappa / rate;
    // both ramps together turn kappa * v * t_ramp
    let ramp_heading = kappa * v * t_ramp;
    if ramp_heading > heading {
        return Err(Error::Config(format!(
            "curvature {kappa} cannot be reached within a {heading:.3} rad turn at {v} m/s"
        )));
    }
    let t_arc = (heading - ramp_heading) / (kappa * v);
    Ok((t_ramp, t_arc))
}

fn build_profiles(spec: &ScenarioSpec, vehicle: &VehicleParams) -> Result<(Profile, Profile)> {
    let total = spec.duration as f64 / spec.rate_hz;
    let mut speed = Profile::start(spec.entry_speed);
    let mut curv = Profile::start(0.0);
    let kappa = spec.curvature;
    let rate = ramp_rate(vehicle);
    match spec.kind {
        ScenarioKind::Straight => {}
        ScenarioKind::FullStop => {
            let t_cruise = STOP_CRUISE_FRACTION * total;
            speed.hold(t_cruise);
            speed.ramp(0.0, spec.entry_speed / spec.accel);
        }
        ScenarioKind::LeftTurn | ScenarioKind::RightTurn | ScenarioKind::SShape => {
            let v_turn = TURN_SPEED_FRACTION * spec.entry_speed;
            let t_slow = (spec.entry_speed - v_turn) / spec.accel;
            let sign = if spec.kind == ScenarioKind::RightTurn {
                -1.0
            } else {
                1.0
            };
            speed.hold(LEAD_IN);
            speed.ramp(v_turn, t_slow);
            curv.hold(LEAD_IN + t_slow + HOLD_MARGIN);
            if spec.kind == ScenarioKind::SShape {
                let (t_ramp, t_arc) = turn_time(FRAC_PI_4, kappa, v_turn, rate)?;
                curv.ramp(kappa, t_ramp);
                curv.hold(t_arc);
                // the reversal ramp spans 2 kappa and turns no net heading on its own
                curv.ramp(-kappa, 2.0 * t_ramp);
                curv.hold(t_arc);
                curv.ramp(0.0, t_ramp);
            } else {
                let (t_ramp, t_arc) = turn_time(FRAC_PI_2, kappa, v_turn, rate)?;
                curv.ramp(sign * kappa, t_ramp);
                curv.hold(t_arc);
                curv.ramp(0.0, t_ramp);
            }
            let t_turn_end = curv.end_time();
            speed.hold(t_turn_end + HOLD_MARGIN - speed.end_time());
            speed.ramp(spec.entry_speed, t_slow);
        }
    }
    if speed.end_time() > total + 1e-9 || curv.end_time() > total + 1e-9 {
        return Err(Error::Config(format!(
            "{} needs {:.1} s but the duration is {:.1} s",
            spec.kind.name(),
            speed.end_time().max(curv.end_time()),
            total
        )));
    }
    Ok((speed, curv))
}

fn check_limits(speed: &Profile, curv: &Profile, vehicle: &VehicleParams) -> Result<()> {
    let m = FEASIBILITY_MARGIN;
    let k_max = curv.max_abs();
    if k_max > m * vehicle.max_curvature() {
        return Err(infeasible(vehicle, "curvature", k_max, m * vehicle.max_curvature()));
    }
    // |d steer/dt| <= L |d kappa/dt| for the bicycle model
    let k_rate = curv.max_rate();
    let k_rate_bound = m * vehicle.steer_rate_limit / vehicle.wheelbase;
    if k_rate > k_rate_bound {
        return Err(infeasible(vehicle, "curvature rate", k_rate, k_rate_bound));
    }
    let v_max = speed.max_abs();
    if v_max > m * vehicle.max_speed {
        return Err(infeasible(vehicle, "speed", v_max, m * vehicle.max_speed));
    }
    let decel = speed.max_decel();
    if decel > m * vehicle.max_brake {
        return Err(infeasible(vehicle, "deceleration", decel, m * vehicle.max_brake));
    }
    let accel = speed.max_accel();
    let accel_bound = m * vehicle.accel_in_gear(vehicle.gear_for_speed(v_max));
    if accel > accel_bound {
        return Err(infeasible(vehicle, "acceleration", accel, accel_bound));
    }
    Ok(())
}

/// Exact `integral of kappa(t) v(t) dt` over `[a, b]`: the integrand is
/// quadratic between knots, where Simpson's rule is exact.
fn heading_change(speed: &Profile, curv: &Profile, a: f64, b: f64) -> f64 {
    let f = |t: f64| curv.at(t) * speed.at(t);
    let mut cuts: Vec<f64> = speed
        .knots
        .iter()
        .chain(&curv.knots)
        .map(|k| k.0)
        .filter(|&t| t > a && t < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut lo = a;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        if hi > lo {
            total += (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi));
        }
        lo = hi;
    }
    total
}

/// Integrate heading and position under the two profiles; returns the
/// anchor (`t = 0`) and `duration` waypoints at `t = dt, 2 dt, ...`.
fn integrate(spec: &ScenarioSpec, speed: &Profile, curv: &Profile) -> (Waypoint, Vec<Waypoint>) {
    let dt = 1.0 / spec.rate_hz;
    let h = dt / SUBSTEPS as f64;
    let (mut x, mut y, mut psi) = (0.0f64, 0.0f64, 0.0f64);
    let anchor = Waypoint::new(0.0, 0.0, speed.at(0.0), 0.0);
    let mut out = Vec::with_capacity(spec.duration);
    for i in 0..spec.duration {
        for j in 0..SUBSTEPS {
            let t0 = i as f64 * dt + j as f64 * h;
            let tm = t0 + 0.5 * h;
            let dpsi = heading_change(speed, curv, t0, t0 + h);
            let psi_mid = psi + heading_change(speed, curv, t0, tm);
            let v_mid = speed.at(tm);
            x += v_mid * h * psi_mid.cos();
            y += v_mid * h * psi_mid.sin();
            psi += dpsi;
        }
        let t = (i + 1) as f64 * dt;
        out.push(Waypoint::new(x, y, speed.at(t), wrap_angle(psi)));
    }
    (anchor, out)
}

/// Build a scenario, rejecting specs that need more than
/// [`FEASIBILITY_MARGIN`] of any vehicle limit.
pub fn generate_scenario(spec: &ScenarioSpec, vehicle: &VehicleParams) -> Result<Scenario> {
    vehicle.validate()?;
    if !(spec.rate_hz > 0.0 && spec.rate_hz.is_finite()) || spec.duration < 2 {
        return Err(Error::Config("scenario needs rate_hz > 0 and duration >= 2".into()));
    }
    if !(spec.entry_speed >= 0.0 && spec.accel > 0.0 && spec.curvature >= 0.0)
        || !(spec.entry_speed.is_finite() && spec.accel.is_finite() && spec.curvature.is_finite())
    {
        return Err(Error::Config(
            "scenario needs entry_speed >= 0, accel > 0, curvature >= 0".into(),
        ));
    }
    let turning = matches!(
        spec.kind,
        ScenarioKind::LeftTurn | ScenarioKind::RightTurn | ScenarioKind::SShape
    );
    if turning && spec.curvature > FEASIBILITY_MARGIN * vehicle.max_curvature() {
        return Err(infeasible(
            vehicle,
            "curvature",
            spec.curvature,
            FEASIBILITY_MARGIN * vehicle.max_curvature(),
        ));
    }
    if turning && !(spec.curvature > 0.0 && spec.entry_speed > 0.0) {
        return Err(Error::Config(
            "turn scenarios need curvature > 0 and entry_speed > 0".into(),
        ));
    }
    let (speed, curv) = build_profiles(spec, vehicle)?;
    check_limits(&speed, &curv, vehicle)?;
    let (anchor, waypoints) = integrate(spec, &speed, &curv);
    Ok(Scenario {
        name: spec.kind.name().to_string(),
        anchor,
        trajectory: TargetTrajectory::new(waypoints, spec.rate_hz)?,
    })
}

/// Waypoints needed to finish every speed and curvature change of `spec`.
pub fn required_duration(spec: &ScenarioSpec, vehicle: &VehicleParams) -> Result<usize> {
    let probe = ScenarioSpec {
        duration: usize::MAX / 2,
        ..spec.clone()
    };
    let (speed, curv) = build_profiles(&probe, vehicle)?;
    Ok((speed.end_time().max(curv.end_time()) * spec.rate_hz).ceil() as usize)
}

/// Default spec of each kind for `vehicle` at 10 Hz: turns at 75% of the
/// vehicle's curvature limit, speed changes at 70% of the available
/// acceleration (at most 1 m/s^2), full stop braking at 75% of the brake.
/// Durations leave two seconds after the last maneuver, within 150..=180.
pub fn default_specs(vehicle: &VehicleParams) -> Vec<ScenarioSpec> {
    let kappa = 0.75 * vehicle.max_curvature();
    ScenarioKind::ALL
        .iter()
        .map(|&kind| {
            let (entry_speed, accel) = match kind {
                ScenarioKind::FullStop => (8.0, 0.75 * vehicle.max_brake),
                _ => (6.0, (0.7 * vehicle.accel_in_gear(vehicle.gear_for_speed(6.0))).min(1.0)),
            };
            let mut spec = ScenarioSpec {
                kind,
                entry_speed,
                curvature: if kind == ScenarioKind::FullStop || kind == ScenarioKind::Straight {
                    0.0
                } else {
                    kappa
                },
                accel,
                duration: 150,
                rate_hz: 10.0,
            };
            if let Ok(need) = required_duration(&spec, vehicle) {
                spec.duration = (need + 20).clamp(150, 180);
            }
            spec
        })
        .collect()
}

/// The default scenario set, sorted by name like [`load_scenarios`], so training
/// on generated or on reloaded scenarios draws the same episodes.
pub fn default_scenarios(vehicle: &VehicleParams) -> Result<Vec<Scenario>> {
    let mut scenarios = default_specs(vehicle)
        .iter()
        .map(|s| generate_scenario(s, vehicle))
        .collect::<Result<Vec<_>>>()?;
    scenarios.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(scenarios)
}
