//! Deterministic 2D vehicle simulator.
//!
//! A kinematic bicycle with gear-scaled acceleration and a steering-rate
//! limit. Integration is semi-implicit: the steering angle is updated first,
//! then the longitudinal speed, then the pose using the new speed and new yaw.
//! There is no reverse gear and no lateral slip (`v_lat` is always zero).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Default simulator period: 10 Hz.
pub const DEFAULT_DT: f64 = 0.1;

/// Per-vehicle-type dynamics constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub name: String,
    /// meters
    pub wheelbase: f64,
    /// radians, in (0, pi/2)
    pub max_steer: f64,
    /// m/s^2
    pub max_accel: f64,
    /// m/s^2
    pub max_brake: f64,
    /// m/s
    pub max_speed: f64,
    /// rad/s
    pub steer_rate_limit: f64,
    pub gear_count: usize,
    /// Ascending speeds (m/s) at which the next gear engages; `gear_count - 1` entries.
    pub gear_speed_thresholds: Vec<f64>,
    /// Acceleration factor per gear, each in (0, 1]; `gear_count` entries.
    pub gear_accel_scale: Vec<f64>,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidVehicle {
            name: self.name.clone(),
            reason,
        };
        let scalars = [
            ("wheelbase", self.wheelbase),
            ("max_accel", self.max_accel),
            ("max_brake", self.max_brake),
            ("max_speed", self.max_speed),
            ("steer_rate_limit", self.steer_rate_limit),
        ];
        for (field, v) in scalars {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(format!("{field} must be finite and > 0, got {v}")));
            }
        }
        if !(self.max_steer > 0.0 && self.max_steer < PI / 2.0) {
            return Err(bad(format!("max_steer must lie in (0, pi/2), got {}", self.max_steer)));
        }
        if self.gear_count == 0 {
            return Err(bad("gear_count must be >= 1".into()));
        }
        if self.gear_speed_thresholds.len() + 1 != self.gear_count {
            return Err(bad(format!(
                "expected {} gear thresholds, got {}",
                self.gear_count - 1,
                self.gear_speed_thresholds.len()
            )));
        }
        if self.gear_accel_scale.len() != self.gear_count {
            return Err(bad(format!(
                "expected {} gear scales, got {}",
                self.gear_count,
                self.gear_accel_scale.len()
            )));
        }
        if self.gear_speed_thresholds.windows(2).any(|w| !(w[0] < w[1]))
            || self.gear_speed_thresholds.iter().any(|t| !t.is_finite())
        {
            return Err(bad("gear_speed_thresholds must be finite and strictly ascending".into()));
        }
        if self.gear_accel_scale.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(bad("gear_accel_scale entries must lie in (0, 1]".into()));
        }
        let r = min_turning_radius(self);
        if !(r.is_finite() && r > 0.0) {
            return Err(bad(format!("minimum turning radius {r} is not finite and positive")));
        }
        Ok(())
    }

    /// Gear for a given longitudinal speed: 1 + number of thresholds below |v|.
    pub fn gear_for_speed(&self, v_lon: f64) -> usize {
        1 + self.gear_speed_thresholds.iter().filter(|&&t| t < v_lon.abs()).count()
    }

    /// Peak forward acceleration available in `gear`.
    pub fn accel_in_gear(&self, gear: usize) -> f64 {
        self.max_accel * self.gear_accel_scale[gear.clamp(1, self.gear_count) - 1]
    }

    pub fn max_curvature(&self) -> f64 {
        1.0 / min_turning_radius(self)
    }
}

/// Ground-truth simulator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// radians in (-pi, pi]
    pub yaw: f64,
    pub v_lon: f64,
    pub v_lat: f64,
    pub steer_angle: f64,
    pub gear: usize,
}

impl VehicleState {
    /// A state at the given pose and speed with straight wheels and the matching gear.
    pub fn at_pose(params: &VehicleParams, x: f64, y: f64, yaw: f64, v_lon: f64) -> Self {
        let v = v_lon.clamp(0.0, params.max_speed);
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
            v_lon: v,
            v_lat: 0.0,
            steer_angle: 0.0,
            gear: params.gear_for_speed(v),
        }
    }

    fn check_finite(&self) -> Result<()> {
        ensure_finite(
            &[self.x, self.y, self.yaw, self.v_lon, self.v_lat, self.steer_angle],
            "vehicle state",
        )
    }
}

/// Normalized controls; both components are clamped to [-1, 1] on construction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    steer_cmd: f64,
    pedal_cmd: f64,
}

impl Action {
    pub fn new(steer_cmd: f64, pedal_cmd: f64) -> Self {
        Self {
            steer_cmd: steer_cmd.clamp(-1.0, 1.0),
            pedal_cmd: pedal_cmd.clamp(-1.0, 1.0),
        }
    }

    pub fn steer(&self) -> f64 {
        self.steer_cmd
    }

    /// Positive accelerates, negative brakes.
    pub fn pedal(&self) -> f64 {
        self.pedal_cmd
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn min_turning_radius(params: &VehicleParams) -> f64 {
    params.wheelbase / params.max_steer.tan()
}

/// Advance the simulator by `dt` seconds. Pure and bit-reproducible.
pub fn step(state: &VehicleState, action: Action, params: &VehicleParams, dt: f64) -> Result<VehicleState> {
    state.check_finite()?;
    ensure_finite(&[action.steer_cmd, action.pedal_cmd], "action")?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::NonFinite("dt (must be finite and > 0)"));
    }

    let target_steer = action.steer_cmd * params.max_steer;
    let max_delta = params.steer_rate_limit * dt;
    let steer = (state.steer_angle + (target_steer - state.steer_angle).clamp(-max_delta, max_delta))
        .clamp(-params.max_steer, params.max_steer);

    let v_lon = if action.pedal_cmd >= 0.0 {
        state.v_lon + action.pedal_cmd * params.accel_in_gear(state.gear) * dt
    } else {
        // braking stops at zero, it never reverses
        (state.v_lon + action.pedal_cmd * params.max_brake * dt).max(0.0)
    }
    .clamp(0.0, params.max_speed);

    let yaw_rate = v_lon * steer.tan() / params.wheelbase;
    let yaw = wrap_angle(state.yaw + yaw_rate * dt);
    let (sin, cos) = yaw.sin_cos();

    Ok(VehicleState {
        x: state.x + v_lon * cos * dt,
        y: state.y + v_lon * sin * dt,
        yaw,
        v_lon,
        v_lat: 0.0,
        steer_angle: steer,
        gear: params.gear_for_speed(v_lon),
    })
}

#[allow(clippy::too_many_arguments)]
fn archetype(
    name: &str,
    wheelbase: f64,
    max_steer: f64,
    max_accel: f64,
    max_brake: f64,
    max_speed: f64,
    steer_rate_limit: f64,
    thresholds: &[f64],
    scales: &[f64],
) -> VehicleParams {
    VehicleParams {
        name: name.to_string(),
        wheelbase,
        max_steer,
        max_accel,
        max_brake,
        max_speed,
        steer_rate_limit,
        gear_count: scales.len(),
        gear_speed_thresholds: thresholds.to_vec(),
        gear_accel_scale: scales.to_vec(),
    }
}

/// The four built-in archetypes, ordered from most to least controllable:
/// `sporty`, `offroad`, `box_truck`, `heavy_truck`.
pub fn builtin_fleet() -> Vec<VehicleParams> {
    vec![
        archetype(
            "sporty",
            2.9,
            0.6,
            4.0,
            8.0,
            45.0,
            1.2,
            &[4.0, 8.0, 13.0, 19.0, 26.0],
            &[1.0, 0.9, 0.8, 0.7, 0.6, 0.5],
        ),
        archetype(
            "offroad",
            2.45,
            0.55,
            3.0,
            7.0,
            35.0,
            1.0,
            &[4.0, 9.0, 15.0, 22.0],
            &[1.0, 0.85, 0.7, 0.55, 0.45],
        ),
        archetype(
            "box_truck",
            3.8,
            0.5,
            2.2,
            6.0,
            30.0,
            0.7,
            &[3.0, 7.0, 12.0, 18.0],
            &[1.0, 0.8, 0.6, 0.45, 0.35],
        ),
        archetype(
            "heavy_truck",
            5.5,
            0.45,
            1.5,
            4.5,
            25.0,
            0.4,
            &[2.5, 5.0, 8.0, 12.0, 17.0],
            &[1.0, 0.75, 0.55, 0.4, 0.3, 0.25],
        ),
    ]
}

pub fn fleet_vehicle(name: &str) -> Result<VehicleParams> {
    builtin_fleet()
        .into_iter()
        .find(|v| v.name == name)
        .ok_or_else(|| Error::UnknownVehicle(name.to_string()))
}

/// Load a JSON array of vehicle parameter objects; every entry is validated.
pub fn load_fleet(path: &Path) -> Result<Vec<VehicleParams>> {
    let text = std::fs::read_to_string(path)?;
    parse_fleet(&text)
}

pub fn parse_fleet(json: &str) -> Result<Vec<VehicleParams>> {
    let fleet: Vec<VehicleParams> = serde_json::from_str(json)?;
    for v in &fleet {
        v.validate()?;
    }
    Ok(fleet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn simple(max_accel: f64) -> VehicleParams {
        archetype("simple", 2.5, PI / 4.0, max_accel, 6.0, 30.0, 10.0, &[], &[1.0])
    }

    #[test]
    fn rest_is_a_fixed_point() {
        for p in builtin_fleet() {
            let s = VehicleState::at_pose(&p, 1.0, -2.0, 0.3, 0.0);
            let n = step(&s, Action::new(0.0, 0.0), &p, 0.1).unwrap();
            assert_eq!((n.x, n.y, n.yaw, n.v_lon), (s.x, s.y, s.yaw, 0.0));
        }
    }

    #[test]
    fn full_throttle_from_rest() {
        let p = simple(3.0);
        let s = VehicleState::at_pose(&p, 0.0, 0.0, 0.0, 0.0);
        let n = step(&s, Action::new(0.0, 1.0), &p, 0.1).unwrap();
        assert_abs_diff_eq!(n.v_lon, 0.3, epsilon = 1e-15);
        // semi-implicit: pose uses the new speed, x = 0.3 * 0.1
        assert_abs_diff_eq!(n.x, 0.03, epsilon = 1e-15);
        assert_eq!(n.y, 0.0);
    }

    #[test]
    fn braking_never_reverses() {
        let p = simple(3.0);
        let s = VehicleState::at_pose(&p, 0.0, 0.0, 0.0, 0.2);
        let n = step(&s, Action::new(0.0, -1.0), &p, 0.1).unwrap();
        assert_eq!(n.v_lon, 0.0);
        assert_eq!(n.x, 0.0);
    }

    #[test]
    fn full_steer_traces_the_turning_circle() {
        // 100 steps per revolution: yaw advances by exactly 2*pi/100 each step.
        let p = simple(3.0);
        let radius = min_turning_radius(&p);
        let n_steps = 100;
        let v = 2.0 * PI * radius / (n_steps as f64 * 0.1);
        let mut s = VehicleState::at_pose(&p, 0.0, 0.0, 0.0, v);
        s.steer_angle = p.max_steer;
        let start = s;
        let mut pts = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            s = step(&s, Action::new(1.0, 0.0), &p, 0.1).unwrap();
            pts.push((s.x, s.y));
        }
        // the visited points form a regular polygon; its centroid is the circle's center
        let cx = pts.iter().map(|q| q.0).sum::<f64>() / n_steps as f64;
        let cy = pts.iter().map(|q| q.1).sum::<f64>() / n_steps as f64;
        let max_dev = pts
            .iter()
            .map(|q| ((q.0 - cx).hypot(q.1 - cy) - radius).abs())
            .fold(0.0, f64::max);
        let gap = ((s.x - start.x).powi(2) + (s.y - start.y).powi(2)).sqrt();
        assert!(gap < 0.02 * radius, "gap {gap}");
        assert!(max_dev < 0.02 * radius, "radial deviation {max_dev}");
    }

    #[test]
    fn turning_radius_examples() {
        assert_abs_diff_eq!(min_turning_radius(&simple(1.0)), 2.5, epsilon = 1e-12);
        let mut p = simple(1.0);
        p.wheelbase = 4.0;
        p.max_steer = 0.35;
        assert_abs_diff_eq!(min_turning_radius(&p), 4.0 / 0.35f64.tan(), epsilon = 1e-12);
        assert!((min_turning_radius(&p) - 10.96).abs() < 0.01);
        let mut last = f64::INFINITY;
        for k in 1..200 {
            p.max_steer = k as f64 / 200.0 * (PI / 2.0);
            let r = min_turning_radius(&p);
            assert!(r < last && r > 0.0);
            last = r;
        }
    }

    #[test]
    fn fleet_ordering_and_validity() {
        let fleet = builtin_fleet();
        assert_eq!(fleet.len(), 4);
        for v in &fleet {
            v.validate().unwrap();
        }
        let sporty = fleet_vehicle("sporty").unwrap();
        let heavy = fleet_vehicle("heavy_truck").unwrap();
        assert!(sporty.max_accel > heavy.max_accel);
        assert!(min_turning_radius(&heavy) > min_turning_radius(&sporty));
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let p = simple(1.0);
        let mut s = VehicleState::at_pose(&p, 0.0, 0.0, 0.0, 1.0);
        assert!(step(&s, Action::new(f64::NAN, 0.0), &p, 0.1).is_err());
        assert!(step(&s, Action::new(0.0, 0.0), &p, 0.0).is_err());
        s.x = f64::INFINITY;
        assert!(matches!(step(&s, Action::default(), &p, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn action_clamps() {
        let a = Action::new(3.0, -7.0);
        assert_eq!((a.steer(), a.pedal()), (1.0, -1.0));
    }

    #[test]
    fn fleet_json_rejects_unknown_fields() {
        let json = serde_json::to_string(&builtin_fleet()).unwrap();
        assert_eq!(parse_fleet(&json).unwrap(), builtin_fleet());
        let bad = json.replacen("\"wheelbase\"", "\"torque\":1.0,\"wheelbase\"", 1);
        assert!(parse_fleet(&bad).is_err());
        let unsorted = json.replacen("[4.0,8.0", "[8.0,4.0", 1);
        assert!(matches!(parse_fleet(&unsorted), Err(Error::InvalidVehicle { .. })));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.1 - -3.1), 6.2 - 2.0 * PI, epsilon = 1e-12);
    }

    fn arb_state() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
        (-50.0..50.0f64, -50.0..50.0f64, -3.1..3.1f64, 0.0..20.0f64, -0.4..0.4f64)
    }

    fn arb_actions() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..40)
    }

    proptest! {
        #[test]
        fn step_invariants((x, y, yaw, v, steer) in arb_state(), actions in arb_actions(), vi in 0usize..4) {
            let p = builtin_fleet().swap_remove(vi);
            let mut s = VehicleState::at_pose(&p, x, y, yaw, v);
            s.steer_angle = steer.clamp(-p.max_steer, p.max_steer);
            for (sc, pc) in actions {
                let a = Action::new(sc, pc);
                let n = step(&s, a, &p, DEFAULT_DT).unwrap();
                prop_assert_eq!(n, step(&s, a, &p, DEFAULT_DT).unwrap());
                prop_assert!(n.v_lon >= 0.0 && n.v_lon <= p.max_speed);
                prop_assert!(n.steer_angle.abs() <= p.max_steer);
                prop_assert!(n.steer_angle.tan().abs() / p.wheelbase <= 1.0 / min_turning_radius(&p) + 1e-12);
                prop_assert!((n.steer_angle - s.steer_angle).abs() <= p.steer_rate_limit * DEFAULT_DT + 1e-12);
                prop_assert_eq!(n.gear, p.gear_for_speed(n.v_lon));
                prop_assert!(n.yaw > -PI && n.yaw <= PI);
                s = n;
            }
        }

        #[test]
        fn rollouts_are_rigid_motion_equivariant(
            actions in arb_actions(),
            (dx, dy, rot) in (-30.0..30.0f64, -30.0..30.0f64, -3.0..3.0f64),
            v in 0.0..15.0f64,
        ) {
            let p = fleet_vehicle("offroad").unwrap();
            let mut a = VehicleState::at_pose(&p, 0.0, 0.0, 0.0, v);
            let mut b = VehicleState::at_pose(&p, dx, dy, rot, v);
            let (sr, cr) = rot.sin_cos();
            for (sc, pc) in actions {
                let act = Action::new(sc, pc);
                a = step(&a, act, &p, DEFAULT_DT).unwrap();
                b = step(&b, act, &p, DEFAULT_DT).unwrap();
                let ex = dx + cr * a.x - sr * a.y;
                let ey = dy + sr * a.x + cr * a.y;
                prop_assert!((b.x - ex).abs() < 1e-9 && (b.y - ey).abs() < 1e-9);
                prop_assert!(wrap_angle(b.yaw - a.yaw - rot).abs() < 1e-9);
                prop_assert_eq!(a.v_lon, b.v_lon);
            }
        }
    }
}
