use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env::{observe_with, Waypoint};
use crate::error::{ensure_finite, Error, Result};
use crate::nn::GaussianPolicy;
use crate::vehicle::{self, fleet_vehicle, wrap_angle, VehicleParams, VehicleState};

/// One second at 10 Hz.
pub const DEFAULT_BURNIN_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurnInRecord {
    pub v_lon: f64,
    pub v_lat: f64,
    pub gear: usize,
    pub waypoint: Waypoint,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t: i64,
    v_lon: f64,
    v_lat: f64,
    gear: usize,
    x: f64,
    y: f64,
    v: f64,
    psi: f64,
}

/// Observed records `c_{-U}..c_0` at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BurnIn {
    name: String,
    records: Vec<BurnInRecord>,
    rate_hz: f64,
}

impl BurnIn {
    pub fn new(name: impl Into<String>, records: Vec<BurnInRecord>, rate_hz: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidTrajectory("burn-in needs at least one record".into()));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidTrajectory(format!("rate_hz must be > 0, got {rate_hz}")));
        }
        for r in &records {
            let w = r.waypoint;
            ensure_finite(&[r.v_lon, r.v_lat, w.x, w.y, w.v, w.psi], "burn-in record")?;
        }
        Ok(Self {
            name: name.into(),
            records,
            rate_hz,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn records(&self) -> &[BurnInRecord] {
        &self.records
    }

    /// `U`: the number of control steps between the first and last record.
    pub fn steps(&self) -> usize {
        self.records.len() - 1
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn last(&self) -> &BurnInRecord {
        self.records.last().expect("nonempty by construction")
    }

    fn curvature_between(a: &Waypoint, b: &Waypoint) -> f64 {
        let ds = a.distance_to(b.x, b.y);
        if ds < 1e-6 {
            return 0.0;
        }
        wrap_angle(b.psi - a.psi) / ds
    }

    /// Path curvature over the final record interval (0 without one).
    pub fn end_curvature(&self) -> f64 {
        match self.records.len() {
            0 | 1 => 0.0,
            n => Self::curvature_between(&self.records[n - 2].waypoint, &self.records[n - 1].waypoint),
        }
    }

    /// Path curvature over the first record interval (0 without one).
    pub fn start_curvature(&self) -> f64 {
        match self.records.len() {
            0 | 1 => 0.0,
            _ => Self::curvature_between(&self.records[0].waypoint, &self.records[1].waypoint),
        }
    }

    /// Target for control step `t >= 1`; past `c_0` the path continues with
    /// the final speed and curvature.
    pub(crate) fn target(&self, t: usize) -> Waypoint {
        let u = self.steps();
        if t <= u {
            return self.records[t].waypoint;
        }
        extrapolate(&self.last().waypoint, self.end_curvature(), (t - u) as f64 * self.dt())
    }

    /// Columns `t,v_lon,v_lat,gear,x,y,v,psi` with `t` running from `-U` to 0.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let u = self.steps() as i64;
        for (i, r) in self.records.iter().enumerate() {
            w.serialize(CsvRow {
                t: i as i64 - u,
                v_lon: r.v_lon,
                v_lat: r.v_lat,
                gear: r.gear,
                x: r.waypoint.x,
                y: r.waypoint.y,
                v: r.waypoint.v,
                psi: r.waypoint.psi,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, name: impl Into<String>, rate_hz: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>()?;
        let u = rows.len() as i64 - 1;
        for (i, r) in rows.iter().enumerate() {
            if r.t != i as i64 - u {
                return Err(Error::InvalidTrajectory(format!(
                    "burn-in rows must run t = -U..0 in order; row {i} has t = {}",
                    r.t
                )));
            }
        }
        let records = rows
            .into_iter()
            .map(|r| BurnInRecord {
                v_lon: r.v_lon,
                v_lat: r.v_lat,
                gear: r.gear,
                waypoint: Waypoint::new(r.x, r.y, r.v, r.psi),
            })
            .collect();
        Self::new(name, records, rate_hz)
    }
}

/// Advance along a constant-curvature path for `time` seconds at the waypoint's speed.
pub(crate) fn extrapolate(w: &Waypoint, kappa: f64, time: f64) -> Waypoint {
    let s = w.v * time;
    let dpsi = kappa * s;
    let (dx, dy) = if dpsi.abs() < 1e-9 {
        (s * w.psi.cos(), s * w.psi.sin())
    } else {
        (
            ((w.psi + dpsi).sin() - w.psi.sin()) / kappa,
            (w.psi.cos() - (w.psi + dpsi).cos()) / kappa,
        )
    };
    Waypoint::new(w.x + dx, w.y + dy, w.v, wrap_angle(w.psi + dpsi))
}

/// Drive the burn-in with the noise-free policy and return the state at `c_0`.
///
/// The vehicle starts at the first record's pose and speed, with the steering
/// angle matching the first interval's curvature, then takes `U` control
/// steps toward records `c_{-U+1}..c_0`. Any distance above `eps` is an error.
pub fn burn_in_execute(
    policy: &GaussianPolicy,
    vehicle: &VehicleParams,
    burnin: &BurnIn,
    eps: f64,
) -> Result<VehicleState> {
    let first = burnin.records[0];
    let w = first.waypoint;
    let mut state = VehicleState::at_pose(vehicle, w.x, w.y, w.psi, first.v_lon);
    state.steer_angle = (burnin.start_curvature() * vehicle.wheelbase)
        .atan()
        .clamp(-vehicle.max_steer, vehicle.max_steer);
    let window = policy.window();
    for t in 1..=burnin.steps() {
        let obs = observe_with(&state, window, |j| burnin.target(t + j))?;
        let action = policy.act_deterministic(&obs)?;
        state = vehicle::step(&state, action, vehicle, burnin.dt())?;
        let d = burnin.records[t].waypoint.distance_to(state.x, state.y);
        if d > eps {
            return Err(Error::BurnInDiverged {
                step: t,
                distance: d,
                eps,
            });
        }
    }
    Ok(state)
}

/// Build a burn-in of `U + 1` records at 10 Hz along a path with constant
/// speed `v` and curvature `kappa(t)`, ending at the origin-relative pose the
/// integration reaches. Gears are recorded with the sporty archetype.
fn scripted(name: &str, v: f64, kappa: impl Fn(f64) -> f64) -> BurnIn {
    const RATE: f64 = 10.0;
    const SUB: usize = 50;
    let reference = fleet_vehicle("sporty").expect("builtin vehicle");
    let dt = 1.0 / RATE;
    let h = dt / SUB as f64;
    let (mut x, mut y, mut psi) = (0.0f64, 0.0f64, 0.0f64);
    let mut records = Vec::with_capacity(DEFAULT_BURNIN_STEPS + 1);
    let record = |x: f64, y: f64, psi: f64| BurnInRecord {
        v_lon: v,
        v_lat: 0.0,
        gear: reference.gear_for_speed(v),
        waypoint: Waypoint::new(x, y, v, wrap_angle(psi)),
    };
    records.push(record(x, y, psi));
    for i in 0..DEFAULT_BURNIN_STEPS {
        for j in 0..SUB {
            let t0 = i as f64 * dt + j as f64 * h;
            let psi_mid = psi + 0.5 * h * v * kappa(t0 + 0.25 * h);
            x += v * h * psi_mid.cos();
            y += v * h * psi_mid.sin();
            psi += h * v * kappa(t0 + 0.5 * h);
        }
        records.push(record(x, y, psi));
    }
    BurnIn::new(name, records, RATE).expect("finite scripted records")
}

/// Four scripted initial conditions, all within the heavy truck's limits:
/// two sustained arcs (roundabout-like) and two corner entries.
pub fn builtin_burnins() -> Vec<BurnIn> {
    let span = DEFAULT_BURNIN_STEPS as f64 / 10.0;
    vec![
        scripted("arc_left", 6.0, |_| 1.0 / 20.0),
        scripted("arc_right", 5.0, |_| -1.0 / 16.0),
        scripted("corner_left", 5.0, move |t| 0.06 * (t / span).min(1.0)),
        scripted("corner_right", 6.0, move |t| -0.06 * (t / span).min(1.0)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_steps_returns_initial_state() {
        let v = fleet_vehicle("sporty").unwrap();
        let rec = BurnInRecord {
            v_lon: 4.0,
            v_lat: 0.0,
            gear: 2,
            waypoint: Waypoint::new(1.0, 2.0, 4.0, 0.3),
        };
        let b = BurnIn::new("one", vec![rec], 10.0).unwrap();
        let p = GaussianPolicy::new(5, 8, -1.0, &mut seeded(0));
        let s = burn_in_execute(&p, &v, &b, 1.0).unwrap();
        assert_eq!(s, VehicleState::at_pose(&v, 1.0, 2.0, 0.3, 4.0));
    }

    #[test]
    fn execution_is_deterministic() {
        let v = fleet_vehicle("sporty").unwrap();
        let p = GaussianPolicy::new(5, 8, -1.0, &mut seeded(1));
        let b = &builtin_burnins()[0];
        // an untrained policy may leave the corridor; either way the outcome repeats
        let a = burn_in_execute(&p, &v, b, 50.0).unwrap();
        assert_eq!(a, burn_in_execute(&p, &v, b, 50.0).unwrap());
    }

    #[test]
    fn leaving_the_corridor_is_reported() {
        let v = fleet_vehicle("sporty").unwrap();
        let mut records = builtin_burnins()[0].records().to_vec();
        records[3].waypoint.x += 5.0;
        let b = BurnIn::new("bad", records, 10.0).unwrap();
        let p = GaussianPolicy::new(5, 8, -1.0, &mut seeded(2));
        assert!(matches!(
            burn_in_execute(&p, &v, &b, 1.0),
            Err(Error::BurnInDiverged { step: 3, .. })
        ));
    }

    #[test]
    fn builtin_curvatures_and_feasibility() {
        let heavy = fleet_vehicle("heavy_truck").unwrap();
        let b = builtin_burnins();
        assert_eq!(b.len(), 4);
        let ends = [0.05, -1.0 / 16.0, 0.06, -0.06];
        for (bi, k) in b.iter().zip(ends) {
            assert_eq!(bi.steps(), DEFAULT_BURNIN_STEPS);
            // the last interval sits on the final curvature (corners reach it at the end)
            assert!(
                (bi.end_curvature() - k).abs() < 0.004,
                "{}: {}",
                bi.name(),
                bi.end_curvature()
            );
            assert!(bi.end_curvature().abs() < 0.9 * heavy.max_curvature());
        }
    }

    #[test]
    fn extrapolation_follows_the_arc() {
        let w = Waypoint::new(0.0, 0.0, 2.0, 0.0);
        let k = 0.1;
        // a quarter circle of radius 10 takes 5 pi / 2 seconds at 2 m/s
        let e = extrapolate(&w, k, 2.5 * std::f64::consts::PI);
        assert!((e.x - 10.0).abs() < 1e-9 && (e.y - 10.0).abs() < 1e-9);
        assert!((e.psi - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let s = extrapolate(&w, 0.0, 3.0);
        assert_eq!((s.x, s.y), (6.0, 0.0));
    }

    #[test]
    fn csv_roundtrip() {
        let b = builtin_burnins().remove(2);
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,v_lon,v_lat,gear,x,y,v,psi\n-10,"));
        assert_eq!(BurnIn::read_csv(buf.as_slice(), "corner_left", 10.0).unwrap(), b);
    }
}
