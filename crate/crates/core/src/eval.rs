//! Prior-versus-posterior evaluation.
//!
//! For every initial condition and seed, the same `L` prior samples feed both
//! rows: the prior row executes the follower on all of them, the posterior row
//! on trajectories resampled by value weight. Execution is noise-free, so a
//! resampled trajectory's outcome equals that of its source sample.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{hit_fraction, EnvConfig, EpisodeTrace, TargetTrajectory, WaypointEnv};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_policy, load_value};
use crate::nn::{GaussianPolicy, ValueNet};
use crate::prior::{builtin_burnins, BurnIn, PriorConfig};
use crate::refine::{refine, resample};
use crate::rng::stream;
use crate::stats::{mean, spearman};
use crate::vehicle::{fleet_vehicle, load_fleet, VehicleParams, VehicleState};

/// Roll the noise-free policy against `trajectory` from `s0` until the episode ends.
pub fn execute_follower(
    policy: &GaussianPolicy,
    vehicle: &VehicleParams,
    trajectory: &TargetTrajectory,
    s0: VehicleState,
    eps: f64,
) -> Result<EpisodeTrace> {
    let config = EnvConfig {
        eps,
        window: policy.window(),
        max_steps: None,
    };
    let mut env = WaypointEnv::new(vehicle.clone(), trajectory.clone(), s0, config)?;
    let mut obs = env.observation();
    loop {
        let out = env.step(policy.act_deterministic(&obs)?)?;
        if out.done.is_some() {
            return Ok(env.into_trace());
        }
        obs = out.observation;
    }
}

/// Settings shared by every cell of one vehicle's comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSettings {
    pub seeds: Vec<u64>,
    /// prior samples per (IC, seed)
    pub num_samples: usize,
    pub num_posterior_draws: usize,
    pub eps: f64,
    #[serde(default)]
    pub prior: PriorConfig,
}

impl ComparisonSettings {
    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.num_samples == 0 || self.num_posterior_draws == 0 {
            return Err(Error::Config("num_samples and num_posterior_draws must be >= 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be > 0".into()));
        }
        self.prior.validate()
    }
}

/// One vehicle's experiment as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub vehicle: String,
    /// fleet JSON to look the vehicle up in; the built-in fleet when absent
    #[serde(default)]
    pub fleet: Option<PathBuf>,
    pub policy: PathBuf,
    pub value: PathBuf,
    /// built-in IC names or paths to burn-in CSVs; all built-ins when empty
    #[serde(default)]
    pub initial_conditions: Vec<String>,
    /// training curve to copy next to the report
    #[serde(default)]
    pub training_log: Option<PathBuf>,
    pub settings: ComparisonSettings,
}

impl ExperimentConfig {
    fn artifact_paths(&self) -> Vec<&Path> {
        let mut paths = vec![self.policy.as_path(), self.value.as_path()];
        paths.extend(self.fleet.as_deref());
        paths.extend(self.training_log.as_deref());
        paths.extend(
            self.initial_conditions
                .iter()
                .filter(|s| s.ends_with(".csv"))
                .map(Path::new),
        );
        paths
    }
}

/// Resolve IC names: built-in names, or `*.csv` burn-in files at `rate_hz`.
pub fn resolve_initial_conditions(names: &[String], rate_hz: f64) -> Result<Vec<BurnIn>> {
    let builtin = builtin_burnins();
    if names.is_empty() {
        return Ok(builtin);
    }
    names
        .iter()
        .map(|n| {
            if n.ends_with(".csv") {
                let path = Path::new(n);
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                BurnIn::read_csv(std::fs::File::open(path)?, name, rate_hz)
            } else {
                builtin
                    .iter()
                    .find(|b| b.name() == n)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown initial condition `{n}`")))
            }
        })
        .collect()
}

/// Aggregated prior/posterior outcome for one (vehicle, IC).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub vehicle: String,
    pub ic: String,
    pub prior_mean_hit: f64,
    pub prior_n: usize,
    pub posterior_mean_hit: f64,
    pub posterior_n: usize,
    /// `sum_l w_l h_l`, averaged over seeds
    pub weighted_mean_hit: f64,
    /// Spearman correlation of `V(s_0)` with hit fraction, averaged over seeds
    pub value_hit_spearman: f64,
    pub seeds: Vec<u64>,
    pub eps: f64,
}

/// Per-candidate outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub vehicle: String,
    pub ic: String,
    pub seed: u64,
    pub sample_id: usize,
    pub s0_value: f64,
    pub weight: f64,
    pub hit_fraction: f64,
    /// times this sample was drawn for the posterior row
    pub posterior_draws: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub samples: Vec<SampleRecord>,
}

impl ComparisonReport {
    pub fn extend(&mut self, other: ComparisonReport) {
        self.rows.extend(other.rows);
        self.samples.extend(other.samples);
    }

    pub fn row(&self, vehicle: &str, ic: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.vehicle == vehicle && r.ic == ic)
    }
}

/// Run the paired comparison for one vehicle over the given initial conditions.
pub fn run_comparison(
    vehicle: &VehicleParams,
    policy: &GaussianPolicy,
    value: &ValueNet,
    initial_conditions: &[BurnIn],
    settings: &ComparisonSettings,
) -> Result<ComparisonReport> {
    settings.validate()?;
    if initial_conditions.is_empty() {
        return Err(Error::Config("at least one initial condition is required".into()));
    }
    let mut report = ComparisonReport::default();
    for (ic_index, burnin) in initial_conditions.iter().enumerate() {
        let mut prior_hits = Vec::new();
        let mut posterior_hits = Vec::new();
        let mut weighted = Vec::new();
        let mut correlations = Vec::new();
        for &seed in &settings.seeds {
            let mut rng = stream(seed, ic_index as u64);
            let r = refine(
                &settings.prior,
                policy,
                value,
                vehicle,
                burnin,
                settings.num_samples,
                settings.eps,
                &mut rng,
            )?;
            let hits: Vec<f64> = r
                .candidates
                .par_iter()
                .map(|c| {
                    let trace = execute_follower(policy, vehicle, &c.trajectory, r.s0, settings.eps)?;
                    Ok(hit_fraction(&trace, settings.eps))
                })
                .collect::<Result<_>>()?;
            let weights = r.weights();
            let draws = resample(&weights, &mut rng, settings.num_posterior_draws)?;
            let mut draw_counts = vec![0usize; hits.len()];
            for &i in &draws {
                draw_counts[i] += 1;
                posterior_hits.push(hits[i]);
            }
            prior_hits.extend_from_slice(&hits);
            weighted.push(weights.iter().zip(&hits).map(|(w, h)| w * h).sum::<f64>());
            let scores: Vec<f64> = r.candidates.iter().map(|c| c.s0_value).collect();
            correlations.push(spearman(&scores, &hits));
            for (i, c) in r.candidates.iter().enumerate() {
                report.samples.push(SampleRecord {
                    vehicle: vehicle.name.clone(),
                    ic: burnin.name().to_string(),
                    seed,
                    sample_id: i,
                    s0_value: c.s0_value,
                    weight: c.weight,
                    hit_fraction: hits[i],
                    posterior_draws: draw_counts[i],
                });
            }
        }
        report.rows.push(ComparisonRow {
            vehicle: vehicle.name.clone(),
            ic: burnin.name().to_string(),
            prior_mean_hit: mean(&prior_hits),
            prior_n: prior_hits.len(),
            posterior_mean_hit: mean(&posterior_hits),
            posterior_n: posterior_hits.len(),
            weighted_mean_hit: mean(&weighted),
            value_hit_spearman: mean(&correlations),
            seeds: settings.seeds.clone(),
            eps: settings.eps,
        });
    }
    Ok(report)
}

fn resolve_vehicle(config: &ExperimentConfig) -> Result<VehicleParams> {
    match &config.fleet {
        Some(path) => load_fleet(path)?
            .into_iter()
            .find(|v| v.name == config.vehicle)
            .ok_or_else(|| Error::UnknownVehicle(config.vehicle.clone())),
        None => fleet_vehicle(&config.vehicle),
    }
}

/// Load artifacts and run [`run_comparison`]. Missing files are reported
/// before any simulation starts.
pub fn compare(config: &ExperimentConfig) -> Result<ComparisonReport> {
    for p in config.artifact_paths() {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.to_path_buf()));
        }
    }
    config.settings.validate()?;
    let vehicle = resolve_vehicle(config)?;
    let (policy, pm) = load_policy(&config.policy)?;
    let (value, vm) = load_value(&config.value)?;
    if pm.window != vm.window {
        return Err(Error::HorizonMismatch {
            expected: pm.window,
            found: vm.window,
        });
    }
    let ics = resolve_initial_conditions(&config.initial_conditions, config.settings.prior.rate_hz)?;
    run_comparison(&vehicle, &policy, &value, &ics, &config.settings)
}

#[derive(Debug, Serialize, Deserialize)]
struct ComparisonCsvRow {
    vehicle: String,
    ic: String,
    distribution: String,
    mean_hit: f64,
    n: usize,
    seed: String,
    eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DiagnosticsCsvRow {
    vehicle: String,
    ic: String,
    weighted_mean_hit: f64,
    value_hit_spearman: f64,
}

fn join_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(';')
        .map(|x| x.parse().map_err(|_| Error::Config(format!("bad seed list `{s}`"))))
        .collect()
}

pub const COMPARISON_CSV: &str = "comparison.csv";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

/// Human-readable table of the comparison rows.
pub fn summary_table(report: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:<14} {:>6} {:>8} {:>10} {:>9} {:>9}",
        "vehicle", "ic", "eps", "prior", "posterior", "weighted", "spearman"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<12} {:<14} {:>6.2} {:>8.3} {:>10.3} {:>9.3} {:>9.3}",
            r.vehicle, r.ic, r.eps, r.prior_mean_hit, r.posterior_mean_hit, r.weighted_mean_hit, r.value_hit_spearman
        );
    }
    let cells = report.rows.len();
    let better = report
        .rows
        .iter()
        .filter(|r| r.posterior_mean_hit >= r.prior_mean_hit)
        .count();
    let _ = writeln!(s, "\nposterior >= prior in {better} of {cells} cells");
    s
}

/// Write `comparison.csv`, `diagnostics.csv`, `samples.csv` and `summary.txt` into `dir`.
pub fn emit_report(report: &ComparisonReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(COMPARISON_CSV))?;
    for r in &report.rows {
        for (distribution, mean_hit, n) in [
            ("prior", r.prior_mean_hit, r.prior_n),
            ("posterior", r.posterior_mean_hit, r.posterior_n),
        ] {
            w.serialize(ComparisonCsvRow {
                vehicle: r.vehicle.clone(),
                ic: r.ic.clone(),
                distribution: distribution.into(),
                mean_hit,
                n,
                seed: join_seeds(&r.seeds),
                eps: r.eps,
            })?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(DIAGNOSTICS_CSV))?;
    for r in &report.rows {
        w.serialize(DiagnosticsCsvRow {
            vehicle: r.vehicle.clone(),
            ic: r.ic.clone(),
            weighted_mean_hit: r.weighted_mean_hit,
            value_hit_spearman: r.value_hit_spearman,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(SAMPLES_CSV))?;
    for s in &report.samples {
        w.serialize(s)?;
    }
    w.flush()?;
    std::fs::write(dir.join(SUMMARY_TXT), summary_table(report))?;
    Ok(())
}

/// Parse a directory written by [`emit_report`].
pub fn read_report(dir: &Path) -> Result<ComparisonReport> {
    let path = dir.join(COMPARISON_CSV);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let mut rows: Vec<ComparisonRow> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for rec in csv::Reader::from_path(&path)?.deserialize() {
        let r: ComparisonCsvRow = rec?;
        let key = (r.vehicle.clone(), r.ic.clone());
        let i = *index.entry(key).or_insert_with(|| {
            rows.push(ComparisonRow {
                vehicle: r.vehicle.clone(),
                ic: r.ic.clone(),
                prior_mean_hit: f64::NAN,
                prior_n: 0,
                posterior_mean_hit: f64::NAN,
                posterior_n: 0,
                weighted_mean_hit: f64::NAN,
                value_hit_spearman: f64::NAN,
                seeds: Vec::new(),
                eps: r.eps,
            });
            rows.len() - 1
        });
        let row = &mut rows[i];
        row.seeds = parse_seeds(&r.seed)?;
        match r.distribution.as_str() {
            "prior" => (row.prior_mean_hit, row.prior_n) = (r.mean_hit, r.n),
            "posterior" => (row.posterior_mean_hit, row.posterior_n) = (r.mean_hit, r.n),
            other => return Err(Error::Config(format!("unknown distribution `{other}`"))),
        }
    }
    let diag = dir.join(DIAGNOSTICS_CSV);
    if diag.exists() {
        for rec in csv::Reader::from_path(&diag)?.deserialize() {
            let d: DiagnosticsCsvRow = rec?;
            if let Some(&i) = index.get(&(d.vehicle, d.ic)) {
                rows[i].weighted_mean_hit = d.weighted_mean_hit;
                rows[i].value_hit_spearman = d.value_hit_spearman;
            }
        }
    }
    let samples_path = dir.join(SAMPLES_CSV);
    let samples = if samples_path.exists() {
        csv::Reader::from_path(&samples_path)?
            .deserialize()
            .collect::<std::result::Result<Vec<SampleRecord>, _>>()?
    } else {
        Vec::new()
    };
    Ok(ComparisonReport { rows, samples })
}
