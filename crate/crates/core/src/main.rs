use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use feasible_waypoints::eval::{self, ExperimentConfig};
use feasible_waypoints::nn::checkpoint::{load_policy, load_value, save_policy, save_value};
use feasible_waypoints::ppo::{train, TrainConfig};
use feasible_waypoints::prior::{
    builtin_burnins, default_specs, generate_scenario, load_scenarios, sample_prior, BurnIn, PriorConfig,
};
use feasible_waypoints::refine::refine;
use feasible_waypoints::rng::seeded;
use feasible_waypoints::vehicle::{fleet_vehicle, load_fleet, VehicleParams};

#[derive(Parser)]
#[command(name = "fwp", version, about = "Vehicle-specific waypoint refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the scripted expert scenarios for a vehicle.
    GenScenarios {
        #[arg(long)]
        vehicle: String,
        #[arg(long)]
        out: PathBuf,
        /// fleet JSON (defaults to the built-in fleet)
        #[arg(long)]
        fleet: Option<PathBuf>,
    },
    /// Train a waypoint follower and its value function.
    Train {
        #[arg(long)]
        vehicle: String,
        #[arg(long)]
        scenarios: PathBuf,
        /// training config JSON (defaults when absent)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        fleet: Option<PathBuf>,
    },
    /// Draw trajectories from the behavioral prior.
    SamplePrior {
        /// burn-in CSV or built-in initial condition name
        #[arg(long)]
        burnin: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weight prior samples by the value function and resample one.
    Refine {
        #[arg(long)]
        vehicle: String,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        value: PathBuf,
        #[arg(long)]
        burnin: String,
        #[arg(long = "prior-config")]
        prior_config: Option<PathBuf>,
        #[arg(long = "L", default_value_t = 100)]
        l: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fleet: Option<PathBuf>,
    },
    /// Run prior-versus-posterior comparisons and write the report.
    Evaluate {
        /// one experiment object or a list of them
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the comparison table of an evaluation directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn vehicle(name: &str, fleet: Option<&Path>) -> Result<VehicleParams> {
    match fleet {
        Some(p) => load_fleet(p)?
            .into_iter()
            .find(|v| v.name == name)
            .with_context(|| format!("vehicle `{name}` not in {}", p.display())),
        None => Ok(fleet_vehicle(name)?),
    }
}

fn burnin(source: &str, rate_hz: f64) -> Result<BurnIn> {
    if source.ends_with(".csv") {
        let path = Path::new(source);
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let f = fs::File::open(path).with_context(|| format!("opening {source}"))?;
        return Ok(BurnIn::read_csv(f, name, rate_hz)?);
    }
    builtin_burnins()
        .into_iter()
        .find(|b| b.name() == source)
        .with_context(|| format!("`{source}` is neither a CSV path nor a built-in initial condition"))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Box<ExperimentConfig>),
    Many(Vec<ExperimentConfig>),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenScenarios {
            vehicle: name,
            out,
            fleet,
        } => {
            let v = vehicle(&name, fleet.as_deref())?;
            fs::create_dir_all(&out)?;
            for spec in default_specs(&v) {
                let sc = generate_scenario(&spec, &v)?;
                sc.write_csv(&out.join(format!("{}.csv", sc.name)))?;
                fs::write(
                    out.join(format!("{}.json", sc.name)),
                    serde_json::to_string_pretty(&spec)? + "\n",
                )?;
                println!("{}: {} waypoints", sc.name, sc.trajectory.len());
            }
        }
        Command::Train {
            vehicle: name,
            scenarios,
            config,
            out,
            seed,
            fleet,
        } => {
            let v = vehicle(&name, fleet.as_deref())?;
            let cfg: TrainConfig = read_json_or_default(config.as_deref())?;
            let sc = load_scenarios(&scenarios, 10.0)?;
            let result = train(&v, &sc, &cfg, seed)?;
            fs::create_dir_all(&out)?;
            save_policy(&result.policy, Some(&v.name), &out.join("policy.json"))?;
            save_value(&result.value, Some(&v.name), &out.join("value.json"))?;
            result.log.write_csv(fs::File::create(out.join("training_log.csv"))?)?;
            if let Some(last) = result.log.last() {
                println!(
                    "{}: {} updates, {} env steps, hit fraction {:.3}, eval {:?}",
                    v.name,
                    result.log.records.len(),
                    last.env_steps,
                    last.mean_hit_fraction,
                    last.eval_hit_fraction
                );
            }
        }
        Command::SamplePrior {
            burnin: source,
            config,
            n,
            seed,
            out,
        } => {
            let cfg: PriorConfig = read_json_or_default(config.as_deref())?;
            let b = burnin(&source, cfg.rate_hz)?;
            let mut rng = seeded(seed);
            fs::create_dir_all(&out)?;
            for i in 0..n {
                let s = sample_prior(&b, &cfg, &mut rng)?;
                s.trajectory
                    .write_csv(None, fs::File::create(out.join(format!("sample_{i:04}.csv")))?)?;
            }
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Refine {
            vehicle: name,
            policy,
            value,
            burnin: source,
            prior_config,
            l,
            seed,
            eps,
            out,
            fleet,
        } => {
            let v = vehicle(&name, fleet.as_deref())?;
            let cfg: PriorConfig = read_json_or_default(prior_config.as_deref())?;
            let b = burnin(&source, cfg.rate_hz)?;
            let (pol, _) = load_policy(&policy)?;
            let (val, _) = load_value(&value)?;
            let mut rng = seeded(seed);
            let r = refine(&cfg, &pol, &val, &v, &b, l, eps, &mut rng)?;
            fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_path(out.join("candidates.csv"))?;
            w.write_record(["sample_id", "s0_value", "weight", "selected_flag"])?;
            for (i, c) in r.candidates.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    c.s0_value.to_string(),
                    c.weight.to_string(),
                    u8::from(i == r.selected).to_string(),
                ])?;
                c.trajectory
                    .write_csv(None, fs::File::create(out.join(format!("candidate_{i:04}.csv")))?)?;
            }
            w.flush()?;
            println!(
                "selected candidate {} of {l}; log evidence {:.4}",
                r.selected, r.log_evidence
            );
        }
        Command::Evaluate { config, out } => {
            let configs = match read_json::<OneOrMany>(&config)? {
                OneOrMany::One(c) => vec![*c],
                OneOrMany::Many(cs) => cs,
            };
            if configs.is_empty() {
                bail!("no experiments in {}", config.display());
            }
            let mut report = eval::ComparisonReport::default();
            for c in &configs {
                report.extend(eval::compare(c)?);
            }
            eval::emit_report(&report, &out)?;
            for c in &configs {
                if let Some(log) = &c.training_log {
                    fs::copy(log, out.join(format!("training_{}.csv", c.vehicle)))?;
                }
            }
            print!("{}", eval::summary_table(&report));
        }
        Command::Report { input } => {
            let report = eval::read_report(&input)?;
            print!("{}", eval::summary_table(&report));
        }
    }
    Ok(())
}
