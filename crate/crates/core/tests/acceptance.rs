//! End-to-end acceptance checks. Runs every criterion in order and prints one
//! `[PASS]`/`[FAIL]` line each; exits non-zero if any criterion fails.
//!
//! Criteria 4 to 6 train controllers at the full step budget and take several
//! minutes on a single core.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use feasible_waypoints::eval::{run_comparison, ComparisonReport, ComparisonSettings};
use feasible_waypoints::nn::{gaussian_log_prob, GaussianPolicy, PolicyGrads, TowerGrads, ValueNet};
use feasible_waypoints::ppo::{
    compute_gae, evaluate_scenarios, loss_and_grads, objective, train, PpoConfig, Sample, TrainConfig, TrainOutput,
};
use feasible_waypoints::prior::{builtin_burnins, default_scenarios, PriorConfig};
use feasible_waypoints::refine::{importance_weights, log_evidence, resample};
use feasible_waypoints::rng::{seeded, SimRng};
use feasible_waypoints::stats::{chi_square, chi_square_critical_99, mean};
use feasible_waypoints::vehicle::{fleet_vehicle, VehicleParams};

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;
const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];
const HIT_THRESHOLD: f64 = 0.9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(index: usize, title: &str, started: Instant, outcome: &Outcome) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!(
        "[{tag}] criterion {index}: {title} ({:.1}s) {}",
        started.elapsed().as_secs_f64(),
        outcome.detail
    );
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// `|a - b| / max(|a|, |b|)` over whole gradient vectors, with an absolute floor
/// for vanishing gradients.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

fn central_difference(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let x = p[i];
            p[i] = x + FD_STEP;
            let up = f(&p);
            p[i] = x - FD_STEP;
            let down = f(&p);
            p[i] = x;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random_nets(rng: &mut SimRng) -> (GaussianPolicy, ValueNet, usize) {
    let window = rng.random_range(2..=6);
    let hidden = rng.random_range(3..=10);
    let log_std = rng.random_range(-1.5..0.5);
    let mut policy = GaussianPolicy::new(window, hidden, log_std, rng);
    let mut value = ValueNet::new(window, hidden, rng);
    // move the heads off their small or zero initialization
    let p: Vec<f64> = policy.params_flat().iter().map(|w| w + 0.3 * normal(rng)).collect();
    policy.set_params_flat(&p).unwrap();
    let v: Vec<f64> = value.params_flat().iter().map(|w| w + 0.3 * normal(rng)).collect();
    value.set_params_flat(&v).unwrap();
    (policy, value, 3 * (window + 1))
}

fn criterion_gradients() -> Outcome {
    let mut rng = seeded(2024);
    let cfg = PpoConfig {
        entropy_coef: 0.01,
        ..PpoConfig::default()
    };
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let (policy, value, dim) = random_nets(&mut rng);
        let z: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let mean = policy.mean_normalized(&z).unwrap();
        let raw = [mean[0] + normal(&mut rng), mean[1] + normal(&mut rng)];

        let mut pg = PolicyGrads::zeros_like(&policy);
        let cache = policy.forward_cached(&z).unwrap();
        policy.backward_log_prob(&cache, &raw, 1.0, &mut pg).unwrap();
        let numeric = central_difference(&policy.params_flat(), |theta| {
            let mut q = policy.clone();
            q.set_params_flat(theta).unwrap();
            gaussian_log_prob(&q.mean_normalized(&z).unwrap(), &q.log_std(), &raw)
        });
        worst[0] = worst[0].max(relative_error(&pg.to_flat(), &numeric));

        let mut vg = TowerGrads::zeros_like(&value.tower);
        let vcache = value.tower.forward_cached(&z).unwrap();
        value.tower.backward_into(&vcache, &[1.0], &mut vg).unwrap();
        let mut analytic = Vec::new();
        vg.write_flat(&mut analytic);
        let numeric = central_difference(&value.params_flat(), |phi| {
            let mut q = value.clone();
            q.set_params_flat(phi).unwrap();
            q.value_normalized(&z).unwrap()
        });
        worst[1] = worst[1].max(relative_error(&analytic, &numeric));

        let samples: Vec<Sample> = (0..6)
            .map(|_| {
                let z: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let m = policy.mean_normalized(&z).unwrap();
                let raw = [m[0] + normal(&mut rng), m[1] + normal(&mut rng)];
                let logp = gaussian_log_prob(&m, &policy.log_std(), &raw);
                Sample {
                    z_value: z.clone(),
                    z_policy: z,
                    raw_action: raw,
                    log_prob_old: logp + rng.random_range(-0.4..0.4),
                    advantage: normal(&mut rng),
                    ret: 2.0 * normal(&mut rng),
                }
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let (_, gp, gv) = loss_and_grads(&policy, &value, &refs, &cfg).unwrap();
        let numeric = central_difference(&policy.params_flat(), |theta| {
            let mut q = policy.clone();
            q.set_params_flat(theta).unwrap();
            objective(&loss_and_grads(&q, &value, &refs, &cfg).unwrap().0, &cfg).0
        });
        let policy_err = relative_error(&gp, &numeric);
        let numeric = central_difference(&value.params_flat(), |phi| {
            let mut q = value.clone();
            q.set_params_flat(phi).unwrap();
            objective(&loss_and_grads(&policy, &q, &refs, &cfg).unwrap().0, &cfg).1
        });
        worst[2] = worst[2].max(policy_err).max(relative_error(&gv, &numeric));
    }
    Outcome {
        pass: worst.iter().all(|&e| e < FD_TOLERANCE),
        detail: format!(
            "max relative error: log-prob {:.2e}, value {:.2e}, ppo losses {:.2e} (tolerance {FD_TOLERANCE:.0e}, 100 cases)",
            worst[0], worst[1], worst[2]
        ),
    }
}

fn criterion_inference_math() -> Outcome {
    let mut rng = seeded(77);
    let mut shift_err = 0.0f64;
    let mut sum_err = 0.0f64;
    let mut jensen_ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let scale = rng.random_range(0.1..50.0);
        let scores: Vec<f64> = (0..n).map(|_| scale * normal(&mut rng)).collect();
        let w = importance_weights(&scores).unwrap();
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
        let c = rng.random_range(-1e3..1e3);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let ws = importance_weights(&shifted).unwrap();
        shift_err = w.iter().zip(&ws).fold(shift_err, |m, (a, b)| m.max((a - b).abs()));
        jensen_ok &= log_evidence(&scores).unwrap() >= mean(&scores);
    }

    let weights = [0.02, 0.05, 0.08, 0.1, 0.12, 0.13, 0.15, 0.35];
    let draws = resample(&weights, &mut rng, 10_000).unwrap();
    let mut counts = vec![0usize; weights.len()];
    for i in draws {
        counts[i] += 1;
    }
    let stat = chi_square(&counts, &weights);
    let critical = chi_square_critical_99(weights.len() - 1).unwrap();

    Outcome {
        pass: shift_err <= 1e-12 && sum_err <= 1e-9 && jensen_ok && stat < critical,
        detail: format!(
            "shift {shift_err:.1e} (<=1e-12), sum {sum_err:.1e} (<=1e-9), jensen {}, chi2 {stat:.2} < {critical}",
            if jensen_ok { "holds on 1000 vectors" } else { "VIOLATED" }
        ),
    }
}

fn criterion_gae() -> Outcome {
    let mut rng = seeded(5);
    let (adv, _) = compute_gae(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0], 0.0, 0.5, 1.0);
    let example = adv == [1.75, 1.5, 1.0];

    let mut monte_carlo = true;
    let mut td = true;
    for _ in 0..200 {
        let n = rng.random_range(1..=40);
        // small integers keep every partial sum exact
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
        let (adv, _) = compute_gae(&rewards, &vec![0.0; n], 0.0, 1.0, 1.0);
        for t in 0..n {
            monte_carlo &= adv[t] == rewards[t..].iter().sum::<f64>();
        }

        let rewards: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let values: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let bootstrap = normal(&mut rng);
        let gamma = rng.random_range(0.5..1.0);
        let (adv, ret) = compute_gae(&rewards, &values, bootstrap, gamma, 0.0);
        for t in 0..n {
            let next = if t + 1 < n { values[t + 1] } else { bootstrap };
            td &= adv[t] == rewards[t] + gamma * next - values[t];
            td &= ret[t] == adv[t] + values[t];
        }
    }
    Outcome {
        pass: example && monte_carlo && td,
        detail: format!(
            "hand example {example}, lambda=1 Monte Carlo {monte_carlo}, lambda=0 TD residual {td} (exact equality)"
        ),
    }
}

/// A trained controller and its per-scenario hit fractions.
type Run = (TrainOutput, Vec<(String, f64)>);

/// Controllers shared by the training and refinement criteria.
struct Trained {
    /// vehicle -> per-seed outputs, in `TRAIN_SEEDS` order
    runs: BTreeMap<String, Vec<Run>>,
}

fn eps_for(vehicle: &str) -> f64 {
    if vehicle == "heavy_truck" {
        1.5
    } else {
        1.0
    }
}

fn train_vehicle(vehicle: &VehicleParams, seed: u64) -> Run {
    let scenarios = default_scenarios(vehicle).unwrap();
    let config = TrainConfig {
        eps: eps_for(&vehicle.name),
        ..TrainConfig::default()
    };
    let out = train(vehicle, &scenarios, &config, seed).unwrap();
    let hits = evaluate_scenarios(&out.policy, vehicle, &scenarios, config.eps).unwrap();
    let named = scenarios.iter().map(|s| s.name.clone()).zip(hits).collect();
    (out, named)
}

fn majority_pass(runs: &[Run], scenario: &str) -> bool {
    let passes = runs
        .iter()
        .filter(|(_, hits)| hits.iter().any(|(name, h)| name == scenario && *h >= HIT_THRESHOLD))
        .count();
    2 * passes > runs.len()
}

fn hit_table(runs: &[Run], scenarios: &[&str]) -> String {
    scenarios
        .iter()
        .map(|s| {
            let hits: Vec<String> = runs
                .iter()
                .map(|(_, h)| format!("{:.2}", h.iter().find(|(n, _)| n == s).map_or(f64::NAN, |(_, v)| *v)))
                .collect();
            format!("{s}=[{}]", hits.join(","))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_training(trained: &mut Trained) -> Outcome {
    let mut longest = Duration::ZERO;
    let mut steps = 0;
    for name in ["sporty", "heavy_truck"] {
        let vehicle = fleet_vehicle(name).unwrap();
        for &seed in &TRAIN_SEEDS {
            let t = Instant::now();
            let run = train_vehicle(&vehicle, seed);
            longest = longest.max(t.elapsed());
            steps = steps.max(run.0.log.last().unwrap().env_steps);
            trained.runs.entry(name.to_string()).or_default().push(run);
        }
    }
    let sporty = &trained.runs["sporty"];
    let sporty_required = ["straight", "left_turn", "right_turn"];
    let sporty_ok = sporty_required.iter().all(|s| majority_pass(sporty, s));

    let heavy = &trained.runs["heavy_truck"];
    let heavy_scenarios = ["left_turn", "right_turn", "full_stop", "s_shape"];
    let heavy_passing = heavy_scenarios.iter().filter(|s| majority_pass(heavy, s)).count();

    let budget_ok = steps <= 200_000 && longest < Duration::from_secs(15 * 60);
    Outcome {
        pass: sporty_ok && heavy_passing >= 3 && budget_ok,
        detail: format!(
            "sporty {} | heavy {heavy_passing}/4 scenarios by majority: {} | {steps} env steps, slowest run {:.0}s",
            hit_table(sporty, &sporty_required),
            hit_table(heavy, &heavy_scenarios),
            longest.as_secs_f64()
        ),
    }
}

fn comparison(trained: &mut Trained) -> (ComparisonReport, Duration) {
    for name in ["offroad", "box_truck"] {
        let vehicle = fleet_vehicle(name).unwrap();
        let run = train_vehicle(&vehicle, TRAIN_SEEDS[0]);
        trained.runs.entry(name.to_string()).or_default().push(run);
    }
    let started = Instant::now();
    let mut report = ComparisonReport::default();
    for name in ["sporty", "offroad", "box_truck", "heavy_truck"] {
        let vehicle = fleet_vehicle(name).unwrap();
        let (out, _) = &trained.runs[name][0];
        let settings = ComparisonSettings {
            seeds: vec![1, 2, 3],
            num_samples: 100,
            num_posterior_draws: 100,
            eps: eps_for(name),
            prior: PriorConfig::default(),
        };
        report.extend(run_comparison(&vehicle, &out.policy, &out.value, &builtin_burnins(), &settings).unwrap());
    }
    (report, started.elapsed())
}

fn criterion_refinement(report: &ComparisonReport, elapsed: Duration) -> Outcome {
    let improved = report
        .rows
        .iter()
        .filter(|r| r.posterior_mean_hit >= r.prior_mean_hit)
        .count();
    let heavy: Vec<_> = report.rows.iter().filter(|r| r.vehicle == "heavy_truck").collect();
    let heavy_strict = heavy.iter().all(|r| r.posterior_mean_hit > r.prior_mean_hit);
    let cells: Vec<String> = heavy
        .iter()
        .map(|r| format!("{} {:.3}->{:.3}", r.ic, r.prior_mean_hit, r.posterior_mean_hit))
        .collect();
    let worse: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.posterior_mean_hit < r.prior_mean_hit)
        .map(|r| {
            format!(
                "{}/{} {:.3}->{:.3}",
                r.vehicle, r.ic, r.prior_mean_hit, r.posterior_mean_hit
            )
        })
        .collect();
    Outcome {
        pass: report.rows.len() == 16 && improved >= 14 && heavy_strict && elapsed < Duration::from_secs(600),
        detail: format!(
            "posterior >= prior in {improved}/{} cells; heavy_truck: {}; worse: [{}]; comparison took {:.0}s",
            report.rows.len(),
            cells.join(", "),
            worse.join(", "),
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_correlation(report: &ComparisonReport) -> Outcome {
    // one Spearman coefficient per 100-sample batch, i.e. per (IC, seed)
    let heavy: Vec<_> = report.rows.iter().filter(|r| r.vehicle == "heavy_truck").collect();
    let mut batches = BTreeMap::<(&str, u64), (Vec<f64>, Vec<f64>)>::new();
    for s in report.samples.iter().filter(|s| s.vehicle == "heavy_truck") {
        let b = batches.entry((s.ic.as_str(), s.seed)).or_default();
        b.0.push(s.s0_value);
        b.1.push(s.hit_fraction);
    }
    let rhos: Vec<f64> = batches
        .values()
        .map(|(v, h)| feasible_waypoints::stats::spearman(v, h))
        .collect();
    let overall = mean(&rhos);
    let per_ic: Vec<String> = heavy
        .iter()
        .map(|r| format!("{} {:.2}", r.ic, r.value_hit_spearman))
        .collect();
    Outcome {
        pass: overall > 0.3,
        detail: format!(
            "heavy_truck mean Spearman over {} batches {overall:.3} (> 0.3 required); per IC: {}",
            rhos.len(),
            per_ic.join(", ")
        ),
    }
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_fwp"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "fwp {args:?} failed");
}

fn pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    std::fs::write(
        root.join("train.json"),
        r#"{"ppo": {"steps_per_update": 512, "total_steps": 2048, "minibatch_size": 64}, "num_envs": 2}"#,
    )
    .unwrap();
    std::fs::write(
        root.join("eval.json"),
        format!(
            r#"{{"vehicle": "box_truck", "policy": "{}", "value": "{}", "training_log": "{}",
                "settings": {{"seeds": [1, 2], "num_samples": 12, "num_posterior_draws": 10, "eps": 1.0}}}}"#,
            p("model/policy.json"),
            p("model/value.json"),
            p("model/training_log.csv")
        ),
    )
    .unwrap();
    run_cli(&["gen-scenarios", "--vehicle", "box_truck", "--out", &p("scenarios")]);
    run_cli(&[
        "train",
        "--vehicle",
        "box_truck",
        "--scenarios",
        &p("scenarios"),
        "--config",
        &p("train.json"),
        "--out",
        &p("model"),
        "--seed",
        "7",
    ]);
    run_cli(&[
        "refine",
        "--vehicle",
        "box_truck",
        "--policy",
        &p("model/policy.json"),
        "--value",
        &p("model/value.json"),
        "--burnin",
        "corner_left",
        "--L",
        "12",
        "--seed",
        "7",
        "--eps",
        "1.0",
        "--out",
        &p("refined"),
    ]);
    run_cli(&["evaluate", "--config", &p("eval.json"), "--out", &p("report")]);

    let mut files = Vec::new();
    for dir in ["model", "refined", "report"] {
        let mut entries: Vec<_> = std::fs::read_dir(root.join(dir))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            let name = format!("{dir}/{}", path.file_name().unwrap().to_string_lossy());
            files.push((name, std::fs::read(&path).unwrap()));
        }
    }
    files
}

fn criterion_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let has_reports = first
        .iter()
        .filter(|(n, _)| n.starts_with("report/") && n.ends_with(".csv"))
        .count();
    Outcome {
        pass: first.len() == second.len() && differing.is_empty() && has_reports >= 3,
        detail: format!(
            "{} output files compared across two runs ({has_reports} report CSVs), differing: {:?}",
            first.len(),
            differing
        ),
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut run = |index: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = f();
        report(index, title, started, &outcome);
        if !outcome.pass {
            failures += 1;
        }
    };

    run(1, "gradient correctness", &mut criterion_gradients);
    run(2, "inference math", &mut criterion_inference_math);
    run(3, "GAE closed forms", &mut criterion_gae);

    let mut trained = Trained { runs: BTreeMap::new() };
    run(4, "controller training", &mut || criterion_training(&mut trained));
    let (comparison_report, elapsed) = comparison(&mut trained);
    run(5, "refinement direction", &mut || {
        criterion_refinement(&comparison_report, elapsed)
    });
    run(6, "value/hit correlation", &mut || {
        criterion_correlation(&comparison_report)
    });
    run(7, "pipeline determinism", &mut criterion_determinism);

    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
