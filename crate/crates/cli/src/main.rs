use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rendezvous_core::analytic::{self, CalibrationInputs, RobotCalibration};
use rendezvous_core::convergence::{self, ContractionReport, RendezvousSummary};
use rendezvous_core::graph::{build_m, tau_ergodicity};
use rendezvous_core::{dynamics, empirical, scenario, Scenario};
use serde::Serialize;
use serde_json::json;

mod artifacts;

use artifacts::{ArtifactDir, InitRecord, Manifest};

/// Simulate and audit privacy-preserving multi-robot rendezvous.
#[derive(Debug, Parser)]
#[command(name = "rendezvous", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file and print its derived graph quantities.
    Validate(Common),
    /// Run one trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
        /// Number of steps; defaults to the scenario horizon.
        #[arg(long)]
        horizon: Option<u64>,
        /// Defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute per-robot (epsilon, delta) calibration.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
        /// Defaults to the scenario's reference epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Target delta; when given, exit 1 unless every robot meets it.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Monte Carlo check of the leakage bound for one robot.
    AuditPrivacy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
        /// 1-based robot number.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        robot: u64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Defaults to the scenario horizon.
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo contraction checks plus a multi-seed rendezvous run.
    AuditConvergence {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
        /// Steps at which to freeze the state and test contraction.
        #[arg(long = "k", value_delimiter = ',', default_values_t = [0u64, 10, 50])]
        ks: Vec<u64>,
        /// Continuations per contraction check.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Number of rendezvous seeds, starting at `--seed`.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct Output {
    /// Directory for artifacts.
    #[arg(long = "out", env = "RENDEZVOUS_OUT", default_value = "runs")]
    dir: PathBuf,
}

/// Everything that ends a command early.
#[derive(Debug)]
enum Failure {
    /// Bad input or an I/O problem: exit 2.
    Usage(String),
    /// The command ran but its check did not hold: exit 1.
    Audit,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Audit) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Validate(common) => validate(&load(&common)?),
        Command::Simulate { common, output, horizon, seed } => simulate(&load(&common)?, &output, horizon, seed),
        Command::Calibrate { common, output, epsilon, delta } => calibrate(&load(&common)?, &output, epsilon, delta),
        Command::AuditPrivacy { common, output, robot, epsilon, trials, horizon, seed } => {
            let s = load(&common)?;
            audit_privacy(&s, &output, robot as usize, epsilon, trials, horizon, seed)
        }
        Command::AuditConvergence { common, output, ks, trials, seeds, horizon, seed } => {
            audit_convergence(&load(&common)?, &output, &ks, trials, seeds, horizon, seed)
        }
    }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    Ok(scenario::load_config(&common.config)?)
}

fn epsilon_or_reference(s: &Scenario, epsilon: Option<f64>) -> Result<f64, Failure> {
    epsilon
        .or_else(|| s.reference.as_ref().map(|r| r.epsilon))
        .ok_or_else(|| Failure::Usage("--epsilon is required when the scenario has no reference block".into()))
}

fn manifest(command: &'static str, s: &Scenario, seed: u64, flags: serde_json::Value, init: InitRecord) -> Manifest {
    Manifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config_sha256: artifacts::config_hash(s),
        seed,
        flags,
        init,
        artifacts: Vec::new(),
    }
}

fn validate(s: &Scenario) -> Outcome {
    let derived = s.graph.derive_quantities()?;
    let l = derived.primitivity_horizon;
    let m = build_m(&s.graph, &vec![true; s.n()]);
    let tau = tau_ergodicity(&m.pow((l as u32).max(1)))?;
    println!("scenario ok: {} robots", s.n());
    println!("alpha            {:?}", derived.alpha);
    println!("L                {l}");
    println!("epsilon_floor    {}", derived.epsilon_floor);
    println!("tau(M(I)^L)      {tau}");
    Ok(())
}

fn simulate(s: &Scenario, out: &Output, horizon: Option<u64>, seed: Option<u64>) -> Outcome {
    let horizon = horizon.unwrap_or(s.horizon);
    let seed = seed.unwrap_or(s.seed);
    let traj = dynamics::run(s, horizon, seed)?;

    let mut dir = ArtifactDir::create(&out.dir)?;
    let path = dir.write_text("trajectory.csv", &artifacts::trajectory_csv(&traj))?;
    let init = InitRecord::from_scenario(s, Some(&traj.x0));
    dir.finish(manifest("simulate", s, seed, json!({ "horizon": horizon }), init))?;

    let v_final = traj.steps.last().map_or(f64::NAN, |r| r.disagreement);
    println!("wrote {} ({} steps, V(T) = {v_final:e})", path.display(), traj.steps.len());
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    epsilon: f64,
    target_delta: Option<f64>,
    robots: Vec<RobotCalibration>,
    /// Reference deltas from the scenario file, shown for comparison only.
    reference_delta: Option<Vec<f64>>,
}

fn calibrate(s: &Scenario, out: &Output, epsilon: Option<f64>, delta: Option<f64>) -> Outcome {
    let eps = epsilon_or_reference(s, epsilon)?;
    let alpha = s.alpha();
    let robots = s
        .agents
        .iter()
        .zip(&alpha)
        .enumerate()
        .map(|(i, (agent, &a))| {
            let inputs = CalibrationInputs::from_agent(agent, a)?;
            analytic::calibrate_robot(i + 1, eps, delta, &inputs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reference = s.reference.as_ref().filter(|r| r.epsilon == eps).map(|r| r.delta.clone());

    println!("epsilon = {eps}");
    println!("{:>5}  {:>10}  {:>14}  {:>15}  {:>9}", "robot", "reference", "delta_theorem1", "delta_corollary", "satisfied");
    for r in &robots {
        let reference = reference.as_ref().map_or("-".to_string(), |d| format!("{:.4}", d[r.robot - 1]));
        let corollary = r.delta_corollary.map_or("-".to_string(), |d| format!("{d:.6}"));
        println!(
            "{:>5}  {:>10}  {:>14.6}  {:>15}  {:>9}",
            r.robot, reference, r.delta_theorem1, corollary, r.satisfied
        );
    }
    if reference.is_some() {
        println!("reference values are shown for comparison and are not expected to match");
    }

    let pass = delta.is_none() || robots.iter().all(|r| r.satisfied);
    let report = CalibrationReport { epsilon: eps, target_delta: delta, robots, reference_delta: reference };
    let mut dir = ArtifactDir::create(&out.dir)?;
    dir.write_json("calibration.json", &report)?;
    let flags = json!({ "epsilon": eps, "delta": delta });
    dir.finish(manifest("calibrate", s, s.seed, flags, InitRecord::from_scenario(s, None)))?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}

fn audit_privacy(
    s: &Scenario,
    out: &Output,
    robot: usize,
    epsilon: Option<f64>,
    trials: u64,
    horizon: Option<u64>,
    seed: Option<u64>,
) -> Outcome {
    let eps = epsilon_or_reference(s, epsilon)?;
    let horizon = horizon.unwrap_or(s.horizon);
    let seed = seed.unwrap_or(s.seed);
    let report = empirical::monte_carlo_audit(s, robot - 1, eps, trials, horizon, seed)?;

    println!(
        "robot {} epsilon {}: coverage {:.6} (99% CI [{:.6}, {:.6}]) vs required {:.6}: {}",
        report.robot,
        eps,
        report.coverage,
        report.wilson_ci.0,
        report.wilson_ci.1,
        report.required_coverage,
        if report.pass { "PASS" } else { "FAIL" }
    );
    let mut dir = ArtifactDir::create(&out.dir)?;
    dir.write_json("audit_privacy.json", &report)?;
    let flags = json!({ "robot": robot, "epsilon": eps, "trials": trials, "horizon": horizon });
    dir.finish(manifest("audit-privacy", s, seed, flags, InitRecord::from_scenario(s, None)))?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}

#[derive(Serialize)]
struct ConvergenceReport {
    contraction: Vec<ContractionReport>,
    rendezvous: RendezvousSummary,
    pass: bool,
}

fn audit_convergence(
    s: &Scenario,
    out: &Output,
    ks: &[u64],
    trials: u64,
    seeds: u64,
    horizon: Option<u64>,
    seed: Option<u64>,
) -> Outcome {
    let horizon = horizon.unwrap_or(s.horizon);
    let seed = seed.unwrap_or(s.seed);
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let contraction = ks
        .iter()
        .map(|&k| convergence::contraction_check(s, k, trials, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let seed_list: Vec<u64> = (0..seeds).map(|i| seed.wrapping_add(i)).collect();
    let rendezvous = convergence::rendezvous_check(s, horizon, &seed_list)?;

    for c in &contraction {
        println!(
            "k = {:>4}: E[V(k+L)] = {:.6e} +- {:.1e} vs bound {:.6e}: {}",
            c.k,
            c.lhs,
            c.lhs_standard_error,
            c.rhs,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "rendezvous: V({horizon}) < {:e} for {}/{} seeds: {}",
        rendezvous.threshold,
        rendezvous.converged,
        seeds,
        if rendezvous.pass { "PASS" } else { "FAIL" }
    );

    let pass = rendezvous.pass && contraction.iter().all(|c| c.pass);
    let mut dir = ArtifactDir::create(&out.dir)?;
    dir.write_text("rendezvous_seeds.csv", &artifacts::seeds_csv(&rendezvous.per_seed))?;
    let report = ConvergenceReport { contraction, rendezvous, pass };
    dir.write_json("audit_convergence.json", &report)?;
    let flags = json!({ "k": ks, "trials": trials, "seeds": seeds, "horizon": horizon });
    dir.finish(manifest("audit-convergence", s, seed, flags, InitRecord::from_scenario(s, None)))?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}
