use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{debug, info};

use phantom_planner::output::{self, fmt_sig, RunRecord};
use phantom_planner::prob::ManeuverWeights;
use phantom_planner::scenario::{parse_scenario, Scenario};
use phantom_planner::sim::{cruise_history, fallback_plan, replan_step, run_closed_loop, PlannerConfig};
use phantom_planner::trajectory::{build_combined, extract_maneuver, ManeuverId};
use phantom_planner::PlannerError;

const EXIT_VALIDATION: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_OTHER: u8 = 1;

/// Trajectory planning under object-existence uncertainty.
///
/// Log verbosity follows RUST_LOG (e.g. RUST_LOG=info).
#[derive(Parser, Debug)]
#[command(name = "phantom-planner", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one combined planning problem and write the A, B, combined and
    /// fallback tables.
    Plan(PlanArgs),
    /// Run the closed-loop replanning simulation.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario's full-braking deceleration, m/s².
    #[arg(long, value_name = "M_PER_S2")]
    a_max: Option<f64>,
    /// Reserved; every run is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    /// Fixed maneuver weights `w_a,w_b` instead of the existence-derived blend.
    #[arg(long, value_name = "W_A,W_B", value_parser = parse_weights)]
    weights_override: Option<ManeuverWeights>,
    /// Scenario time at which objects are sampled, s.
    #[arg(long, default_value_t = 0.0)]
    at: f64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Simulated time, s; a multiple of the replanning interval.
    #[arg(long)]
    duration: f64,
    /// Repeat the run with every uncertain existence probability replaced,
    /// e.g. `p_exist=0.1,0.5,1.0`.
    #[arg(long, value_name = "p_exist=P1,P2,...", value_parser = parse_sweep)]
    sweep: Option<Sweep>,
}

#[derive(Debug, Clone)]
struct Sweep(Vec<f64>);

fn parse_weights(s: &str) -> Result<ManeuverWeights, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b] = parts.as_slice() else {
        return Err("expected two comma-separated weights".into());
    };
    let w_a: f64 = a.trim().parse().map_err(|e| format!("w_a: {e}"))?;
    let w_b: f64 = b.trim().parse().map_err(|e| format!("w_b: {e}"))?;
    ManeuverWeights::new(w_a, w_b).map_err(|e| e.to_string())
}

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let list = s.strip_prefix("p_exist=").ok_or("sweep must look like p_exist=0.1,0.5,1.0")?;
    let values = list
        .split(',')
        .map(|v| {
            let p: f64 = v.trim().parse().map_err(|e| format!("{v:?}: {e}"))?;
            if (0.0..=1.0).contains(&p) {
                Ok(p)
            } else {
                Err(format!("{p} is not a probability"))
            }
        })
        .collect::<Result<Vec<f64>, String>>()?;
    if values.is_empty() {
        return Err("empty sweep".into());
    }
    Ok(Sweep(values))
}

fn exit_code(e: &PlannerError) -> u8 {
    match e {
        PlannerError::Validation(_) | PlannerError::Parse(_) => EXIT_VALIDATION,
        PlannerError::Infeasible { .. } => EXIT_INFEASIBLE,
        _ => EXIT_OTHER,
    }
}

fn report(e: &PlannerError) {
    match e {
        PlannerError::Validation(list) => {
            eprintln!("error: invalid scenario");
            for msg in list {
                eprintln!("  {msg}");
            }
        }
        PlannerError::Infeasible { violated } => {
            eprintln!("error: no feasible plan; violated constraints:");
            for label in violated {
                eprintln!("  {label}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn load(common: &Common) -> Result<Scenario, PlannerError> {
    if let Some(seed) = common.seed {
        debug!("seed {seed} ignored, runs are deterministic");
    }
    let mut scenario = parse_scenario(&common.scenario)?;
    if let Some(a) = common.a_max {
        scenario.a_max_brake = a;
        scenario.validate()?;
    }
    std::fs::create_dir_all(&common.out)?;
    Ok(scenario)
}

fn plan(args: &PlanArgs) -> Result<(), PlannerError> {
    let scenario = load(&args.common)?;
    let out = &args.common.out;
    let mut cfg = PlannerConfig::from_scenario(&scenario)?;
    cfg.weights_override = args.weights_override;
    let path = scenario.path()?;
    let scene = scenario.scene_at(args.at)?;
    let prev = cruise_history(&path, &scenario.ego_init, &cfg, args.at)?;

    let seed = build_combined(&prev, cfg.layout.n_pin, cfg.layout.n)?;
    output::write_trajectory(&out.join("plan_z.csv"), &fallback_plan(&seed, &path, &cfg)?, &path)?;

    let step = replan_step(&prev, &scene, &cfg, None)?;
    let Some(solution) = step.solution else {
        return Err(PlannerError::Infeasible { violated: step.violated });
    };
    output::write_combined(&out.join("plan_combined.csv"), &solution.vector, &path)?;
    for (id, name) in [(ManeuverId::A, "plan_a.csv"), (ManeuverId::B, "plan_b.csv")] {
        output::write_trajectory(&out.join(name), &extract_maneuver(&solution.vector, id)?, &path)?;
    }
    output::write_json(&out.join("cost.json"), &solution.cost)?;

    let c = &solution.cost;
    println!("weights      w_a = {}, w_b = {}", fmt_sig(step.weights.w_a), fmt_sig(step.weights.w_b));
    println!("committed    {}", step.committed);
    println!("total        {}", fmt_sig(c.total));
    println!("J_A          {}", fmt_sig(c.per_maneuver.0));
    println!("J_B          {}", fmt_sig(c.per_maneuver.1));
    for (term, v) in &c.per_term {
        println!("  {term:<11}{}", fmt_sig(*v));
    }
    println!("converged    {} ({} iterations)", solution.converged, solution.iterations);
    info!("solver time {:?}", solution.wall_time);
    Ok(())
}

fn simulate_one(scenario: &Scenario, duration: f64, p: Option<f64>, dir: &Path) -> Result<RunRecord, PlannerError> {
    let cfg = PlannerConfig::from_scenario(scenario)?;
    let result = run_closed_loop(scenario, duration, &cfg)?;
    info!("{}: solver time {:?}", dir.display(), result.metrics.solver_time);
    let record = RunRecord::new(&scenario.name, duration, p, &result);
    output::write_sim_bundle(dir, &record, &result, &scenario.path()?)?;
    Ok(record)
}

fn simulate(args: &SimulateArgs) -> Result<(), PlannerError> {
    let scenario = load(&args.common)?;
    let out = &args.common.out;
    let Some(sweep) = &args.sweep else {
        let r = simulate_one(&scenario, args.duration, None, out)?;
        println!(
            "max decel {} m/s², max jerk {} m/s³, min margin {}, collision {}, fallbacks {}",
            fmt_sig(r.max_decel),
            fmt_sig(r.max_jerk),
            r.min_margin.map(fmt_sig).unwrap_or_else(|| "-".into()),
            r.collision,
            r.fallback_count
        );
        return Ok(());
    };
    let runs: Vec<(f64, String)> = sweep.0.iter().map(|&p| (p, format!("p_exist_{}", fmt_sig(p)))).collect();
    let results: Vec<Result<RunRecord, PlannerError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(p, name)| {
                let variant = scenario.with_existence(*p);
                let dir = out.join(name);
                let duration = args.duration;
                scope.spawn(move || simulate_one(&variant, duration, Some(*p), &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(runs.len());
    for ((_, name), r) in runs.iter().zip(results) {
        rows.push((r?, name.clone()));
    }
    output::write_summary(&out.join("summary.csv"), &rows)?;
    for (r, name) in &rows {
        println!(
            "{name}: max decel {}, min margin {}, collision {}",
            fmt_sig(r.max_decel),
            r.min_margin.map(fmt_sig).unwrap_or_else(|| "-".into()),
            r.collision
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan(args) => plan(args),
        Command::Simulate(args) => simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
