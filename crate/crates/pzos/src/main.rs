//! Command-line front end for the experiment harness.
//!
//! Exit codes: 0 success, 1 usage error, 2 solver failure, 3 built-in
//! acceptance-check failure (with --check).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use pzos::error::Error;
use pzos::goldstein;
use pzos::harness::{self, io, ExperimentSpec};
use pzos::optimizer::{self, Algorithm, RunConfig, StepSchedule};
use pzos::problem::Sense;
use pzos::routing;
use pzos::sampling::{derive_stream_id, RngStream};
use pzos::security;

#[derive(Parser)]
#[command(name = "pzos", version, about = "Gradient-free bilevel optimization toolkit")]
struct Cli {
    /// Run the built-in acceptance self-check and exit (code 3 on failure).
    #[arg(long, global = true)]
    check: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benchmark instance files.
    Gen(GenArgs),
    /// Run one algorithm on one instance file; writes a trajectory CSV.
    Run(RunArgs),
    /// Paired comparison suite from a spec file.
    Suite(SuiteArgs),
    /// Estimator second-moment sweep across problem dimensions.
    Variance(VarianceArgs),
    /// Batch-size sweep with oracle-call-aligned outputs.
    Batch(SuiteArgs),
    /// Smoothing-radius sweep.
    Mu(SuiteArgs),
    /// Security-game dimension profile at snapshot iterations.
    Dims(DimsArgs),
    /// Print the 1-D stationarity tables for the built-in examples.
    GoldsteinDemo(GoldsteinArgs),
    /// Routing suite with the nonnegativity projection enabled.
    Constrained(SuiteArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Instance family: routing or security.
    #[arg(long)]
    suite: String,
    #[arg(long, default_value_t = 5)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    /// Target count range for security instances, e.g. 2,100.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    targets: Option<Vec<usize>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    /// Constant step size; overrides the suite default.
    #[arg(long)]
    alpha: Option<f64>,
    /// Diminishing step constant c (alpha_t = c / sqrt(t + 1)).
    #[arg(long, conflicts_with = "alpha")]
    step_c: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream_id: u64,
    #[arg(long)]
    project_nonnegative: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SuiteArgs {
    /// Experiment spec file (TOML).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VarianceArgs {
    /// Problem dimensions, e.g. 25,50,100.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 3500)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DimsArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Dimension buckets, e.g. 50,100,150.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    instances_per_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GoldsteinArgs {
    #[arg(long, default_value_t = 50)]
    grid_points: usize,
    #[arg(long, default_value_t = 2.0)]
    delta_max: f64,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success codes
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    if cli.check {
        return match self_check() {
            Ok(()) => {
                println!("self-check: all checks passed");
                ExitCode::SUCCESS
            }
            Err(msg) => {
                eprintln!("self-check FAILED: {msg}");
                ExitCode::from(3)
            }
        };
    }

    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (or --check); see --help");
        return ExitCode::from(1);
    };

    match dispatch(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidDimension | Error::InvalidMu(_)
                | Error::Parse(_) | Error::Io(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Suite(args) => cmd_suite(args, SuiteMode::Plain),
        Command::Batch(args) => cmd_suite(args, SuiteMode::Batch),
        Command::Mu(args) => cmd_mu(args),
        Command::Constrained(args) => cmd_suite(args, SuiteMode::Constrained),
        Command::Variance(args) => cmd_variance(args),
        Command::Dims(args) => cmd_dims(args),
        Command::GoldsteinDemo(args) => cmd_goldstein(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), Error> {
    std::fs::create_dir_all(&args.out)?;
    match args.suite.as_str() {
        "routing" => {
            for idx in 0..args.count {
                let sid = derive_stream_id(&[args.master_seed, 1, idx as u64]);
                let mut rng = RngStream::new(args.master_seed, sid);
                let inst = routing::generate_routing_instance(
                    &mut rng,
                    &routing::RoutingGenParams::default(),
                )?;
                let path = args.out.join(format!("routing-{idx:03}.toml"));
                io::write_instance(&path, &io::InstanceDoc::Routing(inst))?;
                println!("wrote {}", path.display());
            }
        }
        "security" => {
            let (lo, hi) = match args.targets.as_deref() {
                Some([lo, hi]) => (*lo, *hi),
                None => (2, 100),
                _ => return Err(Error::InvalidConfig("targets wants two values".into())),
            };
            for idx in 0..args.count {
                let sid = derive_stream_id(&[args.master_seed, 1, idx as u64]);
                let mut rng = RngStream::new(args.master_seed, sid);
                let n = rng.uniform_int(lo as u64, hi as u64) as usize;
                let inst = security::generate_security_instance(&mut rng, n)?;
                let path = args.out.join(format!("security-{idx:03}.toml"));
                io::write_instance(&path, &io::InstanceDoc::Security(inst))?;
                println!("wrote {}", path.display());
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown suite '{other}' (expected routing|security)"
            )))
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let instance = io::read_instance(&args.instance)?;
    let step = if let Some(alpha) = args.alpha {
        StepSchedule::Constant { alpha }
    } else if let Some(c) = args.step_c {
        StepSchedule::InverseSqrt { c }
    } else {
        instance.default_step()
    };
    let config = RunConfig {
        algorithm: args.algorithm,
        batch_q: args.q,
        iterations: args.iterations.unwrap_or_else(|| instance.default_iterations()),
        mu: args.mu.unwrap_or_else(|| instance.default_mu()),
        step,
        project_nonnegative: args.project_nonnegative,
        seed: args.seed,
        stream_id: args.stream_id,
        sense: instance.sense(),
        x0: instance.initial_point(),
    };
    let trajectory = instance.execute(&config)?;
    let normalized = optimizer::normalized_objective(&[&trajectory])?;

    let id = args
        .instance
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instance".into());
    write_single_trajectory(&args.out, &id, args.algorithm, args.q, &trajectory, &normalized.series[0])?;
    let best = match config.sense {
        Sense::Maximize => trajectory
            .objective_values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max),
        Sense::Minimize => trajectory
            .objective_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min),
    };
    println!(
        "{} iterations, {} algorithmic oracle calls (+{} instrumentation), best objective {best:.6}",
        trajectory.completed_iterations(),
        trajectory.oracle_calls_cumulative.last().unwrap(),
        trajectory.instrumentation_calls,
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn write_single_trajectory(
    path: &Path,
    instance_id: &str,
    algorithm: Algorithm,
    q: usize,
    traj: &optimizer::Trajectory,
    normalized: &[f64],
) -> Result<(), Error> {
    use std::fmt::Write as _;
    let mut out = String::new();
    out.push_str(io::TRAJECTORY_HEADER);
    out.push('\n');
    let horizon = traj.completed_iterations();
    for t in 0..=horizon {
        let (grad, step, proj) = if t < horizon {
            (
                format!("{}", traj.gradient_norms[t]),
                format!("{}", traj.step_sizes[t]),
                if traj.projected[t] { "1" } else { "0" }.to_string(),
            )
        } else {
            (String::new(), String::new(), String::new())
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            instance_id,
            algorithm,
            q,
            t,
            traj.oracle_calls_cumulative[t],
            traj.objective_values[t],
            normalized[t],
            grad,
            step,
            proj
        )
        .expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

enum SuiteMode {
    Plain,
    Batch,
    Constrained,
}

fn cmd_suite(args: SuiteArgs, mode: SuiteMode) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.spec)?;
    let spec = ExperimentSpec::from_toml_str(&text)?;
    let start = Instant::now();
    let result = match mode {
        SuiteMode::Plain | SuiteMode::Batch => harness::run_paired_suite(&spec)?,
        SuiteMode::Constrained => harness::constrained_routing_suite(&spec)?,
    };
    io::write_suite_outputs(&args.out, &result, start.elapsed().as_secs_f64())?;
    report_suite(&result);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_mu(args: SuiteArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.spec)?;
    let spec = ExperimentSpec::from_toml_str(&text)?;
    let start = Instant::now();
    let sweep = harness::mu_sensitivity(&spec)?;
    for (mu, result) in &sweep {
        let sub = args.out.join(format!("mu_{mu}"));
        io::write_suite_outputs(&sub, result, start.elapsed().as_secs_f64())?;
        println!("mu = {mu}:");
        report_suite(result);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_variance(args: VarianceArgs) -> Result<(), Error> {
    let rows = harness::variance_sweep(
        &args.dims,
        args.samples,
        args.master_seed,
        args.workers,
        args.mu,
    )?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    io::write_variance_csv(&args.out, &rows)?;
    println!("dx    estimator  mean||g||^2      stderr");
    for r in &rows {
        println!(
            "{:<5} {:<9} {:<16.6} {:.6}",
            r.dx, r.estimator.to_string(), r.mean_sq_norm, r.stderr
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_dims(args: DimsArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.spec)?;
    let spec = ExperimentSpec::from_toml_str(&text)?;
    let rows = harness::dimension_profile(&spec, &args.dims, args.instances_per_dim)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    io::write_dimension_profile_csv(&args.out, &rows)?;
    println!("n     algorithm  t     median    min       max");
    for r in &rows {
        println!(
            "{:<5} {:<10} {:<5} {:<9.4} {:<9.4} {:<9.4}",
            r.n,
            format!("{}_q{}", r.algorithm, r.q),
            r.snapshot,
            r.median,
            r.min,
            r.max
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_goldstein(args: GoldsteinArgs) -> Result<(), Error> {
    if args.grid_points == 0 || !(args.delta_max > 0.0) {
        return Err(Error::InvalidConfig("need a nonempty positive delta grid".into()));
    }
    let deltas: Vec<f64> = (1..=args.grid_points)
        .map(|k| args.delta_max * k as f64 / args.grid_points as f64)
        .collect();
    let mut csv = String::from("example,delta,full_lo,full_hi,full_gap,partial_lo,partial_hi,partial_gap\n");
    for demo in [
        goldstein::demo_quadratic_plus_kink(),
        goldstein::demo_kink_minus_quadratic(),
    ] {
        let rows = goldstein::demo_table(&demo, &deltas)?;
        println!("\n{} at x = {}", demo.name, demo.center);
        println!(
            "{:>8}  {:>22}  {:>9}  {:>22}  {:>11}",
            "delta", "full interval", "full gap", "partial interval", "partial gap"
        );
        for r in &rows {
            println!(
                "{:>8.4}  [{:>9.4}, {:>9.4}]  {:>9.4}  [{:>9.4}, {:>9.4}]  {:>11.4}",
                r.delta, r.full.lo, r.full.hi, r.full_gap, r.partial.lo, r.partial.hi, r.partial_gap
            );
            use std::fmt::Write as _;
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                demo.name, r.delta, r.full.lo, r.full.hi, r.full_gap, r.partial.lo, r.partial.hi, r.partial_gap
            )
            .expect("write to string");
        }
    }
    if let Some(path) = args.csv {
        std::fs::write(&path, csv)?;
        println!("\nwrote {}", path.display());
    }
    Ok(())
}

fn report_suite(result: &harness::SuiteResult) {
    println!(
        "instances: {} included, {} excluded",
        result.records.len(),
        result.exclusions.len()
    );
    for excl in &result.exclusions {
        println!("  excluded {}: {}", excl.instance_id, excl.reason);
    }
    let horizon = result.aggregates.iter().map(|r| r.t).max().unwrap_or(0);
    for &algo in &result.spec.algorithms {
        if let Some(p50) = result.median(algo.algorithm, algo.q, horizon) {
            println!(
                "  {}_q{}: final median normalized objective {p50:.4}",
                algo.algorithm, algo.q
            );
        }
    }
    let activations: usize = result
        .records
        .iter()
        .flat_map(|r| r.runs.iter())
        .map(|r| r.trajectory.projection_activations())
        .sum();
    if activations > 0 {
        println!("  projection activated {activations} times across all runs");
    }
}

/// Fast subset of the acceptance checks: exact 1-D stationarity values,
/// two-link equilibria, attacker KKT certificates, estimator identities.
fn self_check() -> Result<(), String> {
    use pzos::problem::FollowerOracle;

    // exact stationarity tables
    let d1 = goldstein::demo_quadratic_plus_kink();
    for k in 1..=50 {
        let delta = 1.5 * k as f64 / 50.0;
        let full = goldstein::goldstein_interval(&d1.composite, 0.0, delta)
            .map_err(|e| e.to_string())?;
        if (full.lo - (-2.0 * delta - 3.0)).abs() > 1e-9
            || (full.hi - (2.0 * delta - 1.0)).abs() > 1e-9
        {
            return Err(format!("full interval wrong at delta {delta}"));
        }
        let partial = goldstein::partial_goldstein_interval(
            d1.fx_grad, &d1.fy_grad, &d1.ystar, 0.0, delta,
        )
        .map_err(|e| e.to_string())?;
        if (partial.lo + 3.0).abs() > 1e-9 || (partial.hi + 1.0).abs() > 1e-9 {
            return Err(format!("partial interval wrong at delta {delta}"));
        }
    }

    // closed-form two-link equilibria
    let two_link = routing::RoutingInstance {
        vertices: 2,
        edges: vec![
            routing::Edge { tail: 0, head: 1, a: 1.0, b: 1.0 },
            routing::Edge { tail: 0, head: 1, a: 1.0, b: 1.0 },
        ],
        commodities: vec![routing::Commodity {
            origin: 0,
            destination: 1,
            demand: 4.0,
            sensitivity: 1.0,
        }],
        lambda: 1.0,
        seed: 0,
    };
    for (tolls, want) in [
        ([0.0, 0.0], [2.0, 2.0]),
        ([2.0, 0.0], [1.0, 3.0]),
        ([10.0, 0.0], [0.0, 4.0]),
    ] {
        let flow = routing::wardrop_equilibrium(&two_link, &tolls, 1e-8)
            .map_err(|e| e.to_string())?;
        for e in 0..2 {
            if (flow.aggregate[e] - want[e]).abs() > 1e-5 {
                return Err(format!(
                    "two-link flow {:?} at tolls {tolls:?}, want {want:?}",
                    flow.aggregate
                ));
            }
        }
    }

    // attacker KKT residuals on random instances
    for seed in 0..5u64 {
        let mut rng = RngStream::new(seed, 0);
        let inst =
            security::generate_security_instance(&mut rng, 12).map_err(|e| e.to_string())?;
        let x0 = security::initial_defense(&inst);
        let resp =
            security::attacker_best_response(&inst, &x0, 1e-8).map_err(|e| e.to_string())?;
        if resp.kkt_residual > 1e-6 {
            return Err(format!("KKT residual {} on seed {seed}", resp.kkt_residual));
        }
    }

    // paired-noise identity across algorithms
    let mut rng = RngStream::new(33, 0);
    let inst = routing::generate_routing_instance(
        &mut rng,
        &routing::RoutingGenParams {
            vertices: (6, 8),
            edges: (10, 14),
            commodities: (2, 2),
        },
    )
    .map_err(|e| e.to_string())?;
    let oracle = routing::RoutingOracle::new(&inst);
    let leader = routing::RevenueObjective { instance: &inst };
    let mut config = RunConfig {
        algorithm: Algorithm::Pzos,
        batch_q: 1,
        iterations: 5,
        mu: 0.5,
        step: StepSchedule::Constant { alpha: 0.7 / oracle.leader_dim() as f64 },
        project_nonnegative: false,
        seed: 4,
        stream_id: 9,
        sense: Sense::Maximize,
        x0: routing::initial_tolls(&inst),
    };
    let a = optimizer::run(&leader, &oracle, &config).map_err(|e| e.to_string())?;
    config.algorithm = Algorithm::Zos;
    let b = optimizer::run(&leader, &oracle, &config).map_err(|e| e.to_string())?;
    if a.direction_hash != b.direction_hash {
        return Err("paired runs consumed different noise".into());
    }
    Ok(())
}
