//! Command-line front end: forward simulation, backward solves, convergence
//! sweeps and rate fits.

use clap::{Args, Parser, Subcommand, ValueEnum};
use pathfbsde::bench::{
    fit_rate, read_records_csv, run_sweep, write_manifest, write_records_csv, FitAxis, SweepSpec,
};
use pathfbsde::condexp::FeatureConfig;
use pathfbsde::euler::simulate;
use pathfbsde::picard::{
    solve_implicit, solve_picard, EstimatorConfig, EstimatorKind, SchemeConfig,
};
use pathfbsde::{problem_zoo, DiscretePath, SampleKey, TimeGrid};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pathfbsde",
    about = "Monte Carlo solver for path-dependent forward-backward SDEs and parabolic path-dependent PDEs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate Euler trajectories of the forward SDE
    Simulate(SimulateArgs),
    /// Solve the backward equation and report (Y0, Z0) with confidence bands
    Solve(SolveArgs),
    /// Run a convergence sweep from a JSON spec into records.csv + manifest.json
    Sweep(SweepArgs),
    /// Fit an error-decay rate from a records CSV
    Fit(FitArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Zoo problem name
    #[arg(long)]
    problem: String,
    /// Number of grid steps
    #[arg(long)]
    n: usize,
    /// Number of trajectories
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Path history JSON (frozen past; the grid starts where it ends)
    #[arg(long)]
    history: Option<PathBuf>,
    /// Print summary statistics instead of per-node CSV
    #[arg(long)]
    summary: bool,
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Regression,
    Nested,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: String,
    #[arg(long)]
    n: usize,
    /// Picard iteration count
    #[arg(long)]
    m: usize,
    /// Outer Monte Carlo samples
    #[arg(long)]
    samples: usize,
    #[arg(long, value_enum, default_value = "regression")]
    estimator: EstimatorArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Run the implicit backward reference scheme instead of Picard
    #[arg(long)]
    implicit: bool,
    /// Inner samples for the nested estimator
    #[arg(long, default_value_t = 64)]
    ninner: usize,
    /// Ridge parameter for the regression fits
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Comma-separated regression features (value,max,min,avg,increments:<k>)
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Draw fresh outer paths per Picard iteration instead of reusing one set
    #[arg(long)]
    fresh_paths: bool,
    /// Antithetic pairing of outer samples
    #[arg(long)]
    antithetic: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for records.csv and manifest.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// records.csv produced by `sweep`
    #[arg(long)]
    records: PathBuf,
    #[arg(long, value_enum)]
    axis: AxisArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Mesh,
    Picard,
}

fn load_history(path: &Option<PathBuf>, dim: usize) -> Result<DiscretePath, pathfbsde::Error> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let parsed: DiscretePath = serde_json::from_str(&text)?;
            DiscretePath::from_breakpoints(parsed.dim(), parsed.as_history())
        }
        None => DiscretePath::constant(vec![0.0; dim]),
    }
}

fn write_out(out: &Option<PathBuf>, text: &str) -> std::io::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), pathfbsde::Error> {
    let problem = problem_zoo(&args.problem)?;
    let cs = &problem.coefficients;
    let history = load_history(&args.history, cs.dim_x())?;
    let grid = TimeGrid::uniform(history.end_time(), problem.horizon, args.n)?;
    let root = SampleKey::new(args.seed);

    if args.summary {
        let mut sum = vec![0.0; cs.dim_x()];
        let mut sum_sq = vec![0.0; cs.dim_x()];
        let mut sup_abs_sum = 0.0;
        for p in 0..args.samples {
            let traj = simulate(cs, &history, &grid, &root.child(p as u64))?;
            let xt = traj.path.value_at(grid.horizon());
            for (c, v) in xt.iter().enumerate() {
                sum[c] += v;
                sum_sq[c] += v * v;
            }
            sup_abs_sum += traj.path.sup_norm();
        }
        let nf = args.samples as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / nf - m * m).max(0.0).sqrt())
            .collect();
        let summary = serde_json::json!({
            "problem": args.problem,
            "n": args.n,
            "samples": args.samples,
            "seed": args.seed,
            "terminal_mean": mean,
            "terminal_std": std,
            "mean_sup_norm": sup_abs_sum / nf,
        });
        write_out(
            &args.out,
            &format!("{}\n", serde_json::to_string_pretty(&summary)?),
        )?;
        return Ok(());
    }

    let mut csv = String::from("sample,t");
    for c in 0..cs.dim_x() {
        csv.push_str(&format!(",x_{c}"));
    }
    csv.push('\n');
    for p in 0..args.samples {
        let traj = simulate(cs, &history, &grid, &root.child(p as u64))?;
        for &t in grid.nodes() {
            csv.push_str(&format!("{p},{t}"));
            for v in traj.path.value_at(t) {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
    }
    write_out(&args.out, &csv)?;
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<(), pathfbsde::Error> {
    let problem = problem_zoo(&args.problem)?;
    let cs = &problem.coefficients;
    let history = load_history(&args.history, cs.dim_x())?;
    let grid = TimeGrid::uniform(history.end_time(), problem.horizon, args.n)?;
    let features = match &args.features {
        Some(names) => FeatureConfig::from_names(names)?,
        None => FeatureConfig::default(),
    };
    let config = SchemeConfig {
        grid: grid.clone(),
        iterations: args.m,
        n_outer: args.samples,
        estimator: EstimatorConfig {
            kind: match args.estimator {
                EstimatorArg::Regression => EstimatorKind::Regression,
                EstimatorArg::Nested => EstimatorKind::Nested,
            },
            n_inner: args.ninner,
            ridge: args.ridge,
            features,
        },
        seed: args.seed,
        reuse_paths: !args.fresh_paths,
        antithetic: args.antithetic,
    };
    let result = if args.implicit {
        solve_implicit(cs, &history, &grid, &config)?
    } else {
        solve_picard(cs, &history, &grid, &config)?
    };
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool, pathfbsde::Error> {
    let text = std::fs::read_to_string(&args.spec)?;
    let spec: SweepSpec = serde_json::from_str(&text)?;
    let records = run_sweep(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    write_records_csv(&records, &args.out.join("records.csv"))?;
    write_manifest(&spec, &args.out)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    for r in records.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "cell (n={}, m={}) failed: {}",
            r.n,
            r.m,
            r.error.as_deref().unwrap_or("")
        );
    }
    eprintln!(
        "{} cells, {failed} failed -> {}",
        records.len(),
        args.out.join("records.csv").display()
    );
    Ok(failed == 0)
}

fn cmd_fit(args: &FitArgs) -> Result<(), pathfbsde::Error> {
    let records = read_records_csv(&args.records)?;
    let axis = match args.axis {
        AxisArg::Mesh => FitAxis::Mesh,
        AxisArg::Picard => FitAxis::Picard,
    };
    let fit = fit_rate(&records, axis)?;
    println!("{}", serde_json::to_string_pretty(&fit)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args).map(|_| true),
        Command::Solve(args) => cmd_solve(args).map(|_| true),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Fit(args) => cmd_fit(args).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
