//! fairpart: fair geographical partitioning from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence,
//! 5 failed verification check.

use clap::{Args, Parser, Subcommand};
use fairpart::config::{load_config, RunConfig, WeightsFile};
use fairpart::costmodel::CostKind;
use fairpart::error::Error;
use fairpart::oracle::{
    duality_gap, exact_ascent, exact_gradient, lp_primal, AscentConfig, DiscreteInstance,
    GradientMode,
};
use fairpart::partition::{assign_all_sites, closed_facilities, rasterize, PartitionHandle, CLOSURE_THRESHOLD};
use fairpart::population::Population;
use fairpart::report::{cost_cdfs, evaluate, Comparison, FairnessReport};
use fairpart::solver::{self, sa_step_optimal_p, SolverState, WeightMatrix, SEED_EVAL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fairpart", version, about = "Cost-optimal fair partitioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config leaf by dotted path, e.g. --set solver.iterations=5000.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the SA solver and write weights, trace, and report.
    Solve(ConfigArgs),
    /// Evaluate the plain nearest-facility partition (w = 0).
    Baseline(ConfigArgs),
    /// Evaluate previously solved weights.
    Evaluate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Weights JSON file produced by `solve`.
        #[arg(long)]
        weights: PathBuf,
    },
    /// Exact verification on a capped discrete instance.
    Oracle {
        #[command(flatten)]
        common: ConfigArgs,
        /// Optional weights to audit against the exact optimum.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Rasterize a partition onto a grid.
    Grid {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        weights: PathBuf,
        /// Grid resolution as NXxNY, e.g. 200x150.
        #[arg(long)]
        resolution: String,
    },
    /// Combine saved reports into a comparison table (first file is the baseline).
    Compare {
        /// Report JSON files; model names are the file stems.
        reports: Vec<PathBuf>,
        /// Output CSV path (stdout when omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::DimensionMismatch(_) => 2,
        Error::NonFinite => 4,
        _ => 3,
    }
}

fn parse_sets(raw: &[String]) -> Result<Vec<(String, String)>, Error> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Config(format!("--set `{s}` is not PATH=VALUE")))
        })
        .collect()
}

fn load(common: &ConfigArgs) -> Result<RunConfig, Error> {
    load_config(&common.config, &parse_sets(&common.sets)?)
}

fn write_report(report: &FairnessReport, path: &Path) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_trace(trace: &[solver::TracePoint], path: &Path) -> Result<(), Error> {
    let mut out = String::from("n,dual_estimate,stderr,max_fairness_dev\n");
    for t in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.n, t.dual_estimate, t.stderr, t.max_fairness_dev
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Shared tail of solve/baseline/evaluate: report, per-group CDFs, site
/// table for discrete populations, closure list.
fn write_evaluation(
    config: &RunConfig,
    handle: &PartitionHandle,
    prefix: &str,
) -> Result<FairnessReport, Error> {
    let out = &config.output_dir;
    let eval_seed = config.seed.wrapping_add(SEED_EVAL);
    let report = evaluate(handle, config.solver.eval_samples, eval_seed)?;
    write_report(&report, &out.join(format!("{prefix}report.json")))?;
    let cdfs = cost_cdfs(handle, config.solver.eval_samples, eval_seed)?;
    for (z, cdf) in cdfs.iter().enumerate() {
        let mut buf = Vec::new();
        cdf.write_csv(&mut buf)?;
        std::fs::write(out.join(format!("{prefix}cdf_group_{}.csv", z + 1)), buf)?;
    }
    if matches!(handle.pop, Population::Discrete(_)) {
        let table = assign_all_sites(handle)?;
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        std::fs::write(out.join(format!("{prefix}assignment.csv")), buf)?;
    }
    let closed = closed_facilities(&report.region_shares, CLOSURE_THRESHOLD);
    let closed: Vec<String> = closed.iter().map(|k| (k + 1).to_string()).collect();
    println!("max_fairness_dev: {}", report.max_deviation);
    println!("mean_cost: {}", report.overall.mean);
    println!(
        "closed_facilities: {}",
        if closed.is_empty() {
            "none".to_string()
        } else {
            closed.join(",")
        }
    );
    Ok(report)
}

fn cmd_solve(common: &ConfigArgs) -> Result<(), Error> {
    let config = load(common)?;
    let pop = config.build_population()?;
    let cost = config.build_cost_model()?;
    let solver_config = config.build_solver_config();
    std::fs::create_dir_all(&config.output_dir)?;
    let result = solver::run(&solver_config, &pop, &cost)?;
    let weights_file = WeightsFile {
        k: result.weights.k(),
        m: result.weights.m(),
        q: result.weights.q().to_vec(),
        mode: solver_config.mode.clone(),
        w: result.weights.as_flat().to_vec(),
        seed: config.seed,
        iterations: solver_config.iterations,
        alpha: result.step_scale,
    };
    weights_file.save(&config.output_dir.join("weights.json"))?;
    write_trace(&result.trace, &config.output_dir.join("trace.csv"))?;
    println!(
        "dual_estimate: {} (stderr {})",
        result.dual_value_estimate.0, result.dual_value_estimate.1
    );
    let handle = PartitionHandle::new(result.weights.clone(), &pop, &cost)?;
    write_evaluation(&config, &handle, "")?;
    Ok(())
}

fn cmd_baseline(common: &ConfigArgs) -> Result<(), Error> {
    let config = load(common)?;
    let pop = config.build_population()?;
    let cost = config.build_cost_model()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let weights = WeightMatrix::zero(cost.k(), pop.priors());
    let handle = PartitionHandle::new(weights, &pop, &cost)?;
    write_evaluation(&config, &handle, "baseline_")?;
    Ok(())
}

fn cmd_evaluate(common: &ConfigArgs, weights_path: &Path) -> Result<(), Error> {
    let config = load(common)?;
    let pop = config.build_population()?;
    let cost = config.build_cost_model()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let weights = WeightsFile::load(weights_path)?.to_weight_matrix()?;
    let handle = PartitionHandle::new(weights, &pop, &cost)?;
    write_evaluation(&config, &handle, "")?;
    Ok(())
}

/// Exact checks on a capped instance. Returns the number of failed checks.
fn cmd_oracle(common: &ConfigArgs, weights_path: Option<&Path>) -> Result<usize, Error> {
    let config = load(common)?;
    let pop = config.build_population()?;
    let discrete = match pop {
        Population::Discrete(d) => d,
        Population::Mixture(_) => {
            return Err(Error::Config(
                "oracle verification requires a CSV population".into(),
            ))
        }
    };
    let cost = config.build_cost_model()?;
    let instance = DiscreteInstance::new(discrete, cost)?;
    let mut failures = 0usize;
    let mut check = |name: &str, pass: bool, detail: String| {
        println!("{}: {} ({detail})", name, if pass { "pass" } else { "FAIL" });
        if !pass {
            failures += 1;
        }
    };

    let lp = lp_primal(&instance, None)?;
    check(
        "lp_feasibility",
        lp.max_marginal_residual <= 1e-8,
        format!("objective {}, residual {}", lp.objective, lp.max_marginal_residual),
    );

    let ascent = exact_ascent(&instance, &AscentConfig::default())?;
    let rel_gap = (lp.objective - ascent.dual_value).abs() / lp.objective.abs().max(1e-12);
    check(
        "strong_duality",
        rel_gap <= 1e-3,
        format!("lp {}, dual {}, rel gap {rel_gap:.3e}", lp.objective, ascent.dual_value),
    );
    let weak = ascent
        .checkpoints
        .iter()
        .all(|(_, v)| lp.objective - v >= -1e-9);
    check("weak_duality", weak, format!("{} checkpoints", ascent.checkpoints.len()));

    let grad = exact_gradient(&ascent.weights, &instance, GradientMode::OptimalP, None);
    let grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    check(
        "stationarity",
        grad_norm <= 0.05,
        format!("max |gradient| {grad_norm:.3e}"),
    );

    // The mean sampled update direction at w = 0 must match the exact
    // gradient componentwise within Monte Carlo error.
    let pop = instance.population();
    let q = pop.priors().to_vec();
    let k = instance.k();
    let m = pop.group_count();
    let exact = exact_gradient(&WeightMatrix::zero(k, &q), &instance, GradientMode::OptimalP, None);
    let draws = 50_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sum = vec![0.0; k * m];
    let mut sumsq = vec![0.0; k * m];
    let mut buf = Vec::new();
    for _ in 0..draws {
        let mut state = SolverState::new(k, m, &q, 1.0, 0);
        let sample = pop.sample_joint(&mut rng);
        sa_step_optimal_p(&mut state, sample, pop, instance.cost_model(), &mut buf)?;
        for (i, v) in state.iterate.iter().enumerate() {
            sum[i] += v;
            sumsq[i] += v * v;
        }
    }
    let mut worst = 0.0f64;
    for i in 0..k * m {
        let mean = sum[i] / draws as f64;
        let var = (sumsq[i] / draws as f64 - mean * mean).max(0.0);
        let se = (var / draws as f64).sqrt();
        worst = worst.max((mean - exact[i]).abs() / (4.0 * se + 1e-12));
    }
    check(
        "gradient_unbiasedness",
        worst <= 1.0,
        format!("worst deviation {:.2} of the 4-sigma budget", worst),
    );

    if let Some(path) = weights_path {
        let audited = WeightsFile::load(path)?.to_weight_matrix()?;
        let gap = duality_gap(&instance, &audited, None)?;
        let tol = 1e-3 * lp.objective.abs().max(1e-3);
        check("audited_weights_gap", gap.abs() <= tol, format!("gap {gap:.6e}"));
    }
    Ok(failures)
}

fn cmd_grid(common: &ConfigArgs, weights_path: &Path, resolution: &str) -> Result<(), Error> {
    let config = load(common)?;
    let (nx, ny) = resolution
        .split_once('x')
        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
        .ok_or_else(|| Error::Config(format!("--resolution `{resolution}` is not NXxNY")))?;
    let pop = config.build_population()?;
    let cost = config.build_cost_model()?;
    if cost.kind == CostKind::Matrix {
        return Err(Error::Config(
            "grid export needs a geometric cost kind".into(),
        ));
    }
    std::fs::create_dir_all(&config.output_dir)?;
    let weights = WeightsFile::load(weights_path)?.to_weight_matrix()?;
    let handle = PartitionHandle::new(weights, &pop, &cost)?;
    let raster = rasterize(&handle, nx, ny)?;
    let mut buf = Vec::new();
    raster.write_csv(&mut buf)?;
    std::fs::write(config.output_dir.join("raster.csv"), buf)?;
    Ok(())
}

fn cmd_compare(reports: &[PathBuf], out: Option<&Path>) -> Result<(), Error> {
    if reports.len() < 2 {
        return Err(Error::Config("compare needs at least two report files".into()));
    }
    let mut labels = Vec::new();
    let mut parsed = Vec::new();
    for path in reports {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        labels.push(stem);
        let text = std::fs::read_to_string(path)?;
        parsed.push(serde_json::from_str(&text)?);
    }
    let comparison = Comparison::new(labels, parsed)?;
    let mut buf = Vec::new();
    comparison.write_csv(&mut buf)?;
    match out {
        Some(path) => std::fs::write(path, buf)?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(())
}

fn run() -> Result<u8, Error> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve(common) => cmd_solve(common).map(|()| 0),
        Command::Baseline(common) => cmd_baseline(common).map(|()| 0),
        Command::Evaluate { common, weights } => cmd_evaluate(common, weights).map(|()| 0),
        Command::Oracle { common, weights } => {
            let failures = cmd_oracle(common, weights.as_deref())?;
            Ok(if failures == 0 { 0 } else { 5 })
        }
        Command::Grid {
            common,
            weights,
            resolution,
        } => cmd_grid(common, weights, resolution).map(|()| 0),
        Command::Compare { reports, out } => cmd_compare(reports, out.as_deref()).map(|()| 0),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
