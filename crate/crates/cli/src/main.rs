//! `ddc`: theory curves, interpolation thresholds and simulation sweeps.
//!
//! Exit status: 0 on success, 1 for bad arguments or configuration, 2 when a
//! single-point computation fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddc_core::experiment::{
    run_sweep, simulate_point, theory_point, threshold_curve, threshold_curve_csv, write_rows_csv,
    ExperimentConfig, KappaGrid, SimMethod, SweepRow, Tolerances, TrialResult,
};
use ddc_core::phase::solve_kappa_star;
use ddc_core::{DataModelSpec, Error, FeatureMap, ModelKind, QuadratureSpec};

#[derive(Parser)]
#[command(
    name = "ddc",
    version,
    about = "Asymptotic risk of logistic regression and max-margin classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Asymptotic predictions at one kappa or on a grid.
    Theory(TheoryArgs),
    /// Interpolation threshold and the curve g(kappa).
    Phase(PhaseArgs),
    /// Monte Carlo trials at one kappa.
    Simulate(SimulateArgs),
    /// Theory and simulation over a kappa grid from a JSON config.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MapKind {
    Linear,
    Poly,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gd,
    Svm,
    Both,
}

#[derive(Args)]
struct ProblemArgs {
    /// Data model: logistic or gm.
    #[arg(long)]
    model: ModelKind,
    #[arg(long, value_enum)]
    map: MapKind,
    /// Total signal strength.
    #[arg(long)]
    r: f64,
    /// Linear map: ratio of all features to samples.
    #[arg(long)]
    zeta: Option<f64>,
    /// Polynomial map exponent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Quadrature nodes per dimension.
    #[arg(long, default_value_t = 64)]
    nodes: usize,
}

impl ProblemArgs {
    fn build(&self) -> Result<(DataModelSpec, FeatureMap, QuadratureSpec), Error> {
        let model = DataModelSpec::new(self.model, self.r)?;
        let map = match (self.map, self.zeta, self.gamma) {
            (MapKind::Linear, Some(z), None) => FeatureMap::linear(self.r, z)?,
            (MapKind::Poly, None, Some(g)) => FeatureMap::polynomial(self.r, g)?,
            (MapKind::Linear, _, _) => {
                return Err(Error::InvalidParameter(
                    "--map linear needs --zeta only".into(),
                ))
            }
            (MapKind::Poly, _, _) => {
                return Err(Error::InvalidParameter(
                    "--map poly needs --gamma only".into(),
                ))
            }
        };
        Ok((model, map, QuadratureSpec::new(self.nodes)?))
    }
}

#[derive(Args)]
struct TheoryArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(
        long,
        conflicts_with = "kappa_grid",
        required_unless_present = "kappa_grid"
    )]
    kappa: Option<f64>,
    /// start:stop:step
    #[arg(long)]
    kappa_grid: Option<KappaGrid>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhaseArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Points on the g(kappa) curve.
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Write the curve here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    kappa: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

fn config_error(e: Error) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn solver_error(message: String) -> Failure {
    Failure { code: 2, message }
}

/// Configuration problems exit with 1, numerical failures with 2.
fn classify(e: Error) -> Failure {
    match e {
        Error::InvalidParameter(_)
        | Error::OutOfDomain { .. }
        | Error::BadShape { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => config_error(e),
        other => solver_error(other.to_string()),
    }
}

fn run_theory(args: &TheoryArgs) -> Result<(), Failure> {
    let (model, map, quad) = args.problem.build().map_err(config_error)?;
    let kappas = match (&args.kappa, &args.kappa_grid) {
        (Some(k), None) => vec![*k],
        (None, Some(g)) => g.points(),
        _ => unreachable!("clap enforces exactly one"),
    };
    for &k in &kappas {
        if !map.contains(k) {
            return Err(config_error(Error::OutOfDomain {
                kappa: k,
                domain: map.domain(),
            }));
        }
    }
    let kappa_star = solve_kappa_star(&model, &map, &quad)
        .map_err(classify)?
        .kappa_star;
    let tol = Tolerances::default();
    let mut rows = Vec::with_capacity(kappas.len());
    for &k in &kappas {
        let point = theory_point(&model, &map, k, kappa_star, &quad, &tol.ml, &tol.svm_theory)
            .map_err(classify)?;
        rows.push(SweepRow::new(&point, &[], 0, 0));
    }
    write_rows_csv(&args.out, &rows).map_err(config_error)?;
    if args.kappa.is_some() && rows[0].risk_theory.is_none() {
        return Err(solver_error(format!(
            "no prediction at kappa = {}: {}",
            rows[0].kappa, rows[0].solver_flags
        )));
    }
    Ok(())
}

fn run_phase(args: &PhaseArgs) -> Result<(), Failure> {
    let (model, map, quad) = args.problem.build().map_err(config_error)?;
    if args.points == 0 {
        return Err(config_error(Error::InvalidParameter(
            "--points must be positive".into(),
        )));
    }
    let phase = solve_kappa_star(&model, &map, &quad).map_err(classify)?;
    println!("kappa_star = {:.16e}", phase.kappa_star);
    let curve = threshold_curve(&model, &map, args.points, &quad).map_err(classify)?;
    let text = threshold_curve_csv(&curve);
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| config_error(e.into()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn trial_csv(path: &Path, rows: &[TrialResult]) -> Result<(), Error> {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    let mut out =
        String::from("trial,stream,p,separable,train_error,risk,cosine,method,iterations,hit_cap,separability_disagreement\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.16e},{},{},{},{},{},{}",
            r.trial,
            r.stream,
            r.p,
            r.separable,
            r.train_error,
            f(r.risk),
            f(r.cosine),
            r.method,
            r.iterations,
            r.hit_cap,
            r.separability_disagreement
        );
    }
    fs::write(path, out)?;
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let (model, map, quad) = args.problem.build().map_err(config_error)?;
    if args.trials == 0 || args.n == 0 {
        return Err(config_error(Error::InvalidParameter(
            "--n and --trials must be positive".into(),
        )));
    }
    if !map.contains(args.kappa) {
        return Err(config_error(Error::OutOfDomain {
            kappa: args.kappa,
            domain: map.domain(),
        }));
    }
    let method = match args.method {
        MethodArg::Gd => SimMethod::Gd,
        MethodArg::Svm => SimMethod::Svm,
        MethodArg::Both => SimMethod::Both,
    };
    let rows = simulate_point(
        &model,
        &map,
        args.n,
        args.kappa,
        args.seed,
        args.trials,
        method,
        &Tolerances::default(),
        &quad,
        args.threads,
    )
    .map_err(classify)?;
    trial_csv(&args.out, &rows).map_err(config_error)?;
    let risks: Vec<f64> = rows.iter().filter_map(|r| r.risk).collect();
    let sep = rows.iter().filter(|r| r.separable).count() as f64 / rows.len() as f64;
    if !risks.is_empty() {
        println!(
            "risk_mean = {:.6}",
            risks.iter().sum::<f64>() / risks.len() as f64
        );
    }
    println!("sep_fraction = {sep:.6}");
    Ok(())
}

fn run_sweep_cmd(args: &SweepArgs) -> Result<(), Failure> {
    let config = ExperimentConfig::from_json_file(&args.config).map_err(config_error)?;
    let output = run_sweep(&config, args.threads).map_err(classify)?;
    let (csv_path, json_path) = output.write(&config, &args.out_dir).map_err(config_error)?;
    println!("kappa_star = {:.16e}", output.kappa_star);
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Theory(a) => run_theory(a),
        Command::Phase(a) => run_phase(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Sweep(a) => run_sweep_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
