use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use dufm_core::metrics::layer_metrics;
use dufm_core::model::{forward, gradient, loss, ParamsFile};
use dufm_core::oracles::{verify, Lemma};
use dufm_core::theory::{construct_collapsed_solution, theoretical_optimum};
use dufm_core::trainer::{ablate_to_dir, train, write_run};
use dufm_core::{AblationConfig, DufmDims, Error, LayerMetrics, LossBreakdown, RegConfig, TrainConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_REGIME: u8 = 3;

/// Deep unconstrained features model toolkit.
#[derive(Parser)]
#[command(name = "dufm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run full-batch gradient descent and write a run directory.
    Train(TrainArgs),
    /// Print the closed-form global optimum as JSON.
    Optimum(OptimumArgs),
    /// Run lemma oracles and print one JSON report per lemma.
    Verify(VerifyArgs),
    /// Build the collapsed optimal solution and certify it.
    Construct(ConstructArgs),
    /// Run a Cartesian hyper-parameter sweep.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OptimumArgs {
    #[arg(long)]
    layers: usize,
    /// Samples per class.
    #[arg(long)]
    n: usize,
    #[arg(long = "lambda-h")]
    lambda_h: f64,
    /// One value (broadcast) or exactly `layers` comma-separated values.
    #[arg(long = "lambda-w", value_delimiter = ',', required = true)]
    lambda_w: Vec<f64>,
    /// Layer width used when the optimum depends on it (it does not).
    #[arg(long, default_value_t = 2)]
    width: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Lemma name or `all`.
    #[arg(long, default_value = "all")]
    lemma: String,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides each lemma's default tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct ConstructArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for `params.json` and `report.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Model description accepted by `construct`: either a bare `{dims, reg}`
/// document or a full training config.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    dims: DufmDims,
    reg: RegConfig,
}

#[derive(Serialize)]
struct ConstructReport {
    loss: LossBreakdown,
    optimum: f64,
    gap: f64,
    relative_gap: f64,
    gradient_norm: f64,
    certified: bool,
    layers: Vec<LayerMetrics>,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } => EXIT_DIVERGED,
            Error::RegimeMismatch { .. } => EXIT_REGIME,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.into() }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{text}");
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut config: TrainConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    fs::create_dir_all(&args.out).map_err(Error::from)?;
    let result = train(&config)?;
    write_run(&args.out, &result)?;
    info!("final loss {:.10e}, gap {:.3e}", result.final_loss, result.optimum_gap);
    Ok(())
}

fn cmd_optimum(args: OptimumArgs) -> Result<(), Failure> {
    let lambda_w = match args.lambda_w.len() {
        1 => vec![args.lambda_w[0]; args.layers],
        k if k == args.layers => args.lambda_w,
        k => return Err(fail(format!("--lambda-w takes 1 or {} values, got {k}", args.layers))),
    };
    let dims = DufmDims::uniform(args.layers, args.width, args.n)?;
    let reg = RegConfig::new(args.lambda_h, lambda_w)?;
    print_json(&theoretical_optimum(&dims, &reg)?)
}

fn cmd_verify(args: VerifyArgs) -> Result<bool, Failure> {
    let lemmas: Vec<Lemma> = if args.lemma == "all" {
        Lemma::ALL.to_vec()
    } else {
        vec![args.lemma.parse().map_err(|e: Error| fail(e.to_string()))?]
    };
    let mut all_passed = true;
    for lemma in lemmas {
        info!("verifying {lemma}");
        let report = verify(lemma, args.trials, args.seed, args.tol)?;
        all_passed &= report.passed;
        println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    }
    Ok(all_passed)
}

fn load_model_config(path: &Path) -> Result<(DufmDims, RegConfig), Failure> {
    let value: serde_json::Value = read_json(path)?;
    let is_train = value.get("lr").is_some() || value.get("steps").is_some();
    let (dims, reg) = if is_train {
        let c: TrainConfig = serde_json::from_value(value).map_err(|e| fail(format!("{}: {e}", path.display())))?;
        (c.dims, c.reg)
    } else {
        let c: ModelConfig = serde_json::from_value(value).map_err(|e| fail(format!("{}: {e}", path.display())))?;
        (c.dims, c.reg)
    };
    dims.validate()?;
    reg.validate(&dims)?;
    Ok((dims, reg))
}

fn certify(layers: &[LayerMetrics]) -> bool {
    let small = |m: dufm_core::Metric| m.value().is_some_and(|v| v.abs() <= 1e-8);
    let unit = |m: dufm_core::Metric| m.value().is_some_and(|v| (v - 1.0).abs() <= 1e-6);
    layers.iter().all(|m| {
        small(m.dnc1_pre)
            && small(m.dnc1_post)
            && (m.layer < 2 || (m.dnc3.abs() <= 1e-8 && unit(m.dnc2_post)))
            && (m.layer < 3 || unit(m.dnc2_pre))
    })
}

fn cmd_construct(args: ConstructArgs) -> Result<bool, Failure> {
    let (dims, reg) = load_model_config(&args.config)?;
    let params = construct_collapsed_solution(&dims, &reg)?;
    let optimum = theoretical_optimum(&dims, &reg)?.optimal_loss;
    let breakdown = loss(&params, &dims, &reg)?;
    let grad = gradient(&params, &dims, &reg)?;
    let trace = forward(&params, &dims)?;
    let layers = layer_metrics(&params, &dims, &trace)?;
    let gap = breakdown.total - optimum;
    let relative_gap = gap.abs() / optimum;
    let certified = relative_gap < 1e-8 && certify(&layers);
    let report = ConstructReport {
        loss: breakdown,
        optimum,
        gap,
        relative_gap,
        gradient_norm: grad.norm_sq().sqrt(),
        certified,
        layers,
    };
    fs::create_dir_all(&args.out).map_err(Error::from)?;
    let file = ParamsFile { dims, seed: None, matrices: params };
    fs::write(args.out.join("params.json"), serde_json::to_string(&file).map_err(Error::from)? + "\n")
        .map_err(Error::from)?;
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    fs::write(args.out.join("report.json"), text.clone() + "\n").map_err(Error::from)?;
    println!("{text}");
    Ok(certified)
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Failure> {
    let config: AblationConfig = read_json(&args.config)?;
    let runs = ablate_to_dir(&config, &args.out, args.jobs)?;
    info!("{} runs written to {}", runs.len(), args.out.display());
    Ok(())
}

fn init_logging() {
    let level = match std::env::var("DUFM_LOG").as_deref() {
        Ok("quiet") => "off",
        Ok("info") => "info",
        Ok("debug") => "debug",
        _ => "warn",
    };
    env_logger::Builder::new().parse_filters(level).target(env_logger::Target::Stderr).init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Optimum(a) => cmd_optimum(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Construct(a) => cmd_construct(a),
        Command::Ablate(a) => cmd_ablate(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
