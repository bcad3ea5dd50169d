mod config;
mod specs;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use repsel::evaluation::{write_summary_csv, ExperimentManifest};
use repsel::model::build_kernel_model;
use repsel::verify::{run_check, Check, VerifyOptions};
use repsel::{epsilon_net_select, run_experiment, ExperimentConfig, ExperimentKind, OracleSpec, StopRule};

const EXIT_USAGE: u8 = 1;
const EXIT_INCOMPLETE: u8 = 2;
const THREADS_ENV: &str = "BANDIT_SUBSET_THREADS";

/// Representative action subsets for families of bandits.
#[derive(Parser)]
#[command(name = "repsel", version, about)]
struct Cli {
    /// Flat `key = value` file or JSON object; keys mirror long flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism; env BANDIT_SUBSET_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selection loop and print the result as JSON.
    Select(SelectArgs),
    /// Check a lemma or bound numerically and print the reports as JSON.
    Verify(VerifyArgs),
    /// Run an experiment and write CSVs plus a replay manifest.
    Experiment(ExperimentArgs),
    /// Write an action space (and optionally its kernel matrix) as CSV.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Distinct,
    Iterations,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    Exact,
    Ts,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct SelectArgs {
    /// grid:LO:HI:N | orthonormal:N | sphere:SPREAD | example1 | explicit:PATH
    #[arg(long)]
    space: String,
    /// rbf:L | gibbs; turns the space into a kernel grid.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "distinct")]
    mode: Mode,
    /// Iteration cap in distinct mode (default 1000 K).
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long, value_enum, default_value = "exact")]
    oracle: Oracle,
    #[arg(long, default_value_t = 300)]
    ts_rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct VerifyArgs {
    /// lemma1 | thm1 | thm2 | thm3 | thm5 | lemma_maxq | iid_band | widths
    check: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Upper-bound constant C.
    #[arg(long)]
    c: Option<f64>,
    /// Lower-bound constant c.
    #[arg(long)]
    c_lower: Option<f64>,
    /// Instance preset, e.g. sphere:0.05.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    #[arg(long)]
    length_scale: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct ExperimentArgs {
    /// superarm | combinatorial | sphere | gibbs
    experiment: String,
    /// Base seed; repetition r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Rerun exactly from a manifest written by a previous run.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Divisor for the number of evaluation instances.
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    eval: Option<usize>,
    /// Swept values: length scales, or spreads for sphere.
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<f64>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    oracle_rounds: Option<usize>,
    #[arg(long)]
    exploration_scale: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    duplicates_consume: Option<bool>,
    /// Record wallclock times (outputs are then no longer reproducible).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    timing: Option<bool>,
    /// Output directory (default out/<experiment>).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct GenArgs {
    #[arg(long)]
    space: String,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Action-space CSV path (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Kernel-matrix CSV path; requires --kernel.
    #[arg(long)]
    kernel_output: Option<PathBuf>,
}

/// Failure carrying its exit code.
struct Failure(u8, String);

impl From<repsel::Error> for Failure {
    fn from(e: repsel::Error) -> Self {
        Failure(EXIT_USAGE, e.to_string())
    }
}

impl From<String> for Failure {
    fn from(e: String) -> Self {
        Failure(EXIT_USAGE, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(EXIT_USAGE, e.to_string())
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    if let Err(Failure(code, msg)) = configure_threads(cli.threads).and_then(|()| dispatch(cli.command)) {
        if !msg.is_empty() {
            eprintln!("error: {msg}");
        }
        return ExitCode::from(code);
    }
    ExitCode::SUCCESS
}

fn configure_threads(flag: Option<usize>) -> Result<(), Failure> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got '{v}'"))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = flag.or(env) {
        if n == 0 {
            return Err("thread count must be positive".to_string().into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Select(a) => cmd_select(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Gen(a) => cmd_gen(a),
    }
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, format!("{text}\n"))?,
        None => quiet_pipe(writeln!(std::io::stdout().lock(), "{text}"))?,
    }
    Ok(())
}

/// A reader closing stdout early (`| head`) is not an error.
fn quiet_pipe(r: std::io::Result<()>) -> std::io::Result<()> {
    match r {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other,
    }
}

fn cmd_select(a: SelectArgs) -> Result<(), Failure> {
    let family = specs::build_family(&a.space, a.kernel.as_deref(), a.seed)?;
    let stop = match a.mode {
        Mode::Iterations => StopRule::Iterations(a.k),
        Mode::Distinct => match a.max_iterations {
            Some(max_iterations) => StopRule::DistinctCount { k: a.k, max_iterations },
            None => StopRule::distinct(a.k),
        },
    };
    let oracle = match a.oracle {
        Oracle::Exact => OracleSpec::Exact,
        Oracle::Ts => OracleSpec::ThompsonApprox { rounds: a.ts_rounds },
    };
    let result = epsilon_net_select(&family, oracle, stop, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    emit(&serde_json::to_string_pretty(&result).map_err(|e| e.to_string())?, a.output.as_ref())?;
    if !result.complete {
        return Err(Failure(
            EXIT_INCOMPLETE,
            format!("only {} distinct actions after {} iterations", result.chosen.len(), result.iterations_used),
        ));
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    let check = Check::parse(&a.check)?;
    let mut opts = VerifyOptions::for_check(check);
    opts.seed = a.seed;
    if let Some(p) = &a.preset {
        match p.split_once(':') {
            Some(("sphere", s)) => {
                opts.spread = s.parse().map_err(|_| format!("invalid spread in preset '{p}'"))?
            }
            _ => return Err(format!("unknown preset '{p}' (expected sphere:SPREAD)").into()),
        }
    }
    macro_rules! set {
        ($($field:ident <- $value:expr),* $(,)?) => {
            $(if let Some(v) = $value { opts.$field = v; })*
        };
    }
    set!(
        eps <- a.eps,
        k <- a.k,
        runs <- a.runs,
        m <- a.m,
        c_upper <- a.c,
        c_lower <- a.c_lower,
        samples <- a.samples,
        n <- a.n,
        subset_size <- a.subset_size,
        sizes <- a.sizes,
        eps_list <- a.eps_list,
        length_scale <- a.length_scale,
        grid_points <- a.grid_points,
    );
    let report = run_check(check, &opts)?;
    emit(&serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?, a.output.as_ref())?;
    if !report.passed {
        return Err(Failure(EXIT_INCOMPLETE, format!("check {} did not hold", report.check)));
    }
    Ok(())
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let kind = ExperimentKind::parse(&a.experiment)?;
    let mut cfg = match &a.replay {
        Some(path) => {
            let manifest = ExperimentManifest::load(path)?;
            if manifest.config.experiment != kind {
                return Err(format!(
                    "manifest is for experiment '{}', not '{}'",
                    manifest.config.experiment.name(),
                    kind.name()
                )
                .into());
            }
            manifest.config
        }
        None => {
            let seed = a
                .seed
                .ok_or_else(|| "--seed is required for experiments".to_string())?;
            ExperimentConfig::preset(kind, seed)
        }
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    macro_rules! set {
        ($($field:ident <- $value:expr),* $(,)?) => {
            $(if let Some(v) = $value.clone() { cfg.$field = v; })*
        };
    }
    set!(
        scale <- a.scale,
        repetitions <- a.reps,
        eval_instances <- a.eval,
        params <- a.params,
        k <- a.k,
        grid_points <- a.grid_points,
        policy_rounds <- a.rounds,
        oracle_rounds <- a.oracle_rounds,
        exploration_scale <- a.exploration_scale,
        duplicates_consume <- a.duplicates_consume,
        timing <- a.timing,
    );
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let cfg = experiment_config(&a)?;
    let dir = a
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()));
    let output = run_experiment(&cfg)?;
    output
        .write_to(&dir)
        .map_err(|e| format!("cannot write to {}: {e}", dir.display()))?;
    let mut buf = Vec::new();
    write_summary_csv(&output.summary(), &mut buf)?;
    writeln!(buf, "# wrote {}", dir.display())?;
    quiet_pipe(std::io::stdout().lock().write_all(&buf))?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let space = specs::build_space(&specs::parse_space(&a.space)?, a.seed)?;
    let mut buf = Vec::new();
    space.write_csv(&mut buf)?;
    match &a.output {
        Some(path) => fs::write(path, &buf)?,
        None => quiet_pipe(std::io::stdout().write_all(&buf))?,
    }
    match (&a.kernel, &a.kernel_output) {
        (Some(k), Some(path)) => {
            let model = build_kernel_model(space, specs::parse_kernel(k)?)?;
            let mut buf = Vec::new();
            model.write_kernel_csv(&mut buf)?;
            fs::write(path, buf)?;
        }
        (None, Some(_)) => return Err("--kernel-output requires --kernel".to_string().into()),
        _ => {}
    }
    Ok(())
}
