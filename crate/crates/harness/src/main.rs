use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latstruct_harness::estimators::{EstimatorsConfig, ProblemDomain};
use latstruct_harness::game::{GameConfig, GameEstimator};
use latstruct_harness::matching::MatchConfig;
use latstruct_harness::output::emit;
use latstruct_harness::treeskew::TreeSkewConfig;
use latstruct_harness::{estimators, game, gradcheck, matching, treeskew};
use latstruct_harness::{Artifact, Format, Result, RunConfig};

/// Gradient checks, estimator benchmarks and desk-scale demos for latstruct.
///
/// Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error.
#[derive(Parser, Debug)]
#[command(name = "latstruct", version)]
struct Cli {
    /// Seed for every random draw in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Worker threads for independent replicates.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare every exact pullback against central finite differences (JSON).
    Gradcheck,
    /// Bias, variance and decoder calls of each gradient estimator (CSV).
    Estimators(EstimatorsArgs),
    /// Train the communication game and log learning curves (CSV).
    Game(GameArgs),
    /// Exact shift-reduce distribution over binary trees (CSV).
    Treeskew(TreeSkewArgs),
    /// Sinkhorn and SparseMAP alignments versus the hard matching (JSON).
    Match(MatchArgs),
}

#[derive(Args, Debug)]
struct EstimatorsArgs {
    #[arg(long, value_enum, default_value_t = ProblemDomain::OneOfK)]
    domain: ProblemDomain,
    /// K for one-of-K, D (at most 4) for bit vectors.
    #[arg(long, default_value_t = 10)]
    size: usize,
    /// Samples per estimator call.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Estimator calls per row.
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    /// Structures summed exactly by sum-and-sample.
    #[arg(long, default_value_t = 2)]
    topk: usize,
    /// ST-Gumbel temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// I-MLE step size.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Add a wall-time column (output is then no longer reproducible).
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args, Debug)]
struct GameArgs {
    /// Number of images N.
    #[arg(long, default_value_t = 4)]
    images: usize,
    /// Number of code words K.
    #[arg(long, default_value_t = 16)]
    codes: usize,
    /// Image feature dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Held-out trials per evaluation.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = GameEstimator::Explicit)]
    estimator: GameEstimator,
    /// SGD step size.
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Steps per logged window.
    #[arg(long, default_value_t = 50)]
    eval_every: usize,
    /// Samples per step for the score-function estimator.
    #[arg(long, default_value_t = 4)]
    samples: usize,
}

#[derive(Args, Debug)]
struct TreeSkewArgs {
    /// Number of leaves (at most 12).
    #[arg(long, default_value_t = 5)]
    leaves: usize,
    /// Probability of shifting whenever both actions are legal.
    #[arg(long, default_value_t = 0.5)]
    p_shift: f64,
}

#[derive(Args, Debug)]
struct MatchArgs {
    /// Tokens per list (synthetic input).
    #[arg(long, default_value_t = 5)]
    tokens: usize,
    /// Embedding dimension (synthetic input).
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Noise added to the first list to form the second.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Sinkhorn temperature; low values converge slowly.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Sinkhorn iteration budget.
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// JSON file with `left` and `right` embedding lists.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn finish(report: &impl Artifact, run: &RunConfig, default: Format) -> Result<bool> {
    let bytes = report.render(run.format.unwrap_or(default))?;
    emit(&bytes, run.out.as_deref())?;
    Ok(report.passed())
}

fn dispatch(command: Command, run: &RunConfig) -> Result<bool> {
    match command {
        Command::Gradcheck => finish(&gradcheck::run(run.seed)?, run, Format::Json),
        Command::Estimators(a) => {
            let cfg = EstimatorsConfig {
                domain: a.domain,
                size: a.size,
                samples: a.samples,
                replicates: a.replicates,
                topk: a.topk,
                temperature: a.temperature,
                eta: a.eta,
                wall_time: a.wall_time,
            };
            finish(
                &estimators::run(&cfg, run.seed, run.jobs)?,
                run,
                Format::Csv,
            )
        }
        Command::Game(a) => {
            let cfg = GameConfig {
                images: a.images,
                codes: a.codes,
                dim: a.dim,
                trials: a.trials,
                estimator: a.estimator,
                lr: a.lr,
                steps: a.steps,
                eval_every: a.eval_every,
                samples: a.samples,
            };
            finish(&game::run(&cfg, run.seed)?, run, Format::Csv)
        }
        Command::Treeskew(a) => {
            let cfg = TreeSkewConfig {
                leaves: a.leaves,
                p_shift: a.p_shift,
            };
            finish(&treeskew::run(&cfg)?, run, Format::Csv)
        }
        Command::Match(a) => {
            let cfg = MatchConfig {
                tokens: a.tokens,
                dim: a.dim,
                noise: a.noise,
                gamma: a.gamma,
                max_iter: a.max_iter,
                input: a.input,
            };
            finish(&matching::run(&cfg, run.seed)?, run, Format::Json)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    let run = RunConfig {
        seed: cli.seed,
        out: cli.out,
        format: cli.format,
        jobs: cli.jobs,
    };
    match dispatch(cli.command, &run) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed; see report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
