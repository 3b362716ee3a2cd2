//! Command-line front end: `synth`, `decompose`, `path`, `score` and `als`.
//!
//! Every command writes (or, for `score`, prints) a `key=value` summary with
//! the keys in [`SUMMARY_KEYS`]; values that do not apply are `na`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use enet_cp::io::{read_dense, read_factors, read_tensor, write_dense, write_factors, write_tensor, Summary};
use enet_cp::path::{count_true_zeros, decade_grid, extract_pattern, select_solution, solution_path, PathConfig};
use enet_cp::priors::{default_simulation_covariances, estimate_from_observed, generate_synthetic, PriorSpec};
use enet_cp::report::render_path_table;
use enet_cp::solvers::TauDenominator;
use enet_cp::{
    adamax_solve, bcd_solve, cp_als_solve, evaluate, factor_score, init_nvecs, init_random, sparse_constrained_solve,
    DenseTensor, ElasticNetConfig, Error, FactorSet, MaskedTensor, SolveReport, SparsityPattern, StochasticConfig,
};

pub const SUMMARY_KEYS: [&str; 7] = ["rel_err", "rank", "nzs", "nzt", "score", "iterations", "wall_seconds"];
pub const SUMMARY_FILE: &str = "summary.txt";
const NA: &str = "na";

#[derive(Debug, Parser)]
#[command(
    name = "enet-cp",
    version,
    about = "Sparse low-rank CP decomposition with elastic-net penalties"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic instance from the sparse Gaussian-Laplace prior.
    Synth(SynthArgs),
    /// Run one solver at a single λ.
    Decompose(DecomposeArgs),
    /// Sweep λ with warm starts, refine each new pattern and select a solution.
    Path(PathArgs),
    /// Compare two factor directories.
    Score(ScoreArgs),
    /// Plain CP-ALS on a fully observed tensor.
    Als(AlsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CovarianceScheme {
    /// One dominant leading variance per mode (three-way only).
    Simulation,
    Unit,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, num_args = 1.., required = true)]
    shape: Vec<usize>,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    /// Probability that a factor entry is drawn from the prior rather than set to zero.
    #[arg(long, default_value_t = 0.5)]
    gate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Signal-to-noise ratio in dB; noiseless when omitted.
    #[arg(long)]
    snr_db: Option<f64>,
    /// Fraction of entries to hide.
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    #[arg(long, value_enum, default_value_t = CovarianceScheme::Simulation)]
    covariance: CovarianceScheme,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitMode {
    Random,
    Nvecs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CovarianceSource {
    /// Diagonal covariances estimated from the observed data.
    Estimated,
    Identity,
}

/// Inputs shared by the fitting commands.
#[derive(Debug, Args)]
struct FitArgs {
    /// Tensor file; a sibling `.mask` file marks observed entries.
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long, value_enum, default_value_t = InitMode::Random)]
    init: InitMode,
    /// Start from these factors instead of `--init`.
    #[arg(long)]
    init_factors: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = enet_cp::solvers::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = enet_cp::solvers::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = enet_cp::path::DEFAULT_EPSILON)]
    epsilon: f64,
    /// True factors, for NZT and score.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Noise-free tensor, for the excess error.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PenaltyArgs {
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = CovarianceSource::Estimated)]
    covariance: CovarianceSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    Bcd,
    Sparse,
    Adamax,
    Als,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long, value_enum, default_value_t = Solver::Bcd)]
    solver: Solver,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    /// Factors whose nonzero entries are the free entries for `--solver sparse`.
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Per-mode subset sizes for `--solver adamax`.
    #[arg(long, num_args = 1..)]
    batch_sizes: Vec<usize>,
    /// Absolute Adamax step; scale it with the typical column norm.
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    /// Use `λ(1−α)·T` instead of `λ(1−α)α·T` in the Adamax threshold rescaling.
    #[arg(long)]
    ridge_tau: bool,
}

#[derive(Debug, Args)]
struct PathArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// Explicit λ values; defaults to 1e-10, 1e-9, …, 1e10.
    #[arg(long, num_args = 1..)]
    lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = enet_cp::path::DEFAULT_LAMBDA_S)]
    lambda_s: f64,
    #[arg(long, default_value_t = enet_cp::solvers::DEFAULT_MAX_ITERS)]
    refine_max_iters: usize,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Debug, Args)]
struct AlsArgs {
    #[command(flatten)]
    fit: FitArgs,
}

/// How a failed command is reported.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical { .. } | Error::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Parses `argv` (program name first), runs the command and returns the exit
/// code: 0 on success, 2 for argument and input errors, 1 for numerical or
/// I/O failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Decompose(a) => decompose(&a),
        Command::Path(a) => path(&a),
        Command::Score(a) => score(&a),
        Command::Als(a) => als(&a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn new_summary(command: &str) -> Summary {
    let mut s = Summary::default();
    s.set("command", command);
    for k in SUMMARY_KEYS {
        s.set(k, NA);
    }
    s
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x:?}"))
}

fn finish(summary: &mut Summary, dir: &Path, started: Instant) -> Outcome {
    summary.set_f64("wall_seconds", started.elapsed().as_secs_f64());
    summary.write(&dir.join(SUMMARY_FILE))?;
    print!("{}", summary.render());
    Ok(())
}

fn synth(a: &SynthArgs) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mode_cov_diags = match a.covariance {
        CovarianceScheme::Simulation => default_simulation_covariances(&a.shape, &mut rng)?,
        CovarianceScheme::Unit => a.shape.iter().map(|&d| vec![1.0; d]).collect(),
    };
    let spec = PriorSpec {
        mode_cov_diags,
        mu: a.mu,
        gate: a.gate,
        snr_db: a.snr_db,
        missing_fraction: a.missing,
    };
    let inst = generate_synthetic(&a.shape, a.rank, &spec, &mut rng)?;

    create_dir(&a.out)?;
    write_tensor(&a.out.join("tensor.txt"), &inst.observed)?;
    write_dense(&a.out.join("clean.txt"), &inst.clean)?;
    write_factors(&a.out.join("truth"), &inst.truth)?;

    let ex = extract_pattern(&inst.truth, enet_cp::path::DEFAULT_EPSILON);
    let mut s = new_summary("synth");
    let noise = enet_cp::metrics::full_rel_err(inst.observed.values(), &inst.truth)?;
    s.set_f64("rel_err", noise)
        .set("rank", ex.rank)
        .set("nzs", ex.nzs)
        .set("iterations", 0)
        .set("seed", a.seed)
        .set_f64("noise_sigma", inst.noise_sigma)
        .set("observed", inst.observed.observed_count());
    finish(&mut s, &a.out, started)
}

struct Loaded {
    z: MaskedTensor,
    truth: Option<FactorSet>,
    clean: Option<DenseTensor>,
    init: FactorSet,
}

fn load(fit: &FitArgs) -> Result<Loaded, Failure> {
    let z = read_tensor(&fit.tensor)?;
    let truth = fit.truth.as_deref().map(read_factors).transpose()?;
    let clean = fit.clean.as_deref().map(read_dense).transpose()?;
    let init = match &fit.init_factors {
        Some(dir) => {
            let f = read_factors(dir)?;
            if f.rank() != fit.rank {
                return Err(usage(format!(
                    "--init-factors has rank {}, expected {}",
                    f.rank(),
                    fit.rank
                )));
            }
            f.check_against(z.shape())?;
            f
        }
        None => match fit.init {
            InitMode::Random => init_random(z.shape(), fit.rank, &mut ChaCha8Rng::seed_from_u64(fit.seed)),
            InitMode::Nvecs => init_nvecs(&z, fit.rank)?,
        },
    };
    Ok(Loaded { z, truth, clean, init })
}

/// Inverse diagonal covariances for the penalty.
fn inverse_covariances(z: &MaskedTensor, rank: usize, source: CovarianceSource) -> Result<Vec<Vec<f64>>, Failure> {
    Ok(match source {
        CovarianceSource::Identity => z.shape().iter().map(|&d| vec![1.0; d]).collect(),
        CovarianceSource::Estimated => estimate_from_observed(z, rank.max(1))?
            .diags
            .iter()
            .map(|d| d.iter().map(|v| 1.0 / v).collect())
            .collect(),
    })
}

fn report_solution(s: &mut Summary, data: &Loaded, f: &FactorSet, epsilon: f64) -> Outcome {
    let rep = evaluate(&data.z, f, data.truth.as_ref(), data.clean.as_ref(), epsilon)?;
    s.set_f64("rel_err", rep.rel_err_observed)
        .set("rank", rep.rank)
        .set("nzs", rep.nzs)
        .set("nzt", opt(rep.nzt))
        .set("score", opt_f64(rep.score))
        .set_f64("rel_err_full", rep.rel_err_full)
        .set("excess_err", opt_f64(rep.excess_err));
    Ok(())
}

fn decompose(a: &DecomposeArgs) -> Outcome {
    let started = Instant::now();
    let fit = &a.fit;
    let data = load(fit)?;
    let (f, rep): (FactorSet, SolveReport) = if a.solver == Solver::Als {
        cp_als_solve(&data.z, &data.init, fit.max_iters, fit.tol)?
    } else {
        let inv = inverse_covariances(&data.z, fit.rank, a.penalty.covariance)?;
        let cfg = ElasticNetConfig::new(a.lambda, a.penalty.alpha, inv)?
            .with_max_iters(fit.max_iters)
            .with_tol(fit.tol);
        match a.solver {
            Solver::Bcd => bcd_solve(&data.z, &data.init, &cfg)?,
            Solver::Sparse => {
                let dir = a
                    .pattern
                    .as_deref()
                    .ok_or_else(|| usage("--solver sparse needs --pattern"))?;
                let pf = read_factors(dir)?;
                if pf.rank() != fit.rank {
                    return Err(usage(format!(
                        "--pattern has rank {}, expected {}",
                        pf.rank(),
                        fit.rank
                    )));
                }
                let pattern = SparsityPattern::from_factors(&pf, fit.epsilon);
                let mut init = data.init.clone();
                pattern.apply(&mut init);
                sparse_constrained_solve(&data.z, &init, &pattern, &cfg)?
            }
            Solver::Adamax => {
                let batch = if a.batch_sizes.is_empty() {
                    data.z.shape().iter().map(|&d| d.div_ceil(2)).collect()
                } else {
                    a.batch_sizes.clone()
                };
                let mut scfg = StochasticConfig::new(batch);
                scfg.step_size = a.step_size;
                scfg.max_iters = fit.max_iters;
                if a.ridge_tau {
                    scfg.tau_denominator = TauDenominator::Ridge;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(fit.seed.wrapping_add(1));
                adamax_solve(&data.z, &data.init, &cfg, &scfg, &mut rng)?
            }
            Solver::Als => unreachable!("handled above"),
        }
    };

    create_dir(&fit.out)?;
    write_factors(&fit.out.join("factors"), &f)?;
    let mut s = new_summary("decompose");
    report_solution(&mut s, &data, &f, fit.epsilon)?;
    s.set("iterations", rep.iterations)
        .set("converged", rep.converged)
        .set_f64("objective", rep.final_objective)
        .set("solver", format!("{:?}", a.solver).to_lowercase())
        .set_f64("lambda", a.lambda)
        .set_f64("alpha", a.penalty.alpha)
        .set("seed", fit.seed);
    finish(&mut s, &fit.out, started)
}

fn path(a: &PathArgs) -> Outcome {
    let started = Instant::now();
    let fit = &a.fit;
    let data = load(fit)?;
    let inv = inverse_covariances(&data.z, fit.rank, a.penalty.covariance)?;
    let mut pcfg = PathConfig::new(a.penalty.alpha, inv);
    pcfg.lambda_grid = if a.lambda_grid.is_empty() {
        decade_grid(-10, 10)
    } else {
        a.lambda_grid.clone()
    };
    pcfg.lambda_s = a.lambda_s;
    pcfg.epsilon = fit.epsilon;
    pcfg.max_iters = fit.max_iters;
    pcfg.refine_max_iters = a.refine_max_iters;
    pcfg.tol = fit.tol;

    let entries = solution_path(&data.z, &data.init, &pcfg)?;
    let chosen = select_solution(&entries, data.truth.as_ref(), fit.epsilon)?;
    for e in entries.iter().filter_map(|e| e.failure.as_ref().map(|m| (e.lambda, m))) {
        eprintln!("warning: solve at lambda {:e} failed: {}", e.0, e.1);
    }

    create_dir(&fit.out)?;
    let table = render_path_table(&entries, data.truth.as_ref(), pcfg.lambda_s, fit.epsilon);
    std::fs::write(fit.out.join("path.txt"), &table)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", fit.out.join("path.txt").display())))?;
    write_factors(&fit.out.join("selected"), chosen.solution())?;

    let mut s = new_summary("path");
    report_solution(&mut s, &data, chosen.solution(), fit.epsilon)?;
    // The table reports the path's own error and pattern counts for this entry.
    let nzt = data
        .truth
        .as_ref()
        .map(|t| count_true_zeros(&chosen.pattern, t, fit.epsilon).1);
    let iterations = chosen.iterations_raw + chosen.refined.as_ref().map_or(0, |r| r.iterations);
    s.set_f64("rel_err", chosen.rel_err())
        .set("rank", chosen.detected_rank)
        .set("nzs", chosen.nzs)
        .set("nzt", opt(nzt))
        .set("iterations", iterations)
        .set_f64("lambda", chosen.lambda)
        .set_f64("alpha", a.penalty.alpha)
        .set("grid_points", entries.len())
        .set("failures", entries.iter().filter(|e| e.failure.is_some()).count())
        .set("seed", fit.seed);
    print!("{table}");
    finish(&mut s, &fit.out, started)
}

fn score(a: &ScoreArgs) -> Outcome {
    let started = Instant::now();
    let x = read_factors(&a.a)?;
    let y = read_factors(&a.b)?;
    if x.shape() != y.shape() {
        return Err(usage(format!(
            "factor shapes differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let mut s = new_summary("score");
    s.set_f64("score", factor_score(&x, &y))
        .set("rank", x.rank())
        .set("iterations", 0)
        .set_f64("wall_seconds", started.elapsed().as_secs_f64());
    print!("{}", s.render());
    Ok(())
}

fn als(a: &AlsArgs) -> Outcome {
    let started = Instant::now();
    let fit = &a.fit;
    let data = load(fit)?;
    if !data.z.is_fully_observed() {
        return Err(usage(
            "als needs a fully observed tensor; remove the mask or use decompose",
        ));
    }
    let (f, rep) = cp_als_solve(&data.z, &data.init, fit.max_iters, fit.tol)?;
    create_dir(&fit.out)?;
    write_factors(&fit.out.join("factors"), &f)?;
    let mut s = new_summary("als");
    report_solution(&mut s, &data, &f, fit.epsilon)?;
    s.set("iterations", rep.iterations)
        .set("converged", rep.converged)
        .set("seed", fit.seed);
    finish(&mut s, &fit.out, started)
}
