//! `spard`: command-line front end for embedding ingestion, relevance
//! scoring, diverse subset selection, exhaustive verification, and the
//! synthetic training demos.
//!
//! Exit codes: 0 success; 2 usage, validation, or i/o failure; 3 success
//! with a warning (selection stopped before reaching k); 4 internal
//! numerical failure (non-finite values, degenerate gradients).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spard_core::bench::{
    self, make_poisoned_logreg, make_quadratic_with_tau, run_logreg_comparison,
    run_quadratic_comparison, BenchError, MethodSpec, PipelineParams,
};
use spard_core::embedding::{load_embeddings, EmbeddingSet, Format, IngestError};
use spard_core::relevance::{
    compute_relevance, dense_kernel, read_relevance_jsonl, write_relevance_jsonl, KernelError,
    RelevanceScores, WeightedKernelView,
};
use spard_core::selector::{
    brute_force_map, greedy_select, SelectError, SelectionDocument, MAX_EXHAUSTIVE_N,
};
use spard_core::spag::{SpagConfigFile, SpagError};

const EXIT_CODES_HELP: &str = "Exit codes:\n  \
    0  success\n  \
    2  usage, validation, or i/o failure\n  \
    3  success with warning (selection stopped before reaching k)\n  \
    4  internal numerical failure";

#[derive(Parser)]
#[command(
    name = "spard",
    version,
    about = "Safety-projected training and relevance-diversity subset selection",
    after_help = EXIT_CODES_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Relevance(RelevanceArgs),
    Select(SelectArgs),
    Oracle(OracleArgs),
    TrainDemo(TrainDemoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FileFormat {
    /// One {"id", "embedding"} object per line.
    Jsonl,
    /// Header id,e0,e1,...; one row per vector.
    Csv,
    /// One {"id", "token_states"} object per line; mean pooling applied at load.
    TokensJsonl,
}

impl From<FileFormat> for Format {
    fn from(f: FileFormat) -> Format {
        match f {
            FileFormat::Jsonl => Format::Jsonl,
            FileFormat::Csv => Format::Csv,
            FileFormat::TokensJsonl => Format::TokensJsonl,
        }
    }
}

/// Score every pool candidate by its best cosine similarity against a
/// reference set, and write the scores as jsonl.
#[derive(Args)]
#[command(after_help = EXIT_CODES_HELP)]
struct RelevanceArgs {
    /// Candidate pool embedding file.
    #[arg(long, value_name = "PATH")]
    pool: PathBuf,
    /// Pool file format [default: jsonl].
    #[arg(long, value_enum, default_value_t = FileFormat::Jsonl)]
    pool_format: FileFormat,
    /// Reference embedding file the scores are computed against.
    #[arg(long, value_name = "PATH")]
    ft: PathBuf,
    /// Reference file format [default: jsonl].
    #[arg(long, value_enum, default_value_t = FileFormat::Jsonl)]
    ft_format: FileFormat,
    /// Output path for jsonl {"id", "q"} records, in pool order.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Skip unit normalization of embeddings at ingestion [default: normalize].
    #[arg(long)]
    no_normalize: bool,
    /// Uniformly subsample the reference set to at most M rows before
    /// scoring [default: no cap].
    #[arg(long, value_name = "M")]
    ft_cap: Option<usize>,
    /// Seed for the --ft-cap subsample [default: 0].
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Select a compact, relevance-weighted, mutually diverse subset of the
/// pool and write the selection document as json.
#[derive(Args)]
#[command(after_help = EXIT_CODES_HELP)]
struct SelectArgs {
    /// Candidate pool embedding file.
    #[arg(long, value_name = "PATH")]
    pool: PathBuf,
    /// Pool file format [default: jsonl].
    #[arg(long, value_enum, default_value_t = FileFormat::Jsonl)]
    pool_format: FileFormat,
    /// Reference embedding file; relevance scores are computed against it.
    #[arg(long, value_name = "PATH", conflicts_with = "relevance")]
    ft: Option<PathBuf>,
    /// Reference file format [default: jsonl].
    #[arg(long, value_enum, default_value_t = FileFormat::Jsonl)]
    ft_format: FileFormat,
    /// Precomputed relevance jsonl (as written by `spard relevance`);
    /// requires --k.
    #[arg(long, value_name = "PATH")]
    relevance: Option<PathBuf>,
    /// Relevance exponent β ≥ 0 [default: 4].
    #[arg(long, default_value_t = 4.0)]
    beta: f64,
    /// Number of items to select (mutually exclusive with --p).
    #[arg(long, conflicts_with = "p")]
    k: Option<usize>,
    /// Subset size as a fraction of the reference set: k = ceil(p·|ft|)
    /// [default: 0.03 when --k is absent]; requires --ft.
    #[arg(long)]
    p: Option<f64>,
    /// Stopping floor on the marginal gain [default: 1e-8].
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Output path for the selection document (single json object).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Skip unit normalization of embeddings at ingestion [default: normalize].
    #[arg(long)]
    no_normalize: bool,
    /// Uniformly subsample the reference set to at most M rows before
    /// scoring [default: no cap]. Applies before k is derived from --p.
    #[arg(long, value_name = "M", requires = "ft")]
    ft_cap: Option<usize>,
    /// Seed for the --ft-cap subsample [default: 0].
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exhaustively find the maximum-determinant subset (pool size ≤ 20), for
/// verification against `select`.
#[derive(Args)]
#[command(after_help = EXIT_CODES_HELP)]
struct OracleArgs {
    /// Candidate pool embedding file (at most 20 rows).
    #[arg(long, value_name = "PATH")]
    pool: PathBuf,
    /// Pool file format [default: jsonl].
    #[arg(long, value_enum, default_value_t = FileFormat::Jsonl)]
    pool_format: FileFormat,
    /// Reference embedding file for relevance weighting (unit weights when
    /// neither --ft nor --relevance is given).
    #[arg(long, value_name = "PATH", conflicts_with = "relevance")]
    ft: Option<PathBuf>,
    /// Reference file format [default: jsonl].
    #[arg(long, value_enum, default_value_t = FileFormat::Jsonl)]
    ft_format: FileFormat,
    /// Precomputed relevance jsonl (as written by `spard relevance`).
    #[arg(long, value_name = "PATH")]
    relevance: Option<PathBuf>,
    /// Relevance exponent β ≥ 0 [default: 4].
    #[arg(long, default_value_t = 4.0)]
    beta: f64,
    /// Subset size.
    #[arg(long)]
    k: usize,
    /// Output path for the result json; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Skip unit normalization of embeddings at ingestion [default: normalize].
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Problem {
    /// Seeded constrained quadratic with an exact reference optimum.
    Quadratic,
    /// Poisoned logistic regression with the full select→train pipeline.
    Logreg,
}

/// Run a training-method comparison on a synthetic problem and write
/// per-method step traces plus a comparison table.
#[derive(Args)]
#[command(after_help = EXIT_CODES_HELP)]
struct TrainDemoArgs {
    /// Problem family.
    #[arg(long, value_enum)]
    problem: Problem,
    /// Optimizer config json {"eta_ft", "tau", "eta_safe", "max_steps",
    /// "seed"}; null eta_safe means eta_safe = eta_ft, null tau means the
    /// harness default (0.2 for quadratic, initial-model loss for logreg).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for reports and tables.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Problem dimension (quadratic only) [default: 5].
    #[arg(long, default_value_t = 5)]
    dim: usize,
    /// Generation/training seed when --config is absent [default: 0].
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum CliError {
    Validation(String),
    Numerical(String),
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::NonFiniteKernel { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SpagError> for CliError {
    fn from(e: SpagError) -> Self {
        match e {
            SpagError::NonFiniteParam { .. }
            | SpagError::NonFiniteGradient { .. }
            | SpagError::NonFiniteLoss { .. }
            | SpagError::DegenerateGradient { .. }
            | SpagError::OracleFailure { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Ingest(e) => e.into(),
            BenchError::Kernel(e) => e.into(),
            BenchError::Select(e) => e.into(),
            BenchError::Spag(e) => e.into(),
            BenchError::Io { .. } => CliError::Validation(e.to_string()),
        }
    }
}

fn io_validation(path: &Path, e: std::io::Error) -> CliError {
    CliError::Validation(format!("i/o error on {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Relevance(args) => cmd_relevance(args),
        Command::Select(args) => cmd_select(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::TrainDemo(args) => cmd_train_demo(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Validation(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(4)
        }
    }
}

fn load_set(path: &Path, format: FileFormat, normalize: bool) -> Result<EmbeddingSet, CliError> {
    let set = load_embeddings(path, format.into())?;
    if normalize {
        Ok(set.normalized()?)
    } else {
        Ok(set)
    }
}

fn validate_ft_cap(cap: Option<usize>) -> Result<(), CliError> {
    if cap == Some(0) {
        return Err(CliError::Validation("--ft-cap must be >= 1".into()));
    }
    Ok(())
}

fn cmd_relevance(args: RelevanceArgs) -> Result<u8, CliError> {
    validate_ft_cap(args.ft_cap)?;
    let normalize = !args.no_normalize;
    let pool = load_set(&args.pool, args.pool_format, normalize)?;
    let mut ft = load_set(&args.ft, args.ft_format, normalize)?;
    if let Some(cap) = args.ft_cap {
        ft = ft.subsample(cap, args.seed);
    }
    let scores = compute_relevance(&pool, &ft)?;
    write_relevance_jsonl(pool.ids(), &scores, &args.out)?;
    let q = scores.as_slice();
    let min = q.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    println!(
        "scored {} candidates against {} references: q min={min} mean={mean} max={max}",
        pool.len(),
        ft.len()
    );
    Ok(0)
}

/// Resolves relevance scores and the selection size from the flag set
/// shared by `select` and `oracle`.
fn resolve_scores(
    pool: &EmbeddingSet,
    ft: &Option<PathBuf>,
    ft_format: FileFormat,
    relevance: &Option<PathBuf>,
    normalize: bool,
    ft_cap: Option<(usize, u64)>,
) -> Result<(RelevanceScores, Option<usize>), CliError> {
    match (ft, relevance) {
        (Some(ft_path), None) => {
            let mut ft = load_set(ft_path, ft_format, normalize)?;
            if let Some((cap, seed)) = ft_cap {
                ft = ft.subsample(cap, seed);
            }
            Ok((compute_relevance(pool, &ft)?, Some(ft.len())))
        }
        (None, Some(rel_path)) => {
            let (ids, scores) = read_relevance_jsonl(rel_path)?;
            if ids != pool.ids() {
                return Err(CliError::Validation(format!(
                    "relevance file {} does not match the pool ids (order and content must agree)",
                    rel_path.display()
                )));
            }
            Ok((scores, None))
        }
        (None, None) => Ok((RelevanceScores::uniform(pool.len()), None)),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with forbids this"),
    }
}

fn cmd_select(args: SelectArgs) -> Result<u8, CliError> {
    if args.ft.is_none() && args.relevance.is_none() {
        return Err(CliError::Validation(
            "select requires --ft or --relevance".into(),
        ));
    }
    validate_ft_cap(args.ft_cap)?;
    let normalize = !args.no_normalize;
    let pool = load_set(&args.pool, args.pool_format, normalize)?;
    let (scores, ft_len) = resolve_scores(
        &pool,
        &args.ft,
        args.ft_format,
        &args.relevance,
        normalize,
        args.ft_cap.map(|cap| (cap, args.seed)),
    )?;

    let k = match (args.k, args.p) {
        (Some(k), None) => k,
        (None, p) => {
            let p = p.unwrap_or(0.03);
            if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                return Err(CliError::Validation(format!(
                    "--p must be in (0, 1], got {p}"
                )));
            }
            let ft_len = ft_len.ok_or_else(|| {
                CliError::Validation(
                    "--p derives k from the reference set; use --k with --relevance".into(),
                )
            })?;
            ((p * ft_len as f64).ceil() as usize).max(1)
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with forbids this"),
    };

    let view = WeightedKernelView::new(&pool, &scores, args.beta)?;
    let result = greedy_select(&view, k, args.eps)?;
    let document = SelectionDocument::from_result(&result, pool.ids(), args.beta);
    std::fs::write(&args.out, format!("{}\n", document.to_json()))
        .map_err(|e| io_validation(&args.out, e))?;
    println!(
        "selected {} of {} candidates (k requested {}), log_det = {}",
        result.selected.len(),
        pool.len(),
        k,
        result.log_det
    );
    if result.stopped_early {
        eprintln!(
            "warning: selection stopped early at {} items (best remaining gain <= {})",
            result.selected.len(),
            args.eps
        );
        return Ok(3);
    }
    Ok(0)
}

fn cmd_oracle(args: OracleArgs) -> Result<u8, CliError> {
    let normalize = !args.no_normalize;
    let pool = load_set(&args.pool, args.pool_format, normalize)?;
    if pool.len() > MAX_EXHAUSTIVE_N {
        return Err(CliError::Validation(format!(
            "pool has {} rows; the exhaustive oracle is limited to {}",
            pool.len(),
            MAX_EXHAUSTIVE_N
        )));
    }
    let (scores, _) = resolve_scores(
        &pool,
        &args.ft,
        args.ft_format,
        &args.relevance,
        normalize,
        None,
    )?;
    let view = WeightedKernelView::new(&pool, &scores, args.beta)?;
    let kernel = dense_kernel(&view)?;
    let (subset, log_det) = brute_force_map(&kernel, args.k)?;
    let doc = serde_json::json!({
        "selected_ids": subset.iter().map(|&i| pool.id(i)).collect::<Vec<_>>(),
        "log_det": log_det,
        "k": args.k,
        "beta": args.beta,
    });
    let body = format!("{doc}\n");
    match &args.out {
        Some(path) => std::fs::write(path, body).map_err(|e| io_validation(path, e))?,
        None => print!("{body}"),
    }
    Ok(0)
}

fn sanitize_method_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect::<String>()
        .trim_matches('_')
        .replace("__", "_")
}

fn cmd_train_demo(args: TrainDemoArgs) -> Result<u8, CliError> {
    std::fs::create_dir_all(&args.out).map_err(|e| io_validation(&args.out, e))?;
    let config_file: Option<SpagConfigFile> = match &args.config {
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(|e| io_validation(path, e))?;
            Some(
                serde_json::from_str(&body)
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?,
            )
        }
        None => None,
    };

    let (table, reports) = match args.problem {
        Problem::Quadratic => {
            if args.dim == 0 {
                return Err(CliError::Validation("--dim must be >= 1".into()));
            }
            let seed = config_file.as_ref().map_or(args.seed, |c| c.seed);
            let tau = config_file
                .as_ref()
                .and_then(|c| c.tau)
                .unwrap_or(bench::DEFAULT_QUADRATIC_TAU);
            let (problem, solution) = make_quadratic_with_tau(args.dim, seed, tau);
            let config = match &config_file {
                Some(file) => file.resolve(tau)?,
                None => bench::default_quadratic_config(tau, seed),
            };
            let methods = [
                MethodSpec::Spag,
                MethodSpec::Plain,
                MethodSpec::Penalty { lambda: 0.1 },
                MethodSpec::Penalty { lambda: 1.0 },
                MethodSpec::Penalty { lambda: 10.0 },
            ];
            let (table, reports) = run_quadratic_comparison(&problem, &config, &methods)?;
            println!(
                "analytic constrained optimum: utility loss = {}, safety loss = {}",
                solution.constrained_utility_loss, solution.constrained_safety_loss
            );
            (table, reports)
        }
        Problem::Logreg => {
            let seed = config_file.as_ref().map_or(args.seed, |c| c.seed);
            let scenario = make_poisoned_logreg(seed, &args.out.join("work"))?;
            let mut params = PipelineParams::default();
            if let Some(file) = &config_file {
                let config = file.resolve(scenario.tau)?;
                params.eta_ft = config.eta_ft;
                params.max_steps = config.max_steps;
            }
            println!(
                "poisoned scenario: {} ft points ({} poisoned), pool of {}, tau = {}",
                scenario.dataset.ft_points().len(),
                scenario.dataset.poison_points.len(),
                scenario.dataset.safe_pool.len(),
                scenario.tau
            );
            run_logreg_comparison(&scenario, &params, seed)?
        }
    };

    let csv_path = args.out.join("comparison.csv");
    std::fs::write(&csv_path, table.to_csv()).map_err(|e| io_validation(&csv_path, e))?;
    let txt_path = args.out.join("comparison.txt");
    std::fs::write(&txt_path, table.to_aligned_text()).map_err(|e| io_validation(&txt_path, e))?;
    for (name, report) in &reports {
        let path = args
            .out
            .join(format!("{}.jsonl", sanitize_method_name(name)));
        report.write_jsonl(&path)?;
    }
    print!("{}", table.to_aligned_text());
    println!(
        "wrote {} and per-method step traces to {}",
        csv_path.display(),
        args.out.display()
    );
    Ok(0)
}
