//! Command-line interface. Data goes to stdout as JSON (or TSV with
//! `--tsv`); errors go to stderr prefixed by their name.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::asymptotics::{
    correlation_matrix, covariance_exact, covariance_plugin, detect_blocks, detect_blocks_matrix,
    kernel_matrices_plugin, CovarianceMethod, CovarianceReport,
};
use crate::error::{Result, ShapError};
use crate::exact::{ShapleyVector, ValueTable};
use crate::experiments::{run_and_write, ExperimentConfig};
use crate::game::{Game, GameEvaluator};
use crate::kernel::{bilinearity_test, estimate_kernel};
use crate::permutation::{mean_of, sample_marginals};
use crate::ShapleyMethod;

#[derive(Parser, Debug)]
#[command(
    name = "pairshap",
    version,
    about = "Exact and sampled Shapley values with asymptotic covariances"
)]
pub struct Cli {
    /// Worker threads for replicate-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact Shapley values by enumeration.
    Exact(ExactArgs),
    /// Sampling estimate with standard errors.
    Sample(SampleArgs),
    /// Asymptotic covariance matrix of a sampling estimator.
    Asymptotics(AsymptoticsArgs),
    /// Run an experiment described by a JSON config and write its CSV.
    Experiment(ExperimentArgs),
    /// Additive block structure from the paired permutation covariance.
    Blocks(BlocksArgs),
    /// Check whether a game is consistent with a bilinear form.
    BilinearTest(BilinearTestArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExactMethod {
    Subset,
    Permutation,
    Kernel,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SampleMethod {
    Kernel,
    Permutation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StderrSource {
    Exact,
    Plugin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Kernel,
    KernelPaired,
    Permutation,
    PermutationPaired,
}

impl From<MethodArg> for CovarianceMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Kernel => CovarianceMethod::Kernel,
            MethodArg::KernelPaired => CovarianceMethod::KernelPaired,
            MethodArg::Permutation => CovarianceMethod::Permutation,
            MethodArg::PermutationPaired => CovarianceMethod::PermutationPaired,
        }
    }
}

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[arg(long)]
    pub vf: PathBuf,
    #[arg(long, value_enum, default_value_t = ExactMethod::All)]
    pub method: ExactMethod,
    #[arg(long)]
    pub tsv: bool,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub vf: PathBuf,
    #[arg(long, value_enum)]
    pub method: SampleMethod,
    #[arg(long)]
    pub paired: bool,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = StderrSource::Exact)]
    pub stderr_from: StderrSource,
    #[arg(long)]
    pub tsv: bool,
}

/// `--exact` (default) or `--plugin N`.
#[derive(Args, Debug)]
#[group(multiple = false)]
pub struct Source {
    #[arg(long)]
    pub exact: bool,
    /// Plug-in estimate from N sampling units (requires --seed).
    #[arg(long, value_name = "N", requires = "seed")]
    pub plugin: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AsymptoticsArgs {
    #[arg(long)]
    pub vf: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[command(flatten)]
    pub source: Source,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also report eigenvalues scaled by evaluations per sampling unit.
    #[arg(long)]
    pub adjusted: bool,
    #[arg(long)]
    pub tsv: bool,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct BlocksArgs {
    #[arg(long)]
    pub vf: PathBuf,
    #[arg(long)]
    pub threshold: f64,
    /// Apply the threshold to correlations instead of covariances.
    #[arg(long)]
    pub correlation: bool,
    #[command(flatten)]
    pub source: Source,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tsv: bool,
}

#[derive(Args, Debug)]
pub struct BilinearTestArgs {
    #[arg(long)]
    pub vf: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub seed: u64,
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        ShapError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn load_game(path: &Path) -> Result<GameEvaluator> {
    GameEvaluator::from_json(&read_file(path)?)
}

fn phi_json(v: &ShapleyVector) -> Value {
    json!({"method": v.method.as_str(), "phi": v.phi})
}

fn tsv_rows(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

fn player_header(first: &str, q: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((1..=q).map(|j| format!("phi_{j}")))
        .collect()
}

pub fn cmd_exact(args: &ExactArgs) -> Result<String> {
    let game = load_game(&args.vf)?;
    let q = game.players();
    if args.method == ExactMethod::Permutation && q > crate::exact::MAX_PERMUTATION_PLAYERS {
        // fail before tabulating 2^q values
        return Err(ShapError::SizeGuard {
            method: "all-permutations enumeration",
            cap: crate::exact::MAX_PERMUTATION_PLAYERS,
            q,
        });
    }
    let table = ValueTable::build(&game)?;
    let results = match args.method {
        ExactMethod::Subset => vec![table.shapley_subset()],
        ExactMethod::Permutation => vec![table.shapley_all_permutations()?],
        ExactMethod::Kernel => vec![table.shapley_kernel()?],
        ExactMethod::All => vec![
            table.shapley_subset(),
            table.shapley_all_permutations()?,
            table.shapley_kernel()?,
        ],
    };
    let mut discrepancy: f64 = 0.0;
    for a in 0..results.len() {
        for b in a + 1..results.len() {
            discrepancy = discrepancy.max(results[a].max_abs_diff(&results[b]));
        }
    }
    if args.tsv {
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|r| {
                std::iter::once(r.method.as_str().to_string())
                    .chain(r.phi.iter().map(|v| v.to_string()))
                    .collect()
            })
            .collect();
        return Ok(tsv_rows(&player_header("method", q), &rows));
    }
    let mut out = json!({
        "q": q,
        "results": results.iter().map(phi_json).collect::<Vec<_>>(),
    });
    if args.method == ExactMethod::All {
        out["max_discrepancy"] = json!(discrepancy);
    }
    Ok(pretty(&out))
}

pub fn cmd_sample(args: &SampleArgs) -> Result<String> {
    let game = load_game(&args.vf)?;
    let q = game.players();
    let kernel = args.method == SampleMethod::Kernel;
    let method = CovarianceMethod::from_parts(kernel, args.paired);
    let (estimate, retries, plugin_var) = if kernel {
        let (phi, batch) = estimate_kernel(&game, args.n, args.paired, args.seed)?;
        let var = match args.stderr_from {
            StderrSource::Plugin => {
                let km = kernel_matrices_plugin(&batch, &phi)?;
                let report = CovarianceReport::new(
                    method,
                    crate::asymptotics::Provenance::Plugin {
                        n: args.n,
                        seed: args.seed,
                    },
                    q,
                    km.t,
                    Vec::new(),
                )?;
                Some(report.component_variances())
            }
            StderrSource::Exact => None,
        };
        (phi, Some(batch.retries), var)
    } else {
        let units = sample_marginals(&game, args.n, args.paired, args.seed)?;
        let phi = ShapleyVector {
            phi: mean_of(&units, q),
            method: if args.paired {
                ShapleyMethod::PermutationPairedSampling
            } else {
                ShapleyMethod::PermutationSampling
            },
        };
        let var = match args.stderr_from {
            StderrSource::Plugin => {
                if units.len() < 2 {
                    return Err(ShapError::Domain(
                        "plug-in standard errors need n >= 2".into(),
                    ));
                }
                let s = units.len() as f64;
                Some(
                    (0..q)
                        .map(|j| {
                            let m = phi.phi[j];
                            units.iter().map(|u| (u.b[j] - m).powi(2)).sum::<f64>() / (s - 1.0)
                        })
                        .collect(),
                )
            }
            StderrSource::Exact => None,
        };
        (phi, None, var)
    };
    let evaluations = game.evaluation_count();
    let variances = match plugin_var {
        Some(v) => v,
        None => covariance_exact(&game, method)?.component_variances(),
    };
    let stderr: Vec<f64> = variances
        .iter()
        .map(|v| (v.max(0.0) / args.n as f64).sqrt())
        .collect();
    if args.tsv {
        let rows: Vec<Vec<String>> = (0..q)
            .map(|j| {
                vec![
                    (j + 1).to_string(),
                    estimate.phi[j].to_string(),
                    stderr[j].to_string(),
                ]
            })
            .collect();
        let header = ["j", "phi", "stderr"].map(String::from).to_vec();
        return Ok(tsv_rows(&header, &rows));
    }
    let mut out = json!({
        "method": estimate.method.as_str(),
        "q": q,
        "n": args.n,
        "seed": args.seed,
        "phi": estimate.phi,
        "stderr": stderr,
        "stderr_from": match args.stderr_from {
            StderrSource::Exact => "exact",
            StderrSource::Plugin => "plugin",
        },
        "evaluations": evaluations,
    });
    if let Some(r) = retries {
        out["retries"] = json!(r);
    }
    Ok(pretty(&out))
}

fn report_for(
    game: &GameEvaluator,
    method: CovarianceMethod,
    source: &Source,
    seed: Option<u64>,
) -> Result<CovarianceReport> {
    match source.plugin {
        Some(n) => covariance_plugin(game, method, n, seed.expect("clap enforces --seed")),
        None => covariance_exact(game, method),
    }
}

pub fn cmd_asymptotics(args: &AsymptoticsArgs) -> Result<String> {
    let game = load_game(&args.vf)?;
    let report = report_for(&game, args.method.into(), &args.source, args.seed)?;
    if args.tsv {
        let mut out = String::new();
        for row in report.matrix.to_rows() {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(out, "{}", cells.join("\t")).unwrap();
        }
        let eigs = if args.adjusted {
            report.dimension_adjusted_eigs()
        } else {
            report.eigenvalues.clone()
        };
        let cells: Vec<String> = eigs.iter().map(f64::to_string).collect();
        writeln!(out, "eigenvalues\t{}", cells.join("\t")).unwrap();
        writeln!(out, "trace\t{}", report.trace).unwrap();
        return Ok(out);
    }
    Ok(pretty(&report.to_json(args.adjusted)))
}

pub fn cmd_experiment(args: &ExperimentArgs, jobs: usize) -> Result<String> {
    let base = args.config.parent().unwrap_or_else(|| Path::new("."));
    let config = ExperimentConfig::parse(&read_file(&args.config)?, base)?;
    let out = run_and_write(&config, jobs)?;
    Ok(pretty(&out.summary(&config.csv)))
}

pub fn cmd_blocks(args: &BlocksArgs) -> Result<String> {
    if args.threshold.is_nan() || args.threshold < 0.0 {
        return Err(ShapError::Domain(
            "threshold must be a non-negative number".into(),
        ));
    }
    let game = load_game(&args.vf)?;
    let report = report_for(
        &game,
        CovarianceMethod::PermutationPaired,
        &args.source,
        args.seed,
    )?;
    let partition = if args.correlation {
        detect_blocks_matrix(&correlation_matrix(&report.matrix), args.threshold)
    } else {
        detect_blocks(&report, args.threshold)?
    };
    if args.tsv {
        let mut out = String::from("group\tplayers\n");
        for (g, players) in partition.to_one_based().iter().enumerate() {
            let p: Vec<String> = players.iter().map(usize::to_string).collect();
            writeln!(out, "{}\t{}", g + 1, p.join(",")).unwrap();
        }
        return Ok(out);
    }
    Ok(pretty(&json!({
        "q": report.q,
        "threshold": args.threshold,
        "scale": if args.correlation { "correlation" } else { "covariance" },
        "provenance": report.to_json(false)["provenance"],
        "groups": partition.to_one_based(),
    })))
}

pub fn cmd_bilinear_test(args: &BilinearTestArgs) -> Result<String> {
    let game = load_game(&args.vf)?;
    let verdict = bilinearity_test(&game, args.trials, args.tol, args.seed)?;
    Ok(pretty(
        &serde_json::to_value(&verdict).expect("serializable"),
    ))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Exact(a) => cmd_exact(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Asymptotics(a) => cmd_asymptotics(a),
        Command::Experiment(a) => cmd_experiment(a, cli.jobs),
        Command::Blocks(a) => cmd_blocks(a),
        Command::BilinearTest(a) => cmd_bilinear_test(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
