//! Replicated Monte Carlo experiments: bias and spread of the sampling
//! estimators against their asymptotic predictions, eigenvalue comparisons
//! and additive recovery tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::asymptotics::{
    covariance_exact, kernel_report_exact, permutation_report_exact, sigma_plugin,
    CovarianceMethod, CovarianceReport,
};
use crate::error::{Result, ShapError};
use crate::exact::{max_abs_diff, shapley_subset, ShapleyVector, MAX_PERMUTATION_PLAYERS};
use crate::game::{Game, GameEvaluator, ValueFunctionSpec};
use crate::kernel::estimate_kernel;
use crate::permutation::{estimate_permutation, group_sums, Partition};
use crate::seed::derive_seed;

/// Kernel sample size used by additive recovery unless configured.
pub const DEFAULT_KERNEL_N: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    BiasVariance,
    MethodComparison,
    AdditiveRecovery,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutputs {
    csv: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    kind: ExperimentKind,
    vf: Value,
    #[serde(default)]
    methods: Vec<String>,
    #[serde(default)]
    sizes: Vec<usize>,
    #[serde(default)]
    reps: Option<usize>,
    master_seed: u64,
    outputs: RawOutputs,
    #[serde(default)]
    partition: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    kernel_n: Option<usize>,
    #[serde(default)]
    plugin_n: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub spec: ValueFunctionSpec,
    pub methods: Vec<CovarianceMethod>,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub master_seed: u64,
    pub csv: PathBuf,
    /// 1-based groups; derived from the term index sets when absent.
    pub partition: Option<Vec<Vec<usize>>>,
    pub kernel_n: usize,
    /// Sample size for plug-in `Σ̂` when the game is too large for enumeration.
    pub plugin_n: Option<usize>,
}

fn schema(msg: impl Into<String>) -> ShapError {
    ShapError::Schema(msg.into())
}

impl ExperimentConfig {
    /// Reads a config file. Relative paths inside it (`vf` given as a path,
    /// `outputs.csv`) are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        ExperimentConfig::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| schema(format!("experiment config: {e}")))?;
        let spec = match raw.vf {
            Value::String(p) => {
                let p = base.join(p);
                ValueFunctionSpec::parse(&fs::read_to_string(&p)?)?
            }
            v @ Value::Object(_) => ValueFunctionSpec::from_json_value(v)?,
            _ => return Err(schema("'vf' must be an object or a path")),
        };
        let methods = raw
            .methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<CovarianceMethod>>>()?;
        for (i, m) in methods.iter().enumerate() {
            if methods[..i].contains(m) {
                return Err(schema(format!("method '{m}' listed twice")));
            }
        }
        let reps = raw.reps.unwrap_or(2);
        if raw.sizes.contains(&0) {
            return Err(schema("sizes must be positive"));
        }
        if raw.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(schema("sizes must be strictly ascending"));
        }
        if reps < 2 {
            return Err(schema(format!("reps must be at least 2, got {reps}")));
        }
        if raw.kind == ExperimentKind::BiasVariance {
            if methods.is_empty() {
                return Err(schema("'methods' must not be empty"));
            }
            if raw.sizes.is_empty() {
                return Err(schema("'sizes' must not be empty"));
            }
            if raw.reps.is_none() {
                return Err(schema("'reps' is required"));
            }
        }
        Ok(ExperimentConfig {
            kind: raw.kind,
            spec,
            methods,
            sizes: raw.sizes,
            reps,
            master_seed: raw.master_seed,
            csv: base.join(raw.outputs.csv),
            partition: raw.partition,
            kernel_n: raw.kernel_n.unwrap_or(DEFAULT_KERNEL_N),
            plugin_n: raw.plugin_n,
        })
    }
}

/// One estimate from the named sampling method.
pub fn estimate<G: Game + ?Sized>(
    game: &G,
    method: CovarianceMethod,
    n: usize,
    seed: u64,
) -> Result<ShapleyVector> {
    if method.is_kernel() {
        Ok(estimate_kernel(game, n, method.is_paired(), seed)?.0)
    } else {
        estimate_permutation(game, n, method.is_paired(), seed)
    }
}

/// Seed of replicate `rep` at grid point `n_index` for `method`.
pub fn replicate_seed(master: u64, method: CovarianceMethod, n_index: usize, rep: usize) -> u64 {
    derive_seed(master, &[method.index() as u64, n_index as u64, rep as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub method: CovarianceMethod,
    pub n: usize,
    /// 1-based player.
    pub j: usize,
    /// Mean absolute error over replicates.
    pub bias: f64,
    /// Replicate standard deviation, `(S - 1)` normalized.
    pub sigma_hat: f64,
    /// `√(asymptotic variance / n)`.
    pub tau: f64,
    pub evals_per_sample: usize,
    /// Signed `mean(φ̂_j) - φ_j`; not part of the CSV.
    pub mean_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub q: usize,
    pub reps: usize,
    pub phi: Vec<f64>,
    pub rows: Vec<ExperimentRow>,
}

pub const CSV_HEADER: &str = "method,n,j,bias,sigma_hat,tau,evals_per_sample";

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.16e},{:.16e},{:.16e},{}",
                r.method, r.n, r.j, r.bias, r.sigma_hat, r.tau, r.evals_per_sample
            )
            .unwrap();
        }
        out
    }

    pub fn rows_for(&self, method: CovarianceMethod, n: usize) -> Vec<&ExperimentRow> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.n == n)
            .collect()
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(ShapError::Domain("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ShapError::Domain(format!("thread pool: {e}")))
}

/// Replicated estimation for every method and sample size.
///
/// Replicates run on `jobs` threads; each draws from its own derived seed
/// and the results are reduced in replicate order, so the output does not
/// depend on `jobs`.
pub fn run_bias_variance(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult> {
    let game = GameEvaluator::new(config.spec.clone())?;
    let q = game.players();
    let phi = shapley_subset(&game)?.phi;
    let pool = thread_pool(jobs)?;
    let s = config.reps as f64;
    let mut rows = Vec::new();
    for &method in &config.methods {
        let variances = covariance_exact(&game, method)?.component_variances();
        for (ni, &n) in config.sizes.iter().enumerate() {
            let estimates: Vec<Vec<f64>> = pool.install(|| {
                (0..config.reps)
                    .into_par_iter()
                    .map(|rep| {
                        let seed = replicate_seed(config.master_seed, method, ni, rep);
                        estimate(&game, method, n, seed).map(|v| v.phi)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            for j in 0..q {
                let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / s;
                let bias = estimates.iter().map(|e| (e[j] - phi[j]).abs()).sum::<f64>() / s;
                let var = estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (s - 1.0);
                rows.push(ExperimentRow {
                    method,
                    n,
                    j: j + 1,
                    bias,
                    sigma_hat: var.sqrt(),
                    tau: (variances[j].max(0.0) / n as f64).sqrt(),
                    evals_per_sample: method.evals_per_sample(q),
                    mean_error: mean - phi[j],
                });
            }
        }
    }
    Ok(ExperimentResult {
        q,
        reps: config.reps,
        phi,
        rows,
    })
}

/// Spectra of `T₂` and `Σ`, raw and scaled by evaluations per sample.
#[derive(Clone, Debug)]
pub struct MethodComparison {
    pub q: usize,
    pub kernel: CovarianceReport,
    pub permutation: CovarianceReport,
}

impl MethodComparison {
    /// Top adjusted eigenvalue of the permutation method over that of the kernel method.
    pub fn top_adjusted_ratio(&self) -> f64 {
        let k = self.kernel.dimension_adjusted_eigs()[0];
        let p = self.permutation.dimension_adjusted_eigs()[0];
        p / k
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rank,eigenvalue,adjusted_eigenvalue\n");
        for r in [&self.kernel, &self.permutation] {
            let adjusted = r.dimension_adjusted_eigs();
            for (i, (l, a)) in r.eigenvalues.iter().zip(&adjusted).enumerate() {
                writeln!(out, "{},{},{:.16e},{:.16e}", r.method, i + 1, l, a).unwrap();
            }
        }
        out
    }
}

/// Exact `T₂`, and exact `Σ` when `q` allows enumeration or plug-in `Σ̂`
/// from `plugin_n` permutations otherwise.
pub fn run_method_comparison(
    spec: &ValueFunctionSpec,
    plugin_n: Option<usize>,
    seed: u64,
) -> Result<MethodComparison> {
    let game = GameEvaluator::new(spec.clone())?;
    let q = game.players();
    let kernel = kernel_report_exact(&game, true)?;
    let permutation = if q <= MAX_PERMUTATION_PLAYERS {
        permutation_report_exact(&game, true)?
    } else {
        let n = plugin_n.ok_or_else(|| {
            schema(format!(
                "q = {q} needs 'plugin_n' for the permutation covariance"
            ))
        })?;
        sigma_plugin(&game, n, seed)?
    };
    Ok(MethodComparison {
        q,
        kernel,
        permutation,
    })
}

#[derive(Clone, Debug)]
pub struct AdditiveRecovery {
    pub partition: Partition,
    pub exact: Vec<f64>,
    /// One permutation and its reverse.
    pub permutation_paired: Vec<f64>,
    /// One permutation alone.
    pub permutation: Vec<f64>,
    pub kernel_paired: Vec<f64>,
    pub kernel_n: usize,
}

impl AdditiveRecovery {
    pub fn max_permutation_error(&self) -> f64 {
        max_abs_diff(&self.exact, &self.permutation_paired)
            .max(max_abs_diff(&self.exact, &self.permutation))
    }

    pub fn max_kernel_error(&self) -> f64 {
        max_abs_diff(&self.exact, &self.kernel_paired)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("group,players,exact,permutation_paired,permutation,kernel_paired\n");
        for (g, players) in self.partition.to_one_based().iter().enumerate() {
            let names: Vec<String> = players.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                g + 1,
                names.join(" "),
                self.exact[g],
                self.permutation_paired[g],
                self.permutation[g],
                self.kernel_paired[g]
            )
            .unwrap();
        }
        out
    }
}

/// Every term must read players from a single group.
fn check_partition_matches_terms(spec: &ValueFunctionSpec, partition: &Partition) -> Result<()> {
    let mut owner = vec![0; spec.q()];
    for (g, group) in partition.groups().iter().enumerate() {
        for &j in group {
            owner[j] = g;
        }
    }
    for (t, term) in spec.terms().iter().enumerate() {
        let first = owner[term.indices()[0]];
        if term.indices().iter().any(|&j| owner[j] != first) {
            return Err(ShapError::Partition(format!(
                "term {} reads players from more than one group",
                t + 1
            )));
        }
    }
    Ok(())
}

/// Exact group sums next to single-permutation and paired-kernel estimates.
pub fn run_additive_recovery(
    spec: &ValueFunctionSpec,
    partition: Option<&[Vec<usize>]>,
    kernel_n: usize,
    seed: u64,
) -> Result<AdditiveRecovery> {
    let game = GameEvaluator::new(spec.clone())?;
    let q = game.players();
    let partition = match partition {
        Some(groups) => Partition::from_one_based(q, groups)?,
        None => Partition::from_terms(&game),
    };
    check_partition_matches_terms(spec, &partition)?;
    let exact = group_sums(&shapley_subset(&game)?, &partition)?;
    let perm_seed = derive_seed(seed, &[0]);
    let permutation_paired = group_sums(
        &estimate_permutation(&game, 1, true, perm_seed)?,
        &partition,
    )?;
    let permutation = group_sums(
        &estimate_permutation(&game, 1, false, perm_seed)?,
        &partition,
    )?;
    let (kphi, _) = estimate_kernel(&game, kernel_n, true, derive_seed(seed, &[1]))?;
    let kernel_paired = group_sums(&kphi, &partition)?;
    Ok(AdditiveRecovery {
        partition,
        exact,
        permutation_paired,
        permutation,
        kernel_paired,
        kernel_n,
    })
}

#[derive(Clone, Debug)]
pub enum ExperimentOutput {
    BiasVariance(ExperimentResult),
    MethodComparison(MethodComparison),
    AdditiveRecovery(AdditiveRecovery),
}

impl ExperimentOutput {
    pub fn to_csv(&self) -> String {
        match self {
            ExperimentOutput::BiasVariance(r) => r.to_csv(),
            ExperimentOutput::MethodComparison(r) => r.to_csv(),
            ExperimentOutput::AdditiveRecovery(r) => r.to_csv(),
        }
    }

    /// Short machine-readable summary printed by the CLI.
    pub fn summary(&self, csv: &Path) -> Value {
        let path = csv.display().to_string();
        match self {
            ExperimentOutput::BiasVariance(r) => json!({
                "kind": "bias_variance",
                "csv": path,
                "rows": r.rows.len(),
                "q": r.q,
                "reps": r.reps,
            }),
            ExperimentOutput::MethodComparison(r) => json!({
                "kind": "method_comparison",
                "csv": path,
                "q": r.q,
                "kernel_paired": {
                    "eigenvalues": r.kernel.eigenvalues,
                    "adjusted": r.kernel.dimension_adjusted_eigs(),
                    "trace": r.kernel.trace,
                },
                "permutation_paired": {
                    "eigenvalues": r.permutation.eigenvalues,
                    "adjusted": r.permutation.dimension_adjusted_eigs(),
                    "trace": r.permutation.trace,
                },
            }),
            ExperimentOutput::AdditiveRecovery(r) => json!({
                "kind": "additive_recovery",
                "csv": path,
                "groups": r.partition.to_one_based(),
                "max_permutation_error": r.max_permutation_error(),
                "max_kernel_error": r.max_kernel_error(),
                "kernel_n": r.kernel_n,
            }),
        }
    }
}

pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    Ok(match config.kind {
        ExperimentKind::BiasVariance => {
            ExperimentOutput::BiasVariance(run_bias_variance(config, jobs)?)
        }
        ExperimentKind::MethodComparison => ExperimentOutput::MethodComparison(
            run_method_comparison(&config.spec, config.plugin_n, config.master_seed)?,
        ),
        ExperimentKind::AdditiveRecovery => {
            ExperimentOutput::AdditiveRecovery(run_additive_recovery(
                &config.spec,
                config.partition.as_deref(),
                config.kernel_n,
                config.master_seed,
            )?)
        }
    })
}

/// Runs the experiment and writes its CSV to the configured path.
pub fn run_and_write(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    let out = run(config, jobs)?;
    fs::write(&config.csv, out.to_csv())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn config(methods: &str, sizes: &str, reps: usize) -> ExperimentConfig {
        let text = format!(
            r#"{{"vf": {{"q":4,"terms":[{{"kind":"exp_linear","indices":[1,2,3,4],
                "beta":[-0.5,0.1,0.8,-0.2],"offset":-1}}]}},
                "methods": {methods}, "sizes": {sizes}, "reps": {reps},
                "master_seed": 17, "outputs": {{"csv": "out.csv"}}}}"#
        );
        ExperimentConfig::parse(&text, Path::new("/tmp")).unwrap()
    }

    #[test]
    fn config_validation() {
        let base = Path::new(".");
        let ok = r#"{"vf":{"q":2,"terms":[]},"methods":["kernel"],"sizes":[4],"reps":2,
                     "master_seed":1,"outputs":{"csv":"x.csv"}}"#;
        assert!(ExperimentConfig::parse(ok, base).is_ok());
        for bad in [
            ok.replace("\"reps\":2", "\"reps\":1"),
            ok.replace("[4]", "[8,4]"),
            ok.replace("[4]", "[]"),
            ok.replace("[\"kernel\"]", "[\"kernal\"]"),
            ok.replace("[\"kernel\"]", "[]"),
            ok.replace("\"reps\":2", "\"reps\":2,\"extra\":0"),
        ] {
            let err = ExperimentConfig::parse(&bad, base).unwrap_err();
            assert_eq!(err.name(), "SchemaError", "{bad}");
        }
    }

    #[test]
    fn csv_schema_and_row_count() {
        let c = config(r#"["kernel-paired","permutation-paired"]"#, "[16, 64]", 4);
        let r = run_bias_variance(&c, 1).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 2 * 4);
        assert!(lines[1].starts_with("kernel-paired,16,1,"));
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[6], "2");
        // 17 significant digits
        assert_eq!(fields[3].split('e').next().unwrap().len(), 18);
        assert!(r
            .rows
            .iter()
            .all(|row| row.bias >= 0.0 && row.sigma_hat >= 0.0));
    }

    #[test]
    fn jobs_do_not_change_output() {
        let c = config(r#"["kernel","permutation-paired"]"#, "[32]", 12);
        let a = run_bias_variance(&c, 1).unwrap().to_csv();
        let b = run_bias_variance(&c, 4).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn method_comparison_zero_game() {
        let spec = ValueFunctionSpec::parse(r#"{"q":3,"terms":[]}"#).unwrap();
        let m = run_method_comparison(&spec, None, 0).unwrap();
        assert!(m.kernel.eigenvalues.iter().all(|&l| l == 0.0));
        assert!(m.permutation.eigenvalues.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn additive_recovery_three_block() {
        let r = run_additive_recovery(&presets::three_block(), None, 100, 8).unwrap();
        assert_eq!(r.partition.len(), 3);
        assert!(r.max_permutation_error() < 1e-9);
        assert!(r.max_kernel_error() > 1e-3);
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    #[test]
    fn additive_recovery_rejects_crossing_partition() {
        let bad = vec![vec![1, 2, 4], vec![3, 5, 6], vec![7, 8, 9]];
        let err = run_additive_recovery(&presets::three_block(), Some(&bad), 100, 8).unwrap_err();
        assert_eq!(err.name(), "PartitionError");
    }

    #[test]
    fn single_group_totals() {
        let spec = presets::exp_linear_reference();
        let r = run_additive_recovery(&spec, Some(&[vec![1, 2, 3, 4]]), 50, 1).unwrap();
        let total = 0.2f64.exp() - 1.0;
        for v in [
            r.exact[0],
            r.permutation_paired[0],
            r.permutation[0],
            r.kernel_paired[0],
        ] {
            assert!((v - total).abs() < 1e-9);
        }
    }
}
