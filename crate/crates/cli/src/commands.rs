use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fusedridge::estimator::{fit, objective, ClassData, FitMethod, FitOptions, PrecisionEstimates};
use fusedridge::graphs::{
    centrality, compare, covariance_path_decomposition, lfdr_fit, partial_correlation, sparsified_precision, sparsify,
    total_network, CompareMode, LfdrOptions, PathLabel, SparseGraph,
};
use fusedridge::inference::{ks_uniformity, permutation_test};
use fusedridge::linalg::gaussian_loglik;
use fusedridge::penalty::{PenaltyMatrix, PenaltyTemplate};
use fusedridge::selection::{optimize_penalties, CvMethod};
use fusedridge::sim::{penalty_columns, run_scenario, summarize as summarize_losses};
use fusedridge::SymMatrix;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{build_targets, load_run_config, load_simulation, parse_method, RunConfig, TemplateSpec};
use crate::error::{CliError, CliResult};
use crate::io::{
    create_dir, matrix_csv, read_dataset, read_file, read_label_grid, read_numeric_grid, read_sym_matrix, write_json,
    write_text, Dataset,
};

/// File-name-safe version of a class label.
fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn fit_options(config: &RunConfig, tolerance: Option<f64>, max_iter: Option<usize>) -> FitOptions {
    let defaults = FitOptions::default();
    FitOptions {
        tolerance: tolerance.or(config.tolerance).unwrap_or(defaults.tolerance),
        max_iter: max_iter.or(config.max_iter).unwrap_or(defaults.max_iter),
        ..defaults
    }
}

/// Penalty flags shared by `fit` and `test`.
#[derive(Debug, Clone, clap::Args)]
pub struct PenaltyArgs {
    /// Ridge penalty for every class.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fusion penalty for every pair of classes.
    #[arg(long)]
    pub fusion: Option<f64>,
    /// Headerless CSV with the full G×G penalty matrix.
    #[arg(long, conflicts_with_all = ["lambda", "fusion"])]
    pub penalty: Option<PathBuf>,
}

impl PenaltyArgs {
    fn resolve(&self, config: &RunConfig, classes: usize) -> CliResult<PenaltyMatrix> {
        let matrix = if let Some(path) = &self.penalty {
            read_numeric_grid(path)?
        } else if let (None, None, Some(rows)) = (self.lambda, self.fusion, &config.penalty) {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(CliError::validation("config penalty must be a square matrix"));
            }
            DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied())
        } else {
            let ridge = self
                .lambda
                .or(config.lambda)
                .ok_or_else(|| CliError::validation("no penalty given; use --lambda/--fusion, --penalty or a config file"))?;
            let fusion = self.fusion.or(config.fusion).unwrap_or(0.0);
            let mut m = DMatrix::from_element(classes, classes, fusion);
            m.fill_diagonal(ridge);
            m
        };
        if matrix.nrows() != classes {
            return Err(CliError::validation(format!(
                "penalty matrix is {0}x{0} but the data have {classes} classes",
                matrix.nrows()
            )));
        }
        Ok(PenaltyMatrix::new(matrix)?)
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct FitArgs {
    /// Data CSV with a leading `class` column.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Target: scalar:auto, scalar:pooled, scalar:<value>, zero, a matrix CSV, or dag:<edges>,<pilot.csv>.
    #[arg(long)]
    pub target: Option<String>,
    /// Convergence threshold on the relative squared change per sweep.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output directory for the estimates and report.
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of `report.json` in a fit bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub variables: Vec<String>,
    pub classes: Vec<String>,
    pub sample_sizes: Vec<usize>,
    pub estimate_files: Vec<String>,
    pub penalty: Vec<Vec<f64>>,
    pub target: String,
    pub method: String,
    pub converged: bool,
    pub iterations: usize,
    pub final_relative_change: f64,
    pub kkt_residuals: Vec<f64>,
    pub log_likelihood: f64,
    pub penalized_log_likelihood: f64,
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let config = load_run_config(args.config.as_deref())?;
    let dataset = read_dataset(&args.data)?;
    let data = dataset.class_data()?;
    let penalty = args.penalty.resolve(&config, data.len())?;
    let target_spec = args.target.clone().or(config.target.clone()).unwrap_or_else(|| "scalar:auto".into());
    let targets = build_targets(&target_spec, &dataset, &data)?;
    let options = fit_options(&config, args.tolerance, args.max_iter);
    let (estimates, failure) = match fit(&data, &penalty, &targets, &options) {
        Ok(e) => (e, None),
        Err(fusedridge::Error::Convergence { last, iterations, relative_change }) => {
            let message = format!("no convergence after {iterations} iterations (relative change {relative_change:.3e}); last iterate written");
            (*last, Some(CliError::Convergence(message)))
        }
        Err(e) => return Err(e.into()),
    };
    write_fit_bundle(&args.out, &dataset, &data, &penalty, &targets, &target_spec, &estimates, failure.is_none())?;
    failure.map_or(Ok(()), Err)
}

#[allow(clippy::too_many_arguments)]
fn write_fit_bundle(
    out: &Path,
    dataset: &Dataset,
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
    target_spec: &str,
    fitted: &PrecisionEstimates,
    converged: bool,
) -> CliResult<()> {
    create_dir(out)?;
    let mut files = Vec::new();
    for (label, omega) in dataset.classes.iter().zip(&fitted.estimates) {
        let name = format!("omega_{}.csv", file_stem(label));
        write_text(&out.join(&name), &matrix_csv(omega.as_matrix(), &dataset.variables))?;
        files.push(name);
    }
    let log_likelihood = fitted
        .estimates
        .iter()
        .zip(data)
        .map(|(o, d)| gaussian_loglik(o, d.covariance(), d.n()))
        .sum::<fusedridge::Result<f64>>()?;
    let method = match fitted.method {
        FitMethod::ClosedForm => "closed_form",
        FitMethod::Pooled => "pooled",
        FitMethod::CoordinateAscent => "coordinate_ascent",
    };
    let report = FitReport {
        variables: dataset.variables.clone(),
        classes: dataset.classes.clone(),
        sample_sizes: data.iter().map(ClassData::n).collect(),
        estimate_files: files,
        penalty: matrix_rows(penalty.as_matrix()),
        target: target_spec.to_string(),
        method: method.into(),
        converged,
        iterations: fitted.iterations,
        final_relative_change: fitted.final_relative_change,
        kkt_residuals: fitted.kkt_residuals.clone(),
        log_likelihood,
        penalized_log_likelihood: objective(&fitted.estimates, data, penalty, targets)?,
    };
    write_json(&out.join("report.json"), &report)
}

/// A fit bundle read back from disk.
struct Bundle {
    report: FitReport,
    estimates: Vec<SymMatrix>,
}

fn read_bundle(dir: &Path) -> CliResult<Bundle> {
    let path = dir.join("report.json");
    let report: FitReport = serde_json::from_str(&read_file(&path)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let estimates = report
        .estimate_files
        .iter()
        .map(|f| read_sym_matrix(&dir.join(f), &report.variables))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Bundle { report, estimates })
}

impl Bundle {
    /// Indices of the requested classes, or all classes when none are named.
    fn select(&self, names: &[String]) -> CliResult<Vec<usize>> {
        if names.is_empty() {
            return Ok((0..self.report.classes.len()).collect());
        }
        names
            .iter()
            .map(|n| {
                self.report.classes.iter().position(|c| c == n).ok_or_else(|| {
                    CliError::validation(format!("unknown class {n:?}; classes are {}", self.report.classes.join(", ")))
                })
            })
            .collect()
    }

    fn variable(&self, name: &str) -> CliResult<usize> {
        self.report
            .variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| CliError::validation(format!("unknown variable {name:?}")))
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Penalty template: shared, class-specific, or a headerless CSV grid of labels (`0` = fixed zero).
    #[arg(long)]
    pub template: Option<String>,
    /// Criterion: kcv:<K>, loocv, sloocv or fkl.
    #[arg(long)]
    pub method: Option<String>,
    /// Maximum number of criterion evaluations.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Starting values as name=value pairs, e.g. lambda=1,lambda_f=0.1 (default 1 for every parameter).
    #[arg(long, value_delimiter = ',')]
    pub start: Vec<String>,
    #[arg(long)]
    pub target: Option<String>,
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    parameters: BTreeMap<String, f64>,
    score: f64,
}

#[derive(Debug, Serialize)]
struct SelectReport {
    method: String,
    folds: Option<usize>,
    seed: Option<u64>,
    parameters: BTreeMap<String, f64>,
    penalty: Vec<Vec<f64>>,
    score: f64,
    evaluations: usize,
    converged: bool,
    target: String,
    trace: Vec<TraceRow>,
}

fn resolve_template(spec: Option<&TemplateSpec>, classes: usize) -> CliResult<PenaltyTemplate> {
    match spec {
        None => Ok(PenaltyTemplate::shared(classes)),
        Some(TemplateSpec::Named(name)) if name == "shared" => Ok(PenaltyTemplate::shared(classes)),
        Some(TemplateSpec::Named(name)) if name == "class-specific" => Ok(PenaltyTemplate::class_specific(classes)),
        Some(TemplateSpec::Named(path)) => Ok(PenaltyTemplate::from_labels(&read_label_grid(Path::new(path))?)?),
        Some(TemplateSpec::Grid(grid)) => Ok(PenaltyTemplate::from_labels(grid)?),
    }
}

pub fn cmd_select(args: &SelectArgs, seed: u64) -> CliResult<()> {
    let config = load_run_config(args.config.as_deref())?;
    let dataset = read_dataset(&args.data)?;
    dataset.require_min_samples(2)?;
    let data = dataset.class_data()?;
    let template_spec = args.template.clone().map(TemplateSpec::Named).or(config.template.clone());
    let template = resolve_template(template_spec.as_ref(), data.len())?;
    if template.classes() != data.len() {
        return Err(CliError::validation(format!(
            "template has {} classes but the data have {}",
            template.classes(),
            data.len()
        )));
    }
    let method = parse_method(args.method.as_deref().or(config.method.as_deref()).unwrap_or("loocv"), seed)?;
    let budget = args.budget.or(config.budget).unwrap_or(100);
    let mut start_values: BTreeMap<String, f64> = config.start.clone().unwrap_or_default();
    for pair in &args.start {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("start value {pair:?} must look like name=value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::validation(format!("start value {pair:?}: cannot parse the number")))?;
        start_values.insert(name.trim().to_string(), value);
    }
    for name in start_values.keys() {
        if template.param_index(name).is_none() {
            return Err(CliError::validation(format!("start value for unknown parameter {name:?}")));
        }
    }
    let start: Vec<f64> = template.params().iter().map(|p| start_values.get(&p.name).copied().unwrap_or(1.0)).collect();
    let target_spec = args.target.clone().or(config.target.clone()).unwrap_or_else(|| "scalar:auto".into());
    let targets = build_targets(&target_spec, &dataset, &data)?;
    let options = fit_options(&config, None, None);
    let selection = optimize_penalties(&template, &data, &targets, &method, &start, budget, &options)?;
    let named = |values: &[f64]| -> BTreeMap<String, f64> {
        template.params().iter().zip(values).map(|(p, &v)| (p.name.clone(), v)).collect()
    };
    let (folds, fold_seed) = match method {
        CvMethod::KFold { folds, seed } => (Some(folds), Some(seed)),
        _ => (None, None),
    };
    let report = SelectReport {
        method: method.name().to_string(),
        folds,
        seed: fold_seed,
        parameters: named(&selection.values),
        penalty: matrix_rows(selection.penalty.as_matrix()),
        score: selection.score.value,
        evaluations: selection.evaluations,
        converged: selection.converged,
        target: target_spec,
        trace: selection.trace.iter().map(|t| TraceRow { parameters: named(&t.values), score: t.score }).collect(),
    };
    write_json(&args.out, &report)
}

#[derive(Debug, Clone, clap::Args)]
pub struct TestArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Common target for the null estimate (default scalar:pooled).
    #[arg(long)]
    pub target: Option<String>,
    /// Number of label permutations.
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Also rerun the test this many times on label-shuffled copies of the data
    /// and check the p-values for uniformity.
    #[arg(long)]
    pub calibrate: Option<usize>,
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Calibration {
    repetitions: usize,
    p_values: Vec<f64>,
    ks_statistic: f64,
    ks_p_value: f64,
}

#[derive(Debug, Serialize)]
struct TestReport {
    observed: f64,
    p_value: f64,
    permutations: usize,
    seed: u64,
    penalty: Vec<Vec<f64>>,
    target: String,
    null_draws: Vec<f64>,
    calibration: Option<Calibration>,
}

pub fn cmd_test(args: &TestArgs, seed: u64) -> CliResult<()> {
    let config = load_run_config(args.config.as_deref())?;
    let dataset = read_dataset(&args.data)?;
    dataset.require_min_samples(2)?;
    let data = dataset.class_data()?;
    let penalty = args.penalty.resolve(&config, data.len())?;
    let target_spec = args.target.clone().or(config.target.clone()).unwrap_or_else(|| "scalar:pooled".into());
    let targets = build_targets(&target_spec, &dataset, &data)?;
    if targets.iter().any(|t| t != &targets[0]) {
        return Err(CliError::validation("the test needs one common target; use e.g. scalar:pooled"));
    }
    let permutations = args.permutations.or(config.permutations).unwrap_or(1000);
    let result = permutation_test(&data, &penalty, &targets[0], permutations, seed)?;
    let calibration = match args.calibrate {
        None | Some(0) => None,
        Some(repetitions) => Some(calibrate(&data, &penalty, &targets[0], permutations, seed, repetitions)?),
    };
    let report = TestReport {
        observed: result.observed,
        p_value: result.p_value,
        permutations,
        seed,
        penalty: matrix_rows(penalty.as_matrix()),
        target: target_spec,
        null_draws: result.null_draws,
        calibration,
    };
    write_json(&args.out, &report)
}

/// Test p-values on copies of the data whose class labels were shuffled, so that
/// the null hypothesis holds by construction.
fn calibrate(
    data: &[ClassData],
    penalty: &PenaltyMatrix,
    target: &SymMatrix,
    permutations: usize,
    seed: u64,
    repetitions: usize,
) -> CliResult<Calibration> {
    let rows: Vec<_> = data
        .iter()
        .flat_map(|d| d.samples().expect("data read from a file").row_iter().map(|r| r.into_owned()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p_values = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        let mut start = 0;
        let mut shuffled = Vec::with_capacity(data.len());
        for d in data {
            let picked: Vec<_> = order[start..start + d.n()].iter().map(|&i| rows[i].clone()).collect();
            start += d.n();
            shuffled.push(ClassData::from_samples(&DMatrix::from_rows(&picked))?);
        }
        let rep_seed = seed.wrapping_add(rep as u64 + 1);
        p_values.push(permutation_test(&shuffled, penalty, target, permutations, rep_seed)?.p_value);
    }
    let (ks_statistic, ks_p_value) = ks_uniformity(&p_values)?;
    Ok(Calibration { repetitions, p_values, ks_statistic, ks_p_value })
}

/// Flags shared by the graph commands.
#[derive(Debug, Clone, clap::Args)]
pub struct GraphArgs {
    /// Fit bundle directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Classes to use (repeatable); all classes by default.
    #[arg(long = "class")]
    pub classes: Vec<String>,
    /// Keep edges with posterior probability 1 − lFDR at least this large.
    #[arg(long, default_value_t = 0.99)]
    pub threshold: f64,
    #[command(flatten)]
    pub lfdr: LfdrArgs,
}

/// Settings of the lFDR mixture fit.
#[derive(Debug, Clone, clap::Args)]
pub struct LfdrArgs {
    /// Fraction of the smallest |partial correlations| used to fit the null.
    #[arg(long, default_value_t = 0.5)]
    pub central_fraction: f64,
    /// Fix the null degrees-of-freedom parameter instead of estimating it.
    #[arg(long)]
    pub kappa: Option<f64>,
}

impl LfdrArgs {
    fn options(&self) -> LfdrOptions {
        LfdrOptions { central_fraction: self.central_fraction, kappa: self.kappa }
    }
}

struct ClassGraph {
    class: usize,
    graph: SparseGraph,
    lfdr: fusedridge::graphs::LfdrFit,
}

fn class_graphs(bundle: &Bundle, classes: &[usize], threshold: f64, lfdr: &LfdrArgs) -> CliResult<Vec<ClassGraph>> {
    let options = lfdr.options();
    classes
        .iter()
        .map(|&g| {
            let pcor = partial_correlation(&bundle.estimates[g])?;
            let lfdr = lfdr_fit(&pcor.off_diagonal(), &options)?;
            if lfdr.flat {
                log::warn!("class {}: the lFDR fit found little signal (eta0 {:.3})", bundle.report.classes[g], lfdr.eta0);
            }
            let graph = sparsify(&pcor, &lfdr, threshold)?;
            Ok(ClassGraph { class: g, graph, lfdr })
        })
        .collect()
}

#[derive(Debug, Clone, clap::Args)]
pub struct SparsifyArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SparsifyClass {
    class: String,
    eta0: f64,
    kappa: f64,
    bandwidth: f64,
    flat: bool,
    edges: usize,
    diagonal_shift: f64,
}

pub fn cmd_sparsify(args: &SparsifyArgs) -> CliResult<()> {
    let bundle = read_bundle(&args.graph.fit)?;
    let selected = bundle.select(&args.graph.classes)?;
    let graphs = class_graphs(&bundle, &selected, args.graph.threshold, &args.graph.lfdr)?;
    create_dir(&args.out)?;
    let names = &bundle.report.variables;
    let mut summary = Vec::new();
    for cg in &graphs {
        let label = &bundle.report.classes[cg.class];
        let stem = file_stem(label);
        let (precision, shift) = sparsified_precision(&bundle.estimates[cg.class], &cg.graph)?;
        write_text(&args.out.join(format!("edges_{stem}.csv")), &cg.graph.to_csv(Some(names)))?;
        write_text(&args.out.join(format!("graph_{stem}.dot")), &cg.graph.to_dot(Some(names)))?;
        write_text(&args.out.join(format!("sparse_precision_{stem}.csv")), &matrix_csv(precision.as_matrix(), names))?;
        summary.push(SparsifyClass {
            class: label.clone(),
            eta0: cg.lfdr.eta0,
            kappa: cg.lfdr.kappa,
            bandwidth: cg.lfdr.bandwidth,
            flat: cg.lfdr.flat,
            edges: cg.graph.edges().len(),
            diagonal_shift: shift,
        });
    }
    write_json(&args.out.join("sparsify.json"), &summary)
}

#[derive(Debug, Clone, clap::Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Sum signed adjacencies (+1/−1) instead of counting edges.
    #[arg(long)]
    pub signed: bool,
    /// Keep only total-network pairs with |weight| greater than this.
    #[arg(long, default_value_t = 0)]
    pub min_abs: i64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SummaryReport {
    classes: Vec<String>,
    edges: Vec<usize>,
    common_edges: usize,
    differential_edges: Vec<usize>,
    total_network_pairs: usize,
}

pub fn cmd_summarize(args: &SummarizeArgs) -> CliResult<()> {
    let bundle = read_bundle(&args.graph.fit)?;
    let selected = bundle.select(&args.graph.classes)?;
    let graphs = class_graphs(&bundle, &selected, args.graph.threshold, &args.graph.lfdr)?;
    create_dir(&args.out)?;
    let names = &bundle.report.variables;
    let plain: Vec<SparseGraph> = graphs.iter().map(|cg| cg.graph.clone()).collect();

    let total = total_network(&plain, args.signed)?.filter_abs(args.min_abs);
    write_text(&args.out.join("total_network.csv"), &total.to_csv(Some(names)))?;
    write_text(&args.out.join("total_network.dot"), &total.to_dot(Some(names)))?;

    let mut common = plain[0].clone();
    for g in &plain[1..] {
        common = compare(&common, g, CompareMode::Intersection)?;
    }
    write_text(&args.out.join("common.csv"), &common.to_csv(Some(names)))?;
    write_text(&args.out.join("common.dot"), &common.to_dot(Some(names)))?;

    let mut differential_edges = Vec::new();
    for (k, cg) in graphs.iter().enumerate() {
        let stem = file_stem(&bundle.report.classes[cg.class]);
        let mut own = cg.graph.clone();
        for (other, g) in plain.iter().enumerate() {
            if other != k {
                own = compare(&own, g, CompareMode::Difference)?;
            }
        }
        differential_edges.push(own.edges().len());
        write_text(&args.out.join(format!("differential_{stem}.csv")), &own.to_csv(Some(names)))?;

        let mut table = String::from("node,degree,positive_degree,negative_degree,betweenness\n");
        for (v, c) in centrality(&cg.graph).iter().enumerate() {
            let _ = writeln!(
                table,
                "{},{},{},{},{:.16e}",
                names[v], c.degree, c.positive_degree, c.negative_degree, c.betweenness
            );
        }
        write_text(&args.out.join(format!("centrality_{stem}.csv")), &table)?;
    }
    let report = SummaryReport {
        classes: selected.iter().map(|&g| bundle.report.classes[g].clone()).collect(),
        edges: plain.iter().map(|g| g.edges().len()).collect(),
        common_edges: common.edges().len(),
        differential_edges,
        total_network_pairs: total.weights().len(),
    };
    write_json(&args.out.join("summary.json"), &report)
}

#[derive(Debug, Clone, clap::Args)]
pub struct PathsArgs {
    /// Fit bundle directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Class whose precision matrix is decomposed.
    #[arg(long)]
    pub class: String,
    /// First endpoint (variable name).
    #[arg(long)]
    pub from: String,
    /// Second endpoint (variable name).
    #[arg(long)]
    pub to: String,
    /// Longest path, in edges, to enumerate (default p − 1, i.e. all paths).
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Sparsify every class at this threshold first and label paths against
    /// the network common to all classes.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub lfdr: LfdrArgs,
    /// Output CSV table.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_paths(args: &PathsArgs) -> CliResult<()> {
    let bundle = read_bundle(&args.fit)?;
    let class = bundle.select(std::slice::from_ref(&args.class))?[0];
    let (a, b) = (bundle.variable(&args.from)?, bundle.variable(&args.to)?);
    let p = bundle.report.variables.len();
    let (omega, common) = match args.threshold {
        None => (bundle.estimates[class].clone(), None),
        Some(threshold) => {
            let all: Vec<usize> = (0..bundle.report.classes.len()).collect();
            let graphs = class_graphs(&bundle, &all, threshold, &args.lfdr)?;
            let mut common = graphs[0].graph.clone();
            for cg in &graphs[1..] {
                common = compare(&common, &cg.graph, CompareMode::Intersection)?;
            }
            let (sparse, _) = sparsified_precision(&bundle.estimates[class], &graphs[class].graph)?;
            (sparse, Some(common))
        }
    };
    let max_length = args.max_length.unwrap_or(p.saturating_sub(1)).max(1);
    let decomposition = covariance_path_decomposition(&omega, a, b, max_length, common.as_ref())?;
    let names = &bundle.report.variables;
    let mut table = String::from("path,length,contribution,label\n");
    for c in &decomposition.paths {
        let path: Vec<&str> = c.path.iter().map(|&v| names[v].as_str()).collect();
        let label = match c.label {
            PathLabel::Common => "common",
            PathLabel::Differential => "differential",
            PathLabel::Mixed => "mixed",
            PathLabel::Unlabeled => "",
        };
        let _ = writeln!(table, "{},{},{:.16e},{label}", path.join(">"), c.length(), c.contribution);
    }
    write_text(&args.out, &table)?;
    println!(
        "covariance {:.6e}, sum of {} path contributions {:.6e}, residual {:.3e}{}",
        decomposition.covariance,
        decomposition.paths.len(),
        decomposition.total + 0.0,
        decomposition.residual(),
        if decomposition.complete { "" } else { " (paths longer than the maximum length were skipped)" }
    );
    Ok(())
}

#[derive(Debug, Clone, clap::Args)]
pub struct SimulateArgs {
    /// TOML simulation configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV with one row per replicate, estimator and class.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write loss quartiles per estimator to this CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

pub fn cmd_simulate(args: &SimulateArgs, seed: Option<u64>) -> CliResult<()> {
    let config = load_simulation(&args.config, seed)?;
    let rows = run_scenario(&config)?;
    let classes = config.class_sizes.len();
    let mut out = String::from("scenario,replicate,estimator,class,frobenius_loss,quadratic_loss");
    for column in penalty_columns(classes) {
        out.push(',');
        out.push_str(&column);
    }
    out.push_str(",seed\n");
    for r in &rows {
        let _ = write!(
            out,
            "{},{},{},{},{:.16e},{:.16e}",
            r.scenario, r.replicate, r.estimator, r.class, r.frobenius_loss, r.quadratic_loss
        );
        for v in &r.penalty {
            let _ = write!(out, ",{v:.16e}");
        }
        let _ = writeln!(out, ",{}", r.seed);
    }
    write_text(&args.out, &out)?;
    if let Some(path) = &args.summary {
        let mut table = String::from("estimator,frobenius_q1,frobenius_median,frobenius_q3,quadratic_q1,quadratic_median,quadratic_q3\n");
        for s in summarize_losses(&rows, false) {
            let [f1, f2, f3] = s.frobenius_quartiles;
            let [q1, q2, q3] = s.quadratic_quartiles;
            let _ = writeln!(table, "{},{f1:.16e},{f2:.16e},{f3:.16e},{q1:.16e},{q2:.16e},{q3:.16e}", s.estimator);
        }
        write_text(path, &table)?;
    }
    Ok(())
}
