//! Run and simulation configuration files (TOML) and the option specs they share
//! with the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fusedridge::estimator::ClassData;
use fusedridge::selection::CvMethod;
use fusedridge::sim::{ScenarioId, SimulationConfig};
use fusedridge::targets::{dag_target, scalar_target, DirectedGraphSpec, ScalarTarget};
use fusedridge::SymMatrix;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::io::{read_dataset, read_file, read_sym_matrix, Dataset};

/// The configuration schema version this build understands.
pub const SPEC_VERSION: u32 = 1;

/// Settings for `fit`, `select` and `test`. Command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec_version: u32,
    pub target: Option<String>,
    pub lambda: Option<f64>,
    pub fusion: Option<f64>,
    /// Full penalty matrix, overriding `lambda` and `fusion`.
    pub penalty: Option<Vec<Vec<f64>>>,
    /// Penalty template as a grid of labels, or `shared` / `class-specific`.
    pub template: Option<TemplateSpec>,
    pub method: Option<String>,
    pub budget: Option<usize>,
    pub start: Option<BTreeMap<String, f64>>,
    pub permutations: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TemplateSpec {
    Named(String),
    Grid(Vec<Vec<String>>),
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_file(path)?;
    toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn check_version(version: u32, path: &Path) -> CliResult<()> {
    if version != SPEC_VERSION {
        return Err(CliError::validation(format!(
            "{}: spec_version {version} is not supported (expected {SPEC_VERSION})",
            path.display()
        )));
    }
    Ok(())
}

pub fn load_run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig { spec_version: SPEC_VERSION, ..RunConfig::default() }),
        Some(path) => {
            let config: RunConfig = parse_toml(path)?;
            check_version(config.spec_version, path)?;
            Ok(config)
        }
    }
}

/// Parses `kcv:<K>`, `loocv`, `sloocv` or `fkl`.
pub fn parse_method(text: &str, seed: u64) -> CliResult<CvMethod> {
    match text {
        "loocv" => Ok(CvMethod::LeaveOneOut),
        "sloocv" => Ok(CvMethod::SingleUpdateLeaveOneOut),
        "fkl" => Ok(CvMethod::FusedKullbackLeibler),
        _ => {
            let folds = text
                .strip_prefix("kcv:")
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(|| CliError::validation(format!("unknown method {text:?}; use kcv:<K>, loocv, sloocv or fkl")))?;
            Ok(CvMethod::KFold { folds, seed })
        }
    }
}

/// Builds one target per class from a target spec:
/// `scalar:auto` (per-class `p/tr(S_g)`), `scalar:pooled` (common `p/tr(S_•)`),
/// `scalar:<value>`, `zero`, the path of a matrix CSV, or `dag:<edges>,<pilot.csv>`.
pub fn build_targets(spec: &str, dataset: &Dataset, data: &[ClassData]) -> CliResult<Vec<SymMatrix>> {
    let g = data.len();
    let common = |t: SymMatrix| Ok(vec![t; g]);
    if spec == "zero" {
        return common(SymMatrix::zeros(dataset.dim()));
    }
    if let Some(kind) = spec.strip_prefix("scalar:") {
        return match kind {
            "auto" => data
                .iter()
                .map(|d| scalar_target(d.covariance(), ScalarTarget::InverseMeanEigenvalue).map_err(CliError::from))
                .collect(),
            "pooled" => common(scalar_target(
                &fusedridge::estimator::pooled_covariance(data),
                ScalarTarget::InverseMeanEigenvalue,
            )?),
            value => {
                let alpha: f64 = value
                    .parse()
                    .map_err(|_| CliError::validation(format!("target {spec:?}: cannot parse {value:?} as a number")))?;
                common(scalar_target(data[0].covariance(), ScalarTarget::Fixed(alpha))?)
            }
        };
    }
    if let Some(rest) = spec.strip_prefix("dag:") {
        let (edges, pilot_path) = rest
            .split_once(',')
            .ok_or_else(|| CliError::validation(format!("target {spec:?}: expected dag:<edge list>,<pilot csv>")))?;
        let graph = DirectedGraphSpec::parse_edge_list(&read_file(Path::new(edges))?, &dataset.variables)?;
        let pilot = read_dataset(Path::new(pilot_path))?;
        if pilot.variables != dataset.variables {
            return Err(CliError::validation(format!("{pilot_path}: variables differ from the data")));
        }
        let rows: Vec<_> = pilot.samples.iter().flat_map(|y| y.row_iter().map(|r| r.into_owned())).collect();
        let stacked = nalgebra::DMatrix::from_rows(&rows);
        let centred = ClassData::from_samples(&stacked)?;
        let fitted = dag_target(centred.samples().expect("built from samples"), &graph)?;
        return common(fitted.target);
    }
    let path = PathBuf::from(spec);
    if !path.exists() {
        return Err(CliError::validation(format!(
            "unknown target {spec:?}; use scalar:auto, scalar:pooled, scalar:<value>, zero, a matrix CSV or dag:<edges>,<pilot>"
        )));
    }
    common(read_sym_matrix(&path, &dataset.variables)?)
}

/// Simulation settings; unset fields take the scenario's defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    pub spec_version: u32,
    pub scenario: String,
    pub class_sizes: Vec<usize>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub budget: Option<usize>,
    pub p: Option<usize>,
    pub bands: Option<Vec<usize>>,
}

pub fn load_simulation(path: &Path, seed_override: Option<u64>) -> CliResult<SimulationConfig> {
    let file: SimulationFile = parse_toml(path)?;
    check_version(file.spec_version, path)?;
    let scenario: ScenarioId = file.scenario.parse()?;
    let mut config = SimulationConfig::preset(scenario, file.class_sizes);
    if let Some(r) = file.replicates {
        config.replicates = r;
    }
    if let Some(seed) = seed_override.or(file.seed) {
        config.seed = seed;
    }
    if let Some(method) = &file.method {
        config.method = parse_method(method, config.seed)?;
    }
    if let Some(budget) = file.budget {
        config.budget = budget;
    }
    if let Some(p) = file.p {
        config.p = p;
    }
    if let Some(bands) = file.bands {
        config.bands = bands;
    }
    config.validate()?;
    Ok(config)
}
