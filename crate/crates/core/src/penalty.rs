//! Penalty matrices and the parameter-sharing templates used to build them.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

/// Symmetric `G×G` matrix with ridge penalties on the diagonal and pairwise
/// fusion penalties off it.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix(DMatrix<f64>);

impl PenaltyMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        validate(&m)?;
        Ok(PenaltyMatrix(m))
    }

    /// Same ridge penalty for every class and a common fusion penalty for every pair.
    pub fn uniform(classes: usize, ridge: f64, fusion: f64) -> Result<Self> {
        let mut m = DMatrix::from_element(classes, classes, fusion);
        m.fill_diagonal(ridge);
        Self::new(m)
    }

    pub fn diagonal(ridge: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(ridge)))
    }

    pub fn classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, g1: usize, g2: usize) -> f64 {
        self.0[(g1, g2)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `λ_{g•}`: the sum of row (equivalently column) `g`.
    pub fn row_sum(&self, g: usize) -> f64 {
        self.0.row(g).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.classes()).map(|g| self.row_sum(g)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_diagonal(&self) -> bool {
        let g = self.classes();
        (0..g).all(|i| (0..g).all(|j| i == j || self.0[(i, j)] == 0.0))
    }

    /// Smallest off-diagonal entry, or `None` for a single class.
    pub fn min_fusion(&self) -> Option<f64> {
        let g = self.classes();
        (0..g)
            .flat_map(|i| (0..g).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.0[(i, j)])
            .reduce(f64::min)
    }
}

/// Checks every requirement on a penalty matrix and reports all violations.
pub fn validate(m: &DMatrix<f64>) -> Result<()> {
    let mut problems = Vec::new();
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Penalty(format!(
            "penalty matrix must be non-empty and square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        problems.push("non-finite entry".to_string());
    }
    let g = m.nrows();
    for i in 0..g {
        if !(m[(i, i)] > 0.0) {
            problems.push(format!("zero or negative ridge penalty at ({i},{i})"));
        }
        for j in (i + 1)..g {
            if m[(i, j)] != m[(j, i)] {
                problems.push(format!("asymmetric entries at ({i},{j})"));
            }
            if m[(i, j)] < 0.0 || m[(j, i)] < 0.0 {
                problems.push(format!("negative fusion penalty at ({i},{j})"));
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Penalty(problems.join("; ")))
    }
}

/// `Σ_g (λ_gg/2)‖Ω_g−T_g‖² + Σ_{g1,g2} (λ_{g1g2}/4)‖(Ω_{g1}−T_{g1})−(Ω_{g2}−T_{g2})‖²`,
/// where the second sum runs over ordered pairs.
pub fn fused_penalty_value(
    omegas: &[SymMatrix],
    penalty: &PenaltyMatrix,
    targets: &[SymMatrix],
) -> Result<f64> {
    let g = penalty.classes();
    if omegas.len() != g || targets.len() != g {
        return Err(Error::input("penalty, estimates and targets disagree on the class count"));
    }
    let p = omegas[0].dim();
    if omegas.iter().chain(targets).any(|m| m.dim() != p) {
        return Err(Error::input("estimates and targets differ in dimension"));
    }
    let diffs: Vec<DMatrix<f64>> = omegas
        .iter()
        .zip(targets)
        .map(|(o, t)| o.as_matrix() - t.as_matrix())
        .collect();
    let mut value = 0.0;
    for g1 in 0..g {
        value += 0.5 * penalty.get(g1, g1) * diffs[g1].norm_squared();
        for g2 in (g1 + 1)..g {
            let lambda = penalty.get(g1, g2);
            if lambda != 0.0 {
                value += 0.5 * lambda * (&diffs[g1] - &diffs[g2]).norm_squared();
            }
        }
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Ridge,
    Fusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeParameter {
    pub name: String,
    pub kind: ParamKind,
    pub log_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Zero,
    Param(usize),
}

/// Maps every cell of the penalty matrix to a shared free parameter or a
/// structural zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTemplate {
    params: Vec<FreeParameter>,
    cells: Vec<Vec<Cell>>,
}

impl PenaltyTemplate {
    /// Builds a template from a square grid of cell labels. A label of `"0"` is a
    /// structural zero; anything else names a parameter. Parameters on the
    /// diagonal are ridge parameters and may not appear off the diagonal.
    pub fn from_labels<S: AsRef<str>>(labels: &[Vec<S>]) -> Result<Self> {
        let g = labels.len();
        if g == 0 || labels.iter().any(|row| row.len() != g) {
            return Err(Error::Penalty("template must be a non-empty square grid".into()));
        }
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut params: Vec<FreeParameter> = Vec::new();
        let mut cells = vec![vec![Cell::Zero; g]; g];
        // Diagonal first so that ridge parameters are classified before use.
        let order = (0..g).map(|i| (i, i)).chain(
            (0..g).flat_map(|i| (0..g).filter(move |&j| j != i).map(move |j| (i, j))),
        );
        for (i, j) in order {
            let label = labels[i][j].as_ref().trim();
            if label != labels[j][i].as_ref().trim() {
                return Err(Error::Penalty(format!(
                    "template is not symmetric at ({i},{j}): {label:?} vs {:?}",
                    labels[j][i].as_ref()
                )));
            }
            if label == "0" {
                if i == j {
                    return Err(Error::Penalty(format!(
                        "diagonal cell ({i},{i}) must name a ridge parameter"
                    )));
                }
                continue;
            }
            if label.is_empty() {
                return Err(Error::Penalty(format!("empty label at ({i},{j})")));
            }
            let kind = if i == j { ParamKind::Ridge } else { ParamKind::Fusion };
            let idx = match index.get(label) {
                Some(&idx) => {
                    if params[idx].kind != kind {
                        return Err(Error::Penalty(format!(
                            "parameter {label:?} is used both as a ridge and a fusion penalty"
                        )));
                    }
                    idx
                }
                None => {
                    params.push(FreeParameter {
                        name: label.to_string(),
                        kind,
                        log_scale: true,
                    });
                    index.insert(label.to_string(), params.len() - 1);
                    params.len() - 1
                }
            };
            cells[i][j] = Cell::Param(idx);
        }
        Ok(PenaltyTemplate { params, cells })
    }

    /// One ridge parameter `lambda` shared by all classes and one fusion
    /// parameter `lambda_f` shared by all pairs.
    pub fn shared(classes: usize) -> Self {
        let labels: Vec<Vec<&str>> = (0..classes)
            .map(|i| (0..classes).map(|j| if i == j { "lambda" } else { "lambda_f" }).collect())
            .collect();
        Self::from_labels(&labels).expect("shared template is well formed")
    }

    /// A ridge parameter `lambda_<g>` per class (1-based) and a common fusion
    /// parameter `lambda_f`.
    pub fn class_specific(classes: usize) -> Self {
        let labels: Vec<Vec<String>> = (0..classes)
            .map(|i| {
                (0..classes)
                    .map(|j| if i == j { format!("lambda_{}", i + 1) } else { "lambda_f".into() })
                    .collect()
            })
            .collect();
        Self::from_labels(&labels).expect("class-specific template is well formed")
    }

    pub fn classes(&self) -> usize {
        self.cells.len()
    }

    pub fn params(&self) -> &[FreeParameter] {
        &self.params
    }

    pub fn cell(&self, g1: usize, g2: usize) -> Cell {
        self.cells[g1][g2]
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Fills the template from values given in parameter order.
    pub fn instantiate(&self, values: &[f64]) -> Result<PenaltyMatrix> {
        if values.len() != self.params.len() {
            return Err(Error::Penalty(format!(
                "template has {} parameters but {} values were given",
                self.params.len(),
                values.len()
            )));
        }
        for (param, &v) in self.params.iter().zip(values) {
            let ok = match param.kind {
                ParamKind::Ridge => v > 0.0 && v.is_finite(),
                ParamKind::Fusion => v >= 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(Error::Penalty(format!(
                    "invalid value {v} for {:?} parameter {:?}",
                    param.kind, param.name
                )));
            }
        }
        let g = self.classes();
        let m = DMatrix::from_fn(g, g, |i, j| match self.cells[i][j] {
            Cell::Zero => 0.0,
            Cell::Param(k) => values[k],
        });
        PenaltyMatrix::new(m)
    }

    /// Fills the template from named values; every parameter must be present.
    pub fn instantiate_named(&self, values: &HashMap<String, f64>) -> Result<PenaltyMatrix> {
        let ordered = self.values_from_names(values)?;
        self.instantiate(&ordered)
    }

    pub fn values_from_names(&self, values: &HashMap<String, f64>) -> Result<Vec<f64>> {
        if let Some(unknown) = values.keys().find(|k| self.param_index(k).is_none()) {
            return Err(Error::Penalty(format!("unknown penalty parameter {unknown:?}")));
        }
        self.params
            .iter()
            .map(|p| {
                values
                    .get(&p.name)
                    .copied()
                    .ok_or_else(|| Error::Penalty(format!("missing value for parameter {:?}", p.name)))
            })
            .collect()
    }
}

/// Template for a full factorial design. Classes are ordered with the first
/// factor varying slowest. Two classes that differ in exactly one factor `f`
/// share the fusion parameter `fusion_names[f]` (a `None` entry makes those
/// cells structural zeros); all other pairs are structural zeros. The diagonal
/// uses the shared ridge parameter `lambda`.
pub fn factorial_template(factor_sizes: &[usize], fusion_names: &[Option<&str>]) -> Result<PenaltyTemplate> {
    if factor_sizes.is_empty() {
        return Err(Error::Penalty("factorial design needs at least one factor".into()));
    }
    if factor_sizes.len() != fusion_names.len() {
        return Err(Error::Penalty("one fusion name (or none) is needed per factor".into()));
    }
    if factor_sizes.contains(&0) {
        return Err(Error::Penalty("factor sizes must be positive".into()));
    }
    let levels = |mut idx: usize| -> Vec<usize> {
        let mut out = vec![0; factor_sizes.len()];
        for f in (0..factor_sizes.len()).rev() {
            out[f] = idx % factor_sizes[f];
            idx /= factor_sizes[f];
        }
        out
    };
    let g: usize = factor_sizes.iter().product();
    let labels: Vec<Vec<String>> = (0..g)
        .map(|i| {
            let li = levels(i);
            (0..g)
                .map(|j| {
                    if i == j {
                        return "lambda".to_string();
                    }
                    let lj = levels(j);
                    let differing: Vec<usize> = (0..li.len()).filter(|&f| li[f] != lj[f]).collect();
                    match differing.as_slice() {
                        [f] => fusion_names[*f].unwrap_or("0").to_string(),
                        _ => "0".to_string(),
                    }
                })
                .collect()
        })
        .collect();
    PenaltyTemplate::from_labels(&labels)
}
