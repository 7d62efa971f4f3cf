//! Dataset and matrix files.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use fusedridge::estimator::ClassData;
use fusedridge::SymMatrix;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Samples grouped by class label, in order of first appearance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub variables: Vec<String>,
    pub classes: Vec<String>,
    pub samples: Vec<DMatrix<f64>>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    /// Column-centred class data.
    pub fn class_data(&self) -> CliResult<Vec<ClassData>> {
        self.samples.iter().map(|y| ClassData::from_samples(y).map_err(CliError::from)).collect()
    }

    /// Rejects classes too small for cross-validation or permutation.
    pub fn require_min_samples(&self, min: usize) -> CliResult<()> {
        for (name, y) in self.classes.iter().zip(&self.samples) {
            if y.nrows() < min {
                return Err(CliError::validation(format!(
                    "class {name:?} has {} samples; at least {min} are needed",
                    y.nrows()
                )));
            }
        }
        Ok(())
    }
}

pub fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes())
}

fn parse_value(field: &str, line: u64, column: &str, path: &Path) -> CliResult<f64> {
    let value: f64 = field.parse().map_err(|_| {
        CliError::validation(format!("{}: line {line}, column {column:?}: cannot parse {field:?} as a number", path.display()))
    })?;
    if !value.is_finite() {
        return Err(CliError::validation(format!("{}: line {line}, column {column:?}: value is not finite", path.display())));
    }
    Ok(value)
}

fn check_unique(names: &[String], path: &Path) -> CliResult<()> {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(CliError::validation(format!("{}: duplicate column name {name:?}", path.display())));
        }
    }
    Ok(())
}

/// Reads a CSV whose first column is `class` and whose other columns are variables.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let text = read_file(path)?;
    let mut reader = csv_reader(&text);
    let header = reader.headers().map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?.clone();
    if header.get(0) != Some("class") {
        return Err(CliError::validation(format!(
            "{}: expected the header to start with a `class` column, found {:?}",
            path.display(),
            header.get(0).unwrap_or("")
        )));
    }
    let variables: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if variables.is_empty() {
        return Err(CliError::validation(format!("{}: no variable columns", path.display())));
    }
    check_unique(&variables, path)?;
    let mut classes: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != variables.len() + 1 {
            return Err(CliError::validation(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                variables.len() + 1,
                record.len()
            )));
        }
        let label = record[0].to_string();
        let values = variables
            .iter()
            .enumerate()
            .map(|(j, name)| parse_value(&record[j + 1], line, name, path))
            .collect::<CliResult<Vec<f64>>>()?;
        let g = match classes.iter().position(|c| *c == label) {
            Some(g) => g,
            None => {
                classes.push(label);
                rows.push(Vec::new());
                classes.len() - 1
            }
        };
        rows[g].push(values);
    }
    if classes.is_empty() {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    let p = variables.len();
    let samples = rows
        .into_iter()
        .map(|r| DMatrix::from_row_iterator(r.len(), p, r.into_iter().flatten()))
        .collect();
    Ok(Dataset { variables, classes, samples })
}

/// Dense matrix CSV with the variable names as the header row and first column.
pub fn matrix_csv(m: &DMatrix<f64>, names: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&std::iter::once(String::new()).chain(names.iter().cloned()).collect::<Vec<_>>().join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        out.push_str(&names[i]);
        for j in 0..m.ncols() {
            out.push(',');
            out.push_str(&format!("{:.16e}", m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Reads a matrix written by [`matrix_csv`], returning it with its names.
pub fn read_matrix(path: &Path) -> CliResult<(DMatrix<f64>, Vec<String>)> {
    let text = read_file(path)?;
    let mut reader = csv_reader(&text);
    let header = reader.headers().map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?.clone();
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    check_unique(&names, path)?;
    let p = names.len();
    let mut values = Vec::with_capacity(p * p);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if rows >= p || record.len() != p + 1 || record[0] != names[rows] {
            return Err(CliError::validation(format!(
                "{}: line {line}: expected row {:?} with {} values",
                path.display(),
                names.get(rows).map_or("", String::as_str),
                p
            )));
        }
        for (j, name) in names.iter().enumerate() {
            values.push(parse_value(&record[j + 1], line, name, path)?);
        }
        rows += 1;
    }
    if rows != p || p == 0 {
        return Err(CliError::validation(format!("{}: expected a square {p}x{p} matrix", path.display())));
    }
    Ok((DMatrix::from_row_slice(p, p, &values), names))
}

/// Reads a symmetric matrix and checks its names against `expected`.
pub fn read_sym_matrix(path: &Path, expected: &[String]) -> CliResult<SymMatrix> {
    let (m, names) = read_matrix(path)?;
    if names != expected {
        return Err(CliError::validation(format!("{}: variable names do not match the data", path.display())));
    }
    SymMatrix::new(m).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Reads a headerless numeric CSV (e.g. a penalty matrix).
pub fn read_numeric_grid(path: &Path) -> CliResult<DMatrix<f64>> {
    let text = read_file(path)?;
    let rows = read_grid(&text, path)?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::validation(format!("{}: expected a square numeric grid", path.display())));
    }
    let mut values = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        for (j, field) in row.iter().enumerate() {
            values.push(parse_value(field, i as u64 + 1, &format!("{}", j + 1), path)?);
        }
    }
    Ok(DMatrix::from_row_slice(n, n, &values))
}

/// Reads a headerless CSV of labels (e.g. a penalty template).
pub fn read_label_grid(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let text = read_file(path)?;
    read_grid(&text, path)
}

fn read_grid(text: &str, path: &Path) -> CliResult<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
        })
        .collect()
}
