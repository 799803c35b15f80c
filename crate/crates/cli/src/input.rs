//! Config and data file readers.

use std::fs;
use std::path::Path;

use lincom_core::model::parse_rational;
use lincom_core::{build_problem, ExperimentSpec, ObservedCounts, Problem, Rational, SimplexPoint};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Literal {
    Number(serde_json::Number),
    Text(String),
}

impl Literal {
    fn to_rational(&self) -> Result<Rational, CliError> {
        let text = match self {
            Literal::Number(n) => n.to_string(),
            Literal::Text(s) => s.clone(),
        };
        Ok(parse_rational(&text)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentEntry {
    n: u64,
    weights: Vec<Literal>,
}

/// Problem definition plus optional run settings.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    experiments: Vec<ExperimentEntry>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn problem(&self) -> Result<Problem, CliError> {
        let experiments = self
            .experiments
            .iter()
            .map(|e| {
                let weights = e.weights.iter().map(Literal::to_rational).collect::<Result<_, _>>()?;
                Ok(ExperimentSpec::new(e.n, weights)?)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(build_problem(experiments)?)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Parse {
        field: "config".into(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Headerless CSV, one row per record.
fn read_rows<T: std::str::FromStr>(path: &Path, field: &str) -> Result<Vec<Vec<T>>, CliError>
where
    T::Err: std::fmt::Display,
{
    let text = read(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Parse {
            field: field.into(),
            message: e.to_string(),
        })?;
        let row = record
            .iter()
            .map(|cell| {
                cell.parse::<T>().map_err(|e| CliError::Parse {
                    field: field.into(),
                    message: format!("row {}: `{cell}`: {e}", line + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_counts(path: &Path) -> Result<ObservedCounts, CliError> {
    Ok(ObservedCounts::new(read_rows(path, "counts")?))
}

pub fn read_integer_matrix(path: &Path, field: &str) -> Result<Vec<Vec<u64>>, CliError> {
    read_rows(path, field)
}

pub fn read_rational_matrix(path: &Path, field: &str) -> Result<Vec<Vec<Rational>>, CliError> {
    let rows: Vec<Vec<String>> = read_rows(path, field)?;
    rows.iter()
        .map(|r| {
            r.iter()
                .map(|c| {
                    parse_rational(c).map_err(|_| CliError::Parse {
                        field: field.into(),
                        message: format!("`{c}` is not a number"),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn read_point(path: &Path) -> Result<SimplexPoint, CliError> {
    Ok(SimplexPoint::new(read_rows(path, "p")?)?)
}
