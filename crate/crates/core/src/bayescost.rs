//! Bayes cost of a K-class classifier as a linear combination of
//! misclassification probabilities.
//!
//! Matrices are indexed `[truth][assigned]`. Weight blocks come out in truth
//! order, one experiment per true class.

use num_traits::{ToPrimitive, Zero};

use crate::bounds::{fiducial_interval, FiducialBounds, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{build_problem, estimate_l, rational_from_f64, ExperimentSpec, ObservedCounts, Problem, Rational};

/// Misclassification costs; `cost(k, m)` is the cost of assigning class `m`
/// to a unit whose true class is `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: Vec<Vec<Rational>>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<Rational>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::invalid("costs", format!("need at least 2 classes, got {k}")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(
                    "costs",
                    format!("row {i} has {} entries, expected {k}", row.len()),
                ));
            }
            for (j, c) in row.iter().enumerate() {
                if *c < Rational::zero() {
                    return Err(Error::invalid("costs", format!("entry ({i}, {j}) is negative")));
                }
                if i == j && !c.is_zero() {
                    return Err(Error::invalid("costs", format!("diagonal entry ({i}, {i}) must be 0")));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn from_f64(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            rows.iter()
                .map(|r| r.iter().map(|&c| rational_from_f64(c)).collect::<Result<_>>())
                .collect::<Result<_>>()?,
        )
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn cost(&self, truth: usize, assigned: usize) -> &Rational {
        &self.rows[truth][assigned]
    }

    pub fn rows(&self) -> &[Vec<Rational>] {
        &self.rows
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: transpose(&self.rows),
        }
    }

    pub fn scaled(&self, gamma: &Rational) -> Result<Self> {
        Self::new(
            self.rows
                .iter()
                .map(|r| r.iter().map(|c| c * gamma).collect())
                .collect(),
        )
    }
}

/// Class prevalences.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceVector {
    pr: Vec<Rational>,
}

impl PrevalenceVector {
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(pr: Vec<Rational>) -> Result<Self> {
        if pr.iter().any(|p| *p < Rational::zero()) {
            return Err(Error::invalid("prevalence", "entries must be nonnegative"));
        }
        let sum: Rational = pr.iter().sum();
        let sum = sum.to_f64().unwrap_or(f64::NAN);
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::invalid("prevalence", format!("entries sum to {sum}, expected 1")));
        }
        Ok(Self { pr })
    }

    pub fn from_f64(pr: &[f64]) -> Result<Self> {
        Self::new(pr.iter().map(|&p| rational_from_f64(p)).collect::<Result<_>>()?)
    }

    pub fn values(&self) -> &[Rational] {
        &self.pr
    }

    pub fn len(&self) -> usize {
        self.pr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pr.is_empty()
    }
}

/// Classification counts, rows = truth, columns = assigned class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    rows: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::invalid("table", format!("need at least 2 classes, got {k}")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(
                    "table",
                    format!("row {i} has {} entries, expected {k}", row.len()),
                ));
            }
            if row.iter().all(|&x| x == 0) {
                return Err(Error::invalid("table", format!("row {i} sums to 0")));
            }
        }
        Ok(Self { rows })
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn transpose(&self) -> Result<Self> {
        Self::new(transpose(&self.rows))
    }
}

fn transpose<T: Clone>(rows: &[Vec<T>]) -> Vec<Vec<T>> {
    (0..rows.len())
        .map(|j| rows.iter().map(|r| r[j].clone()).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    None,
    /// Half away from zero.
    NearestInteger,
}

/// `w[k][m] = c(k, m) * pr_k`, zero on the diagonal, one block per true class.
pub fn bc_weights(costs: &CostMatrix, prev: &PrevalenceVector, rounding: Rounding) -> Result<Vec<Vec<Rational>>> {
    if costs.classes() != prev.len() {
        return Err(Error::invalid(
            "prevalence",
            format!("{} prevalences for {} classes", prev.len(), costs.classes()),
        ));
    }
    Ok(costs
        .rows()
        .iter()
        .zip(prev.values())
        .map(|(row, pr)| {
            row.iter()
                .map(|c| {
                    let w = c * pr;
                    match rounding {
                        Rounding::None => w,
                        Rounding::NearestInteger => w.round(),
                    }
                })
                .collect()
        })
        .collect())
}

/// One experiment per true class, with the table rows as counts.
pub fn bc_problem(table: &ContingencyTable, weights: &[Vec<Rational>]) -> Result<(Problem, ObservedCounts)> {
    if weights.len() != table.classes() || weights.iter().any(|w| w.len() != table.classes()) {
        return Err(Error::invalid(
            "weights",
            format!("expected {0} blocks of {0} weights", table.classes()),
        ));
    }
    let experiments = table
        .row_totals()
        .into_iter()
        .zip(weights)
        .map(|(n, w)| ExperimentSpec::new(n, w.clone()))
        .collect::<Result<_>>()?;
    let problem = build_problem(experiments)?;
    Ok((problem, ObservedCounts::new(table.rows().to_vec())))
}

pub fn estimate_bc(table: &ContingencyTable, weights: &[Vec<Rational>]) -> Result<Rational> {
    let (problem, counts) = bc_problem(table, weights)?;
    estimate_l(&problem, &counts)
}

/// Point estimate and exact interval for the Bayes cost.
pub fn bc_interval(table: &ContingencyTable, weights: &[Vec<Rational>], alpha: f64, cfg: &SolverConfig) -> Result<FiducialBounds> {
    let (problem, counts) = bc_problem(table, weights)?;
    fiducial_interval(&problem, &counts, alpha, cfg)
}

/// Kidney-transplant outcome data: classes NKF, NKF-P, CAN.
pub mod transplant {
    use super::*;

    pub const CLASSES: [&str; 3] = ["NKF", "NKF-P", "CAN"];

    pub fn prevalence() -> PrevalenceVector {
        PrevalenceVector::new(vec![
            Rational::new(50, 100),
            Rational::new(28, 100),
            Rational::new(22, 100),
        ])
        .expect("valid prevalences")
    }

    pub fn costs() -> CostMatrix {
        let c = |rows: [[i128; 3]; 3]| {
            rows.iter()
                .map(|r| r.iter().map(|&x| Rational::from_integer(x)).collect())
                .collect()
        };
        CostMatrix::new(c([[0, 4, 4], [25, 0, 4], [45, 14, 0]])).expect("valid costs")
    }

    fn table(rows: [[u64; 3]; 3]) -> ContingencyTable {
        ContingencyTable::new(rows.iter().map(|r| r.to_vec()).collect()).expect("valid table")
    }

    /// Recursive partitioning.
    pub fn srp() -> ContingencyTable {
        table([[26, 1, 5], [5, 9, 4], [1, 2, 11]])
    }

    /// Bayesian additive regression trees.
    pub fn bart() -> ContingencyTable {
        table([[29, 1, 2], [5, 10, 3], [2, 2, 10]])
    }

    /// Multinomial regression.
    pub fn mnr() -> ContingencyTable {
        table([[30, 2, 0], [11, 7, 0], [2, 8, 4]])
    }
}
