//! Coverage probability of interval procedures and the simulation harness.
//!
//! For the exact interval the coverage at `p` is computed directly from the
//! PMF of `Y` and a table of intervals for every attainable `y`. The
//! large-sample comparators depend on the full count vector, so their
//! coverage is estimated by Monte Carlo.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bounds::{check_alpha, interval_for_index, SolverConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{build_problem, estimate_l, rational_to_f64, ExperimentSpec, ObservedCounts, Problem, SimplexPoint};
use crate::optimizer::{derive_seed, sample_constrained, CONSTRAINT_TOL};

const MC_TAG: u64 = 0x4d43;

/// Masses below this may be missing from an interval table.
pub const TABLE_MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    ExactAdjusted,
    Gold,
    Goodman,
}

/// Large-sample comparator intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparator {
    /// Chi-square critical value with `sum_k (M_k - 1)` degrees of freedom.
    Gold,
    /// Chi-square critical value with one degree of freedom (single contrast).
    Goodman,
}

impl Comparator {
    pub fn method(self) -> Method {
        match self {
            Comparator::Gold => Method::Gold,
            Comparator::Goodman => Method::Goodman,
        }
    }

    pub fn degrees_of_freedom(self, problem: &Problem) -> usize {
        match self {
            Comparator::Gold => problem.experiments().iter().map(|e| e.categories() - 1).sum(),
            Comparator::Goodman => 1,
        }
    }
}

/// Sampling sizes for a coverage sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// `L` grid points.
    pub n_l: usize,
    /// Feasible `p` per `L`.
    pub n_p: usize,
    /// Monte Carlo draws of `x` per `p` for the comparators.
    pub n_draws: usize,
}

impl Budget {
    pub const fn desk() -> Self {
        Self {
            n_l: 50,
            n_p: 50,
            n_draws: 200,
        }
    }

    pub const fn full() -> Self {
        Self {
            n_l: 1000,
            n_p: 1000,
            n_draws: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_l == 0 || self.n_p == 0 || self.n_draws == 0 {
            return Err(Error::invalid("budget", "all sampling sizes must be at least 1"));
        }
        Ok(())
    }
}

/// Intervals for every attainable lattice value, indexed by lattice index.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTable {
    alpha: f64,
    entries: Vec<Option<(f64, f64)>>,
}

impl IntervalTable {
    pub fn new(alpha: f64, entries: Vec<Option<(f64, f64)>>) -> Self {
        Self { alpha, entries }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn get(&self, index: usize) -> Option<(f64, f64)> {
        self.entries.get(index).copied().flatten()
    }

    pub fn entries(&self) -> &[Option<(f64, f64)>] {
        &self.entries
    }
}

/// Solves the interval for every attainable `y`; solves are independent.
pub fn interval_table(problem: &Problem, alpha: f64, cfg: &SolverConfig, exec: Execution) -> Result<IntervalTable> {
    check_alpha(alpha)?;
    let indices = problem.attainable_indices();
    let solved = exec.try_map(indices.len(), |i| {
        interval_for_index(problem, indices[i], alpha, cfg).map(|b| (b.lower, b.upper))
    })?;
    let mut entries = vec![None; problem.lattice().count()];
    for (&j, bounds) in indices.iter().zip(solved) {
        entries[j] = Some(bounds);
    }
    Ok(IntervalTable { alpha, entries })
}

fn covers(interval: (f64, f64), l: f64) -> bool {
    let slack = CONSTRAINT_TOL * l.abs().max(1.0);
    l >= interval.0 - slack && l <= interval.1 + slack
}

/// `sum_y I(p'w in [L_L(y), L_U(y)]) f_Y(y | p)`.
pub fn coverage_at_p(problem: &Problem, p: &SimplexPoint, table: &IntervalTable) -> Result<f64> {
    let pmf = crate::pmf::pmf_fft(problem, p)?;
    let l = p.linear_combination(problem);
    let mut total = 0.0;
    for (index, &mass) in pmf.probs().iter().enumerate() {
        match table.get(index) {
            Some(interval) => {
                if covers(interval, l) {
                    total += mass;
                }
            }
            None if mass > TABLE_MASS_TOL => return Err(Error::MissingInterval { index, mass }),
            None => {}
        }
    }
    Ok(total.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub l_grid: Vec<f64>,
    /// Average coverage over the `p` drawn at each `L`.
    pub coverage: Vec<f64>,
    pub avg_coverage: f64,
    /// Minimum coverage over every sampled `p`.
    pub conf_coeff_estimate: f64,
    pub method: Method,
    /// Chi-square degrees of freedom used by a comparator.
    pub degrees_of_freedom: Option<usize>,
}

/// Cell midpoints of a uniform partition of `[L_min, L_max]`.
pub fn l_grid(problem: &Problem, n_l: usize) -> Vec<f64> {
    let (lo, hi) = (problem.l_min_f64(), problem.l_max_f64());
    (0..n_l)
        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n_l as f64)
        .collect()
}

/// The `j`th feasible point drawn at the `i`th grid value.
pub fn cell_point(problem: &Problem, seed: u64, i: usize, j: usize, l: f64) -> Result<SimplexPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64, j as u64]));
    sample_constrained(problem, l, &mut rng)
}

fn summarize(l_grid: Vec<f64>, cells: Vec<Vec<f64>>, method: Method, degrees_of_freedom: Option<usize>) -> CoverageReport {
    let coverage: Vec<f64> = cells
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    let avg_coverage = coverage.iter().sum::<f64>() / coverage.len() as f64;
    let conf_coeff_estimate = cells.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    CoverageReport {
        l_grid,
        coverage,
        avg_coverage,
        conf_coeff_estimate,
        method,
        degrees_of_freedom,
    }
}

pub fn coverage_curve_with_table(
    problem: &Problem,
    table: &IntervalTable,
    n_l: usize,
    n_p: usize,
    seed: u64,
    exec: Execution,
) -> Result<CoverageReport> {
    if n_l == 0 || n_p == 0 {
        return Err(Error::invalid("budget", "n_L and n_p must be at least 1"));
    }
    let grid = l_grid(problem, n_l);
    let flat = exec.try_map(n_l * n_p, |cell| {
        let (i, j) = (cell / n_p, cell % n_p);
        let p = cell_point(problem, seed, i, j, grid[i])?;
        coverage_at_p(problem, &p, table)
    })?;
    let cells = flat.chunks(n_p).map(<[f64]>::to_vec).collect();
    Ok(summarize(grid, cells, Method::Exact, None))
}

/// Coverage of the exact interval over `n_l` uniform `L` values with `n_p`
/// feasible `p` each.
pub fn coverage_curve(
    problem: &Problem,
    alpha: f64,
    n_l: usize,
    n_p: usize,
    cfg: &SolverConfig,
    seed: u64,
    exec: Execution,
) -> Result<CoverageReport> {
    let table = interval_table(problem, alpha, cfg, exec)?;
    coverage_curve_with_table(problem, &table, n_l, n_p, seed, exec)
}

fn chi_square_quantile(df: usize, prob: f64) -> f64 {
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(prob)
}

/// Large-sample interval `y_hat +/- sqrt(chi2_{1-alpha; df}) * se`, truncated
/// to `[L_min, L_max]`.
pub fn large_sample_interval(problem: &Problem, counts: &ObservedCounts, alpha: f64, comparator: Comparator) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    let y_hat = rational_to_f64(&estimate_l(problem, counts)?);
    let w = problem.weights_f64();
    let offsets = problem.offsets();
    let mut variance = 0.0;
    for (k, (spec, block)) in problem.experiments().iter().zip(counts.blocks()).enumerate() {
        let n = spec.n() as f64;
        let wk = &w[offsets[k]..offsets[k + 1]];
        let (mut m1, mut m2) = (0.0, 0.0);
        for (&x, &wi) in block.iter().zip(wk) {
            let p_hat = x as f64 / n;
            m1 += wi * p_hat;
            m2 += wi * wi * p_hat;
        }
        variance += (m2 - m1 * m1).max(0.0) / n;
    }
    let half = chi_square_quantile(comparator.degrees_of_freedom(problem), 1.0 - alpha).sqrt() * variance.sqrt();
    Ok((
        (y_hat - half).max(problem.l_min_f64()),
        (y_hat + half).min(problem.l_max_f64()),
    ))
}

pub fn gold_interval(problem: &Problem, counts: &ObservedCounts, alpha: f64) -> Result<(f64, f64)> {
    large_sample_interval(problem, counts, alpha, Comparator::Gold)
}

pub fn goodman_interval(problem: &Problem, counts: &ObservedCounts, alpha: f64) -> Result<(f64, f64)> {
    large_sample_interval(problem, counts, alpha, Comparator::Goodman)
}

/// Draws a count vector from the multinomial model at `p` (sequential binomials).
pub fn sample_counts<R: Rng + ?Sized>(problem: &Problem, p: &SimplexPoint, rng: &mut R) -> ObservedCounts {
    let blocks = problem
        .experiments()
        .iter()
        .zip(p.blocks())
        .map(|(spec, probs)| {
            let mut remaining = spec.n();
            let mut mass_left = 1.0;
            let mut out = vec![0u64; probs.len()];
            for (m, &pm) in probs.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                if m + 1 == probs.len() {
                    out[m] = remaining;
                    break;
                }
                let q = if mass_left > 0.0 { (pm / mass_left).clamp(0.0, 1.0) } else { 0.0 };
                let x = Binomial::new(remaining, q).expect("valid binomial").sample(rng);
                out[m] = x;
                remaining -= x;
                mass_left -= pm;
            }
            out
        })
        .collect();
    ObservedCounts::new(blocks)
}

/// Monte Carlo coverage of a comparator interval at `p`.
pub fn mc_coverage_large_sample(
    problem: &Problem,
    p: &SimplexPoint,
    alpha: f64,
    n_draws: usize,
    comparator: Comparator,
    seed: u64,
) -> Result<f64> {
    p.conforms_to(problem)?;
    if n_draws == 0 {
        return Err(Error::invalid("draws", "must be at least 1"));
    }
    let l = p.linear_combination(problem);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n_draws {
        let x = sample_counts(problem, p, &mut rng);
        if covers(large_sample_interval(problem, &x, alpha, comparator)?, l) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_draws as f64)
}

/// Comparator coverage on the same `(L, p)` cells as [`coverage_curve`].
pub fn comparator_curve(
    problem: &Problem,
    comparator: Comparator,
    alpha: f64,
    budget: &Budget,
    seed: u64,
    exec: Execution,
) -> Result<CoverageReport> {
    budget.validate()?;
    let (n_l, n_p) = (budget.n_l, budget.n_p);
    let grid = l_grid(problem, n_l);
    let flat = exec.try_map(n_l * n_p, |cell| {
        let (i, j) = (cell / n_p, cell % n_p);
        let p = cell_point(problem, seed, i, j, grid[i])?;
        let mc_seed = derive_seed(seed, &[i as u64, j as u64, MC_TAG]);
        mc_coverage_large_sample(problem, &p, alpha, budget.n_draws, comparator, mc_seed)
    })?;
    let cells = flat.chunks(n_p).map(<[f64]>::to_vec).collect();
    Ok(summarize(grid, cells, comparator.method(), Some(comparator.degrees_of_freedom(problem))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioId {
    A,
    B,
    C,
    D,
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(ScenarioId::A),
            "B" => Ok(ScenarioId::B),
            "C" => Ok(ScenarioId::C),
            "D" => Ok(ScenarioId::D),
            other => Err(Error::invalid("id", format!("unknown scenario `{other}` (expected A, B, C or D)"))),
        }
    }
}

/// One of the four simulation scenarios, with a common per-experiment sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: u64,
}

impl ScenarioSpec {
    pub fn new(id: ScenarioId, n: u64) -> Self {
        Self { id, n }
    }

    /// Weight blocks, one per experiment.
    pub fn weight_blocks(&self) -> Vec<Vec<i64>> {
        match self.id {
            ScenarioId::A => vec![vec![0, 1, 1], vec![2, 0, 3], vec![5, 3, 0]],
            ScenarioId::B => vec![vec![1, 2, 3, 0], vec![1, 1, 2, 0]],
            ScenarioId::C => vec![vec![1, 0], vec![-1, 0]],
            ScenarioId::D => vec![vec![4, -2, -2], vec![4, -1, -1, -2]],
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        build_problem(
            self.weight_blocks()
                .iter()
                .map(|w| ExperimentSpec::with_int_weights(self.n, w))
                .collect::<Result<_>>()?,
        )
    }

    /// Gold for A and B, Goodman for the contrast C, none for D.
    pub fn comparator(&self) -> Option<Comparator> {
        match self.id {
            ScenarioId::A | ScenarioId::B => Some(Comparator::Gold),
            ScenarioId::C => Some(Comparator::Goodman),
            ScenarioId::D => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    pub alpha: f64,
    pub exact: CoverageReport,
    pub comparator: Option<CoverageReport>,
}

impl ScenarioResult {
    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        write_curve_csv(out, &self.exact, self.comparator.as_ref())
    }
}

pub fn run_scenario(
    spec: ScenarioSpec,
    alpha: f64,
    budget: &Budget,
    cfg: &SolverConfig,
    seed: u64,
    exec: Execution,
) -> Result<ScenarioResult> {
    budget.validate()?;
    let problem = spec.problem()?;
    let exact = coverage_curve(&problem, alpha, budget.n_l, budget.n_p, cfg, seed, exec)?;
    let comparator = spec
        .comparator()
        .map(|c| comparator_curve(&problem, c, alpha, budget, seed, exec))
        .transpose()?;
    Ok(ScenarioResult {
        spec,
        alpha,
        exact,
        comparator,
    })
}

/// `L,coverage_exact,coverage_comparator`; the comparator column is empty when absent.
pub fn write_curve_csv<W: io::Write>(out: W, exact: &CoverageReport, comparator: Option<&CoverageReport>) -> io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["L", "coverage_exact", "coverage_comparator"])?;
    for (i, (l, c)) in exact.l_grid.iter().zip(&exact.coverage).enumerate() {
        let other = comparator.map(|r| r.coverage[i].to_string()).unwrap_or_default();
        writer.write_record([l.to_string(), c.to_string(), other])?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmf::pmf_bruteforce;

    fn binom(n: u64) -> Problem {
        build_problem(vec![ExperimentSpec::with_int_weights(n, &[1, 0]).unwrap()]).unwrap()
    }

    #[test]
    fn point_mass_coverage() {
        let problem = ScenarioSpec::new(ScenarioId::C, 3).problem().unwrap();
        let p = SimplexPoint::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut entries = vec![None; problem.lattice().count()];
        let top = problem.lattice().count() - 1;
        entries[top] = Some((0.5, 1.0));
        let table = IntervalTable::new(0.05, entries);
        assert_eq!(coverage_at_p(&problem, &p, &table).unwrap(), 1.0);
    }

    #[test]
    fn missing_entry_is_an_error() {
        let problem = binom(3);
        let p = SimplexPoint::new(vec![vec![0.5, 0.5]]).unwrap();
        let table = IntervalTable::new(0.05, vec![Some((0.0, 1.0)); 3]);
        assert!(matches!(
            coverage_at_p(&problem, &p, &table),
            Err(Error::MissingInterval { index: 3, .. })
        ));
    }

    #[test]
    fn coverage_matches_direct_enumeration() {
        let problem = ScenarioSpec::new(ScenarioId::C, 4).problem().unwrap();
        let count = problem.lattice().count();
        // Arbitrary intervals, wide enough to cover some L and not others.
        let entries = (0..count)
            .map(|j| {
                let y = problem.lattice().value_f64(j);
                Some((y - 0.3, y + 0.25))
            })
            .collect();
        let table = IntervalTable::new(0.05, entries);
        let p = SimplexPoint::new(vec![vec![0.35, 0.65], vec![0.55, 0.45]]).unwrap();
        let l = p.linear_combination(&problem);
        let brute = pmf_bruteforce(&problem, &p).unwrap();
        let expected: f64 = brute
            .probs()
            .iter()
            .enumerate()
            .filter(|(j, _)| {
                let (a, b) = table.get(*j).unwrap();
                a <= l && l <= b
            })
            .map(|(_, m)| m)
            .sum();
        assert!((coverage_at_p(&problem, &p, &table).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn large_sample_intervals() {
        let problem = binom(10);
        let counts = ObservedCounts::new(vec![vec![5, 5]]);
        let (lo, hi) = gold_interval(&problem, &counts, 0.05).unwrap();
        let half = 1.959_963_984_540_054 * (0.25f64 / 10.0).sqrt();
        assert!((lo - (0.5 - half)).abs() < 1e-9 && (hi - (0.5 + half)).abs() < 1e-9);

        let flat = build_problem(vec![
            ExperimentSpec::with_int_weights(6, &[2, 2, 2]).unwrap(),
            ExperimentSpec::with_int_weights(4, &[-1, -1]).unwrap(),
        ])
        .unwrap();
        let counts = ObservedCounts::new(vec![vec![1, 2, 3], vec![4, 0]]);
        assert_eq!(gold_interval(&flat, &counts, 0.05).unwrap(), (1.0, 1.0));

        // Scenario C counts ((3,2),(1,4)): y = 0.4, se^2 = 0.24/5 + 0.16/5.
        let c = ScenarioSpec::new(ScenarioId::C, 5).problem().unwrap();
        let counts = ObservedCounts::new(vec![vec![3, 2], vec![1, 4]]);
        let (lo, hi) = goodman_interval(&c, &counts, 0.05).unwrap();
        let half = 1.959_963_984_540_054 * 0.08f64.sqrt();
        assert!((lo - (0.4 - half)).abs() < 1e-9 && (hi - 1.0f64.min(0.4 + half)).abs() < 1e-9);
        // Two degrees of freedom for Gold on the same data.
        let (lo, _) = gold_interval(&c, &counts, 0.05).unwrap();
        let half = 5.991_464_547_107_979f64.sqrt() * 0.08f64.sqrt();
        assert!((lo - (0.4 - half)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_mc_coverage() {
        let flat = build_problem(vec![ExperimentSpec::with_int_weights(5, &[1, 1, 1]).unwrap()]).unwrap();
        let p = SimplexPoint::new(vec![vec![0.2, 0.3, 0.5]]).unwrap();
        assert_eq!(mc_coverage_large_sample(&flat, &p, 0.05, 100, Comparator::Gold, 1).unwrap(), 1.0);
    }

    #[test]
    fn sampled_counts_are_valid() {
        let problem = ScenarioSpec::new(ScenarioId::D, 10).problem().unwrap();
        let p = SimplexPoint::new(vec![vec![0.2, 0.3, 0.5], vec![0.1, 0.0, 0.6, 0.3]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = sample_counts(&problem, &p, &mut rng);
            problem.check_counts(&x).unwrap();
            assert_eq!(x.blocks()[1][1], 0);
        }
    }

    #[test]
    fn scenario_weights() {
        assert_eq!(ScenarioSpec::new(ScenarioId::A, 5).problem().unwrap().dim(), 9);
        assert_eq!(ScenarioSpec::new(ScenarioId::B, 5).problem().unwrap().dim(), 8);
        assert_eq!(ScenarioSpec::new(ScenarioId::D, 5).comparator(), None);
        assert_eq!("c".parse::<ScenarioId>().unwrap(), ScenarioId::C);
        assert!("E".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn report_min_below_average() {
        let problem = binom(6);
        let table = interval_table(&problem, 0.1, &SolverConfig::default(), Execution::Sequential).unwrap();
        let report = coverage_curve_with_table(&problem, &table, 7, 5, 3, Execution::Sequential).unwrap();
        assert!(report.conf_coeff_estimate <= report.avg_coverage);
        assert!(report.coverage.iter().all(|&c| c >= report.conf_coeff_estimate - 1e-12));
        assert_eq!(report.l_grid.len(), 7);
    }
}
