//! Fiducial bounds: root finding on the tail functionals.
//!
//! For an observed lattice value `y` the lower bound solves
//! `F_LB(y | L) = alpha / 2` with `F_LB(y | L) = 1 - inf F_Y(y* | p)`, and the
//! upper bound solves `F_UB(y | L) = alpha / 2` with `F_UB(y | L) = sup F_Y(y | p)`,
//! both extrema taken over the slice `p'w = L`. The optimizer seed depends on
//! `(seed, y)` only, never on `L`, so each equation is a deterministic
//! function of `L` during a solve.

use crate::coverage::{coverage_curve_with_table, interval_table, Budget, IntervalTable};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{estimate_index, rational_to_f64, ObservedCounts, Problem, Rational};
use crate::optimizer::{derive_seed, inf_cdf_index, sup_cdf_index, OptimizerConfig};

const LOWER_TAG: u64 = 0x4c42;
const UPPER_TAG: u64 = 0x5542;
const RETRY_TAG: u64 = 0x5254;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Accepted distance of the tail functional from `alpha / 2`.
    pub tol_f: f64,
    /// Bracket width at which the solve stops; `None` means `1e-6 * (L_max - L_min)`.
    pub tol_l: Option<f64>,
    pub max_iter: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_f: 1e-4,
            tol_l: None,
            max_iter: 100,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self {
            optimizer: self.optimizer.with_seed(seed),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tol_f.is_nan() || self.tol_f <= 0.0 {
            return Err(Error::invalid("tol-f", format!("{} must be positive", self.tol_f)));
        }
        if let Some(t) = self.tol_l {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::invalid("tol-l", format!("{t} must be positive")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max-iter", "must be at least 1"));
        }
        self.optimizer.validate()
    }

    fn tol_l_for(&self, problem: &Problem) -> f64 {
        self.tol_l
            .unwrap_or_else(|| 1e-6 * (problem.l_max_f64() - problem.l_min_f64()).max(f64::MIN_POSITIVE))
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} is not in (0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiducialBounds {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub y_hat: Rational,
    pub lb_pinned: bool,
    pub ub_pinned: bool,
    /// `|F_LB(y | lower) - alpha/2|` and `|F_UB(y | upper) - alpha/2|`.
    pub residuals: (f64, f64),
}

/// One solved bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimate {
    pub value: f64,
    /// The bound sits at the end of the attainable range by construction.
    pub pinned: bool,
    pub residual: f64,
}

fn lower_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, &[index as u64, LOWER_TAG])
}

fn upper_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, &[index as u64, UPPER_TAG])
}

/// `F_LB(y | L) = P(Y >= y | L)` with the infimum over the slice, seeded by `seed`.
pub(crate) fn lower_tail(problem: &Problem, index: usize, l: f64, opt: &OptimizerConfig) -> Result<f64> {
    match problem.predecessor_index(index) {
        None => Ok(1.0),
        Some(pred) => Ok(1.0 - inf_cdf_index(problem, pred, l, opt)?.value),
    }
}

/// `F_UB(y | L) = P(Y <= y | L)` with the supremum over the slice.
pub(crate) fn upper_tail(problem: &Problem, index: usize, l: f64, opt: &OptimizerConfig) -> Result<f64> {
    if index + 1 >= problem.lattice().count() {
        return Ok(1.0);
    }
    Ok(sup_cdf_index(problem, index, l, opt)?.value)
}

enum RootOutcome {
    /// `|h(x)| <= tol_f`.
    Converged { x: f64, hx: f64 },
    /// Bracket narrowed below `tol_x` with `h(a) < 0 < h(b)`.
    Narrowed { a: f64, ha: f64, b: f64, hb: f64 },
}

/// Illinois regula falsi with bisection fallback for a nondecreasing `h`
/// with `h(a) < 0 < h(b)`.
fn bracketed_root<F>(
    mut h: F,
    (mut a, mut ha): (f64, f64),
    (mut b, mut hb): (f64, f64),
    tol_f: f64,
    tol_x: f64,
    max_iter: usize,
    bound: &'static str,
) -> Result<RootOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    // Secant weights, halved on the stale side (Illinois).
    let (mut wa, mut wb) = (ha, hb);
    let mut side = 0i8;
    let mut checkpoint = b - a;
    for iter in 0..max_iter {
        if b - a <= tol_x {
            return Ok(RootOutcome::Narrowed { a, ha, b, hb });
        }
        let mut x = (a * wb - b * wa) / (wb - wa);
        let bisect = iter % 3 == 2 && (b - a) > 0.5 * checkpoint;
        if iter % 3 == 2 {
            checkpoint = b - a;
        }
        if bisect || !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let hx = h(x)?;
        if hx.abs() <= tol_f {
            return Ok(RootOutcome::Converged { x, hx });
        }
        if hx < 0.0 {
            a = x;
            ha = hx;
            wa = hx;
            if side == -1 {
                wb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            hb = hx;
            wb = hx;
            if side == 1 {
                wa *= 0.5;
            }
            side = 1;
        }
    }
    if b - a <= tol_x {
        return Ok(RootOutcome::Narrowed { a, ha, b, hb });
    }
    Err(Error::BracketFailure {
        bound,
        iterations: max_iter,
    })
}

fn solve_lower(problem: &Problem, index: usize, alpha: f64, cfg: &SolverConfig, seed: u64) -> Result<BoundEstimate> {
    let opt = cfg.optimizer.with_seed(seed);
    let target = alpha / 2.0;
    let h = |l: f64| lower_tail(problem, index, l, &opt).map(|v| v - target);
    let l_min = problem.l_min_f64();
    let l_max = problem.l_max_f64();
    let tol_x = cfg.tol_l_for(problem);

    let ha = h(l_min)?;
    if ha >= 0.0 {
        return Ok(BoundEstimate {
            value: l_min,
            pinned: true,
            residual: ha.abs(),
        });
    }
    let (mut a, mut ha) = (l_min, ha);
    let mut b = problem.lattice().value_f64(index).clamp(l_min, l_max);
    let mut hb = h(b)?;
    let mut expansions = 0;
    while hb < 0.0 {
        if b >= l_max || expansions >= cfg.max_iter {
            return Err(Error::BracketFailure {
                bound: "lower",
                iterations: expansions,
            });
        }
        (a, ha) = (b, hb);
        b = if l_max - b <= tol_x { l_max } else { b + 0.5 * (l_max - b) };
        hb = h(b)?;
        expansions += 1;
    }
    Ok(match bracketed_root(h, (a, ha), (b, hb), cfg.tol_f, tol_x, cfg.max_iter, "lower")? {
        RootOutcome::Converged { x, hx } => BoundEstimate {
            value: x,
            pinned: false,
            residual: hx.abs(),
        },
        // The left end is the conservative (smaller) choice.
        RootOutcome::Narrowed { a, ha, .. } => BoundEstimate {
            value: a,
            pinned: false,
            residual: ha.abs(),
        },
    })
}

fn solve_upper(problem: &Problem, index: usize, alpha: f64, cfg: &SolverConfig, seed: u64) -> Result<BoundEstimate> {
    let opt = cfg.optimizer.with_seed(seed);
    let target = alpha / 2.0;
    // g = alpha/2 - F_UB is nondecreasing in L.
    let g = |l: f64| upper_tail(problem, index, l, &opt).map(|v| target - v);
    let l_min = problem.l_min_f64();
    let l_max = problem.l_max_f64();
    let tol_x = cfg.tol_l_for(problem);

    let gb = g(l_max)?;
    if gb <= 0.0 {
        return Ok(BoundEstimate {
            value: l_max,
            pinned: true,
            residual: gb.abs(),
        });
    }
    let (mut b, mut gb) = (l_max, gb);
    let mut a = problem.lattice().value_f64(index).clamp(l_min, l_max);
    let mut ga = g(a)?;
    let mut expansions = 0;
    while ga > 0.0 {
        if a <= l_min || expansions >= cfg.max_iter {
            return Err(Error::BracketFailure {
                bound: "upper",
                iterations: expansions,
            });
        }
        (b, gb) = (a, ga);
        a = if a - l_min <= tol_x { l_min } else { a - 0.5 * (a - l_min) };
        ga = g(a)?;
        expansions += 1;
    }
    if ga == 0.0 {
        // Exactly at the root already; prefer the bracket end for the sup.
        ga = -f64::MIN_POSITIVE;
    }
    Ok(match bracketed_root(g, (a, ga), (b, gb), cfg.tol_f, tol_x, cfg.max_iter, "upper")? {
        RootOutcome::Converged { x, hx } => BoundEstimate {
            value: x,
            pinned: false,
            residual: hx.abs(),
        },
        // The right end is the conservative (larger) choice.
        RootOutcome::Narrowed { b, hb, .. } => BoundEstimate {
            value: b,
            pinned: false,
            residual: hb.abs(),
        },
    })
}

fn require_attainable(problem: &Problem, index: usize) -> Result<()> {
    if !problem.is_attainable(index) {
        return Err(Error::invalid(
            "y",
            format!("{} is not an attainable value", problem.lattice().value(index)),
        ));
    }
    Ok(())
}

fn index_of(problem: &Problem, y: &Rational) -> Result<usize> {
    let index = problem
        .lattice()
        .index_of(y)
        .ok_or_else(|| Error::OffLattice { y: y.to_string() })?;
    require_attainable(problem, index)?;
    Ok(index)
}

pub(crate) fn lower_bound_index(problem: &Problem, index: usize, alpha: f64, cfg: &SolverConfig) -> Result<BoundEstimate> {
    check_alpha(alpha)?;
    cfg.validate()?;
    require_attainable(problem, index)?;
    if problem.predecessor_index(index).is_none() {
        return Ok(BoundEstimate {
            value: problem.l_min_f64(),
            pinned: true,
            residual: 0.0,
        });
    }
    let base = cfg.optimizer.seed;
    let first = solve_lower(problem, index, alpha, cfg, lower_seed(base, index))?;
    if first.pinned || first.residual <= cfg.tol_f {
        return Ok(first);
    }
    let second = solve_lower(problem, index, alpha, cfg, lower_seed(derive_seed(base, &[RETRY_TAG]), index))?;
    Ok(if second.value < first.value { second } else { first })
}

pub(crate) fn upper_bound_index(problem: &Problem, index: usize, alpha: f64, cfg: &SolverConfig) -> Result<BoundEstimate> {
    check_alpha(alpha)?;
    cfg.validate()?;
    require_attainable(problem, index)?;
    if index + 1 >= problem.lattice().count() {
        return Ok(BoundEstimate {
            value: problem.l_max_f64(),
            pinned: true,
            residual: 0.0,
        });
    }
    let base = cfg.optimizer.seed;
    let first = solve_upper(problem, index, alpha, cfg, upper_seed(base, index))?;
    if first.pinned || first.residual <= cfg.tol_f {
        return Ok(first);
    }
    let second = solve_upper(problem, index, alpha, cfg, upper_seed(derive_seed(base, &[RETRY_TAG]), index))?;
    Ok(if second.value > first.value { second } else { first })
}

/// Lower fiducial bound for the observed value `y`.
pub fn lower_bound(problem: &Problem, y: &Rational, alpha: f64, cfg: &SolverConfig) -> Result<BoundEstimate> {
    lower_bound_index(problem, index_of(problem, y)?, alpha, cfg)
}

/// Upper fiducial bound for the observed value `y`.
pub fn upper_bound(problem: &Problem, y: &Rational, alpha: f64, cfg: &SolverConfig) -> Result<BoundEstimate> {
    upper_bound_index(problem, index_of(problem, y)?, alpha, cfg)
}

pub(crate) fn interval_for_index(problem: &Problem, index: usize, alpha: f64, cfg: &SolverConfig) -> Result<FiducialBounds> {
    let y_hat = problem.lattice().value(index);
    let y = rational_to_f64(&y_hat);
    let lo = lower_bound_index(problem, index, alpha, cfg)?;
    let hi = upper_bound_index(problem, index, alpha, cfg)?;
    Ok(FiducialBounds {
        lower: lo.value.min(y),
        upper: hi.value.max(y),
        alpha,
        y_hat,
        lb_pinned: lo.pinned,
        ub_pinned: hi.pinned,
        residuals: (lo.residual, hi.residual),
    })
}

/// The exact interval for observed counts.
pub fn fiducial_interval(problem: &Problem, counts: &ObservedCounts, alpha: f64, cfg: &SolverConfig) -> Result<FiducialBounds> {
    let index = estimate_index(problem, counts)?;
    interval_for_index(problem, index, alpha, cfg)
}

/// Interval for an attainable lattice value.
pub fn interval_at(problem: &Problem, y: &Rational, alpha: f64, cfg: &SolverConfig) -> Result<FiducialBounds> {
    interval_for_index(problem, index_of(problem, y)?, alpha, cfg)
}

/// Smallest attainable `y` with `F_LB(y | L) <= alpha`, or `None`.
pub fn y_quantile_lb(problem: &Problem, l: f64, alpha: f64, cfg: &SolverConfig) -> Result<Option<Rational>> {
    let lattice = problem.lattice();
    if alpha >= 1.0 {
        return Ok(Some(*lattice.origin()));
    }
    for index in problem.attainable_indices() {
        let opt = cfg.optimizer.with_seed(lower_seed(cfg.optimizer.seed, index));
        if lower_tail(problem, index, l, &opt)? <= alpha {
            return Ok(Some(lattice.value(index)));
        }
    }
    Ok(None)
}

/// Largest attainable `y` with `F_UB(y | L) <= alpha`, or `None`.
pub fn y_quantile_ub(problem: &Problem, l: f64, alpha: f64, cfg: &SolverConfig) -> Result<Option<Rational>> {
    let lattice = problem.lattice();
    if alpha >= 1.0 {
        return Ok(Some(lattice.top()));
    }
    for index in problem.attainable_indices().into_iter().rev() {
        let opt = cfg.optimizer.with_seed(upper_seed(cfg.optimizer.seed, index));
        if upper_tail(problem, index, l, &opt)? <= alpha {
            return Ok(Some(lattice.value(index)));
        }
    }
    Ok(None)
}

/// Outcome of the average-coverage adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedAlpha {
    pub alpha: f64,
    pub alpha_prime: f64,
    /// Average coverage of the intervals built at `alpha_prime`.
    pub average_coverage: f64,
    /// Average coverage of the unadjusted intervals.
    pub base_coverage: f64,
    pub table: IntervalTable,
}

/// Tolerance on `|C(alpha') - (1 - alpha)|`.
pub const ADJUST_COVERAGE_TOL: f64 = 0.005;
/// Bisection stops when the `alpha'` bracket is this narrow.
pub const ADJUST_ALPHA_TOL: f64 = 1e-3;

/// Finds `alpha' >= alpha` whose intervals have average coverage `1 - alpha`
/// over a uniform grid of `L` (the same `budget` sweep for every candidate).
pub fn adjust_alpha(
    problem: &Problem,
    alpha: f64,
    budget: &Budget,
    cfg: &SolverConfig,
    seed: u64,
    exec: Execution,
) -> Result<AdjustedAlpha> {
    check_alpha(alpha)?;
    let target = 1.0 - alpha;
    let evaluate = |a: f64| -> Result<(f64, IntervalTable)> {
        let table = interval_table(problem, a, cfg, exec)?;
        let report = coverage_curve_with_table(problem, &table, budget.n_l, budget.n_p, seed, exec)?;
        Ok((report.avg_coverage, table))
    };

    let (base_coverage, base_table) = evaluate(alpha)?;
    let done = |alpha_prime, average_coverage, table| AdjustedAlpha {
        alpha,
        alpha_prime,
        average_coverage,
        base_coverage,
        table,
    };
    if problem.is_degenerate() {
        return Ok(done(alpha, base_coverage, base_table));
    }
    if base_coverage < target - ADJUST_COVERAGE_TOL {
        return Err(Error::CoverageBelowTarget {
            alpha,
            coverage: base_coverage,
            target,
        });
    }
    if base_coverage <= target + ADJUST_COVERAGE_TOL {
        return Ok(done(alpha, base_coverage, base_table));
    }

    let mut lo = (alpha, base_coverage, base_table);
    let hi_alpha = (10.0 * alpha).min(0.999);
    let (hi_cov, hi_table) = evaluate(hi_alpha)?;
    let mut hi = (hi_alpha, hi_cov, hi_table);
    if hi.1 >= target {
        return Ok(done(hi.0, hi.1, hi.2));
    }
    // Invariant: C(lo) >= target > C(hi).
    while hi.0 - lo.0 > ADJUST_ALPHA_TOL {
        let mid = 0.5 * (lo.0 + hi.0);
        let (cov, table) = evaluate(mid)?;
        if cov >= target {
            lo = (mid, cov, table);
        } else {
            hi = (mid, cov, table);
        }
    }
    let pick = if (lo.1 - target).abs() <= ADJUST_COVERAGE_TOL || (lo.1 - target).abs() <= (hi.1 - target).abs() {
        lo
    } else {
        hi
    };
    Ok(done(pick.0, pick.1, pick.2))
}
