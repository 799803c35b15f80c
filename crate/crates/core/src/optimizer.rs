//! Stochastic search for the extreme CDF of `Y` over the slice
//! `{p in S : p'w = L}`.
//!
//! The search draws `n_r` feasible points, keeps the best, then runs `n_s`
//! perturbation steps along the slice with a geometrically shrinking step,
//! accepting only improvements. The number of random draws per call does
//! not depend on `L`, so a fixed seed gives common random numbers across
//! different `L` and the tail functionals become deterministic in `L`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Problem, Rational, SimplexPoint};
use crate::pmf::cumulative;

/// Relative tolerance on `|p'w - L|`.
pub const CONSTRAINT_TOL: f64 = 1e-9;

const ZERO_EPS: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Random exploration draws.
    pub n_r: usize,
    /// Perturbation steps.
    pub n_s: usize,
    pub seed: u64,
    pub initial_scale: f64,
    /// Per-step multiplier on the perturbation scale.
    pub decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_r: 20,
            n_s: 20,
            seed: 42,
            initial_scale: 0.25,
            // Halves every 5 steps.
            decay: 0.5f64.powf(1.0 / 5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 {
            return Err(Error::invalid("nr", "must be at least 1"));
        }
        if !(self.initial_scale > 0.0 && self.initial_scale <= 1.0) {
            return Err(Error::invalid("scale", format!("{} is not in (0, 1]", self.initial_scale)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::invalid("decay", format!("{} is not in (0, 1)", self.decay)));
        }
        Ok(())
    }
}

/// Mixes `parts` into `base` (splitmix64 finalizer per part).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(base, |acc, &part| {
        let mut z = acc ^ part.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailEvaluation {
    pub value: f64,
    pub witness: SimplexPoint,
    /// CDF evaluations spent.
    pub evaluations: usize,
}

fn check_l(problem: &Problem, l: f64) -> Result<()> {
    let (lo, hi) = (problem.l_min_f64(), problem.l_max_f64());
    let slack = CONSTRAINT_TOL * l.abs().max(1.0);
    if !l.is_finite() || l < lo - slack || l > hi + slack {
        return Err(Error::OutOfRange {
            what: "L",
            value: l,
            min: lo,
            max: hi,
        });
    }
    Ok(())
}

/// Draws a feasible point with `p'w = L`.
///
/// A random interior point `q` (normalized exponentials per block) is moved
/// along the segment toward the vertex attaining `L_max` or `L_min`,
/// whichever side `L` lies on, until the constraint holds.
pub fn sample_constrained<R: Rng + ?Sized>(problem: &Problem, l: f64, rng: &mut R) -> Result<SimplexPoint> {
    check_l(problem, l)?;
    let offsets = problem.offsets();
    let mut q = vec![0.0; problem.dim()];
    for k in 0..problem.num_experiments() {
        let block = &mut q[offsets[k]..offsets[k + 1]];
        for v in block.iter_mut() {
            *v = rng.sample::<f64, _>(Exp1);
        }
        let sum: f64 = block.iter().sum();
        block.iter_mut().for_each(|v| *v /= sum);
    }
    let w = problem.weights_f64();
    let l0: f64 = q.iter().zip(w).map(|(a, b)| a * b).sum();
    let (vertex, extreme) = if l > l0 {
        (problem.vertex_max(), problem.l_max_f64())
    } else {
        (problem.vertex_min(), problem.l_min_f64())
    };
    let gap = extreme - l0;
    let t = if gap.abs() > 0.0 {
        ((l - l0) / gap).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let p: Vec<f64> = q
        .iter()
        .zip(&vertex)
        .map(|(a, v)| if t == 1.0 { *v } else { (1.0 - t) * a + t * v })
        .collect();
    Ok(SimplexPoint::from_flat(p, offsets))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub point: SimplexPoint,
    /// Whether the point changed.
    pub moved: bool,
    /// The slice through `p` is a single point; no direction exists.
    pub null_space_trivial: bool,
}

/// Dimension of the null space of the block-sum and weight constraints.
pub fn null_space_dim(problem: &Problem) -> usize {
    let free: usize = problem.experiments().iter().map(|e| e.categories() - 1).sum();
    let w = problem.weights_f64();
    let offsets = problem.offsets();
    let weight_binds = (0..problem.num_experiments()).any(|k| {
        let block = &w[offsets[k]..offsets[k + 1]];
        block.iter().any(|&x| x != block[0])
    });
    free - usize::from(weight_binds)
}

/// Projects `z` onto directions with zero block sums and zero `d'w`,
/// supported on coordinates where `free` is true.
fn project(problem: &Problem, z: &mut [f64], free: &[bool]) {
    let offsets = problem.offsets();
    let w = problem.weights_f64();
    let mut u = vec![0.0; z.len()];
    for k in 0..problem.num_experiments() {
        let range = offsets[k]..offsets[k + 1];
        let active: Vec<usize> = range.clone().filter(|&i| free[i]).collect();
        if active.len() < 2 {
            range.for_each(|i| z[i] = 0.0);
            continue;
        }
        let count = active.len() as f64;
        let z_mean = active.iter().map(|&i| z[i]).sum::<f64>() / count;
        let w_mean = active.iter().map(|&i| w[i]).sum::<f64>() / count;
        for i in range {
            if free[i] {
                z[i] -= z_mean;
                u[i] = w[i] - w_mean;
            } else {
                z[i] = 0.0;
            }
        }
    }
    let uu: f64 = u.iter().map(|x| x * x).sum();
    if uu > 1e-24 {
        let coef = z.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / uu;
        z.iter_mut().zip(&u).for_each(|(a, b)| *a -= coef * b);
    }
}

fn max_step(p: &[f64], d: &[f64]) -> f64 {
    p.iter()
        .zip(d)
        .filter(|(_, &di)| di < 0.0)
        .map(|(&pi, &di)| pi / -di)
        .fold(f64::INFINITY, f64::min)
}

/// Moves `p` along a random direction in the slice through it.
///
/// The step is `scale * |N(0,1)|`, clipped to the largest step that keeps
/// every entry nonnegative. When `p` sits on a face and the unrestricted
/// direction immediately leaves the simplex, the same draw is projected onto
/// the face instead.
pub fn perturb<R: Rng + ?Sized>(problem: &Problem, p: &SimplexPoint, scale: f64, rng: &mut R) -> Perturbed {
    let dim = problem.dim();
    let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let magnitude: f64 = rng.sample::<f64, _>(StandardNormal).abs();
    let unchanged = |trivial| Perturbed {
        point: p.clone(),
        moved: false,
        null_space_trivial: trivial,
    };
    if null_space_dim(problem) == 0 {
        return unchanged(true);
    }
    let desired = scale * magnitude;
    if desired.is_nan() || desired <= 0.0 {
        return unchanged(false);
    }
    let values = p.values();
    let all = vec![true; dim];
    let on_face: Vec<bool> = values.iter().map(|&v| v > ZERO_EPS).collect();

    for free in [&all, &on_face] {
        let mut d = z.clone();
        project(problem, &mut d, free);
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        d.iter_mut().for_each(|x| *x /= norm);
        let step = desired.min(max_step(values, &d));
        if step <= 1e-15 {
            continue;
        }
        let next: Vec<f64> = values
            .iter()
            .zip(&d)
            .map(|(&v, &di)| {
                let x = v + step * di;
                if x < ZERO_EPS {
                    0.0
                } else {
                    x
                }
            })
            .collect();
        return Perturbed {
            point: SimplexPoint::from_flat(next, problem.offsets()),
            moved: true,
            null_space_trivial: false,
        };
    }
    unchanged(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Goal {
    Maximize,
    Minimize,
}

impl Goal {
    fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Goal::Maximize => candidate > incumbent,
            Goal::Minimize => candidate < incumbent,
        }
    }

    fn is_optimal(self, value: f64) -> bool {
        match self {
            Goal::Maximize => value >= 1.0,
            Goal::Minimize => value <= 0.0,
        }
    }
}

fn cdf_at_index(problem: &Problem, p: &SimplexPoint, index: usize) -> Result<f64> {
    let probs = problem.engine().probs(problem, p)?;
    Ok(cumulative(&probs, index))
}

fn search(problem: &Problem, index: usize, l: f64, cfg: &OptimizerConfig, goal: Goal) -> Result<TailEvaluation> {
    cfg.validate()?;
    check_l(problem, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tol = CONSTRAINT_TOL * l.abs().max(1.0);
    let mut evaluations = 0;
    let mut best: Option<(f64, SimplexPoint)> = None;
    for _ in 0..cfg.n_r {
        let p = sample_constrained(problem, l, &mut rng)?;
        if (p.linear_combination(problem) - l).abs() > tol {
            continue;
        }
        let value = cdf_at_index(problem, &p, index)?;
        evaluations += 1;
        if best.as_ref().is_none_or(|(b, _)| goal.improves(value, *b)) {
            best = Some((value, p));
        }
    }
    let (mut value, mut witness) = best.ok_or_else(|| {
        Error::invalid("L", format!("no feasible draw met the constraint tolerance at L = {l}"))
    })?;

    if null_space_dim(problem) > 0 {
        let mut scale = cfg.initial_scale;
        for _ in 0..cfg.n_s {
            if goal.is_optimal(value) {
                break;
            }
            let cand = perturb(problem, &witness, scale, &mut rng);
            scale *= cfg.decay;
            if !cand.moved {
                continue;
            }
            let v = cdf_at_index(problem, &cand.point, index)?;
            evaluations += 1;
            if goal.improves(v, value) {
                value = v;
                witness = cand.point;
            }
        }
    }
    Ok(TailEvaluation {
        value,
        witness,
        evaluations,
    })
}

pub(crate) fn sup_cdf_index(problem: &Problem, index: usize, l: f64, cfg: &OptimizerConfig) -> Result<TailEvaluation> {
    search(problem, index, l, cfg, Goal::Maximize)
}

pub(crate) fn inf_cdf_index(problem: &Problem, index: usize, l: f64, cfg: &OptimizerConfig) -> Result<TailEvaluation> {
    search(problem, index, l, cfg, Goal::Minimize)
}

fn lattice_index(problem: &Problem, y: &Rational) -> Result<usize> {
    problem
        .lattice()
        .index_of(y)
        .ok_or_else(|| Error::OffLattice { y: y.to_string() })
}

/// Approximates `sup { F_Y(y | p) : p'w = L }`, the upper tail functional.
pub fn sup_cdf(problem: &Problem, y: &Rational, l: f64, cfg: &OptimizerConfig) -> Result<TailEvaluation> {
    sup_cdf_index(problem, lattice_index(problem, y)?, l, cfg)
}

/// Approximates `inf { F_Y(y* | p) : p'w = L }`; one minus this value is the
/// lower tail functional at the successor of `y*`.
pub fn inf_cdf(problem: &Problem, y_star: &Rational, l: f64, cfg: &OptimizerConfig) -> Result<TailEvaluation> {
    inf_cdf_index(problem, lattice_index(problem, y_star)?, l, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_problem, ExperimentSpec};
    use crate::pmf::{cdf_at, pmf_bruteforce};

    fn binom(n: u64) -> Problem {
        build_problem(vec![ExperimentSpec::with_int_weights(n, &[1, 0]).unwrap()]).unwrap()
    }

    fn scenario_c(n: u64) -> Problem {
        build_problem(vec![
            ExperimentSpec::with_int_weights(n, &[1, 0]).unwrap(),
            ExperimentSpec::with_int_weights(n, &[-1, 0]).unwrap(),
        ])
        .unwrap()
    }

    fn feasible(problem: &Problem, p: &SimplexPoint, l: f64) {
        assert!((p.linear_combination(problem) - l).abs() <= CONSTRAINT_TOL * l.abs().max(1.0));
        for block in p.blocks() {
            assert!(block.iter().all(|&v| v >= 0.0));
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_unique_point() {
        let problem = binom(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_constrained(&problem, 0.3, &mut rng).unwrap();
        assert!((p.values()[0] - 0.3).abs() < 1e-15);
        assert!((p.values()[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn sample_vertex() {
        let problem = scenario_c(5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = sample_constrained(&problem, 1.0, &mut rng).unwrap();
        assert_eq!(p.values(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn sample_residuals() {
        let problem = scenario_c(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = sample_constrained(&problem, 0.0, &mut rng).unwrap();
            assert!((p.values()[0] - p.values()[2]).abs() <= 1e-9);
            feasible(&problem, &p, 0.0);
        }
        assert!(sample_constrained(&problem, 1.5, &mut rng).is_err());
    }

    #[test]
    fn perturb_cases() {
        let problem = binom(10);
        let p = SimplexPoint::new(vec![vec![0.4, 0.6]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = perturb(&problem, &p, 0.3, &mut rng);
        assert!(out.null_space_trivial && !out.moved);
        assert_eq!(out.point, p);

        let c = scenario_c(5);
        let p = SimplexPoint::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let out = perturb(&c, &p, 0.1, &mut rng);
        assert!(out.moved);
        feasible(&c, &out.point, 0.0);
        let v = out.point.values();
        assert!((v[0] - v[2]).abs() < 1e-12);

        let out = perturb(&c, &p, 0.0, &mut rng);
        assert!(!out.moved);
        assert_eq!(out.point, p);
    }

    #[test]
    fn perturb_slides_along_face() {
        // Scenario A-like block with a zero entry; the face move must keep it feasible.
        let problem = build_problem(vec![
            ExperimentSpec::with_int_weights(3, &[0, 1, 1]).unwrap(),
            ExperimentSpec::with_int_weights(3, &[2, 0, 3]).unwrap(),
        ])
        .unwrap();
        let p = SimplexPoint::new(vec![vec![0.0, 0.5, 0.5], vec![0.0, 1.0, 0.0]]).unwrap();
        let l = p.linear_combination(&problem);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut moved = 0;
        for _ in 0..200 {
            let out = perturb(&problem, &p, 0.2, &mut rng);
            feasible(&problem, &out.point, l);
            moved += usize::from(out.moved);
        }
        assert!(moved > 0);
    }

    #[test]
    fn binomial_tails_are_exact() {
        let problem = binom(10);
        let cfg = OptimizerConfig::default();
        let sup = sup_cdf(&problem, &Rational::new(1, 2), 0.3, &cfg).unwrap();
        // Binomial(10, 0.3) CDF at 5 and at 4.
        assert!((sup.value - 0.952_651_012_6).abs() < 1e-9, "{}", sup.value);
        let inf = inf_cdf(&problem, &Rational::new(2, 5), 0.3, &cfg).unwrap();
        assert!((inf.value - 0.849_731_667_4).abs() < 1e-9, "{}", inf.value);
    }

    #[test]
    fn top_value_is_one() {
        let problem = scenario_c(5);
        let out = sup_cdf(&problem, &Rational::from_integer(1), 0.2, &OptimizerConfig::default()).unwrap();
        assert_eq!(out.value, 1.0);
    }

    // Feasible grid for Scenario C at L: p11 in [max(0, L), min(1, 1 + L)], p21 = p11 - L.
    fn grid_cdfs(problem: &Problem, l: f64, y: &Rational, points: usize) -> Vec<f64> {
        let (lo, hi) = (l.max(0.0), (1.0 + l).min(1.0));
        (0..points)
            .map(|i| {
                let a = lo + (hi - lo) * i as f64 / (points - 1) as f64;
                let b = a - l;
                let p = SimplexPoint::new(vec![vec![a, 1.0 - a], vec![b, 1.0 - b]]).unwrap();
                cdf_at(&pmf_bruteforce(problem, &p).unwrap(), y)
            })
            .collect()
    }

    #[test]
    fn sup_beats_grid_search() {
        let problem = scenario_c(5);
        let y = Rational::new(1, 5);
        let out = sup_cdf(&problem, &y, 0.2, &OptimizerConfig::default()).unwrap();
        let grid_max = grid_cdfs(&problem, 0.2, &y, 200).into_iter().fold(0.0, f64::max);
        assert!(out.value >= grid_max - 1e-9, "{} < {grid_max}", out.value);
        feasible(&problem, &out.witness, 0.2);
    }

    #[test]
    fn inf_beats_grid_search() {
        let problem = scenario_c(5);
        let y = Rational::new(-1, 5);
        let out = inf_cdf(&problem, &y, 0.0, &OptimizerConfig::default()).unwrap();
        let grid_min = grid_cdfs(&problem, 0.0, &y, 200).into_iter().fold(1.0, f64::min);
        assert!(out.value <= grid_min + 1e-9, "{} > {grid_min}", out.value);
    }

    #[test]
    fn deterministic_for_seed() {
        let problem = scenario_c(5);
        let cfg = OptimizerConfig::default().with_seed(99);
        let a = sup_cdf(&problem, &Rational::new(1, 5), -0.1, &cfg).unwrap();
        let b = sup_cdf(&problem, &Rational::new(1, 5), -0.1, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_mix() {
        assert_ne!(derive_seed(1, &[2]), derive_seed(1, &[3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
    }
}
