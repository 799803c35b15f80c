//! Exact distribution of `Y` on its lattice.
//!
//! A multinomial experiment with `n` trials is `n` independent categorical
//! trials, so the transform of the lattice index is the product over
//! experiments of `phi_k(t)^n_k` with
//! `phi_k(t) = sum_m p[m,k] * exp(-2 pi i t d[m,k] / N)`. The support of the
//! index is `[0, N)`, so an inverse DFT of length `N` recovers the PMF
//! without aliasing. [`pmf_bruteforce`] sums the joint multinomial masses
//! directly and serves as the reference.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use num_traits::ToPrimitive;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::{Problem, Rational, SimplexPoint, YLattice};

/// Entries below this after inversion are round-off.
pub const CLAMP_EPS: f64 = 1e-14;
/// Allowed deviation of the total mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Default cap on the number of joint outcomes the brute-force route visits.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LatticePmf {
    lattice: YLattice,
    probs: Vec<f64>,
}

impl LatticePmf {
    pub fn lattice(&self) -> &YLattice {
        &self.lattice
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// `P(Y <= value(index))`.
    pub fn cdf_index(&self, index: usize) -> f64 {
        cumulative(&self.probs, index)
    }

    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p;
                acc.min(1.0)
            })
            .collect()
    }

    /// `(y, prob)` pairs in lattice order.
    pub fn points(&self) -> impl Iterator<Item = (Rational, f64)> + '_ {
        self.probs.iter().enumerate().map(|(j, &p)| (self.lattice.value(j), p))
    }
}

pub(crate) fn cumulative(probs: &[f64], index: usize) -> f64 {
    if index + 1 >= probs.len() {
        return 1.0;
    }
    probs[..=index].iter().sum::<f64>().min(1.0)
}

/// `P(Y <= y)` for any rational `y`.
pub fn cdf_at(pmf: &LatticePmf, y: &Rational) -> f64 {
    match pmf.lattice.floor_index(y) {
        None => 0.0,
        Some(j) => pmf.cdf_index(j),
    }
}

/// `P(Y <= y)` for a float `y`, with a `1e-12 * step` slack so grid values
/// that went through floating point still count as on the grid.
pub fn cdf_at_f64(pmf: &LatticePmf, y: f64) -> f64 {
    let origin = pmf.lattice.origin().to_f64().unwrap_or(f64::NAN);
    let step = pmf.lattice.step().to_f64().unwrap_or(f64::NAN);
    let offset = ((y - origin) / step + 1e-12).floor();
    if offset < 0.0 {
        return 0.0;
    }
    pmf.cdf_index((offset as usize).min(pmf.probs.len() - 1))
}

/// Largest attainable value strictly below the attainable value `y`.
pub fn predecessor(problem: &Problem, y: &Rational) -> Result<Rational> {
    let lattice = problem.lattice();
    let index = lattice
        .index_of(y)
        .ok_or_else(|| Error::OffLattice { y: y.to_string() })?;
    problem
        .predecessor_index(index)
        .map(|j| lattice.value(j))
        .ok_or_else(|| Error::NoPredecessor { y: y.to_string() })
}

/// Transform plan and twiddle table for one problem's lattice length.
#[derive(Clone)]
pub(crate) struct PmfEngine {
    len: usize,
    ifft: Arc<dyn Fft<f64>>,
    twiddles: Vec<Complex64>,
}

impl fmt::Debug for PmfEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PmfEngine").field("len", &self.len).finish()
    }
}

impl PmfEngine {
    pub(crate) fn new(problem: &Problem) -> Self {
        let len = problem.lattice().count();
        let ifft = FftPlanner::new().plan_fft_inverse(len);
        let twiddles = (0..len)
            .map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / len as f64))
            .collect();
        Self { len, ifft, twiddles }
    }

    /// Raw probabilities, clamped and renormalized.
    pub(crate) fn probs(&self, problem: &Problem, p: &SimplexPoint) -> Result<Vec<f64>> {
        let n = self.len;
        if n == 1 {
            return Ok(vec![1.0]);
        }
        let experiments = problem.experiments();
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
        // Y is real so the spectrum is Hermitian; fill the lower half and mirror.
        for t in 0..=n / 2 {
            let mut value = Complex64::new(1.0, 0.0);
            for (k, spec) in experiments.iter().enumerate() {
                let mut phi = Complex64::new(0.0, 0.0);
                for (&prob, &d) in p.block(k).iter().zip(problem.digits(k)) {
                    if prob != 0.0 {
                        phi += self.twiddles[(t * d) % n] * prob;
                    }
                }
                value *= phi.powu(spec.n() as u32);
            }
            spectrum[t] = value;
            if t != 0 {
                spectrum[n - t] = value.conj();
            }
        }
        self.ifft.process(&mut spectrum);
        let scale = 1.0 / n as f64;
        let mut probs: Vec<f64> = spectrum
            .iter()
            .map(|c| {
                let v = c.re * scale;
                if v < CLAMP_EPS {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL || !sum.is_finite() {
            return Err(Error::NormalizationDrift { sum });
        }
        probs.iter_mut().for_each(|v| *v /= sum);
        Ok(probs)
    }
}

/// Exact PMF of `Y` at `p` via characteristic functions and an inverse DFT.
pub fn pmf_fft(problem: &Problem, p: &SimplexPoint) -> Result<LatticePmf> {
    p.conforms_to(problem)?;
    let probs = problem.engine().probs(problem, p)?;
    Ok(LatticePmf {
        lattice: problem.lattice().clone(),
        probs,
    })
}

/// Number of joint outcomes `|B| = prod_k C(n_k + M_k - 1, M_k - 1)`.
pub fn sample_space_size(problem: &Problem) -> u128 {
    problem
        .experiments()
        .iter()
        .map(|e| binomial(e.n() as u128 + e.categories() as u128 - 1, e.categories() as u128 - 1))
        .fold(1u128, |acc, b| acc.saturating_mul(b))
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Reference PMF: sums `f_X(x | p)` over every `x` in the joint sample space.
pub fn pmf_bruteforce(problem: &Problem, p: &SimplexPoint) -> Result<LatticePmf> {
    pmf_bruteforce_capped(problem, p, DEFAULT_ENUMERATION_CAP)
}

pub fn pmf_bruteforce_capped(problem: &Problem, p: &SimplexPoint, cap: u128) -> Result<LatticePmf> {
    p.conforms_to(problem)?;
    let outcomes = sample_space_size(problem);
    if outcomes > cap {
        return Err(Error::EnumerationCap { outcomes, cap });
    }
    let lattice = problem.lattice().clone();
    let n_exp = problem.num_experiments();

    // Each experiment's outcomes as (sum_m x_m w_m / n, multinomial mass).
    let per_experiment: Vec<Vec<(Rational, f64)>> = (0..n_exp)
        .map(|k| {
            let spec = &problem.experiments()[k];
            let n = Rational::from_integer(i128::from(spec.n()));
            compositions(spec.n(), spec.categories())
                .into_iter()
                .map(|x| {
                    let y: Rational = x
                        .iter()
                        .zip(spec.weights())
                        .map(|(&c, w)| w * Rational::from_integer(i128::from(c)))
                        .sum::<Rational>()
                        / n;
                    (y, multinomial_mass(spec.n(), &x, p.block(k)))
                })
                .collect()
        })
        .collect();

    let mut probs = vec![0.0; lattice.count()];
    let mut cursor = vec![0usize; n_exp];
    loop {
        let mut y = Rational::from_integer(0);
        let mut mass = 1.0;
        for (k, &c) in cursor.iter().enumerate() {
            let (yk, mk) = &per_experiment[k][c];
            y += yk;
            mass *= mk;
        }
        let j = lattice.index_of(&y).expect("attainable value lies on the lattice");
        probs[j] += mass;

        // Odometer over the product of outcome lists.
        let mut k = 0;
        loop {
            if k == n_exp {
                return Ok(LatticePmf { lattice, probs });
            }
            cursor[k] += 1;
            if cursor[k] < per_experiment[k].len() {
                break;
            }
            cursor[k] = 0;
            k += 1;
        }
    }
}

/// All nonnegative integer vectors of length `m` summing to `n`.
fn compositions(n: u64, m: usize) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    let mut current = vec![0u64; m];
    fn rec(rest: u64, pos: usize, current: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if pos + 1 == current.len() {
            current[pos] = rest;
            out.push(current.clone());
            return;
        }
        for v in 0..=rest {
            current[pos] = v;
            rec(rest - v, pos + 1, current, out);
        }
    }
    rec(n, 0, &mut current, &mut out);
    out
}

fn multinomial_mass(n: u64, x: &[u64], p: &[f64]) -> f64 {
    let mut coef = 1.0;
    let mut placed = 0u64;
    for &c in x {
        // C(placed + c, c), built incrementally.
        for i in 1..=c {
            coef *= (placed + i) as f64 / i as f64;
        }
        placed += c;
    }
    debug_assert_eq!(placed, n);
    x.iter()
        .zip(p)
        .fold(coef, |acc, (&c, &q)| acc * q.powi(c as i32))
}
