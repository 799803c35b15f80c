//! The weighted-multinomial problem: experiments, weights, parameter and
//! sample spaces, the plug-in statistic and the value lattice it lives on.
//!
//! Weights are exact rationals. Every attainable value of the statistic
//! `Y = sum_k sum_m x[m,k] * w[m,k] / n[k]` is written as
//! `origin + j * step` with an integer lattice index `j`; the integer
//! "digits" `d[m,k]` give the index contribution of one trial landing in
//! category `m` of experiment `k`, so `j = sum x[m,k] * d[m,k]`.

use std::fmt;
use std::sync::OnceLock;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::pmf::PmfEngine;

pub type Rational = Ratio<i128>;

/// Largest lattice the engine will build.
pub const MAX_LATTICE_COUNT: usize = 1 << 24;

/// Parses an exact rational from an integer, decimal (`-1.25`, `3e-2`) or
/// fraction (`7/3`) literal.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    let bad = || Error::invalid("weight", format!("`{text}` is not a rational literal"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((num, den)) = s.split_once('/') {
        let num = parse_rational(num)?;
        let den = parse_rational(den)?;
        if den.is_zero() {
            return Err(Error::invalid("weight", format!("`{text}` has a zero denominator")));
        }
        return Ok(num / den);
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => {
            let exp: i32 = s[pos + 1..].parse().map_err(|_| bad())?;
            (&s[..pos], exp)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.as_bytes().first() {
        Some(b'-') => (true, &mantissa[1..]),
        Some(b'+') => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let mut numer: i128 = 0;
    for b in int_part.bytes().chain(frac_part.bytes()) {
        numer = numer
            .checked_mul(10)
            .and_then(|v| v.checked_add(i128::from(b - b'0')))
            .ok_or_else(bad)?;
    }
    let scale = exponent - frac_part.len() as i32;
    if scale.unsigned_abs() > 30 {
        return Err(bad());
    }
    let pow = 10i128.pow(scale.unsigned_abs());
    let mut value = if scale >= 0 {
        Rational::from_integer(numer.checked_mul(pow).ok_or_else(bad)?)
    } else {
        Rational::new(numer, pow)
    };
    if negative {
        value = -value;
    }
    Ok(value)
}

/// Converts a finite float to the rational of its shortest decimal form.
pub fn rational_from_f64(x: f64) -> Result<Rational> {
    if !x.is_finite() {
        return Err(Error::invalid("weight", format!("{x} is not finite")));
    }
    parse_rational(&format!("{x}"))
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// One multinomial experiment: its trial count and per-category weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    n: u64,
    weights: Vec<Rational>,
}

impl ExperimentSpec {
    pub fn new(n: u64, weights: Vec<Rational>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "trial count must be at least 1"));
        }
        if weights.len() < 2 {
            return Err(Error::invalid(
                "weights",
                format!("an experiment needs at least 2 categories, got {}", weights.len()),
            ));
        }
        Ok(Self { n, weights })
    }

    /// Convenience constructor from integer weights.
    pub fn with_int_weights(n: u64, weights: &[i64]) -> Result<Self> {
        Self::new(n, weights.iter().map(|&w| Rational::from_integer(w.into())).collect())
    }

    pub fn from_f64_weights(n: u64, weights: &[f64]) -> Result<Self> {
        Self::new(n, weights.iter().map(|&w| rational_from_f64(w)).collect::<Result<_>>()?)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn categories(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Rational] {
        &self.weights
    }
}

/// The evenly spaced grid containing every attainable value of `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct YLattice {
    origin: Rational,
    step: Rational,
    count: usize,
}

impl YLattice {
    pub fn origin(&self) -> &Rational {
        &self.origin
    }

    pub fn step(&self) -> &Rational {
        &self.step
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn top(&self) -> Rational {
        self.value(self.count - 1)
    }

    pub fn value(&self, index: usize) -> Rational {
        self.origin + self.step * Rational::from_integer(index as i128)
    }

    pub fn value_f64(&self, index: usize) -> f64 {
        rational_to_f64(&self.value(index))
    }

    /// Index of `y` when it is a grid point.
    pub fn index_of(&self, y: &Rational) -> Option<usize> {
        let offset = (y - self.origin) / self.step;
        if !offset.is_integer() || offset.is_negative() {
            return None;
        }
        let index = offset.to_integer().to_usize()?;
        (index < self.count).then_some(index)
    }

    /// Index of the largest grid point `<= y`, or `None` below the origin.
    pub fn floor_index(&self, y: &Rational) -> Option<usize> {
        let offset = ((y - self.origin) / self.step).floor();
        if offset.is_negative() {
            return None;
        }
        Some(offset.to_integer().to_usize().unwrap_or(usize::MAX).min(self.count - 1))
    }
}

/// K independent multinomial experiments and the concatenated weight vector.
#[derive(Clone)]
pub struct Problem {
    experiments: Vec<ExperimentSpec>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
    l_min: Rational,
    l_max: Rational,
    lattice: YLattice,
    digits: Vec<Vec<usize>>,
    attainable: Vec<bool>,
    engine: OnceLock<PmfEngine>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("experiments", &self.experiments)
            .field("l_min", &self.l_min)
            .field("l_max", &self.l_max)
            .field("lattice", &self.lattice)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn experiments(&self) -> &[ExperimentSpec] {
        &self.experiments
    }

    pub fn num_experiments(&self) -> usize {
        self.experiments.len()
    }

    /// Total number of categories over all experiments.
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Block boundaries into the concatenated vector, length `K + 1`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn weights_f64(&self) -> &[f64] {
        &self.weights
    }

    pub fn l_min(&self) -> &Rational {
        &self.l_min
    }

    pub fn l_max(&self) -> &Rational {
        &self.l_max
    }

    pub fn l_min_f64(&self) -> f64 {
        rational_to_f64(&self.l_min)
    }

    pub fn l_max_f64(&self) -> f64 {
        rational_to_f64(&self.l_max)
    }

    pub fn lattice(&self) -> &YLattice {
        &self.lattice
    }

    /// Lattice-index contribution of one trial in each category of experiment `k`.
    pub fn digits(&self, k: usize) -> &[usize] {
        &self.digits[k]
    }

    pub fn is_attainable(&self, index: usize) -> bool {
        self.attainable.get(index).copied().unwrap_or(false)
    }

    pub fn attainable_indices(&self) -> Vec<usize> {
        (0..self.lattice.count).filter(|&j| self.attainable[j]).collect()
    }

    /// Whether every attainable `Y` is the same value.
    pub fn is_degenerate(&self) -> bool {
        self.lattice.count == 1
    }

    pub fn contains_l(&self, l: f64) -> bool {
        attainable_range_check(self, l)
    }

    /// Largest attainable index strictly below `index`.
    pub fn predecessor_index(&self, index: usize) -> Option<usize> {
        (0..index.min(self.lattice.count)).rev().find(|&j| self.attainable[j])
    }

    pub fn vertex_max(&self) -> Vec<f64> {
        self.vertex(|a, b| a > b)
    }

    pub fn vertex_min(&self) -> Vec<f64> {
        self.vertex(|a, b| a < b)
    }

    // First-found extreme category per block.
    fn vertex(&self, better: impl Fn(f64, f64) -> bool) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for k in 0..self.num_experiments() {
            let block = &self.weights[self.offsets[k]..self.offsets[k + 1]];
            let mut best = 0;
            for (m, &w) in block.iter().enumerate() {
                if better(w, block[best]) {
                    best = m;
                }
            }
            v[self.offsets[k] + best] = 1.0;
        }
        v
    }

    pub(crate) fn engine(&self) -> &PmfEngine {
        self.engine.get_or_init(|| PmfEngine::new(self))
    }

    /// Checks that `counts` has the problem's block shape and trial totals.
    pub fn check_counts(&self, counts: &ObservedCounts) -> Result<()> {
        if counts.blocks.len() != self.num_experiments() {
            return Err(Error::invalid(
                "counts",
                format!(
                    "expected {} experiments, got {}",
                    self.num_experiments(),
                    counts.blocks.len()
                ),
            ));
        }
        for (k, (block, spec)) in counts.blocks.iter().zip(&self.experiments).enumerate() {
            if block.len() != spec.categories() {
                return Err(Error::invalid(
                    "counts",
                    format!(
                        "experiment {k} has {} categories but {} counts",
                        spec.categories(),
                        block.len()
                    ),
                ));
            }
            let total: u64 = block.iter().sum();
            if total != spec.n {
                return Err(Error::invalid(
                    "counts",
                    format!("experiment {k} counts sum to {total}, expected n = {}", spec.n),
                ));
            }
        }
        Ok(())
    }
}

/// Validates the experiments and derives the attainable range and value lattice.
pub fn build_problem(experiments: Vec<ExperimentSpec>) -> Result<Problem> {
    if experiments.is_empty() {
        return Err(Error::invalid("experiments", "at least one experiment is required"));
    }
    let mut offsets = vec![0];
    let mut weights = Vec::new();
    let mut l_min = Rational::zero();
    let mut l_max = Rational::zero();
    for spec in &experiments {
        // ExperimentSpec::new already guarantees n >= 1 and M >= 2.
        let lo = spec.weights.iter().min().expect("nonempty");
        let hi = spec.weights.iter().max().expect("nonempty");
        l_min += lo;
        l_max += hi;
        weights.extend(spec.weights.iter().map(rational_to_f64));
        offsets.push(weights.len());
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("weights", "weight is not representable as a finite float"));
    }
    let (lattice, digits) = build_lattice(&experiments)?;
    let attainable = attainable_mask(&experiments, &digits, lattice.count);
    Ok(Problem {
        experiments,
        offsets,
        weights,
        l_min,
        l_max,
        lattice,
        digits,
        attainable,
        engine: OnceLock::new(),
    })
}

fn lattice_error(detail: &str) -> Error {
    Error::LatticeTooLarge {
        detail: detail.to_string(),
    }
}

fn build_lattice(experiments: &[ExperimentSpec]) -> Result<(YLattice, Vec<Vec<usize>>)> {
    let overflow = || lattice_error("integer scaling overflows 128 bits");
    let mut lcm_n: i128 = 1;
    let mut lcm_den: i128 = 1;
    for spec in experiments {
        lcm_n = checked_lcm(lcm_n, i128::from(spec.n)).ok_or_else(overflow)?;
        for w in &spec.weights {
            lcm_den = checked_lcm(lcm_den, *w.denom()).ok_or_else(overflow)?;
        }
    }
    let scale = lcm_n.checked_mul(lcm_den).ok_or_else(overflow)?;

    // Integer per-trial contributions a[m,k] = scale * w[m,k] / n[k].
    let mut bases = Vec::with_capacity(experiments.len());
    let mut diffs: Vec<Vec<i128>> = Vec::with_capacity(experiments.len());
    let mut g: i128 = 0;
    for spec in experiments {
        let per_trial = scale / i128::from(spec.n);
        let contrib = spec
            .weights
            .iter()
            .map(|w| {
                let factor = per_trial / w.denom();
                w.numer().checked_mul(factor).ok_or_else(overflow)
            })
            .collect::<Result<Vec<_>>>()?;
        let base = *contrib.iter().min().expect("nonempty");
        let d: Vec<i128> = contrib.iter().map(|a| a - base).collect();
        for &x in &d {
            g = g.gcd(&x);
        }
        bases.push(base);
        diffs.push(d);
    }

    let mut origin_scaled: i128 = 0;
    for (spec, base) in experiments.iter().zip(&bases) {
        origin_scaled = i128::from(spec.n)
            .checked_mul(*base)
            .and_then(|v| v.checked_add(origin_scaled))
            .ok_or_else(overflow)?;
    }
    let origin = Rational::new(origin_scaled, scale);

    if g == 0 {
        let digits = experiments.iter().map(|s| vec![0; s.categories()]).collect();
        let lattice = YLattice {
            origin,
            step: Rational::one(),
            count: 1,
        };
        return Ok((lattice, digits));
    }

    let mut count: u128 = 1;
    let mut digits = Vec::with_capacity(experiments.len());
    for (spec, d) in experiments.iter().zip(&diffs) {
        let dk: Vec<usize> = d
            .iter()
            .map(|&x| (x / g).to_usize().ok_or_else(overflow))
            .collect::<Result<_>>()?;
        let max = *dk.iter().max().expect("nonempty") as u128;
        count = count
            .checked_add(u128::from(spec.n).checked_mul(max).ok_or_else(overflow)?)
            .ok_or_else(overflow)?;
        digits.push(dk);
    }
    if count > MAX_LATTICE_COUNT as u128 {
        return Err(lattice_error(&format!(
            "{count} grid points exceeds the limit of {MAX_LATTICE_COUNT}"
        )));
    }
    let lattice = YLattice {
        origin,
        step: Rational::new(g, scale),
        count: count as usize,
    };
    Ok((lattice, digits))
}

fn checked_lcm(a: i128, b: i128) -> Option<i128> {
    let g = a.gcd(&b);
    (a / g).checked_mul(b).map(i128::abs)
}

/// Reachable lattice indices: per experiment, the sums of `n` draws from its
/// digit set; across experiments, their Minkowski sum.
fn attainable_mask(experiments: &[ExperimentSpec], digits: &[Vec<usize>], count: usize) -> Vec<bool> {
    let mut total = Bitset::new(1);
    total.set(0);
    for (spec, d) in experiments.iter().zip(digits) {
        let max = *d.iter().max().expect("nonempty");
        let mut distinct = d.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let mut reach = Bitset::new(1);
        reach.set(0);
        for i in 1..=spec.n as usize {
            let mut next = Bitset::new(i * max + 1);
            for &shift in &distinct {
                next.or_shifted(&reach, shift);
            }
            reach = next;
        }
        let mut next = Bitset::new(total.len + reach.len - 1);
        for bit in reach.ones() {
            next.or_shifted(&total, bit);
        }
        total = next;
    }
    debug_assert_eq!(total.len, count);
    (0..count).map(|j| total.get(j)).collect()
}

struct Bitset {
    words: Vec<u64>,
    len: usize,
}

impl Bitset {
    fn new(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }

    /// `self |= src << shift`; bits past `self.len` are dropped.
    fn or_shifted(&mut self, src: &Bitset, shift: usize) {
        let (word_shift, bit_shift) = (shift / 64, shift % 64);
        for (i, &w) in src.words.iter().enumerate() {
            if w == 0 {
                continue;
            }
            let lo = i + word_shift;
            if lo < self.words.len() {
                self.words[lo] |= w << bit_shift;
            }
            if bit_shift != 0 && lo + 1 < self.words.len() {
                self.words[lo + 1] |= w >> (64 - bit_shift);
            }
        }
        let tail = self.len % 64;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }
}

pub fn y_lattice(problem: &Problem) -> YLattice {
    problem.lattice.clone()
}

/// Observed category counts, one block per experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedCounts {
    blocks: Vec<Vec<u64>>,
}

impl ObservedCounts {
    pub fn new(blocks: Vec<Vec<u64>>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Vec<u64>] {
        &self.blocks
    }
}

/// The plug-in estimate `(x o n)' w`, exact.
pub fn estimate_l(problem: &Problem, counts: &ObservedCounts) -> Result<Rational> {
    problem.check_counts(counts)?;
    let mut total = Rational::zero();
    for (spec, block) in problem.experiments.iter().zip(&counts.blocks) {
        let n = Rational::from_integer(i128::from(spec.n));
        for (w, &x) in spec.weights.iter().zip(block) {
            total += w * Rational::from_integer(i128::from(x)) / n;
        }
    }
    Ok(total)
}

/// Lattice index of the estimate for `counts`.
pub fn estimate_index(problem: &Problem, counts: &ObservedCounts) -> Result<usize> {
    problem.check_counts(counts)?;
    Ok(counts
        .blocks
        .iter()
        .zip(&problem.digits)
        .map(|(block, d)| block.iter().zip(d).map(|(&x, &d)| x as usize * d).sum::<usize>())
        .sum())
}

pub fn attainable_range_check(problem: &Problem, l: f64) -> bool {
    l >= problem.l_min_f64() && l <= problem.l_max_f64()
}

/// Tolerance for block sums on input.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A point of the product of simplices, stored as one concatenated vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl SimplexPoint {
    /// Validates nonnegativity and unit block sums (within 1e-12), then renormalizes.
    pub fn new(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let mut values = Vec::new();
        let mut offsets = vec![0];
        for (k, block) in blocks.iter().enumerate() {
            if block.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::invalid(
                    "p",
                    format!("block {k} has a negative or non-finite entry"),
                ));
            }
            let sum: f64 = block.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid("p", format!("block {k} sums to {sum}, not 1")));
            }
            values.extend(block.iter().map(|v| v / sum));
            offsets.push(values.len());
        }
        Ok(Self { values, offsets })
    }

    pub(crate) fn from_flat(values: Vec<f64>, offsets: &[usize]) -> Self {
        Self {
            values,
            offsets: offsets.to_vec(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.values[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.offsets.windows(2).map(|w| &self.values[w[0]..w[1]])
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn conforms_to(&self, problem: &Problem) -> Result<()> {
        if self.offsets != problem.offsets {
            return Err(Error::invalid("p", "block shape does not match the problem"));
        }
        Ok(())
    }

    /// `p' w`.
    pub fn linear_combination(&self, problem: &Problem) -> f64 {
        self.values.iter().zip(problem.weights_f64()).map(|(p, w)| p * w).sum()
    }
}
