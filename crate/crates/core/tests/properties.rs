use std::collections::BTreeMap;

use lincom_core::bayescost::{bc_interval, bc_weights, estimate_bc, ContingencyTable, CostMatrix, PrevalenceVector, Rounding};
use lincom_core::bounds::SolverConfig;
use lincom_core::coverage::{
    coverage_curve_with_table, interval_table, large_sample_interval, Comparator, ScenarioId, ScenarioSpec,
};
use lincom_core::model::{build_problem, ExperimentSpec, ObservedCounts, Rational, SimplexPoint};
use lincom_core::optimizer::{perturb, sample_constrained, CONSTRAINT_TOL};
use lincom_core::pmf::{pmf_bruteforce, pmf_fft};
use lincom_core::{Execution, Problem};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn experiment() -> impl Strategy<Value = (u64, Vec<i64>)> {
    (1u64..=4, prop::collection::vec(-3i64..=3, 2..=3))
}

fn small_problem() -> impl Strategy<Value = Vec<(u64, Vec<i64>)>> {
    prop::collection::vec(experiment(), 1..=3)
}

fn build(spec: &[(u64, Vec<i64>)]) -> Problem {
    build_problem(
        spec.iter()
            .map(|(n, w)| ExperimentSpec::with_int_weights(*n, w).unwrap())
            .collect(),
    )
    .unwrap()
}

/// A simplex point from raw positive draws, one block per experiment.
fn point(spec: &[(u64, Vec<i64>)], raw: &[f64]) -> SimplexPoint {
    let mut it = raw.iter().cycle();
    SimplexPoint::new(
        spec.iter()
            .map(|(_, w)| {
                let v: Vec<f64> = w.iter().map(|_| *it.next().unwrap()).collect();
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
            .collect(),
    )
    .unwrap()
}

/// PMF keyed by exact value.
fn keyed(problem: &Problem, probs: &[f64]) -> BTreeMap<Rational, f64> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(j, &m)| (problem.lattice().value(j), m))
        .collect()
}

fn close(a: &BTreeMap<Rational, f64>, b: &BTreeMap<Rational, f64>, tol: f64) -> bool {
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .all(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_matches_bruteforce(spec in small_problem(), raw in prop::collection::vec(0.01f64..1.0, 9)) {
        let problem = build(&spec);
        let p = point(&spec, &raw);
        let fft = pmf_fft(&problem, &p).unwrap();
        let brute = pmf_bruteforce(&problem, &p).unwrap();
        for (a, b) in fft.probs().iter().zip(brute.probs()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        prop_assert!((fft.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn pmf_invariant_to_relabelling(spec in small_problem(), raw in prop::collection::vec(0.01f64..1.0, 9)) {
        let problem = build(&spec);
        let p = point(&spec, &raw);
        let base = keyed(&problem, pmf_fft(&problem, &p).unwrap().probs());

        // Reverse the experiments and the categories within each.
        let spec_r: Vec<(u64, Vec<i64>)> = spec.iter().rev()
            .map(|(n, w)| (*n, w.iter().rev().copied().collect()))
            .collect();
        let p_r = SimplexPoint::new(
            p.blocks().collect::<Vec<_>>().into_iter().rev()
                .map(|b| b.iter().rev().copied().collect())
                .collect(),
        ).unwrap();
        let problem_r = build(&spec_r);
        let other = keyed(&problem_r, pmf_fft(&problem_r, &p_r).unwrap().probs());
        prop_assert!(close(&base, &other, 1e-12));
    }

    #[test]
    fn pmf_is_a_convolution(a in experiment(), b in experiment(), raw in prop::collection::vec(0.01f64..1.0, 9)) {
        let joint_spec = vec![a.clone(), b.clone()];
        let joint = build(&joint_spec);
        let p = point(&joint_spec, &raw);
        let pa = SimplexPoint::new(vec![p.block(0).to_vec()]).unwrap();
        let pb = SimplexPoint::new(vec![p.block(1).to_vec()]).unwrap();
        let (qa, qb) = (build(&[a]), build(&[b]));
        let fa = keyed(&qa, pmf_fft(&qa, &pa).unwrap().probs());
        let fb = keyed(&qb, pmf_fft(&qb, &pb).unwrap().probs());
        let mut conv: BTreeMap<Rational, f64> = BTreeMap::new();
        for (ya, ma) in &fa {
            for (yb, mb) in &fb {
                *conv.entry(ya + yb).or_default() += ma * mb;
            }
        }
        let direct = keyed(&joint, pmf_fft(&joint, &p).unwrap().probs());
        prop_assert!(close(&direct, &conv, 1e-12));
    }

    #[test]
    fn scaling_weights_scales_the_range(spec in small_problem(), gamma in 1i64..=4) {
        let problem = build(&spec);
        let scaled: Vec<(u64, Vec<i64>)> = spec.iter().map(|(n, w)| (*n, w.iter().map(|x| x * gamma).collect())).collect();
        let problem_s = build(&scaled);
        let g = Rational::from_integer(gamma.into());
        prop_assert_eq!(*problem_s.l_min(), problem.l_min() * g);
        prop_assert_eq!(*problem_s.l_max(), problem.l_max() * g);
        prop_assert_eq!(problem_s.lattice().count(), problem.lattice().count());
        prop_assert!(problem.l_min() <= problem.l_max());
    }

    #[test]
    fn constrained_samples_hit_the_target(spec in small_problem(), t in 0.0f64..=1.0, seed in any::<u64>()) {
        let problem = build(&spec);
        let l = problem.l_min_f64() + t * (problem.l_max_f64() - problem.l_min_f64());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_constrained(&problem, l, &mut rng).unwrap();
        let tol = CONSTRAINT_TOL * l.abs().max(1.0);
        prop_assert!((p.linear_combination(&problem) - l).abs() <= tol);
        for _ in 0..5 {
            let q = perturb(&problem, &p, 0.3, &mut rng).point;
            prop_assert!((q.linear_combination(&problem) - l).abs() <= tol);
            prop_assert!(q.values().iter().all(|&v| v >= 0.0));
            for block in q.blocks() {
                prop_assert!((block.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn large_sample_intervals_are_symmetric(x1 in 0u64..=6, x2 in 0u64..=6) {
        let problem = ScenarioSpec::new(ScenarioId::B, 6).problem().unwrap();
        let counts = ObservedCounts::new(vec![vec![x1, 6 - x1, 0, 0], vec![0, x2, 6 - x2, 0]]);
        let y = lincom_core::model::rational_to_f64(&lincom_core::model::estimate_l(&problem, &counts).unwrap());
        for c in [Comparator::Gold, Comparator::Goodman] {
            let (lo, hi) = large_sample_interval(&problem, &counts, 0.05, c).unwrap();
            prop_assert!(lo <= y && y <= hi);
            let (lmin, lmax) = (problem.l_min_f64(), problem.l_max_f64());
            if lo > lmin && hi < lmax {
                prop_assert!(((y - lo) - (hi - y)).abs() < 1e-9);
            }
        }
    }
}

fn table2(rows: [[u64; 2]; 2]) -> ContingencyTable {
    ContingencyTable::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bayes_cost_scales_with_costs(
        a in 1u64..6, b in 0u64..6, c in 0u64..6, d in 1u64..6,
        c01 in 1i128..6, c10 in 1i128..6, gamma in 2i128..5,
    ) {
        let table = table2([[a, b], [c, d]]);
        let prev = PrevalenceVector::new(vec![Rational::new(2, 5), Rational::new(3, 5)]).unwrap();
        let costs = CostMatrix::new(vec![
            vec![Rational::from_integer(0), Rational::from_integer(c01)],
            vec![Rational::from_integer(c10), Rational::from_integer(0)],
        ]).unwrap();
        let g = Rational::from_integer(gamma);
        let w = bc_weights(&costs, &prev, Rounding::None).unwrap();
        let ws = bc_weights(&costs.scaled(&g).unwrap(), &prev, Rounding::None).unwrap();
        prop_assert_eq!(estimate_bc(&table, &ws).unwrap(), estimate_bc(&table, &w).unwrap() * g);

        let cfg = SolverConfig::default();
        let base = bc_interval(&table, &w, 0.05, &cfg).unwrap();
        let scaled = bc_interval(&table, &ws, 0.05, &cfg).unwrap();
        let gf = gamma as f64;
        let span = base.upper - base.lower;
        prop_assert!((scaled.lower - gf * base.lower).abs() <= 1e-3 * gf * span.max(1e-3));
        prop_assert!((scaled.upper - gf * base.upper).abs() <= 1e-3 * gf * span.max(1e-3));
    }

    #[test]
    fn bayes_cost_invariant_to_class_relabelling(
        rows in prop::collection::vec(prop::collection::vec(0u64..5, 3), 3),
        costs in prop::collection::vec(0i128..9, 6),
    ) {
        prop_assume!(rows.iter().all(|r| r.iter().sum::<u64>() > 0));
        let perm = [2usize, 0, 1];
        let table = ContingencyTable::new(rows.clone()).unwrap();
        let table_p = ContingencyTable::new(
            perm.iter().map(|&i| perm.iter().map(|&j| rows[i][j]).collect()).collect(),
        ).unwrap();
        let mut it = costs.iter();
        let c: Vec<Vec<Rational>> = (0..3)
            .map(|i| (0..3).map(|j| if i == j { 0 } else { *it.next().unwrap() }).map(Rational::from_integer).collect())
            .collect();
        let c_p: Vec<Vec<Rational>> = perm.iter().map(|&i| perm.iter().map(|&j| c[i][j]).collect()).collect();
        let pr = [Rational::new(1, 2), Rational::new(3, 10), Rational::new(1, 5)];
        let prev = PrevalenceVector::new(pr.to_vec()).unwrap();
        let prev_p = PrevalenceVector::new(perm.iter().map(|&i| pr[i]).collect()).unwrap();
        let w = bc_weights(&CostMatrix::new(c).unwrap(), &prev, Rounding::None).unwrap();
        let w_p = bc_weights(&CostMatrix::new(c_p).unwrap(), &prev_p, Rounding::None).unwrap();
        let bc = estimate_bc(&table, &w).unwrap();
        prop_assert_eq!(bc, estimate_bc(&table_p, &w_p).unwrap());

        // Zero exactly when no positively weighted cell is populated.
        let populated = (0..3).any(|i| (0..3).any(|j| rows[i][j] > 0 && w[i][j] > Rational::from_integer(0)));
        prop_assert_eq!(bc == Rational::from_integer(0), !populated);
    }
}

#[test]
fn report_minimum_below_average() {
    let cfg = SolverConfig::default();
    for (id, n) in [(ScenarioId::A, 2), (ScenarioId::C, 3), (ScenarioId::D, 2)] {
        let problem = ScenarioSpec::new(id, n).problem().unwrap();
        let table = interval_table(&problem, 0.05, &cfg, Execution::Parallel).unwrap();
        let report = coverage_curve_with_table(&problem, &table, 10, 10, 7, Execution::Parallel).unwrap();
        assert_eq!(report.l_grid.len(), report.coverage.len());
        assert!(report.conf_coeff_estimate <= report.avg_coverage);
        let min_curve = report.coverage.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(report.conf_coeff_estimate <= min_curve + 1e-12);
    }
}

#[test]
fn execution_modes_agree() {
    let problem = ScenarioSpec::new(ScenarioId::C, 4).problem().unwrap();
    let cfg = SolverConfig::default();
    let seq = interval_table(&problem, 0.05, &cfg, Execution::Sequential).unwrap();
    let par = interval_table(&problem, 0.05, &cfg, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    let a = coverage_curve_with_table(&problem, &seq, 8, 6, 3, Execution::Sequential).unwrap();
    let b = coverage_curve_with_table(&problem, &par, 8, 6, 3, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
