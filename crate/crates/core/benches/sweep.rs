use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lincom_core::bounds::SolverConfig;
use lincom_core::coverage::{coverage_curve_with_table, interval_table, ScenarioId, ScenarioSpec};
use lincom_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn interval_tables(c: &mut Criterion) {
    let mut group = c.benchmark_group("interval_table");
    group.sample_size(10);
    let cfg = SolverConfig::default();
    for (id, n) in [(ScenarioId::C, 5), (ScenarioId::A, 4)] {
        let problem = ScenarioSpec::new(id, n).problem().unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, format!("{id:?}{n}")), &problem, |b, p| {
                b.iter(|| interval_table(p, 0.05, &cfg, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn coverage_sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("coverage_curve");
    group.sample_size(10);
    let problem = ScenarioSpec::new(ScenarioId::C, 5).problem().unwrap();
    let table = interval_table(&problem, 0.05, &SolverConfig::default(), Execution::Parallel).unwrap();
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, "C5 50x50"), |b| {
            b.iter(|| coverage_curve_with_table(&problem, &table, 50, 50, 42, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, interval_tables, coverage_sweeps);
criterion_main!(benches);
