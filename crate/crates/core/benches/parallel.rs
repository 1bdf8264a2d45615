use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pvbi::exec::{map_range, Execution};
use pvbi::models::{MultibandScenario, RssScenario};
use pvbi::rng::stream;
use pvbi::solver::{run_pspvbi, SolverConfig, StepSizes};

fn solver(c: &mut Criterion) {
    let draw = MultibandScenario::default()
        .generate(&mut stream(1, &[]), false)
        .unwrap();
    let mut group = c.benchmark_group("multiband_pspvbi");
    group.sample_size(10);
    for exec in [Execution::Serial, Execution::Parallel] {
        let cfg = SolverConfig {
            max_iter: 10,
            subset_size: Some(64),
            steps: StepSizes::Curvature {
                scale: 3.0,
                decay: 0.0,
                weight: 0.05,
            },
            execution: exec,
            ..SolverConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| run_pspvbi(&draw.model, cfg).unwrap())
        });
    }
    group.finish();
}

fn repetitions(c: &mut Criterion) {
    let sc = RssScenario::default();
    let models: Vec<_> = (0..32)
        .map(|r| sc.build(&sc.generate(&mut stream(r, &[])).unwrap()).unwrap())
        .collect();
    let mut group = c.benchmark_group("rss_repetitions");
    group.sample_size(10);
    for exec in [Execution::Serial, Execution::Parallel] {
        let cfg = SolverConfig {
            execution: Execution::Serial,
            ..SolverConfig::default()
        };
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| map_range(exec, models.len(), |r| run_pspvbi(&models[r], &cfg).unwrap().mmse))
        });
    }
    group.finish();
}

criterion_group!(benches, solver, repetitions);
criterion_main!(benches);
