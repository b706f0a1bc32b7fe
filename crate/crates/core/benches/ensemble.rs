use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use heavytail::diagnostics::TestFunctionSpec;
use heavytail::par::Execution;
use heavytail::runner::{run_ensemble_with, ExperimentConfig};
use heavytail::{KernelConfig, TargetSpec};

fn ensemble(c: &mut Criterion) {
    let target = TargetSpec::student_t(1.0, 1).unwrap();
    let mut group = c.benchmark_group("ensemble_64x20000");
    group.sample_size(10);
    for (name, kc) in [
        ("fv_rwm", KernelConfig::rwm_gaussian(2.4)),
        ("mala", KernelConfig::mala(0.5)),
        ("sps", KernelConfig::sps(1.0)),
    ] {
        let cfg = ExperimentConfig::new(target, &kc, 64, 20_000, 7)
            .with_g(TestFunctionSpec::IndicatorNormGe { threshold: 2.0 });
        for exec in [Execution::Sequential, Execution::Parallel] {
            group.bench_with_input(BenchmarkId::new(name, format!("{exec:?}")), &exec, |b, &exec| {
                b.iter(|| run_ensemble_with(&cfg, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ensemble);
criterion_main!(benches);
