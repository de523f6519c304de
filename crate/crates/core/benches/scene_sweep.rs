//! Sequential against parallel scene execution on a small benchmark.

use criterion::{criterion_group, criterion_main, Criterion};
use mvp_core::harness::config::IlluminationSpec;
use mvp_core::harness::{
    build_provider, resolve_source_stats, run_benchmark_with, ExperimentConfig, Workload,
};

fn config(workers: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        workers,
        ..ExperimentConfig::default()
    };
    cfg.scenes.n_scenes = 16;
    cfg.scenes.illuminations = vec![IlluminationSpec::Preset("L2".into())];
    cfg.pipeline.n_augs = 16;
    cfg
}

fn scene_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("scene_sweep");
    group.sample_size(10);
    let label = if mvp_core::exec::parallel_enabled() {
        "parallel"
    } else {
        "parallel_disabled"
    };
    for (name, workers) in [("sequential", 1), (label, 0)] {
        let work = Workload::new(config(workers)).expect("valid config");
        let provider = build_provider(&work.config).expect("provider");
        let source = resolve_source_stats(&work.config, provider.as_ref()).expect("source stats");
        group.bench_function(name, |b| {
            b.iter(|| run_benchmark_with(&work, provider.as_ref(), &source).expect("run"))
        });
    }
    group.finish();
}

criterion_group!(benches, scene_sweep);
criterion_main!(benches);
