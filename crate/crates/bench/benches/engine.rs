use std::collections::BTreeSet;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use faultmaint::analysis::{compute_metric_many, AnalysisOptions};
use faultmaint::ctmc::{compose, delay_module, DelaySpec};
use faultmaint::{compile, simulate, CompileOptions, CostModel, Metric, SimConfig};
use faultmaint_bench::{hvac, small};

fn composition(c: &mut Criterion) {
    let a = delay_module(&DelaySpec::new(182.0, 10)).unwrap();
    let b = delay_module(&DelaySpec::new(7.0, 10)).unwrap();
    let sync = BTreeSet::new();
    c.bench_function("compose_two_delays", |bench| {
        bench.iter(|| compose(black_box(&a), black_box(&b), &sync).unwrap())
    });
    let m = small();
    c.bench_function("compile_small", |bench| {
        bench.iter(|| compile(black_box(&m), &CostModel::default(), &CompileOptions::default()).unwrap())
    });
}

fn uniformization(c: &mut Criterion) {
    let m = small();
    let horizons = [365.0, 3650.0];
    let opts = AnalysisOptions::default();
    let mut g = c.benchmark_group("uniformization");
    g.sample_size(10);
    for metric in [Metric::Reliability, Metric::ExpectedCost] {
        g.bench_function(metric.as_str(), |bench| {
            bench.iter(|| compute_metric_many(&m, metric, &horizons, &CostModel::default(), &opts).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let m = hvac();
    let mut g = c.benchmark_group("simulation");
    g.sample_size(10);
    for erlang_mode in [false, true] {
        let cfg = SimConfig {
            runs: 1000,
            horizon: 3650.0,
            erlang_mode,
            ..SimConfig::default()
        };
        let name = if erlang_mode { "hvac_erlang_1000" } else { "hvac_fixed_1000" };
        g.bench_function(name, |bench| bench.iter(|| simulate(&m, &CostModel::default(), &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, composition, uniformization, simulation);
criterion_main!(benches);
