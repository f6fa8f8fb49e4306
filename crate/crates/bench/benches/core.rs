use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};

use flexenv_bench::{bid_inputs, default_instance};
use flexenv_core::envelope::{envelope_ua, envelope_uaf_opt, Formulation};
use flexenv_core::market::{bid_reserves, ActivationParams};
use flexenv_core::provision::{run_pipeline, ScenarioConfig};

fn envelopes(c: &mut Criterion) {
    let inst = default_instance();
    let ctx = inst.context();
    c.bench_function("ua_envelope_lp", |b| b.iter(|| envelope_ua(&ctx).unwrap()));

    let mut slow = c.benchmark_group("socp");
    slow.sample_size(10).measurement_time(Duration::from_secs(60));
    slow.bench_function("uaf_opt_envelope", |b| b.iter(|| envelope_uaf_opt(&ctx).unwrap()));
    slow.finish();
}

fn bidding(c: &mut Criterion) {
    let inst = default_instance();
    let (env, prices, baseline) = bid_inputs(&inst);
    let settings = inst.context().solver;
    c.bench_function("robust_bid_lp", |b| {
        b.iter(|| bid_reserves(&env, &baseline.powers, &prices, &inst.limits, &settings).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let inst = default_instance();
    let (_, prices, _) = bid_inputs(&inst);
    let scenario = ScenarioConfig::intraday();
    let activation = ActivationParams::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10).measurement_time(Duration::from_secs(30));
    group.bench_function("ua_intraday_day", |b| {
        b.iter(|| run_pipeline(&inst, &prices, Formulation::Ua, None, &activation, &scenario, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, envelopes, bidding, pipeline);
criterion_main!(benches);
