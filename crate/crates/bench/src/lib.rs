//! Shared fixtures for the benchmarks.

use flexenv_core::envelope::{compute_baseline, envelope_ua, Baseline, FlexibilityEnvelope};
use flexenv_core::instance::{Instance, InstanceConfig};
use flexenv_core::market::{synth_prices, PriceSeries};

/// Default synthetic building (3 rooms, 24 hours) on day 0.
pub fn default_instance() -> Instance {
    Instance::synthetic(0, 0, &InstanceConfig::default()).expect("default instance builds")
}

/// UA envelope, day-ahead prices and the baseline inside the envelope.
pub fn bid_inputs(inst: &Instance) -> (FlexibilityEnvelope, PriceSeries, Baseline) {
    let ctx = inst.context();
    let env = envelope_ua(&ctx).expect("UA envelope solves");
    let prices = synth_prices(0, inst.horizon());
    let baseline = compute_baseline(&ctx, &prices.da, Some(&env)).expect("baseline solves");
    (env, prices, baseline)
}
