use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{discomfort_metrics, settle, simulate_closed_loop, DiscomfortMetrics, RevenueBreakdown, ScenarioConfig};
use super::{ScenarioMode, SimulationTrace};
use crate::envelope::{compute_baseline, compute_envelope, Baseline, FlexibilityEnvelope, Formulation};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::market::{bid_reserves, generate_activation, ActivationParams, ActivationSignal, PriceSeries, ReserveBid};
use crate::policies::AffinePolicy;

/// Independent random stream `stream` derived from a run seed (SplitMix64 finaliser).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ACTIVATION_STREAM: u64 = 1;
const TRUTH_STREAM: u64 = 2;

/// Day-ahead part of a run: envelope, baseline, bid and activation signal.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRun {
    pub formulation: Formulation,
    pub envelope: FlexibilityEnvelope,
    pub baseline: Baseline,
    pub bid: ReserveBid,
    pub signal: ActivationSignal,
}

/// Result of the real-time part of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub trace: SimulationTrace,
    pub revenue: RevenueBreakdown,
    pub discomfort: DiscomfortMetrics,
}

/// Envelope, baseline within the envelope, robust bid and activation signal.
///
/// `fixed` supplies the policies of the UAF-fixed formulation.
pub fn prepare_run(
    inst: &Instance,
    prices: &PriceSeries,
    formulation: Formulation,
    fixed: Option<(&AffinePolicy, &AffinePolicy)>,
    activation: &ActivationParams,
    seed: u64,
) -> Result<PreparedRun> {
    prices.validate(inst.horizon())?;
    activation.validate()?;
    let ctx = inst.context();
    let envelope = compute_envelope(&ctx, formulation, fixed)?;
    let baseline = compute_baseline(&ctx, &prices.da, Some(&envelope))?;
    let bid = bid_reserves(&envelope, &baseline.powers, prices, &inst.limits, &ctx.solver)?;
    let signal = generate_activation(&bid, activation, sub_seed(seed, ACTIVATION_STREAM))?;
    Ok(PreparedRun {
        formulation,
        envelope,
        baseline,
        bid,
        signal,
    })
}

/// Closed-loop provision of a prepared run, settled and scored.
pub fn run_prepared(
    inst: &Instance,
    prepared: &PreparedRun,
    prices: &PriceSeries,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<PipelineOutcome> {
    let trace = simulate_closed_loop(
        inst,
        &prepared.bid,
        &prepared.baseline.powers,
        &prepared.signal,
        prices,
        cfg,
        sub_seed(seed, TRUTH_STREAM),
    )?;
    let revenue = settle(&trace, &prepared.bid, &prepared.signal, prices, cfg)?;
    let discomfort = discomfort_metrics(&trace, &inst.comfort);
    Ok(PipelineOutcome {
        trace,
        revenue,
        discomfort,
    })
}

/// Baseline, envelope, bid, activation, closed-loop simulation and settlement in one call.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    inst: &Instance,
    prices: &PriceSeries,
    formulation: Formulation,
    fixed: Option<(&AffinePolicy, &AffinePolicy)>,
    activation: &ActivationParams,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<(PreparedRun, PipelineOutcome)> {
    let prepared = prepare_run(inst, prices, formulation, fixed, activation, seed)?;
    let outcome = run_prepared(inst, &prepared, prices, cfg, seed)?;
    Ok((prepared, outcome))
}

/// Mean outcome of one formulation at one intra-day price multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub formulation: Formulation,
    pub multiplier: f64,
    pub net: f64,
    pub adaptation_cost: f64,
    pub adapted_energy: f64,
    pub runs: usize,
}

/// Reruns the real-time part of every prepared run with the intra-day prices
/// scaled by each multiplier, all other prices unchanged, and averages the
/// settlement per formulation and multiplier.
///
/// `cases` pairs each instance with its prepared run, price series and run seed.
pub fn price_sensitivity_sweep(
    cases: &[(&Instance, &PreparedRun, &PriceSeries, u64)],
    cfg: &ScenarioConfig,
    multipliers: &[f64],
) -> Result<Vec<SweepRow>> {
    if multipliers.is_empty() || multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::invalid("multipliers", "need at least one positive multiplier"));
    }
    let jobs: Vec<(usize, usize)> = (0..multipliers.len())
        .flat_map(|m| (0..cases.len()).map(move |c| (m, c)))
        .collect();
    let results: Vec<RevenueBreakdown> = jobs
        .par_iter()
        .map(|&(m, c)| {
            let (inst, prepared, prices, seed) = cases[c];
            let scaled = prices.scale_intraday(multipliers[m]);
            run_prepared(inst, prepared, &scaled, cfg, seed).map(|o| o.revenue)
        })
        .collect::<Result<_>>()?;

    let mut formulations: Vec<Formulation> = Vec::new();
    for (_, p, _, _) in cases {
        if !formulations.contains(&p.formulation) {
            formulations.push(p.formulation);
        }
    }
    let mut rows = Vec::new();
    for (m, &multiplier) in multipliers.iter().enumerate() {
        for &f in &formulations {
            let mut acc = (0.0, 0.0, 0.0, 0usize);
            for ((jm, jc), r) in jobs.iter().zip(&results) {
                if *jm == m && cases[*jc].1.formulation == f {
                    acc = (acc.0 + r.net, acc.1 + r.adaptation_cost, acc.2 + r.adapted_energy, acc.3 + 1);
                }
            }
            let n = acc.3 as f64;
            rows.push(SweepRow {
                formulation: f,
                multiplier,
                net: acc.0 / n,
                adaptation_cost: acc.1 / n,
                adapted_energy: acc.2 / n,
                runs: acc.3,
            });
        }
    }
    Ok(rows)
}

/// Smallest multiplier at which `challenger` earns a strictly higher mean net
/// revenue than `reference`.
pub fn crossover_multiplier(rows: &[SweepRow], reference: Formulation, challenger: Formulation) -> Option<f64> {
    let mut multipliers: Vec<f64> = rows.iter().map(|r| r.multiplier).collect();
    multipliers.sort_by(f64::total_cmp);
    multipliers.dedup();
    multipliers.into_iter().find(|&m| {
        let net = |f: Formulation| rows.iter().find(|r| r.multiplier == m && r.formulation == f).map(|r| r.net);
        matches!((net(reference), net(challenger)), (Some(a), Some(b)) if b > a)
    })
}

/// Largest mean net revenue over the formulations run with intra-day access,
/// the reference for per-unit revenues.
pub fn normalization_reference(results: &[(Formulation, ScenarioMode, RevenueBreakdown)]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in [Formulation::Ui, Formulation::Ua, Formulation::UafFixed, Formulation::UafOpt] {
        let nets: Vec<f64> = results
            .iter()
            .filter(|(rf, mode, _)| *rf == f && *mode == ScenarioMode::IntraDay)
            .map(|(_, _, r)| r.net)
            .collect();
        if !nets.is_empty() {
            let mean = nets.iter().sum::<f64>() / nets.len() as f64;
            best = Some(best.map_or(mean, |b: f64| b.max(mean)));
        }
    }
    best.filter(|b| *b > 0.0)
}
