use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::controller::{plan_adaptation, ControllerInput};
use super::plant::TruthRealization;
use super::{ScenarioConfig, ScenarioMode};
use crate::envelope::fmt_num;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::market::{ActivationSignal, PriceSeries, ReserveBid};
use crate::model::{steady_state_gain, RiccatiSettings};
use crate::policies::Direction;

/// Everything recorded at one simulated step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub direction: Option<Direction>,
    /// Power applied to the plant, within the limits (kW).
    pub applied: DVector<f64>,
    /// Measured room temperatures (degC).
    pub temperature: DVector<f64>,
    /// Day-ahead baseline of the step.
    pub baseline_before: DVector<f64>,
    /// Baseline after the committed deviation.
    pub baseline_after: DVector<f64>,
    /// Committed baseline deviation.
    pub delta: DVector<f64>,
    /// Whether the deviation is a priced trade; otherwise it counts against provision.
    pub traded: bool,
    /// Signed activation request.
    pub requested: DVector<f64>,
    /// Power delivered relative to the committed reference baseline.
    pub delivered: DVector<f64>,
    /// Distance of each room temperature from the comfort band (degC).
    pub violation: DVector<f64>,
    /// State estimate after the measurement of this step.
    pub x_hat: DVector<f64>,
    pub controller_ok: bool,
}

/// Closed-loop record of one simulated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub mode: ScenarioMode,
    pub dt: f64,
    pub steps: Vec<TraceStep>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of steps at which the controller failed and the baseline was kept.
    pub fn controller_failures(&self) -> usize {
        self.steps.iter().filter(|s| !s.controller_ok).count()
    }

    /// Total absolute baseline deviation traded (kWh of thermal energy).
    pub fn traded_energy(&self) -> f64 {
        self.steps
            .iter()
            .filter(|s| s.traded)
            .map(|s| s.delta.iter().map(|v| v.abs()).sum::<f64>() * self.dt)
            .sum()
    }

    /// One row per step with every vector flattened into numbered columns.
    pub fn to_csv(&self) -> Result<String> {
        let first = self.steps.first().ok_or_else(|| Error::invalid("trace", "trace is empty"))?;
        let (np, ny, nx) = (first.applied.len(), first.temperature.len(), first.x_hat.len());
        let mut header = vec!["step".to_string(), "direction".into(), "traded".into(), "controller_ok".into()];
        for (name, n) in [
            ("applied", np),
            ("temperature", ny),
            ("baseline_before", np),
            ("baseline_after", np),
            ("delta", np),
            ("requested", np),
            ("delivered", np),
            ("violation", ny),
            ("x_hat", nx),
        ] {
            header.extend((0..n).map(|i| format!("{name}_{i}")));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;
        for s in &self.steps {
            let mut row = vec![
                s.step.to_string(),
                s.direction.map_or("none", |d| d.as_str()).to_string(),
                s.traded.to_string(),
                s.controller_ok.to_string(),
            ];
            for v in [
                &s.applied,
                &s.temperature,
                &s.baseline_before,
                &s.baseline_after,
                &s.delta,
                &s.requested,
                &s.delivered,
                &s.violation,
                &s.x_hat,
            ] {
                row.extend(v.iter().map(|x| fmt_num(*x)));
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn row(m: &DMatrix<f64>, k: usize) -> DVector<f64> {
    if k < m.nrows() {
        m.row(k).transpose()
    } else {
        DVector::zeros(m.ncols())
    }
}

/// Runs one day of flexibility provision with truth disturbances drawn from `seed`.
///
/// See [`simulate_with_truth`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    inst: &Instance,
    bid: &ReserveBid,
    baseline: &DMatrix<f64>,
    signal: &ActivationSignal,
    prices: &PriceSeries,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<SimulationTrace> {
    let truth = TruthRealization::from_seed(inst, seed)?;
    simulate_with_truth(inst, bid, baseline, signal, prices, cfg, &truth)
}

/// Runs one day of flexibility provision against a given truth realisation.
///
/// At every step the controller plans the baseline deviation from the prior
/// state estimate, the activation request is added on top of the adapted
/// baseline, the sum is clipped to the power limits and applied to the truth
/// plant, and the steady-state filter corrects the estimate with the measured
/// temperatures. The controller extrapolates the last observed weather error
/// with the AR(1) model. A controller failure keeps the baseline unchanged for
/// that step and is recorded in the trace.
///
/// `baseline` holds the day-ahead schedule for steps `0..N`; an optional row `N`
/// is used as the fixed terminal power.
#[allow(clippy::too_many_arguments)]
pub fn simulate_with_truth(
    inst: &Instance,
    bid: &ReserveBid,
    baseline: &DMatrix<f64>,
    signal: &ActivationSignal,
    prices: &PriceSeries,
    cfg: &ScenarioConfig,
    truth: &TruthRealization,
) -> Result<SimulationTrace> {
    cfg.validate()?;
    let model = &inst.model;
    let n = inst.horizon();
    let np = model.np();
    if bid.horizon() != n || signal.len() != n {
        return Err(Error::invalid("horizon", "bid, activation signal and instance horizons differ"));
    }
    if baseline.nrows() < n || baseline.ncols() != np {
        return Err(Error::ShapeMismatch(format!(
            "baseline is {:?}, expected at least ({n}, {np})",
            baseline.shape()
        )));
    }
    if truth.steps() < n {
        return Err(Error::invalid("truth", "truth realisation is shorter than the horizon"));
    }
    prices.validate(n)?;

    let no_noise = inst.noise.sigma_w.iter().chain(inst.noise.sigma_v.iter()).all(|v| *v == 0.0);
    let gain = if no_noise {
        DMatrix::zeros(model.nx(), model.ny())
    } else {
        steady_state_gain(model, &inst.noise, RiccatiSettings::default())?.gain
    };

    let mut x = inst.x0.clone();
    let mut x_prior = inst.x0.clone();
    let mut last_error = DVector::zeros(model.nd());
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let n_r = n - t;
        let mut weather = DMatrix::zeros(n_r + 1, model.nd());
        let mut drift = last_error.clone();
        for j in 0..=n_r {
            drift = &inst.wem.phi * drift;
            weather.set_row(j, &(row(&inst.weather, t + j) + &drift).transpose());
        }
        let input = ControllerInput {
            op: &inst.op,
            x_hat: x_prior.clone(),
            weather,
            baseline: DMatrix::from_fn(n_r + 1, np, |j, i| row(baseline, t + j)[i]),
            reserve_up: bid.p_plus.rows(t, n_r).into_owned(),
            reserve_down: bid.p_minus.rows(t, n_r).into_owned(),
            price_plus: prices.id_plus[t..n].to_vec(),
            price_minus: prices.id_minus[t..n].to_vec(),
            comfort: &inst.comfort,
            limits: &inst.limits,
        };
        let reserved = input.reserved(0);
        let (delta, controller_ok) = match plan_adaptation(&input, cfg, &inst.solver) {
            Ok(plan) => (plan.first(), true),
            Err(e) => {
                log::warn!("step {t}: adaptation failed ({e}); keeping the baseline");
                (DVector::zeros(np), false)
            }
        };

        let before = baseline.row(t).transpose();
        let after = &before + &delta;
        let step = &signal.steps[t];
        let applied = inst.limits.clamp(&(&after + &step.request));
        let traded = cfg.mode == ScenarioMode::IntraDay || !reserved;
        let reference = if traded { &after } else { &before };
        let delivered = &applied - reference;

        let d = row(&inst.weather, t) + truth.weather_error.row(t).transpose();
        let (x_next, y_clean) = model.step(&x, &d, &applied);
        let y = y_clean + truth.output.row(t).transpose();
        x = x_next + truth.process.row(t).transpose();
        let innovation = &y - model.output(&x_prior, &d, &applied);
        let x_post = &x_prior + &gain * innovation;
        x_prior = &model.a * &x_post + &model.b_d * &d + &model.b_p * &applied;
        last_error = truth.weather_error.row(t).transpose();

        let violation = DVector::from_fn(y.len(), |r, _| {
            (y[r] - inst.comfort.t_max[r]).max(0.0) + (inst.comfort.t_min[r] - y[r]).max(0.0)
        });
        steps.push(TraceStep {
            step: t,
            direction: step.direction,
            applied,
            temperature: y,
            baseline_before: before,
            baseline_after: after,
            delta,
            traded,
            requested: step.request.clone(),
            delivered,
            violation,
            x_hat: x_post,
            controller_ok,
        });
    }
    Ok(SimulationTrace {
        mode: cfg.mode,
        dt: model.dt,
        steps,
    })
}
