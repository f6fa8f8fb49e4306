use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, SimulationTrace};
use crate::envelope::ComfortSpec;
use crate::error::{Error, Result};
use crate::market::{ActivationSignal, PriceSeries, ReserveBid};
use crate::policies::Direction;

/// Deviation (degC) above which a room-step counts as a comfort violation.
pub const VIOLATION_THRESHOLD: f64 = 0.01;

const ROUNDOFF: f64 = 1e-9;

/// Revenues and costs of one simulated day (EUR).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RevenueBreakdown {
    pub reserve_revenue: f64,
    pub energy_revenue: f64,
    pub adaptation_cost: f64,
    pub penalty_cost: f64,
    /// `reserve + energy - adaptation - penalty`.
    pub net: f64,
    /// Electric energy traded or rebounded (kWh).
    pub adapted_energy: f64,
    /// Electric energy missing beyond the tolerated slack (kWh).
    pub undelivered_energy: f64,
}

impl RevenueBreakdown {
    pub fn new(reserve_revenue: f64, energy_revenue: f64, adaptation_cost: f64, penalty_cost: f64) -> Self {
        Self {
            reserve_revenue,
            energy_revenue,
            adaptation_cost,
            penalty_cost,
            net: reserve_revenue + energy_revenue - adaptation_cost - penalty_cost,
            adapted_energy: 0.0,
            undelivered_energy: 0.0,
        }
    }

    /// Monetary fields divided by `reference`.
    pub fn per_unit(&self, reference: f64) -> Self {
        Self {
            reserve_revenue: self.reserve_revenue / reference,
            energy_revenue: self.energy_revenue / reference,
            adaptation_cost: self.adaptation_cost / reference,
            penalty_cost: self.penalty_cost / reference,
            net: self.net / reference,
            ..*self
        }
    }
}

/// Settles a simulated day.
///
/// * Reserve revenue pays every reserved kW at its reserve price.
/// * Activation energy is paid at the energy price of its direction. A step
///   whose delivered power lies within `slack_fraction` of the request is
///   credited with the full request; otherwise only the delivered part counts.
/// * Traded baseline deviations cost the adaptation price per kWh in each direction.
/// * At reserved steps any deviation of the delivered power from the request
///   beyond the slack is charged at the imbalance price.
///
/// Power quantities are thermal and converted to electricity with the COP.
pub fn settle(
    trace: &SimulationTrace,
    bid: &ReserveBid,
    signal: &ActivationSignal,
    prices: &PriceSeries,
    cfg: &ScenarioConfig,
) -> Result<RevenueBreakdown> {
    let n = trace.len();
    if bid.horizon() != n || signal.len() != n {
        return Err(Error::invalid("horizon", "trace, bid and activation signal lengths differ"));
    }
    prices.validate(n)?;
    let scale = trace.dt / cfg.cop;
    let mut reserve = 0.0;
    let mut energy = 0.0;
    let mut adaptation = 0.0;
    let mut penalty = 0.0;
    let mut adapted = 0.0;
    let mut undelivered = 0.0;
    for (k, s) in trace.steps.iter().enumerate() {
        reserve += scale * (prices.r_plus[k] * bid.total_plus(k) + prices.r_minus[k] * bid.total_minus(k));

        let requested = s.requested.sum();
        let delivered = s.delivered.sum();
        let excess = ((delivered - requested).abs() - cfg.slack_fraction * requested.abs()).max(0.0);
        let excess = if excess < ROUNDOFF { 0.0 } else { excess };
        if let Some(dir) = signal.steps[k].direction {
            let (price, sign) = match dir {
                Direction::Up => (prices.e_plus[k], 1.0),
                Direction::Down => (prices.e_minus[k], -1.0),
            };
            let credited = if excess == 0.0 {
                requested.abs()
            } else {
                (sign * delivered).clamp(0.0, requested.abs())
            };
            energy += price * credited * scale;
        }
        if bid.total_plus(k) + bid.total_minus(k) > 0.0 {
            penalty += prices.imbalance[k] * excess * scale;
            undelivered += excess * scale;
        }
        if s.traded {
            for d in s.delta.iter() {
                let price = if *d > 0.0 { prices.id_plus[k] } else { prices.id_minus[k] };
                adaptation += price * d.abs() * scale;
                adapted += d.abs() * scale;
            }
        }
    }
    let mut out = RevenueBreakdown::new(reserve, energy, adaptation, penalty);
    out.adapted_energy = adapted;
    out.undelivered_energy = undelivered;
    Ok(out)
}

/// Comfort statistics of a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscomfortMetrics {
    /// Mean deviation from the band over all rooms and steps (degC).
    pub average: f64,
    /// Largest deviation (degC).
    pub maximum: f64,
    /// Room-hours with a deviation above [`VIOLATION_THRESHOLD`].
    pub violation_hours: f64,
}

/// Deviation of every measured temperature from the comfort band, summarised.
pub fn discomfort_metrics(trace: &SimulationTrace, comfort: &ComfortSpec) -> DiscomfortMetrics {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut maximum = 0.0f64;
    let mut violations = 0usize;
    for s in &trace.steps {
        for (r, y) in s.temperature.iter().enumerate() {
            let dev = (y - comfort.t_max[r]).max(0.0) + (comfort.t_min[r] - y).max(0.0);
            total += dev;
            count += 1;
            maximum = maximum.max(dev);
            if dev > VIOLATION_THRESHOLD {
                violations += 1;
            }
        }
    }
    DiscomfortMetrics {
        average: if count > 0 { total / count as f64 } else { 0.0 },
        maximum,
        violation_hours: violations as f64 * trace.dt,
    }
}
