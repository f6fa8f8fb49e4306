use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReserveBid;
use crate::error::{Error, Result};
use crate::policies::Direction;

/// Parameters of the random activation process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationParams {
    /// Probability that a step is activated.
    pub probability: f64,
    /// Upper end of the uniform activation fraction.
    pub max_fraction: f64,
}

impl Default for ActivationParams {
    fn default() -> Self {
        Self {
            probability: 0.15,
            max_fraction: 0.4,
        }
    }
}

impl ActivationParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::invalid("activation.probability", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.max_fraction) {
            return Err(Error::invalid("activation.max_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Expected utilisation `probability * max_fraction / 2`.
    pub fn expected_utilization(&self) -> f64 {
        self.probability * self.max_fraction / 2.0
    }
}

/// Activation request of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationStep {
    pub direction: Option<Direction>,
    /// Share of the reserved power requested, common to all inputs.
    pub fraction: f64,
    /// Signed power request per input (kW): positive for upward activation.
    pub request: DVector<f64>,
}

impl ActivationStep {
    pub fn none(np: usize) -> Self {
        Self {
            direction: None,
            fraction: 0.0,
            request: DVector::zeros(np),
        }
    }

    /// Signed total request (kW).
    pub fn total(&self) -> f64 {
        self.request.sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSignal {
    pub steps: Vec<ActivationStep>,
}

impl ActivationSignal {
    /// A signal without any activation.
    pub fn none(horizon: usize, np: usize) -> Self {
        Self {
            steps: vec![ActivationStep::none(np); horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Request for `fraction` of the reserve of `bid` at step `k` in `direction`.
pub fn request(bid: &ReserveBid, k: usize, direction: Direction, fraction: f64) -> ActivationStep {
    let request = match direction {
        Direction::Up => bid.p_plus.row(k).transpose() * fraction,
        Direction::Down => -bid.p_minus.row(k).transpose() * fraction,
    };
    ActivationStep {
        direction: Some(direction),
        fraction,
        request,
    }
}

/// Random activation: each step is activated with the configured probability,
/// in a direction drawn uniformly among those with reserve, for a uniform
/// fraction of the reserve. Steps without reserve are never activated.
pub fn generate_activation(bid: &ReserveBid, params: &ActivationParams, seed: u64) -> Result<ActivationSignal> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xac71_7a7e);
    let np = bid.p_plus.ncols();
    let mut steps = Vec::with_capacity(bid.horizon());
    for k in 0..bid.horizon() {
        // draws are consumed on every step so that the signal at step k does not
        // depend on whether earlier steps carried reserve
        let active = rng.random::<f64>() < params.probability;
        let coin = rng.random::<f64>();
        let fraction = rng.random::<f64>() * params.max_fraction;
        let dirs: Vec<Direction> = Direction::BOTH
            .into_iter()
            .filter(|d| match d {
                Direction::Up => bid.total_plus(k) > 0.0,
                Direction::Down => bid.total_minus(k) > 0.0,
            })
            .collect();
        if !active || dirs.is_empty() {
            steps.push(ActivationStep::none(np));
            continue;
        }
        let dir = dirs[((coin * dirs.len() as f64) as usize).min(dirs.len() - 1)];
        steps.push(request(bid, k, dir, fraction));
    }
    Ok(ActivationSignal { steps })
}

/// Mean over steps with reserve of requested over reserved power in the
/// requested direction; steps without activation count as zero.
pub fn utilization_rate(signal: &ActivationSignal, bid: &ReserveBid) -> Result<f64> {
    if signal.len() != bid.horizon() {
        return Err(Error::LengthMismatch {
            what: "activation signal".into(),
            expected: bid.horizon(),
            got: signal.len(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, step) in signal.steps.iter().enumerate() {
        let (up, down) = (bid.total_plus(k), bid.total_minus(k));
        if up <= 0.0 && down <= 0.0 {
            continue;
        }
        count += 1;
        let reserved = match step.direction {
            Some(Direction::Up) => up,
            Some(Direction::Down) => down,
            None => continue,
        };
        if reserved > 0.0 {
            sum += step.request.iter().map(|v| v.abs()).sum::<f64>() / reserved;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}
