use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{NoiseSpec, StateSpaceModel};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RiccatiSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 10_000,
        }
    }
}

/// State estimate together with the steady-state filter gain used to update it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub x_hat: DVector<f64>,
    pub gain: DMatrix<f64>,
    /// Steady-state prior error covariance the gain was derived from.
    pub covariance: DMatrix<f64>,
}

impl StateEstimate {
    pub fn new(x_hat: DVector<f64>, gain: DMatrix<f64>, covariance: DMatrix<f64>) -> Self {
        Self {
            x_hat,
            gain,
            covariance,
        }
    }
}

fn riccati_step(model: &StateSpaceModel, noise: &NoiseSpec, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = &model.a;
    let c = &model.c;
    let s = c * p * c.transpose() + &noise.sigma_v;
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("innovation covariance C P C^T + Sigma_v is singular".into()))?;
    let apc = a * p * c.transpose();
    let next = a * p * a.transpose() - &apc * s_inv * apc.transpose() + &noise.sigma_w;
    Ok((&next + next.transpose()) * 0.5)
}

fn filter_gain(model: &StateSpaceModel, noise: &NoiseSpec, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = &model.c;
    let s = c * p * c.transpose() + &noise.sigma_v;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Domain("innovation covariance C P C^T + Sigma_v is singular".into()))?;
    Ok(p * c.transpose() * s_inv)
}

/// Steady-state Kalman filter gain by fixed-point iteration of the discrete Riccati recursion.
///
/// The returned covariance `P` is the prior (one-step predicted) error covariance and the
/// gain is the measurement-update gain `K = P C^T (C P C^T + Sigma_v)^-1`.
pub fn steady_state_gain(
    model: &StateSpaceModel,
    noise: &NoiseSpec,
    settings: RiccatiSettings,
) -> Result<StateEstimate> {
    let mut p = noise.sigma_w.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..settings.max_iterations {
        let next = riccati_step(model, noise, &p)?;
        let diff = (&next - &p).norm();
        let scale = next.norm();
        p = next;
        residual = if scale > 0.0 { diff / scale } else { diff };
        if residual <= settings.tolerance * 1e-3 {
            let gain = filter_gain(model, noise, &p)?;
            return Ok(StateEstimate::new(DVector::zeros(model.nx()), gain, p));
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iterations,
        residual,
    })
}

/// Relative Frobenius residual of the Riccati fixed point.
pub fn riccati_residual(model: &StateSpaceModel, noise: &NoiseSpec, p: &DMatrix<f64>) -> Result<f64> {
    let next = riccati_step(model, noise, p)?;
    if p.norm() == 0.0 {
        return Ok(next.norm());
    }
    Ok(linalg::rel_frobenius(&next, p))
}

/// One predict/correct step of the steady-state filter.
///
/// `prev` are the inputs applied over the last step, `now` the inputs active when
/// `y_meas` was taken (they enter through the feedthrough `D`).
pub fn update_state_estimate(
    est: &StateEstimate,
    model: &StateSpaceModel,
    prev: (&DVector<f64>, &DVector<f64>),
    now: (&DVector<f64>, &DVector<f64>),
    y_meas: &DVector<f64>,
) -> StateEstimate {
    let x_pred = &model.a * &est.x_hat + &model.b_d * prev.0 + &model.b_p * prev.1;
    let innovation = y_meas - model.output(&x_pred, now.0, now.1);
    StateEstimate {
        x_hat: x_pred + &est.gain * innovation,
        gain: est.gain.clone(),
        covariance: est.covariance.clone(),
    }
}
