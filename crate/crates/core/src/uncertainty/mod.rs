//! Forecast and model-error modelling, the stacked Gaussian noise basis and the
//! safety margins that tighten comfort and power constraints.

mod basis;
mod margins;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{NoiseSpec, PredictionOperator};

pub use basis::{NoiseBlock, NoiseLayout, StackedNoiseBasis};
pub use margins::{
    feedback_output_map, margin_no_feedback, margin_output_with_feedback, margin_power, risk_factor,
    SafetyMargins,
};

/// AR(1) model of the weather forecast error:
/// `d~_k = phi^k d~_0 + sum_{i<k} phi^i n~_{k-i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherErrorModel {
    #[serde(with = "linalg::rows")]
    pub phi: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub sigma_d: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub sigma_d0: DMatrix<f64>,
}

impl WeatherErrorModel {
    pub fn nd(&self) -> usize {
        self.phi.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let nd = self.nd();
        for (name, m) in [("phi", &self.phi), ("Sigma_d", &self.sigma_d), ("Sigma_d0", &self.sigma_d0)] {
            if m.shape() != (nd, nd) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {:?}, expected {nd}x{nd}",
                    m.shape()
                )));
            }
        }
        let rho = linalg::spectral_radius(&self.phi);
        if rho >= 1.0 {
            return Err(Error::UnstableModel { spectral_radius: rho });
        }
        linalg::check_psd("Sigma_d", &self.sigma_d)?;
        linalg::check_psd("Sigma_d0", &self.sigma_d0)?;
        Ok(())
    }

    /// No forecast error at all.
    pub fn zero(nd: usize) -> Self {
        Self {
            phi: DMatrix::zeros(nd, nd),
            sigma_d: DMatrix::zeros(nd, nd),
            sigma_d0: DMatrix::zeros(nd, nd),
        }
    }

    /// Error model for the synthetic outdoor-temperature / irradiance forecast channels.
    ///
    /// Stationary standard deviations of roughly 1.4 degC and 0.07 kW/m2.
    pub fn synthetic() -> Self {
        Self {
            phi: DMatrix::from_diagonal(&nalgebra::dvector![0.85, 0.7]),
            sigma_d: DMatrix::from_diagonal(&nalgebra::dvector![0.75f64.powi(2), 0.05f64.powi(2)]),
            sigma_d0: DMatrix::from_diagonal(&nalgebra::dvector![0.3f64.powi(2), 0.02f64.powi(2)]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wem: Self = serde_json::from_str(text)?;
        wem.validate()?;
        Ok(wem)
    }
}

/// Inverse standard-normal CDF.
pub fn gaussian_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile probability {p} not in (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(p))
}

/// Stacks every noise source of the horizon into one Gaussian basis.
pub fn build_stacked_basis(
    op: &PredictionOperator,
    noise: &NoiseSpec,
    wem: &WeatherErrorModel,
) -> Result<StackedNoiseBasis> {
    StackedNoiseBasis::build(op, noise, wem)
}

/// Covariance of the k-step model error `e~_k = v~_k + sum_{i<k} C A^i w~_{k-1-i}`.
pub fn model_error_covariance(op: &PredictionOperator, noise: &NoiseSpec, k: usize) -> DMatrix<f64> {
    let mut cov = noise.sigma_v.clone();
    for i in 0..k {
        let ca = op.c_a_power(i);
        cov += ca * &noise.sigma_w * ca.transpose();
    }
    cov
}

/// Covariance of the k-step weather forecast error.
pub fn weather_error_covariance(wem: &WeatherErrorModel, k: usize) -> DMatrix<f64> {
    let nd = wem.nd();
    let mut phi_i = DMatrix::identity(nd, nd);
    let mut cov = DMatrix::zeros(nd, nd);
    for _ in 0..k {
        cov += &phi_i * &wem.sigma_d * phi_i.transpose();
        phi_i = &wem.phi * phi_i;
    }
    cov + &phi_i * &wem.sigma_d0 * phi_i.transpose()
}
