//! Discrete-time stochastic thermal model of a building.
//!
//! ```text
//! x_{t+1} = A x_t + B_d d_t + B_p p_t + w_t,   w_t ~ N(0, Sigma_w)
//! y_t     = C x_t + D_d d_t + D_p p_t + v_t,   v_t ~ N(0, Sigma_v)
//! ```
//!
//! `d` are weather inputs (outdoor temperature, irradiance, ...), `p` heating
//! powers in kW and `y` room temperatures in degrees Celsius.

mod estimator;
mod prediction;
mod synthetic;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use estimator::{riccati_residual, steady_state_gain, update_state_estimate, RiccatiSettings, StateEstimate};
pub use prediction::{build_prediction_matrices, predict_nominal, PredictionOperator};
pub use synthetic::{generate_synthetic_building, SyntheticBuilding};

/// Default planning horizon in timesteps.
pub const DEFAULT_HORIZON: usize = 24;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelLabels {
    pub outputs: Vec<String>,
    pub weather: Vec<String>,
    pub powers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    #[serde(with = "linalg::rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub b_d: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub b_p: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub c: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub d_d: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub d_p: DMatrix<f64>,
    /// Timestep length in hours.
    pub dt: f64,
    #[serde(default)]
    pub labels: ModelLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(with = "linalg::rows")]
    pub sigma_w: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub sigma_v: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    pub fn nd(&self) -> usize {
        self.b_d.ncols()
    }

    pub fn np(&self) -> usize {
        self.b_p.ncols()
    }

    /// One noise-free step: returns `(x_next, y)` for state `x` and inputs `(d, p)`.
    pub fn step(&self, x: &DVector<f64>, d: &DVector<f64>, p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let y = self.output(x, d, p);
        let x_next = &self.a * x + &self.b_d * d + &self.b_p * p;
        (x_next, y)
    }

    pub fn output(&self, x: &DVector<f64>, d: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d_d * d + &self.d_p * p
    }

    fn check_dimensions(&self) -> Result<()> {
        let nx = self.nx();
        let (ny, nd, np) = (self.ny(), self.nd(), self.np());
        let mismatch = |what: &str, m: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
            if m.nrows() != r || m.ncols() != c {
                return Err(Error::DimensionMismatch(format!(
                    "{what} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        if nx == 0 {
            return Err(Error::DimensionMismatch("model has no states".into()));
        }
        if ny == 0 || nd == 0 || np == 0 {
            return Err(Error::DimensionMismatch(format!(
                "need at least one output, weather input and power input (got Ny={ny}, Nd={nd}, Np={np})"
            )));
        }
        mismatch("A", &self.a, nx, nx)?;
        mismatch("B_d", &self.b_d, nx, nd)?;
        mismatch("B_p", &self.b_p, nx, np)?;
        mismatch("C", &self.c, ny, nx)?;
        mismatch("D_d", &self.d_d, ny, nd)?;
        mismatch("D_p", &self.d_p, ny, np)?;
        let all = [&self.a, &self.b_d, &self.b_p, &self.c, &self.d_d, &self.d_p];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::DimensionMismatch("model contains non-finite entries".into()));
        }
        Ok(())
    }

    pub fn to_json(&self, noise: &NoiseSpec) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            model: self.clone(),
            noise: noise.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<(StateSpaceModel, NoiseSpec)> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        validate_model(&doc.model, &doc.noise)?;
        Ok((doc.model, doc.noise))
    }

    pub fn load(path: &Path) -> Result<(StateSpaceModel, NoiseSpec)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, noise: &NoiseSpec, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json(noise)?)?;
        Ok(())
    }
}

/// On-disk model exchange document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub model: StateSpaceModel,
    pub noise: NoiseSpec,
}

/// Checks every structural invariant of a model and its noise description.
pub fn validate_model(model: &StateSpaceModel, noise: &NoiseSpec) -> Result<()> {
    model.check_dimensions()?;
    if !(model.dt > 0.0 && model.dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {}", model.dt)));
    }
    let rho = linalg::spectral_radius(&model.a);
    if rho >= 1.0 {
        return Err(Error::UnstableModel { spectral_radius: rho });
    }
    let (nx, ny) = (model.nx(), model.ny());
    if noise.sigma_w.shape() != (nx, nx) {
        return Err(Error::DimensionMismatch(format!(
            "Sigma_w is {:?}, expected {nx}x{nx}",
            noise.sigma_w.shape()
        )));
    }
    if noise.sigma_v.shape() != (ny, ny) {
        return Err(Error::DimensionMismatch(format!(
            "Sigma_v is {:?}, expected {ny}x{ny}",
            noise.sigma_v.shape()
        )));
    }
    linalg::check_psd("Sigma_w", &noise.sigma_w)?;
    linalg::check_psd("Sigma_v", &noise.sigma_v)?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn scalar_model(a: f64) -> StateSpaceModel {
        StateSpaceModel {
            a: DMatrix::from_element(1, 1, a),
            b_d: DMatrix::from_element(1, 1, 0.0),
            b_p: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
            d_d: DMatrix::zeros(1, 1),
            d_p: DMatrix::zeros(1, 1),
            dt: 1.0,
            labels: ModelLabels::default(),
        }
    }

    fn unit_noise() -> NoiseSpec {
        NoiseSpec {
            sigma_w: DMatrix::identity(1, 1),
            sigma_v: DMatrix::identity(1, 1),
        }
    }

    #[test]
    fn stable_scalar_is_accepted() {
        assert!(validate_model(&scalar_model(0.5), &unit_noise()).is_ok());
    }

    #[test]
    fn unstable_scalar_is_rejected() {
        let err = validate_model(&scalar_model(1.1), &unit_noise()).unwrap_err();
        match err {
            Error::UnstableModel { spectral_radius } => assert!((spectral_radius - 1.1).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn indefinite_measurement_noise_is_rejected() {
        let mut noise = unit_noise();
        noise.sigma_v[(0, 0)] = -1.0;
        assert!(matches!(
            validate_model(&scalar_model(0.5), &noise),
            Err(Error::NonPsdCovariance { .. })
        ));
    }

    #[test]
    fn mismatched_output_matrix_is_rejected() {
        let mut m = scalar_model(0.5);
        m.c = DMatrix::zeros(1, 2);
        assert!(matches!(
            validate_model(&m, &unit_noise()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn document_round_trips_at_full_precision() {
        let mut m = scalar_model(0.1 + 0.2);
        m.b_p[(0, 0)] = std::f64::consts::PI;
        let text = m.to_json(&unit_noise()).unwrap();
        let (back, noise) = StateSpaceModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(noise, unit_noise());
    }
}
