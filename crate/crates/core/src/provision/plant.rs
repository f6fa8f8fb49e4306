use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::psd_sqrt;
use crate::model::{NoiseSpec, StateSpaceModel};
use crate::uncertainty::WeatherErrorModel;

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sqrt: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(sqrt.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    sqrt * z
}

/// One sampled day of truth disturbances, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRealization {
    /// Weather forecast error `d~_k`.
    pub weather_error: DMatrix<f64>,
    /// Process noise `w~_k`.
    pub process: DMatrix<f64>,
    /// Output noise `v~_k`.
    pub output: DMatrix<f64>,
}

impl TruthRealization {
    /// Draws `steps` steps: the weather error follows its AR(1) model from `d~_0`,
    /// process and output noise are white.
    ///
    /// The draws of a step never depend on the decisions taken, so runs that
    /// share a seed see the same disturbances.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        model: &StateSpaceModel,
        noise: &NoiseSpec,
        wem: &WeatherErrorModel,
        steps: usize,
    ) -> Result<Self> {
        let sw = psd_sqrt("Sigma_w", &noise.sigma_w)?;
        let sv = psd_sqrt("Sigma_v", &noise.sigma_v)?;
        let sd = psd_sqrt("Sigma_d", &wem.sigma_d)?;
        let sd0 = psd_sqrt("Sigma_d0", &wem.sigma_d0)?;
        let mut weather_error = DMatrix::zeros(steps, model.nd());
        let mut process = DMatrix::zeros(steps, model.nx());
        let mut output = DMatrix::zeros(steps, model.ny());
        let mut d = DVector::zeros(model.nd());
        for k in 0..steps {
            d = if k == 0 { gaussian(rng, &sd0) } else { &wem.phi * &d + gaussian(rng, &sd) };
            weather_error.set_row(k, &d.transpose());
            process.set_row(k, &gaussian(rng, &sw).transpose());
            output.set_row(k, &gaussian(rng, &sv).transpose());
        }
        Ok(Self {
            weather_error,
            process,
            output,
        })
    }

    pub fn from_seed(inst: &Instance, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::sample(&mut rng, &inst.model, &inst.noise, &inst.wem, inst.weather.nrows())
    }

    /// A realisation without any disturbance.
    pub fn zero(model: &StateSpaceModel, steps: usize) -> Self {
        Self {
            weather_error: DMatrix::zeros(steps, model.nd()),
            process: DMatrix::zeros(steps, model.nx()),
            output: DMatrix::zeros(steps, model.ny()),
        }
    }

    pub fn steps(&self) -> usize {
        self.weather_error.nrows()
    }
}

/// Share of truth samples in which each room leaves its comfort band at each
/// step, when `powers` is applied open loop from the instance's initial state.
///
/// Returns a `steps x Ny` matrix for the steps covered by `powers`.
pub fn open_loop_violation_frequency(
    inst: &Instance,
    powers: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let model = &inst.model;
    if powers.ncols() != model.np() {
        return Err(Error::ShapeMismatch(format!(
            "power profile has {} inputs, model has {}",
            powers.ncols(),
            model.np()
        )));
    }
    let steps = powers.nrows().min(inst.weather.nrows());
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = DMatrix::<f64>::zeros(steps, model.ny());
    for _ in 0..samples {
        let truth = TruthRealization::sample(&mut rng, model, &inst.noise, &inst.wem, steps)?;
        let mut x = inst.x0.clone();
        for k in 0..steps {
            let d = inst.weather.row(k).transpose() + truth.weather_error.row(k).transpose();
            let p = powers.row(k).transpose();
            let (next, y) = model.step(&x, &d, &p);
            let y = y + truth.output.row(k).transpose();
            for j in 0..model.ny() {
                if y[j] > inst.comfort.t_max[j] || y[j] < inst.comfort.t_min[j] {
                    counts[(k, j)] += 1.0;
                }
            }
            x = next + truth.process.row(k).transpose();
        }
    }
    Ok(counts / samples as f64)
}
