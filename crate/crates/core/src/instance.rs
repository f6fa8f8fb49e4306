//! Self-contained problem instances: a building, its prediction artifacts, a
//! weather forecast for one day, the initial state and the comfort and power settings.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envelope::{ComfortSpec, EnvelopeContext, EnvelopeProblemSpec, PowerLimits};
use crate::error::{Error, Result};
use crate::model::{build_prediction_matrices, generate_synthetic_building, NoiseSpec, PredictionOperator, StateSpaceModel};
use crate::solver::SolverSettings;
use crate::uncertainty::{StackedNoiseBasis, WeatherErrorModel};

/// Settings shared by every synthetic instance of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub rooms: usize,
    pub coupling: f64,
    pub horizon: usize,
    /// Centre of the comfort band (degC).
    pub comfort_centre: f64,
    /// Width of the comfort band (degC).
    pub comfort_width: f64,
    pub eps_c: f64,
    pub eps_t: f64,
    /// Thermal power capacity shared equally by the heating inputs (kW).
    pub total_power: f64,
    /// Multiplier on every noise standard deviation.
    pub noise_scale: f64,
    pub lambda: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            rooms: 3,
            coupling: 0.5,
            horizon: 24,
            comfort_centre: 22.0,
            comfort_width: 2.0,
            eps_c: 0.2,
            eps_t: 0.05,
            total_power: 5.0,
            noise_scale: 1.0,
            lambda: crate::envelope::DEFAULT_SLACK_PENALTY,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rooms == 0 {
            return Err(Error::invalid("rooms", "at least one room is required"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "horizon must be at least 1"));
        }
        if !(self.comfort_width > 0.0) {
            return Err(Error::invalid("comfort_width", "comfort band width must be positive"));
        }
        for (name, eps) in [("eps_c", self.eps_c), ("eps_t", self.eps_t)] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::invalid(name, format!("risk level {eps} is outside (0, 1)")));
            }
        }
        if !(self.total_power >= 0.0) {
            return Err(Error::invalid("total_power", "power capacity must be nonnegative"));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_scale", "noise scale must be nonnegative"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda", "slack penalty must be positive"));
        }
        Ok(())
    }

    pub fn comfort(&self) -> ComfortSpec {
        ComfortSpec::uniform(self.rooms, self.comfort_centre, self.comfort_width, self.eps_c, self.eps_t)
    }
}

/// Deterministic hourly weather forecast for one day starting at midnight.
///
/// Column 0 is the outdoor temperature (degC) with a sinusoidal daily cycle
/// peaking mid-afternoon; column 1 is solar irradiance (kW/m2) during daylight.
pub fn synthetic_weather(seed: u64, steps: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3ea7_4e12);
    let mean = rng.random_range(-2.0..8.0);
    let amplitude = rng.random_range(2.0..5.0);
    let solar_peak = rng.random_range(0.05..0.5);
    let mut drift = 0.0;
    let mut w = DMatrix::zeros(steps, 2);
    for h in 0..steps {
        let hour = (h % 24) as f64;
        let z: f64 = rng.sample(StandardNormal);
        drift = 0.8 * drift + 0.4 * z;
        w[(h, 0)] = mean - amplitude * (2.0 * PI * (hour - 15.0) / 24.0).cos() + drift;
        if (7.0..=17.0).contains(&hour) {
            w[(h, 1)] = solar_peak * (PI * (hour - 7.0) / 10.0).sin().max(0.0);
        }
    }
    w
}

/// Clustering features of a forecast: per-channel mean and standard deviation,
/// followed by the minimum outdoor temperature.
pub fn weather_features(weather: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * weather.ncols() + 1);
    for c in 0..weather.ncols() {
        let col = weather.column(c);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        out.push(mean);
        out.push(var.sqrt());
    }
    out.push(weather.column(0).min());
    out
}

/// State at which every room sits at `target` under constant weather `d`.
///
/// Returns the state and the holding power. When the holding power leaves the
/// limits it is clamped and the state recomputed for the clamped power.
pub fn steady_state(
    model: &StateSpaceModel,
    d: &DVector<f64>,
    target: &DVector<f64>,
    limits: &PowerLimits,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (nx, ny, np) = (model.nx(), model.ny(), model.np());
    let eye = DMatrix::<f64>::identity(nx, nx);
    let i_minus_a = &eye - &model.a;
    let solve_state = |p: &DVector<f64>| -> Result<DVector<f64>> {
        let rhs = &model.b_d * d + &model.b_p * p;
        i_minus_a
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::invalid("model", "I - A is singular"))
    };
    let mut p = DVector::zeros(np);
    if ny + nx == nx + np {
        // [I-A, -B_p; C, D_p] [x; p] = [B_d d; target - D_d d]
        let n = nx + np;
        let mut k = DMatrix::zeros(n, n);
        k.view_mut((0, 0), (nx, nx)).copy_from(&i_minus_a);
        k.view_mut((0, nx), (nx, np)).copy_from(&(-&model.b_p));
        k.view_mut((nx, 0), (ny, nx)).copy_from(&model.c);
        k.view_mut((nx, nx), (ny, np)).copy_from(&model.d_p);
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, nx).copy_from(&(&model.b_d * d));
        rhs.rows_mut(nx, ny).copy_from(&(target - &model.d_d * d));
        if let Some(sol) = k.lu().solve(&rhs) {
            p = sol.rows(nx, np).into_owned();
        }
    }
    let p = limits.clamp(&p);
    Ok((solve_state(&p)?, p))
}

/// A complete envelope problem with precomputed prediction artifacts.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: StateSpaceModel,
    pub noise: NoiseSpec,
    pub wem: WeatherErrorModel,
    pub op: PredictionOperator,
    pub basis: StackedNoiseBasis,
    /// Nominal weather forecast, `(N+2) x Nd`.
    pub weather: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub comfort: ComfortSpec,
    pub limits: PowerLimits,
    pub spec: EnvelopeProblemSpec,
    pub solver: SolverSettings,
}

impl Instance {
    /// Assembles an instance and builds its prediction operator and noise basis.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: StateSpaceModel,
        noise: NoiseSpec,
        wem: WeatherErrorModel,
        weather: DMatrix<f64>,
        x0: DVector<f64>,
        comfort: ComfortSpec,
        limits: PowerLimits,
        spec: EnvelopeProblemSpec,
    ) -> Result<Self> {
        let op = build_prediction_matrices(&model, spec.horizon)?;
        let basis = StackedNoiseBasis::build(&op, &noise, &wem)?;
        let inst = Self {
            model,
            noise,
            wem,
            op,
            basis,
            weather,
            x0,
            comfort,
            limits,
            spec,
            solver: SolverSettings::default(),
        };
        inst.context().validate()?;
        Ok(inst)
    }

    /// Synthetic building `building_seed` on synthetic day `day_seed`, starting
    /// from the steady state at the comfort centre under the first forecast hour.
    pub fn synthetic(building_seed: u64, day_seed: u64, cfg: &InstanceConfig) -> Result<Self> {
        cfg.validate()?;
        let (model, noise) = generate_synthetic_building(building_seed, cfg.rooms, cfg.coupling);
        Self::from_model(model, noise, day_seed, cfg)
    }

    /// A given building on synthetic day `day_seed`. `cfg.rooms` and
    /// `cfg.coupling` are ignored; the other settings apply as in [`Instance::synthetic`].
    pub fn from_model(model: StateSpaceModel, mut noise: NoiseSpec, day_seed: u64, cfg: &InstanceConfig) -> Result<Self> {
        cfg.validate()?;
        if model.nd() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "synthetic weather has 2 channels (temperature, irradiance), model expects {}",
                model.nd()
            )));
        }
        let mut wem = WeatherErrorModel::synthetic();
        let var_scale = cfg.noise_scale * cfg.noise_scale;
        noise.sigma_w *= var_scale;
        noise.sigma_v *= var_scale;
        wem.sigma_d *= var_scale;
        wem.sigma_d0 *= var_scale;
        let weather = synthetic_weather(day_seed, cfg.horizon + 2);
        let comfort = ComfortSpec::uniform(model.ny(), cfg.comfort_centre, cfg.comfort_width, cfg.eps_c, cfg.eps_t);
        let limits = PowerLimits::uniform(model.np(), 0.0, cfg.total_power / model.np() as f64);
        let d0 = weather.row(0).transpose();
        let target = DVector::from_element(model.ny(), cfg.comfort_centre);
        let (x0, _) = steady_state(&model, &d0, &target, &limits)?;
        let mut spec = EnvelopeProblemSpec::new(cfg.horizon);
        spec.lambda = cfg.lambda;
        Self::new(model, noise, wem, weather, x0, comfort, limits, spec)
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn context(&self) -> EnvelopeContext<'_> {
        EnvelopeContext {
            op: &self.op,
            basis: &self.basis,
            x0: &self.x0,
            weather: &self.weather,
            comfort: &self.comfort,
            limits: &self.limits,
            spec: &self.spec,
            solver: self.solver,
        }
    }

    /// Copy with different risk levels; prediction artifacts are reused.
    pub fn with_risk(&self, eps_c: f64, eps_t: f64) -> Self {
        let mut out = self.clone();
        out.comfort.eps_c = eps_c;
        out.comfort.eps_t = eps_t;
        out
    }
}
