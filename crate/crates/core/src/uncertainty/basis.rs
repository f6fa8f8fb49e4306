use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::WeatherErrorModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{NoiseSpec, PredictionOperator};

/// The four kinds of blocks in the stacked noise vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseBlock {
    /// Initial weather forecast error `d~_0`.
    WeatherInit,
    /// Weather innovation `n~_j`, `j = 1..=N+1`.
    WeatherInnovation(usize),
    /// Process noise `w~_i`, `i = 0..=N`.
    Process(usize),
    /// Measurement noise `v~_k`, `k = 0..=N+1`.
    Measurement(usize),
}

/// Column layout of `xi = [d~_0; n~_1..n~_{N+1}; w~_0..w~_N; v~_0..v~_{N+1}]`.
///
/// The innovation `n~_{N+1}` is included so the weather error at the terminal
/// output step is fully represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseLayout {
    pub horizon: usize,
    pub nd: usize,
    pub nx: usize,
    pub ny: usize,
}

impl NoiseLayout {
    pub fn dim(&self) -> usize {
        let n = self.horizon;
        self.nd * (n + 2) + self.nx * (n + 1) + self.ny * (n + 2)
    }

    /// First column and width of a block.
    pub fn block(&self, b: NoiseBlock) -> (usize, usize) {
        let n = self.horizon;
        let innov = self.nd;
        let process = innov + self.nd * (n + 1);
        let meas = process + self.nx * (n + 1);
        match b {
            NoiseBlock::WeatherInit => (0, self.nd),
            NoiseBlock::WeatherInnovation(j) => {
                assert!((1..=n + 1).contains(&j), "innovation index {j} out of range");
                (innov + self.nd * (j - 1), self.nd)
            }
            NoiseBlock::Process(i) => {
                assert!(i <= n, "process noise index {i} out of range");
                (process + self.nx * i, self.nx)
            }
            NoiseBlock::Measurement(k) => {
                assert!(k <= n + 1, "measurement noise index {k} out of range");
                (meas + self.ny * k, self.ny)
            }
        }
    }

    /// Earliest output step whose measurement can reveal each column.
    ///
    /// `d~_0` is known at step 0, `n~_j` at step `j`, `w~_i` first affects `x_{i+1}`
    /// and `v~_k` is seen at step `k`.
    pub fn time_support(&self) -> Vec<usize> {
        let mut support = vec![0; self.dim()];
        let mut fill = |b: NoiseBlock, t: usize| {
            let (start, width) = self.block(b);
            support[start..start + width].fill(t);
        };
        for j in 1..=self.horizon + 1 {
            fill(NoiseBlock::WeatherInnovation(j), j);
        }
        for i in 0..=self.horizon {
            fill(NoiseBlock::Process(i), i + 1);
        }
        for k in 0..=self.horizon + 1 {
            fill(NoiseBlock::Measurement(k), k);
        }
        support
    }
}

/// Linear maps from the stacked Gaussian noise vector to every disturbance quantity.
///
/// All `*_scaled` maps are pre-multiplied by `Sigma^{1/2}`, so row norms of a scaled
/// map are standard deviations.
#[derive(Debug, Clone)]
pub struct StackedNoiseBasis {
    layout: NoiseLayout,
    sigma_half: DMatrix<f64>,
    d_maps: Vec<DMatrix<f64>>,
    e_maps: Vec<DMatrix<f64>>,
    r_maps: Vec<DMatrix<f64>>,
    y_base: Vec<DMatrix<f64>>,
    r_scaled: Vec<DMatrix<f64>>,
    y_scaled: Vec<DMatrix<f64>>,
}

impl StackedNoiseBasis {
    pub fn build(op: &PredictionOperator, noise: &NoiseSpec, wem: &WeatherErrorModel) -> Result<Self> {
        let model = op.model();
        let (nx, ny, nd) = (model.nx(), model.ny(), model.nd());
        if wem.nd() != nd {
            return Err(Error::DimensionMismatch(format!(
                "weather error model has {} channels, model has {nd}",
                wem.nd()
            )));
        }
        if noise.sigma_w.shape() != (nx, nx) || noise.sigma_v.shape() != (ny, ny) {
            return Err(Error::DimensionMismatch("noise covariances do not match the model".into()));
        }
        let n = op.horizon();
        let steps = op.steps();
        let layout = NoiseLayout { horizon: n, nd, nx, ny };
        let dim = layout.dim();

        let mut sigma_half = DMatrix::zeros(dim, dim);
        let d0_half = linalg::psd_sqrt("Sigma_d0", &wem.sigma_d0)?;
        let d_half = linalg::psd_sqrt("Sigma_d", &wem.sigma_d)?;
        let w_half = linalg::psd_sqrt("Sigma_w", &noise.sigma_w)?;
        let v_half = linalg::psd_sqrt("Sigma_v", &noise.sigma_v)?;
        let mut put = |b: NoiseBlock, m: &DMatrix<f64>| {
            let (s, w) = layout.block(b);
            sigma_half.view_mut((s, s), (w, w)).copy_from(m);
        };
        put(NoiseBlock::WeatherInit, &d0_half);
        for j in 1..=n + 1 {
            put(NoiseBlock::WeatherInnovation(j), &d_half);
        }
        for i in 0..=n {
            put(NoiseBlock::Process(i), &w_half);
        }
        for k in 0..steps {
            put(NoiseBlock::Measurement(k), &v_half);
        }

        let mut phi_powers = vec![DMatrix::identity(nd, nd)];
        for k in 1..steps {
            let next = &wem.phi * &phi_powers[k - 1];
            phi_powers.push(next);
        }

        let mut d_maps = Vec::with_capacity(steps);
        let mut e_maps = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut d = DMatrix::zeros(nd, dim);
            let (s, _) = layout.block(NoiseBlock::WeatherInit);
            d.view_mut((0, s), (nd, nd)).copy_from(&phi_powers[k]);
            for j in 1..=k {
                let (s, _) = layout.block(NoiseBlock::WeatherInnovation(j));
                d.view_mut((0, s), (nd, nd)).copy_from(&phi_powers[k - j]);
            }
            d_maps.push(d);

            let mut e = DMatrix::zeros(ny, dim);
            let (s, _) = layout.block(NoiseBlock::Measurement(k));
            e.view_mut((0, s), (ny, ny)).fill_with_identity();
            for i in 0..k {
                let (s, _) = layout.block(NoiseBlock::Process(i));
                e.view_mut((0, s), (ny, nx)).copy_from(op.lambda_w(k, i));
            }
            e_maps.push(e);
        }

        let mut r_maps = Vec::with_capacity(steps);
        let mut y_base = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut r = DMatrix::zeros(nd + ny, dim);
            r.rows_mut(0, nd).copy_from(&d_maps[k]);
            r.rows_mut(nd, ny).copy_from(&e_maps[k]);
            r_maps.push(r);

            let mut y = e_maps[k].clone();
            for i in 0..=k {
                y += op.lambda_d(k, i) * &d_maps[i];
            }
            y_base.push(y);
        }

        let r_scaled = r_maps.iter().map(|m| m * &sigma_half).collect();
        let y_scaled = y_base.iter().map(|m| m * &sigma_half).collect();

        Ok(Self {
            layout,
            sigma_half,
            d_maps,
            e_maps,
            r_maps,
            y_base,
            r_scaled,
            y_scaled,
        })
    }

    pub fn layout(&self) -> NoiseLayout {
        self.layout
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn sigma_half(&self) -> &DMatrix<f64> {
        &self.sigma_half
    }

    /// Maps `xi` to the weather forecast error `d~_k`.
    pub fn d_map(&self, k: usize) -> &DMatrix<f64> {
        &self.d_maps[k]
    }

    /// Maps `xi` to the model error `e~_k`.
    pub fn e_map(&self, k: usize) -> &DMatrix<f64> {
        &self.e_maps[k]
    }

    /// Maps `xi` to the observed disturbance `r~_k = [d~_k; e~_k]`.
    pub fn r_map(&self, k: usize) -> &DMatrix<f64> {
        &self.r_maps[k]
    }

    /// Maps `xi` to the output deviation `y~_k` without feedback.
    pub fn y_base(&self, k: usize) -> &DMatrix<f64> {
        &self.y_base[k]
    }

    pub fn r_scaled(&self, k: usize) -> &DMatrix<f64> {
        &self.r_scaled[k]
    }

    pub fn y_scaled(&self, k: usize) -> &DMatrix<f64> {
        &self.y_scaled[k]
    }

    /// Analytic covariance of `y~_k` without feedback.
    pub fn output_covariance(&self, k: usize) -> DMatrix<f64> {
        let s = &self.y_scaled[k];
        s * s.transpose()
    }

    /// Analytic covariance of `r~_k`.
    pub fn disturbance_covariance(&self, k: usize) -> DMatrix<f64> {
        let s = &self.r_scaled[k];
        s * s.transpose()
    }

    /// Draws one realisation of the stacked noise vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.sigma_half * z
    }

    /// Slice of a noise vector belonging to one block.
    pub fn block_of<'a>(&self, xi: &'a DVector<f64>, b: NoiseBlock) -> nalgebra::DVectorView<'a, f64> {
        let (s, w) = self.layout.block(b);
        xi.rows(s, w)
    }
}
