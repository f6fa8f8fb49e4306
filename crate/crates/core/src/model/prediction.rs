use nalgebra::{DMatrix, DVector};

use super::StateSpaceModel;
use crate::error::{Error, Result};

/// k-step prediction matrices over a horizon of `N` steps (indices `0..=N+1`).
///
/// `lambda_p(k, i)` maps the heating power at step `i` to the output at step `k`:
/// `C A^(k-1-i) B_p` for `i < k`, `D_p` for `i == k` and zero for `i > k`.
/// `lambda_d` is the same for weather inputs and `lambda_w(k, i) = C A^(k-1-i)`
/// for `i < k` maps process noise.
#[derive(Debug, Clone)]
pub struct PredictionOperator {
    model: StateSpaceModel,
    horizon: usize,
    a_powers: Vec<DMatrix<f64>>,
    c_a_powers: Vec<DMatrix<f64>>,
    lambda_p: Vec<Vec<DMatrix<f64>>>,
    lambda_d: Vec<Vec<DMatrix<f64>>>,
    lambda_w: Vec<Vec<DMatrix<f64>>>,
}

pub fn build_prediction_matrices(model: &StateSpaceModel, horizon: usize) -> Result<PredictionOperator> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let steps = horizon + 2;
    let (nx, ny, nd, np) = (model.nx(), model.ny(), model.nd(), model.np());

    let mut a_powers = Vec::with_capacity(steps);
    a_powers.push(DMatrix::identity(nx, nx));
    for k in 1..steps {
        let next = &model.a * &a_powers[k - 1];
        a_powers.push(next);
    }
    let c_a_powers: Vec<_> = a_powers.iter().map(|ak| &model.c * ak).collect();
    let ca_bp: Vec<_> = c_a_powers.iter().map(|m| m * &model.b_p).collect();
    let ca_bd: Vec<_> = c_a_powers.iter().map(|m| m * &model.b_d).collect();

    let mut lambda_p = Vec::with_capacity(steps);
    let mut lambda_d = Vec::with_capacity(steps);
    let mut lambda_w = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut row_p = Vec::with_capacity(steps);
        let mut row_d = Vec::with_capacity(steps);
        let mut row_w = Vec::with_capacity(steps);
        for i in 0..steps {
            if i < k {
                row_p.push(ca_bp[k - 1 - i].clone());
                row_d.push(ca_bd[k - 1 - i].clone());
                row_w.push(c_a_powers[k - 1 - i].clone());
            } else if i == k {
                row_p.push(model.d_p.clone());
                row_d.push(model.d_d.clone());
                row_w.push(DMatrix::zeros(ny, nx));
            } else {
                row_p.push(DMatrix::zeros(ny, np));
                row_d.push(DMatrix::zeros(ny, nd));
                row_w.push(DMatrix::zeros(ny, nx));
            }
        }
        lambda_p.push(row_p);
        lambda_d.push(row_d);
        lambda_w.push(row_w);
    }

    Ok(PredictionOperator {
        model: model.clone(),
        horizon,
        a_powers,
        c_a_powers,
        lambda_p,
        lambda_d,
        lambda_w,
    })
}

impl PredictionOperator {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of predicted steps, `N + 2`.
    pub fn steps(&self) -> usize {
        self.horizon + 2
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }

    pub fn a_power(&self, k: usize) -> &DMatrix<f64> {
        &self.a_powers[k]
    }

    /// `C A^k`.
    pub fn c_a_power(&self, k: usize) -> &DMatrix<f64> {
        &self.c_a_powers[k]
    }

    pub fn lambda_p(&self, k: usize, i: usize) -> &DMatrix<f64> {
        &self.lambda_p[k][i]
    }

    pub fn lambda_d(&self, k: usize, i: usize) -> &DMatrix<f64> {
        &self.lambda_d[k][i]
    }

    pub fn lambda_w(&self, k: usize, i: usize) -> &DMatrix<f64> {
        &self.lambda_w[k][i]
    }

    fn check_trajectory(&self, what: &str, traj: &DMatrix<f64>, width: usize) -> Result<()> {
        if traj.nrows() != self.steps() {
            return Err(Error::LengthMismatch {
                what: format!("{what} trajectory rows"),
                expected: self.steps(),
                got: traj.nrows(),
            });
        }
        if traj.ncols() != width {
            return Err(Error::LengthMismatch {
                what: format!("{what} trajectory columns"),
                expected: width,
                got: traj.ncols(),
            });
        }
        Ok(())
    }

    /// Output trajectory with zero heating: `C A^k x0 + sum_i lambda_d(k, i) d_i`.
    pub fn free_response(&self, x0: &DVector<f64>, weather: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x0.len() != self.model.nx() {
            return Err(Error::LengthMismatch {
                what: "initial state".into(),
                expected: self.model.nx(),
                got: x0.len(),
            });
        }
        self.check_trajectory("weather", weather, self.model.nd())?;
        let ny = self.model.ny();
        let mut out = DMatrix::zeros(self.steps(), ny);
        for k in 0..self.steps() {
            let mut y = &self.c_a_powers[k] * x0;
            for i in 0..=k {
                y += &self.lambda_d[k][i] * weather.row(i).transpose();
            }
            out.set_row(k, &y.transpose());
        }
        Ok(out)
    }
}

/// Expected outputs for steps `0..=N+1` given the initial state, weather and powers.
///
/// Trajectories hold one row per timestep.
pub fn predict_nominal(
    op: &PredictionOperator,
    x0: &DVector<f64>,
    weather: &DMatrix<f64>,
    powers: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    op.check_trajectory("power", powers, op.model.np())?;
    let mut out = op.free_response(x0, weather)?;
    for k in 0..op.steps() {
        let mut y = DVector::zeros(op.model.ny());
        for i in 0..=k {
            y += &op.lambda_p[k][i] * powers.row(i).transpose();
        }
        for j in 0..y.len() {
            out[(k, j)] += y[j];
        }
    }
    Ok(out)
}
