use nalgebra::{DMatrix, DVector};

use super::{gaussian_quantile, StackedNoiseBasis};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::PredictionOperator;

/// Quantile multiplier `q(1 - eps)` for a one-sided chance constraint.
///
/// Risk levels above one half would give a negative quantile, which would widen
/// the constraint beyond its deterministic form; those are clamped to zero.
pub fn risk_factor(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("risk level must lie in (0, 1), got {eps}")));
    }
    Ok(gaussian_quantile(1.0 - eps)?.max(0.0))
}

/// Per-room comfort margin at step `k` without feedback.
pub fn margin_no_feedback(basis: &StackedNoiseBasis, k: usize, eps_c: f64) -> Result<DVector<f64>> {
    let q = risk_factor(eps_c)?;
    Ok(linalg::row_norms(basis.y_scaled(k)) * q)
}

/// Per-input power margin at step `k` for feedback gain `m_k` (zero at `k = 0`).
pub fn margin_power(basis: &StackedNoiseBasis, m_k: &DMatrix<f64>, k: usize, eps_t: f64) -> Result<DVector<f64>> {
    let q = risk_factor(eps_t)?;
    if k == 0 {
        return Ok(DVector::zeros(m_k.nrows()));
    }
    check_gain(basis, m_k)?;
    Ok(linalg::row_norms(&(m_k * basis.r_scaled(k - 1))) * q)
}

/// Scaled output-deviation map `G_k Sigma^{1/2}` under the feedback policy `gains = (M_1..M_N)`.
pub fn feedback_output_map(
    basis: &StackedNoiseBasis,
    op: &PredictionOperator,
    gains: &[DMatrix<f64>],
    k: usize,
) -> Result<DMatrix<f64>> {
    if gains.len() != op.horizon() {
        return Err(Error::LengthMismatch {
            what: "feedback gains".into(),
            expected: op.horizon(),
            got: gains.len(),
        });
    }
    let mut g = basis.y_scaled(k).clone();
    for i in 1..=k.min(op.horizon()) {
        let m = &gains[i - 1];
        check_gain(basis, m)?;
        g += op.lambda_p(k, i) * (m * basis.r_scaled(i - 1));
    }
    Ok(g)
}

/// Per-room comfort margin at step `k` when power follows `p_i + M_i r~_{i-1}`.
pub fn margin_output_with_feedback(
    basis: &StackedNoiseBasis,
    op: &PredictionOperator,
    gains: &[DMatrix<f64>],
    k: usize,
    eps_c: f64,
) -> Result<DVector<f64>> {
    let q = risk_factor(eps_c)?;
    Ok(linalg::row_norms(&feedback_output_map(basis, op, gains, k)?) * q)
}

fn check_gain(basis: &StackedNoiseBasis, m: &DMatrix<f64>) -> Result<()> {
    let layout = basis.layout();
    if m.ncols() != layout.nd + layout.ny {
        return Err(Error::DimensionMismatch(format!(
            "feedback gain has {} columns, expected Nd+Ny = {}",
            m.ncols(),
            layout.nd + layout.ny
        )));
    }
    Ok(())
}

/// All safety margins over the horizon, one row per step `0..=N+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyMargins {
    /// Comfort margins without feedback (steps x Ny).
    pub s_ua: DMatrix<f64>,
    /// Power margins (steps x Np); zero without a policy and at `k = 0` and `k = N+1`.
    pub s_p: DMatrix<f64>,
    /// Comfort margins with feedback (steps x Ny); equal to `s_ua` without a policy.
    pub s_c: DMatrix<f64>,
}

impl SafetyMargins {
    pub fn compute(
        basis: &StackedNoiseBasis,
        op: &PredictionOperator,
        gains: Option<&[DMatrix<f64>]>,
        eps_c: f64,
        eps_t: f64,
    ) -> Result<Self> {
        let steps = op.steps();
        let n = op.horizon();
        let (ny, np) = (op.model().ny(), op.model().np());
        let mut s_ua = DMatrix::zeros(steps, ny);
        let mut s_p = DMatrix::zeros(steps, np);
        let mut s_c = DMatrix::zeros(steps, ny);
        for k in 0..steps {
            let ua = margin_no_feedback(basis, k, eps_c)?;
            s_ua.set_row(k, &ua.transpose());
            match gains {
                Some(m) => {
                    let c = margin_output_with_feedback(basis, op, m, k, eps_c)?;
                    s_c.set_row(k, &c.transpose());
                    if (1..=n).contains(&k) {
                        let p = margin_power(basis, &m[k - 1], k, eps_t)?;
                        s_p.set_row(k, &p.transpose());
                    }
                }
                None => s_c.set_row(k, &ua.transpose()),
            }
        }
        Ok(Self { s_ua, s_p, s_c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_prediction_matrices, generate_synthetic_building, tests::scalar_model, NoiseSpec};
    use crate::uncertainty::WeatherErrorModel;

    fn scalar_basis(var: f64) -> (PredictionOperator, StackedNoiseBasis) {
        let op = build_prediction_matrices(&scalar_model(0.5), 3).unwrap();
        let noise = NoiseSpec {
            sigma_w: DMatrix::zeros(1, 1),
            sigma_v: DMatrix::from_element(1, 1, var),
        };
        let basis = StackedNoiseBasis::build(&op, &noise, &WeatherErrorModel::zero(1)).unwrap();
        (op, basis)
    }

    #[test]
    fn margin_from_variance_and_quantile() {
        let (_, basis) = scalar_basis(0.25);
        let s = margin_no_feedback(&basis, 0, 0.2).unwrap();
        assert!((s[0] - 0.5 * 0.841_621_233_572_914_3).abs() < 1e-9);
        assert!((s[0] - 0.42081).abs() < 1e-5);
    }

    #[test]
    fn half_risk_gives_zero_margin() {
        let (_, basis) = scalar_basis(0.25);
        assert_eq!(margin_no_feedback(&basis, 2, 0.5).unwrap()[0], 0.0);
        assert_eq!(margin_no_feedback(&basis, 2, 0.7).unwrap()[0], 0.0);
    }

    #[test]
    fn invalid_risk_level_is_rejected() {
        let (_, basis) = scalar_basis(0.25);
        assert!(margin_no_feedback(&basis, 0, 0.0).is_err());
        assert!(margin_no_feedback(&basis, 0, 1.5).is_err());
    }

    #[test]
    fn power_margin_scalar_product() {
        // measurement noise only: Var(r~_{k-1}) = Var(e~_{k-1}) = 4, M = [0, 1] on [d~; e~]
        let (_, basis) = scalar_basis(4.0);
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let q = gaussian_quantile(0.95).unwrap();
        assert!((margin_power(&basis, &m, 2, 0.05).unwrap()[0] - 2.0 * q).abs() < 1e-12);
        assert_eq!(margin_power(&basis, &m, 0, 0.05).unwrap()[0], 0.0);
        let doubled = margin_power(&basis, &(m * 2.0), 2, 0.05).unwrap()[0];
        assert!((doubled - 4.0 * q).abs() < 1e-12);
    }

    #[test]
    fn zero_policy_reduces_to_no_feedback() {
        let (model, noise) = generate_synthetic_building(3, 3, 1.0);
        let op = build_prediction_matrices(&model, 24).unwrap();
        let basis = StackedNoiseBasis::build(&op, &noise, &WeatherErrorModel::synthetic()).unwrap();
        let gains = vec![DMatrix::zeros(3, 5); 24];
        for k in 0..op.steps() {
            let a = margin_no_feedback(&basis, k, 0.2).unwrap();
            let b = margin_output_with_feedback(&basis, &op, &gains, k, 0.2).unwrap();
            assert!((a - b).amax() <= 1e-12);
        }
    }
}
