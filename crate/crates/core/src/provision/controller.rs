use nalgebra::{DMatrix, DVector};

use super::{ScenarioConfig, ScenarioMode};
use crate::envelope::{ComfortSpec, PowerLimits};
use crate::error::{Error, Result};
use crate::model::PredictionOperator;
use crate::solver::{solve, ConicProgram, LinExpr, Sense, SolverSettings, Var};

/// Deviations below this (kW) are solver residue.
const ROUNDOFF: f64 = 1e-6;

/// Data of one receding-horizon adaptation problem over the `N_r` remaining steps.
///
/// Row `j` of every trajectory refers to step `t + j`. Trajectories that reach
/// the output at the end of the day carry one extra terminal row that is not adapted.
#[derive(Debug, Clone)]
pub struct ControllerInput<'a> {
    pub op: &'a PredictionOperator,
    /// Current state estimate.
    pub x_hat: DVector<f64>,
    /// Expected weather, `(N_r + 1) x Nd`.
    pub weather: DMatrix<f64>,
    /// Initial baseline, `(N_r + 1) x Np`.
    pub baseline: DMatrix<f64>,
    /// Reserved upward and downward power, `N_r x Np`.
    pub reserve_up: DMatrix<f64>,
    pub reserve_down: DMatrix<f64>,
    /// Price of increasing and of decreasing the baseline (per kWh of electricity), `N_r` each.
    pub price_plus: Vec<f64>,
    pub price_minus: Vec<f64>,
    pub comfort: &'a ComfortSpec,
    pub limits: &'a PowerLimits,
}

impl ControllerInput<'_> {
    pub fn remaining(&self) -> usize {
        self.reserve_up.nrows()
    }

    /// True when any reserve is held at relative step `j`.
    pub fn reserved(&self, j: usize) -> bool {
        self.reserve_up.row(j).sum() + self.reserve_down.row(j).sum() > 0.0
    }

    fn validate(&self) -> Result<()> {
        let model = self.op.model();
        let n_r = self.remaining();
        if n_r == 0 {
            return Err(Error::invalid("horizon", "no remaining steps to adapt"));
        }
        if n_r > self.op.horizon() {
            return Err(Error::invalid("horizon", "remaining steps exceed the prediction horizon"));
        }
        let shapes = [
            ("weather", &self.weather, n_r + 1, model.nd()),
            ("baseline", &self.baseline, n_r + 1, model.np()),
            ("upward reserve", &self.reserve_up, n_r, model.np()),
            ("downward reserve", &self.reserve_down, n_r, model.np()),
        ];
        for (what, m, r, c) in shapes {
            if m.shape() != (r, c) {
                return Err(Error::ShapeMismatch(format!("{what} is {:?}, expected ({r}, {c})", m.shape())));
            }
        }
        if self.price_plus.len() != n_r || self.price_minus.len() != n_r {
            return Err(Error::LengthMismatch {
                what: "adaptation prices".into(),
                expected: n_r,
                got: self.price_plus.len().min(self.price_minus.len()),
            });
        }
        Ok(())
    }
}

/// Solution of the adaptation problem; only the first row is committed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationPlan {
    /// Signed baseline deviation, `N_r x Np`.
    pub delta: DMatrix<f64>,
    /// Provision default allowed at reserved steps (rebound mode), `N_r x Np`.
    pub beta: DMatrix<f64>,
    /// Total comfort slack over both worst-case activation paths (degC x steps).
    pub comfort_slack: f64,
    pub objective: f64,
}

impl AdaptationPlan {
    pub fn first(&self) -> DVector<f64> {
        self.delta.row(0).transpose()
    }
}

/// Cheapest baseline deviation that keeps both full-activation paths comfortable.
///
/// The deviation is split into nonnegative increases and decreases priced at
/// `price_plus` and `price_minus`. Both the path with every upward reserve
/// activated and the path with every downward reserve activated must respect
/// the power limits; their predicted temperatures may leave the comfort band
/// only through slack penalised with `lambda_comfort`. In rebound mode a
/// deviation at a reserved step additionally costs `alpha_flex` per kW, and the
/// strict variant forbids it.
pub fn plan_adaptation(
    input: &ControllerInput<'_>,
    cfg: &ScenarioConfig,
    settings: &SolverSettings,
) -> Result<AdaptationPlan> {
    input.validate()?;
    let op = input.op;
    let model = op.model();
    let (ny, np) = (model.ny(), model.np());
    let n_r = input.remaining();
    let dt = model.dt;

    let mut prog = ConicProgram::new(Sense::Minimize);
    let mut inc: Vec<Vec<Var>> = Vec::with_capacity(n_r);
    let mut dec: Vec<Vec<Var>> = Vec::with_capacity(n_r);
    let mut beta: Vec<Vec<Option<Var>>> = Vec::with_capacity(n_r);
    let frozen: Vec<bool> = (0..n_r)
        .map(|j| cfg.mode == ScenarioMode::ReboundStrict && input.reserved(j))
        .collect();
    for j in 0..n_r {
        let frozen = frozen[j];
        let cap = if frozen { 0.0 } else { f64::INFINITY };
        let mut row_inc = Vec::with_capacity(np);
        let mut row_dec = Vec::with_capacity(np);
        let mut row_beta = Vec::with_capacity(np);
        for i in 0..np {
            let up = prog.add_named_var(format!("dp_plus_{j}_{i}"), 0.0, cap, input.price_plus[j] * dt / cfg.cop);
            let down = prog.add_named_var(format!("dp_minus_{j}_{i}"), 0.0, cap, input.price_minus[j] * dt / cfg.cop);
            let b = if cfg.mode == ScenarioMode::Rebound && input.reserved(j) {
                let b = prog.add_named_var(format!("beta_{j}_{i}"), 0.0, f64::INFINITY, cfg.alpha_flex);
                prog.add_le(LinExpr::var(up).term(down, -1.0).term(b, -1.0), 0.0);
                prog.add_ge(LinExpr::var(up).term(down, -1.0).term(b, 1.0), 0.0);
                Some(b)
            } else {
                None
            };
            if !frozen {
                let base = input.baseline[(j, i)];
                let mut lo = input.limits.p_min[i] - base + input.reserve_down[(j, i)];
                let mut hi = input.limits.p_max[i] - base - input.reserve_up[(j, i)];
                if lo > hi {
                    let mid = 0.5 * (lo + hi);
                    lo = mid;
                    hi = mid;
                }
                let delta = LinExpr::var(up).term(down, -1.0);
                prog.add_ge(delta.clone(), lo);
                prog.add_le(delta, hi);
            }
            row_inc.push(up);
            row_dec.push(down);
            row_beta.push(b);
        }
        inc.push(row_inc);
        dec.push(row_dec);
        beta.push(row_beta);
    }

    // free response of the remaining day from the current estimate
    let mut free = DMatrix::zeros(n_r + 1, ny);
    for j in 0..=n_r {
        let mut y = op.c_a_power(j) * &input.x_hat;
        for i in 0..=j {
            y += op.lambda_d(j, i) * input.weather.row(i).transpose();
        }
        free.set_row(j, &y.transpose());
    }
    let mut slacks = Vec::new();
    for sign in [1.0, -1.0] {
        let reserve = if sign > 0.0 { &input.reserve_up } else { &input.reserve_down };
        for j in 0..=n_r {
            let mut nominal = free.row(j).transpose();
            for i in 0..=j {
                let mut p = input.baseline.row(i).transpose();
                if i < n_r {
                    p += reserve.row(i).transpose() * sign;
                }
                nominal += op.lambda_p(j, i) * p;
            }
            for r in 0..ny {
                let mut e = LinExpr::constant(nominal[r]);
                for i in 0..=j.min(n_r - 1) {
                    let lp = op.lambda_p(j, i);
                    for q in 0..np {
                        let c = lp[(r, q)];
                        e.add_term(inc[i][q], c);
                        e.add_term(dec[i][q], -c);
                    }
                }
                let above = prog.add_var(0.0, f64::INFINITY, cfg.lambda_comfort);
                let below = prog.add_var(0.0, f64::INFINITY, cfg.lambda_comfort);
                let mut hi = e.clone();
                hi.add_term(above, -1.0);
                prog.add_le(hi, input.comfort.t_max[r]);
                let mut lo = e;
                lo.add_term(below, 1.0);
                prog.add_ge(lo, input.comfort.t_min[r]);
                slacks.push(above);
                slacks.push(below);
            }
        }
    }

    let sol = solve(&prog, settings)?;
    let x = sol.optimal("baseline adaptation LP")?;
    let clean = |v: f64| if v.abs() < ROUNDOFF { 0.0 } else { v };
    let delta = DMatrix::from_fn(n_r, np, |j, i| {
        if frozen[j] {
            0.0
        } else {
            clean(x[inc[j][i]] - x[dec[j][i]])
        }
    });
    let beta = DMatrix::from_fn(n_r, np, |j, i| beta[j][i].map_or(0.0, |b| clean(x[b]).max(0.0)));
    Ok(AdaptationPlan {
        delta,
        beta,
        comfort_slack: slacks.iter().map(|&s| x[s].max(0.0)).sum(),
        objective: sol.objective,
    })
}
