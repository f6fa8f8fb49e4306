use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::PriceSeries;
use crate::envelope::{cumulative_energy, fmt_num, FlexibilityEnvelope, PowerLimits};
use crate::error::{Error, Result};
use crate::solver::{solve, ConicProgram, LinExpr, Sense, SolverSettings};

/// Tolerance of the robust bid certificate.
pub const CERTIFICATE_TOL: f64 = 1e-6;

const ROUNDOFF: f64 = 1e-9;

/// Reserve powers per hour and input, with the baseline they were computed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveBid {
    /// `N x Np`, kW.
    pub p_plus: DMatrix<f64>,
    /// `N x Np`, kW.
    pub p_minus: DMatrix<f64>,
    /// `N x Np`, kW.
    pub baseline: DMatrix<f64>,
    pub revenue: f64,
}

impl ReserveBid {
    pub fn horizon(&self) -> usize {
        self.p_plus.nrows()
    }

    /// A bid with no reserves.
    pub fn empty(baseline: DMatrix<f64>) -> Self {
        let (n, np) = baseline.shape();
        Self {
            p_plus: DMatrix::zeros(n, np),
            p_minus: DMatrix::zeros(n, np),
            baseline,
            revenue: 0.0,
        }
    }

    pub fn total_plus(&self, k: usize) -> f64 {
        self.p_plus.row(k).sum()
    }

    pub fn total_minus(&self, k: usize) -> f64 {
        self.p_minus.row(k).sum()
    }

    /// `hour,input,p_plus_kw,p_minus_kw`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["hour", "input", "p_plus_kw", "p_minus_kw"])?;
        for k in 0..self.horizon() {
            for i in 0..self.p_plus.ncols() {
                w.write_record([
                    k.to_string(),
                    i.to_string(),
                    fmt_num(self.p_plus[(k, i)]),
                    fmt_num(self.p_minus[(k, i)]),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Cumulative energy `E[k] = dt sum_{i<k} 1'p_i`, `k = 0..=N`, of an `N x Np` profile.
pub fn cumulative(powers: &DMatrix<f64>, dt: f64) -> Vec<f64> {
    cumulative_energy(powers, powers.nrows(), dt)
}

/// Largest violation of the power limits and energy bounds by a power profile.
fn path_violation(powers: &DMatrix<f64>, env: &FlexibilityEnvelope, limits: &PowerLimits) -> (f64, usize, String) {
    let mut worst = (0.0, 0, String::new());
    let mut note = |v: f64, k: usize, what: &str| {
        if v > worst.0 {
            worst = (v, k, what.to_string());
        }
    };
    for k in 0..powers.nrows() {
        for i in 0..powers.ncols() {
            note(powers[(k, i)] - limits.p_max[i], k, "power above p_max");
            note(limits.p_min[i] - powers[(k, i)], k, "power below p_min");
        }
    }
    let e = cumulative(powers, env.dt);
    for k in 1..e.len() {
        note(e[k] - env.e_up()[k], k, "energy above E_up");
        note(env.e_down()[k] - e[k], k, "energy below E_down");
    }
    worst
}

/// Full upward and full downward activation paths of a bid.
pub fn worst_case_paths(bid: &ReserveBid) -> (DMatrix<f64>, DMatrix<f64>) {
    (&bid.baseline + &bid.p_plus, &bid.baseline - &bid.p_minus)
}

/// Verifies that both worst-case activation paths respect the limits and the envelope.
pub fn verify_bid(bid: &ReserveBid, env: &FlexibilityEnvelope, limits: &PowerLimits, tol: f64) -> Result<()> {
    if bid.p_plus.iter().chain(bid.p_minus.iter()).any(|v| *v < -tol) {
        return Err(Error::invalid("bid", "negative reserve"));
    }
    let (up, down) = worst_case_paths(bid);
    for (name, path) in [("full upward activation", up), ("full downward activation", down)] {
        let (v, k, what) = path_violation(&path, env, limits);
        if v > tol {
            return Err(Error::SolverFailure {
                context: format!("bid certificate, {name}"),
                status: format!("{what} by {v:.3e} at step {k}"),
            });
        }
    }
    Ok(())
}

/// Robust reserve bid: maximises reserve revenue such that full activation in
/// either direction keeps power within limits and energy within the envelope.
///
/// `baseline` holds at least `N` rows of per-input power; only the first `N` are used.
pub fn bid_reserves(
    env: &FlexibilityEnvelope,
    baseline: &DMatrix<f64>,
    prices: &PriceSeries,
    limits: &PowerLimits,
    settings: &SolverSettings,
) -> Result<ReserveBid> {
    let n = env.horizon();
    let np = baseline.ncols();
    let dt = env.dt;
    limits.validate(np)?;
    prices.validate(n)?;
    if baseline.nrows() < n {
        return Err(Error::LengthMismatch {
            what: "baseline".into(),
            expected: n,
            got: baseline.nrows(),
        });
    }
    let pb = baseline.rows(0, n).into_owned();
    let (v, k, what) = path_violation(&pb, env, limits);
    if v > CERTIFICATE_TOL {
        return Err(Error::InfeasibleBaseline {
            step: k,
            detail: format!("{what} by {v:.3e}"),
        });
    }

    let mut prog = ConicProgram::new(Sense::Maximize);
    let up_room = DMatrix::from_fn(n, np, |k, i| (limits.p_max[i] - pb[(k, i)]).max(0.0));
    let down_room = DMatrix::from_fn(n, np, |k, i| (pb[(k, i)] - limits.p_min[i]).max(0.0));
    let mut plus = vec![Vec::with_capacity(np); n];
    let mut minus = vec![Vec::with_capacity(np); n];
    for k in 0..n {
        for i in 0..np {
            plus[k].push(prog.add_named_var(format!("rp_{k}_{i}"), 0.0, up_room[(k, i)], prices.r_plus[k]));
            minus[k].push(prog.add_named_var(format!("rm_{k}_{i}"), 0.0, down_room[(k, i)], prices.r_minus[k]));
        }
    }
    let e_base = cumulative(&pb, dt);
    for k in 1..=n {
        let mut up = LinExpr::default();
        let mut down = LinExpr::default();
        for i in 0..k {
            for j in 0..np {
                up.add_term(plus[i][j], dt);
                down.add_term(minus[i][j], dt);
            }
        }
        prog.add_le(up, (env.e_up()[k] - e_base[k]).max(0.0));
        prog.add_le(down, (e_base[k] - env.e_down()[k]).max(0.0));
    }
    let sol = solve(&prog, settings)?;
    let x = sol.optimal("reserve bid LP")?;
    // interior-point iterates stop slightly inside the bounds
    let value = |v: usize, room: f64| {
        let r = x[v].clamp(0.0, room);
        if r < ROUNDOFF { 0.0 } else { r }
    };
    let p_plus = DMatrix::from_fn(n, np, |k, i| value(plus[k][i], up_room[(k, i)]));
    let p_minus = DMatrix::from_fn(n, np, |k, i| value(minus[k][i], down_room[(k, i)]));
    let revenue = (0..n)
        .map(|k| dt * (prices.r_plus[k] * p_plus.row(k).sum() + prices.r_minus[k] * p_minus.row(k).sum()))
        .sum();
    let bid = ReserveBid {
        p_plus,
        p_minus,
        baseline: pb,
        revenue,
    };
    verify_bid(&bid, env, limits, CERTIFICATE_TOL)?;
    Ok(bid)
}
