use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lp::Skeleton;
use super::{cumulative_energy, EnvelopeContext, FlexibilityEnvelope, Formulation};
use crate::error::{Error, Result};
use crate::solver::{solve, ConicProgram, LinExpr, Sense};
use crate::uncertainty::SafetyMargins;

/// Day-ahead power schedule from which flexibility is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    /// `(N+2) x Np`; the last row is zero.
    pub powers: DMatrix<f64>,
    /// Cumulative energy, `k = 0..=N`.
    pub energy: Vec<f64>,
    /// Day-ahead energy cost of the schedule.
    pub cost: f64,
    /// Total comfort slack used.
    pub slack: f64,
}

/// Minimum day-ahead-cost schedule satisfying the comfort band.
///
/// The band is tightened by the no-feedback chance-constraint margins unless
/// `envelope` is an uncertainty-ignorant envelope, in which case the nominal
/// band is used. When `envelope` is given the cumulative energy is also kept
/// inside it. `prices[k]` applies to step `k`; steps beyond the series reuse
/// its last value.
pub fn compute_baseline(
    ctx: &EnvelopeContext<'_>,
    prices: &[f64],
    envelope: Option<&FlexibilityEnvelope>,
) -> Result<Baseline> {
    ctx.validate()?;
    if prices.is_empty() {
        return Err(Error::invalid("prices", "price series is empty"));
    }
    let n = ctx.horizon();
    let dt = ctx.op.model().dt;
    let mut margins = SafetyMargins::compute(ctx.basis, ctx.op, None, ctx.comfort.eps_c, ctx.comfort.eps_t)?;
    if envelope.is_some_and(|e| e.formulation == Formulation::Ui) {
        margins.s_ua.fill(0.0);
        margins.s_p.fill(0.0);
    }
    let price = |k: usize| prices[k.min(prices.len() - 1)];

    let started = Instant::now();
    let mut prog = ConicProgram::new(Sense::Minimize);
    let sk = Skeleton::new(&mut prog, ctx, &margins.s_p, |k| price(k) * dt, ctx.spec.lambda)?;
    sk.add_comfort(&mut prog, ctx, &margins.s_ua);
    if let Some(env) = envelope {
        if env.horizon() != n {
            return Err(Error::invalid("envelope", "envelope horizon differs from the problem horizon"));
        }
        for k in 1..=n {
            let mut e = LinExpr::default();
            for i in 0..k {
                for &v in &sk.p[i] {
                    e.add_term(v, dt);
                }
            }
            prog.add_le(e.clone(), env.e_up()[k]);
            prog.add_ge(e, env.e_down()[k]);
        }
    }
    let sol = solve(&prog, &ctx.solver)?;
    let x = sol.optimal("baseline LP")?;
    let out = sk.extract(ctx, crate::policies::Direction::Down, x, sol.objective, started);
    let cost = (0..=n).map(|k| price(k) * dt * out.powers.row(k).sum()).sum();
    Ok(Baseline {
        energy: cumulative_energy(&out.powers, n, dt),
        slack: out.total_slack(),
        powers: out.powers,
        cost,
    })
}
