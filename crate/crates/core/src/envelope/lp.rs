use std::time::Instant;

use nalgebra::DMatrix;

use super::{cumulative_energy, BoundSolution, EnvelopeContext};
use crate::error::Result;
use crate::policies::Direction;
use crate::solver::{solve, ConicProgram, LinExpr, Sense, Var};

/// Decision variables shared by every envelope-type program.
pub(super) struct Skeleton {
    /// `p[k][i]`, `k = 0..=N+1`.
    pub p: Vec<Vec<Var>>,
    /// `gamma+[k][j]` and `gamma-[k][j]`, `k = 0..=N+1`.
    pub above: Vec<Vec<Var>>,
    pub below: Vec<Vec<Var>>,
    pub free: DMatrix<f64>,
}

impl Skeleton {
    /// Powers bounded by the limits tightened by `s_p`, terminal power fixed at zero,
    /// and nonnegative comfort slacks costing `slack_cost` each.
    pub fn new(
        prog: &mut ConicProgram,
        ctx: &EnvelopeContext<'_>,
        s_p: &DMatrix<f64>,
        power_cost: impl Fn(usize) -> f64,
        slack_cost: f64,
    ) -> Result<Self> {
        let model = ctx.op.model();
        let (np, ny) = (model.np(), model.ny());
        let n = ctx.horizon();
        let mut p = Vec::with_capacity(n + 2);
        for k in 0..=n + 1 {
            let row = (0..np)
                .map(|i| {
                    if k == n + 1 {
                        return prog.add_named_var(format!("p_{k}_{i}"), 0.0, 0.0, 0.0);
                    }
                    let mut lo = ctx.limits.p_min[i] + s_p[(k, i)];
                    let mut hi = ctx.limits.p_max[i] - s_p[(k, i)];
                    if lo > hi {
                        let mid = 0.5 * (lo + hi);
                        lo = mid;
                        hi = mid;
                    }
                    prog.add_named_var(format!("p_{k}_{i}"), lo, hi, power_cost(k))
                })
                .collect();
            p.push(row);
        }
        let mut slacks = |tag: &str| -> Vec<Vec<Var>> {
            (0..=n + 1)
                .map(|k| {
                    (0..ny)
                        .map(|j| prog.add_named_var(format!("g{tag}_{k}_{j}"), 0.0, f64::INFINITY, slack_cost))
                        .collect()
                })
                .collect()
        };
        let above = slacks("p");
        let below = slacks("m");
        Ok(Self {
            p,
            above,
            below,
            free: ctx.free_response()?,
        })
    }

    /// Nominal output `y_bar[k][j]` as an affine expression of the powers.
    pub fn nominal_output(&self, ctx: &EnvelopeContext<'_>, k: usize, j: usize) -> LinExpr {
        let mut e = LinExpr::constant(self.free[(k, j)]);
        for i in 0..=k {
            let lam = ctx.op.lambda_p(k, i);
            for (pi, &var) in self.p[i].iter().enumerate() {
                e.add_term(var, lam[(j, pi)]);
            }
        }
        e
    }

    /// Soft comfort band tightened by `margin(k, j)` on both sides.
    pub fn add_comfort(&self, prog: &mut ConicProgram, ctx: &EnvelopeContext<'_>, s_c: &DMatrix<f64>) {
        for k in 0..ctx.steps() {
            for j in 0..ctx.op.model().ny() {
                let y = self.nominal_output(ctx, k, j);
                let mut upper = y.clone();
                upper.add_term(self.above[k][j], -1.0);
                prog.add_le(upper, ctx.comfort.t_max[j] - s_c[(k, j)]);
                let mut lower = y;
                lower.add_term(self.below[k][j], 1.0);
                prog.add_ge(lower, ctx.comfort.t_min[j] + s_c[(k, j)]);
            }
        }
    }

    pub fn extract(
        &self,
        ctx: &EnvelopeContext<'_>,
        direction: Direction,
        x: &[f64],
        objective: f64,
        started: Instant,
    ) -> BoundSolution {
        let value = |v: Var| x[v];
        let powers = DMatrix::from_fn(self.p.len(), self.p[0].len(), |k, i| value(self.p[k][i]));
        let slack = |s: &Vec<Vec<Var>>| DMatrix::from_fn(s.len(), s[0].len(), |k, j| value(s[k][j]).max(0.0));
        let energy = cumulative_energy(&powers, ctx.horizon(), ctx.op.model().dt);
        BoundSolution {
            direction,
            slack_above: slack(&self.above),
            slack_below: slack(&self.below),
            powers,
            objective,
            energy,
            policy: None,
            solve_time: started.elapsed().as_secs_f64(),
        }
    }
}

pub(super) fn sense_and_slack_cost(direction: Direction, lambda: f64) -> (Sense, f64) {
    match direction {
        Direction::Up => (Sense::Maximize, -lambda),
        Direction::Down => (Sense::Minimize, lambda),
    }
}

/// One bound of the UI / UA / UAF-fixed linear program with the given margins.
pub(super) fn solve_bound(
    ctx: &EnvelopeContext<'_>,
    direction: Direction,
    s_c: &DMatrix<f64>,
    s_p: &DMatrix<f64>,
) -> Result<BoundSolution> {
    let started = Instant::now();
    let (sense, slack_cost) = sense_and_slack_cost(direction, ctx.spec.lambda);
    let mut prog = ConicProgram::new(sense);
    let spec = *ctx.spec;
    let sk = Skeleton::new(&mut prog, ctx, s_p, |k| spec.omega(k), slack_cost)?;
    sk.add_comfort(&mut prog, ctx, s_c);
    let sol = solve(&prog, &ctx.solver)?;
    let x = sol.optimal(&format!("{} envelope bound LP", direction.as_str()))?;
    Ok(sk.extract(ctx, direction, x, sol.objective, started))
}
