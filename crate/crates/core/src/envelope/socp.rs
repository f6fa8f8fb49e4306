//! Second-order-cone program for the envelope with optimised affine feedback.
//!
//! With `Q_k = M_k R_{k-1}` (scaled disturbance map) the feedback part of the
//! output deviation follows the state recursion
//!
//! ```text
//! X_0 = 0,  X_{k+1} = A X_k + B_p Q_k,  Yfb_k = C X_k + D_p Q_k,
//! ```
//!
//! so the comfort standard deviation of room `j` at step `k` is
//! `|| Y_k[j, :] + Yfb_k[j, :] ||` and the power standard deviation of input `i`
//! is `|| Q_k[i, :] ||`. Only columns of the noise basis that can have been
//! observed before step `k` appear in `Q_k`, which keeps the program causal.

use std::time::Instant;

use nalgebra::DMatrix;

use super::lp::{sense_and_slack_cost, Skeleton};
use super::{BoundSolution, EnvelopeContext};
use crate::error::{Error, Result};
use crate::policies::{AffinePolicy, Direction};
use crate::solver::{solve, ConicProgram, LinExpr, Var};
use crate::uncertainty::risk_factor;

/// Box bound on every feedback gain entry, keeping directions that do not
/// influence the objective from drifting.
pub const GAIN_BOUND: f64 = 1e3;

fn nonzero_columns(m: &DMatrix<f64>, allowed: &[bool]) -> Vec<bool> {
    (0..m.ncols())
        .map(|c| allowed[c] && m.column(c).iter().any(|v| *v != 0.0))
        .collect()
}

pub(super) fn solve_bound(ctx: &EnvelopeContext<'_>, direction: Direction) -> Result<BoundSolution> {
    let started = Instant::now();
    let model = ctx.op.model();
    let basis = ctx.basis;
    let (nx, ny, nd, np) = (model.nx(), model.ny(), model.nd(), model.np());
    let nr = nd + ny;
    let n = ctx.horizon();
    let steps = ctx.steps();
    let dim = basis.dim();
    let q_c = risk_factor(ctx.comfort.eps_c)?;
    let q_t = risk_factor(ctx.comfort.eps_t)?;
    if q_t == 0.0 {
        return Err(Error::invalid("eps_t", "optimised feedback needs eps_t < 0.5"));
    }

    let (sense, slack_cost) = sense_and_slack_cost(direction, ctx.spec.lambda);
    let mut prog = ConicProgram::new(sense);
    let spec = *ctx.spec;
    let zero_p = DMatrix::zeros(steps, np);
    let sk = Skeleton::new(&mut prog, ctx, &zero_p, |k| spec.omega(k), slack_cost)?;

    let active: Vec<bool> = (0..dim)
        .map(|c| basis.sigma_half().column(c).iter().any(|v| *v != 0.0))
        .collect();

    // gains and lifted Q_k = M_k R_{k-1}, k = 1..=N
    let mut gains: Vec<Vec<Vec<Option<Var>>>> = vec![vec![vec![None; nr]; np]; n + 1];
    let mut q_vars: Vec<Vec<Vec<Option<Var>>>> = vec![vec![vec![None; dim]; np]; n + 2];
    for k in 1..=n {
        let r = basis.r_scaled(k - 1);
        let cols = nonzero_columns(r, &active);
        let rows_used: Vec<bool> = (0..nr).map(|m| (0..dim).any(|c| cols[c] && r[(m, c)] != 0.0)).collect();
        for p in 0..np {
            for m in 0..nr {
                if rows_used[m] {
                    gains[k][p][m] = Some(prog.add_named_var(format!("M_{k}_{p}_{m}"), -GAIN_BOUND, GAIN_BOUND, 0.0));
                }
            }
            for c in (0..dim).filter(|&c| cols[c]) {
                let qv = prog.free_var();
                let mut eq = LinExpr::var(qv);
                for m in 0..nr {
                    if let Some(g) = gains[k][p][m] {
                        eq.add_term(g, -r[(m, c)]);
                    }
                }
                prog.add_eq(eq, 0.0);
                q_vars[k][p][c] = Some(qv);
            }
        }
    }

    // feedback state X_k, k = 2..=N+1 (X_0 = X_1 = 0 since Q_0 = 0)
    let mut x_vars: Vec<Vec<Vec<Option<Var>>>> = vec![vec![vec![None; dim]; nx]; n + 2];
    for k in 2..=n + 1 {
        for c in 0..dim {
            let feeds = (0..np).any(|p| q_vars[k - 1][p][c].is_some()) || (0..nx).any(|x| x_vars[k - 1][x][c].is_some());
            if !feeds {
                continue;
            }
            for x in 0..nx {
                let xv = prog.free_var();
                let mut eq = LinExpr::var(xv);
                for xp in 0..nx {
                    if let Some(prev) = x_vars[k - 1][xp][c] {
                        eq.add_term(prev, -model.a[(x, xp)]);
                    }
                }
                for p in 0..np {
                    if let Some(q) = q_vars[k - 1][p][c] {
                        eq.add_term(q, -model.b_p[(x, p)]);
                    }
                }
                prog.add_eq(eq, 0.0);
                x_vars[k][x][c] = Some(xv);
            }
        }
    }

    // power chance constraints
    for k in 1..=n {
        for p in 0..np {
            let entries: Vec<LinExpr> = (0..dim).filter_map(|c| q_vars[k][p][c].map(LinExpr::var)).collect();
            if entries.is_empty() {
                continue;
            }
            let s = prog.add_named_var(format!("sp_{k}_{p}"), 0.0, f64::INFINITY, 0.0);
            prog.add_soc(LinExpr::var(s), entries);
            let pk = sk.p[k][p];
            prog.add_le(LinExpr::var(pk).term(s, q_t), ctx.limits.p_max[p]);
            prog.add_ge(LinExpr::var(pk).term(s, -q_t), ctx.limits.p_min[p]);
        }
    }

    // comfort chance constraints
    for k in 0..steps {
        let y = basis.y_scaled(k);
        for j in 0..ny {
            let mut entries = Vec::new();
            for c in (0..dim).filter(|&c| active[c]) {
                let mut e = LinExpr::constant(y[(j, c)]);
                for x in 0..nx {
                    if let Some(v) = x_vars[k][x][c] {
                        e.add_term(v, model.c[(j, x)]);
                    }
                }
                for p in 0..np {
                    if let Some(v) = q_vars[k][p][c] {
                        e.add_term(v, model.d_p[(j, p)]);
                    }
                }
                if e.constant != 0.0 || !e.terms.is_empty() {
                    entries.push(e);
                }
            }
            let ybar = sk.nominal_output(ctx, k, j);
            let mut upper = ybar.clone();
            upper.add_term(sk.above[k][j], -1.0);
            let mut lower = ybar;
            lower.add_term(sk.below[k][j], 1.0);
            if !entries.is_empty() && q_c > 0.0 {
                let sigma = prog.add_named_var(format!("sc_{k}_{j}"), 0.0, f64::INFINITY, 0.0);
                prog.add_soc(LinExpr::var(sigma), entries);
                upper.add_term(sigma, q_c);
                lower.add_term(sigma, -q_c);
            }
            prog.add_le(upper, ctx.comfort.t_max[j]);
            prog.add_ge(lower, ctx.comfort.t_min[j]);
        }
    }

    let sol = solve(&prog, &ctx.solver)?;
    let x = sol.optimal(&format!("{} envelope bound SOCP", direction.as_str()))?;
    let mut out = sk.extract(ctx, direction, x, sol.objective, started);
    let policy_gains = (1..=n)
        .map(|k| DMatrix::from_fn(np, nr, |p, m| gains[k][p][m].map_or(0.0, |v| x[v])))
        .collect();
    out.policy = Some(AffinePolicy {
        gains: policy_gains,
        anchor_hour: 0,
        direction,
    });
    log::debug!(
        "{} SOCP: {} vars, {} rows, {} cones, {:.2}s",
        direction.as_str(),
        prog.num_vars(),
        prog.rows.len(),
        prog.cones.len(),
        out.solve_time
    );
    Ok(out)
}
