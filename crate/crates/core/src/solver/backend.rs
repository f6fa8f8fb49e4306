use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SecondOrderConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};

use super::{ConicProgram, LinExpr, RowKind, Sense, Solution, SolveStats, SolveStatus, SolverSettings};
use crate::error::{Error, Result};

/// Rows of `A x + s = b` in one cone, accumulated as triplets.
#[derive(Default)]
struct Block {
    rows: usize,
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Block {
    /// Appends the row `s = b - a x` where `s` must lie in the block's cone.
    fn push(&mut self, coefs: &[(usize, f64)], sign: f64, b: f64) {
        for &(col, c) in coefs {
            self.i.push(self.rows);
            self.j.push(col);
            self.v.push(sign * c);
        }
        self.b.push(b);
        self.rows += 1;
    }

    /// Row enforcing `expr >= 0` in a nonnegative or cone block: `s = expr`.
    fn push_expr(&mut self, e: &LinExpr) {
        self.push(&e.terms, -1.0, e.constant);
    }
}

struct Assembled {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

fn assemble(program: &ConicProgram) -> Assembled {
    let n = program.num_vars();
    let mut zero = Block::default();
    let mut nonneg = Block::default();
    for (idx, var) in program.variables.iter().enumerate() {
        if var.lower == var.upper {
            zero.push(&[(idx, 1.0)], 1.0, var.lower);
            continue;
        }
        if var.upper.is_finite() {
            nonneg.push(&[(idx, 1.0)], 1.0, var.upper);
        }
        if var.lower.is_finite() {
            nonneg.push(&[(idx, 1.0)], -1.0, -var.lower);
        }
    }
    for row in &program.rows {
        let rhs = row.rhs - row.expr.constant;
        match row.kind {
            RowKind::Eq => zero.push(&row.expr.terms, 1.0, rhs),
            RowKind::Le => nonneg.push(&row.expr.terms, 1.0, rhs),
            RowKind::Ge => nonneg.push(&row.expr.terms, -1.0, -rhs),
        }
    }
    let mut socs = Block::default();
    let mut cone_sizes = Vec::with_capacity(program.cones.len());
    for cone in &program.cones {
        socs.push_expr(&cone.bound);
        for e in &cone.vector {
            socs.push_expr(e);
        }
        cone_sizes.push(cone.vector.len() + 1);
    }

    let mut ii = Vec::new();
    let mut jj = Vec::new();
    let mut vv = Vec::new();
    let mut b = Vec::new();
    let mut offset = 0;
    for blk in [&zero, &nonneg, &socs] {
        ii.extend(blk.i.iter().map(|r| r + offset));
        jj.extend_from_slice(&blk.j);
        vv.extend_from_slice(&blk.v);
        b.extend_from_slice(&blk.b);
        offset += blk.rows;
    }
    let a = CscMatrix::new_from_triplets(offset, n, ii, jj, vv);

    let mut cones = Vec::new();
    if zero.rows > 0 {
        cones.push(ZeroConeT(zero.rows));
    }
    if nonneg.rows > 0 {
        cones.push(NonnegativeConeT(nonneg.rows));
    }
    for size in cone_sizes {
        cones.push(SecondOrderConeT(size));
    }

    let sign = match program.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let q = program.variables.iter().map(|v| sign * v.cost).collect();
    Assembled { a, b, q, cones }
}

fn run(program: &ConicProgram, asm: &Assembled, tol: f64, max_iter: u32) -> Result<(SolverStatus, Vec<f64>, u32, f64)> {
    let n = program.num_vars();
    let p = CscMatrix::zeros((n, n));
    let settings = DefaultSettings {
        verbose: false,
        max_iter,
        tol_gap_abs: tol,
        tol_gap_rel: tol,
        tol_feas: tol,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &asm.q, &asm.a, &asm.b, &asm.cones, settings).map_err(|e| {
        Error::SolverFailure {
            context: "problem setup".into(),
            status: format!("{e:?}"),
        }
    })?;
    solver.solve();
    let sol = &solver.solution;
    Ok((sol.status, sol.x.clone(), sol.iterations, sol.solve_time))
}

fn classify(status: SolverStatus, relaxed: bool) -> SolveStatus {
    match status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved if relaxed => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    }
}

/// Solves a program. A numerical failure triggers one retry at the relaxed tolerance.
///
/// Only malformed programs return `Err`; infeasibility and solver trouble are
/// reported through [`Solution::status`].
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<Solution> {
    program.validate()?;
    let asm = assemble(program);
    let (mut status, mut x, mut iterations, mut time) = run(program, &asm, settings.tolerance, settings.max_iterations)?;
    let mut relaxed = false;
    if classify(status, false) == SolveStatus::NumericalFailure {
        log::debug!("solver returned {status:?}; retrying at tolerance {}", settings.relaxed_tolerance);
        let retry = run(program, &asm, settings.relaxed_tolerance, settings.max_iterations)?;
        (status, x, iterations, time) = (retry.0, retry.1, iterations + retry.2, time + retry.3);
        relaxed = true;
    }
    let result = classify(status, relaxed);
    let optimal = result == SolveStatus::Optimal;
    let objective = if optimal {
        program.objective_value(&x)
    } else {
        f64::NAN
    };
    let primal_residual = if optimal { program.primal_residual(&x) } else { f64::NAN };
    Ok(Solution {
        status: result,
        x: optimal.then_some(x),
        objective,
        stats: SolveStats {
            iterations,
            solve_time: time,
            primal_residual,
            relaxed,
        },
    })
}
