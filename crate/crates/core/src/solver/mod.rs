//! Solver-agnostic linear and second-order-cone programs.
//!
//! A [`ConicProgram`] collects variables with bounds and objective coefficients,
//! linear rows and cone constraints `||v(x)|| <= t(x)` with affine `v` and `t`.
//! Programs without cones are plain LPs. [`solve`] hands the program to the
//! Clarabel interior-point solver.

mod backend;
mod lp_format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backend::solve;

/// Index of a decision variable.
pub type Var = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Affine expression `sum_i c_i x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: Var) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, v: Var, coef: f64) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn add_term(&mut self, v: Var, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + self.constant
    }

    /// Largest absolute coefficient, at least one.
    fn scale(&self) -> f64 {
        self.terms.iter().fold(1.0f64, |m, &(_, c)| m.max(c.abs()))
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::var(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
    Ge,
}

/// Linear row `expr (=|<=|>=) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub expr: LinExpr,
    pub kind: RowKind,
    pub rhs: f64,
    pub name: Option<String>,
}

/// Second-order cone `||vector|| <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub bound: LinExpr,
    pub vector: Vec<LinExpr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub sense: Sense,
    pub variables: Vec<Variable>,
    pub rows: Vec<LinearRow>,
    pub cones: Vec<SocConstraint>,
    pub objective_constant: f64,
}

impl ConicProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            variables: Vec::new(),
            rows: Vec::new(),
            cones: Vec::new(),
            objective_constant: 0.0,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    /// Adds a variable with bounds (use infinities for free sides) and objective coefficient.
    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> Var {
        let id = self.variables.len();
        self.variables.push(Variable {
            lower,
            upper,
            cost,
            name: format!("x{id}"),
        });
        id
    }

    pub fn add_named_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> Var {
        let v = self.add_var(lower, upper, cost);
        self.variables[v].name = name.into();
        v
    }

    pub fn free_var(&mut self) -> Var {
        self.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0)
    }

    pub fn set_cost(&mut self, v: Var, cost: f64) {
        self.variables[v].cost = cost;
    }

    pub fn add_row(&mut self, expr: LinExpr, kind: RowKind, rhs: f64) {
        self.rows.push(LinearRow {
            expr,
            kind,
            rhs,
            name: None,
        });
    }

    pub fn add_eq(&mut self, expr: LinExpr, rhs: f64) {
        self.add_row(expr, RowKind::Eq, rhs);
    }

    pub fn add_le(&mut self, expr: LinExpr, rhs: f64) {
        self.add_row(expr, RowKind::Le, rhs);
    }

    pub fn add_ge(&mut self, expr: LinExpr, rhs: f64) {
        self.add_row(expr, RowKind::Ge, rhs);
    }

    pub fn add_soc(&mut self, bound: LinExpr, vector: Vec<LinExpr>) {
        self.cones.push(SocConstraint { bound, vector });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.variables.iter().zip(x).map(|(v, xi)| v.cost * xi).sum::<f64>() + self.objective_constant
    }

    /// Checks that every referenced variable exists and every coefficient is finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let check = |e: &LinExpr, what: &str| -> Result<()> {
            for &(v, c) in &e.terms {
                if v >= n {
                    return Err(Error::invalid("program", format!("{what} references variable {v} of {n}")));
                }
                if !c.is_finite() {
                    return Err(Error::invalid("program", format!("{what} has a non-finite coefficient")));
                }
            }
            if !e.constant.is_finite() {
                return Err(Error::invalid("program", format!("{what} has a non-finite constant")));
            }
            Ok(())
        };
        for (i, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || !v.cost.is_finite() || v.lower > v.upper {
                return Err(Error::invalid("program", format!("variable {i} has invalid bounds or cost")));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            check(&r.expr, &format!("row {i}"))?;
            if !r.rhs.is_finite() {
                return Err(Error::invalid("program", format!("row {i} has a non-finite right-hand side")));
            }
        }
        for (i, c) in self.cones.iter().enumerate() {
            check(&c.bound, &format!("cone {i} bound"))?;
            for e in &c.vector {
                check(e, &format!("cone {i} entry"))?;
            }
        }
        Ok(())
    }

    /// Largest row-scaled violation of bounds, rows and cones at `x`.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (v, &xi) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - xi).max(xi - v.upper);
        }
        for r in &self.rows {
            let lhs = r.expr.eval(x);
            let s = r.expr.scale();
            let viol = match r.kind {
                RowKind::Eq => (lhs - r.rhs).abs(),
                RowKind::Le => lhs - r.rhs,
                RowKind::Ge => r.rhs - lhs,
            };
            worst = worst.max(viol / s);
        }
        for c in &self.cones {
            let norm = c.vector.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            let s = c.vector.iter().fold(c.bound.scale(), |m, e| m.max(e.scale()));
            worst = worst.max((norm - c.bound.eval(x)) / s);
        }
        worst.max(0.0)
    }

    /// Text dump in CPLEX LP format; cones are written as comments.
    pub fn to_lp_string(&self) -> String {
        lp_format::write(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub relaxed_tolerance: f64,
    pub max_iterations: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            relaxed_tolerance: 1e-4,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: u32,
    pub solve_time: f64,
    /// Largest row-scaled primal violation of the returned point.
    pub primal_residual: f64,
    /// True if the relaxed-tolerance retry produced the result.
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    /// Primal values, present only when optimal.
    pub x: Option<Vec<f64>>,
    /// Objective value in the program's own sense.
    pub objective: f64,
    pub stats: SolveStats,
}

impl Solution {
    /// Primal values, or a solver-failure error naming `context`.
    pub fn optimal(&self, context: &str) -> Result<&[f64]> {
        match (&self.x, self.status) {
            (Some(x), SolveStatus::Optimal) => Ok(x),
            _ => Err(Error::SolverFailure {
                context: context.to_string(),
                status: format!("{:?}", self.status),
            }),
        }
    }
}
