use std::fmt::Write;

use super::{ConicProgram, LinExpr, RowKind, Sense};

fn expr_text(program: &ConicProgram, e: &LinExpr) -> String {
    let mut s = String::new();
    for &(v, c) in &e.terms {
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(s, " {sign} {} {}", c.abs(), program.variables[v].name);
    }
    if s.is_empty() {
        s.push_str(" 0");
    }
    s
}

fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

pub(super) fn write(program: &ConicProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\\ {} variables, {} rows, {} cones", program.num_vars(), program.rows.len(), program.cones.len());
    let _ = writeln!(
        out,
        "{}",
        match program.sense {
            Sense::Minimize => "Minimize",
            Sense::Maximize => "Maximize",
        }
    );
    let mut obj = String::new();
    for v in program.variables.iter().filter(|v| v.cost != 0.0) {
        let sign = if v.cost < 0.0 { '-' } else { '+' };
        let _ = write!(obj, " {sign} {} {}", v.cost.abs(), v.name);
    }
    if obj.is_empty() {
        obj.push_str(" 0");
    }
    let _ = writeln!(out, " obj:{obj}");
    let _ = writeln!(out, "Subject To");
    for (i, row) in program.rows.iter().enumerate() {
        let op = match row.kind {
            RowKind::Eq => "=",
            RowKind::Le => "<=",
            RowKind::Ge => ">=",
        };
        let name = row.name.clone().unwrap_or_else(|| format!("c{i}"));
        let _ = writeln!(out, " {name}:{} {op} {}", expr_text(program, &row.expr), num(row.rhs - row.expr.constant));
    }
    for (i, cone) in program.cones.iter().enumerate() {
        let _ = writeln!(out, "\\ cone {i}: norm of {} entries <={} + {}", cone.vector.len(), expr_text(program, &cone.bound), cone.bound.constant);
        for (j, e) in cone.vector.iter().enumerate() {
            let _ = writeln!(out, "\\   [{j}]{} + {}", expr_text(program, e), e.constant);
        }
    }
    let _ = writeln!(out, "Bounds");
    for v in &program.variables {
        if v.lower == v.upper {
            let _ = writeln!(out, " {} = {}", v.name, num(v.lower));
        } else if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", num(v.lower), v.name, num(v.upper));
        }
    }
    let _ = writeln!(out, "End");
    out
}
