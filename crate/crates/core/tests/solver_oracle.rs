use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use flexenv_core::solver::{solve, ConicProgram, LinExpr, Sense, SolveStatus, SolverSettings};

#[test]
fn cone_boundary_matches_bisection() {
    // min x  s.t.  ||(x - 1, 2)|| <= x + 3
    let mut p = ConicProgram::new(Sense::Minimize);
    let x = p.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
    let mut bound = LinExpr::var(x);
    bound.add_constant(3.0);
    let mut first = LinExpr::var(x);
    first.add_constant(-1.0);
    p.add_soc(bound, vec![first, LinExpr::constant(2.0)]);
    let sol = solve(&p, &SolverSettings::default()).unwrap();
    let v = sol.optimal("cone").unwrap()[0];

    let feasible = |x: f64| ((x - 1.0).powi(2) + 4.0).sqrt() <= x + 3.0;
    let (mut lo, mut hi) = (-3.0, 10.0);
    assert!(!feasible(lo) && feasible(hi));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!((v - hi).abs() < 1e-6, "solver {v}, bisection {hi}");
    assert!(sol.stats.primal_residual <= 1e-6);
}

/// Brute-force LP optimum over a box by enumerating all vertices.
fn vertex_optimum(c: &[f64; 3], rows: &[([f64; 3], f64)]) -> f64 {
    let mut all: Vec<([f64; 3], f64)> = rows.to_vec();
    for i in 0..3 {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        all.push((e, 5.0));
        let mut e = [0.0; 3];
        e[i] = -1.0;
        all.push((e, 5.0));
    }
    let mut best = f64::NEG_INFINITY;
    for a in 0..all.len() {
        for b in a + 1..all.len() {
            for d in b + 1..all.len() {
                let m = Matrix3::from_rows(&[
                    Vector3::from(all[a].0).transpose(),
                    Vector3::from(all[b].0).transpose(),
                    Vector3::from(all[d].0).transpose(),
                ]);
                let Some(inv) = m.try_inverse() else { continue };
                let x = inv * Vector3::new(all[a].1, all[b].1, all[d].1);
                if all.iter().all(|(r, rhs)| Vector3::from(*r).dot(&x) <= rhs + 1e-9) {
                    best = best.max(Vector3::from(*c).dot(&x));
                }
            }
        }
    }
    best
}

fn build_lp(c: &[f64; 3], rows: &[([f64; 3], f64)], scale: f64) -> ConicProgram {
    let mut p = ConicProgram::new(Sense::Maximize);
    let xs: Vec<_> = c.iter().map(|ci| p.add_var(-5.0, 5.0, scale * ci)).collect();
    for (a, b) in rows {
        let mut e = LinExpr::new();
        for (i, ai) in a.iter().enumerate() {
            e.add_term(xs[i], *ai);
        }
        p.add_le(e, *b);
    }
    p
}

fn lp_case() -> impl Strategy<Value = ([f64; 3], Vec<([f64; 3], f64)>)> {
    let coef = -3.0..3.0f64;
    let row = ([coef.clone(), coef.clone(), coef.clone()], 0.5..4.0f64);
    ([coef.clone(), coef.clone(), coef], prop::collection::vec(row, 1..6))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_matches_vertex_enumeration((c, rows) in lp_case()) {
        let sol = solve(&build_lp(&c, &rows, 1.0), &SolverSettings::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let oracle = vertex_optimum(&c, &rows);
        prop_assert!((sol.objective - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()),
            "solver {} vs vertices {}", sol.objective, oracle);
        prop_assert!(sol.stats.primal_residual <= 1e-6);
    }

    #[test]
    fn positive_objective_scaling_keeps_the_maximizer((c, rows) in lp_case(), scale in 0.1..50.0f64) {
        let base = solve(&build_lp(&c, &rows, 1.0), &SolverSettings::default()).unwrap();
        let scaled = solve(&build_lp(&c, &rows, scale), &SolverSettings::default()).unwrap();
        let (xb, xs) = (base.optimal("base").unwrap(), scaled.optimal("scaled").unwrap());
        // the maximizer may be a face; compare the unscaled objective at both points
        let value = |x: &[f64]| c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!((value(xb) - value(xs)).abs() <= 1e-6 * (1.0 + value(xb).abs()));
        prop_assert!((scaled.objective - scale * base.objective).abs() <= 1e-6 * scale * (1.0 + base.objective.abs()));
    }
}

#[test]
fn solves_are_deterministic() {
    let rows = vec![([1.0, 2.0, -1.0], 3.0), ([-0.5, 1.0, 1.0], 2.0)];
    let p = build_lp(&[1.0, 0.3, 0.7], &rows, 1.0);
    let a = solve(&p, &SolverSettings::default()).unwrap();
    let b = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(a.x, b.x);
}
