//! Scalar two-step envelope problems whose optimum is placed on a known grid
//! point, solved by exhaustive search.

use nalgebra::{DMatrix, DVector};

use flexenv_core::envelope::{BoundSolution, ComfortSpec, EnvelopeProblemSpec, FlexibilityEnvelope, PowerLimits};
use flexenv_core::instance::Instance;
use flexenv_core::model::{ModelLabels, NoiseSpec, StateSpaceModel};
use flexenv_core::policies::Direction;
use flexenv_core::uncertainty::WeatherErrorModel;

use super::quantile_by_bisection;

pub const A: f64 = 0.8;
pub const BD: f64 = 0.2;
pub const PHI: f64 = 0.7;
pub const X0: f64 = 20.0;
pub const P_MAX: f64 = 2.0;
pub const GRID: f64 = 0.01 * P_MAX;
pub const EPS_C: f64 = 0.2;
pub const EPS_T: f64 = 0.05;
pub const LAMBDA: f64 = 1e3;

/// Noise parameters of the scalar toy problem.
#[derive(Clone, Copy)]
pub struct Noise {
    pub w: f64,
    pub v: f64,
    pub d: f64,
    pub d0: f64,
}

impl Noise {
    pub fn zero() -> Self {
        Noise { w: 0.0, v: 0.0, d: 0.0, d0: 0.0 }
    }

    /// Output standard deviations at steps 0, 1, 2 when the power at step 1 is
    /// adjusted by `m` times the initial weather error. Expanded by hand from
    /// `y1 = a x0 + bd d0 + p0 + w0 + v1`, `y2 = a (y1 - v1) + bd d1 + p1 + w1 + v2`
    /// with `d1 = phi d0 + n1`.
    pub fn output_std(&self, m: f64) -> [f64; 3] {
        let v0 = self.v;
        let v1 = BD * BD * self.d0 + self.w + self.v;
        let c = A * BD + BD * PHI + m;
        let v2 = c * c * self.d0 + BD * BD * self.d + (1.0 + A * A) * self.w + self.v;
        [v0.sqrt(), v1.sqrt(), v2.sqrt()]
    }
}

pub fn scalar_model() -> StateSpaceModel {
    StateSpaceModel {
        a: DMatrix::from_element(1, 1, A),
        b_d: DMatrix::from_element(1, 1, BD),
        b_p: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
        d_d: DMatrix::zeros(1, 1),
        d_p: DMatrix::zeros(1, 1),
        dt: 1.0,
        labels: ModelLabels::default(),
    }
}

/// One toy problem: band, weather and the powers where the optimum is designed to sit.
pub struct Toy {
    pub t_min: f64,
    pub t_max: f64,
    pub d0: f64,
    pub d1: f64,
    pub noise: Noise,
}

/// Places the band and the weather so that the optimum of `direction` lands on
/// the grid point `(p0, p1)` given output margins `s` (steps 1 and 2).
pub fn design(direction: Direction, p0: f64, p1: f64, s: [f64; 2], noise: Noise) -> Toy {
    // the band edge at step 1 sits just beyond the known output at step 0
    let y1 = match direction {
        Direction::Up => X0 + 0.3,
        Direction::Down => X0 - 0.3,
    };
    let d0 = (y1 - A * X0 - p0) / BD;
    match direction {
        Direction::Up => {
            let t_max = y1 + s[0];
            let d1 = (t_max - s[1] - A * y1 - p1) / BD;
            Toy { t_min: t_max - 6.0, t_max, d0, d1, noise }
        }
        Direction::Down => {
            let t_min = y1 - s[0];
            let d1 = (t_min + s[1] - A * y1 - p1) / BD;
            Toy { t_min, t_max: t_min + 6.0, d0, d1, noise }
        }
    }
}

impl Toy {
    pub fn instance(&self) -> Instance {
        let n = self.noise;
        let noise = NoiseSpec {
            sigma_w: DMatrix::from_element(1, 1, n.w),
            sigma_v: DMatrix::from_element(1, 1, n.v),
        };
        let wem = WeatherErrorModel {
            phi: DMatrix::from_element(1, 1, PHI),
            sigma_d: DMatrix::from_element(1, 1, n.d),
            sigma_d0: DMatrix::from_element(1, 1, n.d0),
        };
        let weather = DMatrix::from_column_slice(3, 1, &[self.d0, self.d1, 0.0]);
        let comfort = ComfortSpec {
            t_min: DVector::from_element(1, self.t_min),
            t_max: DVector::from_element(1, self.t_max),
            eps_c: EPS_C,
            eps_t: EPS_T,
        };
        let limits = PowerLimits::uniform(1, 0.0, P_MAX);
        let spec = EnvelopeProblemSpec { horizon: 1, lambda: LAMBDA };
        Instance::new(scalar_model(), noise, wem, weather, DVector::from_element(1, X0), comfort, limits, spec)
            .unwrap()
    }

    /// Penalised objective of a power profile with output margins `s` (steps 0..=2)
    /// and power margin `sp` at step 1; `None` if the tightened power bounds fail.
    pub fn objective(&self, direction: Direction, p: [f64; 2], s: [f64; 3], sp: f64) -> Option<f64> {
        if p[1] + sp > P_MAX + 1e-12 || p[1] - sp < -1e-12 {
            return None;
        }
        let y1 = A * X0 + BD * self.d0 + p[0];
        let y = [X0, y1, A * y1 + BD * self.d1 + p[1]];
        let slack: f64 = (0..3)
            .map(|k| (y[k] + s[k] - self.t_max).max(0.0) + (self.t_min + s[k] - y[k]).max(0.0))
            .sum();
        let omega = [1.0, (-1.0f64).exp()];
        let cost = omega[0] * p[0] + omega[1] * p[1];
        Some(match direction {
            Direction::Up => cost - LAMBDA * slack,
            Direction::Down => cost + LAMBDA * slack,
        })
    }

    /// Best grid point over `p` (and over `gains` when more than one is given).
    pub fn grid_search(&self, direction: Direction, gains: &[f64]) -> (f64, [f64; 2], f64) {
        let q_c = quantile_by_bisection(1.0 - EPS_C);
        let q_t = quantile_by_bisection(1.0 - EPS_T);
        let steps = (P_MAX / GRID).round() as usize;
        let better = |a: f64, b: f64| match direction {
            Direction::Up => a > b,
            Direction::Down => a < b,
        };
        let mut best: Option<(f64, [f64; 2], f64)> = None;
        for &m in gains {
            let std = self.noise.output_std(m);
            let s = std.map(|v| q_c * v);
            let sp = q_t * m.abs() * self.noise.d0.sqrt();
            for i in 0..=steps {
                for j in 0..=steps {
                    let p = [i as f64 * GRID, j as f64 * GRID];
                    if let Some(obj) = self.objective(direction, p, s, sp) {
                        if best.is_none_or(|b| better(obj, b.0)) {
                            best = Some((obj, p, m));
                        }
                    }
                }
            }
        }
        best.expect("grid has a feasible point")
    }
}

pub fn bound(env: &FlexibilityEnvelope, direction: Direction) -> &BoundSolution {
    match direction {
        Direction::Up => &env.up,
        Direction::Down => &env.down,
    }
}

/// Where solver and grid disagree by more than 1% of the grid resolution in
/// powers or objective; `None` when they agree.
pub fn grid_mismatch(env: &FlexibilityEnvelope, direction: Direction, grid: (f64, [f64; 2], f64)) -> Option<String> {
    let sol = bound(env, direction);
    let tol = 0.01 * GRID;
    for k in 0..2 {
        let got = sol.powers[(k, 0)];
        if (got - grid.1[k]).abs() > tol {
            return Some(format!("{direction:?}: p{k} = {got}, grid {}", grid.1[k]));
        }
    }
    if sol.powers[(2, 0)] != 0.0 {
        return Some(format!("{direction:?}: terminal power {}", sol.powers[(2, 0)]));
    }
    if (sol.objective - grid.0).abs() > tol {
        return Some(format!("{direction:?}: objective {} vs grid {}", sol.objective, grid.0));
    }
    None
}

pub fn assert_matches_grid(env: &FlexibilityEnvelope, direction: Direction, grid: (f64, [f64; 2], f64), label: &str) {
    if let Some(msg) = grid_mismatch(env, direction, grid) {
        panic!("{label} {msg}");
    }
}

pub fn toy_noise() -> Noise {
    Noise { w: 0.04, v: 0.01, d: 0.5, d0: 1.0 }
}


/// Best reserve pair on a 0.01 kW grid for one direction of a two-hour scalar bid:
/// `x0 <= room0`, `x1 <= room1`, `x0 <= cap1`, `x0 + x1 <= cap2`.
pub fn bid_grid_best(price: [f64; 2], room: [f64; 2], cap: [f64; 2]) -> (f64, [f64; 2]) {
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for i in 0..=300 {
        for j in 0..=300 {
            let x = [i as f64 * 0.01, j as f64 * 0.01];
            let ok = x[0] <= room[0] + 1e-9 && x[1] <= room[1] + 1e-9 && x[0] <= cap[0] + 1e-9 && x[0] + x[1] <= cap[1] + 1e-9;
            if ok {
                let v = price[0] * x[0] + price[1] * x[1];
                if v > best.0 + 1e-12 {
                    best = (v, x);
                }
            }
        }
    }
    best
}
