//! Flexibility envelopes: the smallest and largest cumulative heating energy a
//! building can absorb over the horizon while respecting comfort and power limits.
//!
//! Four formulations share one structure:
//!
//! | formulation | comfort margin | power margin | program |
//! |-------------|----------------|--------------|---------|
//! | UI          | none           | none         | LP      |
//! | UA          | `s_ua`         | none         | LP      |
//! | UAF-opt     | `s_c(M)`       | `s_p(M)`     | SOCP, `M` optimised |
//! | UAF-fixed   | `s_c(M_f)`     | `s_p(M_f)`   | LP, `M_f` given |

mod baseline;
mod lp;
mod socp;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictionOperator;
use crate::policies::{AffinePolicy, Direction};
use crate::solver::SolverSettings;
use crate::uncertainty::{SafetyMargins, StackedNoiseBasis};

pub use baseline::{compute_baseline, Baseline};

/// Default comfort-slack penalty per degC and step.
pub const DEFAULT_SLACK_PENALTY: f64 = 1e3;

/// Per-room comfort band and risk levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortSpec {
    pub t_min: DVector<f64>,
    pub t_max: DVector<f64>,
    /// Comfort risk level.
    pub eps_c: f64,
    /// Technical (power) risk level.
    pub eps_t: f64,
}

impl ComfortSpec {
    /// Same band `[centre - width/2, centre + width/2]` in every room.
    pub fn uniform(rooms: usize, centre: f64, width: f64, eps_c: f64, eps_t: f64) -> Self {
        Self {
            t_min: DVector::from_element(rooms, centre - width / 2.0),
            t_max: DVector::from_element(rooms, centre + width / 2.0),
            eps_c,
            eps_t,
        }
    }

    pub fn validate(&self, ny: usize) -> Result<()> {
        if self.t_min.len() != ny || self.t_max.len() != ny {
            return Err(Error::LengthMismatch {
                what: "comfort bounds".into(),
                expected: ny,
                got: self.t_min.len().min(self.t_max.len()),
            });
        }
        if self.t_min.iter().zip(self.t_max.iter()).any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::invalid("comfort", "T_max must exceed T_min in every room"));
        }
        for (name, eps) in [("eps_c", self.eps_c), ("eps_t", self.eps_t)] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::invalid(name, format!("must lie in (0, 1), got {eps}")));
            }
        }
        Ok(())
    }
}

/// Per-input heating power limits (kW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLimits {
    pub p_min: DVector<f64>,
    pub p_max: DVector<f64>,
}

impl PowerLimits {
    pub fn uniform(inputs: usize, p_min: f64, p_max: f64) -> Self {
        Self {
            p_min: DVector::from_element(inputs, p_min),
            p_max: DVector::from_element(inputs, p_max),
        }
    }

    pub fn validate(&self, np: usize) -> Result<()> {
        if self.p_min.len() != np || self.p_max.len() != np {
            return Err(Error::LengthMismatch {
                what: "power limits".into(),
                expected: np,
                got: self.p_min.len().min(self.p_max.len()),
            });
        }
        if self.p_min.iter().zip(self.p_max.iter()).any(|(lo, hi)| !(*lo >= 0.0 && hi >= lo)) {
            return Err(Error::invalid("power limits", "need p_max >= p_min >= 0"));
        }
        Ok(())
    }

    /// Clamps a power vector into the limits.
    pub fn clamp(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(p.len(), |i, _| p[i].clamp(self.p_min[i], self.p_max[i]))
    }
}

/// Objective weighting shared by all formulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeProblemSpec {
    pub horizon: usize,
    /// Comfort-slack penalty per degC and step.
    pub lambda: f64,
}

impl EnvelopeProblemSpec {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            lambda: DEFAULT_SLACK_PENALTY,
        }
    }

    /// `omega_k = exp(-k / N)`.
    pub fn omega(&self, k: usize) -> f64 {
        (-(k as f64) / self.horizon as f64).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Formulation {
    #[serde(rename = "UI")]
    Ui,
    #[serde(rename = "UA")]
    Ua,
    #[serde(rename = "UAF-opt")]
    UafOpt,
    #[serde(rename = "UAF-fixed")]
    UafFixed,
}

impl Formulation {
    pub const ALL: [Formulation; 4] = [Formulation::Ui, Formulation::Ua, Formulation::UafOpt, Formulation::UafFixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Formulation::Ui => "UI",
            Formulation::Ua => "UA",
            Formulation::UafOpt => "UAF-opt",
            Formulation::UafFixed => "UAF-fixed",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ui" => Ok(Formulation::Ui),
            "ua" => Ok(Formulation::Ua),
            "uaf-opt" | "uafopt" => Ok(Formulation::UafOpt),
            "uaf-fixed" | "uaffixed" => Ok(Formulation::UafFixed),
            _ => Err(Error::invalid("formulation", format!("unknown formulation `{s}`"))),
        }
    }
}

/// Everything an envelope computation needs about one planning instance.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeContext<'a> {
    pub op: &'a PredictionOperator,
    pub basis: &'a StackedNoiseBasis,
    /// Estimated initial state.
    pub x0: &'a DVector<f64>,
    /// Nominal weather forecast, `(N+2) x Nd`.
    pub weather: &'a DMatrix<f64>,
    pub comfort: &'a ComfortSpec,
    pub limits: &'a PowerLimits,
    pub spec: &'a EnvelopeProblemSpec,
    pub solver: SolverSettings,
}

impl EnvelopeContext<'_> {
    pub fn validate(&self) -> Result<()> {
        let model = self.op.model();
        if self.spec.horizon != self.op.horizon() || self.basis.horizon() != self.op.horizon() {
            return Err(Error::invalid("horizon", "problem spec, prediction operator and noise basis disagree"));
        }
        if !(self.spec.lambda > 0.0) {
            return Err(Error::invalid("lambda", "slack penalty must be positive"));
        }
        self.comfort.validate(model.ny())?;
        self.limits.validate(model.np())?;
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.op.horizon()
    }

    pub fn steps(&self) -> usize {
        self.op.steps()
    }

    /// Output trajectory with zero heating.
    pub fn free_response(&self) -> Result<DMatrix<f64>> {
        self.op.free_response(self.x0, self.weather)
    }
}

/// Optimal solution for one energy bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSolution {
    pub direction: Direction,
    /// Nominal power profile, `(N+2) x Np`; the last row is zero.
    pub powers: DMatrix<f64>,
    /// Upper comfort slack `gamma+`, `(N+2) x Ny`.
    pub slack_above: DMatrix<f64>,
    /// Lower comfort slack `gamma-`, `(N+2) x Ny`.
    pub slack_below: DMatrix<f64>,
    /// `sum omega_k 1'p_k -/+ lambda sum(gamma)`, in the program's own sense.
    pub objective: f64,
    /// Cumulative energy `E[k] = dt sum_{i<k} 1'p_i`, `k = 0..=N`.
    pub energy: Vec<f64>,
    /// Optimal feedback policy (UAF-opt only).
    pub policy: Option<AffinePolicy>,
    pub solve_time: f64,
}

impl BoundSolution {
    pub fn total_slack(&self) -> f64 {
        self.slack_above.sum() + self.slack_below.sum()
    }
}

/// Upper and lower cumulative-energy bounds with the profiles that generated them.
///
/// `e_up[k]` and `e_down[k]` are indexed by `k = 0..=N` with `e[0] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityEnvelope {
    pub formulation: Formulation,
    pub dt: f64,
    pub up: BoundSolution,
    pub down: BoundSolution,
    /// Safety margins of the upper-bound solution.
    #[serde(skip)]
    pub margins_up: Option<SafetyMargins>,
    #[serde(skip)]
    pub margins_down: Option<SafetyMargins>,
}

impl FlexibilityEnvelope {
    /// Envelope given only by its energy bounds (`k = 0..=N`), with flat generating profiles.
    pub fn from_energy(formulation: Formulation, dt: f64, e_up: Vec<f64>, e_down: Vec<f64>) -> Result<Self> {
        if e_up.len() != e_down.len() || e_up.len() < 2 {
            return Err(Error::LengthMismatch {
                what: "energy bounds".into(),
                expected: e_up.len().max(2),
                got: e_down.len(),
            });
        }
        let steps = e_up.len() + 1;
        let bound = |direction, energy: Vec<f64>| {
            let powers = DMatrix::from_fn(steps, 1, |k, _| {
                if k + 1 < energy.len() {
                    (energy[k + 1] - energy[k]) / dt
                } else {
                    0.0
                }
            });
            BoundSolution {
                direction,
                powers,
                slack_above: DMatrix::zeros(steps, 0),
                slack_below: DMatrix::zeros(steps, 0),
                objective: 0.0,
                energy,
                policy: None,
                solve_time: 0.0,
            }
        };
        Ok(Self {
            formulation,
            dt,
            up: bound(Direction::Up, e_up),
            down: bound(Direction::Down, e_down),
            margins_up: None,
            margins_down: None,
        })
    }

    pub fn horizon(&self) -> usize {
        self.up.energy.len() - 1
    }

    pub fn e_up(&self) -> &[f64] {
        &self.up.energy
    }

    pub fn e_down(&self) -> &[f64] {
        &self.down.energy
    }

    /// CSV with one row per step `k = 0..=N+1`.
    pub fn to_csv(&self) -> Result<String> {
        let np = self.up.powers.ncols();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string(), "E_up".into(), "E_down".into()];
        header.extend((0..np).map(|p| format!("p_up_{p}")));
        header.extend((0..np).map(|p| format!("p_down_{p}")));
        header.extend(["slack_up".to_string(), "slack_down".to_string()]);
        w.write_record(&header)?;
        let steps = self.up.powers.nrows();
        for k in 0..steps {
            let energy = |e: &[f64]| {
                if k < e.len() {
                    fmt_num(e[k])
                } else {
                    String::new()
                }
            };
            let mut rec = vec![k.to_string(), energy(&self.up.energy), energy(&self.down.energy)];
            rec.extend((0..np).map(|p| fmt_num(self.up.powers[(k, p)])));
            rec.extend((0..np).map(|p| fmt_num(self.down.powers[(k, p)])));
            let slack = |b: &BoundSolution| b.slack_above.row(k).sum() + b.slack_below.row(k).sum();
            rec.push(fmt_num(slack(&self.up)));
            rec.push(fmt_num(slack(&self.down)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Fixed-precision number formatting used by every tabular output.
pub fn fmt_num(x: f64) -> String {
    let s = format!("{x:.9}");
    if s == "-0.000000000" {
        "0.000000000".into()
    } else {
        s
    }
}

/// Cumulative energy `E[k] = dt sum_{i<k} 1'p_i` for `k = 0..=N`.
pub fn cumulative_energy(powers: &DMatrix<f64>, horizon: usize, dt: f64) -> Vec<f64> {
    let mut e = Vec::with_capacity(horizon + 1);
    let mut acc = 0.0;
    e.push(0.0);
    for k in 0..horizon {
        acc += dt * powers.row(k).sum();
        e.push(acc);
    }
    e
}

/// Time-integrated gap between the bounds, `sum_{k=1..N} (E_up[k] - E_down[k]) dt`.
pub fn compute_fea(env: &FlexibilityEnvelope) -> f64 {
    let n = env.horizon();
    (1..=n).map(|k| (env.up.energy[k] - env.down.energy[k]) * env.dt).sum()
}

/// Maximum flexibility provision horizon from comfort margins (`(N+2) x Ny`).
///
/// Returns `k* - 1` for the first step `k*` at which the tightened band of some room
/// is empty (`T_max - s <= T_min + s`), saturating at 0, or `N` if no such step exists.
pub fn compute_mfph(margins: &DMatrix<f64>, comfort: &ComfortSpec, horizon: usize) -> usize {
    for k in 0..=horizon {
        let empty = (0..margins.ncols()).any(|j| comfort.t_max[j] - margins[(k, j)] <= comfort.t_min[j] + margins[(k, j)]);
        if empty {
            return k.saturating_sub(1);
        }
    }
    horizon
}

/// Computes one envelope in the requested formulation.
///
/// `fixed` supplies the upper and lower policies for UAF-fixed and is ignored otherwise.
pub fn compute_envelope(
    ctx: &EnvelopeContext<'_>,
    formulation: Formulation,
    fixed: Option<(&AffinePolicy, &AffinePolicy)>,
) -> Result<FlexibilityEnvelope> {
    match formulation {
        Formulation::Ui => envelope_ui(ctx),
        Formulation::Ua => envelope_ua(ctx),
        Formulation::UafOpt => envelope_uaf_opt(ctx),
        Formulation::UafFixed => {
            let (up, down) =
                fixed.ok_or_else(|| Error::invalid("policy", "UAF-fixed needs fixed upper and lower policies"))?;
            envelope_uaf_fixed(ctx, up, down)
        }
    }
}

fn assemble(
    ctx: &EnvelopeContext<'_>,
    formulation: Formulation,
    up: BoundSolution,
    down: BoundSolution,
    margins: (Option<SafetyMargins>, Option<SafetyMargins>),
) -> FlexibilityEnvelope {
    FlexibilityEnvelope {
        formulation,
        dt: ctx.op.model().dt,
        up,
        down,
        margins_up: margins.0,
        margins_down: margins.1,
    }
}

/// Uncertainty-ignorant envelope: nominal comfort constraints only.
pub fn envelope_ui(ctx: &EnvelopeContext<'_>) -> Result<FlexibilityEnvelope> {
    ctx.validate()?;
    let (ny, np, steps) = (ctx.op.model().ny(), ctx.op.model().np(), ctx.steps());
    let zero_c = DMatrix::zeros(steps, ny);
    let zero_p = DMatrix::zeros(steps, np);
    let up = lp::solve_bound(ctx, Direction::Up, &zero_c, &zero_p)?;
    let down = lp::solve_bound(ctx, Direction::Down, &zero_c, &zero_p)?;
    Ok(assemble(ctx, Formulation::Ui, up, down, (None, None)))
}

/// Uncertainty-aware envelope: comfort band tightened by `s_ua`.
pub fn envelope_ua(ctx: &EnvelopeContext<'_>) -> Result<FlexibilityEnvelope> {
    ctx.validate()?;
    let margins = SafetyMargins::compute(ctx.basis, ctx.op, None, ctx.comfort.eps_c, ctx.comfort.eps_t)?;
    let up = lp::solve_bound(ctx, Direction::Up, &margins.s_ua, &margins.s_p)?;
    let down = lp::solve_bound(ctx, Direction::Down, &margins.s_ua, &margins.s_p)?;
    Ok(assemble(ctx, Formulation::Ua, up, down, (Some(margins.clone()), Some(margins))))
}

/// Uncertainty-aware envelope with fixed feedback policies.
pub fn envelope_uaf_fixed(
    ctx: &EnvelopeContext<'_>,
    policy_up: &AffinePolicy,
    policy_down: &AffinePolicy,
) -> Result<FlexibilityEnvelope> {
    ctx.validate()?;
    let model = ctx.op.model();
    let nr = model.nd() + model.ny();
    let mut sols = Vec::with_capacity(2);
    let mut margins = Vec::with_capacity(2);
    for (dir, policy) in [(Direction::Up, policy_up), (Direction::Down, policy_down)] {
        policy.check_shape(ctx.horizon(), model.np(), nr)?;
        let m = SafetyMargins::compute(ctx.basis, ctx.op, Some(&policy.gains), ctx.comfort.eps_c, ctx.comfort.eps_t)?;
        check_power_band(&m.s_p, ctx.limits, ctx.horizon())?;
        let mut sol = lp::solve_bound(ctx, dir, &m.s_c, &m.s_p)?;
        sol.policy = Some(policy.clone());
        sols.push(sol);
        margins.push(m);
    }
    let down = sols.pop().expect("two bounds");
    let up = sols.pop().expect("two bounds");
    let m_down = margins.pop();
    let m_up = margins.pop();
    Ok(assemble(ctx, Formulation::UafFixed, up, down, (m_up, m_down)))
}

/// Uncertainty-aware envelope with jointly optimised feedback policies (SOCP).
pub fn envelope_uaf_opt(ctx: &EnvelopeContext<'_>) -> Result<FlexibilityEnvelope> {
    ctx.validate()?;
    let mut up = socp::solve_bound(ctx, Direction::Up)?;
    let mut down = socp::solve_bound(ctx, Direction::Down)?;
    let margins_of = |sol: &BoundSolution| -> Result<SafetyMargins> {
        let policy = sol.policy.as_ref().expect("SOCP returns a policy");
        SafetyMargins::compute(ctx.basis, ctx.op, Some(&policy.gains), ctx.comfort.eps_c, ctx.comfort.eps_t)
    };
    let m_up = margins_of(&up)?;
    let m_down = margins_of(&down)?;
    if let Some(p) = up.policy.as_mut() {
        p.direction = Direction::Up;
    }
    if let Some(p) = down.policy.as_mut() {
        p.direction = Direction::Down;
    }
    Ok(assemble(ctx, Formulation::UafOpt, up, down, (Some(m_up), Some(m_down))))
}

/// Optimal feedback policy of one bound, as used to train fixed policies.
pub fn optimal_policy(ctx: &EnvelopeContext<'_>, direction: Direction) -> Result<AffinePolicy> {
    ctx.validate()?;
    let sol = socp::solve_bound(ctx, direction)?;
    Ok(sol.policy.expect("SOCP returns a policy"))
}

/// Rejects power margins that leave no room between the tightened limits.
pub fn check_power_band(s_p: &DMatrix<f64>, limits: &PowerLimits, horizon: usize) -> Result<()> {
    for k in 0..=horizon {
        for i in 0..s_p.ncols() {
            let half = 0.5 * (limits.p_max[i] - limits.p_min[i]);
            if s_p[(k, i)] > half + 1e-12 {
                return Err(Error::PowerInfeasibleBand {
                    step: k,
                    input: i,
                    margin: s_p[(k, i)],
                    half_band: half,
                });
            }
        }
    }
    Ok(())
}

/// MFPH of an envelope: margins with feedback when available, otherwise `s_ua`,
/// taking the smaller of the two bounds.
pub fn envelope_mfph(env: &FlexibilityEnvelope, comfort: &ComfortSpec) -> Option<usize> {
    let n = env.horizon();
    match (&env.margins_up, &env.margins_down) {
        (Some(u), Some(d)) => Some(compute_mfph(&u.s_c, comfort, n).min(compute_mfph(&d.s_c, comfort, n))),
        _ => None,
    }
}
