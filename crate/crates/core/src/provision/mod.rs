//! Real-time flexibility provision: baseline adaptation controllers, the
//! closed-loop simulation against a sampled truth plant, settlement and
//! discomfort accounting.

mod controller;
mod experiment;
mod plant;
mod settle;
mod simulate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use controller::{plan_adaptation, AdaptationPlan, ControllerInput};
pub use experiment::{
    crossover_multiplier, normalization_reference, prepare_run, price_sensitivity_sweep, run_pipeline, run_prepared,
    sub_seed, PipelineOutcome, PreparedRun, SweepRow,
};
pub use plant::{open_loop_violation_frequency, TruthRealization};
pub use settle::{discomfort_metrics, settle, DiscomfortMetrics, RevenueBreakdown, VIOLATION_THRESHOLD};
pub use simulate::{simulate_closed_loop, simulate_with_truth, SimulationTrace, TraceStep};

/// How the baseline may be adapted while reserves are held.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioMode {
    /// Baseline changes are traded on the intra-day market at every step.
    IntraDay,
    /// Baseline changes are free only at reserve-free steps; elsewhere they are
    /// a provision default penalised with `alpha_flex`.
    Rebound,
    /// Like [`ScenarioMode::Rebound`] but the baseline is frozen at reserved steps.
    ReboundStrict,
}

impl ScenarioMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioMode::IntraDay => "intra-day",
            ScenarioMode::Rebound => "rebound",
            ScenarioMode::ReboundStrict => "rebound-strict",
        }
    }
}

impl std::str::FromStr for ScenarioMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "intra-day" | "intraday" | "1" => Ok(ScenarioMode::IntraDay),
            "rebound" | "2" => Ok(ScenarioMode::Rebound),
            "rebound-strict" | "reboundstrict" => Ok(ScenarioMode::ReboundStrict),
            _ => Err(Error::invalid("scenario.mode", format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Priority {
    FlexibilityFirst,
    ComfortFirst,
}

impl Priority {
    pub fn as_str(self) -> &'static str {
        match self {
            Priority::FlexibilityFirst => "flexibility-first",
            Priority::ComfortFirst => "comfort-first",
        }
    }
}

/// Default discomfort weight of the dominated objective term.
pub const WEIGHT_LOW: f64 = 1e3;
/// Default weight of the dominating objective term.
pub const WEIGHT_HIGH: f64 = 1e4;

/// Settings of one provision scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ScenarioMode,
    /// Penalty per degC and step of comfort slack.
    pub lambda_comfort: f64,
    /// Penalty per kW of baseline deviation at reserved steps.
    pub alpha_flex: f64,
    pub priority: Priority,
    /// Tolerated relative deviation from the requested activation.
    pub slack_fraction: f64,
    /// Thermal power delivered per unit of electric power.
    pub cop: f64,
}

impl ScenarioConfig {
    /// Configuration with the default weights of the given priority.
    pub fn new(mode: ScenarioMode, priority: Priority) -> Self {
        let (lambda_comfort, alpha_flex) = match priority {
            Priority::FlexibilityFirst => (WEIGHT_LOW, WEIGHT_HIGH),
            Priority::ComfortFirst => (WEIGHT_HIGH, WEIGHT_LOW),
        };
        Self {
            mode,
            lambda_comfort,
            alpha_flex,
            priority,
            slack_fraction: 0.05,
            cop: 1.0,
        }
    }

    pub fn intraday() -> Self {
        Self::new(ScenarioMode::IntraDay, Priority::FlexibilityFirst)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_comfort > 0.0 && self.lambda_comfort.is_finite()) {
            return Err(Error::invalid("scenario.lambda_comfort", "must be positive"));
        }
        if !(self.alpha_flex > 0.0 && self.alpha_flex.is_finite()) {
            return Err(Error::invalid("scenario.alpha_flex", "must be positive"));
        }
        match self.priority {
            Priority::FlexibilityFirst if self.alpha_flex < 10.0 * self.lambda_comfort => {
                return Err(Error::invalid(
                    "scenario.alpha_flex",
                    "flexibility-first needs alpha_flex >= 10 * lambda_comfort",
                ));
            }
            Priority::ComfortFirst if self.lambda_comfort < 10.0 * self.alpha_flex => {
                return Err(Error::invalid(
                    "scenario.lambda_comfort",
                    "comfort-first needs lambda_comfort >= 10 * alpha_flex",
                ));
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.slack_fraction) {
            return Err(Error::invalid("scenario.slack_fraction", "must lie in [0, 1)"));
        }
        if !(self.cop > 0.0 && self.cop.is_finite()) {
            return Err(Error::invalid("scenario.cop", "must be positive"));
        }
        Ok(())
    }

    /// Short label such as `rebound/comfort-first`.
    pub fn label(&self) -> String {
        match self.mode {
            ScenarioMode::IntraDay => self.mode.as_str().to_string(),
            _ => format!("{}/{}", self.mode.as_str(), self.priority.as_str()),
        }
    }
}
