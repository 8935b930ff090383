//! Plants that execute a whole trajectory per call: a simulated two-link
//! series-elastic arm and exact LTI test plants.

mod arm;
mod lti;

pub use arm::{
    arm_dynamics, linearized_response, mechanical_energy, ArmParams, Derivative, PlantState, SeaArm,
    SeaArmConfig,
};
pub use lti::{LtiPlant, LtiSpec, RationalTf, TfEntry};

use std::fmt;

use crate::error::Result;
use crate::signals::TimeSeries;

/// Why an execution was flagged.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantFault {
    /// Spring torque hit the peak limit (the run continued with clamped torque).
    TorqueSaturation { time: f64, joint: usize },
    /// Spring deflection exceeded the divergence threshold; output truncated.
    Divergence { time: f64, joint: usize },
    /// Non-finite state; output truncated.
    NonFinite { time: f64 },
}

impl fmt::Display for PlantFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlantFault::TorqueSaturation { time, joint } => {
                write!(f, "torque saturation on joint {} at t = {time:.3} s", joint + 1)
            }
            PlantFault::Divergence { time, joint } => {
                write!(f, "spring deflection diverged on joint {} at t = {time:.3} s", joint + 1)
            }
            PlantFault::NonFinite { time } => write!(f, "non-finite state at t = {time:.3} s"),
        }
    }
}

/// Output of one trajectory execution.
#[derive(Debug, Clone)]
pub struct Execution {
    pub output: TimeSeries,
    pub fault: Option<PlantFault>,
}

/// A repeatable plant: each call starts from the same initial condition.
pub trait Plant {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    /// Runs the plant over the full horizon of `u` (first `n_inputs` channels).
    fn execute(&mut self, u: &TimeSeries) -> Result<Execution>;
}

pub(crate) fn output_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("y{i}")).collect()
}
