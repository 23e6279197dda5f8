//! Core MDP data model: states, action classes, transitions, trajectories.
//!
//! The state is a fixed 16-feature clinical vector; the aPTT value observed
//! with each state rides alongside it (it defines the predefined reward but
//! is not part of the state the agent sees). Actions are six dose classes.

mod bins;
mod buffer;
mod csvio;
mod normalize;
mod rp;
mod split;

pub use bins::{compute_bin_edges, discretize_dose, BinEdges};
pub use buffer::ReplayBuffer;
pub use csvio::{load_trajectories, write_trajectories, write_trajectories_string, LoadOptions, LoadReport, CSV_HEADER};
pub use normalize::Normalizer;
pub use rp::rp_reward;
pub use split::split_train_test;

use crate::error::{Error, Result};

/// Number of clinical state features.
pub const STATE_DIM: usize = 16;
/// Number of dose classes.
pub const N_ACTIONS: usize = 6;
/// Trajectories with fewer hourly rows than this are dropped at ingestion.
pub const MIN_HORIZON: usize = 7;

/// Schema order of the 16 state features.
pub const FEATURE_NAMES: [&str; STATE_DIM] = [
    "age", "gender", "gcs", "dbp", "sbp", "rr", "hgb", "temperature", "wbc", "platelet", "pt",
    "acd", "creatinine", "bilirubin", "inr", "weight",
];

/// Index of a feature name in the schema.
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&f| f == name)
}

/// One patient snapshot: the 16-feature state vector plus the aPTT seconds
/// observed at the same hour. The aPTT is an observable companion value,
/// not a state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientState {
    pub features: [f64; STATE_DIM],
    pub aptt: f64,
}

impl PatientState {
    pub fn new(features: [f64; STATE_DIM], aptt: f64) -> Result<Self> {
        if features.iter().any(|x| !x.is_finite()) || !aptt.is_finite() {
            return Err(Error::Numeric("non-finite value in patient state".into()));
        }
        Ok(PatientState { features, aptt })
    }
}

/// A dose class in {0, ..., 5}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionClass(pub(crate) usize);

impl ActionClass {
    pub fn new(index: usize) -> Result<Self> {
        if index >= N_ACTIONS {
            return Err(Error::Argument(format!("action class {index} out of range 0..{N_ACTIONS}")));
        }
        Ok(ActionClass(index))
    }

    pub fn index(self) -> usize {
        self.0
    }

    /// One-hot encoding of the class.
    pub fn one_hot(self) -> [f64; N_ACTIONS] {
        let mut v = [0.0; N_ACTIONS];
        v[self.0] = 1.0;
        v
    }

    pub fn all() -> impl Iterator<Item = ActionClass> {
        (0..N_ACTIONS).map(ActionClass)
    }
}

/// One (state, action, reward, next-state) step.
///
/// `dose` keeps the raw heparin rate the action class was derived from so a
/// trajectory can be written back to CSV without loss. Model-generated
/// transitions carry `dose = NAN`-free placeholder 0 and `aptt = 0` in their
/// states.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: PatientState,
    pub action: ActionClass,
    pub dose: f64,
    pub reward: f64,
    pub next_state: PatientState,
    pub terminal: bool,
}

/// Ordered transitions for one patient at 1-hour intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub patient_id: String,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    /// Horizon in hours (= number of transitions).
    pub fn horizon_hours(&self) -> usize {
        self.transitions.len()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// The first state of the trajectory.
    pub fn initial_state(&self) -> &PatientState {
        &self.transitions[0].state
    }

    /// Check ordering invariants: nonempty and only the last step terminal.
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::State(format!("trajectory {} is empty", self.patient_id)));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.terminal && i + 1 != self.transitions.len() {
                return Err(Error::State(format!(
                    "trajectory {}: non-final transition {i} marked terminal",
                    self.patient_id
                )));
            }
            if !t.reward.is_finite() {
                return Err(Error::Numeric(format!(
                    "trajectory {}: non-finite reward at step {i}",
                    self.patient_id
                )));
            }
        }
        Ok(())
    }
}

/// Total transition count across trajectories.
pub fn total_transitions(trajectories: &[Trajectory]) -> usize {
    trajectories.iter().map(|t| t.len()).sum()
}
