//! Per-feature z-score normalization over state vectors.
//!
//! aPTT and dose are never normalized: the reward formula and the dose
//! discretization operate on raw values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

use super::{PatientState, Trajectory, STATE_DIM};

pub const NORMALIZER_MAGIC: &str = "OMGRL-NORM v1";
const STD_FLOOR: f64 = 1e-8;

/// Fitted per-feature mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; STATE_DIM],
    pub std: [f64; STATE_DIM],
}

impl Normalizer {
    /// Identity normalizer (mean 0, std 1).
    pub fn identity() -> Self {
        Normalizer { mean: [0.0; STATE_DIM], std: [1.0; STATE_DIM] }
    }

    /// Fit over every state vector in the trajectories (each step's state
    /// plus the final next-state, i.e. all original rows). Population
    /// convention; stds are floored at 1e-8.
    pub fn fit(trajectories: &[Trajectory]) -> Result<Self> {
        let mut sum = [0.0; STATE_DIM];
        let mut sum_sq = [0.0; STATE_DIM];
        let mut n = 0usize;
        let mut accum = |s: &PatientState| {
            for (d, x) in s.features.iter().enumerate() {
                sum[d] += x;
                sum_sq[d] += x * x;
            }
            n += 1;
        };
        for traj in trajectories {
            for t in &traj.transitions {
                accum(&t.state);
            }
            if let Some(last) = traj.transitions.last() {
                accum(&last.next_state);
            }
        }
        if n < 2 {
            return Err(Error::State(format!("need at least 2 state vectors to fit, got {n}")));
        }
        let mut mean = [0.0; STATE_DIM];
        let mut std = [0.0; STATE_DIM];
        for d in 0..STATE_DIM {
            mean[d] = sum[d] / n as f64;
            let var = (sum_sq[d] / n as f64 - mean[d] * mean[d]).max(0.0);
            std[d] = var.sqrt().max(STD_FLOOR);
        }
        Ok(Normalizer { mean, std })
    }

    /// z-score one state (aPTT passes through untouched).
    pub fn apply_state(&self, s: &PatientState) -> PatientState {
        let mut features = s.features;
        for d in 0..STATE_DIM {
            features[d] = (features[d] - self.mean[d]) / self.std[d];
        }
        PatientState { features, aptt: s.aptt }
    }

    /// Invert the z-score.
    pub fn invert_state(&self, s: &PatientState) -> PatientState {
        let mut features = s.features;
        for d in 0..STATE_DIM {
            features[d] = features[d] * self.std[d] + self.mean[d];
        }
        PatientState { features, aptt: s.aptt }
    }

    /// Normalize every state in the trajectories; rewards, doses and aPTT
    /// are untouched.
    pub fn apply(&self, trajectories: &[Trajectory]) -> Vec<Trajectory> {
        trajectories
            .iter()
            .map(|traj| Trajectory {
                patient_id: traj.patient_id.clone(),
                transitions: traj
                    .transitions
                    .iter()
                    .map(|t| super::Transition {
                        state: self.apply_state(&t.state),
                        action: t.action,
                        dose: t.dose,
                        reward: t.reward,
                        next_state: self.apply_state(&t.next_state),
                        terminal: t.terminal,
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut doc = KvDoc::new(NORMALIZER_MAGIC);
        doc.set_vec("mean", &self.mean);
        doc.set_vec("std", &self.std);
        doc.write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc = KvDoc::read_file(path, Some(NORMALIZER_MAGIC))?;
        let mean_v = doc.get_vec("mean")?;
        let std_v = doc.get_vec("std")?;
        if mean_v.len() != STATE_DIM || std_v.len() != STATE_DIM {
            return Err(Error::Parse("normalizer dimension mismatch".into()));
        }
        let mut mean = [0.0; STATE_DIM];
        let mut std = [0.0; STATE_DIM];
        mean.copy_from_slice(&mean_v);
        std.copy_from_slice(&std_v);
        Ok(Normalizer { mean, std })
    }

    /// Stable fingerprint of the fitted parameters.
    pub fn fingerprint(&self) -> String {
        let mut doc = KvDoc::new(NORMALIZER_MAGIC);
        doc.set_vec("mean", &self.mean);
        doc.set_vec("std", &self.std);
        crate::kv::fingerprint(doc.render().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ActionClass, Transition};

    fn traj_from_states(values: &[f64]) -> Trajectory {
        // Chain of states whose every feature equals the given value.
        let mk = |v: f64| PatientState { features: [v; STATE_DIM], aptt: 70.0 };
        let transitions = values
            .windows(2)
            .map(|w| Transition {
                state: mk(w[0]),
                action: ActionClass::new(0).unwrap(),
                dose: 0.0,
                reward: 0.0,
                next_state: mk(w[1]),
                terminal: false,
            })
            .collect();
        Trajectory { patient_id: "p0".into(), transitions }
    }

    #[test]
    fn constant_feature_is_floored_to_zero() {
        let trajs = vec![traj_from_states(&[3.0, 3.0, 3.0])];
        let norm = Normalizer::fit(&trajs).unwrap();
        assert_eq!(norm.std[0], STD_FLOOR);
        let out = norm.apply(&trajs);
        assert_eq!(out[0].transitions[0].state.features[0], 0.0);
    }

    #[test]
    fn two_point_population_convention() {
        let trajs = vec![traj_from_states(&[0.0, 2.0])];
        let norm = Normalizer::fit(&trajs).unwrap();
        assert_eq!(norm.mean[0], 1.0);
        assert_eq!(norm.std[0], 1.0);
        let out = norm.apply(&trajs);
        assert_eq!(out[0].transitions[0].state.features[0], -1.0);
        assert_eq!(out[0].transitions[0].next_state.features[0], 1.0);
    }

    #[test]
    fn self_fit_is_zscore() {
        let trajs = vec![traj_from_states(&[0.5, 2.0, -1.0, 4.0, 0.25])];
        let norm = Normalizer::fit(&trajs).unwrap();
        let out = norm.apply(&trajs);
        let refit = Normalizer::fit(&out).unwrap();
        for d in 0..STATE_DIM {
            assert!(refit.mean[d].abs() <= 1e-12, "mean[{d}] = {}", refit.mean[d]);
            assert!((refit.std[d] - 1.0).abs() <= 1e-9, "std[{d}] = {}", refit.std[d]);
        }
    }

    #[test]
    fn identity_normalizer_is_noop() {
        let trajs = vec![traj_from_states(&[0.5, 2.0, -1.0])];
        let out = Normalizer::identity().apply(&trajs);
        assert_eq!(out, trajs);
    }

    #[test]
    fn aptt_passes_through() {
        let trajs = vec![traj_from_states(&[1.0, 5.0])];
        let norm = Normalizer::fit(&trajs).unwrap();
        let out = norm.apply(&trajs);
        assert_eq!(out[0].transitions[0].state.aptt, 70.0);
    }

    #[test]
    fn persist_roundtrip() {
        let trajs = vec![traj_from_states(&[0.5, 2.0, -1.0])];
        let norm = Normalizer::fit(&trajs).unwrap();
        let dir = std::env::temp_dir().join("omgrl_norm_test");
        let path = dir.join("norm.txt");
        norm.save(&path).unwrap();
        assert_eq!(Normalizer::load(&path).unwrap(), norm);
        std::fs::remove_dir_all(&dir).ok();
    }
}
