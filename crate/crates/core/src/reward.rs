//! Guided reward learning.
//!
//! A bounded reward network r_ψ(s, a) is trained so expert trajectory
//! segments score higher than policy-sampled segments, with the partition
//! function estimated by self-normalized importance sampling over the
//! sampled segments. All weight arithmetic stays in the log domain.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ActionClass, PatientState, Trajectory, Transition, N_ACTIONS, STATE_DIM};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::nn::{adam_step, ckpt, Activation, AdamState, DenseNet, Gradients, OutputHead};
use crate::sim::{Policy, RewardModel};

pub const REWARD_MAGIC: &str = "OMGRL-RWD v1";

/// Default output bound of the reward network.
pub const R_MAX: f64 = 10.0;

/// A fixed-length run of transitions used for reward learning.
pub type Segment = Vec<Transition>;

/// Bounded per-step reward network over (state ⊕ one-hot action).
///
/// Three fully connected layers with a scaled-tanh squash,
/// `r = r_max·tanh(z/r_max)`, keeping outputs in [−r_max, r_max] so segment
/// reward sums can be exponentiated safely.
#[derive(Debug, Clone)]
pub struct RewardNet {
    net: DenseNet,
    pub r_max: f64,
}

const REWARD_INPUT_DIM: usize = STATE_DIM + N_ACTIONS;

impl RewardNet {
    pub fn new(hidden: usize, activation: Activation, r_max: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if r_max <= 0.0 {
            return Err(Error::Argument("r_max must be positive".into()));
        }
        let sizes = [REWARD_INPUT_DIM, hidden, hidden, 1];
        Ok(RewardNet { net: DenseNet::new(&sizes, activation, OutputHead::Linear, rng)?, r_max })
    }

    pub fn from_net(net: DenseNet, r_max: f64) -> Result<Self> {
        if net.in_dim() != REWARD_INPUT_DIM || net.out_dim() != 1 {
            return Err(Error::Shape(format!(
                "reward net must map {REWARD_INPUT_DIM} -> 1, got {} -> {}",
                net.in_dim(),
                net.out_dim()
            )));
        }
        Ok(RewardNet { net, r_max })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    fn encode(state: &PatientState, action: ActionClass) -> [f64; REWARD_INPUT_DIM] {
        let mut x = [0.0; REWARD_INPUT_DIM];
        x[..STATE_DIM].copy_from_slice(&state.features);
        x[STATE_DIM + action.index()] = 1.0;
        x
    }

    /// Squashed reward for one (state, action).
    pub fn reward_value(&self, state: &PatientState, action: ActionClass) -> Result<f64> {
        let z = self.net.output(&Self::encode(state, action))?[0];
        Ok(self.r_max * (z / self.r_max).tanh())
    }

    /// Accumulate `coeff · ∂r/∂ψ` into `grads` for one (state, action).
    fn accumulate_reward_grad(
        &self,
        state: &PatientState,
        action: ActionClass,
        coeff: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let (out, cache) = self.net.forward(&Self::encode(state, action))?;
        let t = (out[0] / self.r_max).tanh();
        let dsquash = 1.0 - t * t;
        self.net.backward_accumulate(&cache, &[coeff * dsquash], grads)?;
        Ok(self.r_max * t)
    }
}

impl RewardModel for RewardNet {
    fn reward(&self, state: &PatientState, action: ActionClass) -> Result<f64> {
        self.reward_value(state, action)
    }
}

/// Sum of per-step rewards over a segment.
pub fn trajectory_reward(net: &RewardNet, segment: &[Transition]) -> Result<f64> {
    if segment.is_empty() {
        return Err(Error::Argument("trajectory reward of an empty segment".into()));
    }
    let mut total = 0.0;
    for t in segment {
        total += net.reward_value(&t.state, t.action)?;
    }
    Ok(total)
}

/// Log-sum-exp normalization of log-weights into weights summing to one.
pub fn normalized_weights(log_weights: &[f64]) -> Vec<f64> {
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = log_weights.iter().map(|lw| (lw - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Sampled segments with their importance weights.
#[derive(Debug, Clone)]
pub struct WeightedSampleSet {
    pub segments: Vec<Segment>,
    /// Unnormalized log-weights, `Σ_t r_ψ(s_t,a_t) − Σ_t ln π(a_t|s_t)`.
    pub log_weights: Vec<f64>,
    /// Self-normalized weights (sum to 1).
    pub weights: Vec<f64>,
}

impl WeightedSampleSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Variance floor on the policy likelihood inside importance weights; a
/// near-deterministic sampler would otherwise hand single segments
/// unbounded weight.
pub const WEIGHT_PROB_FLOOR: f64 = 1e-3;

/// Importance weights of sampled segments under the current reward and
/// policy: `w_j ∝ exp(Σ_t r_ψ) / Π_t π(a_t|s_t)`, computed in log domain
/// with the policy likelihood floored at [`WEIGHT_PROB_FLOOR`].
pub fn importance_weights(
    net: &RewardNet,
    policy: &dyn Policy,
    segments: Vec<Segment>,
) -> Result<WeightedSampleSet> {
    if segments.is_empty() {
        return Err(Error::Argument("importance weights of an empty segment set".into()));
    }
    let mut log_weights = Vec::with_capacity(segments.len());
    for seg in &segments {
        let mut log_w = 0.0;
        for t in seg {
            log_w += net.reward_value(&t.state, t.action)?;
            let p = policy.action_probs(&t.state)[t.action.index()].max(WEIGHT_PROB_FLOOR);
            log_w -= p.ln();
        }
        log_weights.push(log_w);
    }
    let weights = normalized_weights(&log_weights);
    Ok(WeightedSampleSet { segments, log_weights, weights })
}

/// Value and parameter gradient of the guided-reward objective
/// `J = (1/N)·Σ_i R(τ_i) − Σ_j w̃_j·R(τ_j)` (expert up, weighted samples
/// down); the returned gradient is of the *descent* loss −J.
fn gcl_gradient(
    net: &RewardNet,
    expert: &[Segment],
    samples: &WeightedSampleSet,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(&net.net);
    let n = expert.len() as f64;
    let mut objective = 0.0;
    for seg in expert {
        for t in seg {
            objective += net.accumulate_reward_grad(&t.state, t.action, -1.0 / n, &mut grads)? / n;
        }
    }
    for (seg, w) in samples.segments.iter().zip(&samples.weights) {
        for t in seg {
            objective -= w * net.accumulate_reward_grad(&t.state, t.action, *w, &mut grads)?;
        }
    }
    Ok((objective, grads))
}

/// What one reward step reports.
#[derive(Debug, Clone, Copy)]
pub struct GclStats {
    /// The importance-corrected objective (expert mean minus weighted
    /// sample mean of segment rewards).
    pub loss: f64,
    /// Norm of the objective gradient, before regularization.
    pub grad_norm: f64,
}

/// One ascent step on the guided-reward objective (realized as Adam descent
/// on its negation plus optional L2 on ψ).
pub fn gcl_update(
    net: &mut RewardNet,
    adam: &mut AdamState,
    expert: &[Segment],
    samples: &WeightedSampleSet,
    l2: f64,
) -> Result<GclStats> {
    if expert.is_empty() || samples.is_empty() {
        return Err(Error::Argument("gcl update needs nonempty expert and sample sets".into()));
    }
    let (objective, mut grads) = gcl_gradient(net, expert, samples)?;
    let grad_norm = grads.param_norm();
    if l2 > 0.0 {
        for l in 0..net.net.num_layers() {
            for (g, w) in grads.d_w[l].iter_mut().zip(net.net.weights(l)) {
                *g += l2 * w;
            }
            for (g, b) in grads.d_b[l].iter_mut().zip(net.net.biases(l)) {
                *g += l2 * b;
            }
        }
    }
    adam_step(&mut net.net, &grads, adam)?;
    Ok(GclStats { loss: objective, grad_norm })
}

/// Number of length-`h` windows the trajectories admit.
pub fn window_count(trajectories: &[Trajectory], h: usize) -> usize {
    trajectories.iter().map(|t| t.len().saturating_sub(h - 1)).sum()
}

/// Sample `n` contiguous length-`h` windows uniformly over all admissible
/// windows (trajectories weighted by their window count).
pub fn segment_expert(
    trajectories: &[Trajectory],
    h: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Segment>> {
    if h == 0 {
        return Err(Error::Argument("segment length must be at least 1".into()));
    }
    let total = window_count(trajectories, h);
    if total == 0 {
        return Err(Error::Degenerate(format!("no trajectory admits windows of length {h}")));
    }
    let mut segments = Vec::with_capacity(n);
    for _ in 0..n {
        let mut k = rng.gen_range(0..total);
        for traj in trajectories {
            let windows = traj.len().saturating_sub(h - 1);
            if k < windows {
                segments.push(traj.transitions[k..k + h].to_vec());
                break;
            }
            k -= windows;
        }
    }
    Ok(segments)
}

/// Persist the reward network, optimizer moments, bound and segment length.
pub fn save_reward(path: &Path, net: &RewardNet, adam: &AdamState, segment_len: usize) -> Result<()> {
    let mut doc = KvDoc::new(REWARD_MAGIC);
    doc.set_f64("r_max", net.r_max);
    doc.set("segment_len", segment_len);
    ckpt::write_net(&mut doc, "", &net.net);
    ckpt::write_adam(&mut doc, "", adam);
    doc.write_file(path)
}

pub fn load_reward(path: &Path) -> Result<(RewardNet, AdamState, usize)> {
    let doc = KvDoc::read_file(path, Some(REWARD_MAGIC))?;
    let net = ckpt::read_net(&doc, "")?;
    let adam = ckpt::read_adam(&doc, "", &net)?;
    let reward = RewardNet::from_net(net, doc.get_f64("r_max")?)?;
    Ok((reward, adam, doc.get_usize("segment_len")?))
}
