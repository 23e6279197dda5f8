//! Discrete soft actor-critic with conservative policy evaluation.
//!
//! The critic minimizes a CQL-style objective over the λ-mixture of batch
//! and model-rollout data: Q-values under the current policy's action
//! distribution are pushed down, Q-values on dataset actions pushed up, and
//! a soft Bellman residual anchors everything. Action expectations are
//! computed analytically from the softmax probabilities, never sampled.

use std::path::Path;


use rand_chacha::ChaCha8Rng;

use crate::data::{ActionClass, PatientState, ReplayBuffer, Transition, N_ACTIONS, STATE_DIM};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::nn::{adam_step, ckpt, Activation, AdamConfig, AdamState, DenseNet, Gradients, OutputHead};
use crate::sim::{Policy, RewardModel};

pub const AGENT_MAGIC: &str = "OMGRL-AGT v1";

/// Conservatism and mixture knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqlConfig {
    /// Trade-off weight of the conservative penalty.
    pub alpha: f64,
    /// Fraction of each update batch drawn from the real data.
    pub lambda: f64,
    /// Discount factor.
    pub gamma: f64,
}

impl Default for CqlConfig {
    fn default() -> Self {
        CqlConfig { alpha: 1.0, lambda: 0.5, gamma: 0.99 }
    }
}

impl CqlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Argument(format!("lambda {} not in [0,1]", self.lambda)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Argument(format!("gamma {} not in (0,1)", self.gamma)));
        }
        if self.alpha < 0.0 {
            return Err(Error::Argument("alpha must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Width of the two hidden layers (actor and critic both use three
    /// fully connected layers).
    pub hidden: usize,
    pub activation: Activation,
    pub cql: CqlConfig,
    /// Fixed entropy temperature of the discrete SAC objective.
    pub alpha_ent: f64,
    /// Soft-update rate of the target critic.
    pub tau_target: f64,
    pub actor_adam: AdamConfig,
    pub critic_adam: AdamConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: 64,
            activation: Activation::Relu,
            cql: CqlConfig::default(),
            alpha_ent: 0.05,
            tau_target: 0.005,
            actor_adam: AdamConfig { lr: 3e-4, ..Default::default() },
            critic_adam: AdamConfig { lr: 1e-3, ..Default::default() },
        }
    }
}

/// Q-network with a slow-moving target copy.
#[derive(Debug, Clone)]
pub struct Critic {
    q_net: DenseNet,
    target: DenseNet,
    pub tau_target: f64,
    pub adam: AdamState,
}

impl Critic {
    pub fn new(cfg: &AgentConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let sizes = [STATE_DIM, cfg.hidden, cfg.hidden, N_ACTIONS];
        let q_net = DenseNet::new(&sizes, cfg.activation, OutputHead::Linear, rng)?;
        let adam = AdamState::new(&q_net, cfg.critic_adam);
        Ok(Critic { target: q_net.clone(), q_net, tau_target: cfg.tau_target, adam })
    }

    pub fn q_values(&self, state: &PatientState) -> Result<Vec<f64>> {
        self.q_net.output(&state.features)
    }

    pub fn target_q_values(&self, state: &PatientState) -> Result<Vec<f64>> {
        self.target.output(&state.features)
    }

    pub fn net(&self) -> &DenseNet {
        &self.q_net
    }

    pub fn target_net(&self) -> &DenseNet {
        &self.target
    }

    /// `target ← τ·online + (1−τ)·target`, exactly.
    pub fn soft_update_target(&mut self) {
        let tau = self.tau_target;
        for l in 0..self.q_net.num_layers() {
            for (t, o) in self.target.weights_mut(l).iter_mut().zip(self.q_net.weights(l)) {
                *t = tau * o + (1.0 - tau) * *t;
            }
            for (t, o) in self.target.biases_mut(l).iter_mut().zip(self.q_net.biases(l)) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        }
    }

    pub(crate) fn from_parts(q_net: DenseNet, target: DenseNet, tau_target: f64, adam: AdamState) -> Self {
        Critic { q_net, target, tau_target, adam }
    }
}

/// Softmax policy over the six dose classes.
#[derive(Debug, Clone)]
pub struct Actor {
    policy_net: DenseNet,
    pub alpha_ent: f64,
    pub adam: AdamState,
}

impl Actor {
    pub fn new(cfg: &AgentConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let sizes = [STATE_DIM, cfg.hidden, cfg.hidden, N_ACTIONS];
        let policy_net = DenseNet::new(&sizes, cfg.activation, OutputHead::Softmax, rng)?;
        let adam = AdamState::new(&policy_net, cfg.actor_adam);
        Ok(Actor { policy_net, alpha_ent: cfg.alpha_ent, adam })
    }

    pub fn net(&self) -> &DenseNet {
        &self.policy_net
    }

    pub fn probs(&self, state: &PatientState) -> Result<[f64; N_ACTIONS]> {
        let out = self.policy_net.output(&state.features)?;
        let mut probs = [0.0; N_ACTIONS];
        probs.copy_from_slice(&out);
        Ok(probs)
    }

    pub(crate) fn from_parts(policy_net: DenseNet, alpha_ent: f64, adam: AdamState) -> Self {
        Actor { policy_net, alpha_ent, adam }
    }
}

impl Policy for Actor {
    fn action_probs(&self, state: &PatientState) -> [f64; N_ACTIONS] {
        self.probs(state).expect("actor forward on 16-dim state")
    }
}

/// Sample an action from the actor's softmax (inverse CDF).
pub fn act(actor: &Actor, state: &PatientState, rng: &mut ChaCha8Rng) -> ActionClass {
    actor.sample_action(state, rng)
}

/// Highest-probability action, ties to the lowest index.
pub fn act_greedy(actor: &Actor, state: &PatientState) -> ActionClass {
    actor.greedy_action(state)
}

/// Where a sampled transition came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Batch,
    Model,
}

/// A λ-mixed minibatch with per-transition origin tags.
#[derive(Debug, Clone)]
pub struct MixedBatch {
    pub transitions: Vec<Transition>,
    pub origins: Vec<Origin>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &PatientState> {
        self.transitions.iter().map(|t| &t.state)
    }
}

/// Draw ⌈λ·n⌉ transitions from the batch buffer and the remainder from the
/// model buffer, each uniformly without replacement. When a buffer holds
/// fewer transitions than its share, the draw is capped at what it has.
pub fn sample_mixed_batch(
    d_batch: &ReplayBuffer,
    d_sample: &ReplayBuffer,
    n: usize,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MixedBatch> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!("lambda {lambda} not in [0,1]")));
    }
    let want_batch = (lambda * n as f64).ceil() as usize;
    let want_model = n - want_batch.min(n);
    if want_batch > 0 && d_batch.is_empty() {
        return Err(Error::State("mixed batch needs a nonempty batch buffer".into()));
    }
    if want_model > 0 && d_sample.is_empty() {
        return Err(Error::State("mixed batch needs a nonempty model buffer".into()));
    }
    let n_batch = want_batch.min(d_batch.len());
    let n_model = want_model.min(d_sample.len());
    let mut transitions = Vec::with_capacity(n_batch + n_model);
    let mut origins = Vec::with_capacity(n_batch + n_model);
    if n_batch > 0 {
        for t in d_batch.sample(n_batch, rng)? {
            transitions.push(t.clone());
            origins.push(Origin::Batch);
        }
    }
    if n_model > 0 {
        for t in d_sample.sample(n_model, rng)? {
            transitions.push(t.clone());
            origins.push(Origin::Model);
        }
    }
    Ok(MixedBatch { transitions, origins })
}

/// Which reward enters the Bellman target.
pub enum RewardSource<'a> {
    /// The reward stored on the transition (r_p or model-predicted).
    Stored,
    /// A frozen learned reward evaluated at (s, a).
    Model(&'a dyn RewardModel),
}

/// Losses reported by one critic update.
#[derive(Debug, Clone, Copy)]
pub struct CriticLosses {
    /// ½·E[(Q − y)²] over the mixed batch.
    pub bellman: f64,
    /// α·(E_ρ[Q] − E_batch[Q]), the conservative penalty value.
    pub cql_penalty: f64,
}

/// One conservative critic step.
///
/// Minimizes `α·(E_ρ[Q] − E_batch[Q]) + ½·E_λ[(Q(s,a) − y)²]` where the
/// ρ-term takes the analytic expectation over the actor's probabilities on
/// every batch state, the batch term averages Q on dataset-origin (s, a),
/// and `y = r + γ·E_{a'~π}[Q_target(s',a') − α_ent·ln π(a'|s')]` with zero
/// bootstrap on terminals. The target network is soft-updated afterwards.
pub fn conservative_critic_update(
    critic: &mut Critic,
    actor: &Actor,
    batch: &MixedBatch,
    cfg: &CqlConfig,
    reward_source: RewardSource,
) -> Result<CriticLosses> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Argument("critic update on empty batch".into()));
    }
    let n = batch.len() as f64;
    let n_batch_origin = batch.origins.iter().filter(|o| **o == Origin::Batch).count();

    let mut grads = Gradients::zeros_like(&critic.q_net);
    let mut bellman_acc = 0.0;
    let mut rho_acc = 0.0;
    let mut data_acc = 0.0;

    for (i, (t, origin)) in batch.transitions.iter().zip(&batch.origins).enumerate() {
        let r = match &reward_source {
            RewardSource::Stored => t.reward,
            RewardSource::Model(m) => m.reward(&t.state, t.action)?,
        };
        let target_value = if t.terminal {
            0.0
        } else {
            let probs = actor.probs(&t.next_state)?;
            let q_next = critic.target_q_values(&t.next_state)?;
            let mut v = 0.0;
            for a in 0..N_ACTIONS {
                v += probs[a] * (q_next[a] - actor.alpha_ent * probs[a].ln());
            }
            v
        };
        let y = r + cfg.gamma * target_value;
        if !y.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite Bellman target at batch index {i} (r = {r}, bootstrap = {})",
                y - r
            )));
        }

        let (q, cache) = critic.q_net.forward(&t.state.features)?;
        let probs = actor.probs(&t.state)?;
        let residual = q[t.action.index()] - y;
        bellman_acc += 0.5 * residual * residual;
        let rho_q: f64 = probs.iter().zip(&q).map(|(p, qa)| p * qa).sum();
        rho_acc += rho_q;

        let mut upstream = [0.0f64; N_ACTIONS];
        for a in 0..N_ACTIONS {
            upstream[a] += cfg.alpha * probs[a] / n;
        }
        upstream[t.action.index()] += residual / n;
        if *origin == Origin::Batch {
            data_acc += q[t.action.index()];
            upstream[t.action.index()] -= cfg.alpha / n_batch_origin as f64;
        }
        critic.q_net.backward_accumulate(&cache, &upstream, &mut grads)?;
    }

    adam_step(&mut critic.q_net, &grads, &mut critic.adam)?;
    critic.soft_update_target();

    let rho_mean = rho_acc / n;
    let data_mean = if n_batch_origin > 0 { data_acc / n_batch_origin as f64 } else { 0.0 };
    Ok(CriticLosses { bellman: bellman_acc / n, cql_penalty: cfg.alpha * (rho_mean - data_mean) })
}

/// One policy-improvement step: minimize
/// `E_s[Σ_a π(a|s)·(α_ent·ln π(a|s) − Q(s,a))]` with the critic frozen.
/// Returns the loss value before the step.
pub fn policy_improvement(
    actor: &mut Actor,
    critic: &Critic,
    states: &[PatientState],
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Argument("policy improvement on empty state batch".into()));
    }
    let n = states.len() as f64;
    let mut grads = Gradients::zeros_like(&actor.policy_net);
    let mut loss_acc = 0.0;
    for s in states {
        let (probs, cache) = actor.policy_net.forward(&s.features)?;
        let q = critic.q_values(s)?;
        let mut upstream = vec![0.0f64; N_ACTIONS];
        for a in 0..N_ACTIONS {
            let log_p = probs[a].ln();
            loss_acc += probs[a] * (actor.alpha_ent * log_p - q[a]);
            upstream[a] = (actor.alpha_ent * (log_p + 1.0) - q[a]) / n;
        }
        actor.policy_net.backward_accumulate(&cache, &upstream, &mut grads)?;
    }
    let loss = loss_acc / n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite policy loss {loss}")));
    }
    adam_step(&mut actor.policy_net, &grads, &mut actor.adam)?;
    Ok(loss)
}

/// Gradient norm of the policy objective on a frozen batch, without
/// stepping; exposed for stationarity checks.
pub fn policy_gradient_norm(actor: &Actor, critic: &Critic, states: &[PatientState]) -> Result<f64> {
    let n = states.len() as f64;
    let mut grads = Gradients::zeros_like(&actor.policy_net);
    for s in states {
        let (probs, cache) = actor.policy_net.forward(&s.features)?;
        let q = critic.q_values(s)?;
        let mut upstream = vec![0.0f64; N_ACTIONS];
        for a in 0..N_ACTIONS {
            upstream[a] = (actor.alpha_ent * (probs[a].ln() + 1.0) - q[a]) / n;
        }
        actor.policy_net.backward_accumulate(&cache, &upstream, &mut grads)?;
    }
    Ok(grads.param_norm())
}

/// Persist actor, critic (online and target), both Adam states and the
/// conservatism config.
pub fn save_agent(path: &Path, actor: &Actor, critic: &Critic, cql: &CqlConfig) -> Result<()> {
    let mut doc = KvDoc::new(AGENT_MAGIC);
    doc.set_f64("alpha_ent", actor.alpha_ent);
    doc.set_f64("tau_target", critic.tau_target);
    doc.set_f64("cql.alpha", cql.alpha);
    doc.set_f64("cql.lambda", cql.lambda);
    doc.set_f64("cql.gamma", cql.gamma);
    ckpt::write_net(&mut doc, "actor.", &actor.policy_net);
    ckpt::write_adam(&mut doc, "actor.", &actor.adam);
    ckpt::write_net(&mut doc, "critic.", &critic.q_net);
    ckpt::write_adam(&mut doc, "critic.", &critic.adam);
    ckpt::write_net(&mut doc, "target.", &critic.target);
    doc.write_file(path)
}

pub fn load_agent(path: &Path) -> Result<(Actor, Critic, CqlConfig)> {
    let doc = KvDoc::read_file(path, Some(AGENT_MAGIC))?;
    let policy_net = ckpt::read_net(&doc, "actor.")?;
    let actor_adam = ckpt::read_adam(&doc, "actor.", &policy_net)?;
    let actor = Actor::from_parts(policy_net, doc.get_f64("alpha_ent")?, actor_adam);
    let q_net = ckpt::read_net(&doc, "critic.")?;
    let critic_adam = ckpt::read_adam(&doc, "critic.", &q_net)?;
    let target = ckpt::read_net(&doc, "target.")?;
    let critic = Critic::from_parts(q_net, target, doc.get_f64("tau_target")?, critic_adam);
    let cql = CqlConfig {
        alpha: doc.get_f64("cql.alpha")?,
        lambda: doc.get_f64("cql.lambda")?,
        gamma: doc.get_f64("cql.gamma")?,
    };
    Ok((actor, critic, cql))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream2, seeded_rng};
    use rand::Rng;

    fn state(tag: f64) -> PatientState {
        let mut features = [0.0; STATE_DIM];
        features[0] = tag;
        PatientState { features, aptt: 70.0 }
    }

    fn transition(tag: f64, action: usize, reward: f64, terminal: bool) -> Transition {
        Transition {
            state: state(tag),
            action: ActionClass::new(action).unwrap(),
            dose: 0.0,
            reward,
            next_state: state(tag + 0.5),
            terminal,
        }
    }

    fn buffer_of(transitions: Vec<Transition>) -> ReplayBuffer {
        let mut buf = ReplayBuffer::unbounded();
        for t in transitions {
            buf.push(t);
        }
        buf
    }

    fn small_agent(seed: u64) -> (Actor, Critic, AgentConfig) {
        let cfg = AgentConfig { hidden: 32, ..Default::default() };
        let mut rng = seeded_rng(seed);
        let actor = Actor::new(&cfg, &mut rng).unwrap();
        let critic = Critic::new(&cfg, &mut rng).unwrap();
        (actor, critic, cfg)
    }

    #[test]
    fn mixture_endpoints() {
        let d_batch = buffer_of((0..20).map(|i| transition(i as f64, 0, 1.0, false)).collect());
        let d_sample = buffer_of((0..20).map(|i| transition(i as f64, 1, -1.0, false)).collect());
        let mut rng = seeded_rng(1);

        let all_batch = sample_mixed_batch(&d_batch, &d_sample, 10, 1.0, &mut rng).unwrap();
        assert!(all_batch.origins.iter().all(|o| *o == Origin::Batch));
        assert_eq!(all_batch.len(), 10);

        let all_model = sample_mixed_batch(&d_batch, &d_sample, 10, 0.0, &mut rng).unwrap();
        assert!(all_model.origins.iter().all(|o| *o == Origin::Model));

        let err = sample_mixed_batch(&ReplayBuffer::unbounded(), &d_sample, 10, 0.5, &mut rng);
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn half_mixture_splits_evenly() {
        let d_batch = buffer_of((0..100).map(|i| transition(i as f64, 0, 1.0, false)).collect());
        let d_sample = buffer_of((0..100).map(|i| transition(i as f64, 1, -1.0, false)).collect());
        let mut rng = seeded_rng(2);
        let batch = sample_mixed_batch(&d_batch, &d_sample, 128, 0.5, &mut rng).unwrap();
        let n_batch = batch.origins.iter().filter(|o| **o == Origin::Batch).count();
        assert_eq!(n_batch, 64);
        assert_eq!(batch.len(), 128);
    }

    #[test]
    fn degenerate_bellman_regresses_to_reward() {
        // α = 0, γ → 0 is plain regression of Q(s,a) toward r.
        let (actor, mut critic, _) = small_agent(3);
        critic.adam.config.lr = 3e-3;
        let cfg = CqlConfig { alpha: 0.0, lambda: 1.0, gamma: 1e-12 };
        let t = transition(0.3, 2, 0.75, false);
        let batch = MixedBatch { transitions: vec![t.clone()], origins: vec![Origin::Batch] };
        for _ in 0..3000 {
            conservative_critic_update(&mut critic, &actor, &batch, &cfg, RewardSource::Stored)
                .unwrap();
        }
        let q = critic.q_values(&t.state).unwrap();
        assert!((q[2] - 0.75).abs() <= 1e-3, "Q = {}", q[2]);
    }

    #[test]
    fn penalty_step_decreases_gap() {
        // Rewards set to the current Q(s,a) with γ = 0 zero out the Bellman
        // term, isolating the conservative penalty.
        let (actor, mut critic, _) = small_agent(5);
        critic.adam.config.lr = 1e-3;
        let cfg = CqlConfig { alpha: 1.0, lambda: 0.5, gamma: 1e-12 };
        let mut transitions = Vec::new();
        let mut origins = Vec::new();
        for i in 0..16 {
            let mut t = transition(i as f64 * 0.1 - 0.8, i % N_ACTIONS, 0.0, false);
            t.reward = critic.q_values(&t.state).unwrap()[t.action.index()];
            transitions.push(t);
            origins.push(if i % 2 == 0 { Origin::Batch } else { Origin::Model });
        }
        let batch = MixedBatch { transitions, origins };

        let gap = |critic: &Critic| -> f64 {
            let mut rho = 0.0;
            let mut data = 0.0;
            let mut n_data = 0.0;
            for (t, o) in batch.transitions.iter().zip(&batch.origins) {
                let q = critic.q_values(&t.state).unwrap();
                let p = actor.probs(&t.state).unwrap();
                rho += p.iter().zip(&q).map(|(pi, qi)| pi * qi).sum::<f64>();
                if *o == Origin::Batch {
                    data += q[t.action.index()];
                    n_data += 1.0;
                }
            }
            rho / batch.len() as f64 - data / n_data
        };

        let before = gap(&critic);
        conservative_critic_update(&mut critic, &actor, &batch, &cfg, RewardSource::Stored).unwrap();
        let after = gap(&critic);
        assert!(after < before, "penalty gap did not decrease: {before} -> {after}");
    }

    #[test]
    fn two_action_bandit_prefers_the_rewarded_action() {
        // Single state, rewards {1, 0} for actions {0, 1}, γ = 0, α = 0:
        // after convergence the greedy action is 0.
        let (mut actor, mut critic, _) = small_agent(7);
        critic.adam.config.lr = 3e-3;
        actor.adam.config.lr = 3e-3;
        actor.alpha_ent = 0.0;
        let cfg = CqlConfig { alpha: 0.0, lambda: 1.0, gamma: 1e-12 };
        let batch = MixedBatch {
            transitions: vec![
                transition(0.0, 0, 1.0, false),
                transition(0.0, 1, 0.0, false),
            ],
            origins: vec![Origin::Batch, Origin::Batch],
        };
        let states: Vec<PatientState> = batch.states().cloned().collect();
        for _ in 0..2000 {
            conservative_critic_update(&mut critic, &actor, &batch, &cfg, RewardSource::Stored)
                .unwrap();
            policy_improvement(&mut actor, &critic, &states).unwrap();
        }
        assert_eq!(act_greedy(&actor, &state(0.0)).index(), 0);
        let q = critic.q_values(&state(0.0)).unwrap();
        assert!((q[0] - 1.0).abs() < 0.05 && q[1].abs() < 0.05, "q = {q:?}");
    }

    #[test]
    fn lambda_one_alpha_zero_reports_zero_penalty() {
        let (actor, mut critic, _) = small_agent(9);
        let cfg = CqlConfig { alpha: 0.0, lambda: 1.0, gamma: 0.9 };
        let batch = MixedBatch {
            transitions: vec![transition(0.0, 0, 0.5, false)],
            origins: vec![Origin::Batch],
        };
        let losses =
            conservative_critic_update(&mut critic, &actor, &batch, &cfg, RewardSource::Stored)
                .unwrap();
        assert_eq!(losses.cql_penalty, 0.0);
    }

    #[test]
    fn actor_argmax_follows_frozen_q() {
        // α_ent = 0 and a fixed critic with a clear argmax per state.
        let (mut actor, mut critic, _) = small_agent(11);
        actor.alpha_ent = 0.0;
        actor.adam.config.lr = 3e-3;
        // Rig the critic: zero everything, bias head toward action 4.
        let n_layers = critic.q_net.num_layers();
        for l in 0..n_layers {
            critic.q_net.weights_mut(l).fill(0.0);
            critic.q_net.biases_mut(l).fill(0.0);
        }
        critic.q_net.biases_mut(n_layers - 1)[4] = 1.0;
        let states: Vec<PatientState> = (0..8).map(|i| state(i as f64 * 0.2)).collect();
        for _ in 0..500 {
            policy_improvement(&mut actor, &critic, &states).unwrap();
        }
        for s in &states {
            assert_eq!(act_greedy(&actor, s).index(), 4);
        }
    }

    #[test]
    fn uniform_policy_is_stationary_under_flat_q() {
        let (mut actor, mut critic, _) = small_agent(13);
        // Flat critic: identical Q for every action.
        let n_layers = critic.q_net.num_layers();
        for l in 0..n_layers {
            critic.q_net.weights_mut(l).fill(0.0);
            critic.q_net.biases_mut(l).fill(0.0);
        }
        critic.q_net.biases_mut(n_layers - 1).fill(0.37);
        // Uniform actor: zero logits.
        let n_layers = actor.policy_net.num_layers();
        for l in 0..n_layers {
            actor.policy_net.weights_mut(l).fill(0.0);
            actor.policy_net.biases_mut(l).fill(0.0);
        }
        let states: Vec<PatientState> = (0..4).map(|i| state(i as f64 * 0.3)).collect();
        let norm = policy_gradient_norm(&actor, &critic, &states).unwrap();
        assert!(norm <= 1e-10, "gradient norm {norm}");
    }

    #[test]
    fn strong_entropy_pulls_policy_toward_uniform() {
        let (mut actor, mut critic, _) = small_agent(15);
        actor.alpha_ent = 5.0;
        actor.adam.config.lr = 1e-3;
        // Fixed critic preferring action 0.
        let n_layers = critic.q_net.num_layers();
        for l in 0..n_layers {
            critic.q_net.weights_mut(l).fill(0.0);
            critic.q_net.biases_mut(l).fill(0.0);
        }
        critic.q_net.biases_mut(n_layers - 1)[0] = 1.0;
        let states: Vec<PatientState> = (0..4).map(|i| state(i as f64 * 0.3)).collect();
        let kl_to_uniform = |actor: &Actor| -> f64 {
            let mut kl = 0.0;
            for s in &states {
                for p in actor.probs(s).unwrap() {
                    kl += p * (p * N_ACTIONS as f64).ln();
                }
            }
            kl / states.len() as f64
        };
        let before = kl_to_uniform(&actor);
        for _ in 0..300 {
            policy_improvement(&mut actor, &critic, &states).unwrap();
        }
        let after = kl_to_uniform(&actor);
        assert!(after < before, "KL to uniform did not decrease: {before} -> {after}");
    }

    #[test]
    fn uniform_actor_samples_uniformly() {
        let (mut actor, _, _) = small_agent(17);
        let n_layers = actor.policy_net.num_layers();
        for l in 0..n_layers {
            actor.policy_net.weights_mut(l).fill(0.0);
            actor.policy_net.biases_mut(l).fill(0.0);
        }
        let mut rng = seeded_rng(21);
        let s = state(0.0);
        let draws = 60_000;
        let mut counts = [0usize; N_ACTIONS];
        for _ in 0..draws {
            counts[act(&actor, &s, &mut rng).index()] += 1;
        }
        let p = 1.0 / N_ACTIONS as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (a, c) in counts.iter().enumerate() {
            let dev = (*c as f64 - draws as f64 * p).abs();
            assert!(dev <= 3.0 * sigma, "action {a}: deviation {dev:.1}");
        }
    }

    #[test]
    fn greedy_action_handles_margins_and_ties() {
        let (mut actor, _, _) = small_agent(19);
        let n_layers = actor.policy_net.num_layers();
        for l in 0..n_layers {
            actor.policy_net.weights_mut(l).fill(0.0);
            actor.policy_net.biases_mut(l).fill(0.0);
        }
        // Dominant logit.
        actor.policy_net.biases_mut(n_layers - 1)[3] = 50.0;
        assert_eq!(act_greedy(&actor, &state(0.0)).index(), 3);
        // Exact tie between classes 2 and 4 resolves low.
        actor.policy_net.biases_mut(n_layers - 1).fill(0.0);
        actor.policy_net.biases_mut(n_layers - 1)[2] = 1.25;
        actor.policy_net.biases_mut(n_layers - 1)[4] = 1.25;
        assert_eq!(act_greedy(&actor, &state(0.0)).index(), 2);
    }

    #[test]
    fn soft_update_is_exact_convex_mix() {
        let (actor, mut critic, _) = small_agent(23);
        let _ = &actor;
        let online: Vec<f64> = critic.q_net.weights(0).to_vec();
        let before: Vec<f64> = critic.target.weights(0).to_vec();
        critic.tau_target = 0.25;
        critic.soft_update_target();
        for ((t, o), b) in critic.target.weights(0).iter().zip(&online).zip(&before) {
            assert_eq!(*t, 0.25 * o + 0.75 * b);
        }
    }

    #[test]
    fn actor_outputs_stay_on_simplex() {
        let (actor, _, _) = small_agent(29);
        let mut rng = seeded_rng(31);
        for _ in 0..200 {
            let mut features = [0.0; STATE_DIM];
            for f in features.iter_mut() {
                *f = rng.gen_range(-3.0..3.0);
            }
            let probs = actor.probs(&PatientState { features, aptt: 50.0 }).unwrap();
            assert!(probs.iter().all(|p| *p >= 0.0));
            assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn toy_mdp_matches_value_iteration() {
        // Three states (basis-vector encodings), six actions, deterministic
        // ring transitions, fixed reward table. Value iteration is the
        // oracle; fitted conservative Q-learning with α = 0 must find the
        // same greedy policy.
        let gamma = 0.9;
        let reward = |s: usize, a: usize| -> f64 {
            match (s, a) {
                (0, 1) => 1.0,
                (0, _) => 0.1,
                (1, 4) => 0.8,
                (1, _) => 0.0,
                (2, 0) => 0.6,
                (2, 3) => 0.5,
                _ => -0.2,
            }
        };
        let next = |s: usize, a: usize| -> usize { (s + a) % 3 };

        // Value iteration oracle.
        let mut v = [0.0f64; 3];
        for _ in 0..500 {
            let mut nv = [0.0f64; 3];
            for s in 0..3 {
                nv[s] = (0..N_ACTIONS)
                    .map(|a| reward(s, a) + gamma * v[next(s, a)])
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            v = nv;
        }
        let optimal: Vec<usize> = (0..3)
            .map(|s| {
                (0..N_ACTIONS)
                    .map(|a| reward(s, a) + gamma * v[next(s, a)])
                    .enumerate()
                    .max_by(|(_, x), (_, y)| x.partial_cmp(y).unwrap())
                    .unwrap()
                    .0
            })
            .collect();

        let encode = |s: usize| -> PatientState {
            let mut features = [0.0; STATE_DIM];
            features[s] = 1.0;
            PatientState { features, aptt: 70.0 }
        };
        let mut transitions = Vec::new();
        for s in 0..3 {
            for a in 0..N_ACTIONS {
                transitions.push(Transition {
                    state: encode(s),
                    action: ActionClass::new(a).unwrap(),
                    dose: 0.0,
                    reward: reward(s, a),
                    next_state: encode(next(s, a)),
                    terminal: false,
                });
            }
        }
        let d_batch = buffer_of(transitions);

        let cfg = AgentConfig {
            hidden: 32,
            alpha_ent: 1e-3,
            tau_target: 0.05,
            cql: CqlConfig { alpha: 0.0, lambda: 1.0, gamma },
            actor_adam: AdamConfig { lr: 3e-3, ..Default::default() },
            critic_adam: AdamConfig { lr: 3e-3, ..Default::default() },
            ..Default::default()
        };
        let mut rng = seeded_rng(33);
        let mut actor = Actor::new(&cfg, &mut rng).unwrap();
        let mut critic = Critic::new(&cfg, &mut rng).unwrap();
        for step in 0..4000 {
            let mut batch_rng = derive_stream2(35, step, 0);
            let batch = sample_mixed_batch(&d_batch, &d_batch, 18, 1.0, &mut batch_rng).unwrap();
            conservative_critic_update(&mut critic, &actor, &batch, &cfg.cql, RewardSource::Stored)
                .unwrap();
            let states: Vec<PatientState> = batch.states().cloned().collect();
            policy_improvement(&mut actor, &critic, &states).unwrap();
        }
        for s in 0..3 {
            assert_eq!(
                act_greedy(&actor, &encode(s)).index(),
                optimal[s],
                "state {s}: expected {:?}",
                optimal
            );
        }
    }

    #[test]
    fn agent_checkpoint_roundtrip() {
        let (mut actor, mut critic, cfg) = small_agent(37);
        // Take a step so Adam moments are nonzero.
        let batch = MixedBatch {
            transitions: vec![transition(0.1, 1, 0.4, false)],
            origins: vec![Origin::Batch],
        };
        conservative_critic_update(&mut critic, &actor, &batch, &cfg.cql, RewardSource::Stored)
            .unwrap();
        policy_improvement(&mut actor, &critic, &[state(0.1)]).unwrap();

        let dir = std::env::temp_dir().join("omgrl_agent_ckpt_test");
        let path = dir.join("agent.ckpt");
        save_agent(&path, &actor, &critic, &cfg.cql).unwrap();
        let (actor2, critic2, cql2) = load_agent(&path).unwrap();
        assert_eq!(actor.policy_net, actor2.policy_net);
        assert_eq!(actor.adam, actor2.adam);
        assert_eq!(critic.q_net, critic2.q_net);
        assert_eq!(critic.target, critic2.target);
        assert_eq!(cfg.cql, cql2);
        std::fs::remove_dir_all(&dir).ok();
    }
}
