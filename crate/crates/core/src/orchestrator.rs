//! The training orchestrator: dyna-style rollouts, guided reward steps,
//! conservative critic updates and policy improvement per epoch, with
//! checkpointing that supports bitwise-identical resumption.
//!
//! Three modes share one loop: the full guided-reward pipeline, the
//! conservative model-based ablation (no reward learning), and the
//! model-free ablation (no rollouts, batch data only). Every random choice
//! derives from (seed, epoch, purpose), so a resumed run replays the exact
//! streams an uninterrupted run would use.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::agent::{
    conservative_critic_update, load_agent, policy_improvement, sample_mixed_batch, save_agent,
    Actor, AgentConfig, Critic, RewardSource,
};
use crate::data::{PatientState, ReplayBuffer, Trajectory, Transition, STATE_DIM};
use crate::dynamics::{rollout_batch, DynamicsEnsemble, RolloutConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate_return_dual;
use crate::kv::{fingerprint, vec_from_hex, vec_to_hex, KvDoc};
use crate::nn::{Activation, AdamConfig, AdamState};
use crate::reward::{
    gcl_update, importance_weights, load_reward, save_reward, segment_expert, RewardNet, Segment,
};
use crate::rng::{derive_seed, derive_stream2};
use crate::sim::TransitionSampler;

pub const RUN_MAGIC: &str = "OMGRL-RUN v1";
const DSAMPLE_MAGIC: &str = "OMGRL-DSAMPLE v1";

/// Training variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Guided reward learning: rollouts, reward steps, conservative updates
    /// driven by the learned reward.
    Omgrl,
    /// Conservative model-based ablation: rollouts, stored rewards.
    Combo,
    /// Model-free ablation: batch data only.
    Modelfree,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Omgrl => "omgrl",
            Mode::Combo => "combo",
            Mode::Modelfree => "modelfree",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "omgrl" => Ok(Mode::Omgrl),
            "combo" => Ok(Mode::Combo),
            "modelfree" => Ok(Mode::Modelfree),
            other => Err(Error::Parse(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    /// Inner reward-learning steps per epoch (K).
    pub reward_steps: usize,
    /// Rollout horizon (h) and branch count (b); b = 0 disables rollouts.
    pub rollout_horizon: usize,
    pub rollout_batch: usize,
    pub agent: AgentConfig,
    /// Mixed-batch size for critic and actor updates.
    pub agent_batch: usize,
    pub reward_hidden: usize,
    pub reward_activation: Activation,
    pub reward_r_max: f64,
    pub reward_l2: f64,
    pub reward_adam: AdamConfig,
    /// Segments per side of each reward step.
    pub reward_batch: usize,
    /// Window length for reward learning; 0 means "use the rollout horizon".
    /// Short windows keep the self-normalized importance weights from
    /// collapsing onto single segments.
    pub reward_segment_len: usize,
    pub dsample_capacity: usize,
    /// Evaluate every this many epochs (0 disables evaluation).
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Omgrl,
            epochs: 500,
            reward_steps: 10,
            rollout_horizon: 5,
            rollout_batch: 64,
            agent: AgentConfig::default(),
            agent_batch: 128,
            reward_hidden: 64,
            reward_activation: Activation::Relu,
            reward_r_max: crate::reward::R_MAX,
            reward_l2: 1e-4,
            reward_adam: AdamConfig { lr: 3e-4, ..Default::default() },
            reward_batch: 32,
            reward_segment_len: 1,
            dsample_capacity: 100_000,
            eval_interval: 10,
            eval_episodes: 20,
            eval_steps: 36,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.cql.validate()?;
        if self.mode == Mode::Omgrl && self.reward_steps == 0 {
            return Err(Error::Argument("guided mode needs at least one reward step".into()));
        }
        if self.mode != Mode::Modelfree && self.rollout_batch > 0 && self.rollout_horizon == 0 {
            return Err(Error::Argument("rollout horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective λ: the model-free ablation never touches model data.
    fn lambda(&self) -> f64 {
        if self.mode == Mode::Modelfree || self.rollout_batch == 0 {
            1.0
        } else {
            self.agent.cql.lambda
        }
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub bellman_loss: f64,
    pub cql_penalty: f64,
    pub policy_loss: f64,
    pub reward_loss: Option<f64>,
    pub eval_rp: Option<f64>,
    pub eval_rpsi: Option<f64>,
}

pub const METRIC_HEADER: &str =
    "epoch,bellman_loss,cql_penalty,policy_loss,reward_loss,eval_rp,eval_rpsi";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render the metric history as CSV (stable column order).
pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRIC_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.bellman_loss,
            r.cql_penalty,
            r.policy_loss,
            opt(r.reward_loss),
            opt(r.eval_rp),
            opt(r.eval_rpsi),
        );
    }
    out
}

/// Everything needed to continue (or inspect) a run.
pub struct TrainState {
    pub mode: Mode,
    pub epoch: usize,
    pub seed: u64,
    pub actor: Actor,
    pub critic: Critic,
    pub reward_net: Option<RewardNet>,
    pub reward_adam: Option<AdamState>,
    pub d_sample: ReplayBuffer,
    pub metrics: Vec<MetricRow>,
    pub rollout_added: usize,
    pub reward_steps_done: usize,
    pub config_fingerprint: String,
}

/// Evaluation context: where to roll episodes and from which start states.
pub struct EvalHook<'a> {
    pub sampler: &'a dyn TransitionSampler,
    pub pool: &'a [PatientState],
}

/// Outcome of a training call. `aborted` carries the numeric failure, if
/// any, while `state` holds the last good checkpoint.
pub struct TrainOutcome {
    pub state: TrainState,
    pub aborted: Option<String>,
}

/// Initialize a fresh training state.
pub fn init_state(cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    let mut init_rng = derive_stream2(cfg.seed, 0x1817, 0);
    let actor = Actor::new(&cfg.agent, &mut init_rng)?;
    let critic = Critic::new(&cfg.agent, &mut init_rng)?;
    let (reward_net, reward_adam) = if cfg.mode == Mode::Omgrl {
        let net = RewardNet::new(cfg.reward_hidden, cfg.reward_activation, cfg.reward_r_max, &mut init_rng)?;
        let adam = AdamState::new(net.net(), cfg.reward_adam);
        (Some(net), Some(adam))
    } else {
        (None, None)
    };
    Ok(TrainState {
        mode: cfg.mode,
        epoch: 0,
        seed: cfg.seed,
        actor,
        critic,
        reward_net,
        reward_adam,
        d_sample: ReplayBuffer::new(cfg.dsample_capacity)?,
        metrics: Vec::new(),
        rollout_added: 0,
        reward_steps_done: 0,
        config_fingerprint: String::new(),
    })
}

/// Run (or continue) training for `cfg.epochs` total epochs.
///
/// Per epoch, in order: rollouts fill the sample buffer; K guided-reward
/// steps (guided mode); one conservative critic update on the λ-mixture;
/// one policy-improvement step; optional evaluation. A non-finite value
/// aborts the loop and returns the last epoch's state untouched.
pub fn train(
    d_expert: &[Trajectory],
    ensemble: Option<&DynamicsEnsemble>,
    cfg: &TrainConfig,
    eval_hook: Option<&EvalHook>,
    init: Option<TrainState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let use_rollouts = cfg.mode != Mode::Modelfree && cfg.rollout_batch > 0;
    if use_rollouts && ensemble.is_none() {
        return Err(Error::Argument("model-based modes need a dynamics ensemble".into()));
    }
    if d_expert.is_empty() {
        return Err(Error::State("training needs a nonempty expert dataset".into()));
    }
    let d_batch = ReplayBuffer::from_trajectories(d_expert);
    if d_batch.is_empty() {
        return Err(Error::State("expert dataset has no transitions".into()));
    }

    let mut state = match init {
        Some(s) => s,
        None => init_state(cfg)?,
    };

    let start = state.epoch + 1;
    for epoch in start..=cfg.epochs {
        match run_epoch(&mut state, epoch, d_expert, &d_batch, ensemble, cfg, eval_hook) {
            Ok(()) => {
                state.epoch = epoch;
            }
            Err(e) if e.is_numeric() => {
                // Keep the last completed epoch's checkpoint.
                return Ok(TrainOutcome { state, aborted: Some(e.to_string()) });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome { state, aborted: None })
}

fn run_epoch(
    state: &mut TrainState,
    epoch: usize,
    d_expert: &[Trajectory],
    d_batch: &ReplayBuffer,
    ensemble: Option<&DynamicsEnsemble>,
    cfg: &TrainConfig,
    eval_hook: Option<&EvalHook>,
) -> Result<()> {
    let use_rollouts = cfg.mode != Mode::Modelfree && cfg.rollout_batch > 0;

    // (1) Dyna rollouts from the current policy.
    let mut epoch_segments: Vec<Segment> = Vec::new();
    if use_rollouts {
        let rollout_cfg = RolloutConfig {
            horizon: cfg.rollout_horizon,
            batch: cfg.rollout_batch,
            seed: derive_seed(cfg.seed, epoch as u64, 1),
        };
        let outcome = rollout_batch(
            ensemble.expect("checked"),
            &state.actor,
            d_batch,
            &rollout_cfg,
            &mut state.d_sample,
        )?;
        state.rollout_added += outcome.added;
        epoch_segments = outcome.segments;
    }

    // (2) Guided reward steps on expert windows vs sampled segments.
    let mut reward_loss = None;
    if cfg.mode == Mode::Omgrl {
        let seg_len = match cfg.reward_segment_len {
            0 => cfg.rollout_horizon.max(1),
            n => n.min(cfg.rollout_horizon.max(1)),
        };
        let net = state.reward_net.as_mut().expect("guided mode carries a reward net");
        let adam = state.reward_adam.as_mut().expect("guided mode carries reward moments");
        let mut loss_acc = 0.0;
        for k in 0..cfg.reward_steps {
            let mut rng = derive_stream2(cfg.seed, epoch as u64, 1000 + k as u64);
            let expert_segs = segment_expert(d_expert, seg_len, cfg.reward_batch, &mut rng)?;
            // Partition side: windows of the current policy's rollouts
            // (single-step windows come from the whole sample buffer),
            // padded with expert windows when the pool is small.
            let mut sample_segs: Vec<Segment> = Vec::with_capacity(cfg.reward_batch);
            if seg_len == 1 && !state.d_sample.is_empty() {
                let n = cfg.reward_batch.min(state.d_sample.len());
                for t in state.d_sample.sample(n, &mut rng)? {
                    sample_segs.push(vec![t.clone()]);
                }
            } else if !epoch_segments.is_empty() {
                for _ in 0..cfg.reward_batch {
                    let branch = &epoch_segments[rng.gen_range(0..epoch_segments.len())];
                    if branch.len() < seg_len {
                        continue;
                    }
                    let start = rng.gen_range(0..=branch.len() - seg_len);
                    sample_segs.push(branch[start..start + seg_len].to_vec());
                }
            }
            if sample_segs.len() < cfg.reward_batch {
                let pad = segment_expert(
                    d_expert,
                    seg_len,
                    cfg.reward_batch - sample_segs.len(),
                    &mut rng,
                )?;
                sample_segs.extend(pad);
            }
            let weighted = importance_weights(net, &state.actor, sample_segs)?;
            let stats = gcl_update(net, adam, &expert_segs, &weighted, cfg.reward_l2)?;
            loss_acc += stats.loss;
            state.reward_steps_done += 1;
        }
        reward_loss = Some(loss_acc / cfg.reward_steps as f64);
    }

    // (3) Conservative policy evaluation on the λ-mixture.
    let mut batch_rng = derive_stream2(cfg.seed, epoch as u64, 2);
    let batch =
        sample_mixed_batch(d_batch, &state.d_sample, cfg.agent_batch, cfg.lambda(), &mut batch_rng)?;
    let reward_source = match (&cfg.mode, &state.reward_net) {
        (Mode::Omgrl, Some(net)) => RewardSource::Model(net),
        _ => RewardSource::Stored,
    };
    let losses =
        conservative_critic_update(&mut state.critic, &state.actor, &batch, &cfg.agent.cql, reward_source)?;

    // (4) Policy improvement on the same mixed states.
    let states: Vec<PatientState> = batch.states().cloned().collect();
    let policy_loss = policy_improvement(&mut state.actor, &state.critic, &states)?;

    // (5) Periodic evaluation.
    let mut eval_rp = None;
    let mut eval_rpsi = None;
    if let Some(hook) = eval_hook {
        if cfg.eval_interval > 0 && epoch % cfg.eval_interval == 0 {
            let (rp, rpsi) = evaluate_return_dual(
                &state.actor,
                hook.sampler,
                hook.pool,
                cfg.eval_episodes,
                cfg.eval_steps,
                state.reward_net.as_ref(),
                derive_seed(cfg.seed, epoch as u64, 3),
            )?;
            eval_rp = Some(rp.mean);
            eval_rpsi = rpsi.map(|r| r.mean);
        }
    }

    state.metrics.push(MetricRow {
        epoch,
        bellman_loss: losses.bellman,
        cql_penalty: losses.cql_penalty,
        policy_loss,
        reward_loss,
        eval_rp,
        eval_rpsi,
    });
    Ok(())
}

fn transitions_to_lines(buf: &ReplayBuffer) -> String {
    let mut out = String::new();
    for t in buf.iter() {
        let mut fields: Vec<f64> = Vec::with_capacity(2 * STATE_DIM + 6);
        fields.extend_from_slice(&t.state.features);
        fields.push(t.state.aptt);
        fields.push(t.action.index() as f64);
        fields.push(t.dose);
        fields.push(t.reward);
        fields.extend_from_slice(&t.next_state.features);
        fields.push(t.next_state.aptt);
        fields.push(if t.terminal { 1.0 } else { 0.0 });
        out.push_str(&vec_to_hex(&fields));
        out.push('\n');
    }
    out
}

fn transitions_from_lines(text: &str) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let fields = vec_from_hex(line)?;
        if fields.len() != 2 * STATE_DIM + 6 {
            return Err(Error::Parse("bad transition record length".into()));
        }
        let mut features = [0.0; STATE_DIM];
        features.copy_from_slice(&fields[..STATE_DIM]);
        let mut next_features = [0.0; STATE_DIM];
        next_features.copy_from_slice(&fields[STATE_DIM + 4..2 * STATE_DIM + 4]);
        out.push(Transition {
            state: PatientState { features, aptt: fields[STATE_DIM] },
            action: crate::data::ActionClass::new(fields[STATE_DIM + 1] as usize)?,
            dose: fields[STATE_DIM + 2],
            reward: fields[STATE_DIM + 3],
            next_state: PatientState { features: next_features, aptt: fields[2 * STATE_DIM + 4] },
            terminal: fields[2 * STATE_DIM + 5] != 0.0,
        });
    }
    Ok(out)
}

/// Persist a run into a directory: manifest, agent and reward checkpoints,
/// the sample buffer and the metric log.
pub fn save_run(dir: &Path, state: &TrainState, cql: &crate::agent::CqlConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_agent(&dir.join("agent.ckpt"), &state.actor, &state.critic, cql)?;
    if let (Some(net), Some(adam)) = (&state.reward_net, &state.reward_adam) {
        save_reward(&dir.join("reward.ckpt"), net, adam, 0)?;
    }

    let mut dsample = String::new();
    dsample.push_str(DSAMPLE_MAGIC);
    dsample.push('\n');
    let _ = writeln!(
        dsample,
        "capacity={} len={} cursor={}",
        state.d_sample.capacity(),
        state.d_sample.len(),
        state.d_sample.cursor()
    );
    dsample.push_str(&transitions_to_lines(&state.d_sample));
    std::fs::write(dir.join("dsample.dat"), &dsample)?;

    let metrics = metrics_to_csv(&state.metrics);
    std::fs::write(dir.join("metrics.csv"), &metrics)?;

    let mut doc = KvDoc::new(RUN_MAGIC);
    doc.set("mode", state.mode.name());
    doc.set("epoch", state.epoch);
    doc.set("seed", state.seed);
    doc.set("rollout_added", state.rollout_added);
    doc.set("reward_steps_done", state.reward_steps_done);
    doc.set("config_fingerprint", &state.config_fingerprint);
    doc.set("has_reward_net", usize::from(state.reward_net.is_some()));
    doc.set("agent_hash", fingerprint(&std::fs::read(dir.join("agent.ckpt"))?));
    if state.reward_net.is_some() {
        doc.set("reward_hash", fingerprint(&std::fs::read(dir.join("reward.ckpt"))?));
    }
    doc.set("dsample_hash", fingerprint(dsample.as_bytes()));
    doc.set("metrics_hash", fingerprint(metrics.as_bytes()));
    doc.write_file(&dir.join("run.txt"))
}

/// Restore a run directory saved by [`save_run`].
pub fn load_run(dir: &Path) -> Result<(TrainState, crate::agent::CqlConfig)> {
    let doc = KvDoc::read_file(&dir.join("run.txt"), Some(RUN_MAGIC))?;
    let (actor, critic, cql) = load_agent(&dir.join("agent.ckpt"))?;
    let (reward_net, reward_adam) = if doc.get_usize("has_reward_net")? == 1 {
        let (net, adam, _) = load_reward(&dir.join("reward.ckpt"))?;
        (Some(net), Some(adam))
    } else {
        (None, None)
    };

    let dsample_text = std::fs::read_to_string(dir.join("dsample.dat"))?;
    let mut lines = dsample_text.lines();
    if lines.next() != Some(DSAMPLE_MAGIC) {
        return Err(Error::Parse("bad dsample magic".into()));
    }
    let header = lines.next().ok_or_else(|| Error::Parse("missing dsample header".into()))?;
    let mut capacity = 0usize;
    let mut cursor = 0usize;
    for part in header.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse("bad dsample header field".into()))?;
        let v: usize = v.parse().map_err(|e| Error::Parse(format!("bad dsample header: {e}")))?;
        match k {
            "capacity" => capacity = v,
            "cursor" => cursor = v,
            _ => {}
        }
    }
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let transitions = transitions_from_lines(&rest)?;
    let d_sample = ReplayBuffer::restore(capacity, transitions, cursor);

    let metrics_text = std::fs::read_to_string(dir.join("metrics.csv"))?;
    let metrics = parse_metrics_csv(&metrics_text)?;

    Ok((
        TrainState {
            mode: Mode::from_name(doc.get("mode")?)?,
            epoch: doc.get_usize("epoch")?,
            seed: doc.get_u64("seed")?,
            actor,
            critic,
            reward_net,
            reward_adam,
            d_sample,
            metrics,
            rollout_added: doc.get_usize("rollout_added")?,
            reward_steps_done: doc.get_usize("reward_steps_done")?,
            config_fingerprint: doc.get("config_fingerprint")?.to_string(),
        },
        cql,
    ))
}

fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty metrics csv".into()))?;
    if header != METRIC_HEADER {
        return Err(Error::Parse("unexpected metrics header".into()));
    }
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| Error::Parse(format!("bad metric value: {e}")))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse("bad metric row".into()));
        }
        rows.push(MetricRow {
            epoch: f[0].parse().map_err(|e| Error::Parse(format!("bad epoch: {e}")))?,
            bellman_loss: f[1].parse().map_err(|e| Error::Parse(format!("bad value: {e}")))?,
            cql_penalty: f[2].parse().map_err(|e| Error::Parse(format!("bad value: {e}")))?,
            policy_loss: f[3].parse().map_err(|e| Error::Parse(format!("bad value: {e}")))?,
            reward_loss: parse_opt(f[4])?,
            eval_rp: parse_opt(f[5])?,
            eval_rpsi: parse_opt(f[6])?,
        });
    }
    Ok(rows)
}

/// Hex fingerprint of a rendered config document (used by the CLI to stamp
/// artifacts).
pub fn config_fingerprint_of(doc_text: &str) -> String {
    fingerprint(doc_text.as_bytes())
}
