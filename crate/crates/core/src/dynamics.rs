//! Probabilistic dynamics ensemble and dyna-style rollouts.
//!
//! Each member maps (state ⊕ one-hot action) to a diagonal Gaussian over
//! (next state, reward) and is trained by maximum likelihood. Several
//! members are trained from different seeds; the ones with the lowest
//! held-out NLL form the ensemble that generates synthetic transitions for
//! policy learning.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ActionClass, PatientState, ReplayBuffer, Trajectory, Transition, N_ACTIONS, STATE_DIM};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::nn::loss::squared_error;
use crate::nn::{
    adam_step, ckpt, gaussian_nll, Activation, AdamConfig, AdamState, DenseNet, Gradients,
    LogVarBounds, OutputHead,
};
use crate::rng::derive_stream2;
use crate::sim::{Policy, TransitionSampler};

pub const DYN_MAGIC: &str = "OMGRL-DYN v1";

/// Input width: state features plus one-hot action.
pub const DYN_INPUT_DIM: usize = STATE_DIM + N_ACTIONS;
/// Predicted dimensions: next state features plus the reward.
pub const DYN_TARGET_DIM: usize = STATE_DIM + 1;

/// One Gaussian dynamics model T̂(s', r | s, a).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticDynamicsModel {
    net: DenseNet,
}

impl ProbabilisticDynamicsModel {
    /// Four fully connected layers: three hidden of `hidden` units plus the
    /// Gaussian output layer.
    pub fn new(
        hidden: usize,
        activation: Activation,
        bounds: LogVarBounds,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let sizes = [DYN_INPUT_DIM, hidden, hidden, hidden, 2 * DYN_TARGET_DIM];
        Ok(ProbabilisticDynamicsModel {
            net: DenseNet::new(&sizes, activation, OutputHead::GaussianHead(bounds), rng)?,
        })
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.in_dim() != DYN_INPUT_DIM || net.out_dim() != 2 * DYN_TARGET_DIM {
            return Err(Error::Shape(format!(
                "dynamics net must map {DYN_INPUT_DIM} -> {}, got {} -> {}",
                2 * DYN_TARGET_DIM,
                net.in_dim(),
                net.out_dim()
            )));
        }
        if !matches!(net.output_head(), OutputHead::GaussianHead(_)) {
            return Err(Error::Shape("dynamics net needs a gaussian head".into()));
        }
        Ok(ProbabilisticDynamicsModel { net })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    fn encode(features: &[f64; STATE_DIM], action: ActionClass) -> [f64; DYN_INPUT_DIM] {
        let mut x = [0.0; DYN_INPUT_DIM];
        x[..STATE_DIM].copy_from_slice(features);
        x[STATE_DIM + action.index()] = 1.0;
        x
    }

    /// Predicted mean and log-variance over (next state ⊕ reward).
    ///
    /// Internally the network regresses the state *delta* (next − current),
    /// which is added back here; the reward channel is predicted directly.
    pub fn predict(
        &self,
        features: &[f64; STATE_DIM],
        action: ActionClass,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.net.output(&Self::encode(features, action))?;
        let mut mean = out[..DYN_TARGET_DIM].to_vec();
        for d in 0..STATE_DIM {
            mean[d] += features[d];
        }
        Ok((mean, out[DYN_TARGET_DIM..].to_vec()))
    }

    /// Draw one (next state, reward) sample from the predicted Gaussian.
    pub fn sample(
        &self,
        features: &[f64; STATE_DIM],
        action: ActionClass,
        rng: &mut ChaCha8Rng,
    ) -> Result<([f64; STATE_DIM], f64)> {
        let (mean, log_var) = self.predict(features, action)?;
        let mut draw = [0.0f64; DYN_TARGET_DIM];
        for d in 0..DYN_TARGET_DIM {
            let std = (0.5 * log_var[d]).exp();
            draw[d] = mean[d] + std * crate::rng::standard_normal(rng);
        }
        let mut next = [0.0f64; STATE_DIM];
        next.copy_from_slice(&draw[..STATE_DIM]);
        Ok((next, draw[STATE_DIM]))
    }
}

#[derive(Debug, Clone)]
pub struct DynamicsTrainConfig {
    /// Number of members to train (the paper trains seven).
    pub members: usize,
    /// Hidden width of the three hidden layers.
    pub hidden: usize,
    pub activation: Activation,
    pub epochs: usize,
    /// Leading epochs that fit the mean under squared error before the full
    /// likelihood takes over. Keeps the variance head from absorbing what
    /// the mean has not learned yet.
    pub mse_warmup_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub logvar_bounds: LogVarBounds,
    pub seed: u64,
}

impl Default for DynamicsTrainConfig {
    fn default() -> Self {
        DynamicsTrainConfig {
            members: 7,
            hidden: 48,
            activation: Activation::Tanh,
            epochs: 200,
            mse_warmup_epochs: 170,
            batch_size: 128,
            adam: AdamConfig { lr: 1e-3, ..Default::default() },
            logvar_bounds: LogVarBounds::default(),
            seed: 0,
        }
    }
}

/// A trained member with its held-out score.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: ProbabilisticDynamicsModel,
    pub val_nll: f64,
    pub member_index: usize,
}

/// Per-member per-epoch likelihood log.
#[derive(Debug, Clone)]
pub struct DynTrainLogRow {
    pub member: usize,
    pub epoch: usize,
    /// Mean training objective over the epoch (squared error during the
    /// warm-up phase, NLL afterwards).
    pub train_loss: f64,
    /// Held-out mean NLL after the epoch.
    pub val_nll: f64,
    pub warmup: bool,
}

struct Pair {
    x: [f64; DYN_INPUT_DIM],
    y: [f64; DYN_TARGET_DIM],
}

fn pairs_from(trajectories: &[Trajectory]) -> Vec<Pair> {
    let mut out = Vec::new();
    for traj in trajectories {
        for t in &traj.transitions {
            let x = ProbabilisticDynamicsModel::encode(&t.state.features, t.action);
            // State channels regress the delta; the reward channel is direct.
            let mut y = [0.0; DYN_TARGET_DIM];
            for d in 0..STATE_DIM {
                y[d] = t.next_state.features[d] - t.state.features[d];
            }
            y[STATE_DIM] = t.reward;
            out.push(Pair { x, y });
        }
    }
    out
}

fn mean_nll(net: &DenseNet, pairs: &[Pair]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let out = net.output(&p.x)?;
        let (loss, _, _) = gaussian_nll(&out[..DYN_TARGET_DIM], &out[DYN_TARGET_DIM..], &p.y)?;
        total += loss;
    }
    Ok(total / pairs.len() as f64)
}

/// Train `members` dynamics models by maximum likelihood.
///
/// Members differ only in their initialization and shuffling streams. A
/// member whose loss turns non-finite is dropped with a diagnostic; the call
/// fails if fewer members survive than the ensemble will keep.
pub fn train_dynamics(
    train: &[Trajectory],
    val: &[Trajectory],
    keep_at_least: usize,
    cfg: &DynamicsTrainConfig,
) -> Result<(Vec<TrainedModel>, Vec<DynTrainLogRow>)> {
    let train_pairs = pairs_from(train);
    let val_pairs = pairs_from(val);
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::State("dynamics training needs nonempty train and val sets".into()));
    }

    let mut models = Vec::new();
    let mut log = Vec::new();
    for member in 0..cfg.members {
        let mut init_rng = derive_stream2(cfg.seed, member as u64, 0);
        let mut model = ProbabilisticDynamicsModel::new(cfg.hidden, cfg.activation, cfg.logvar_bounds, &mut init_rng)?;
        let mut adam = AdamState::new(&model.net, cfg.adam);
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        let mut ok = true;

        for epoch in 0..cfg.epochs {
            let warmup = epoch < cfg.mse_warmup_epochs;
            // Full rate through the warm-up; ×0.1 for the back half of the
            // likelihood phase.
            let nll_epoch = epoch.saturating_sub(cfg.mse_warmup_epochs);
            let nll_total = cfg.epochs.saturating_sub(cfg.mse_warmup_epochs).max(1);
            adam.config.lr =
                if !warmup && 2 * nll_epoch >= nll_total { cfg.adam.lr * 0.1 } else { cfg.adam.lr };

            let mut shuffle_rng = derive_stream2(cfg.seed, member as u64, 1 + epoch as u64);
            for i in (1..order.len()).rev() {
                let j = shuffle_rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            let mut seen = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let mut grads = Gradients::zeros_like(&model.net);
                let mut batch_loss = 0.0;
                for &i in chunk {
                    let p = &train_pairs[i];
                    let (out, cache) = model.net.forward(&p.x)?;
                    let mut upstream;
                    if warmup {
                        let (loss, mut d_mean) = squared_error(&out[..DYN_TARGET_DIM], &p.y)?;
                        // The reward channel is the sharpest target; weight it
                        // up so the warm-up spends capacity there.
                        let w = reward_mse_weight(p.y[STATE_DIM]);
                        let r = out[STATE_DIM] - p.y[STATE_DIM];
                        batch_loss += loss + (w - 1.0) * 0.5 * r * r;
                        d_mean[STATE_DIM] *= w;
                        upstream = d_mean;
                        upstream.resize(2 * DYN_TARGET_DIM, 0.0);
                    } else {
                        let (loss, d_mean, d_lv) =
                            gaussian_nll(&out[..DYN_TARGET_DIM], &out[DYN_TARGET_DIM..], &p.y)?;
                        batch_loss += loss;
                        upstream = d_mean;
                        upstream.extend_from_slice(&d_lv);
                    }
                    model.net.backward_accumulate(&cache, &upstream, &mut grads)?;
                }
                grads.scale(1.0 / chunk.len() as f64);
                if !batch_loss.is_finite() {
                    eprintln!("dynamics member {member}: non-finite loss at epoch {epoch}, dropping member");
                    ok = false;
                    break;
                }
                adam_step(&mut model.net, &grads, &mut adam)?;
                epoch_loss += batch_loss;
                seen += chunk.len();
            }
            if !ok {
                break;
            }
            let train_loss = epoch_loss / seen as f64;
            let val_nll = mean_nll(&model.net, &val_pairs)?;
            log.push(DynTrainLogRow { member, epoch, train_loss, val_nll, warmup });
        }
        if ok {
            let val_nll = mean_nll(&model.net, &val_pairs)?;
            models.push(TrainedModel { model, val_nll, member_index: member });
        }
    }
    if models.len() < keep_at_least {
        return Err(Error::State(format!(
            "only {} dynamics members survived training, need {keep_at_least}",
            models.len()
        )));
    }
    Ok((models, log))
}

/// The selected ensemble, sorted by ascending validation NLL.
#[derive(Debug, Clone)]
pub struct DynamicsEnsemble {
    members: Vec<ProbabilisticDynamicsModel>,
    val_nlls: Vec<f64>,
    pub normalizer_fingerprint: String,
}

impl DynamicsEnsemble {
    /// Keep the `k` members with the lowest validation NLL (ties broken by
    /// member index).
    pub fn select_top(mut models: Vec<TrainedModel>, k: usize) -> Result<Self> {
        if k == 0 || k > models.len() {
            return Err(Error::Argument(format!(
                "cannot keep {k} of {} trained models",
                models.len()
            )));
        }
        models.sort_by(|a, b| {
            a.val_nll
                .partial_cmp(&b.val_nll)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.member_index.cmp(&b.member_index))
        });
        models.truncate(k);
        Ok(DynamicsEnsemble {
            val_nlls: models.iter().map(|m| m.val_nll).collect(),
            members: models.into_iter().map(|m| m.model).collect(),
            normalizer_fingerprint: String::new(),
        })
    }

    pub fn from_members(members: Vec<ProbabilisticDynamicsModel>, val_nlls: Vec<f64>) -> Result<Self> {
        if members.is_empty() || members.len() != val_nlls.len() {
            return Err(Error::Argument("ensemble needs matching members and scores".into()));
        }
        Ok(DynamicsEnsemble { members, val_nlls, normalizer_fingerprint: String::new() })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn val_nlls(&self) -> &[f64] {
        &self.val_nlls
    }

    pub fn members(&self) -> &[ProbabilisticDynamicsModel] {
        &self.members
    }

    /// Uniformly pick a member, then sample its Gaussian.
    pub fn sample(
        &self,
        features: &[f64; STATE_DIM],
        action: ActionClass,
        rng: &mut ChaCha8Rng,
    ) -> Result<([f64; STATE_DIM], f64)> {
        let m = rng.gen_range(0..self.members.len());
        self.members[m].sample(features, action, rng)
    }

    /// Mean prediction averaged over members (evaluation helper).
    pub fn mean_prediction(
        &self,
        features: &[f64; STATE_DIM],
        action: ActionClass,
    ) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; DYN_TARGET_DIM];
        for m in &self.members {
            let (mean, _) = m.predict(features, action)?;
            for (a, v) in acc.iter_mut().zip(mean) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= self.members.len() as f64;
        }
        Ok(acc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut doc = KvDoc::new(DYN_MAGIC);
        doc.set("members", self.members.len());
        doc.set_vec("val_nlls", &self.val_nlls);
        doc.set("normalizer_fingerprint", &self.normalizer_fingerprint);
        for (i, m) in self.members.iter().enumerate() {
            ckpt::write_net(&mut doc, &format!("m{i}."), &m.net);
        }
        doc.write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc = KvDoc::read_file(path, Some(DYN_MAGIC))?;
        let n = doc.get_usize("members")?;
        let val_nlls = doc.get_vec("val_nlls")?;
        let mut members = Vec::with_capacity(n);
        for i in 0..n {
            members.push(ProbabilisticDynamicsModel::from_net(ckpt::read_net(&doc, &format!("m{i}."))?)?);
        }
        let mut ens = DynamicsEnsemble::from_members(members, val_nlls)?;
        ens.normalizer_fingerprint = doc.get("normalizer_fingerprint")?.to_string();
        Ok(ens)
    }
}

impl TransitionSampler for DynamicsEnsemble {
    /// Model-space step: the produced state carries `aptt = 0` (the model
    /// does not predict aPTT; reward is its own output channel).
    fn sample_step(
        &self,
        state: &PatientState,
        action: ActionClass,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PatientState, f64)> {
        let (features, reward) = self.sample(&state.features, action, rng)?;
        Ok((PatientState { features, aptt: 0.0 }, reward))
    }
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    /// Steps per branch.
    pub horizon: usize,
    /// Number of branches per call.
    pub batch: usize,
    pub seed: u64,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.batch < 1 {
            return Err(Error::Argument("rollout horizon and batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// What a rollout call produced.
#[derive(Debug)]
pub struct RolloutOutcome {
    /// Transitions appended to the sink.
    pub added: usize,
    /// The length-h branch trajectories, for reward learning.
    pub segments: Vec<Vec<Transition>>,
    /// Non-finite samples that were redrawn.
    pub redraws: usize,
    /// Branches abandoned after repeated non-finite samples.
    pub dropped_branches: usize,
}

const MAX_REDRAWS: usize = 10;

/// Warm-up loss weight on the reward channel. Off-band targets are rare in
/// expert data, so the weight grows as the target leaves the in-band
/// plateau (reward 1): w = 2·(1 + 4·(1 − r)), between 2 and 18.
fn reward_mse_weight(target_reward: f64) -> f64 {
    2.0 * (1.0 + 4.0 * (1.0 - target_reward))
}

/// Dyna-style rollout: for each branch draw an initial state uniformly from
/// the source buffer, then alternate policy actions and sampler steps for
/// `horizon` steps, appending every transition to the sink.
///
/// Branch RNG streams derive from (seed, branch index), so results do not
/// depend on scheduling; branches are merged in index order.
pub fn rollout_batch(
    sampler: &dyn TransitionSampler,
    policy: &dyn Policy,
    source: &ReplayBuffer,
    cfg: &RolloutConfig,
    sink: &mut ReplayBuffer,
) -> Result<RolloutOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::State("rollout source buffer is empty".into()));
    }
    let mut outcome =
        RolloutOutcome { added: 0, segments: Vec::with_capacity(cfg.batch), redraws: 0, dropped_branches: 0 };
    'branch: for branch in 0..cfg.batch {
        let mut rng = derive_stream2(cfg.seed, branch as u64, 0);
        let mut state = source.get(rng.gen_range(0..source.len())).state.clone();
        let mut segment = Vec::with_capacity(cfg.horizon);
        for _ in 0..cfg.horizon {
            let action = policy.sample_action(&state, &mut rng);
            let mut step = sampler.sample_step(&state, action, &mut rng)?;
            let mut tries = 0;
            while !step_is_finite(&step) {
                tries += 1;
                outcome.redraws += 1;
                if tries > MAX_REDRAWS {
                    eprintln!("rollout branch {branch}: dropped after {MAX_REDRAWS} non-finite samples");
                    outcome.dropped_branches += 1;
                    continue 'branch;
                }
                step = sampler.sample_step(&state, action, &mut rng)?;
            }
            let (next_state, reward) = step;
            let transition = Transition {
                state: state.clone(),
                action,
                dose: 0.0,
                reward,
                next_state: next_state.clone(),
                terminal: false,
            };
            sink.push(transition.clone());
            segment.push(transition);
            outcome.added += 1;
            state = next_state;
        }
        outcome.segments.push(segment);
    }
    Ok(outcome)
}

fn step_is_finite(step: &(PatientState, f64)) -> bool {
    step.0.features.iter().all(|x| x.is_finite()) && step.1.is_finite()
}
