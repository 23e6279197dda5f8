//! Evaluation suite: returns under predefined and learned rewards,
//! behavior-policy estimation, weighted importance sampling, treatment
//! success rates, clinician-agreement matrices and dosing tendencies.

use std::fmt::Write as _;

use rand::Rng;


use crate::data::{feature_index, Normalizer, PatientState, Trajectory, N_ACTIONS, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::loss::nll_of_probs;
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, DenseNet, Gradients, OutputHead};
use crate::reward::RewardNet;
use crate::rng::derive_stream2;
use crate::sim::{Policy, RewardModel, TransitionSampler};

/// Probability floor applied to the behavior policy inside importance
/// ratios.
pub const BEHAVIOR_PROB_FLOOR: f64 = 1e-3;
/// Per-trajectory importance-ratio clip bounds.
pub const WIS_RATIO_MIN: f64 = 1e-4;
pub const WIS_RATIO_MAX: f64 = 1e4;

/// Aggregated evaluation numbers for one metric.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// One value per episode (or per seed for multi-run aggregation).
    pub values: Vec<f64>,
    pub episodes: usize,
    pub steps: usize,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn from_values(metric: &str, values: Vec<f64>, episodes: usize, steps: usize) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        EvalReport {
            metric: metric.to_string(),
            mean,
            std: var.sqrt(),
            values,
            episodes,
            steps,
            config_fingerprint: String::new(),
        }
    }
}

/// Which reward an evaluation accumulates.
pub enum EvalRewardSource<'a> {
    /// The sampler's own reward channel (true r_p on the environment,
    /// model-predicted r_p on the ensemble).
    Rp,
    /// A learned reward network evaluated at each visited (s, a).
    Rpsi(&'a RewardNet),
}

/// Mean undiscounted return of a policy over seeded episodes whose initial
/// states are drawn from `pool`.
pub fn evaluate_return(
    policy: &dyn Policy,
    sampler: &dyn TransitionSampler,
    pool: &[PatientState],
    episodes: usize,
    steps: usize,
    source: EvalRewardSource,
    seed: u64,
) -> Result<EvalReport> {
    let reward_net = match &source {
        EvalRewardSource::Rp => None,
        EvalRewardSource::Rpsi(net) => Some(*net),
    };
    let (rp, rpsi) = evaluate_return_dual(policy, sampler, pool, episodes, steps, reward_net, seed)?;
    Ok(match source {
        EvalRewardSource::Rp => rp,
        EvalRewardSource::Rpsi(_) => rpsi.expect("requested r_psi report"),
    })
}

/// One rollout pass accumulating the sampler's r_p return and, optionally,
/// the learned-reward return over the same episodes.
pub fn evaluate_return_dual(
    policy: &dyn Policy,
    sampler: &dyn TransitionSampler,
    pool: &[PatientState],
    episodes: usize,
    steps: usize,
    reward_net: Option<&RewardNet>,
    seed: u64,
) -> Result<(EvalReport, Option<EvalReport>)> {
    if pool.is_empty() {
        return Err(Error::State("evaluation initial-state pool is empty".into()));
    }
    if steps == 0 {
        return Err(Error::Argument("evaluation needs at least one step".into()));
    }
    let mut rp_values = Vec::with_capacity(episodes);
    let mut rpsi_values = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = derive_stream2(seed, 0xEAA1, e as u64);
        let mut state = pool[rng.gen_range(0..pool.len())].clone();
        let mut rp_total = 0.0;
        let mut rpsi_total = 0.0;
        for _ in 0..steps {
            let action = policy.sample_action(&state, &mut rng);
            if let Some(net) = reward_net {
                rpsi_total += net.reward(&state, action)?;
            }
            let (next, reward) = sampler.sample_step(&state, action, &mut rng)?;
            rp_total += reward;
            state = next;
        }
        rp_values.push(rp_total);
        rpsi_values.push(rpsi_total);
    }
    let rp = EvalReport::from_values("return_rp", rp_values, episodes, steps);
    let rpsi = reward_net
        .map(|_| EvalReport::from_values("return_rpsi", rpsi_values, episodes, steps));
    Ok((rp, rpsi))
}

/// Maximum-likelihood softmax classifier of dataset actions given states.
#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    classifier: DenseNet,
    pub prob_floor: f64,
}

impl BehaviorPolicy {
    /// Wrap an existing softmax classifier (16 → 6).
    pub fn from_net(classifier: DenseNet, prob_floor: f64) -> Result<Self> {
        if classifier.in_dim() != STATE_DIM || classifier.out_dim() != N_ACTIONS {
            return Err(Error::Shape("behavior net must map 16 -> 6".into()));
        }
        Ok(BehaviorPolicy { classifier, prob_floor })
    }

    pub fn net(&self) -> &DenseNet {
        &self.classifier
    }

    /// Behavior probability with the evaluation-time floor applied.
    pub fn floored_prob(&self, state: &PatientState, action: usize) -> f64 {
        self.action_probs(state)[action].max(self.prob_floor)
    }
}

impl Policy for BehaviorPolicy {
    fn action_probs(&self, state: &PatientState) -> [f64; N_ACTIONS] {
        let out = self.classifier.output(&state.features).expect("16-dim input");
        let mut probs = [0.0; N_ACTIONS];
        probs.copy_from_slice(&out);
        probs
    }
}

#[derive(Debug, Clone)]
pub struct BehaviorFitConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for BehaviorFitConfig {
    fn default() -> Self {
        BehaviorFitConfig {
            hidden: 64,
            epochs: 40,
            batch_size: 128,
            adam: AdamConfig { lr: 1e-3, ..Default::default() },
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Cross-entropy fit of actions given states; returns the policy and its
/// held-out accuracy.
pub fn fit_behavior_policy(
    dataset: &[Trajectory],
    cfg: &BehaviorFitConfig,
) -> Result<(BehaviorPolicy, f64)> {
    let mut pairs: Vec<(&PatientState, usize)> = Vec::new();
    for traj in dataset {
        for t in &traj.transitions {
            pairs.push((&t.state, t.action.index()));
        }
    }
    if pairs.is_empty() {
        return Err(Error::State("behavior fit needs a nonempty dataset".into()));
    }
    let classes: std::collections::BTreeSet<usize> = pairs.iter().map(|(_, a)| *a).collect();
    if classes.len() == 1 {
        eprintln!("behavior fit: dataset contains a single action class");
    }

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = derive_stream2(cfg.seed, 0xBEAF, 0);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_holdout = ((cfg.holdout_fraction * pairs.len() as f64) as usize).max(1).min(pairs.len() - 1);
    let (holdout_idx, train_idx) = order.split_at(n_holdout);

    let sizes = [STATE_DIM, cfg.hidden, cfg.hidden, N_ACTIONS];
    let mut net = DenseNet::new(&sizes, Activation::Relu, OutputHead::Softmax, &mut rng)?;
    let mut adam = AdamState::new(&net, cfg.adam);
    let mut train_order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        let mut shuffle = derive_stream2(cfg.seed, 0xBEAF, 1 + epoch as u64);
        for i in (1..train_order.len()).rev() {
            let j = shuffle.gen_range(0..=i);
            train_order.swap(i, j);
        }
        for chunk in train_order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&net);
            for &idx in chunk {
                let (state, action) = pairs[idx];
                let (probs, cache) = net.forward(&state.features)?;
                let (_, upstream) = nll_of_probs(&probs, action)?;
                net.backward_accumulate(&cache, &upstream, &mut grads)?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam_step(&mut net, &grads, &mut adam)?;
        }
    }

    let policy = BehaviorPolicy { classifier: net, prob_floor: BEHAVIOR_PROB_FLOOR };
    let mut correct = 0usize;
    for &idx in holdout_idx {
        let (state, action) = pairs[idx];
        if policy.greedy_action(state).index() == action {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / holdout_idx.len() as f64;
    Ok((policy, accuracy))
}

/// Outcome of a weighted-importance-sampling estimate.
#[derive(Debug, Clone, Copy)]
pub struct WisEstimate {
    pub value: f64,
    /// True when every trajectory ratio sits at the clip floor (the eval
    /// policy has effectively no overlap with the logged actions).
    pub degenerate: bool,
    /// Fraction of trajectory ratios clipped at the floor.
    pub floor_fraction: f64,
}

/// Self-normalized importance-sampling estimate of the eval policy's
/// discounted return from logged trajectories:
/// `Σ_i ρ_i·G_i / Σ_i ρ_i` with per-trajectory ratios
/// `ρ_i = Π_t π_e(a_t|s_t) / max(π_b(a_t|s_t), floor)` clipped into
/// [`WIS_RATIO_MIN`, `WIS_RATIO_MAX`].
pub fn wis_estimate(
    eval_policy: &dyn Policy,
    behavior: &BehaviorPolicy,
    trajectories: &[Trajectory],
    gamma: f64,
) -> Result<WisEstimate> {
    if trajectories.is_empty() {
        return Err(Error::DegenerateEstimate("no trajectories for WIS".into()));
    }
    let mut weighted = 0.0;
    let mut total = 0.0;
    let mut at_floor = 0usize;
    for traj in trajectories {
        let mut log_ratio = 0.0;
        let mut g = 0.0;
        let mut discount = 1.0;
        for t in &traj.transitions {
            let pe = eval_policy.action_probs(&t.state)[t.action.index()];
            let pb = behavior.floored_prob(&t.state, t.action.index());
            log_ratio += pe.ln() - pb.ln();
            g += discount * t.reward;
            discount *= gamma;
        }
        let rho = log_ratio.exp().clamp(WIS_RATIO_MIN, WIS_RATIO_MAX);
        if rho <= WIS_RATIO_MIN {
            at_floor += 1;
        }
        weighted += rho * g;
        total += rho;
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateEstimate("all importance ratios are zero".into()));
    }
    Ok(WisEstimate {
        value: weighted / total,
        degenerate: at_floor == trajectories.len(),
        floor_fraction: at_floor as f64 / trajectories.len() as f64,
    })
}

/// Run-length rule: does any run of at least `duration` consecutive steps
/// keep the reward strictly above `threshold`?
pub fn successful(rewards: &[f64], threshold: f64, duration: usize) -> bool {
    let mut run = 0usize;
    for r in rewards {
        if *r > threshold {
            run += 1;
            if run >= duration {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Fraction of seeded episodes whose r_p sequence contains a therapeutic
/// run of at least `duration` hours above `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn success_rate(
    policy: &dyn Policy,
    sampler: &dyn TransitionSampler,
    pool: &[PatientState],
    episodes: usize,
    steps: usize,
    threshold: f64,
    duration: usize,
    seed: u64,
) -> Result<EvalReport> {
    if duration > steps {
        return Err(Error::Argument("success duration exceeds episode steps".into()));
    }
    if pool.is_empty() {
        return Err(Error::State("success-rate initial-state pool is empty".into()));
    }
    let mut values = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = derive_stream2(seed, 0x5CCE, e as u64);
        let mut state = pool[rng.gen_range(0..pool.len())].clone();
        let mut rewards = Vec::with_capacity(steps);
        for _ in 0..steps {
            let action = policy.sample_action(&state, &mut rng);
            let (next, reward) = sampler.sample_step(&state, action, &mut rng)?;
            rewards.push(reward);
            state = next;
        }
        values.push(if successful(&rewards, threshold, duration) { 1.0 } else { 0.0 });
    }
    Ok(EvalReport::from_values("success_rate", values, episodes, steps))
}

/// Success rate of the logged trajectories themselves (the clinician
/// comparator: stored rewards, same run-length rule).
pub fn success_rate_logged(trajectories: &[Trajectory], threshold: f64, duration: usize) -> f64 {
    if trajectories.is_empty() {
        return 0.0;
    }
    let hits = trajectories
        .iter()
        .filter(|traj| {
            let rewards: Vec<f64> = traj.transitions.iter().map(|t| t.reward).collect();
            successful(&rewards, threshold, duration)
        })
        .count();
    hits as f64 / trajectories.len() as f64
}

/// Row-stochastic agreement between logged actions (rows) and the policy's
/// greedy action on the same states (columns). Rows without support stay
/// all-zero and are flagged in `support`.
#[derive(Debug, Clone)]
pub struct AgreementMatrix {
    pub probs: [[f64; N_ACTIONS]; N_ACTIONS],
    pub counts: [[usize; N_ACTIONS]; N_ACTIONS],
    pub support: [usize; N_ACTIONS],
}

pub fn agreement_matrix(policy: &dyn Policy, trajectories: &[Trajectory]) -> Result<AgreementMatrix> {
    if trajectories.iter().all(|t| t.is_empty()) {
        return Err(Error::State("agreement matrix needs transitions".into()));
    }
    let mut counts = [[0usize; N_ACTIONS]; N_ACTIONS];
    for traj in trajectories {
        for t in &traj.transitions {
            let clinician = t.action.index();
            let agent = policy.greedy_action(&t.state).index();
            counts[clinician][agent] += 1;
        }
    }
    let mut probs = [[0.0; N_ACTIONS]; N_ACTIONS];
    let mut support = [0usize; N_ACTIONS];
    for i in 0..N_ACTIONS {
        support[i] = counts[i].iter().sum();
        if support[i] > 0 {
            for j in 0..N_ACTIONS {
                probs[i][j] = counts[i][j] as f64 / support[i] as f64;
            }
        }
    }
    Ok(AgreementMatrix { probs, counts, support })
}

/// Mean dose class against a binned clinical indicator, for both the
/// policy's greedy decisions and the logged clinician actions.
#[derive(Debug, Clone)]
pub struct TendencyReport {
    pub indicator: String,
    /// Bin boundaries (n_bins + 1 edges over the raw observed range).
    pub edges: Vec<f64>,
    pub policy_mean: Vec<Option<f64>>,
    pub clinician_mean: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

/// `trajectories` carry raw (unnormalized) features; when the policy was
/// trained on normalized states, pass the fitted normalizer so its inputs
/// match.
pub fn dosing_tendency(
    policy: &dyn Policy,
    trajectories: &[Trajectory],
    normalizer: Option<&Normalizer>,
    indicator: &str,
    n_bins: usize,
) -> Result<TendencyReport> {
    let dim = feature_index(indicator)
        .ok_or_else(|| Error::Argument(format!("unknown indicator {indicator:?}")))?;
    if n_bins < 2 {
        return Err(Error::Argument("tendency needs at least 2 bins".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for traj in trajectories {
        for t in &traj.transitions {
            lo = lo.min(t.state.features[dim]);
            hi = hi.max(t.state.features[dim]);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::State("tendency needs transitions".into()));
    }
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=n_bins).map(|k| lo + width * k as f64).collect();

    let mut policy_sum = vec![0.0f64; n_bins];
    let mut clin_sum = vec![0.0f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    for traj in trajectories {
        for t in &traj.transitions {
            let v = t.state.features[dim];
            let bin = (((v - lo) / width) as usize).min(n_bins - 1);
            let input = match normalizer {
                Some(norm) => norm.apply_state(&t.state),
                None => t.state.clone(),
            };
            policy_sum[bin] += policy.greedy_action(&input).index() as f64;
            clin_sum[bin] += t.action.index() as f64;
            counts[bin] += 1;
        }
    }
    let to_means = |sums: Vec<f64>| -> Vec<Option<f64>> {
        sums.iter()
            .zip(&counts)
            .map(|(s, c)| if *c > 0 { Some(s / *c as f64) } else { None })
            .collect()
    };
    Ok(TendencyReport {
        indicator: indicator.to_string(),
        edges,
        policy_mean: to_means(policy_sum),
        clinician_mean: to_means(clin_sum),
        counts,
    })
}

/// Report CSV: one row per value plus an aggregate row per metric.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric,kind,index,value,episodes,steps\n");
    for r in reports {
        for (i, v) in r.values.iter().enumerate() {
            let _ = writeln!(out, "{},value,{},{},{},{}", r.metric, i, v, r.episodes, r.steps);
        }
        let _ = writeln!(out, "{},mean,,{},{},{}", r.metric, r.mean, r.episodes, r.steps);
        let _ = writeln!(out, "{},std,,{},{},{}", r.metric, r.std, r.episodes, r.steps);
    }
    out
}

/// Plot-ready long format: metric,x,y,series.
pub fn long_format_csv(rows: &[(String, f64, f64, String)]) -> String {
    let mut out = String::from("metric,x,y,series\n");
    for (metric, x, y, series) in rows {
        let _ = writeln!(out, "{metric},{x},{y},{series}");
    }
    out
}
