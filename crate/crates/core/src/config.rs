//! Flat key=value run configuration with namespaced sections.
//!
//! Every knob the pipeline exposes lives here with its default; files and
//! `--set key=value` overrides mutate the same structure, and the canonical
//! rendering (sorted keys) is fingerprinted into every artifact a run
//! writes.

use std::path::Path;

use crate::agent::{AgentConfig, CqlConfig};
use crate::data::MIN_HORIZON;
use crate::dynamics::DynamicsTrainConfig;
use crate::error::{Error, Result};
use crate::kv::{fingerprint, KvDoc};
use crate::nn::{Activation, AdamConfig};
use crate::orchestrator::{Mode, TrainConfig};
use crate::synth::SynthConfig;

pub const CONFIG_MAGIC: &str = "OMGRL-CFG v1";

#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    pub strict: bool,

    // data
    pub data_csv: String,
    pub data_bin_edges: String,
    pub data_min_horizon: usize,
    pub data_split_ratio: f64,

    // synth
    pub synth_n_patients: usize,
    pub synth_noise_std: f64,
    pub synth_drift: f64,
    pub synth_baseline: f64,
    pub synth_gains: [f64; 6],
    pub synth_horizon_min: usize,
    pub synth_horizon_max: usize,
    pub synth_expert_eps: f64,

    // dynamics
    pub dynamics_members: usize,
    pub dynamics_keep: usize,
    pub dynamics_hidden: usize,
    pub dynamics_activation: Activation,
    pub dynamics_epochs: usize,
    pub dynamics_warmup: usize,
    pub dynamics_batch: usize,
    pub dynamics_lr: f64,

    // rollout
    pub rollout_horizon: usize,
    pub rollout_batch: usize,

    // agent
    pub agent_hidden: usize,
    pub agent_alpha: f64,
    pub agent_lambda: f64,
    pub agent_gamma: f64,
    pub agent_alpha_ent: f64,
    pub agent_tau: f64,
    pub agent_batch: usize,
    pub agent_actor_lr: f64,
    pub agent_critic_lr: f64,

    // reward
    pub reward_hidden: usize,
    pub reward_r_max: f64,
    pub reward_l2: f64,
    pub reward_lr: f64,
    pub reward_batch: usize,
    pub reward_segment_len: usize,

    // orchestrator
    pub train_mode: Mode,
    pub train_epochs: usize,
    pub train_reward_steps: usize,
    pub train_eval_interval: usize,
    pub train_eval_episodes: usize,
    pub train_eval_steps: usize,
    pub train_dsample_capacity: usize,

    // eval
    pub eval_episodes: usize,
    pub eval_steps: usize,
    pub eval_threshold: f64,
    pub eval_duration: usize,
    pub eval_gamma: f64,
    pub eval_bins: usize,
    pub eval_behavior_epochs: usize,
}

impl Default for Config {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let dynamics = DynamicsTrainConfig::default();
        let agent = AgentConfig::default();
        let train = TrainConfig::default();
        Config {
            seed: 0,
            strict: false,
            data_csv: String::new(),
            data_bin_edges: String::new(),
            data_min_horizon: MIN_HORIZON,
            data_split_ratio: 0.8,
            synth_n_patients: 400,
            synth_noise_std: synth.noise_std,
            synth_drift: synth.aptt_drift,
            synth_baseline: synth.aptt_baseline,
            synth_gains: synth.aptt_gains,
            synth_horizon_min: synth.horizon_min,
            synth_horizon_max: synth.horizon_max,
            synth_expert_eps: synth.expert_eps,
            dynamics_members: dynamics.members,
            dynamics_keep: 5,
            dynamics_hidden: dynamics.hidden,
            dynamics_activation: dynamics.activation,
            dynamics_epochs: dynamics.epochs,
            dynamics_warmup: dynamics.mse_warmup_epochs,
            dynamics_batch: dynamics.batch_size,
            dynamics_lr: dynamics.adam.lr,
            rollout_horizon: train.rollout_horizon,
            rollout_batch: train.rollout_batch,
            agent_hidden: agent.hidden,
            agent_alpha: agent.cql.alpha,
            agent_lambda: agent.cql.lambda,
            agent_gamma: agent.cql.gamma,
            agent_alpha_ent: agent.alpha_ent,
            agent_tau: agent.tau_target,
            agent_batch: train.agent_batch,
            agent_actor_lr: agent.actor_adam.lr,
            agent_critic_lr: agent.critic_adam.lr,
            reward_hidden: train.reward_hidden,
            reward_r_max: train.reward_r_max,
            reward_l2: train.reward_l2,
            reward_lr: train.reward_adam.lr,
            reward_batch: train.reward_batch,
            reward_segment_len: train.reward_segment_len,
            train_mode: train.mode,
            train_epochs: train.epochs,
            train_reward_steps: train.reward_steps,
            train_eval_interval: train.eval_interval,
            train_eval_episodes: train.eval_episodes,
            train_eval_steps: train.eval_steps,
            train_dsample_capacity: train.dsample_capacity,
            eval_episodes: 380,
            eval_steps: 36,
            eval_threshold: 0.8,
            eval_duration: 2,
            eval_gamma: 0.99,
            eval_bins: 10,
            eval_behavior_epochs: 40,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad value for {key}: {e}")))
}

impl Config {
    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "strict" => self.strict = parse(key, value)?,
            "data.csv" => self.data_csv = value.to_string(),
            "data.bin_edges" => self.data_bin_edges = value.to_string(),
            "data.min_horizon" => self.data_min_horizon = parse(key, value)?,
            "data.split_ratio" => self.data_split_ratio = parse(key, value)?,
            "synth.n_patients" => self.synth_n_patients = parse(key, value)?,
            "synth.noise_std" => self.synth_noise_std = parse(key, value)?,
            "synth.drift" => self.synth_drift = parse(key, value)?,
            "synth.baseline" => self.synth_baseline = parse(key, value)?,
            "synth.gains" => {
                let parts: Vec<&str> = value.split(':').collect();
                if parts.len() != 6 {
                    return Err(Error::Parse("synth.gains needs 6 colon-separated values".into()));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.synth_gains[i] = parse(key, p)?;
                }
            }
            "synth.horizon_min" => self.synth_horizon_min = parse(key, value)?,
            "synth.horizon_max" => self.synth_horizon_max = parse(key, value)?,
            "synth.expert_eps" => self.synth_expert_eps = parse(key, value)?,
            "dynamics.members" => self.dynamics_members = parse(key, value)?,
            "dynamics.keep" => self.dynamics_keep = parse(key, value)?,
            "dynamics.hidden" => self.dynamics_hidden = parse(key, value)?,
            "dynamics.activation" => self.dynamics_activation = Activation::from_name(value)?,
            "dynamics.epochs" => self.dynamics_epochs = parse(key, value)?,
            "dynamics.warmup" => self.dynamics_warmup = parse(key, value)?,
            "dynamics.batch" => self.dynamics_batch = parse(key, value)?,
            "dynamics.lr" => self.dynamics_lr = parse(key, value)?,
            "rollout.horizon" => self.rollout_horizon = parse(key, value)?,
            "rollout.batch" => self.rollout_batch = parse(key, value)?,
            "agent.hidden" => self.agent_hidden = parse(key, value)?,
            "agent.alpha" => self.agent_alpha = parse(key, value)?,
            "agent.lambda" => self.agent_lambda = parse(key, value)?,
            "agent.gamma" => self.agent_gamma = parse(key, value)?,
            "agent.alpha_ent" => self.agent_alpha_ent = parse(key, value)?,
            "agent.tau" => self.agent_tau = parse(key, value)?,
            "agent.batch" => self.agent_batch = parse(key, value)?,
            "agent.actor_lr" => self.agent_actor_lr = parse(key, value)?,
            "agent.critic_lr" => self.agent_critic_lr = parse(key, value)?,
            "reward.hidden" => self.reward_hidden = parse(key, value)?,
            "reward.r_max" => self.reward_r_max = parse(key, value)?,
            "reward.l2" => self.reward_l2 = parse(key, value)?,
            "reward.lr" => self.reward_lr = parse(key, value)?,
            "reward.batch" => self.reward_batch = parse(key, value)?,
            "reward.segment_len" => self.reward_segment_len = parse(key, value)?,
            "train.mode" => self.train_mode = Mode::from_name(value)?,
            "train.epochs" => self.train_epochs = parse(key, value)?,
            "train.reward_steps" => self.train_reward_steps = parse(key, value)?,
            "train.eval_interval" => self.train_eval_interval = parse(key, value)?,
            "train.eval_episodes" => self.train_eval_episodes = parse(key, value)?,
            "train.eval_steps" => self.train_eval_steps = parse(key, value)?,
            "train.dsample_capacity" => self.train_dsample_capacity = parse(key, value)?,
            "eval.episodes" => self.eval_episodes = parse(key, value)?,
            "eval.steps" => self.eval_steps = parse(key, value)?,
            "eval.threshold" => self.eval_threshold = parse(key, value)?,
            "eval.duration" => self.eval_duration = parse(key, value)?,
            "eval.gamma" => self.eval_gamma = parse(key, value)?,
            "eval.bins" => self.eval_bins = parse(key, value)?,
            "eval.behavior_epochs" => self.eval_behavior_epochs = parse(key, value)?,
            other => return Err(Error::Argument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Canonical rendering: every key, sorted, human-readable values.
    pub fn render(&self) -> String {
        let mut doc = KvDoc::new(CONFIG_MAGIC);
        let mut entries: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("strict".into(), self.strict.to_string()),
            ("data.csv".into(), self.data_csv.clone()),
            ("data.bin_edges".into(), self.data_bin_edges.clone()),
            ("data.min_horizon".into(), self.data_min_horizon.to_string()),
            ("data.split_ratio".into(), self.data_split_ratio.to_string()),
            ("synth.n_patients".into(), self.synth_n_patients.to_string()),
            ("synth.noise_std".into(), self.synth_noise_std.to_string()),
            ("synth.drift".into(), self.synth_drift.to_string()),
            ("synth.baseline".into(), self.synth_baseline.to_string()),
            (
                "synth.gains".into(),
                self.synth_gains.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(":"),
            ),
            ("synth.horizon_min".into(), self.synth_horizon_min.to_string()),
            ("synth.horizon_max".into(), self.synth_horizon_max.to_string()),
            ("synth.expert_eps".into(), self.synth_expert_eps.to_string()),
            ("dynamics.members".into(), self.dynamics_members.to_string()),
            ("dynamics.keep".into(), self.dynamics_keep.to_string()),
            ("dynamics.hidden".into(), self.dynamics_hidden.to_string()),
            ("dynamics.activation".into(), self.dynamics_activation.name().to_string()),
            ("dynamics.epochs".into(), self.dynamics_epochs.to_string()),
            ("dynamics.warmup".into(), self.dynamics_warmup.to_string()),
            ("dynamics.batch".into(), self.dynamics_batch.to_string()),
            ("dynamics.lr".into(), self.dynamics_lr.to_string()),
            ("rollout.horizon".into(), self.rollout_horizon.to_string()),
            ("rollout.batch".into(), self.rollout_batch.to_string()),
            ("agent.hidden".into(), self.agent_hidden.to_string()),
            ("agent.alpha".into(), self.agent_alpha.to_string()),
            ("agent.lambda".into(), self.agent_lambda.to_string()),
            ("agent.gamma".into(), self.agent_gamma.to_string()),
            ("agent.alpha_ent".into(), self.agent_alpha_ent.to_string()),
            ("agent.tau".into(), self.agent_tau.to_string()),
            ("agent.batch".into(), self.agent_batch.to_string()),
            ("agent.actor_lr".into(), self.agent_actor_lr.to_string()),
            ("agent.critic_lr".into(), self.agent_critic_lr.to_string()),
            ("reward.hidden".into(), self.reward_hidden.to_string()),
            ("reward.r_max".into(), self.reward_r_max.to_string()),
            ("reward.l2".into(), self.reward_l2.to_string()),
            ("reward.lr".into(), self.reward_lr.to_string()),
            ("reward.batch".into(), self.reward_batch.to_string()),
            ("reward.segment_len".into(), self.reward_segment_len.to_string()),
            ("train.mode".into(), self.train_mode.name().to_string()),
            ("train.epochs".into(), self.train_epochs.to_string()),
            ("train.reward_steps".into(), self.train_reward_steps.to_string()),
            ("train.eval_interval".into(), self.train_eval_interval.to_string()),
            ("train.eval_episodes".into(), self.train_eval_episodes.to_string()),
            ("train.eval_steps".into(), self.train_eval_steps.to_string()),
            ("train.dsample_capacity".into(), self.train_dsample_capacity.to_string()),
            ("eval.episodes".into(), self.eval_episodes.to_string()),
            ("eval.steps".into(), self.eval_steps.to_string()),
            ("eval.threshold".into(), self.eval_threshold.to_string()),
            ("eval.duration".into(), self.eval_duration.to_string()),
            ("eval.gamma".into(), self.eval_gamma.to_string()),
            ("eval.bins".into(), self.eval_bins.to_string()),
            ("eval.behavior_epochs".into(), self.eval_behavior_epochs.to_string()),
        ];
        entries.sort();
        for (k, v) in entries {
            doc.set(&k, v);
        }
        doc.render()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self.render().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc = KvDoc::read_file(path, Some(CONFIG_MAGIC))?;
        let mut cfg = Config::default();
        for key in doc.keys() {
            cfg.set(key, doc.get(key)?)?;
        }
        Ok(cfg)
    }

    /// Synthetic-environment section as the generator consumes it.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            noise_std: self.synth_noise_std,
            aptt_gains: self.synth_gains,
            aptt_drift: self.synth_drift,
            aptt_baseline: self.synth_baseline,
            horizon_min: self.synth_horizon_min,
            horizon_max: self.synth_horizon_max,
            expert_eps: self.synth_expert_eps,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    pub fn dynamics_config(&self) -> DynamicsTrainConfig {
        DynamicsTrainConfig {
            members: self.dynamics_members,
            hidden: self.dynamics_hidden,
            activation: self.dynamics_activation,
            epochs: self.dynamics_epochs,
            mse_warmup_epochs: self.dynamics_warmup,
            batch_size: self.dynamics_batch,
            adam: AdamConfig { lr: self.dynamics_lr, ..Default::default() },
            seed: crate::rng::derive_seed(self.seed, 0xD1, 0),
            ..Default::default()
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            hidden: self.agent_hidden,
            cql: CqlConfig {
                alpha: self.agent_alpha,
                lambda: self.agent_lambda,
                gamma: self.agent_gamma,
            },
            alpha_ent: self.agent_alpha_ent,
            tau_target: self.agent_tau,
            actor_adam: AdamConfig { lr: self.agent_actor_lr, ..Default::default() },
            critic_adam: AdamConfig { lr: self.agent_critic_lr, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.train_mode,
            epochs: self.train_epochs,
            reward_steps: self.train_reward_steps,
            rollout_horizon: self.rollout_horizon,
            rollout_batch: self.rollout_batch,
            agent: self.agent_config(),
            agent_batch: self.agent_batch,
            reward_hidden: self.reward_hidden,
            reward_activation: Activation::Relu,
            reward_r_max: self.reward_r_max,
            reward_l2: self.reward_l2,
            reward_adam: AdamConfig { lr: self.reward_lr, ..Default::default() },
            reward_batch: self.reward_batch,
            reward_segment_len: self.reward_segment_len,
            dsample_capacity: self.train_dsample_capacity,
            eval_interval: self.train_eval_interval,
            eval_episodes: self.train_eval_episodes,
            eval_steps: self.train_eval_steps,
            seed: crate::rng::derive_seed(self.seed, 0xA6, 0),
        }
    }
}
