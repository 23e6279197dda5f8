//! Command implementations behind the `omgrl` binary.
//!
//! Each command reads a config (defaults, optional file, `--set` overrides),
//! does its work through the core crate, and writes its artifacts plus a
//! manifest (config fingerprint, seed, per-file hashes) into the output
//! directory, so any run can be reproduced from its manifest alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use omgrl_core::config::Config;
use omgrl_core::data::{
    load_trajectories, write_trajectories, BinEdges, LoadOptions, Normalizer, PatientState,
    Trajectory,
};
use omgrl_core::dynamics::DynamicsEnsemble;
use omgrl_core::error::{Error, Result};
use omgrl_core::eval::{
    agreement_matrix, dosing_tendency, evaluate_return_dual, fit_behavior_policy, reports_to_csv,
    success_rate, success_rate_logged, wis_estimate, BehaviorFitConfig, EvalReport,
};
use omgrl_core::kv::fingerprint;
use omgrl_core::orchestrator::{load_run, metrics_to_csv, save_run, train, EvalHook, Mode, TrainState};
use omgrl_core::rng::derive_seed;
use omgrl_core::sim::TransitionSampler;
use omgrl_core::synth::{generate_expert_dataset, synth_bin_edges, SynthConfig, SynthEnv};

/// Exit codes the binary maps results onto.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

/// Common command-line surface shared by every verb.
#[derive(Debug, Default, Clone)]
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub strict: bool,
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    /// Resolve the effective config: defaults ← file ← --set ← --seed/--strict.
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.strict {
            cfg.strict = true;
        }
        Ok(cfg)
    }

    /// Output directory: --out, then $OMGRL_OUT, then ./omgrl-out.
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            std::env::var_os("OMGRL_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("omgrl-out"))
        })
    }
}

fn write_manifest(dir: &Path, cfg: &Config, files: &[PathBuf]) -> Result<()> {
    let mut out = String::from("OMGRL-MANIFEST v1\n");
    let _ = writeln!(out, "config_fingerprint={}", cfg.fingerprint());
    let _ = writeln!(out, "seed={}", cfg.seed);
    let _ = writeln!(out, "strict={}", cfg.strict);
    let mut entries: Vec<(String, String)> = Vec::new();
    for f in files {
        let bytes = std::fs::read(f)?;
        let name = f
            .strip_prefix(dir)
            .unwrap_or(f)
            .to_string_lossy()
            .replace(std::path::MAIN_SEPARATOR, "/");
        entries.push((name, fingerprint(&bytes)));
    }
    entries.sort();
    for (name, hash) in entries {
        let _ = writeln!(out, "file.{name}={hash}");
    }
    std::fs::write(dir.join("manifest.txt"), out)?;
    Ok(())
}

/// `gen-data`: synthesize an expert CSV plus its bin edges and env config.
pub fn gen_data(common: &CommonArgs) -> Result<()> {
    let cfg = common.resolve()?;
    let dir = common.out_dir();
    std::fs::create_dir_all(&dir)?;

    let synth_cfg = cfg.synth_config();
    let env = SynthEnv::new(synth_cfg.clone())?;
    let trajectories = generate_expert_dataset(&env, cfg.synth_n_patients)?;

    let csv_path = dir.join("expert.csv");
    write_trajectories(&csv_path, &trajectories)?;
    let edges_path = dir.join("bin_edges.txt");
    synth_bin_edges().save(&edges_path)?;
    let synth_path = dir.join("synth.cfg");
    synth_cfg.save(&synth_path)?;
    let cfg_path = dir.join("config.cfg");
    cfg.save(&cfg_path)?;

    write_manifest(&dir, &cfg, &[csv_path, edges_path, synth_path, cfg_path])?;
    println!(
        "gen-data: {} patients, {} transitions -> {}",
        trajectories.len(),
        omgrl_core::data::total_transitions(&trajectories),
        dir.display()
    );
    Ok(())
}

/// `ingest`: validate a trajectory CSV, split by patient, normalize, persist.
pub fn ingest(common: &CommonArgs, data: Option<PathBuf>, edges: Option<PathBuf>) -> Result<()> {
    let cfg = common.resolve()?;
    let dir = common.out_dir();
    std::fs::create_dir_all(&dir)?;

    let csv_path = data.unwrap_or_else(|| PathBuf::from(&cfg.data_csv));
    if csv_path.as_os_str().is_empty() {
        return Err(Error::Argument("ingest needs --data or data.csv".into()));
    }
    let provided_edges = match edges {
        Some(p) => Some(BinEdges::load(&p)?),
        None if !cfg.data_bin_edges.is_empty() => {
            Some(BinEdges::load(Path::new(&cfg.data_bin_edges))?)
        }
        None => None,
    };
    let options = LoadOptions { min_horizon: cfg.data_min_horizon, bin_edges: provided_edges };
    let report = load_trajectories(&csv_path, &options)?;
    let (train_set, test_set) = omgrl_core::data::split_train_test(
        report.trajectories,
        cfg.data_split_ratio,
        derive_seed(cfg.seed, 0x5B, 0),
    )?;
    let normalizer = Normalizer::fit(&train_set)?;
    let train_norm = normalizer.apply(&train_set);
    let test_norm = normalizer.apply(&test_set);

    let train_path = dir.join("train.csv");
    write_trajectories(&train_path, &train_norm)?;
    let test_path = dir.join("test.csv");
    write_trajectories(&test_path, &test_norm)?;
    let norm_path = dir.join("normalizer.txt");
    normalizer.save(&norm_path)?;
    let edges_path = dir.join("bin_edges.txt");
    report.bin_edges.save(&edges_path)?;
    let cfg_path = dir.join("config.cfg");
    cfg.save(&cfg_path)?;

    write_manifest(&dir, &cfg, &[train_path, test_path, norm_path, edges_path, cfg_path])?;
    println!(
        "ingest: {} train / {} test patients, {} short trajectories dropped -> {}",
        train_set.len(),
        test_set.len(),
        report.dropped_short,
        dir.display()
    );
    Ok(())
}

/// Load an ingested dataset directory.
pub fn load_dataset(dir: &Path, min_horizon: usize) -> Result<(Vec<Trajectory>, Vec<Trajectory>, Normalizer, BinEdges)> {
    let edges = BinEdges::load(&dir.join("bin_edges.txt"))?;
    let options = LoadOptions { min_horizon, bin_edges: Some(edges.clone()) };
    let train_set = load_trajectories(&dir.join("train.csv"), &options)?.trajectories;
    let test_set = load_trajectories(&dir.join("test.csv"), &options)?.trajectories;
    let normalizer = Normalizer::load(&dir.join("normalizer.txt"))?;
    Ok((train_set, test_set, normalizer, edges))
}

/// `train-dynamics`: fit the probabilistic ensemble and keep the best members.
pub fn train_dynamics_cmd(common: &CommonArgs, dataset: &Path) -> Result<()> {
    let cfg = common.resolve()?;
    let dir = common.out_dir();
    std::fs::create_dir_all(&dir)?;

    let (train_set, test_set, normalizer, _) = load_dataset(dataset, cfg.data_min_horizon)?;
    let dyn_cfg = cfg.dynamics_config();
    let (models, log) =
        omgrl_core::dynamics::train_dynamics(&train_set, &test_set, cfg.dynamics_keep, &dyn_cfg)?;
    let mut ensemble = DynamicsEnsemble::select_top(models, cfg.dynamics_keep)?;
    ensemble.normalizer_fingerprint = normalizer.fingerprint();

    let ckpt_path = dir.join("dyn.ckpt");
    ensemble.save(&ckpt_path)?;
    let mut nll_csv = String::from("member,epoch,phase,train_loss,val_nll\n");
    for row in &log {
        let _ = writeln!(
            nll_csv,
            "{},{},{},{},{}",
            row.member,
            row.epoch,
            if row.warmup { "warmup" } else { "nll" },
            row.train_loss,
            row.val_nll
        );
    }
    let nll_path = dir.join("nll_log.csv");
    std::fs::write(&nll_path, nll_csv)?;
    let cfg_path = dir.join("config.cfg");
    cfg.save(&cfg_path)?;

    write_manifest(&dir, &cfg, &[ckpt_path, nll_path, cfg_path])?;
    println!(
        "train-dynamics: kept {} of {} members, val NLLs {:?} -> {}",
        ensemble.len(),
        cfg.dynamics_members,
        ensemble.val_nlls(),
        dir.display()
    );
    Ok(())
}

/// `train`: run one of the three modes; returns the numeric-abort flag.
pub fn train_cmd(
    common: &CommonArgs,
    dataset: &Path,
    dynamics: Option<&Path>,
    resume: Option<&Path>,
) -> Result<Option<String>> {
    let cfg = common.resolve()?;
    let dir = common.out_dir();
    std::fs::create_dir_all(&dir)?;

    let (train_set, test_set, _, _) = load_dataset(dataset, cfg.data_min_horizon)?;
    let ensemble = match dynamics {
        Some(p) => Some(DynamicsEnsemble::load(p)?),
        None => None,
    };
    let train_cfg = cfg.train_config();
    if train_cfg.mode != Mode::Modelfree && train_cfg.rollout_batch > 0 && ensemble.is_none() {
        return Err(Error::Argument("model-based training needs --dynamics".into()));
    }

    let pool: Vec<PatientState> = test_set.iter().map(|t| t.initial_state().clone()).collect();
    let hook = ensemble.as_ref().map(|e| EvalHook { sampler: e as &dyn TransitionSampler, pool: &pool });

    let init: Option<TrainState> = match resume {
        Some(p) => Some(load_run(p)?.0),
        None => None,
    };
    let mut outcome = train(&train_set, ensemble.as_ref(), &train_cfg, hook.as_ref(), init)?;
    outcome.state.config_fingerprint = cfg.fingerprint();

    let run_dir = dir.join("run");
    save_run(&run_dir, &outcome.state, &train_cfg.agent.cql)?;
    let metrics_path = dir.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_to_csv(&outcome.state.metrics))?;
    let cfg_path = dir.join("config.cfg");
    cfg.save(&cfg_path)?;
    write_manifest(
        &dir,
        &cfg,
        &[
            run_dir.join("run.txt"),
            run_dir.join("agent.ckpt"),
            run_dir.join("dsample.dat"),
            run_dir.join("metrics.csv"),
            metrics_path,
            cfg_path,
        ],
    )?;
    match &outcome.aborted {
        Some(msg) => println!(
            "train[{}]: aborted at epoch {} ({msg}); last good checkpoint saved -> {}",
            outcome.state.mode.name(),
            outcome.state.epoch,
            dir.display()
        ),
        None => println!(
            "train[{}]: {} epochs, {} metric rows -> {}",
            outcome.state.mode.name(),
            outcome.state.epoch,
            outcome.state.metrics.len(),
            dir.display()
        ),
    }
    Ok(outcome.aborted)
}

/// `evaluate`: returns, WIS, success rates, agreement, dosing tendencies.
pub fn evaluate_cmd(
    common: &CommonArgs,
    run_dir: &Path,
    dataset: &Path,
    dynamics: Option<&Path>,
    env_cfg: Option<&Path>,
) -> Result<()> {
    let cfg = common.resolve()?;
    let dir = common.out_dir();
    std::fs::create_dir_all(&dir)?;

    let (state, _) = load_run(run_dir)?;
    let (train_set, test_set, normalizer, _) = load_dataset(dataset, cfg.data_min_horizon)?;
    let pool: Vec<PatientState> = test_set.iter().map(|t| t.initial_state().clone()).collect();
    let actor = &state.actor;

    let mut written: Vec<PathBuf> = Vec::new();
    let mut returns_reports: Vec<EvalReport> = Vec::new();
    let mut success_reports: Vec<EvalReport> = Vec::new();

    let eval_on = |sampler: &dyn TransitionSampler, tag: &str| -> Result<(Vec<EvalReport>, EvalReport)> {
        let (mut rp, rpsi) = evaluate_return_dual(
            actor,
            sampler,
            &pool,
            cfg.eval_episodes,
            cfg.eval_steps,
            state.reward_net.as_ref(),
            derive_seed(cfg.seed, 0xE7, 0),
        )?;
        rp.metric = format!("return_rp_{tag}");
        let mut reports = vec![rp];
        if let Some(mut r) = rpsi {
            r.metric = format!("return_rpsi_{tag}");
            reports.push(r);
        }
        let mut success = success_rate(
            actor,
            sampler,
            &pool,
            cfg.eval_episodes,
            cfg.eval_steps,
            cfg.eval_threshold,
            cfg.eval_duration,
            derive_seed(cfg.seed, 0xE7, 1),
        )?;
        success.metric = format!("success_rate_{tag}");
        Ok((reports, success))
    };

    if let Some(p) = dynamics {
        let ensemble = DynamicsEnsemble::load(p)?;
        let (reports, success) = eval_on(&ensemble, "model")?;
        returns_reports.extend(reports);
        success_reports.push(success);
    }
    if let Some(p) = env_cfg {
        let synth_cfg = SynthConfig::load(p)?;
        let env = SynthEnv::new(synth_cfg)?;
        let wrapped = NormalizedEnv { env: &env, normalizer: &normalizer };
        let (reports, success) = eval_on(&wrapped, "env")?;
        returns_reports.extend(reports);
        success_reports.push(success);
    }

    // Clinician comparator from the logged test trajectories.
    let clinician = success_rate_logged(&test_set, cfg.eval_threshold, cfg.eval_duration);
    success_reports.push(EvalReport::from_values(
        "success_rate_clinician",
        vec![clinician],
        test_set.len(),
        0,
    ));

    let returns_path = dir.join("returns.csv");
    std::fs::write(&returns_path, reports_to_csv(&returns_reports))?;
    written.push(returns_path);
    let success_path = dir.join("success.csv");
    std::fs::write(&success_path, reports_to_csv(&success_reports))?;
    written.push(success_path);

    // Off-policy estimate against the fitted behavior policy.
    let behavior_cfg = BehaviorFitConfig {
        epochs: cfg.eval_behavior_epochs,
        seed: derive_seed(cfg.seed, 0xE7, 2),
        ..Default::default()
    };
    let (behavior, behavior_acc) = fit_behavior_policy(&train_set, &behavior_cfg)?;
    let wis = wis_estimate(actor, &behavior, &test_set, cfg.eval_gamma)?;
    let mut wis_csv = String::from("quantity,value\n");
    let _ = writeln!(wis_csv, "wis_estimate,{}", wis.value);
    let _ = writeln!(wis_csv, "degenerate,{}", wis.degenerate);
    let _ = writeln!(wis_csv, "floor_fraction,{}", wis.floor_fraction);
    let _ = writeln!(wis_csv, "behavior_holdout_accuracy,{behavior_acc}");
    let wis_path = dir.join("wis.csv");
    std::fs::write(&wis_path, wis_csv)?;
    written.push(wis_path);

    // Agreement between logged actions and the greedy policy.
    let agreement = agreement_matrix(actor, &test_set)?;
    let mut agr_csv = String::from("clinician_class,policy_class,probability,count,support\n");
    for i in 0..omgrl_core::data::N_ACTIONS {
        for j in 0..omgrl_core::data::N_ACTIONS {
            let _ = writeln!(
                agr_csv,
                "{i},{j},{},{},{}",
                agreement.probs[i][j], agreement.counts[i][j], agreement.support[i]
            );
        }
    }
    let agr_path = dir.join("agreement.csv");
    std::fs::write(&agr_path, agr_csv)?;
    written.push(agr_path);

    // Dosing tendencies on raw indicator scales.
    let raw_test: Vec<Trajectory> = test_set
        .iter()
        .map(|t| Trajectory {
            patient_id: t.patient_id.clone(),
            transitions: t
                .transitions
                .iter()
                .map(|x| omgrl_core::data::Transition {
                    state: normalizer.invert_state(&x.state),
                    action: x.action,
                    dose: x.dose,
                    reward: x.reward,
                    next_state: normalizer.invert_state(&x.next_state),
                    terminal: x.terminal,
                })
                .collect(),
        })
        .collect();
    for indicator in ["pt", "inr"] {
        let report =
            dosing_tendency(actor, &raw_test, Some(&normalizer), indicator, cfg.eval_bins)?;
        let mut csv = String::from("bin_lo,bin_hi,count,policy_mean,clinician_mean\n");
        for b in 0..report.counts.len() {
            let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                report.edges[b],
                report.edges[b + 1],
                report.counts[b],
                fmt(&report.policy_mean[b]),
                fmt(&report.clinician_mean[b]),
            );
        }
        let path = dir.join(format!("tendency_{indicator}.csv"));
        std::fs::write(&path, csv)?;
        written.push(path);
    }

    let cfg_path = dir.join("config.cfg");
    cfg.save(&cfg_path)?;
    written.push(cfg_path);
    write_manifest(&dir, &cfg, &written)?;
    println!(
        "evaluate: {} episodes x {} steps, wis {:.4}{} -> {}",
        cfg.eval_episodes,
        cfg.eval_steps,
        wis.value,
        if wis.degenerate { " (degenerate)" } else { "" },
        dir.display()
    );
    Ok(())
}

/// Wrap the raw-space environment so a policy trained on normalized states
/// can interact with it.
struct NormalizedEnv<'a> {
    env: &'a SynthEnv,
    normalizer: &'a Normalizer,
}

impl TransitionSampler for NormalizedEnv<'_> {
    fn sample_step(
        &self,
        state: &PatientState,
        action: omgrl_core::data::ActionClass,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<(PatientState, f64)> {
        let raw = self.normalizer.invert_state(state);
        let (next_raw, reward) = self.env.step(&raw, action, rng)?;
        Ok((self.normalizer.apply_state(&next_raw), reward))
    }
}

/// `report`: merge evaluation artifacts and training curves into one
/// plot-ready long-format CSV.
pub fn report_cmd(common: &CommonArgs, eval_dir: &Path, run_dir: Option<&Path>) -> Result<()> {
    let cfg = common.resolve()?;
    let dir = common.out_dir();
    std::fs::create_dir_all(&dir)?;

    let mut rows: Vec<(String, f64, f64, String)> = Vec::new();

    if let Some(run) = run_dir {
        let metrics_text = std::fs::read_to_string(run.join("metrics.csv"))
            .or_else(|_| std::fs::read_to_string(run.join("run").join("metrics.csv")))?;
        for line in metrics_text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                continue;
            }
            let epoch: f64 = f[0].parse().unwrap_or(f64::NAN);
            for (col, name) in
                [(1, "bellman_loss"), (2, "cql_penalty"), (3, "policy_loss"), (4, "reward_loss"), (5, "eval_rp"), (6, "eval_rpsi")]
            {
                if let Ok(v) = f[col].parse::<f64>() {
                    rows.push((format!("curve_{name}"), epoch, v, "train".into()));
                }
            }
        }
    }

    for name in ["returns", "success"] {
        let path = eval_dir.join(format!("{name}.csv"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            for line in text.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() == 6 && f[1] == "value" {
                    if let (Ok(i), Ok(v)) = (f[2].parse::<f64>(), f[3].parse::<f64>()) {
                        rows.push((f[0].to_string(), i, v, "episode".into()));
                    }
                }
            }
        }
    }
    if let Ok(text) = std::fs::read_to_string(eval_dir.join("agreement.csv")) {
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() == 5 {
                if let (Ok(j), Ok(p)) = (f[1].parse::<f64>(), f[2].parse::<f64>()) {
                    rows.push(("agreement".into(), j, p, format!("clinician_{}", f[0])));
                }
            }
        }
    }
    for indicator in ["pt", "inr"] {
        if let Ok(text) = std::fs::read_to_string(eval_dir.join(format!("tendency_{indicator}.csv"))) {
            for line in text.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() == 5 {
                    let mid = match (f[0].parse::<f64>(), f[1].parse::<f64>()) {
                        (Ok(lo), Ok(hi)) => 0.5 * (lo + hi),
                        _ => continue,
                    };
                    if let Ok(v) = f[3].parse::<f64>() {
                        rows.push((format!("tendency_{indicator}"), mid, v, "policy".into()));
                    }
                    if let Ok(v) = f[4].parse::<f64>() {
                        rows.push((format!("tendency_{indicator}"), mid, v, "clinician".into()));
                    }
                }
            }
        }
    }

    let report_path = dir.join("report.csv");
    std::fs::write(&report_path, omgrl_core::eval::long_format_csv(&rows))?;
    let cfg_path = dir.join("config.cfg");
    cfg.save(&cfg_path)?;
    write_manifest(&dir, &cfg, &[report_path.clone(), cfg_path])?;
    println!("report: {} rows -> {}", rows.len(), report_path.display());
    Ok(())
}
