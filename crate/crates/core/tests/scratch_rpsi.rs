// Temporary: inspect the learned reward's structure. Deleted before ship.
use omgrl_core::agent::{AgentConfig, CqlConfig};
use omgrl_core::data::{split_train_test, ActionClass, Normalizer, PatientState};
use omgrl_core::dynamics::{train_dynamics, DynamicsEnsemble, DynamicsTrainConfig};
use omgrl_core::error::Result;
use omgrl_core::orchestrator::{train, Mode, TrainConfig};
use omgrl_core::rng::derive_seed;
use omgrl_core::sim::{Policy, TransitionSampler};
use omgrl_core::synth::{generate_expert_dataset, ExpertPolicy, SynthConfig, SynthEnv};

struct NormalizedEnv<'a> {
    env: &'a SynthEnv,
    norm: &'a Normalizer,
}

impl TransitionSampler for NormalizedEnv<'_> {
    fn sample_step(
        &self,
        state: &PatientState,
        action: ActionClass,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<(PatientState, f64)> {
        let raw = self.norm.invert_state(state);
        let (next, r) = self.env.step(&raw, action, rng)?;
        Ok((self.norm.apply_state(&next), r))
    }
}

#[test]
#[ignore]
fn rpsi_structure() {
    let seed0 = 424;
    let synth_cfg = SynthConfig { seed: seed0, expert_eps: 0.15, ..Default::default() };
    let env = SynthEnv::new(synth_cfg).unwrap();
    let trajs = generate_expert_dataset(&env, 300).unwrap();
    let (train_raw, test_raw) = split_train_test(trajs, 0.8, seed0).unwrap();
    let norm = Normalizer::fit(&train_raw).unwrap();
    let train_set = norm.apply(&train_raw);
    let test_set = norm.apply(&test_raw);

    let dyn_cfg = DynamicsTrainConfig {
        epochs: 60,
        mse_warmup_epochs: 45,
        seed: derive_seed(seed0, 0xD1, 0),
        ..Default::default()
    };
    let (models, _) = train_dynamics(&train_set, &test_set, 5, &dyn_cfg).unwrap();
    let ensemble = DynamicsEnsemble::select_top(models, 5).unwrap();
    eprintln!("ensemble done");

    for (l2, k) in [(3e-3f64, 20usize), (1e-2, 20), (1e-2, 40)] {
    let cfg = TrainConfig {
        mode: Mode::Omgrl,
        epochs: 500,
        reward_steps: k,
        reward_segment_len: 1,
        reward_l2: l2,
        seed: derive_seed(seed0, 0xA6, 200),
        eval_interval: 0,
        agent: AgentConfig {
            cql: CqlConfig { alpha: 0.5, ..Default::default() },
            alpha_ent: 0.05,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = train(&train_set, Some(&ensemble), &cfg, None, None).unwrap();
    let net = out.state.reward_net.as_ref().unwrap();
    let actor = &out.state.actor;
    let expert = ExpertPolicy::deterministic(&env.config);
    eprintln!("=== l2 {l2} K {k}");

    // Sweep aPTT levels; report r_psi per action at representative states.
    eprintln!("aptt | truth(best) | r_psi per action | pi per action | expert_action");
    for aptt in [25.0f64, 40.0, 55.0, 65.0, 80.0, 95.0, 110.0, 130.0] {
        // Build a raw state whose coupled features match the aPTT.
        let mut rng = omgrl_core::rng::seeded_rng(50);
        let mut raw = env.initial_state(&mut rng);
        raw.aptt = aptt;
        raw.features[10] = (aptt - 80.0) / 40.0;
        raw.features[14] = 0.7 * (aptt - 80.0) / 40.0;
        let s = norm.apply_state(&raw);
        let probs = actor.action_probs(&s);
        let exp_a = expert.greedy_action(&raw).index();
        let mut r_line = String::new();
        let mut p_line = String::new();
        let mut truths = Vec::new();
        for a in 0..6 {
            let ac = ActionClass::new(a).unwrap();
            r_line.push_str(&format!("{:6.2}", net.reward_value(&s, ac).unwrap()));
            p_line.push_str(&format!("{:6.2}", probs[a]));
            truths.push(env.expected_reward(&raw, ac));
        }
        let best_truth = truths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        eprintln!("{aptt:5.0} | {best_truth:5.2} | {r_line} | {p_line} | e{exp_a}");
    }

    // Spearman vs truth over held-out pairs (logged and uniform actions).
    use rand::Rng;
    let all: Vec<&omgrl_core::data::Transition> =
        test_set.iter().flat_map(|t| &t.transitions).collect();
    let mut rng = omgrl_core::rng::seeded_rng(77);
    let mut logged = Vec::new();
    let mut uniform = Vec::new();
    for _ in 0..2000 {
        let t = all[rng.gen_range(0..all.len())];
        let raw = norm.invert_state(&t.state);
        logged.push((net.reward_value(&t.state, t.action).unwrap(), env.expected_reward(&raw, t.action)));
        let a = ActionClass::new(rng.gen_range(0..6)).unwrap();
        uniform.push((net.reward_value(&t.state, a).unwrap(), env.expected_reward(&raw, a)));
    }
    eprintln!("sp_log {:.3} sp_uni {:.3}", spearman(&logged), spearman(&uniform));
    let mut hist = [0usize; 6];
    for t in all.iter().take(3000) {
        hist[actor.greedy_action(&t.state).index()] += 1;
    }
    let nenv = NormalizedEnv { env: &env, norm: &norm };
    let pool: Vec<PatientState> = test_set.iter().map(|t| t.initial_state().clone()).collect();
    let ret = omgrl_core::eval::evaluate_return(
        actor, &nenv, &pool, 200, 36, omgrl_core::eval::EvalRewardSource::Rp, 55,
    )
    .unwrap()
    .mean;
    eprintln!("policy hist {hist:?} return {ret:.2}");
    }
}

fn spearman(pairs: &[(f64, f64)]) -> f64 {
    fn ranks(xs: Vec<f64>) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
        let mut r = vec![0.0; xs.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let xr = ranks(pairs.iter().map(|p| p.0).collect());
    let yr = ranks(pairs.iter().map(|p| p.1).collect());
    let n = xr.len() as f64;
    let mx = xr.iter().sum::<f64>() / n;
    let my = yr.iter().sum::<f64>() / n;
    let (mut num, mut dx, mut dy) = (0.0, 0.0, 0.0);
    for (a, b) in xr.iter().zip(&yr) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    num / (dx.sqrt() * dy.sqrt())
}
