// Temporary diagnostic. Deleted before ship.
use omgrl_core::data::{feature_index, rp_reward};
use omgrl_core::synth::{generate_expert_dataset, SynthConfig, SynthEnv};

#[test]
#[ignore]
fn reward_is_function_of_state() {
    let cfg = SynthConfig { noise_std: 0.0, seed: 11, expert_eps: 0.2, ..Default::default() };
    let gains = cfg.aptt_gains;
    let env = SynthEnv::new(cfg).unwrap();
    let trajs = generate_expert_dataset(&env, 50).unwrap();
    let pt = feature_index("pt").unwrap();
    let mut worst = 0.0f64;
    let mut worst_info = String::new();
    for t in trajs.iter().flat_map(|t| &t.transitions) {
        let s_pt = t.state.features[pt];
        let implied_aptt = 80.0 + 40.0 * s_pt;
        let predicted = rp_reward((0.9 * implied_aptt + 4.0 + gains[t.action.index()]).max(1.0)).unwrap();
        let err = (predicted - t.reward).abs();
        if err > worst {
            worst = err;
            worst_info = format!(
                "aptt {} implied {} s_pt {} action {} reward {} predicted {}",
                t.state.aptt, implied_aptt, s_pt, t.action.index(), t.reward, predicted
            );
        }
    }
    println!("worst functional error: {worst}\n{worst_info}");
}
