use std::collections::BTreeMap;

use dissc::envs::{EnvConfig, EnvKind, EnvSpec};
use dissc::numerics::serialize::decode;
use dissc::numerics::{Adam, AdamConfig, Graph, Hidden, Mlp, Output, ParamStore, Tensor};
use dissc::sf_repr::SfConfig;
use dissc::training::*;
use dissc::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_env() -> EnvConfig {
    let mut c = EnvConfig::predator_prey();
    c.grid_size = 4;
    c.num_agents_per_team = BTreeMap::from([("predator".to_string(), 2)]);
    c.frame_stack = 1;
    c.view_radius = 1;
    c.max_steps = 12;
    c
}

fn tiny_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        total_env_steps: steps,
        central_batch: 16,
        decentral_batch: 24,
        hidden: vec![8],
        sf: SfConfig {
            feature_dim: 4,
            encoder_hidden: vec![8],
            sf_hidden: vec![8],
            decoder_hidden: vec![8],
            ..SfConfig::default()
        },
        factoredness_pairs: 100,
        lr_central: 1e-3,
        lr_pi: 1e-3,
        lr_psi: 1e-3,
        lr_phi: 1e-3,
        lr_beta: 1e-3,
        ..TrainConfig::default()
    }
}

fn stream(report: &TrainingReport) -> String {
    report.records.iter().map(|r| r.to_json_line() + "\n").collect()
}

/// Row-major `x·W + b` with tanh between layers, read straight from the
/// parameter store.
fn hand_forward(store: &ParamStore, net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let layers = net.weights().len();
    for (l, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        let w = store.get(*w);
        let b = store.get(*b).data();
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let mut out = b.to_vec();
        for i in 0..rows {
            for j in 0..cols {
                out[j] += h[i] * w.data()[i * cols + j];
            }
        }
        if l + 1 < layers {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        h = out;
    }
    h
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn empty_run_has_no_updates_and_one_checkpoint() {
    let mut checkpoints = Vec::new();
    let mut t = Trainer::new(tiny_cfg(0), tiny_env()).unwrap();
    let report = t
        .run(&mut |e| {
            if let TrainEvent::Checkpoint { step, bytes } = e {
                checkpoints.push((step, bytes.to_vec()));
            }
            Ok(())
        })
        .unwrap();
    assert_eq!(report.env_steps, 0);
    assert_eq!(report.central_updates + report.decentral_updates, 0);
    assert!(report.records.is_empty());
    assert_eq!(report.checkpoints, 1);
    assert_eq!(checkpoints.len(), 1);
    assert_eq!(checkpoints[0].0, 0);
    assert!(decode(&checkpoints[0].1).is_ok());
}

#[test]
fn identical_seeds_give_identical_streams() {
    let a = run_training(tiny_cfg(400), tiny_env()).unwrap();
    let b = run_training(tiny_cfg(400), tiny_env()).unwrap();
    assert!(!a.records.is_empty());
    assert_eq!(stream(&a), stream(&b));
    let c = run_training(TrainConfig { seed: 1, ..tiny_cfg(400) }, tiny_env()).unwrap();
    assert_ne!(stream(&a), stream(&c));

    let i1 = run_iac_baseline(tiny_cfg(400), tiny_env()).unwrap();
    let i2 = run_iac_baseline(tiny_cfg(400), tiny_env()).unwrap();
    assert_eq!(stream(&i1), stream(&i2));
}

#[test]
fn update_counts_follow_buffer_gating() {
    let steps = 400;
    let r = run_training(tiny_cfg(steps), tiny_env()).unwrap();
    assert_eq!(r.central_updates, steps / 16);
    // two predators share one type
    assert_eq!(r.decentral_updates, 2 * steps / 24);
    let iac = run_iac_baseline(tiny_cfg(steps), tiny_env()).unwrap();
    assert_eq!(iac.central_updates, 0);
    assert_eq!(iac.decentral_updates, 2 * steps / 24);
}

#[test]
fn iac_report_and_records_share_the_schema() {
    fn keys(v: &serde_json::Value) -> Vec<String> {
        v.as_object().unwrap().keys().cloned().collect()
    }
    let d = run_training(tiny_cfg(200), tiny_env()).unwrap();
    let i = run_iac_baseline(tiny_cfg(200), tiny_env()).unwrap();
    assert_eq!(
        keys(&serde_json::to_value(&d).unwrap()),
        keys(&serde_json::to_value(&i).unwrap())
    );
    let dr = serde_json::to_value(&d.records[0]).unwrap();
    let ir = serde_json::to_value(&i.records[0]).unwrap();
    assert_eq!(keys(&dr), keys(&ir));
    assert!(i.records.iter().all(|r| r.beta_summary.is_none()));
    assert!(d
        .records
        .iter()
        .filter(|r| r.kind == RecordKind::Decentral)
        .all(|r| r.beta_summary.is_some()));
}

#[test]
fn beta_stays_fixed_when_updates_are_disabled() {
    let r = run_training(
        TrainConfig {
            beta_updates: false,
            ..tiny_cfg(300)
        },
        tiny_env(),
    )
    .unwrap();
    assert!(r.final_beta["predator"].iter().all(|&b| b == 1.0));
    let r = run_training(tiny_cfg(300), tiny_env()).unwrap();
    assert!(r.final_beta["predator"].iter().all(|&b| (0.0..=1.0).contains(&b)));
}

#[test]
fn checkpoint_restores_the_policy() {
    let mut last = Vec::new();
    let mut t = Trainer::new(tiny_cfg(200), tiny_env()).unwrap();
    t.run(&mut |e| {
        if let TrainEvent::Checkpoint { bytes, .. } = e {
            last = bytes.to_vec();
        }
        Ok(())
    })
    .unwrap();
    let back = Trainer::from_checkpoint(&decode(&last).unwrap()).unwrap();
    assert_eq!(back.step(), 200);
    let obs = dissc::envs::env_reset(&tiny_env()).unwrap().1;
    let p1 = t.policy("predator").unwrap().probs(&obs[0]).unwrap();
    let p2 = back.policy("predator").unwrap().probs(&obs[0]).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn non_finite_parameters_abort_with_a_snapshot() {
    let mut t = Trainer::new(tiny_cfg(100), tiny_env()).unwrap();
    let id = t.store.find("actor:predator/b0").unwrap();
    t.store.get_mut(id).data_mut()[0] = f64::NAN;
    let mut snapshot = None;
    let err = t
        .run(&mut |e| {
            if let TrainEvent::Abort { checkpoint, batch, .. } = e {
                snapshot = Some((checkpoint.to_vec(), batch));
            }
            Ok(())
        })
        .unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    let (bytes, batch) = snapshot.expect("abort event");
    assert!(decode(&bytes).is_ok());
    assert!(batch.get("observations").is_some());
}

#[test]
fn evaluation_is_repeatable_and_leaves_training_untouched() {
    let mut t = Trainer::new(tiny_cfg(0), tiny_env()).unwrap();
    let a = t.evaluate(5, false, 3).unwrap();
    let b = t.evaluate(5, false, 3).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.kind == RecordKind::Eval && r.episode_length.unwrap() <= 12));
    let g = t.evaluate(2, true, 3).unwrap();
    assert_eq!(g.len(), 2);
}

#[test]
fn zero_advantage_leaves_the_policy_unchanged() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let actor = Mlp::new(&mut store, "actor:a", &[3, 6, 4], Hidden::Tanh, Output::Identity, &mut rng);
    let before: Vec<Vec<f64>> = actor.params().iter().map(|&p| store.get(p).data().to_vec()).collect();
    let inputs = Tensor::from_rows(&[vec![0.1, -0.4, 0.9], vec![1.0, 0.2, -0.3]]).unwrap();
    let onehot = Tensor::from_rows(&[vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]).unwrap();
    let old = Tensor::new(&[2, 1], vec![-1.2, -1.5]).unwrap();
    let adv = Tensor::new(&[2, 1], vec![0.0, 0.0]).unwrap();
    let mut opt = Adam::new(AdamConfig::with_lr(0.1));
    let batch = PpoBatch {
        inputs: &inputs,
        actions_onehot: &onehot,
        old_log_probs: &old,
        advantages: &adv,
    };
    ppo_update(&mut store, &actor, &mut opt, &batch, 4, 0.2, 0.0, 5.0).unwrap();
    let after: Vec<Vec<f64>> = actor.params().iter().map(|&p| store.get(p).data().to_vec()).collect();
    assert_eq!(before, after);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn clipped_surrogate_never_rewards_ratios_outside_the_clip(
        logits in prop::collection::vec(-3.0f64..3.0, 3),
        old in -4.0f64..-0.01,
        adv in -2.0f64..2.0,
        action in 0usize..3,
        clip in 0.05f64..0.5,
    ) {
        let mut g = Graph::new();
        let l = g.input(Tensor::new(&[1, 3], logits.clone()).unwrap());
        let mut oh = vec![0.0; 3];
        oh[action] = 1.0;
        let loss = ppo_loss(
            &mut g,
            l,
            &Tensor::new(&[1, 3], oh).unwrap(),
            &Tensor::new(&[1, 1], vec![old]).unwrap(),
            &Tensor::new(&[1, 1], vec![adv]).unwrap(),
            clip,
            0.0,
        ).unwrap();
        let objective = -g.value(loss.surrogate).item();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
        let ratio = ((logits[action] - m) - z.ln() - old).exp();
        let cap = if adv >= 0.0 { (1.0 + clip) * adv } else { (1.0 - clip) * adv };
        prop_assert!(objective <= cap + 1e-12);
        prop_assert!((objective - (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)).abs() < 1e-12);

        g.backward_local(loss.total).unwrap();
        let grad = g.grad(l).unwrap();
        let outside = (adv > 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip);
        if outside {
            prop_assert!(grad.iter().all(|v| *v == 0.0));
        }
    }
}

fn critic_fixture(reward: f64) -> (ParamStore, CentralCritic, Vec<StateTransition>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let critic = CentralCritic::new(&mut store, 2, &[8], 20, &mut rng);
    let batch = (0..8)
        .map(|_| StateTransition {
            state: vec![1.0, 0.0],
            next_state: vec![1.0, 0.0],
            reward,
            bootstrap: true,
        })
        .collect();
    (store, critic, batch)
}

#[test]
fn critic_converges_to_the_geometric_series() {
    let gamma = 0.9;
    let (mut store, mut critic, batch) = critic_fixture(1.0);
    let mut opt = Adam::new(AdamConfig::with_lr(1e-2));
    for _ in 0..6000 {
        critic.update(&mut store, &mut opt, &batch, gamma, 100.0).unwrap();
    }
    let v = critic.value(&store, &Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap()[0];
    let expect = 1.0 / (1.0 - gamma);
    assert!((v - expect).abs() / expect < 0.02, "V = {v}");
}

#[test]
fn zero_reward_critic_goes_to_zero() {
    let (mut store, mut critic, batch) = critic_fixture(0.0);
    let mut opt = Adam::new(AdamConfig::with_lr(1e-2));
    let mut loss = f64::INFINITY;
    for _ in 0..3000 {
        loss = critic.update(&mut store, &mut opt, &batch, 0.9, 100.0).unwrap();
    }
    let v = critic.value(&store, &Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap()[0];
    assert!(loss < 1e-4 && v.abs() < 1e-2, "loss {loss} V {v}");
}

#[test]
fn critic_target_gets_no_gradient_and_only_moves_on_sync() {
    let (mut store, mut critic, batch) = critic_fixture(1.0);
    let mut opt = Adam::new(AdamConfig::with_lr(1e-2));
    let snapshot = |s: &ParamStore, c: &CentralCritic| -> Vec<f64> {
        c.target.params().iter().flat_map(|&p| s.get(p).data().to_vec()).collect()
    };
    let t0 = snapshot(&store, &critic);
    for k in 1..=20 {
        critic.update(&mut store, &mut opt, &batch, 0.9, 100.0).unwrap();
        assert!(critic.target.params().iter().all(|&p| store.get(p).grad().is_none()));
        if k < 20 {
            assert_eq!(snapshot(&store, &critic), t0);
        }
    }
    let online: Vec<f64> = critic.net.params().iter().flat_map(|&p| store.get(p).data().to_vec()).collect();
    assert_eq!(snapshot(&store, &critic), online);
}

#[test]
fn central_update_needs_a_full_buffer() {
    let mut buf = CentralBuffer::new(3);
    buf.push(StateTransition {
        state: vec![0.0],
        next_state: vec![0.0],
        reward: 0.0,
        bootstrap: true,
    });
    assert!(matches!(buf.drain_full(), Err(Error::Contract(_))));
}

#[test]
fn single_transition_losses_match_hand_arithmetic() {
    let spec = EnvSpec {
        kind: EnvKind::MatrixGame,
        agent_types: vec!["a".into()],
        type_names: vec!["a".into()],
        num_actions: 2,
        obs_dim: 3,
        state_dim: 2,
        obs_labels: vec!["x".into(), "y".into(), "z".into()],
    };
    let cfg = TrainConfig {
        gamma: 0.8,
        hidden: vec![5],
        ppo_epochs: 1,
        entropy_coef: 0.0,
        normalize_advantages: false,
        beta_updates: false,
        c_lambda: 0.7,
        sf: SfConfig {
            feature_dim: 3,
            encoder_hidden: vec![4],
            sf_hidden: vec![4],
            decoder_hidden: vec![4],
            ..SfConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut learner = DisscLearner::new(&mut store, &spec, &cfg, &mut rng);
    let beta_id = learner.betas["a"];
    store.get_mut(beta_id).data_mut().copy_from_slice(&[0.6, 0.2, 0.9]);
    // the target starts as a copy; perturb it so the two branches differ
    for &p in &learner.model.sf_target.params() {
        store.get_mut(p).data_mut().iter_mut().for_each(|v| *v *= 0.5);
    }
    let t = AgentTransition {
        obs: vec![0.3, -0.2, 0.8],
        next_obs: vec![-0.5, 0.4, 0.1],
        state: vec![0.2, 0.7],
        next_state: vec![-0.1, 0.3],
        action: 1,
        reward: 0.75,
        bootstrap: true,
        log_prob: -0.9,
    };
    let beta = [0.6, 0.2, 0.9];
    let m = &learner.model;
    let phi = hand_forward(&store, &m.encoder, &t.obs);
    let phi2 = hand_forward(&store, &m.encoder, &t.next_obs);
    let psi = hand_forward(&store, &m.sf, &phi);
    let psi2 = hand_forward(&store, &m.sf, &phi2);
    let psi2_target = hand_forward(&store, &m.sf_target, &phi2);
    let w = store.get(m.w).data().to_vec();
    let vg = hand_forward(&store, &learner.critic.net, &t.state)[0];
    let vg2 = hand_forward(&store, &learner.critic.net, &t.next_state)[0];
    let scaled = |v: &[f64]| -> Vec<f64> { v.iter().zip(&beta).map(|(x, b)| x * (1.0 - b)).collect() };
    let edu = vg - dot(&scaled(&psi), &w);
    let edu2 = vg2 - dot(&scaled(&psi2), &w);
    let r_i = t.reward - dot(&scaled(&phi2), &w);
    let adv = r_i + 0.8 * edu2 - edu;

    let logits = hand_forward(&store, &learner.actors["a"], &phi);
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    let probs: Vec<f64> = logits.iter().map(|v| v.exp() / z).collect();
    let ratio = (probs[1].ln() - t.log_prob).exp();
    let surrogate = -(ratio * adv).min(ratio.clamp(0.8, 1.2) * adv);
    let entropy = -probs.iter().map(|p| p * p.ln()).sum::<f64>();

    let reward = (t.reward - dot(&phi2, &w)).powi(2);
    let mut dec_in = phi.clone();
    dec_in.extend([0.0, 1.0]);
    let pred = hand_forward(&store, &m.decoder, &dec_in);
    let prediction: f64 = pred.iter().zip(&t.next_obs).map(|(p, o)| (o - p).powi(2)).sum();
    let td: f64 = (0..3)
        .map(|k| (phi2[k] + 0.8 * psi2_target[k] - psi[k]).powi(2))
        .sum();

    let out = learner
        .decentral_update(&mut store, "a", &[t.clone()], &cfg, &mut rng)
        .unwrap();
    let close = |name: &str, want: f64| {
        let got = out.losses[name];
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{name}: {got} vs {want}");
    };
    close("advantage_mean", adv);
    close("ppo_surrogate", surrogate);
    close("entropy", entropy);
    close("reward", reward);
    close("prediction", prediction);
    close("sf_td", td);

    // learnability loss is taken after the representation step
    let m = &learner.model;
    let phi = hand_forward(&store, &m.encoder, &t.obs);
    let phi2 = hand_forward(&store, &m.encoder, &t.next_obs);
    let d: Vec<f64> = hand_forward(&store, &m.sf, &phi)
        .iter()
        .zip(hand_forward(&store, &m.sf, &phi2))
        .map(|(a, b)| a - b)
        .collect();
    let w = store.get(m.w).data().to_vec();
    let plus: f64 = (0..3).map(|k| d[k] * beta[k] * w[k]).sum();
    let minus: f64 = (0..3).map(|k| d[k] * (1.0 - beta[k]) * w[k]).sum();
    close("learnability", 0.7 * minus.abs() - plus.abs());
    assert_eq!(store.get(beta_id).data(), &beta);
    assert!((out.learnability_estimate.unwrap() - plus.abs() / minus.abs()).abs() < 1e-9);
}
