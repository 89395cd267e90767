//! Properties of the two pseudorehearsal strategies and their degenerate cases.

use prlab_core::agent::{Agent, AgentConfig, Transition};
use prlab_core::cartpole::{self, Action, Observability, PhysicsParams};
use prlab_core::encoders::{EncoderKind, EncoderSpec, FeatureVector, ANGULAR_RANGE, LINEAR_RANGE};
use prlab_core::mlp::{ActivationTrace, Network, NetworkSpec};
use prlab_core::rehearsal::{
    batch_rehearsal_update, frean_robins_update, generate_pseudoset, PseudoSet, RehearsalConfig,
    Strategy, DEFAULT_DENOM_GUARD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Network {
    Network::init(&NetworkSpec::new(sizes.to_vec(), 1.0), rng).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn fv(values: Vec<f64>) -> FeatureVector {
    FeatureVector {
        values,
        segment_starts: vec![0],
    }
}

fn pseudoset_of(net: &Network, inputs: Vec<Vec<f64>>) -> PseudoSet {
    let mut traces = Vec::new();
    let mut targets = Vec::new();
    for i in &inputs {
        let (out, trace) = net.forward(i).unwrap();
        traces.push(trace);
        targets.push(out);
    }
    PseudoSet::from_parts(inputs.into_iter().map(fv).collect(), traces, targets, 0).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[test]
fn single_pseudoitem_update_is_orthogonal_to_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut checked = 0;
    for _ in 0..1000 {
        let sizes = [rng.gen_range(1..=8), rng.gen_range(1..=6), 2];
        let net = random_net(&mut rng, &sizes);
        let real = random_vec(&mut rng, sizes[0]);
        let pseudo = random_vec(&mut rng, sizes[0]);
        let ps = pseudoset_of(&net, vec![pseudo]);
        let (out, trace) = net.forward(&real).unwrap();
        let target = random_vec(&mut rng, 2);
        let err: Vec<f64> = target.iter().zip(&out).map(|(t, o)| t - o).collect();
        let errs = net.backprop_errors(&trace, &err).unwrap();
        let (next, report) =
            frean_robins_update(&net, &trace, &errs, &ps, 0.1, DEFAULT_DENOM_GUARD).unwrap();
        assert!(next.is_finite());
        for gap in 0..net.num_gaps() {
            let x = ps.traces()[0].source(gap);
            for r in 0..net.weights(gap).rows() {
                let delta: Vec<f64> = next
                    .weights(gap)
                    .row(r)
                    .iter()
                    .zip(net.weights(gap).row(r))
                    .map(|(a, b)| a - b)
                    .collect();
                if report.fallback_gaps == 0 {
                    assert!(
                        dot(&delta, x).abs() <= 1e-9 * norm(&delta) * norm(x) + f64::MIN_POSITIVE,
                        "gap {gap} row {r}: {}",
                        dot(&delta, x)
                    );
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn pseudoitem_preactivation_unchanged_after_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = random_net(&mut rng, &[5, 1]);
    let ps = pseudoset_of(&net, vec![random_vec(&mut rng, 5)]);
    let real = random_vec(&mut rng, 5);
    let (out, trace) = net.forward(&real).unwrap();
    let errs = net.backprop_errors(&trace, &[1.0 - out[0]]).unwrap();
    let (next, _) =
        frean_robins_update(&net, &trace, &errs, &ps, 0.5, DEFAULT_DENOM_GUARD).unwrap();
    let before = ps.frozen_targets()[0][0];
    let after = next.predict(ps.inputs()[0].as_slice()).unwrap()[0];
    assert!((before - after).abs() < 1e-12);
    // while the real example moves toward its target by lr * err (d.b = 1)
    let moved = next.predict(&real).unwrap()[0] - out[0];
    assert!((moved - 0.5 * (1.0 - out[0])).abs() < 1e-12);
}

#[test]
fn parallel_pseudoitem_takes_guard_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let net = random_net(&mut rng, &[4, 3, 2]);
        let real = random_vec(&mut rng, 4);
        // identical input gives parallel activations at every gap
        let ps = pseudoset_of(&net, vec![real.clone()]);
        let (out, trace) = net.forward(&real).unwrap();
        let errs = net
            .backprop_errors(&trace, &[1.0 - out[0], -out[1]])
            .unwrap();
        let (next, report) =
            frean_robins_update(&net, &trace, &errs, &ps, 0.1, DEFAULT_DENOM_GUARD).unwrap();
        assert_eq!(report.fallback_gaps, 2);
        assert!(next.is_finite());
        assert_eq!(next, net.online_update(&trace, &errs, 0.1).unwrap());
    }
}

#[test]
fn scaled_parallel_pseudoitem_in_single_gap() {
    // x = 2b exactly: denominator (b.b)(4 b.b) - (2 b.b)^2 = 0
    let net = Network::from_flat(&[1, 1], &[0.3, 0.2]).unwrap();
    let (out, trace) = net.forward(&[1.0]).unwrap();
    let errs = net.backprop_errors(&trace, &[1.0 - out[0]]).unwrap();
    let pseudo_trace = ActivationTrace {
        activations: vec![vec![2.0, 2.0], vec![0.0]],
    };
    let ps =
        PseudoSet::from_parts(vec![fv(vec![2.0])], vec![pseudo_trace], vec![vec![0.0]], 0).unwrap();
    let (next, report) =
        frean_robins_update(&net, &trace, &errs, &ps, 0.1, DEFAULT_DENOM_GUARD).unwrap();
    assert_eq!(report.fallback_gaps, 1);
    assert!(next.is_finite());
}

#[test]
fn orthogonal_pseudoitems_give_rescaled_delta_rule() {
    // single gap, b = (1, 0, 0) incl. bias slot set by hand
    let net = Network::from_flat(&[2, 2], &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
    let real_trace = ActivationTrace {
        activations: vec![vec![1.0, 0.0, 0.0], vec![0.1, -0.4]],
    };
    let errs = prlab_core::mlp::LayerErrors {
        errors: vec![vec![0.7, -0.3]],
    };
    let pseudo_trace = ActivationTrace {
        activations: vec![vec![0.0, 1.5, -2.0], vec![0.0, 0.0]],
    };
    let ps = PseudoSet::from_parts(
        vec![fv(vec![0.0, 1.5])],
        vec![pseudo_trace],
        vec![vec![0.0; 2]],
        0,
    )
    .unwrap();
    let (fr, report) =
        frean_robins_update(&net, &real_trace, &errs, &ps, 0.1, DEFAULT_DENOM_GUARD).unwrap();
    assert_eq!(report.fallback_gaps, 0);
    // b.b = 1 so the rescaled rule coincides with the plain delta rule
    assert_eq!(fr, net.online_update(&real_trace, &errs, 0.1).unwrap());

    let scaled_trace = ActivationTrace {
        activations: vec![vec![2.0, 0.0, 0.0], vec![0.1, -0.4]],
    };
    let (fr, _) =
        frean_robins_update(&net, &scaled_trace, &errs, &ps, 0.1, DEFAULT_DENOM_GUARD).unwrap();
    let rescaled = ActivationTrace {
        activations: vec![vec![0.5, 0.0, 0.0], vec![0.1, -0.4]],
    };
    assert_eq!(fr, net.online_update(&rescaled, &errs, 0.1).unwrap());
}

#[test]
fn adversarial_pseudosets_keep_weights_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let net = random_net(&mut rng, &[3, 4, 2]);
        let real = random_vec(&mut rng, 3);
        let eps = 10f64.powi(-rng.gen_range(3..12));
        let near: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                real.iter()
                    .map(|v| v * (1.0 + eps * rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let ps = pseudoset_of(&net, near);
        let (out, trace) = net.forward(&real).unwrap();
        let errs = net.backprop_errors(&trace, &[1.0 - out[0], 0.0]).unwrap();
        let (next, _) =
            frean_robins_update(&net, &trace, &errs, &ps, 0.1, DEFAULT_DENOM_GUARD).unwrap();
        assert!(next.is_finite());
    }
}

fn encoder() -> EncoderSpec {
    EncoderSpec::new(EncoderKind::SignSplit, vec![LINEAR_RANGE, ANGULAR_RANGE]).unwrap()
}

#[test]
fn batch_with_empty_pseudoset_is_online() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let net = random_net(&mut rng, &[4, 5, 2]);
        let input = random_vec(&mut rng, 4);
        let (q, trace) = net.forward(&input).unwrap();
        let target = q[1] + rng.gen_range(-1.0..1.0);
        let mut real_target = q.clone();
        real_target[1] = target;
        let errs = net.backprop_errors(&trace, &[0.0, target - q[1]]).unwrap();
        let online = net.online_update(&trace, &errs, 0.05).unwrap();
        let batch = batch_rehearsal_update(
            &net,
            &input,
            &real_target,
            &[false, true],
            &PseudoSet::empty(0),
            0.05,
        )
        .unwrap();
        let a: Vec<u64> = online.flat_weights().iter().map(|w| w.to_bits()).collect();
        let b: Vec<u64> = batch.flat_weights().iter().map(|w| w.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn fresh_pseudoset_contributes_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let enc = encoder();
    let cfg = RehearsalConfig {
        strategy: Strategy::Batch,
        pseudoset_size: 9,
        relearn_gap: 1,
        ..Default::default()
    };
    for _ in 0..20 {
        let net = random_net(&mut rng, &[4, 6, 2]);
        let ps = generate_pseudoset(&net, &cfg, &enc, 0, &mut rng).unwrap();
        for (i, t) in ps.inputs().iter().zip(ps.frozen_targets()) {
            assert_eq!(&net.predict(i.as_slice()).unwrap(), t);
        }
        let input = random_vec(&mut rng, 4);
        let (q, trace) = net.forward(&input).unwrap();
        let mut real_target = q.clone();
        real_target[0] -= 0.5;
        let errs = net.backprop_errors(&trace, &[-0.5, 0.0]).unwrap();
        let scaled_online = net.online_update(&trace, &errs, 0.2 / 10.0).unwrap();
        let batch =
            batch_rehearsal_update(&net, &input, &real_target, &[true, false], &ps, 0.2).unwrap();
        for (a, b) in batch
            .flat_weights()
            .iter()
            .zip(scaled_online.flat_weights())
        {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn stale_pseudoset_matches_per_item_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let enc = encoder();
    let cfg = RehearsalConfig {
        strategy: Strategy::Batch,
        pseudoset_size: 2,
        relearn_gap: 1,
        ..Default::default()
    };
    let lr = 0.1;
    for _ in 0..20 {
        let old = random_net(&mut rng, &[4, 5, 2]);
        let ps = generate_pseudoset(&old, &cfg, &enc, 0, &mut rng).unwrap();
        let net = random_net(&mut rng, &[4, 5, 2]);
        let input = random_vec(&mut rng, 4);
        let q = net.predict(&input).unwrap();
        let mut real_target = q.clone();
        real_target[1] += 0.7;

        // each item's update computed on its own at the start weights
        let start = net.flat_weights();
        let mut deltas = Vec::new();
        {
            let (_, trace) = net.forward(&input).unwrap();
            let errs = net
                .backprop_errors(&trace, &[0.0, real_target[1] - q[1]])
                .unwrap();
            deltas.push(net.online_update(&trace, &errs, lr).unwrap().flat_weights());
        }
        for (i, t) in ps.inputs().iter().zip(ps.frozen_targets()) {
            let (out, trace) = net.forward(i.as_slice()).unwrap();
            let err: Vec<f64> = t.iter().zip(&out).map(|(a, b)| a - b).collect();
            let errs = net.backprop_errors(&trace, &err).unwrap();
            deltas.push(net.online_update(&trace, &errs, lr).unwrap().flat_weights());
        }
        let expected: Vec<f64> = (0..start.len())
            .map(|k| start[k] + deltas.iter().map(|d| d[k] - start[k]).sum::<f64>() / 3.0)
            .collect();
        let batch =
            batch_rehearsal_update(&net, &input, &real_target, &[false, true], &ps, lr).unwrap();
        for (a, b) in batch.flat_weights().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn agent_config(strategy: Strategy, pr: usize) -> AgentConfig {
    AgentConfig {
        learning_rate: 0.05,
        observability: Observability::Pomdp,
        hidden_layers: vec![6],
        rehearsal: RehearsalConfig {
            strategy,
            pseudoset_size: pr,
            relearn_gap: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Drives an agent through a fixed action sequence and returns its network.
fn scripted_trajectory(mut agent: Agent, actions: usize) -> Network {
    let params = PhysicsParams::default();
    let mut env = ChaCha8Rng::seed_from_u64(99);
    let mut policy = ChaCha8Rng::seed_from_u64(100);
    let mut episode = 0;
    let mut state = cartpole::reset(&params, &mut env);
    agent.begin_episode(episode).unwrap();
    for _ in 0..actions {
        let action = Action::ALL[policy.gen_range(0..2)];
        let out = cartpole::step(&state, action, &params).unwrap();
        let t = Transition {
            features_before: agent.features(&state).unwrap(),
            action,
            reward: out.reward,
            features_after: agent.features(&out.next).unwrap(),
            terminal: out.terminal,
        };
        agent.learn_transition(&t).unwrap();
        if out.terminal {
            episode += 1;
            agent.begin_episode(episode).unwrap();
            state = cartpole::reset(&params, &mut env);
        } else {
            state = out.next;
        }
    }
    agent.network().clone()
}

#[test]
fn strategy_none_and_empty_batch_agree_over_a_trajectory() {
    let none = Agent::new(agent_config(Strategy::None, 0), 5).unwrap();
    let batch = Agent::new(agent_config(Strategy::Batch, 0), 5).unwrap();
    assert_eq!(none.network(), batch.network());
    assert_eq!(
        scripted_trajectory(none, 300),
        scripted_trajectory(batch, 300)
    );
}

#[test]
fn strategy_none_is_the_online_path() {
    let cfg = agent_config(Strategy::None, 0);
    let mut agent = Agent::new(cfg.clone(), 1).unwrap();
    let net = agent.network().clone();
    let before = fv(vec![1.0, 0.0, 0.0, 3.0]);
    let after = fv(vec![1.5, 0.0, 0.0, 4.0]);
    let t = Transition {
        features_before: before.clone(),
        action: Action::PushRight,
        reward: 0.0,
        features_after: after.clone(),
        terminal: false,
    };
    agent.learn_transition(&t).unwrap();

    let next_q = net.predict(after.as_slice()).unwrap();
    let target = cfg.gamma * next_q[0].max(next_q[1]);
    let (q, trace) = net.forward(before.as_slice()).unwrap();
    let errs = net.backprop_errors(&trace, &[0.0, target - q[1]]).unwrap();
    assert_eq!(
        agent.network(),
        &net.online_update(&trace, &errs, cfg.learning_rate).unwrap()
    );
}

#[test]
fn zero_td_error_leaves_every_strategy_unchanged() {
    for (strategy, pr) in [
        (Strategy::None, 0),
        (Strategy::FreanRobins, 4),
        (Strategy::Batch, 4),
    ] {
        let mut agent = Agent::new(agent_config(strategy, pr), 2).unwrap();
        let net = agent.network().clone();
        let before = fv(vec![0.0, 0.5, 2.0, 0.0]);
        // terminal transition whose reward equals the current Q of the acted unit
        let q = net.predict(before.as_slice()).unwrap();
        let t = Transition {
            features_before: before.clone(),
            action: Action::PushLeft,
            reward: q[0],
            features_after: before,
            terminal: true,
        };
        agent.learn_transition(&t).unwrap();
        assert_eq!(agent.network(), &net, "{strategy:?}");
    }
}

#[test]
fn non_acted_output_is_untouched_in_single_gap_net() {
    // with no hidden layer the masked error must leave the other row alone
    let cfg = AgentConfig {
        hidden_layers: vec![],
        observability: Observability::Pomdp,
        ..Default::default()
    };
    let mut agent = Agent::new(cfg, 3).unwrap();
    let net = agent.network().clone();
    let t = Transition {
        features_before: fv(vec![1.0, 0.0, 2.0, 0.0]),
        action: Action::PushLeft,
        reward: -1.0,
        features_after: fv(vec![0.0; 4]),
        terminal: true,
    };
    agent.learn_transition(&t).unwrap();
    assert_eq!(agent.network().weights(0).row(1), net.weights(0).row(1));
    assert_ne!(agent.network().weights(0).row(0), net.weights(0).row(0));
}
