use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secgame::ndp::{bellman_targets, rollout, sample_states, SamplerConfig};
use secgame::oracle::static_defender_mdp;
use secgame::{
    AttackerMdp, AttackerState, IqlParams, MlpModel, MlpSpec, QTable, SecurityGame, ZeroValue,
};

const BOX_LOW: f64 = -189.2;

fn random_state(rng: &mut impl Rng) -> AttackerState {
    let s = rng.random_range(0..8);
    let q = (0..36).map(|_| rng.random_range(BOX_LOW..0.0)).collect();
    AttackerState::new(s, QTable::from_values(9, 4, q).unwrap())
}

/// An affine model that ignores its input and returns `c` everywhere.
fn constant_model(c: f64) -> MlpModel {
    let mut m = MlpModel::zeros(MlpSpec::simple(36, 9));
    m.layers_mut()[0].bias.fill(c);
    m
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn successor_mass_is_one(seed in any::<u64>(), attack in 0usize..4, tau in 0.3f64..4.0) {
        let game = SecurityGame::reference();
        let mdp = AttackerMdp::new(&game, IqlParams { tau, ..IqlParams::default() }).unwrap();
        let z = random_state(&mut ChaCha8Rng::seed_from_u64(seed));
        let support = mdp.next_state_support(&z, attack).unwrap();
        let total: f64 = support.iter().map(|s| s.probability).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for succ in &support {
            // only the defended entry of the current state can change
            let changed: Vec<usize> = (0..36)
                .filter(|&i| succ.next.q.as_slice()[i] != z.q.as_slice()[i])
                .collect();
            prop_assert!(changed.iter().all(|&i| i == z.state * 4 + succ.defend));
        }
    }

    #[test]
    fn constant_value_shifts_backups(seed in any::<u64>(), c in -20.0f64..20.0) {
        let game = SecurityGame::reference();
        let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
        let z = random_state(&mut ChaCha8Rng::seed_from_u64(seed));
        let base = mdp.action_values(&z, &ZeroValue).unwrap();
        let shifted = mdp.action_values(&z, &constant_model(c)).unwrap();
        for u in 0..4 {
            let alive: f64 = mdp
                .next_state_support(&z, u)
                .unwrap()
                .iter()
                .filter(|s| !game.is_terminal(s.next.state))
                .map(|s| s.probability)
                .sum();
            prop_assert!((shifted[u] - base[u] - game.gamma() * c * alive).abs() < 1e-9);
        }
    }

    #[test]
    fn lookahead_on_zero_is_myopic(seed in any::<u64>()) {
        let game = SecurityGame::reference();
        let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
        let z = random_state(&mut ChaCha8Rng::seed_from_u64(seed));
        let values = mdp.action_values(&z, &ZeroValue).unwrap();
        for (u, v) in values.iter().enumerate() {
            prop_assert_eq!(*v, mdp.expected_reward(&z, u).unwrap());
        }
    }
}

#[test]
fn expected_reward_worked_example() {
    let game = SecurityGame::reference();
    let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
    let z = mdp.initial_state();
    let r: Vec<f64> = (0..4).map(|u| mdp.expected_reward(&z, u).unwrap()).collect();
    assert_abs_diff_eq!(r[0], 3.85, epsilon = 1e-12);
    assert_abs_diff_eq!(r[1], 2.87, epsilon = 1e-12);
    assert_abs_diff_eq!(r[2], 8.36, epsilon = 1e-12);
    assert_eq!(r[3], 0.0);
    assert_eq!(mdp.act(&z, &ZeroValue).unwrap(), 2);
}

#[test]
fn frozen_defender_reduces_to_the_static_mdp() {
    let game = SecurityGame::reference();
    let mdp = AttackerMdp::new(
        &game,
        IqlParams {
            alpha: 0.0,
            ..IqlParams::default()
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let z = random_state(&mut rng);
        let finite = static_defender_mdp(&game, &z.q, 1.0).unwrap();
        for u in 0..4 {
            assert_abs_diff_eq!(
                mdp.expected_reward(&z, u).unwrap(),
                finite.reward(z.state, u),
                epsilon = 1e-12
            );
            let mut marginal = [0.0; 9];
            for succ in mdp.next_state_support(&z, u).unwrap() {
                assert_eq!(succ.next.q, z.q);
                marginal[succ.next.state] += succ.probability;
            }
            for (a, b) in marginal.iter().zip(finite.transition(z.state, u)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn one_horizon_targets_are_myopic_values() {
    let game = SecurityGame::reference();
    let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let states: Vec<_> = (0..500).map(|_| random_state(&mut rng)).collect();
    let targets = bellman_targets(&mdp, &states, &ZeroValue);
    for (z, t) in states.iter().zip(targets) {
        let best = (0..4)
            .map(|u| mdp.expected_reward(z, u).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(t, best);
    }
}

#[test]
fn batched_and_single_backups_agree() {
    let game = SecurityGame::reference();
    let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
    let model = MlpModel::new(MlpSpec::complex(36, 9), 2).with_input_box(BOX_LOW, 0.0, 9.46);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states: Vec<_> = (0..300).map(|_| random_state(&mut rng)).collect();
    let batched = bellman_targets(&mdp, &states, &model);
    for (z, t) in states.iter().zip(batched) {
        // brute force over the unmerged successor list
        let best = (0..4)
            .map(|u| {
                let cont: f64 = mdp
                    .next_state_support(z, u)
                    .unwrap()
                    .iter()
                    .filter(|s| !game.is_terminal(s.next.state))
                    .map(|s| s.probability * model.forward(s.next.q.as_slice()).unwrap()[s.next.state])
                    .sum();
                mdp.expected_reward(z, u).unwrap() + game.gamma() * cont
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(t, best, epsilon = 1e-9);
    }
}

#[test]
fn terminal_state_has_zero_value() {
    let game = SecurityGame::reference();
    let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
    let z = AttackerState::new(8, QTable::zeros(9, 4));
    let model = constant_model(5.0);
    assert_eq!(mdp.bellman_backup(&z, &model).unwrap(), 0.0);
}

/// Pearson statistic of `counts` against equal expected frequencies.
fn chi_square(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn uniform_sampler_is_uniform() {
    let game = SecurityGame::reference();
    let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
    let cfg = SamplerConfig::uniform(BOX_LOW, 0.0, 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let states = sample_states(&mdp, &cfg, &ZeroValue, &mut rng).unwrap();
    assert_eq!(states.len(), 100_000);

    let mut state_counts = [0usize; 8];
    let mut bins = vec![[0usize; 10]; 36];
    for z in &states {
        state_counts[z.state] += 1;
        for (i, &v) in z.q.as_slice().iter().enumerate() {
            assert!((BOX_LOW..=0.0).contains(&v));
            let b = (((v - BOX_LOW) / -BOX_LOW) * 10.0).floor().min(9.0) as usize;
            bins[i][b] += 1;
        }
    }
    // 1% critical values of chi-square with 7 and 9 degrees of freedom
    assert!(chi_square(&state_counts) < 18.475, "{state_counts:?}");
    for (i, b) in bins.iter().enumerate() {
        assert!(chi_square(b) < 21.666, "coordinate {i}: {b:?}");
    }
}

#[test]
fn trajectory_samples_replay_from_zero() {
    let game = SecurityGame::reference();
    let params = IqlParams::default();
    let mdp = AttackerMdp::new(&game, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let steps = rollout(&mdp, &ZeroValue, 40, &mut rng);
    assert!(!steps.is_empty());
    let mut q = QTable::zeros(9, 4);
    for step in &steps {
        assert_eq!(step.q, q);
        let r = game.defender_reward(step.state, step.attack, step.defend);
        q = q.updated(step.state, step.defend, r, step.next, &params).unwrap();
    }

    let cfg = SamplerConfig {
        trajectory_mix: 1.0,
        rollout_episodes: 20,
        ..SamplerConfig::uniform(BOX_LOW, 0.0, 300)
    };
    let states = sample_states(&mdp, &cfg, &ZeroValue, &mut rng).unwrap();
    assert_eq!(states.len(), 300);
    assert_eq!(states[0].q, QTable::zeros(9, 4));
    let (lo, hi) = mdp.reachable_q_box();
    for z in &states {
        assert!(!game.is_terminal(z.state));
        assert!(z.q.as_slice().iter().all(|v| (lo..=hi).contains(v)));
    }
}
