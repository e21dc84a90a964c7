use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{argmax, AttackerMdp, AttackerState, StateValue};
use crate::error::{Error, Result};
use crate::iql::{q_update_in_place, sample_index, softmax_into, QTable};

/// Where fitted value iteration draws its states from.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub q_low: f64,
    pub q_high: f64,
    pub n_samples: usize,
    /// Fraction of samples taken from simulated play instead of the box.
    pub trajectory_mix: f64,
    /// Episodes per simulated trial when sampling from play. The defender's
    /// table starts from zero at the beginning of each trial.
    pub rollout_episodes: usize,
}

impl SamplerConfig {
    pub fn uniform(q_low: f64, q_high: f64, n_samples: usize) -> Self {
        Self {
            q_low,
            q_high,
            n_samples,
            trajectory_mix: 0.0,
            rollout_episodes: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_low <= self.q_high) || !self.q_low.is_finite() || !self.q_high.is_finite() {
            return Err(Error::config(format!(
                "q box [{}, {}] is empty or unbounded",
                self.q_low, self.q_high
            )));
        }
        if !(0.0..=1.0).contains(&self.trajectory_mix) {
            return Err(Error::config(format!(
                "trajectory_mix must be in [0, 1], got {}",
                self.trajectory_mix
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::config("samples_per_horizon must be positive"));
        }
        if self.rollout_episodes == 0 {
            return Err(Error::config("rollout_episodes must be positive"));
        }
        Ok(())
    }
}

/// One stage of simulated play, with the defender's table before the stage.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayStep {
    pub state: usize,
    pub q: QTable,
    pub attack: usize,
    pub defend: usize,
    pub next: usize,
}

/// Simulates a trial of `episodes` episodes between a Q-learning defender
/// (zero-initialized, persisting across episodes) and the lookahead attacker
/// on `value`, recording every stage.
pub fn rollout<V, R>(
    mdp: &AttackerMdp<'_>,
    value: &V,
    episodes: usize,
    rng: &mut R,
) -> Vec<PlayStep>
where
    V: StateValue + ?Sized,
    R: Rng + ?Sized,
{
    let game = mdp.game();
    let m = game.n_moves();
    let params = *mdp.defender();
    let mut q = vec![0.0; game.q_len()];
    let mut br = vec![0.0; m];
    let mut steps = Vec::new();
    for _ in 0..episodes {
        let mut s = 0;
        for _ in 0..game.config().episode_cap {
            let attack = argmax(&mdp.action_values_batch(&[(s, &q)], value)[0]);
            softmax_into(&q[s * m..(s + 1) * m], params.tau, &mut br);
            let defend = sample_index(&br, rng);
            let next = game.sample_next(s, attack, defend, rng);
            steps.push(PlayStep {
                state: s,
                q: QTable::from_values(game.n_states(), m, q.clone()).expect("finite table"),
                attack,
                defend,
                next,
            });
            let r_d = game.defender_reward(s, attack, defend);
            q_update_in_place(&mut q, m, s, defend, r_d, next, params.alpha, params.gamma);
            s = next;
            if game.is_terminal(s) {
                break;
            }
        }
    }
    steps
}

/// Draws attacker states: a `1 - trajectory_mix` share uniformly from the
/// non-terminal states times the per-entry box, the rest from simulated play
/// against the lookahead policy on `value`.
pub fn sample_states<V, R>(
    mdp: &AttackerMdp<'_>,
    cfg: &SamplerConfig,
    value: &V,
    rng: &mut R,
) -> Result<Vec<AttackerState>>
where
    V: StateValue + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let game = mdp.game();
    let n_traj = (cfg.n_samples as f64 * cfg.trajectory_mix).round() as usize;
    let n_uniform = cfg.n_samples - n_traj;
    let mut out = Vec::with_capacity(cfg.n_samples);

    let active = game.n_states() - 1;
    let box_dist = (cfg.q_low < cfg.q_high)
        .then(|| Uniform::new(cfg.q_low, cfg.q_high).expect("non-empty box"));
    for _ in 0..n_uniform {
        let state = rng.random_range(0..active);
        let values = match &box_dist {
            Some(dist) => (0..game.q_len()).map(|_| dist.sample(rng)).collect(),
            None => vec![cfg.q_low; game.q_len()],
        };
        let q = QTable::from_values(game.n_states(), game.n_moves(), values)?;
        out.push(AttackerState::new(state, q));
    }

    while out.len() < cfg.n_samples {
        let steps = rollout(mdp, value, cfg.rollout_episodes, rng);
        let room = cfg.n_samples - out.len();
        out.extend(
            steps
                .into_iter()
                .take(room)
                .map(|st| AttackerState::new(st.state, st.q)),
        );
    }
    Ok(out)
}
