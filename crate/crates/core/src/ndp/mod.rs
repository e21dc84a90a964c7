//! The omniscient attacker.
//!
//! The attacker knows the game, the defender's learning rule and its
//! parameters, and observes joint actions, so it can mirror the defender's
//! Q-table exactly. That turns the two-player game into a single-agent MDP
//! whose state is `z = (s, q)`: the network state plus the defender's table.
//! The defender's softmax play and its Q-update become part of the transition
//! kernel. The state space is continuous in `q`, so values are approximated by
//! fitted value iteration with a small neural network.

mod bounds;
mod fvi;
mod sampling;

pub use bounds::{asymptotic_bound, epsilon_bound, estimate_covering_radius, nearest_distance, BoundInputs};
pub use fvi::{bellman_targets, fitted_value_iteration, FviConfig, FviOutcome, HorizonReport};
pub use sampling::{rollout, sample_states, PlayStep, SamplerConfig};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::game::SecurityGame;
use crate::iql::{q_update_value, softmax_into, IqlParams, QTable};
use crate::mlp::{row_mut, MlpModel};

/// State of the attacker's MDP: a game state index and the defender's table.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackerState {
    pub state: usize,
    pub q: QTable,
}

impl AttackerState {
    pub fn new(state: usize, q: QTable) -> Self {
        Self { state, q }
    }
}

/// Per-state value estimates evaluated in batches.
pub trait StateValue: Sync {
    /// Values of all `n_states` game states for every input table row.
    fn evaluate(&self, inputs: ArrayView2<'_, f64>, n_states: usize) -> Array2<f64>;

    /// True when every value is zero, which lets callers skip evaluation.
    fn is_zero(&self) -> bool {
        false
    }
}

impl StateValue for MlpModel {
    fn evaluate(&self, inputs: ArrayView2<'_, f64>, n_states: usize) -> Array2<f64> {
        debug_assert_eq!(self.spec().output_dim, n_states);
        self.forward_unchecked(inputs)
    }
}

/// The identically-zero value function.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroValue;

impl StateValue for ZeroValue {
    fn evaluate(&self, inputs: ArrayView2<'_, f64>, n_states: usize) -> Array2<f64> {
        Array2::zeros((inputs.nrows(), n_states))
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// One successor of an attacker state under a fixed attack.
#[derive(Clone, Debug, PartialEq)]
pub struct Successor {
    pub defend: usize,
    pub next: AttackerState,
    pub probability: f64,
}

/// The attacker's MDP over `(s, q)` for a given game and defender.
#[derive(Clone, Debug)]
pub struct AttackerMdp<'g> {
    game: &'g SecurityGame,
    defender: IqlParams,
}

/// Distinct successor tables for one `z`, keyed by how the updated entry
/// changed. Two successors with equal `(defend, new value)` have identical
/// tables and share one network evaluation.
struct SuccessorRows {
    keys: Vec<(usize, u64)>,
}

impl SuccessorRows {
    fn slot(&mut self, defend: usize, value: f64, unchanged: bool) -> (usize, bool) {
        let key = if unchanged {
            (usize::MAX, 0)
        } else {
            (defend, value.to_bits())
        };
        match self.keys.iter().position(|k| *k == key) {
            Some(i) => (i, false),
            None => {
                self.keys.push(key);
                (self.keys.len() - 1, true)
            }
        }
    }
}

impl<'g> AttackerMdp<'g> {
    pub fn new(game: &'g SecurityGame, defender: IqlParams) -> Result<Self> {
        defender.validate()?;
        Ok(Self { game, defender })
    }

    pub fn game(&self) -> &'g SecurityGame {
        self.game
    }

    pub fn defender(&self) -> &IqlParams {
        &self.defender
    }

    pub fn gamma(&self) -> f64 {
        self.game.gamma()
    }

    pub fn initial_state(&self) -> AttackerState {
        AttackerState::new(0, QTable::zeros(self.game.n_states(), self.game.n_moves()))
    }

    fn check(&self, z: &AttackerState) -> Result<()> {
        if z.q.n_states() != self.game.n_states() || z.q.n_actions() != self.game.n_moves() {
            return Err(Error::ShapeMismatch {
                expected: self.game.q_len(),
                actual: z.q.as_slice().len(),
            });
        }
        if z.state >= self.game.n_states() {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: z.state,
                limit: self.game.n_states(),
            });
        }
        Ok(())
    }

    fn check_attack(&self, attack: usize) -> Result<()> {
        if attack >= self.game.n_moves() {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: attack,
                limit: self.game.n_moves(),
            });
        }
        Ok(())
    }

    /// The defender's current softmax policy at game state `s`.
    pub fn defender_policy(&self, q: &[f64], s: usize) -> Vec<f64> {
        let m = self.game.n_moves();
        let mut out = vec![0.0; m];
        softmax_into(&q[s * m..(s + 1) * m], self.defender.tau, &mut out);
        out
    }

    /// Attacker reward averaged over the defender's softmax play.
    pub fn expected_reward(&self, z: &AttackerState, attack: usize) -> Result<f64> {
        self.check(z)?;
        self.check_attack(attack)?;
        let br = self.defender_policy(z.q.as_slice(), z.state);
        Ok(self.expected_reward_with(&br, z.state, attack))
    }

    fn expected_reward_with(&self, br: &[f64], s: usize, attack: usize) -> f64 {
        br.iter()
            .enumerate()
            .map(|(d, w)| w * self.game.attacker_reward(s, attack, d))
            .sum()
    }

    /// The defender's table after stage `(s, d, u) -> s_next`.
    pub fn defender_next_q(
        &self,
        q: &QTable,
        s: usize,
        defend: usize,
        attack: usize,
        next: usize,
    ) -> Result<QTable> {
        self.check_attack(attack)?;
        self.check_attack(defend)?;
        let reward = self.game.defender_reward(s, attack, defend);
        q.updated(s, defend, reward, next, &self.defender)
    }

    /// The attacker's mirror of the defender's table after an observed stage.
    /// Identical to [`Self::defender_next_q`]; kept separate to name the role.
    pub fn track_defender(
        &self,
        q: &QTable,
        s: usize,
        defend: usize,
        attack: usize,
        next: usize,
    ) -> Result<QTable> {
        self.defender_next_q(q, s, defend, attack, next)
    }

    /// Every `(d, s_next)` successor of `z` under `attack`, weighted by the
    /// defender's softmax probability times the game kernel. Successors are
    /// not merged, even when their tables coincide.
    pub fn next_state_support(&self, z: &AttackerState, attack: usize) -> Result<Vec<Successor>> {
        self.check(z)?;
        self.check_attack(attack)?;
        if self.game.is_terminal(z.state) {
            return Ok(vec![Successor {
                defend: self.game.n_moves() - 1,
                next: z.clone(),
                probability: 1.0,
            }]);
        }
        let br = self.defender_policy(z.q.as_slice(), z.state);
        let mut out = Vec::new();
        for (d, &w) in br.iter().enumerate() {
            for &(next, p) in self.game.kernel(z.state, attack, d) {
                let q = self.defender_next_q(&z.q, z.state, d, attack, next)?;
                out.push(Successor {
                    defend: d,
                    next: AttackerState::new(next, q),
                    probability: w * p,
                });
            }
        }
        Ok(out)
    }

    /// `r(z, u) + γ E[v(z')]` for every attack `u`, with terminal successors
    /// valued at zero.
    pub fn action_values<V: StateValue + ?Sized>(&self, z: &AttackerState, value: &V) -> Result<Vec<f64>> {
        self.check(z)?;
        let batch = self.action_values_batch(&[(z.state, z.q.as_slice())], value);
        Ok(batch.into_iter().next().expect("one state in, one row out"))
    }

    /// Batched [`Self::action_values`] over raw `(state, q)` pairs. All
    /// successor tables of all inputs are evaluated in one forward pass.
    pub fn action_values_batch<V: StateValue + ?Sized>(
        &self,
        zs: &[(usize, &[f64])],
        value: &V,
    ) -> Vec<Vec<f64>> {
        let game = self.game;
        let m = game.n_moves();
        let q_len = game.q_len();
        let (alpha, gamma_d) = (self.defender.alpha, self.defender.gamma);
        let gamma = game.gamma();
        let skip_eval = value.is_zero();

        let mut rewards = vec![vec![0.0; m]; zs.len()];
        // (z index, attack, row, next state, weight)
        let mut terms: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
        // (z index, defend, new entry value)
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        let mut br = vec![0.0; m];

        for (zi, &(s, q)) in zs.iter().enumerate() {
            if game.is_terminal(s) {
                continue;
            }
            softmax_into(&q[s * m..(s + 1) * m], self.defender.tau, &mut br);
            let mut local = SuccessorRows { keys: Vec::new() };
            let base_row = rows.len();
            for u in 0..m {
                rewards[zi][u] = self.expected_reward_with(&br, s, u);
                if skip_eval {
                    continue;
                }
                for (d, &w) in br.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let r_d = game.defender_reward(s, u, d);
                    for &(next, p) in game.kernel(s, u, d) {
                        if game.is_terminal(next) {
                            continue;
                        }
                        let new = q_update_value(q, m, s, d, r_d, next, alpha, gamma_d);
                        let unchanged = new.to_bits() == q[s * m + d].to_bits();
                        let (slot, fresh) = local.slot(d, new, unchanged);
                        if fresh {
                            rows.push((zi, d, new));
                        }
                        terms.push((zi, u, base_row + slot, next, w * p));
                    }
                }
            }
        }

        let mut out = rewards;
        if terms.is_empty() {
            return out;
        }
        let mut inputs = Array2::<f64>::zeros((rows.len(), q_len));
        for (r, &(zi, d, new)) in rows.iter().enumerate() {
            let (s, q) = zs[zi];
            let dst = row_mut(&mut inputs, r);
            dst.copy_from_slice(q);
            dst[s * m + d] = new;
        }
        let values = value.evaluate(inputs.view(), game.n_states());
        for &(zi, u, row, next, weight) in &terms {
            out[zi][u] += gamma * weight * values[(row, next)];
        }
        out
    }

    /// `max_u { r(z,u) + γ E[v(z')] }`; zero at the terminal state.
    pub fn bellman_backup<V: StateValue + ?Sized>(&self, z: &AttackerState, value: &V) -> Result<f64> {
        Ok(max_value(&self.action_values(z, value)?))
    }

    /// Greedy one-step lookahead on `value`, ties to the lowest index.
    pub fn act<V: StateValue + ?Sized>(&self, z: &AttackerState, value: &V) -> Result<usize> {
        Ok(argmax(&self.action_values(z, value)?))
    }

    /// Largest attacker stage reward magnitude over all `(s, u, d)`.
    pub fn r_max(&self) -> f64 {
        self.game.max_abs_attacker_reward()
    }

    /// The set `[low, 0]` (or `[0, high]`) that Q-learning iterates from a
    /// zero table can never leave, given the defender's reward range.
    pub fn reachable_q_box(&self) -> (f64, f64) {
        let game = self.game;
        let mut lo: f64 = 0.0;
        let mut hi: f64 = 0.0;
        for s in 0..game.n_states() {
            for u in 0..game.n_moves() {
                for d in 0..game.n_moves() {
                    let r = game.defender_reward(s, u, d);
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
        }
        let scale = 1.0 / (1.0 - self.defender.gamma);
        (lo * scale, hi * scale)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

pub(crate) fn max_value(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
