//! Exact evaluators with no function approximation, used to check the
//! approximate machinery.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::SecurityGame;
use crate::iql::{sample_index, softmax_into, QTable};
use crate::ndp::{argmax, AttackerMdp, AttackerState};

/// Tree expansion grows as `(|D| * |S'|)^H`; deeper horizons are refused.
pub const MAX_EXACT_HORIZON: usize = 6;

const ROW_TOL: f64 = 1e-12;

/// A finite MDP with tabulated rewards and transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// `r[s * n_actions + a]`.
    rewards: Vec<f64>,
    /// `p[(s * n_actions + a) * n_states + s']`.
    transitions: Vec<f64>,
    gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViSolution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    /// Optimal action values, `q[s * n_actions + a]`.
    pub q: Vec<f64>,
    pub iterations: usize,
    /// `max_s |(T v)(s) - v(s)|` at the returned values.
    pub residual: f64,
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("mdp needs at least one state and action"));
        }
        if rewards.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch {
                expected: n_states * n_actions,
                actual: rewards.len(),
            });
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::ShapeMismatch {
                expected: n_states * n_actions * n_states,
                actual: transitions.len(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config(format!("gamma must be in [0, 1), got {gamma}")));
        }
        for (row, chunk) in transitions.chunks(n_states).enumerate() {
            let total: f64 = chunk.iter().sum();
            if chunk.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "transition row (s={}, a={}) sums to {total}",
                    row / n_actions,
                    row % n_actions
                )));
            }
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::config("rewards must be finite"));
        }
        Ok(Self {
            n_states,
            n_actions,
            rewards,
            transitions,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let row = (s * self.n_actions + a) * self.n_states;
        &self.transitions[row..row + self.n_states]
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.rewards.clone(),
            self.transitions.clone(),
            gamma,
        )
    }

    /// `r(s,a) + γ Σ p(s'|s,a) v(s')` for every pair.
    pub fn action_values(&self, v: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let cont: f64 = self.transition(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
                q.push(self.reward(s, a) + self.gamma * cont);
            }
        }
        q
    }

    fn greedy(&self, q: &[f64]) -> (Vec<f64>, Vec<usize>) {
        q.chunks(self.n_actions)
            .map(|row| {
                let a = argmax(row);
                (row[a], a)
            })
            .unzip()
    }

    /// Bellman optimality residual `max_s |(T v)(s) - v(s)|`.
    pub fn residual(&self, v: &[f64]) -> f64 {
        let (tv, _) = self.greedy(&self.action_values(v));
        tv.iter().zip(v).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Value iteration from zero until successive iterates differ by less than
/// `tol (1-γ) / γ` in sup norm, which leaves a Bellman residual below `tol`.
pub fn exact_vi(mdp: &FiniteMdp, tol: f64) -> Result<ViSolution> {
    if !(tol > 0.0) {
        return Err(Error::config(format!("tolerance must be positive, got {tol}")));
    }
    let threshold = if mdp.gamma > 0.0 {
        tol * (1.0 - mdp.gamma) / mdp.gamma
    } else {
        f64::INFINITY
    };
    let mut v = vec![0.0; mdp.n_states];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let q = mdp.action_values(&v);
        let (next, policy) = mdp.greedy(&q);
        let change = next.iter().zip(&v).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
        v = next;
        if change < threshold || (mdp.gamma == 0.0 && iterations > 1) {
            let q = mdp.action_values(&v);
            let residual = mdp.residual(&v);
            return Ok(ViSolution {
                values: v,
                policy,
                q,
                iterations,
                residual,
            });
        }
    }
}

/// Exact value of a stationary deterministic policy, solving
/// `(I - γ P_π) v = r_π` by Gaussian elimination.
pub fn policy_value(mdp: &FiniteMdp, policy: &[usize]) -> Result<Vec<f64>> {
    let n = mdp.n_states;
    if policy.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: policy.len(),
        });
    }
    if let Some(&a) = policy.iter().find(|&&a| a >= mdp.n_actions) {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: a,
            limit: mdp.n_actions,
        });
    }
    let mut a = vec![vec![0.0; n + 1]; n];
    for s in 0..n {
        let p = mdp.transition(s, policy[s]);
        for t in 0..n {
            a[s][t] = if s == t { 1.0 } else { 0.0 } - mdp.gamma * p[t];
        }
        a[s][n] = mdp.reward(s, policy[s]);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        a.swap(col, pivot);
        let diag = a[col][col];
        for k in col..=n {
            a[col][k] /= diag;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in col..=n {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    Ok(a.into_iter().map(|row| row[n]).collect())
}

/// The finite attacker MDP induced by a defender frozen at `q_fixed` and
/// playing softmax with temperature `tau`.
pub fn static_defender_mdp(game: &SecurityGame, q_fixed: &QTable, tau: f64) -> Result<FiniteMdp> {
    if q_fixed.n_states() != game.n_states() || q_fixed.n_actions() != game.n_moves() {
        return Err(Error::ShapeMismatch {
            expected: game.q_len(),
            actual: q_fixed.as_slice().len(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidTemperature(tau));
    }
    let (n, m) = (game.n_states(), game.n_moves());
    let mut rewards = Vec::with_capacity(n * m);
    let mut transitions = vec![0.0; n * m * n];
    let mut br = vec![0.0; m];
    for s in 0..n {
        softmax_into(q_fixed.row(s), tau, &mut br);
        for u in 0..m {
            let mut r = 0.0;
            for (d, &w) in br.iter().enumerate() {
                r += w * game.attacker_reward(s, u, d);
                for &(next, p) in game.kernel(s, u, d) {
                    transitions[(s * m + u) * n + next] += w * p;
                }
            }
            rewards.push(r);
        }
    }
    // Re-normalize rows so floating error in the softmax never trips validation.
    for row in transitions.chunks_mut(n) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    FiniteMdp::new(n, m, rewards, transitions, game.gamma())
}

pub fn exact_vi_static_defender(
    game: &SecurityGame,
    q_fixed: &QTable,
    tau: f64,
    tol: f64,
) -> Result<ViSolution> {
    exact_vi(&static_defender_mdp(game, q_fixed, tau)?, tol)
}

/// Exact `H`-stage discounted attacker return from `z0` under `policy`,
/// expanding every defender action and next state, with the defender's table
/// updated exactly on each branch.
pub fn exact_policy_value<P>(
    mdp: &AttackerMdp<'_>,
    z0: &AttackerState,
    policy: &P,
    horizon: usize,
) -> Result<f64>
where
    P: Fn(&AttackerState) -> Result<usize> + ?Sized,
{
    if horizon > MAX_EXACT_HORIZON {
        return Err(Error::HorizonTooLarge {
            requested: horizon,
            limit: MAX_EXACT_HORIZON,
        });
    }
    expand(mdp, z0, policy, horizon)
}

fn expand<P>(mdp: &AttackerMdp<'_>, z: &AttackerState, policy: &P, horizon: usize) -> Result<f64>
where
    P: Fn(&AttackerState) -> Result<usize> + ?Sized,
{
    if horizon == 0 || mdp.game().is_terminal(z.state) {
        return Ok(0.0);
    }
    let u = policy(z)?;
    let mut total = mdp.expected_reward(z, u)?;
    if horizon > 1 {
        let mut cont = 0.0;
        for succ in mdp.next_state_support(z, u)? {
            if !mdp.game().is_terminal(succ.next.state) {
                cont += succ.probability * expand(mdp, &succ.next, policy, horizon - 1)?;
            }
        }
        total += mdp.gamma() * cont;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
}

/// Sampled counterpart of [`exact_policy_value`]: plays `episodes` truncated
/// episodes of at most `horizon` stages with a live softmax defender and
/// realized (not averaged) stage rewards.
pub fn monte_carlo_truncated_return<P, R>(
    mdp: &AttackerMdp<'_>,
    z0: &AttackerState,
    policy: &P,
    horizon: usize,
    episodes: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate>
where
    P: Fn(&AttackerState) -> Result<usize> + ?Sized,
    R: Rng + ?Sized,
{
    if episodes < 2 {
        return Err(Error::config("need at least two episodes for a standard error"));
    }
    let game = mdp.game();
    let m = game.n_moves();
    let mut br = vec![0.0; m];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut z = z0.clone();
        let mut discount = 1.0;
        let mut ret = 0.0;
        for _ in 0..horizon {
            if game.is_terminal(z.state) {
                break;
            }
            let u = policy(&z)?;
            softmax_into(z.q.row(z.state), mdp.defender().tau, &mut br);
            let d = sample_index(&br, rng);
            ret += discount * game.attacker_reward(z.state, u, d);
            let next = game.sample_next(z.state, u, d, rng);
            z = AttackerState::new(next, mdp.defender_next_q(&z.q, z.state, d, u, next)?);
            discount *= mdp.gamma();
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    let n = episodes as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var.max(0.0) / n).sqrt(),
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::fi_greedy_act;
    use crate::iql::IqlParams;
    use approx::assert_abs_diff_eq;

    #[test]
    fn geometric_series() {
        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![1.0], 0.95).unwrap();
        let sol = exact_vi(&mdp, 1e-10).unwrap();
        assert_abs_diff_eq!(sol.values[0], 20.0, epsilon = 1e-8);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mdp = FiniteMdp::new(2, 2, vec![0.0; 4], vec![0.5; 8], 0.9).unwrap();
        let sol = exact_vi(&mdp, 1e-9).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_state_chain_closed_form() {
        // s0 -> s1 (r=1), s1 -> s0 (r=2), one action each:
        // v0 = 1 + γ v1, v1 = 2 + γ v0  =>  v0 = (1 + 2γ) / (1 - γ²)
        let g: f64 = 0.9;
        let mdp = FiniteMdp::new(2, 1, vec![1.0, 2.0], vec![0.0, 1.0, 1.0, 0.0], g).unwrap();
        let sol = exact_vi(&mdp, 1e-11).unwrap();
        assert_abs_diff_eq!(sol.values[0], (1.0 + 2.0 * g) / (1.0 - g * g), epsilon = 1e-8);
        assert_abs_diff_eq!(sol.values[1], (2.0 + g) / (1.0 - g * g), epsilon = 1e-8);
        let exact = policy_value(&mdp, &[0, 0]).unwrap();
        assert_abs_diff_eq!(exact[0], (1.0 + 2.0 * g) / (1.0 - g * g), epsilon = 1e-12);
    }

    #[test]
    fn invalid_mdps_are_rejected() {
        assert!(FiniteMdp::new(1, 1, vec![1.0], vec![0.9], 0.5).is_err());
        assert!(FiniteMdp::new(1, 1, vec![1.0, 2.0], vec![1.0], 0.5).is_err());
        assert!(FiniteMdp::new(1, 1, vec![1.0], vec![1.0], 1.0).is_err());
        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![1.0], 0.5).unwrap();
        assert!(exact_vi(&mdp, 0.0).is_err());
    }

    #[test]
    fn static_defender_terminal_is_worthless() {
        let game = SecurityGame::reference();
        let sol = exact_vi_static_defender(&game, &QTable::zeros(9, 4), 1.0, 1e-10).unwrap();
        assert_eq!(sol.values[8], 0.0);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn myopic_static_defender_attacks_asset_three() {
        let game = SecurityGame::reference();
        let mdp = static_defender_mdp(&game, &QTable::zeros(9, 4), 1.0)
            .unwrap()
            .with_gamma(0.0)
            .unwrap();
        let sol = exact_vi(&mdp, 1e-10).unwrap();
        assert_eq!(sol.policy[0], 2);
        assert_abs_diff_eq!(sol.values[0], 8.36, epsilon = 1e-12);
    }

    #[test]
    fn static_values_grow_with_discount() {
        let game = SecurityGame::reference();
        let base = static_defender_mdp(&game, &QTable::zeros(9, 4), 1.0).unwrap();
        let solve = |g| exact_vi(&base.with_gamma(g).unwrap(), 1e-10).unwrap().values;
        let (a, b, c) = (solve(0.0), solve(0.5), solve(0.95));
        for s in 0..9 {
            assert!(a[s] <= b[s] + 1e-12 && b[s] <= c[s] + 1e-12);
        }
    }

    #[test]
    fn short_horizons() {
        let game = SecurityGame::reference();
        let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
        let z0 = mdp.initial_state();
        let greedy = |z: &AttackerState| fi_greedy_act(&mdp, z);
        assert_eq!(exact_policy_value(&mdp, &z0, &greedy, 0).unwrap(), 0.0);
        let one = exact_policy_value(&mdp, &z0, &greedy, 1).unwrap();
        assert_abs_diff_eq!(one, mdp.expected_reward(&z0, 2).unwrap(), epsilon = 1e-12);
        assert!(matches!(
            exact_policy_value(&mdp, &z0, &greedy, 7),
            Err(Error::HorizonTooLarge { .. })
        ));
    }

    #[test]
    fn horizon_tail_bound() {
        let game = SecurityGame::reference();
        let mdp = AttackerMdp::new(&game, IqlParams::default()).unwrap();
        let z0 = mdp.initial_state();
        let greedy = |z: &AttackerState| fi_greedy_act(&mdp, z);
        let g = game.gamma();
        let r_max = game.max_abs_attacker_reward();
        let mut prev = 0.0;
        for h in 0..5 {
            let v = exact_policy_value(&mdp, &z0, &greedy, h + 1).unwrap();
            assert!((v - prev).abs() <= g.powi(h as i32) * r_max / (1.0 - g));
            prev = v;
        }
    }
}
