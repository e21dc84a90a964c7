//! Tabular independent Q-learning with Boltzmann action selection.

use rand::Rng;

use crate::error::{Error, Result};

/// Dense `states x actions` table of action values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch {
                expected: n_states * n_actions,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("q entry {i} is not finite")));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.n_actions + action] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    fn check(&self, state: usize, action: usize) -> Result<()> {
        if state >= self.n_states {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: state,
                limit: self.n_states,
            });
        }
        if action >= self.n_actions {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: action,
                limit: self.n_actions,
            });
        }
        Ok(())
    }

    /// One Q-learning step in place; only entry `(state, action)` changes.
    pub fn apply_update(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
        params: &IqlParams,
    ) -> Result<()> {
        self.check(state, action)?;
        self.check(next_state, 0)?;
        q_update_in_place(
            &mut self.values,
            self.n_actions,
            state,
            action,
            reward,
            next_state,
            params.alpha,
            params.gamma,
        );
        Ok(())
    }

    /// Returns the table after one Q-learning step.
    pub fn updated(
        &self,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
        params: &IqlParams,
    ) -> Result<QTable> {
        let mut next = self.clone();
        next.apply_update(state, action, reward, next_state, params)?;
        Ok(next)
    }
}

/// The value `(1-α) q(s,a) + α (r + γ max_a' q(s',a'))` that a Q-learning step
/// would write into entry `(s, a)` of a flat table.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn q_update_value(
    values: &[f64],
    n_actions: usize,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let next_row = &values[next_state * n_actions..(next_state + 1) * n_actions];
    let best = next_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let old = values[state * n_actions + action];
    (1.0 - alpha) * old + alpha * (reward + gamma * best)
}

#[inline]
#[allow(clippy::too_many_arguments)]
pub fn q_update_in_place(
    values: &mut [f64],
    n_actions: usize,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    alpha: f64,
    gamma: f64,
) {
    let v = q_update_value(values, n_actions, state, action, reward, next_state, alpha, gamma);
    values[state * n_actions + action] = v;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IqlParams {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for IqlParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gamma: 0.95,
            tau: 1.0,
        }
    }
}

impl IqlParams {
    pub fn validate(&self) -> Result<()> {
        // alpha = 0 is allowed: it freezes the learner, which the oracles rely on
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        Ok(())
    }
}

/// Boltzmann distribution over a row of action values.
pub fn softmax_policy(row: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidTemperature(tau));
    }
    let mut out = vec![0.0; row.len()];
    softmax_into(row, tau, &mut out);
    Ok(out)
}

/// Unchecked softmax for hot loops; `tau` must be positive.
#[inline]
pub fn softmax_into(row: &[f64], tau: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &q) in out.iter_mut().zip(row) {
        *o = ((q - max) / tau).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_action<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> Result<usize> {
    if dist.is_empty() {
        return Err(Error::InvalidDistribution("empty".into()));
    }
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("{dist:?}")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(sample_index(dist, rng))
}

#[inline]
pub(crate) fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    // rounding left x above the accumulated mass; take the last positive entry
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

/// A Q-learner that acts by softmax over its own table.
#[derive(Clone, Debug)]
pub struct IqlAgent {
    pub q: QTable,
    pub params: IqlParams,
    scratch: Vec<f64>,
}

impl IqlAgent {
    pub fn new(n_states: usize, n_actions: usize, params: IqlParams) -> Self {
        Self {
            q: QTable::zeros(n_states, n_actions),
            params,
            scratch: vec![0.0; n_actions],
        }
    }

    pub fn act<R: Rng + ?Sized>(&mut self, state: usize, rng: &mut R) -> usize {
        softmax_into(self.q.row(state), self.params.tau, &mut self.scratch);
        sample_index(&self.scratch, rng)
    }

    pub fn learn(&mut self, state: usize, action: usize, reward: f64, next_state: usize) -> Result<()> {
        self.q.apply_update(state, action, reward, next_state, &self.params)
    }
}
