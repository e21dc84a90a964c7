//! Reference attackers the omniscient planner is compared against.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::iql::{IqlAgent, IqlParams};
use crate::ndp::{argmax, AttackerMdp, AttackerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerKind {
    /// Fitted value iteration with the deep value network.
    NdpCm,
    /// Fitted value iteration with the affine value model.
    NdpSm,
    /// Full-information myopic best response.
    FiGreedy,
    /// Independent Q-learning on the attacker's own table.
    Iql,
}

impl AttackerKind {
    pub const ALL: [AttackerKind; 4] = [
        AttackerKind::NdpCm,
        AttackerKind::NdpSm,
        AttackerKind::FiGreedy,
        AttackerKind::Iql,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackerKind::NdpCm => "ndp_cm",
            AttackerKind::NdpSm => "ndp_sm",
            AttackerKind::FiGreedy => "fi_greedy",
            AttackerKind::Iql => "iql",
        }
    }

    /// Value-model label written to result files.
    pub fn model_label(self) -> &'static str {
        match self {
            AttackerKind::NdpCm => "cm",
            AttackerKind::NdpSm => "sm",
            AttackerKind::FiGreedy | AttackerKind::Iql => "none",
        }
    }

    pub fn needs_value_model(self) -> bool {
        matches!(self, AttackerKind::NdpCm | AttackerKind::NdpSm)
    }
}

impl fmt::Display for AttackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown attacker `{s}`")))
    }
}

/// Attack maximizing the immediate expected reward against the defender's
/// current softmax play; ties go to the lowest action index.
pub fn fi_greedy_act(mdp: &AttackerMdp<'_>, z: &AttackerState) -> Result<usize> {
    let rewards = (0..mdp.game().n_moves())
        .map(|u| mdp.expected_reward(z, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax(&rewards))
}

/// The learning baseline: the same Q-learner the defender runs, fed with the
/// attacker's rewards and blind to the defender's table.
#[derive(Clone, Debug)]
pub struct IqlAttacker {
    agent: IqlAgent,
}

impl IqlAttacker {
    pub fn new(n_states: usize, n_moves: usize, params: IqlParams) -> Self {
        Self {
            agent: IqlAgent::new(n_states, n_moves, params),
        }
    }

    pub fn q(&self) -> &crate::iql::QTable {
        &self.agent.q
    }

    /// Samples an attack from the softmax over the attacker's own row.
    pub fn act<R: Rng + ?Sized>(&mut self, state: usize, rng: &mut R) -> usize {
        self.agent.act(state, rng)
    }

    pub fn observe(&mut self, state: usize, attack: usize, reward: f64, next: usize) -> Result<()> {
        self.agent.learn(state, attack, reward, next)
    }
}
