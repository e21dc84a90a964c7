//! Stochastic security games on linear influence networks, played between a
//! Q-learning defender and an attacker that models the defender's learning.

// NaN-rejecting range checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod game;
pub mod harness;
pub mod iql;
pub mod mlp;
pub mod ndp;
pub mod network;
pub mod oracle;

pub use baselines::{fi_greedy_act, AttackerKind, IqlAttacker};
pub use error::{Error, Result};
pub use game::{ActionSet, GameConfig, Move, SecurityGame, TransitionSupport};
pub use iql::{softmax_policy, IqlAgent, IqlParams, QTable};
pub use mlp::{MlpModel, MlpSpec, TrainConfig, ValueDataset};
pub use ndp::{AttackerMdp, AttackerState, StateValue, ZeroValue};
pub use network::{AssetSet, DefenderReward, InfluenceNetwork, NetworkState};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/game.md")]
    mod game {}
    #[doc = include_str!("../../../book/src/defender.md")]
    mod defender {}
    #[doc = include_str!("../../../book/src/attacker.md")]
    mod attacker {}
    #[doc = include_str!("../../../book/src/value_model.md")]
    mod value_model {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
