use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::baselines::{fi_greedy_act, AttackerKind, IqlAttacker};
use crate::error::{Error, Result};
use crate::game::SecurityGame;
use crate::iql::{IqlAgent, IqlParams, QTable};
use crate::mlp::MlpModel;
use crate::ndp::{AttackerMdp, AttackerState};

/// How an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndCause {
    Terminal,
    /// Truncated at the episode cap.
    Cap,
}

impl fmt::Display for EndCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndCause::Terminal => "terminal",
            EndCause::Cap => "cap",
        })
    }
}

/// One row of `episodes.csv`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct EpisodeRecord {
    pub trial: usize,
    pub episode: usize,
    pub attacker_return: f64,
    pub defender_return: f64,
    pub length: usize,
    pub cause: EndCause,
    pub attacker: AttackerKind,
    pub tau: f64,
    pub model: String,
}

/// The attacker's decision rule inside a duel.
#[derive(Clone, Debug)]
pub enum Attacker<'m> {
    /// One-step lookahead on a trained value network.
    Lookahead(&'m MlpModel),
    Greedy,
    Learner(IqlAttacker),
}

impl<'m> Attacker<'m> {
    /// Builds the attacker for `kind`; model-based kinds need `model`.
    pub fn for_kind(
        kind: AttackerKind,
        model: Option<&'m MlpModel>,
        game: &SecurityGame,
        params: IqlParams,
    ) -> Result<Self> {
        match kind {
            AttackerKind::NdpCm | AttackerKind::NdpSm => model
                .map(Attacker::Lookahead)
                .ok_or_else(|| Error::config(format!("attacker `{kind}` needs a trained model"))),
            AttackerKind::FiGreedy => Ok(Attacker::Greedy),
            AttackerKind::Iql => Ok(Attacker::Learner(IqlAttacker::new(
                game.n_states(),
                game.n_moves(),
                params,
            ))),
        }
    }
}

/// What happened in one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    pub state: usize,
    pub attack: usize,
    pub defend: usize,
    pub next: usize,
    pub attacker_reward: f64,
    pub defender_reward: f64,
}

/// A Q-learning defender against one attacker, with the attacker's exact
/// mirror of the defender's table maintained alongside.
///
/// Random draws per stage happen in a fixed order (attacker, defender,
/// transition) from one stream, so a seed fixes the whole trial.
pub struct Duel<'g, 'm> {
    mdp: AttackerMdp<'g>,
    defender: IqlAgent,
    attacker: Attacker<'m>,
    /// Current state and the attacker's copy of the defender's table.
    view: AttackerState,
    rng: ChaCha8Rng,
}

impl<'g, 'm> Duel<'g, 'm> {
    pub fn new(game: &'g SecurityGame, params: IqlParams, attacker: Attacker<'m>, seed: u64) -> Result<Self> {
        let mdp = AttackerMdp::new(game, params)?;
        if let Attacker::Lookahead(model) = attacker {
            let spec = model.spec();
            if spec.input_dim != game.q_len() || spec.output_dim != game.n_states() {
                return Err(Error::ShapeMismatch {
                    expected: game.q_len(),
                    actual: spec.input_dim,
                });
            }
        }
        Ok(Self {
            defender: IqlAgent::new(game.n_states(), game.n_moves(), params),
            view: mdp.initial_state(),
            mdp,
            attacker,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Back to the all-uncompromised state; learned tables are kept.
    pub fn reset_episode(&mut self) {
        self.view.state = 0;
    }

    pub fn state(&self) -> usize {
        self.view.state
    }

    pub fn defender_q(&self) -> &QTable {
        &self.defender.q
    }

    pub fn mirror_q(&self) -> &QTable {
        &self.view.q
    }

    pub fn is_over(&self) -> bool {
        self.mdp.game().is_terminal(self.view.state)
    }

    pub fn step(&mut self) -> Result<Stage> {
        let game = self.mdp.game();
        let s = self.view.state;
        if game.is_terminal(s) {
            return Err(Error::TerminalState);
        }
        let attack = match &mut self.attacker {
            Attacker::Lookahead(model) => self.mdp.act(&self.view, *model)?,
            Attacker::Greedy => fi_greedy_act(&self.mdp, &self.view)?,
            Attacker::Learner(agent) => agent.act(s, &mut self.rng),
        };
        let defend = self.defender.act(s, &mut self.rng);
        let next = game.sample_next(s, attack, defend, &mut self.rng);
        let attacker_reward = game.attacker_reward(s, attack, defend);
        let defender_reward = game.defender_reward(s, attack, defend);

        self.defender.learn(s, defend, defender_reward, next)?;
        self.view.q = self.mdp.track_defender(&self.view.q, s, defend, attack, next)?;
        assert_eq!(
            self.view.q, self.defender.q,
            "attacker's mirror diverged from the defender's table"
        );
        if let Attacker::Learner(agent) = &mut self.attacker {
            agent.observe(s, attack, attacker_reward, next)?;
        }
        self.view.state = next;
        Ok(Stage {
            state: s,
            attack,
            defend,
            next,
            attacker_reward,
            defender_reward,
        })
    }
}

/// Everything fixed across the trials of one experiment cell.
#[derive(Clone, Copy, Debug)]
pub struct TrialSetup<'g, 'm> {
    pub game: &'g SecurityGame,
    pub params: IqlParams,
    pub kind: AttackerKind,
    pub model: Option<&'m MlpModel>,
    pub episodes: usize,
}

/// Plays `episodes` episodes with tables that persist across episodes and
/// returns per-episode discounted returns.
pub fn run_trial(setup: &TrialSetup<'_, '_>, trial: usize, seed: u64) -> Result<Vec<EpisodeRecord>> {
    let game = setup.game;
    let attacker = Attacker::for_kind(setup.kind, setup.model, game, setup.params)?;
    let mut duel = Duel::new(game, setup.params, attacker, seed)?;
    let gamma = game.gamma();
    let cap = game.config().episode_cap;
    let mut records = Vec::with_capacity(setup.episodes);
    for episode in 0..setup.episodes {
        duel.reset_episode();
        let (mut ret_a, mut ret_d, mut discount) = (0.0, 0.0, 1.0);
        let mut length = 0;
        let cause = loop {
            if length == cap {
                break EndCause::Cap;
            }
            let stage = duel.step()?;
            ret_a += discount * stage.attacker_reward;
            ret_d += discount * stage.defender_reward;
            discount *= gamma;
            length += 1;
            if duel.is_over() {
                break EndCause::Terminal;
            }
        };
        records.push(EpisodeRecord {
            trial,
            episode,
            attacker_return: ret_a,
            defender_return: ret_d,
            length,
            cause,
            attacker: setup.kind,
            tau: setup.params.tau,
            model: setup.kind.model_label().to_string(),
        });
    }
    Ok(records)
}

/// Seed of trial `t` under master seed `master`.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    mix_seed(master, trial as u64)
}

/// Stateless 64-bit mix of two words (splitmix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
