//! The finite stochastic game played on a linear influence network.
//!
//! Each stage the attacker targets one asset (or idles) while the defender
//! protects one asset (or idles). A successful attack moves deterministically
//! to the state with the target added. The remaining mass (failed attack or
//! idle attacker) splits three ways: `p_e` ends the game, `p_r` resets it to
//! the all-uncompromised state, and the rest stays put.

use rand::Rng;

use crate::error::{Error, Result};
use crate::network::{AssetSet, DefenderReward, InfluenceNetwork, NetworkState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameConfig {
    /// Undefended compromise probability with no support.
    pub p_n0: f64,
    /// Undefended compromise probability with full support.
    pub p_n1: f64,
    /// Defended compromise probability with no support.
    pub p_d0: f64,
    /// Defended compromise probability with full support.
    pub p_d1: f64,
    /// Reset probability on an idle or failed attack.
    pub p_r: f64,
    /// End probability on an idle or failed attack.
    pub p_e: f64,
    pub gamma: f64,
    /// Safety bound on stages per episode; reaching it truncates the episode.
    pub episode_cap: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            p_n0: 0.7,
            p_n1: 0.4,
            p_d0: 0.5,
            p_d1: 0.2,
            p_r: 0.2,
            p_e: 0.3,
            gamma: 0.95,
            episode_cap: 500,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |lo: f64, hi: f64| 0.0 <= lo && lo <= hi && hi <= 1.0;
        if !ordered(self.p_n1, self.p_n0) {
            return Err(Error::config(format!(
                "need 0 <= p_n1 <= p_n0 <= 1, got p_n1={} p_n0={}",
                self.p_n1, self.p_n0
            )));
        }
        if !ordered(self.p_d1, self.p_d0) {
            return Err(Error::config(format!(
                "need 0 <= p_d1 <= p_d0 <= 1, got p_d1={} p_d0={}",
                self.p_d1, self.p_d0
            )));
        }
        if self.p_r < 0.0 || self.p_e < 0.0 || self.p_r + self.p_e > 1.0 {
            return Err(Error::config(format!(
                "need p_r, p_e >= 0 and p_r + p_e <= 1, got p_r={} p_e={}",
                self.p_r, self.p_e
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if self.episode_cap == 0 {
            return Err(Error::config("episode_cap must be positive"));
        }
        Ok(())
    }
}

/// One agent's move: act on an asset, or do nothing.
///
/// Indexed `0..n` for assets and `n` for the no-op, which is the column order
/// of every Q-table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Move {
    Target(usize),
    Noop,
}

impl Move {
    pub fn from_index(index: usize, n_assets: usize) -> Result<Self> {
        match index.cmp(&n_assets) {
            std::cmp::Ordering::Less => Ok(Move::Target(index)),
            std::cmp::Ordering::Equal => Ok(Move::Noop),
            std::cmp::Ordering::Greater => Err(Error::IndexOutOfRange {
                what: "action",
                index,
                limit: n_assets + 1,
            }),
        }
    }

    pub fn index(self, n_assets: usize) -> usize {
        match self {
            Move::Target(i) => i,
            Move::Noop => n_assets,
        }
    }
}

/// Both agents share the same action set: every asset plus the no-op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionSet {
    n_assets: usize,
}

impl ActionSet {
    pub fn new(n_assets: usize) -> Self {
        Self { n_assets }
    }

    pub fn len(&self) -> usize {
        self.n_assets + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = Move> + '_ {
        (0..self.n_assets)
            .map(Move::Target)
            .chain(std::iter::once(Move::Noop))
    }
}

/// All states in canonical order: bitmask ascending, terminal last.
pub fn enumerate_states(n_assets: usize) -> Vec<NetworkState> {
    (0..1u32 << n_assets)
        .map(|bits| NetworkState::Active(AssetSet::from_bits(bits)))
        .chain(std::iter::once(NetworkState::Terminal))
        .collect()
}

/// Distribution over next states with distinct entries and positive mass.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSupport(Vec<(NetworkState, f64)>);

impl TransitionSupport {
    fn push(&mut self, state: NetworkState, p: f64) {
        if p <= 0.0 {
            return;
        }
        match self.0.iter_mut().find(|(s, _)| *s == state) {
            Some((_, mass)) => *mass += p,
            None => self.0.push((state, p)),
        }
    }

    pub fn entries(&self) -> &[(NetworkState, f64)] {
        &self.0
    }

    pub fn probability_of(&self, state: NetworkState) -> f64 {
        self.0
            .iter()
            .find(|(s, _)| *s == state)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, p)| p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NetworkState {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(s, p) in &self.0 {
            acc += p;
            if u < acc {
                return s;
            }
        }
        self.0.last().expect("support is never empty").0
    }
}

/// Exact next-state distribution for a joint action.
pub fn transition_support(
    net: &InfluenceNetwork,
    cfg: &GameConfig,
    state: NetworkState,
    attack: Move,
    defend: Move,
) -> Result<TransitionSupport> {
    net.check_move(attack)?;
    net.check_move(defend)?;
    let mut support = TransitionSupport(Vec::with_capacity(4));
    let set = match state {
        NetworkState::Terminal => {
            support.push(NetworkState::Terminal, 1.0);
            return Ok(support);
        }
        NetworkState::Active(set) => set,
    };
    let p = match attack {
        Move::Target(i) => net.compromise_prob(cfg, state, attack, defend, i)?,
        Move::Noop => 0.0,
    };
    if let Move::Target(i) = attack {
        support.push(NetworkState::Active(set.with(i)), p);
    }
    let fail = 1.0 - p;
    support.push(NetworkState::Terminal, fail * cfg.p_e);
    support.push(NetworkState::INITIAL, fail * cfg.p_r);
    support.push(state, fail * (1.0 - cfg.p_e - cfg.p_r));
    Ok(support)
}

pub fn sample_transition<R: Rng + ?Sized>(
    net: &InfluenceNetwork,
    cfg: &GameConfig,
    state: NetworkState,
    attack: Move,
    defend: Move,
    rng: &mut R,
) -> Result<NetworkState> {
    Ok(transition_support(net, cfg, state, attack, defend)?.sample(rng))
}

/// A network and game configuration with all per-`(s, u, d)` quantities
/// tabulated by index.
///
/// Every hot loop (fitted value iteration, episode simulation, oracles) reads
/// from these tables instead of re-deriving influence matrices.
#[derive(Clone, Debug)]
pub struct SecurityGame {
    net: InfluenceNetwork,
    cfg: GameConfig,
    defender_rule: DefenderReward,
    states: Vec<NetworkState>,
    n_moves: usize,
    attacker_rewards: Vec<f64>,
    defender_rewards: Vec<f64>,
    kernel: Vec<Vec<(usize, f64)>>,
}

impl SecurityGame {
    pub fn new(
        net: InfluenceNetwork,
        cfg: GameConfig,
        defender_rule: DefenderReward,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = net.n_assets();
        let states = enumerate_states(n);
        let moves: Vec<Move> = ActionSet::new(n).iter().collect();
        let n_moves = moves.len();
        let cells = states.len() * n_moves * n_moves;
        let mut attacker_rewards = Vec::with_capacity(cells);
        let mut defender_rewards = Vec::with_capacity(cells);
        let mut kernel = Vec::with_capacity(cells);
        for &s in &states {
            for &u in &moves {
                for &d in &moves {
                    attacker_rewards.push(net.attacker_reward(&cfg, s, u, d)?);
                    defender_rewards.push(net.defender_reward(&cfg, defender_rule, s, u, d)?);
                    let support = transition_support(&net, &cfg, s, u, d)?;
                    kernel.push(
                        support
                            .entries()
                            .iter()
                            .map(|&(next, p)| (next.index(n), p))
                            .collect(),
                    );
                }
            }
        }
        Ok(Self {
            net,
            cfg,
            defender_rule,
            states,
            n_moves,
            attacker_rewards,
            defender_rewards,
            kernel,
        })
    }

    /// The reference network under the default configuration.
    pub fn reference() -> Self {
        Self::new(
            InfluenceNetwork::reference(),
            GameConfig::default(),
            DefenderReward::ZeroSum,
        )
        .expect("reference game is valid")
    }

    pub fn network(&self) -> &InfluenceNetwork {
        &self.net
    }

    pub fn config(&self) -> &GameConfig {
        &self.cfg
    }

    pub fn defender_rule(&self) -> DefenderReward {
        self.defender_rule
    }

    pub fn gamma(&self) -> f64 {
        self.cfg.gamma
    }

    pub fn n_assets(&self) -> usize {
        self.net.n_assets()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_moves(&self) -> usize {
        self.n_moves
    }

    /// Length of a flattened Q-table (`n_states * n_moves`).
    pub fn q_len(&self) -> usize {
        self.n_states() * self.n_moves
    }

    pub fn states(&self) -> &[NetworkState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> NetworkState {
        self.states[index]
    }

    pub fn terminal_index(&self) -> usize {
        self.n_states() - 1
    }

    pub fn is_terminal(&self, index: usize) -> bool {
        index == self.terminal_index()
    }

    pub fn move_of(&self, index: usize) -> Move {
        Move::from_index(index, self.n_assets()).expect("move index in range")
    }

    #[inline]
    fn cell(&self, s: usize, u: usize, d: usize) -> usize {
        (s * self.n_moves + u) * self.n_moves + d
    }

    #[inline]
    pub fn attacker_reward(&self, s: usize, u: usize, d: usize) -> f64 {
        self.attacker_rewards[self.cell(s, u, d)]
    }

    #[inline]
    pub fn defender_reward(&self, s: usize, u: usize, d: usize) -> f64 {
        self.defender_rewards[self.cell(s, u, d)]
    }

    /// Next-state support as `(state index, probability)` pairs.
    #[inline]
    pub fn kernel(&self, s: usize, u: usize, d: usize) -> &[(usize, f64)] {
        &self.kernel[self.cell(s, u, d)]
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, u: usize, d: usize, rng: &mut R) -> usize {
        let support = self.kernel(s, u, d);
        let x: f64 = rng.random();
        let mut acc = 0.0;
        for &(next, p) in support {
            acc += p;
            if x < acc {
                return next;
            }
        }
        support.last().expect("support is never empty").0
    }

    /// `max |r_u(s, u, d)|` by exhaustive enumeration.
    pub fn max_abs_attacker_reward(&self) -> f64 {
        self.attacker_rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `max |r_d(s, u, d)|` by exhaustive enumeration.
    pub fn max_abs_defender_reward(&self) -> f64 {
        self.defender_rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}
