//! Linear influence networks.
//!
//! A network couples `n` security assets through two matrices. The influence
//! matrix redistributes standalone asset values into effective values
//! `y = I(s) x`; it is column-stochastic and is recomputed when assets are
//! compromised. The vulnerability matrix feeds the per-asset support `v_j`
//! that interpolates between the no-support and full-support compromise
//! probabilities; it is never recomputed.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::game::{GameConfig, Move};

/// Largest asset count representable by [`AssetSet`] with room for the
/// exponential state space.
pub const MAX_ASSETS: usize = 16;

const STOCHASTIC_TOL: f64 = 1e-9;

/// Bitmask over asset indices; bit `i` set means asset `i` is compromised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssetSet(u32);

impl AssetSet {
    pub const EMPTY: AssetSet = AssetSet(0);

    pub fn from_bits(bits: u32) -> Self {
        AssetSet(bits)
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        AssetSet(indices.iter().fold(0, |acc, &i| acc | (1 << i)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, asset: usize) -> bool {
        self.0 >> asset & 1 == 1
    }

    pub fn with(self, asset: usize) -> Self {
        AssetSet(self.0 | (1 << asset))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.contains(i))
    }
}

/// Game state: which assets are compromised, or the absorbing terminal state.
///
/// State indices follow the canonical ordering used by Q-tables and value
/// vectors: active states by ascending bitmask, then terminal at `2^n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetworkState {
    Active(AssetSet),
    Terminal,
}

impl NetworkState {
    pub const INITIAL: NetworkState = NetworkState::Active(AssetSet::EMPTY);

    pub fn is_terminal(self) -> bool {
        matches!(self, NetworkState::Terminal)
    }

    /// Compromised set; empty for the terminal state.
    pub fn compromised(self) -> AssetSet {
        match self {
            NetworkState::Active(set) => set,
            NetworkState::Terminal => AssetSet::EMPTY,
        }
    }

    pub fn is_compromised(self, asset: usize) -> bool {
        self.compromised().contains(asset)
    }

    pub fn index(self, n_assets: usize) -> usize {
        match self {
            NetworkState::Active(set) => set.bits() as usize,
            NetworkState::Terminal => 1 << n_assets,
        }
    }

    pub fn from_index(index: usize, n_assets: usize) -> Result<Self> {
        let terminal = 1usize << n_assets;
        match index.cmp(&terminal) {
            std::cmp::Ordering::Less => Ok(NetworkState::Active(AssetSet(index as u32))),
            std::cmp::Ordering::Equal => Ok(NetworkState::Terminal),
            std::cmp::Ordering::Greater => Err(Error::IndexOutOfRange {
                what: "state",
                index,
                limit: terminal + 1,
            }),
        }
    }
}

impl fmt::Display for NetworkState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkState::Terminal => f.write_str("terminal"),
            NetworkState::Active(set) => {
                f.write_str("{")?;
                for (k, i) in set.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}", i + 1)?;
                }
                f.write_str("}")
            }
        }
    }
}

/// How the defender is rewarded for a stage.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DefenderReward {
    /// `r_d = -r_u`.
    #[default]
    ZeroSum,
    /// `r_d = -factor * r_u`; a general-sum variant where the defender weighs
    /// its losses differently from the attacker's gains.
    Scaled(f64),
}

impl DefenderReward {
    pub fn apply(self, attacker_reward: f64) -> f64 {
        match self {
            DefenderReward::ZeroSum => -attacker_reward,
            DefenderReward::Scaled(factor) => -factor * attacker_reward,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceNetwork {
    base_influence: Array2<f64>,
    vulnerability: Array2<f64>,
    asset_values: Array1<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    influence: Vec<Vec<f64>>,
    vulnerability: Vec<Vec<f64>>,
    asset_values: Vec<f64>,
}

fn matrix_from_rows(key: &'static str, rows: &[Vec<f64>], n: usize) -> Result<Array2<f64>> {
    if rows.len() != n {
        return Err(Error::InvalidNetwork {
            key,
            row: None,
            reason: format!("expected {n} rows, found {}", rows.len()),
        });
    }
    let mut m = Array2::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidNetwork {
                key,
                row: Some(i),
                reason: format!("expected {n} entries, found {}", row.len()),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

impl InfluenceNetwork {
    /// Builds and validates a network.
    ///
    /// Influence entries must be zero or in `(0, 1]` with every column summing
    /// to one; vulnerability entries must lie in `[0, 1]`; asset values must be
    /// finite and non-negative.
    pub fn new(
        base_influence: Array2<f64>,
        vulnerability: Array2<f64>,
        asset_values: Array1<f64>,
    ) -> Result<Self> {
        let n = asset_values.len();
        if n == 0 || n > MAX_ASSETS {
            return Err(Error::InvalidNetwork {
                key: "asset_values",
                row: None,
                reason: format!("asset count must be in 1..={MAX_ASSETS}, got {n}"),
            });
        }
        if base_influence.dim() != (n, n) {
            return Err(Error::InvalidNetwork {
                key: "influence",
                row: None,
                reason: format!("expected {n}x{n}, got {:?}", base_influence.dim()),
            });
        }
        if vulnerability.dim() != (n, n) {
            return Err(Error::InvalidNetwork {
                key: "vulnerability",
                row: None,
                reason: format!("expected {n}x{n}, got {:?}", vulnerability.dim()),
            });
        }
        for ((i, j), &w) in base_influence.indexed_iter() {
            if !(w == 0.0 || (w > 0.0 && w <= 1.0)) {
                return Err(Error::InvalidNetwork {
                    key: "influence",
                    row: Some(i),
                    reason: format!("entry {j} = {w} is outside {{0}} ∪ (0, 1]"),
                });
            }
        }
        for j in 0..n {
            let sum = base_influence.column(j).sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidNetwork {
                    key: "influence",
                    row: None,
                    reason: format!("column {j} sums to {sum}, expected 1"),
                });
            }
        }
        for ((i, j), &v) in vulnerability.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidNetwork {
                    key: "vulnerability",
                    row: Some(i),
                    reason: format!("entry {j} = {v} is outside [0, 1]"),
                });
            }
        }
        for (i, &x) in asset_values.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidNetwork {
                    key: "asset_values",
                    row: Some(i),
                    reason: format!("value {x} must be finite and non-negative"),
                });
            }
        }
        Ok(Self {
            base_influence,
            vulnerability,
            asset_values,
        })
    }

    /// The three-asset network used throughout the experiments.
    pub fn reference() -> Self {
        Self::new(
            ndarray::array![[0.9, 0.2, 0.0], [0.0, 0.7, 0.0], [0.1, 0.1, 1.0]],
            ndarray::array![[0.7, 0.0, 0.0], [0.2, 0.5, 0.0], [0.1, 0.3, 0.9]],
            ndarray::array![10.0, 10.0, 20.0],
        )
        .expect("reference network is valid")
    }

    /// Parses the TOML network format:
    ///
    /// ```toml
    /// influence = [[0.9, 0.2, 0.0], [0.0, 0.7, 0.0], [0.1, 0.1, 1.0]]
    /// vulnerability = [[0.7, 0.0, 0.0], [0.2, 0.5, 0.0], [0.1, 0.3, 0.9]]
    /// asset_values = [10.0, 10.0, 20.0]
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: NetworkFile = toml::from_str(text).map_err(|e| Error::InvalidNetwork {
            key: "file",
            row: None,
            reason: e.message().to_string(),
        })?;
        let n = raw.asset_values.len();
        let influence = matrix_from_rows("influence", &raw.influence, n)?;
        let vulnerability = matrix_from_rows("vulnerability", &raw.vulnerability, n)?;
        Self::new(influence, vulnerability, Array1::from(raw.asset_values))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let rows = |m: &Array2<f64>| {
            m.rows()
                .into_iter()
                .map(|r| format!("[{}]", join(r.iter())))
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            "influence = [{}]\nvulnerability = [{}]\nasset_values = [{}]\n",
            rows(&self.base_influence),
            rows(&self.vulnerability),
            join(self.asset_values.iter())
        )
    }

    pub fn n_assets(&self) -> usize {
        self.asset_values.len()
    }

    pub fn base_influence(&self) -> &Array2<f64> {
        &self.base_influence
    }

    pub fn vulnerability(&self) -> &Array2<f64> {
        &self.vulnerability
    }

    pub fn asset_values(&self) -> &Array1<f64> {
        &self.asset_values
    }

    fn check_asset(&self, asset: usize) -> Result<()> {
        if asset >= self.n_assets() {
            return Err(Error::IndexOutOfRange {
                what: "asset",
                index: asset,
                limit: self.n_assets(),
            });
        }
        Ok(())
    }

    /// Support `v_j`: column sum of the vulnerability matrix. Compromised
    /// assets keep contributing, so this is state independent.
    pub fn support(&self, asset: usize) -> Result<f64> {
        self.check_asset(asset)?;
        Ok(self.vulnerability.column(asset).sum())
    }

    /// Influence matrix after removing compromised assets.
    ///
    /// Compromised rows and columns are zeroed. Each remaining column is
    /// renormalized over the remaining rows; a column left with no mass puts
    /// weight one on its own diagonal.
    pub fn effective_influence(&self, state: NetworkState) -> Result<Array2<f64>> {
        let compromised = match state {
            NetworkState::Terminal => return Err(Error::TerminalState),
            NetworkState::Active(set) => set,
        };
        if compromised.is_empty() {
            return Ok(self.base_influence.clone());
        }
        let n = self.n_assets();
        let mut m = Array2::zeros((n, n));
        for j in (0..n).filter(|&j| !compromised.contains(j)) {
            let mass: f64 = (0..n)
                .filter(|&i| !compromised.contains(i))
                .map(|i| self.base_influence[(i, j)])
                .sum();
            if mass > 0.0 {
                for i in (0..n).filter(|&i| !compromised.contains(i)) {
                    m[(i, j)] = self.base_influence[(i, j)] / mass;
                }
            } else {
                m[(j, j)] = 1.0;
            }
        }
        Ok(m)
    }

    /// Effective security values `y(s) = I(s) x`, zero on compromised assets.
    pub fn effective_values(&self, state: NetworkState) -> Result<Array1<f64>> {
        let influence = self.effective_influence(state)?;
        let mut y = influence.dot(&self.asset_values);
        for i in state.compromised().iter() {
            y[i] = 0.0;
        }
        Ok(y)
    }

    /// Probability that `asset` is compromised this stage.
    ///
    /// Non-zero only when the attacker targets an uncompromised `asset`; the
    /// defended or undefended probability pair is blended by the asset's
    /// support and clamped to `[0, 1]`.
    pub fn compromise_prob(
        &self,
        cfg: &GameConfig,
        state: NetworkState,
        attack: Move,
        defend: Move,
        asset: usize,
    ) -> Result<f64> {
        self.check_asset(asset)?;
        self.check_move(attack)?;
        self.check_move(defend)?;
        if state.is_terminal() || state.is_compromised(asset) || attack != Move::Target(asset) {
            return Ok(0.0);
        }
        let v = self.support(asset)?;
        let (p0, p1) = if defend == Move::Target(asset) {
            (cfg.p_d0, cfg.p_d1)
        } else {
            (cfg.p_n0, cfg.p_n1)
        };
        Ok((p0 * (1.0 - v) + p1 * v).clamp(0.0, 1.0))
    }

    pub(crate) fn check_move(&self, mv: Move) -> Result<()> {
        match mv {
            Move::Target(i) => self.check_asset(i),
            Move::Noop => Ok(()),
        }
    }

    /// Stage reward of the attacker: success probability times the effective
    /// value of the targeted asset.
    pub fn attacker_reward(
        &self,
        cfg: &GameConfig,
        state: NetworkState,
        attack: Move,
        defend: Move,
    ) -> Result<f64> {
        self.check_move(attack)?;
        self.check_move(defend)?;
        let target = match attack {
            Move::Target(i) if !state.is_terminal() && !state.is_compromised(i) => i,
            _ => return Ok(0.0),
        };
        let p = self.compromise_prob(cfg, state, attack, defend, target)?;
        if p == 0.0 {
            return Ok(0.0);
        }
        Ok(p * self.effective_values(state)?[target])
    }

    pub fn defender_reward(
        &self,
        cfg: &GameConfig,
        rule: DefenderReward,
        state: NetworkState,
        attack: Move,
        defend: Move,
    ) -> Result<f64> {
        let r = self.attacker_reward(cfg, state, attack, defend)?;
        // avoid handing out -0.0 for no-op stages
        Ok(if r == 0.0 { 0.0 } else { rule.apply(r) })
    }
}

fn join<'a>(it: impl Iterator<Item = &'a f64>) -> String {
    it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}
