use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::baselines::AttackerKind;
use crate::error::{Error, Result};
use crate::game::{GameConfig, SecurityGame};
use crate::iql::IqlParams;
use crate::mlp::{MlpSpec, TrainConfig};
use crate::ndp::{AttackerMdp, FviConfig, SamplerConfig};
use crate::network::{DefenderReward, InfluenceNetwork};

/// Value network architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Three hidden ReLU layers.
    Cm,
    /// Affine in the table entries.
    Sm,
}

impl ModelKind {
    pub fn spec(self, input_dim: usize, output_dim: usize) -> MlpSpec {
        match self {
            ModelKind::Cm => MlpSpec::complex(input_dim, output_dim),
            ModelKind::Sm => MlpSpec::simple(input_dim, output_dim),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Cm => "cm",
            ModelKind::Sm => "sm",
        }
    }

    pub fn of_attacker(kind: AttackerKind) -> Option<Self> {
        match kind {
            AttackerKind::NdpCm => Some(ModelKind::Cm),
            AttackerKind::NdpSm => Some(ModelKind::Sm),
            AttackerKind::FiGreedy | AttackerKind::Iql => None,
        }
    }
}

/// Per-entry bounds of the table box that training states are drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QBox {
    /// The set Q-learning from a zero table can reach.
    Auto,
    Explicit(f64, f64),
}

impl<'de> Deserialize<'de> for QBox {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Pair([f64; 2]),
        }
        match Raw::deserialize(de)? {
            Raw::Word(w) if w == "auto" => Ok(QBox::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "q_box must be \"auto\" or [low, high], got \"{w}\""
            ))),
            Raw::Pair([lo, hi]) => Ok(QBox::Explicit(lo, hi)),
        }
    }
}

/// Everything an experiment needs, read from a flat TOML file. Every key is
/// optional; missing keys take the reference values.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p_n0: f64,
    pub p_n1: f64,
    pub p_d0: f64,
    pub p_d1: f64,
    pub p_r: f64,
    pub p_e: f64,
    pub gamma: f64,
    pub episode_cap: usize,

    pub alpha: f64,
    pub tau: f64,
    /// Temperatures visited by `sweep-tau`.
    pub taus: Vec<f64>,
    pub defender_reward: DefenderReward,

    pub attacker: AttackerKind,
    /// Architecture for `train`; must agree with a model-based attacker.
    pub model: Option<ModelKind>,
    pub horizons: usize,
    pub samples_per_horizon: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub trajectory_mix: f64,
    pub q_box: QBox,

    pub seed: u64,
    pub trials: usize,
    pub episodes: usize,
    /// Network definition file; the reference network when absent.
    pub network: Option<PathBuf>,
    /// Model file written by `train` and read by the other commands.
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let game = GameConfig::default();
        let iql = IqlParams::default();
        let train = TrainConfig::default();
        Self {
            p_n0: game.p_n0,
            p_n1: game.p_n1,
            p_d0: game.p_d0,
            p_d1: game.p_d1,
            p_r: game.p_r,
            p_e: game.p_e,
            gamma: game.gamma,
            episode_cap: game.episode_cap,
            alpha: iql.alpha,
            tau: iql.tau,
            taus: vec![0.5, 1.0, 2.0],
            defender_reward: DefenderReward::ZeroSum,
            attacker: AttackerKind::NdpCm,
            model: None,
            horizons: 20,
            samples_per_horizon: 100_000,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            trajectory_mix: 0.0,
            q_box: QBox::Auto,
            seed: 0,
            trials: 20,
            episodes: 500,
            network: None,
            checkpoint: None,
            out: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative `network`, `checkpoint` and `out` paths
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(dir) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            cfg.network.as_mut().map(rebase);
            cfg.checkpoint.as_mut().map(rebase);
            rebase(&mut cfg.out);
        }
        cfg.validate()?;
        if let Some(net) = &cfg.network {
            if !net.is_file() {
                return Err(Error::config(format!("network file {} does not exist", net.display())));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.game_config().validate()?;
        self.defender(self.tau).validate()?;
        for &t in &self.taus {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidTemperature(t));
            }
        }
        if let DefenderReward::Scaled(f) = self.defender_reward {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::config(format!("defender reward scale must be positive, got {f}")));
            }
        }
        if self.trials == 0 || self.episodes == 0 {
            return Err(Error::config("trials and episodes must be at least 1"));
        }
        if self.horizons == 0 || self.samples_per_horizon == 0 || self.epochs == 0 {
            return Err(Error::config("horizons, samples_per_horizon and epochs must be positive"));
        }
        if let (Some(model), Some(implied)) = (self.model, ModelKind::of_attacker(self.attacker)) {
            if model != implied {
                return Err(Error::config(format!(
                    "model `{}` conflicts with attacker `{}`",
                    model.label(),
                    self.attacker
                )));
            }
        }
        if let QBox::Explicit(lo, hi) = self.q_box {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::config(format!("q_box [{lo}, {hi}] is empty or unbounded")));
            }
        }
        self.train_config(0).validate()?;
        SamplerConfig {
            trajectory_mix: self.trajectory_mix,
            ..SamplerConfig::uniform(0.0, 0.0, self.samples_per_horizon)
        }
        .validate()
    }

    pub fn game_config(&self) -> GameConfig {
        GameConfig {
            p_n0: self.p_n0,
            p_n1: self.p_n1,
            p_d0: self.p_d0,
            p_d1: self.p_d1,
            p_r: self.p_r,
            p_e: self.p_e,
            gamma: self.gamma,
            episode_cap: self.episode_cap,
        }
    }

    /// Defender learning parameters at temperature `tau`. The defender
    /// discounts with the game's factor.
    pub fn defender(&self, tau: f64) -> IqlParams {
        IqlParams {
            alpha: self.alpha,
            gamma: self.gamma,
            tau,
        }
    }

    pub fn load_network(&self) -> Result<InfluenceNetwork> {
        match &self.network {
            Some(path) => InfluenceNetwork::load(path),
            None => Ok(InfluenceNetwork::reference()),
        }
    }

    pub fn build_game(&self) -> Result<SecurityGame> {
        SecurityGame::new(self.load_network()?, self.game_config(), self.defender_reward)
    }

    /// Architecture used by `train`: explicit `model`, else the attacker's,
    /// else the deep network.
    pub fn model_kind(&self) -> ModelKind {
        self.model
            .or(ModelKind::of_attacker(self.attacker))
            .unwrap_or(ModelKind::Cm)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn resolve_q_box(&self, mdp: &AttackerMdp<'_>) -> (f64, f64) {
        match self.q_box {
            QBox::Auto => mdp.reachable_q_box(),
            QBox::Explicit(lo, hi) => (lo, hi),
        }
    }

    pub fn fvi_config(&self, mdp: &AttackerMdp<'_>, model: ModelKind, seed: u64) -> FviConfig {
        let game = mdp.game();
        let (q_low, q_high) = self.resolve_q_box(mdp);
        FviConfig {
            spec: model.spec(game.q_len(), game.n_states()),
            sampler: SamplerConfig {
                trajectory_mix: self.trajectory_mix,
                ..SamplerConfig::uniform(q_low, q_high, self.samples_per_horizon)
            },
            horizons: self.horizons,
            train: self.train_config(seed),
            test_samples: (self.samples_per_horizon / 20).clamp(1, 5_000),
            seed,
        }
    }
}
