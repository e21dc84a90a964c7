//! Experiment driver: training, seeded trials, aggregation and result files.

mod checks;
mod config;
mod output;
mod summary;
mod trial;

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rayon::prelude::*;

pub use checks::{bounds_report, verify_suite, BoundsReport, Check};
pub use config::{ExperimentConfig, ModelKind, QBox};
pub use output::{
    emit_outputs, read_episodes, render_plot, write_episodes, write_summary, EPISODES_FILE,
    EPISODE_HEADER, PLOT_FILE, SMOOTHING_WINDOW, SUMMARY_FILE,
};
pub use summary::{aggregate, learning_curves, mean_and_se, smooth, CellSummary};
pub use trial::{mix_seed, run_trial, trial_seed, Attacker, Duel, EndCause, EpisodeRecord, Stage, TrialSetup};

use crate::baselines::AttackerKind;
use crate::error::Result;
use crate::game::SecurityGame;
use crate::mlp::MlpModel;
use crate::ndp::{fitted_value_iteration, AttackerMdp, FviOutcome, HorizonReport};

const TRAIN_STREAM: u64 = 0x7261_696e;

/// Seed for training `model` at temperature `tau` under master seed `master`.
pub fn training_seed(master: u64, model: ModelKind, tau: f64) -> u64 {
    let code = match model {
        ModelKind::Cm => 1,
        ModelKind::Sm => 2,
    };
    mix_seed(mix_seed(master ^ TRAIN_STREAM, code), tau.to_bits())
}

/// Runs fitted value iteration for one architecture and temperature.
pub fn train_model(
    cfg: &ExperimentConfig,
    game: &SecurityGame,
    model: ModelKind,
    tau: f64,
    progress: impl FnMut(&HorizonReport),
) -> Result<FviOutcome> {
    let mdp = AttackerMdp::new(game, cfg.defender(tau))?;
    let fvi = cfg.fvi_config(&mdp, model, training_seed(cfg.seed, model, tau));
    fitted_value_iteration(&mdp, &fvi, progress)
}

/// Trained value networks keyed by architecture and temperature, so each
/// configuration is trained once and shared by all its trials.
#[derive(Default)]
pub struct ModelCache {
    models: HashMap<(ModelKind, u64), MlpModel>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: ModelKind, tau: f64, trained: MlpModel) {
        self.models.insert((model, tau.to_bits()), trained);
    }

    pub fn get(&self, model: ModelKind, tau: f64) -> Option<&MlpModel> {
        self.models.get(&(model, tau.to_bits()))
    }

    pub fn get_or_train(
        &mut self,
        cfg: &ExperimentConfig,
        game: &SecurityGame,
        model: ModelKind,
        tau: f64,
        log: &mut dyn FnMut(&str),
    ) -> Result<&MlpModel> {
        let key = (model, tau.to_bits());
        if let Entry::Vacant(slot) = self.models.entry(key) {
            log(&format!("training {} value network at tau={tau}", model.label()));
            let outcome = train_model(cfg, game, model, tau, |r| {
                log(&format!(
                    "  horizon {:>2}: train loss {:.4}, held-out mse {:.4}, mean target {:.3} ({:.1}s)",
                    r.horizon,
                    r.train_loss.last().copied().unwrap_or(f64::NAN),
                    r.test_mse,
                    r.mean_target,
                    r.seconds
                ))
            })?;
            slot.insert(outcome.model);
        }
        Ok(&self.models[&key])
    }
}

/// Plays all trials of one attacker kind at one temperature. Trials run in
/// parallel; records come back ordered by trial.
pub fn run_cell(
    cfg: &ExperimentConfig,
    game: &SecurityGame,
    kind: AttackerKind,
    tau: f64,
    model: Option<&MlpModel>,
) -> Result<Vec<EpisodeRecord>> {
    let setup = TrialSetup {
        game,
        params: cfg.defender(tau),
        kind,
        model,
        episodes: cfg.episodes,
    };
    let per_trial = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(&setup, t, trial_seed(cfg.seed, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Runs every `(kind, tau)` cell in order, training value networks as needed.
pub fn run_cells(
    cfg: &ExperimentConfig,
    game: &SecurityGame,
    cells: &[(AttackerKind, f64)],
    models: &mut ModelCache,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<EpisodeRecord>> {
    let mut records = Vec::new();
    for &(kind, tau) in cells {
        let model = match ModelKind::of_attacker(kind) {
            Some(m) => Some(models.get_or_train(cfg, game, m, tau, log)?),
            None => None,
        };
        log(&format!(
            "playing {} trials x {} episodes: {kind} at tau={tau}",
            cfg.trials, cfg.episodes
        ));
        records.extend(run_cell(cfg, game, kind, tau, model)?);
    }
    Ok(records)
}
