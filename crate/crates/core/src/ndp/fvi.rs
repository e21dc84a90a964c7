use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sampling::{sample_states, SamplerConfig};
use super::{max_value, AttackerMdp, AttackerState, StateValue, ZeroValue};
use crate::error::{Error, Result};
use crate::mlp::{row_mut, MlpModel, MlpSpec, TrainConfig, ValueDataset};

const TARGET_CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub struct FviConfig {
    pub spec: MlpSpec,
    pub sampler: SamplerConfig,
    pub horizons: usize,
    pub train: TrainConfig,
    /// Fresh states per horizon used only to measure held-out error.
    pub test_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonReport {
    pub horizon: usize,
    /// Mean minibatch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Masked MSE on held-out states against the same horizon's targets.
    pub test_mse: f64,
    pub mean_target: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FviOutcome {
    pub model: MlpModel,
    pub reports: Vec<HorizonReport>,
}

/// Backed-up values `max_u { r(z,u) + γ E[v(z')] }` for many states, computed
/// in parallel chunks. Output order follows `states`.
pub fn bellman_targets<V: StateValue + ?Sized>(
    mdp: &AttackerMdp<'_>,
    states: &[AttackerState],
    value: &V,
) -> Vec<f64> {
    states
        .par_chunks(TARGET_CHUNK)
        .map(|chunk| {
            let zs: Vec<(usize, &[f64])> =
                chunk.iter().map(|z| (z.state, z.q.as_slice())).collect();
            mdp.action_values_batch(&zs, value)
                .iter()
                .map(|v| max_value(v))
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

fn dataset(states: &[AttackerState], targets: Vec<f64>, q_len: usize) -> Result<ValueDataset> {
    let mut inputs = Array2::zeros((states.len(), q_len));
    for (i, z) in states.iter().enumerate() {
        row_mut(&mut inputs, i).copy_from_slice(z.q.as_slice());
    }
    ValueDataset::new(inputs, states.iter().map(|z| z.state).collect(), targets)
}

/// Approximate value iteration: each horizon samples states, backs them up
/// through the current value network (zero before the first horizon) and
/// regresses a network onto the targets. The network is warm-started from the
/// previous horizon.
pub fn fitted_value_iteration(
    mdp: &AttackerMdp<'_>,
    cfg: &FviConfig,
    mut progress: impl FnMut(&HorizonReport),
) -> Result<FviOutcome> {
    if cfg.horizons == 0 {
        return Err(Error::config("horizons must be at least 1"));
    }
    cfg.sampler.validate()?;
    cfg.train.validate()?;
    let game = mdp.game();
    if cfg.spec.input_dim != game.q_len() || cfg.spec.output_dim != game.n_states() {
        return Err(Error::ShapeMismatch {
            expected: game.q_len(),
            actual: cfg.spec.input_dim,
        });
    }
    let r_max = mdp.r_max();
    let output_scale = if r_max > 0.0 { r_max } else { 1.0 };
    let mut model = MlpModel::new(cfg.spec.clone(), cfg.seed).with_input_box(
        cfg.sampler.q_low,
        cfg.sampler.q_high,
        output_scale,
    );
    let mut previous: Option<MlpModel> = None;
    let mut reports = Vec::with_capacity(cfg.horizons);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f00d);

    for horizon in 0..cfg.horizons {
        let started = Instant::now();
        let value: &dyn StateValue = match &previous {
            Some(m) => m,
            None => &ZeroValue,
        };
        let states = sample_states(mdp, &cfg.sampler, value, &mut rng)?;
        let targets = bellman_targets(mdp, &states, value);
        let mean_target = targets.iter().sum::<f64>() / targets.len() as f64;
        let train_set = dataset(&states, targets, game.q_len())?;

        let test_mse = if cfg.test_samples > 0 {
            let test_cfg = SamplerConfig {
                n_samples: cfg.test_samples,
                ..cfg.sampler.clone()
            };
            let test_states = sample_states(mdp, &test_cfg, value, &mut rng)?;
            let test_targets = bellman_targets(mdp, &test_states, value);
            Some(dataset(&test_states, test_targets, game.q_len())?)
        } else {
            None
        };

        let train_cfg = TrainConfig {
            seed: cfg.train.seed.wrapping_add(horizon as u64),
            ..cfg.train.clone()
        };
        let train_loss = model.train(&train_set, &train_cfg)?;
        if !model.is_finite() {
            return Err(Error::config(format!(
                "value network diverged at horizon {horizon}; lower the learning rate"
            )));
        }
        let test_mse = match test_mse {
            Some(test) => model.masked_mse(&test)?,
            None => f64::NAN,
        };
        let report = HorizonReport {
            horizon,
            train_loss,
            test_mse,
            mean_target,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&report);
        reports.push(report);
        previous = Some(model.clone());
    }
    Ok(FviOutcome { model, reports })
}
