//! Computable diagnostics for the approximation error of value iteration on
//! a sampled state set.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    /// Covering radius of the sampled states.
    pub delta: f64,
    pub tau: f64,
    pub gamma: f64,
    /// Number of defender actions.
    pub d_count: usize,
    /// Largest attacker stage reward magnitude.
    pub r_max: f64,
}

/// Single-step error bound `Δ √|D| r_max / (τ (1-γ)^3)`.
pub fn epsilon_bound(b: &BoundInputs) -> f64 {
    b.delta * (b.d_count as f64).sqrt() * b.r_max / (b.tau * (1.0 - b.gamma).powi(3))
}

/// Limiting distance to the optimal value, `2γ ε / (1-γ)^2`.
pub fn asymptotic_bound(epsilon: f64, gamma: f64) -> f64 {
    2.0 * gamma / (1.0 - gamma).powi(2) * epsilon
}

/// Monte Carlo estimate of the covering radius of `samples` inside the box
/// `[low, high]^dim`: the largest nearest-sample distance over `probes`
/// uniform probe points. Being a max over finitely many probes, it is a lower
/// bound on the true radius.
pub fn estimate_covering_radius<R: Rng + ?Sized>(
    samples: &[Vec<f64>],
    low: f64,
    high: f64,
    probes: usize,
    rng: &mut R,
) -> Result<f64> {
    let dim = match samples.first() {
        Some(s) => s.len(),
        None => return Err(Error::EmptyDataset),
    };
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::ShapeMismatch {
            expected: dim,
            actual: samples.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(dim),
        });
    }
    let dist = (low < high).then(|| Uniform::new_inclusive(low, high).expect("valid box"));
    let mut probe = vec![0.0; dim];
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        for p in probe.iter_mut() {
            *p = match &dist {
                Some(d) => d.sample(rng),
                None => low,
            };
        }
        worst = worst.max(nearest_distance(samples, &probe));
    }
    Ok(worst)
}

/// Euclidean distance from `point` to the closest sample.
pub fn nearest_distance(samples: &[Vec<f64>], point: &[f64]) -> f64 {
    samples
        .iter()
        .map(|s| {
            s.iter()
                .zip(point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}
