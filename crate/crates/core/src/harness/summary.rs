use std::collections::BTreeMap;

use crate::baselines::AttackerKind;
use crate::error::{Error, Result};

use super::trial::EpisodeRecord;

/// Normal quantile for a two-sided 95% interval.
const Z95: f64 = 1.959_963_984_540_054;

/// Across-trial statistics for one attacker kind at one temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub attacker: AttackerKind,
    pub tau: f64,
    pub model: String,
    pub trials: usize,
    pub episodes: usize,
    /// Mean over trials of each trial's mean attacker return.
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_defender: f64,
    /// False when only one trial exists, in which case the standard error is
    /// reported as 0.
    pub se_defined: bool,
}

/// Mean and standard error of `xs`; the flag is false for a single value.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64, bool) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0, false);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt(), true)
}

/// Per-trial means first, then across-trial mean and standard error, grouped
/// by attacker kind and temperature. Output is ordered by kind, then `tau`.
pub fn aggregate(records: &[EpisodeRecord]) -> Result<Vec<CellSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // (kind, tau bits) -> trial -> (sum attacker, sum defender, count)
    type TrialSums = BTreeMap<usize, (f64, f64, usize)>;
    let mut cells: BTreeMap<(AttackerKind, u64), (String, TrialSums)> = BTreeMap::new();
    for r in records {
        let key = (r.attacker, r.tau.to_bits());
        let (_, trials) = cells
            .entry(key)
            .or_insert_with(|| (r.model.clone(), BTreeMap::new()));
        let acc = trials.entry(r.trial).or_insert((0.0, 0.0, 0));
        acc.0 += r.attacker_return;
        acc.1 += r.defender_return;
        acc.2 += 1;
    }
    let mut out: Vec<CellSummary> = cells
        .into_iter()
        .map(|((attacker, tau_bits), (model, trials))| {
            let att: Vec<f64> = trials.values().map(|(a, _, n)| a / *n as f64).collect();
            let def: Vec<f64> = trials.values().map(|(_, d, n)| d / *n as f64).collect();
            let (mean, std_error, se_defined) = mean_and_se(&att);
            CellSummary {
                attacker,
                tau: f64::from_bits(tau_bits),
                model,
                trials: trials.len(),
                episodes: trials.values().map(|t| t.2).sum(),
                mean,
                std_error,
                ci_low: mean - Z95 * std_error,
                ci_high: mean + Z95 * std_error,
                mean_defender: mean_and_se(&def).0,
                se_defined,
            }
        })
        .collect();
    out.sort_by(|a, b| a.attacker.cmp(&b.attacker).then(a.tau.total_cmp(&b.tau)));
    Ok(out)
}

/// Average attacker return per episode index across trials, one series per
/// (kind, temperature) in [`aggregate`] order.
pub fn learning_curves(records: &[EpisodeRecord]) -> Vec<((AttackerKind, f64), Vec<f64>)> {
    let mut sums: BTreeMap<(AttackerKind, u64), Vec<(f64, usize)>> = BTreeMap::new();
    for r in records {
        let series = sums.entry((r.attacker, r.tau.to_bits())).or_default();
        if series.len() <= r.episode {
            series.resize(r.episode + 1, (0.0, 0));
        }
        series[r.episode].0 += r.attacker_return;
        series[r.episode].1 += 1;
    }
    let mut out: Vec<_> = sums
        .into_iter()
        .map(|((k, t), s)| {
            let avg = s
                .into_iter()
                .map(|(sum, n)| if n == 0 { 0.0 } else { sum / n as f64 })
                .collect();
            ((k, f64::from_bits(t)), avg)
        })
        .collect();
    out.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    out
}

/// Trailing moving average over at most `window` points.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
