//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits non-zero if any fails.

#![allow(clippy::needless_range_loop)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secgame::game::{enumerate_states, transition_support};
use secgame::harness::{
    aggregate, run_cells, train_model, CellSummary, ExperimentConfig, ModelCache, ModelKind,
    EPISODES_FILE,
};
use secgame::iql::IqlAgent;
use secgame::ndp::{asymptotic_bound, epsilon_bound, AttackerMdp, AttackerState, BoundInputs};
use secgame::oracle::{
    exact_policy_value, exact_vi, exact_vi_static_defender, monte_carlo_truncated_return,
    policy_value, static_defender_mdp, FiniteMdp,
};
use secgame::{
    fi_greedy_act, AttackerKind, GameConfig, InfluenceNetwork, IqlParams, MlpModel, MlpSpec, Move,
    NetworkState, QTable, SecurityGame, ValueDataset,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Shared between the comparison and the temperature sweep, which both need
/// the deep model at tau = 1.
struct Shared {
    cfg: ExperimentConfig,
    game: SecurityGame,
    models: ModelCache,
}

impl Shared {
    fn new() -> Self {
        let cfg = ExperimentConfig {
            trajectory_mix: 0.5,
            ..ExperimentConfig::default()
        };
        let game = cfg.build_game().expect("reference game");
        Self {
            cfg,
            game,
            models: ModelCache::new(),
        }
    }

    fn play(&mut self, cells: &[(AttackerKind, f64)]) -> Result<Vec<CellSummary>, String> {
        let mut log = |m: &str| eprintln!("    {m}");
        let records = run_cells(&self.cfg, &self.game, cells, &mut self.models, &mut log)
            .map_err(|e| e.to_string())?;
        aggregate(&records).map_err(|e| e.to_string())
    }
}

fn kernel_exactness(_: &mut Shared) -> Outcome {
    let net = InfluenceNetwork::reference();
    let cfg = GameConfig::default();
    let v: Vec<f64> = (0..3).map(|j| net.vulnerability().column(j).sum()).collect();
    let moves: Vec<Move> = (0..4).map(|i| Move::from_index(i, 3).unwrap()).collect();
    let mut worst_sum: f64 = 0.0;
    let mut worst_entry: f64 = 0.0;
    let mut triples = 0;
    for &s in &enumerate_states(3) {
        for &u in &moves {
            for &d in &moves {
                let got = transition_support(&net, &cfg, s, u, d).map_err(|e| e.to_string())?;
                worst_sum = worst_sum.max((got.total() - 1.0).abs());
                // independent derivation
                let mut expect: Vec<(NetworkState, f64)> = Vec::new();
                let mut add = |st: NetworkState, p: f64| match expect.iter_mut().find(|e| e.0 == st) {
                    Some(e) => e.1 += p,
                    None => expect.push((st, p)),
                };
                match s {
                    NetworkState::Terminal => add(NetworkState::Terminal, 1.0),
                    NetworkState::Active(set) => {
                        let p = match u {
                            Move::Target(i) if !set.contains(i) => {
                                let (p0, p1) = if d == u { (0.5, 0.2) } else { (0.7, 0.4) };
                                p0 * (1.0 - v[i]) + p1 * v[i]
                            }
                            _ => 0.0,
                        };
                        if let Move::Target(i) = u {
                            add(NetworkState::Active(set.with(i)), p);
                        }
                        add(NetworkState::Terminal, (1.0 - p) * 0.3);
                        add(NetworkState::INITIAL, (1.0 - p) * 0.2);
                        add(s, (1.0 - p) * 0.5);
                    }
                }
                for (st, p) in expect {
                    worst_entry = worst_entry.max((got.probability_of(st) - p).abs());
                }
                triples += 1;
            }
        }
    }
    ensure(triples == 9 * 4 * 4, || format!("{triples} triples"))?;
    ensure(worst_sum <= 1e-12, || format!("row sum off by {worst_sum:e}"))?;
    ensure(worst_entry <= 1e-12, || format!("entry off by {worst_entry:e}"))?;

    let ex = transition_support(&net, &cfg, NetworkState::INITIAL, Move::Target(0), Move::Noop)
        .map_err(|e| e.to_string())?;
    let one = NetworkState::Active(secgame::AssetSet::from_indices(&[0]));
    let dev = [
        (one, 0.4),
        (NetworkState::INITIAL, 0.42),
        (NetworkState::Terminal, 0.18),
    ]
    .iter()
    .map(|&(st, p)| (ex.probability_of(st) - p).abs())
    .fold(0.0f64, f64::max);
    ensure(dev <= 1e-12 && ex.entries().len() == 3, || format!("worked example off by {dev:e}"))?;
    Ok(format!(
        "{triples} triples; max |sum-1| {worst_sum:.1e}, max entry error {worst_entry:.1e}"
    ))
}

fn lin_arithmetic(_: &mut Shared) -> Outcome {
    let net = InfluenceNetwork::reference();
    let cfg = GameConfig::default();
    let y = net
        .effective_values(NetworkState::INITIAL)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (got, want) in y.iter().zip([11.0, 7.0, 22.0]) {
        worst = worst.max((got - want).abs());
    }
    for (j, want) in [1.0, 0.8, 0.9].into_iter().enumerate() {
        worst = worst.max((net.support(j).unwrap() - want).abs());
    }
    let s = NetworkState::INITIAL;
    let probs = [
        net.compromise_prob(&cfg, s, Move::Target(0), Move::Noop, 0),
        net.compromise_prob(&cfg, s, Move::Target(1), Move::Target(1), 1),
        net.compromise_prob(&cfg, s, Move::Target(2), Move::Target(0), 2),
    ];
    for (p, want) in probs.into_iter().zip([0.4, 0.26, 0.43]) {
        worst = worst.max((p.map_err(|e| e.to_string())? - want).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("y, v and compromise probabilities within {worst:.1e}"))
}

fn gradient_verification(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut report = Vec::new();
    for (label, spec) in [("cm", MlpSpec::complex(36, 9)), ("sm", MlpSpec::simple(36, 9))] {
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let mut seed = 0;
        while checked < 10 {
            seed += 1;
            ensure(seed < 500, || format!("{label}: too few kink-free points"))?;
            let model = MlpModel::new(spec.clone(), seed).with_input_box(-189.2, 0.0, 9.46);
            let inputs = box_rows(4, 36, &mut rng);
            let states: Vec<usize> = (0..4).map(|_| rng.random_range(0..9)).collect();
            let targets: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..30.0)).collect();
            if model.min_abs_preactivation(inputs.view()) < 1e-3 {
                continue;
            }
            let data = ValueDataset::new(inputs, states, targets).map_err(|e| e.to_string())?;
            let err = model.grad_check(&data, &mut rng).map_err(|e| e.to_string())?;
            worst = worst.max(err);
            checked += 1;
        }
        ensure(worst < 1e-4, || format!("{label} relative error {worst:e}"))?;
        report.push(format!("{label} {worst:.1e}"));
    }
    Ok(format!("worst relative error over 10 points: {}", report.join(", ")))
}

fn box_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-189.2..0.0))
}

/// Two states, two actions, discount 0.8.
fn sanity_mdp() -> FiniteMdp {
    FiniteMdp::new(
        2,
        2,
        vec![1.0, 0.5, 0.0, 0.8],
        vec![0.7, 0.3, 0.2, 0.8, 0.9, 0.1, 0.5, 0.5],
        0.8,
    )
    .expect("valid mdp")
}

fn iql_sanity(_: &mut Shared) -> Outcome {
    let mdp = sanity_mdp();
    let optimal = exact_vi(&mdp, 1e-12).map_err(|e| e.to_string())?.q;
    let params = IqlParams {
        alpha: 0.05,
        gamma: mdp.gamma(),
        tau: 1.0,
    };
    let mut errors = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agent = IqlAgent::new(2, 2, params);
        let mut s = 0;
        for _ in 0..200_000 {
            let a = agent.act(s, &mut rng);
            let row = mdp.transition(s, a);
            let next = if rng.random::<f64>() < row[0] { 0 } else { 1 };
            agent
                .learn(s, a, mdp.reward(s, a), next)
                .map_err(|e| e.to_string())?;
            s = next;
        }
        let err = agent
            .q
            .as_slice()
            .iter()
            .zip(&optimal)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        errors.push(err);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    ensure(mean <= 0.25, || format!("mean sup error {mean:.4}"))?;
    Ok(format!(
        "mean sup-norm error {mean:.4} over 10 seeds (Q* max {:.3})",
        optimal.iter().copied().fold(f64::MIN, f64::max)
    ))
}

fn static_defender_equivalence(shared: &mut Shared) -> Outcome {
    let cfg = ExperimentConfig {
        alpha: 0.0,
        trajectory_mix: 0.5,
        ..ExperimentConfig::default()
    };
    let game = &shared.game;
    let outcome = train_model(&cfg, game, ModelKind::Cm, 1.0, |r| {
        eprintln!("    horizon {:>2}: held-out mse {:.4}", r.horizon, r.test_mse)
    })
    .map_err(|e| e.to_string())?;
    let model = outcome.model;
    let frozen = QTable::zeros(9, 4);
    let exact = exact_vi_static_defender(game, &frozen, 1.0, 1e-10).map_err(|e| e.to_string())?;
    let fitted = model.forward(frozen.as_slice()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for s in 0..8 {
        worst = worst.max((fitted[s] - exact.values[s]).abs() / exact.values[s].abs());
    }
    ensure(worst < 0.05, || format!("worst per-state relative error {worst:.4}"))?;

    let mdp = AttackerMdp::new(game, cfg.defender(1.0)).map_err(|e| e.to_string())?;
    let mut policy = vec![game.n_moves() - 1; game.n_states()];
    for (s, slot) in policy.iter_mut().enumerate().take(8) {
        *slot = mdp
            .act(&AttackerState::new(s, frozen.clone()), &model)
            .map_err(|e| e.to_string())?;
    }
    let finite = static_defender_mdp(game, &frozen, 1.0).map_err(|e| e.to_string())?;
    let achieved = policy_value(&finite, &policy).map_err(|e| e.to_string())?;
    let mut policy_gap: f64 = 0.0;
    for s in 0..8 {
        policy_gap = policy_gap.max((exact.values[s] - achieved[s]) / exact.values[s]);
    }
    ensure(policy_gap <= 0.02, || format!("extracted policy loses {policy_gap:.4}"))?;
    Ok(format!(
        "worst value error {:.2}%, worst policy loss {:.2}%",
        100.0 * worst,
        100.0 * policy_gap
    ))
}

fn evaluator_cross_check(shared: &mut Shared) -> Outcome {
    let game = &shared.game;
    let mdp = AttackerMdp::new(game, IqlParams::default()).map_err(|e| e.to_string())?;
    let z0 = mdp.initial_state();
    let greedy = |z: &AttackerState| fi_greedy_act(&mdp, z);
    let exact = exact_policy_value(&mdp, &z0, &greedy, 4).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mc = monte_carlo_truncated_return(&mdp, &z0, &greedy, 4, 100_000, &mut rng)
        .map_err(|e| e.to_string())?;
    let z = (mc.mean - exact).abs() / mc.std_error;
    ensure(z <= 3.0, || format!("exact {exact}, sampled {} +/- {}", mc.mean, mc.std_error))?;
    Ok(format!(
        "exact {exact:.5}, sampled {:.5} +/- {:.5} ({z:.2} SE)",
        mc.mean, mc.std_error
    ))
}

fn find(summary: &[CellSummary], kind: AttackerKind, tau: f64) -> Result<&CellSummary, String> {
    summary
        .iter()
        .find(|c| c.attacker == kind && c.tau == tau)
        .ok_or_else(|| format!("no results for {kind} at tau={tau}"))
}

fn ordering(shared: &mut Shared) -> Outcome {
    let cells: Vec<_> = AttackerKind::ALL.iter().map(|&k| (k, 1.0)).collect();
    let summary = shared.play(&cells)?;
    let cm = find(&summary, AttackerKind::NdpCm, 1.0)?;
    let sm = find(&summary, AttackerKind::NdpSm, 1.0)?;
    let fi = find(&summary, AttackerKind::FiGreedy, 1.0)?;
    let iql = find(&summary, AttackerKind::Iql, 1.0)?;
    let table = format!(
        "cm {:.3}±{:.3}, sm {:.3}±{:.3}, fi {:.3}±{:.3}, iql {:.3}±{:.3}",
        cm.mean, cm.std_error, sm.mean, sm.std_error, fi.mean, fi.std_error, iql.mean, iql.std_error
    );
    // gaps against the standard error of the difference
    let gap_se = |a: &CellSummary, b: &CellSummary| a.std_error.hypot(b.std_error);
    ensure(cm.mean - fi.mean > gap_se(cm, fi), || format!("cm does not beat greedy: {table}"))?;
    ensure(fi.mean - iql.mean > gap_se(fi, iql), || format!("greedy does not beat iql: {table}"))?;
    ensure(cm.mean >= sm.mean - cm.std_error.min(sm.std_error), || {
        format!("cm falls behind sm: {table}")
    })?;
    Ok(table)
}

fn exploration_trend(shared: &mut Shared) -> Outcome {
    let taus = [0.5, 1.0, 2.0];
    let cells: Vec<_> = taus.iter().map(|&t| (AttackerKind::NdpCm, t)).collect();
    let summary = shared.play(&cells)?;
    let cells = taus
        .iter()
        .map(|&t| find(&summary, AttackerKind::NdpCm, t))
        .collect::<Result<Vec<_>, _>>()?;
    let table = cells
        .iter()
        .map(|c| format!("tau {}: {:.3}±{:.3}", c.tau, c.mean, c.std_error))
        .collect::<Vec<_>>()
        .join(", ");
    for w in cells.windows(2) {
        let slack = w[0].std_error.min(w[1].std_error);
        ensure(w[1].mean >= w[0].mean - slack, || format!("return drops: {table}"))?;
    }
    Ok(table)
}

fn bound_diagnostics(_: &mut Shared) -> Outcome {
    let base = BoundInputs {
        delta: 0.1,
        tau: 1.0,
        gamma: 0.95,
        d_count: 4,
        r_max: 9.46,
    };
    let eps = epsilon_bound(&base);
    ensure((eps - 15_136.0).abs() <= 1e-9 * 15_136.0, || format!("epsilon {eps}"))?;
    let asym = asymptotic_bound(1.0, 0.95);
    ensure((asym - 760.0).abs() <= 1e-9 * 760.0, || format!("multiplier {asym}"))?;
    let deltas = [0.01, 0.1, 0.5, 1.0, 5.0];
    let taus = [0.25, 0.5, 1.0, 2.0, 4.0];
    for &delta in &deltas {
        for w in taus.windows(2) {
            let a = epsilon_bound(&BoundInputs { delta, tau: w[0], ..base });
            let b = epsilon_bound(&BoundInputs { delta, tau: w[1], ..base });
            ensure(b < a, || format!("not decreasing in tau at delta={delta}"))?;
        }
    }
    for &tau in &taus {
        for w in deltas.windows(2) {
            let a = epsilon_bound(&BoundInputs { delta: w[0], tau, ..base });
            let b = epsilon_bound(&BoundInputs { delta: w[1], tau, ..base });
            ensure(b > a, || format!("not increasing in delta at tau={tau}"))?;
        }
    }
    Ok(format!("epsilon {eps:.6}, multiplier {asym:.6}, monotone on a 5x5 grid"))
}

fn run_cli(out: &Path) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_secgame"))
        .args(["run", "--seed", "7", "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        String::from_utf8_lossy(&status.stderr).into_owned()
    })?;
    std::fs::read(out.join(EPISODES_FILE)).map_err(|e| e.to_string())
}

fn determinism(_: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = run_cli(&dir.path().join("a"))?;
    let b = run_cli(&dir.path().join("b"))?;
    ensure(!a.is_empty() && a == b, || "episodes.csv differs between runs".into())?;
    Ok(format!("{} identical bytes", a.len()))
}

type Criterion = fn(&mut Shared) -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion, u64); 10] = [
        ("kernel exactness", kernel_exactness, 1),
        ("influence-network arithmetic", lin_arithmetic, 1),
        ("gradient verification", gradient_verification, 10),
        ("Q-learning sanity", iql_sanity, 30),
        ("static-defender oracle equivalence", static_defender_equivalence, 600),
        ("evaluator cross-check", evaluator_cross_check, 120),
        ("attacker ordering", ordering, 45 * 60),
        ("exploration trend", exploration_trend, 90 * 60),
        ("bound diagnostics", bound_diagnostics, 1),
        ("determinism", determinism, 300),
    ];
    let mut shared = Shared::new();
    let mut failures = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut shared)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = started.elapsed();
        let result = result.and_then(|detail| {
            if elapsed > Duration::from_secs(limit) {
                Err(format!("{detail}; took {elapsed:.1?}, limit {limit}s"))
            } else {
                Ok(detail)
            }
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
