use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::fi_greedy_act;
use crate::error::Result;
use crate::game::SecurityGame;
use crate::iql::{IqlParams, QTable};
use crate::ndp::{
    asymptotic_bound, epsilon_bound, estimate_covering_radius, sample_states, AttackerMdp,
    AttackerState, BoundInputs, SamplerConfig, ZeroValue,
};
use crate::oracle::{
    exact_policy_value, exact_vi, monte_carlo_truncated_return, policy_value, static_defender_mdp,
};

use super::config::ExperimentConfig;

/// Outcome of one oracle check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Cross-checks the game and the approximate machinery against the exact
/// evaluators.
pub fn verify_suite(game: &SecurityGame, params: IqlParams, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let m = game.n_moves();

    let mut worst: f64 = 0.0;
    for s in 0..game.n_states() {
        for u in 0..m {
            for d in 0..m {
                let total: f64 = game.kernel(s, u, d).iter().map(|(_, p)| p).sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
    }
    checks.push(Check::new(
        "kernel rows sum to one",
        worst <= 1e-12,
        format!("max |sum - 1| = {worst:.3e}"),
    ));

    let frozen = QTable::zeros(game.n_states(), m);
    let finite = static_defender_mdp(game, &frozen, params.tau)?;
    let tol = 1e-10;
    let sol = exact_vi(&finite, tol)?;
    checks.push(Check::new(
        "static-defender value iteration residual",
        sol.residual <= tol,
        format!("residual {:.3e} after {} sweeps", sol.residual, sol.iterations),
    ));
    let evaluated = policy_value(&finite, &sol.policy)?;
    let gap = evaluated
        .iter()
        .zip(&sol.values)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let bound = tol * 2.0 * finite.gamma() / (1.0 - finite.gamma());
    checks.push(Check::new(
        "greedy policy evaluates to the optimal values",
        gap <= bound,
        format!("max gap {gap:.3e} (bound {bound:.3e})"),
    ));

    let mdp = AttackerMdp::new(game, params)?;
    let (lo, hi) = mdp.reachable_q_box();
    let mut disagreements = 0;
    for _ in 0..1000 {
        let s = rng.random_range(0..game.n_states() - 1);
        let q = (0..game.q_len())
            .map(|_| if lo < hi { rng.random_range(lo..hi) } else { lo })
            .collect();
        let z = AttackerState::new(s, QTable::from_values(game.n_states(), m, q)?);
        if fi_greedy_act(&mdp, &z)? != mdp.act(&z, &ZeroValue)? {
            disagreements += 1;
        }
    }
    checks.push(Check::new(
        "greedy attacker equals lookahead on a zero model",
        disagreements == 0,
        format!("{disagreements} of 1000 states disagree"),
    ));

    let z0 = mdp.initial_state();
    let greedy = |z: &AttackerState| fi_greedy_act(&mdp, z);
    let horizon = 4;
    let exact = exact_policy_value(&mdp, &z0, &greedy, horizon)?;
    let mc = monte_carlo_truncated_return(&mdp, &z0, &greedy, horizon, 20_000, &mut rng)?;
    let z = (mc.mean - exact).abs() / mc.std_error;
    checks.push(Check::new(
        "Monte Carlo return matches exact expansion",
        z <= 3.0,
        format!(
            "exact {exact:.5}, sampled {:.5} +/- {:.5} ({z:.2} standard errors)",
            mc.mean, mc.std_error
        ),
    ));

    let r_max = game.max_abs_attacker_reward();
    let gamma = game.gamma();
    let next = exact_policy_value(&mdp, &z0, &greedy, horizon + 1)?;
    let tail = gamma.powi(horizon as i32) * r_max / (1.0 - gamma);
    checks.push(Check::new(
        "horizon tail bound",
        (next - exact).abs() <= tail,
        format!("|v5 - v4| = {:.5} <= {tail:.5}", (next - exact).abs()),
    ));

    let eps = epsilon_bound(&BoundInputs {
        delta: 0.1,
        tau: 1.0,
        gamma: 0.95,
        d_count: 4,
        r_max: 9.46,
    });
    checks.push(Check::new(
        "error bound arithmetic",
        (eps - 15_136.0).abs() <= 1e-9 * 15_136.0,
        format!("epsilon(0.1, 1, 0.95, 4, 9.46) = {eps}"),
    ));
    Ok(checks)
}

/// Labeled approximation-error diagnostics for one training configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub q_low: f64,
    pub q_high: f64,
    pub samples: usize,
    pub probes: usize,
    /// Monte Carlo estimate of the covering radius; a lower bound.
    pub delta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub d_count: usize,
    pub r_max: f64,
    pub epsilon: f64,
    pub asymptotic: f64,
}

impl std::fmt::Display for BoundsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "sampling box        [{}, {}] per entry", self.q_low, self.q_high)?;
        writeln!(f, "samples             {}", self.samples)?;
        writeln!(f, "probe points        {}", self.probes)?;
        writeln!(f, "delta estimate      {:.6} (lower bound on the covering radius)", self.delta)?;
        writeln!(f, "tau                 {}", self.tau)?;
        writeln!(f, "gamma               {}", self.gamma)?;
        writeln!(f, "defender actions    {}", self.d_count)?;
        writeln!(f, "r_max               {}", self.r_max)?;
        writeln!(f, "epsilon             {:.6e}", self.epsilon)?;
        write!(f, "asymptotic bound    {:.6e}", self.asymptotic)
    }
}

/// Draws one horizon's worth of training states from the configured sampler
/// and turns their covering radius into the error bounds.
pub fn bounds_report(cfg: &ExperimentConfig, game: &SecurityGame, probes: usize) -> Result<BoundsReport> {
    let params = cfg.defender(cfg.tau);
    let mdp = AttackerMdp::new(game, params)?;
    let (q_low, q_high) = cfg.resolve_q_box(&mdp);
    let sampler = SamplerConfig {
        trajectory_mix: cfg.trajectory_mix,
        ..SamplerConfig::uniform(q_low, q_high, cfg.samples_per_horizon)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let states = sample_states(&mdp, &sampler, &ZeroValue, &mut rng)?;
    let points: Vec<Vec<f64>> = states.into_iter().map(|z| z.q.into_values()).collect();
    let delta = estimate_covering_radius(&points, q_low, q_high, probes, &mut rng)?;
    let inputs = BoundInputs {
        delta,
        tau: params.tau,
        gamma: game.gamma(),
        d_count: game.n_moves(),
        r_max: game.max_abs_attacker_reward(),
    };
    let epsilon = epsilon_bound(&inputs);
    Ok(BoundsReport {
        q_low,
        q_high,
        samples: points.len(),
        probes,
        delta,
        tau: inputs.tau,
        gamma: inputs.gamma,
        d_count: inputs.d_count,
        r_max: inputs.r_max,
        epsilon,
        asymptotic: asymptotic_bound(epsilon, inputs.gamma),
    })
}
