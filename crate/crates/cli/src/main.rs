use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use secgame::harness::{
    aggregate, bounds_report, emit_outputs, run_cells, train_model, verify_suite, CellSummary,
    ExperimentConfig, ModelCache, ModelKind,
};
use secgame::{AttackerKind, MlpModel};

#[derive(Parser)]
#[command(name = "secgame", version, about = "Security games against a learning defender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Reference settings when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for training and trials.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the attacker's value network and write a checkpoint.
    Train,
    /// Play the configured attacker against the defender.
    Run,
    /// Repeat `run` at every temperature in `taus`.
    SweepTau,
    /// Play every attacker kind at the configured temperature.
    Compare,
    /// Report the approximation-error diagnostics.
    Bounds,
    /// Check the game and solvers against the exact evaluators.
    Verify,
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn checkpoint_path(cfg: &ExperimentConfig, model: ModelKind) -> PathBuf {
    cfg.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out.join(format!("model-{}.ckpt", model.label())))
}

fn print_summary(summary: &[CellSummary]) {
    println!(
        "{:<10} {:>6} {:>7} {:>12} {:>10} {:>22}",
        "attacker", "tau", "trials", "mean", "std err", "95% interval"
    );
    for s in summary {
        let se = if s.se_defined {
            format!("{:.4}", s.std_error)
        } else {
            "n/a".to_string()
        };
        println!(
            "{:<10} {:>6} {:>7} {:>12.4} {:>10} {:>22}",
            s.attacker.name(),
            s.tau,
            s.trials,
            s.mean,
            se,
            format!("[{:.4}, {:.4}]", s.ci_low, s.ci_high)
        );
    }
}

fn play(cfg: &ExperimentConfig, cells: &[(AttackerKind, f64)], models: &mut ModelCache) -> anyhow::Result<()> {
    let game = cfg.build_game()?;
    let records = run_cells(cfg, &game, cells, models, &mut |m| log(m))?;
    let summary = aggregate(&records)?;
    let files = emit_outputs(&cfg.out, &records, &summary)?;
    print_summary(&summary);
    for f in files {
        log(&format!("wrote {}", f.display()));
    }
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let game = cfg.build_game()?;
    let model = cfg.model_kind();
    log(&format!("training {} value network at tau={}", model.label(), cfg.tau));
    let outcome = train_model(cfg, &game, model, cfg.tau, |r| {
        println!(
            "horizon {:>2}  train loss {:.6}  held-out mse {:.6}  mean target {:.4}  {:.1}s",
            r.horizon,
            r.train_loss.last().copied().unwrap_or(f64::NAN),
            r.test_mse,
            r.mean_target,
            r.seconds
        )
    })?;
    let path = checkpoint_path(cfg, model);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    outcome.model.save(&path)?;
    log(&format!("wrote {}", path.display()));
    Ok(())
}

/// A configured checkpoint that exists is used instead of training.
fn preload(cfg: &ExperimentConfig, models: &mut ModelCache) -> anyhow::Result<()> {
    let (Some(path), Some(kind)) = (&cfg.checkpoint, ModelKind::of_attacker(cfg.attacker)) else {
        return Ok(());
    };
    if path.is_file() {
        let model = MlpModel::load(Path::new(path))?;
        let expected = kind.spec(model.spec().input_dim, model.spec().output_dim);
        if model.spec() != &expected {
            bail!("checkpoint {} does not hold a {} model", path.display(), kind.label());
        }
        log(&format!("using checkpoint {}", path.display()));
        models.insert(kind, cfg.tau, model);
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let cfg = load_config(&cli.common)?;
    if let Some(n) = cli.common.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let mut models = ModelCache::new();
    match cli.command {
        Command::Train => train(&cfg)?,
        Command::Run => {
            preload(&cfg, &mut models)?;
            play(&cfg, &[(cfg.attacker, cfg.tau)], &mut models)?;
        }
        Command::SweepTau => {
            let cells: Vec<_> = cfg.taus.iter().map(|&t| (cfg.attacker, t)).collect();
            play(&cfg, &cells, &mut models)?;
        }
        Command::Compare => {
            let cells: Vec<_> = AttackerKind::ALL.iter().map(|&k| (k, cfg.tau)).collect();
            play(&cfg, &cells, &mut models)?;
        }
        Command::Bounds => {
            let game = cfg.build_game()?;
            println!("{}", bounds_report(&cfg, &game, 1000)?);
        }
        Command::Verify => {
            let game = cfg.build_game()?;
            let checks = verify_suite(&game, cfg.defender(cfg.tau), cfg.seed)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
