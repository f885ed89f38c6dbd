use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use goalcc_core::agent::{curve_csv, Agent};
use goalcc_core::harness::experiments::{
    convergence, fairness, fairness_csv, frontier, frontier_csv, loss_sweep, loss_sweep_csv, tcr, train_agent,
    tuning_csv,
};
use goalcc_core::harness::{gradcheck_csv, run_gradchecks, series_csv, HarnessConfig, OutputSet};

#[derive(Parser)]
#[command(name = "goalcc", version, about = "Goal-conditioned congestion control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Existing directory for CSVs and the manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Agent checkpoint: written by `train`, read by the evaluation commands.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the configured training iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Overrides the scenario the command runs on.
    #[arg(long)]
    scenario: Option<String>,
    /// Overrides the number of sampled targets (`tcr`) or instances
    /// (`gradcheck`).
    #[arg(long)]
    count: Option<usize>,
    /// Overrides the per-run simulated duration in ms.
    #[arg(long)]
    duration_ms: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent with random goals per episode.
    Train(Common),
    /// Fixed-goal runs over a goal grid.
    Frontier(Common),
    /// Target completion ratio of the tuner against the baselines.
    Tcr(Common),
    /// Tuned flow towards one target, binned throughput over time.
    Convergence(Common),
    /// Tuned flow under increasing random link loss.
    LossSweep(Common),
    /// Staggered flows sharing one bottleneck.
    Fairness(Common),
    /// Finite-difference checks of every layer and network.
    Gradcheck(Common),
}

fn load_config(c: &Common) -> Result<HarnessConfig> {
    let mut cfg = match &c.config {
        Some(p) => HarnessConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => HarnessConfig::default(),
    };
    if let Some(s) = &c.scenario {
        cfg.scenario(s)?;
        cfg.train.scenario = s.clone();
        cfg.frontier.scenario = s.clone();
        cfg.tcr.scenario = s.clone();
        cfg.convergence.scenario = s.clone();
        cfg.loss_sweep.scenario = s.clone();
        cfg.fairness.scenario = s.clone();
    }
    if let Some(n) = c.iters {
        cfg.train.iterations = n;
    }
    if let Some(n) = c.count {
        cfg.tcr.n_targets = n;
        cfg.gradcheck.instances = n;
    }
    if let Some(d) = c.duration_ms {
        cfg.frontier.duration_ms = Some(d);
        cfg.tcr.duration_ms = d;
        cfg.convergence.duration_ms = d;
        cfg.loss_sweep.duration_ms = d;
        cfg.fairness.duration_ms = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_agent(c: &Common) -> Result<(Agent, Vec<u8>)> {
    let Some(path) = &c.checkpoint else {
        bail!("--checkpoint is required for this command");
    };
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let agent = Agent::load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((agent, bytes))
}

fn run(cmd: Command) -> Result<()> {
    let (name, c) = match &cmd {
        Command::Train(c) => ("train", c),
        Command::Frontier(c) => ("frontier", c),
        Command::Tcr(c) => ("tcr", c),
        Command::Convergence(c) => ("convergence", c),
        Command::LossSweep(c) => ("loss-sweep", c),
        Command::Fairness(c) => ("fairness", c),
        Command::Gradcheck(c) => ("gradcheck", c),
    };
    let cfg = load_config(c)?;
    let mut out = OutputSet::new(&c.out)?;
    let seed = c.seed;

    let ckpt = match cmd {
        Command::Train(_) => {
            let t = train_agent(&cfg, &cfg.train.scenario, cfg.train.iterations, seed)?;
            let path = c.checkpoint.clone().unwrap_or_else(|| c.out.join("agent.ckpt"));
            t.agent.save_checkpoint(&path)?;
            out.add("curve.csv", curve_csv(&t.curve));
            eprintln!(
                "trained {} iterations over {} episodes -> {}",
                t.iterations,
                t.episodes,
                path.display()
            );
            Some(std::fs::read(&path).with_context(|| format!("reading back {}", path.display()))?)
        }
        Command::Frontier(_) => {
            let (agent, bytes) = load_agent(c)?;
            let sc = cfg.scenario(&cfg.frontier.scenario)?;
            let d = cfg.frontier.duration_ms.unwrap_or(sc.duration_ms);
            out.add("frontier.csv", frontier_csv(&frontier(&agent, sc, &cfg.frontier.goals, d, seed)?));
            Some(bytes)
        }
        Command::Tcr(_) => {
            let (agent, bytes) = load_agent(c)?;
            let sc = cfg.scenario(&cfg.tcr.scenario)?;
            let r = tcr(&agent, sc, &cfg.frontier.goals, &cfg.tcr, &cfg.tuner, seed)?;
            for s in &r.schemes {
                eprintln!("{}: {}/{} = {:.3}", s.scheme, s.achieved, s.total, s.tcr);
            }
            out.add("tcr_targets.csv", r.targets_csv());
            out.add("tcr_schemes.csv", r.schemes_csv());
            Some(bytes)
        }
        Command::Convergence(_) => {
            let (agent, bytes) = load_agent(c)?;
            let sc = cfg.scenario(&cfg.convergence.scenario)?;
            let r = convergence(&agent, sc, &cfg.convergence, &cfg.tuner, seed)?;
            out.add("convergence.csv", series_csv(&r.series));
            out.add("tuning.csv", tuning_csv(&r.tuning));
            Some(bytes)
        }
        Command::LossSweep(_) => {
            let (agent, bytes) = load_agent(c)?;
            let sc = cfg.scenario(&cfg.loss_sweep.scenario)?;
            out.add("loss_sweep.csv", loss_sweep_csv(&loss_sweep(&agent, sc, &cfg.loss_sweep, &cfg.tuner, seed)?));
            Some(bytes)
        }
        Command::Fairness(_) => {
            let (agent, bytes) = load_agent(c)?;
            let sc = cfg.scenario(&cfg.fairness.scenario)?;
            let r = fairness(&agent, sc, &cfg.fairness, &cfg.tuner, seed)?;
            out.add("fairness.csv", fairness_csv(&r.rows));
            for (case, series) in &r.series {
                out.add(format!("fairness_{case}.csv"), series_csv(series));
            }
            Some(bytes)
        }
        Command::Gradcheck(_) => {
            let rows = run_gradchecks(cfg.gradcheck.instances, seed)?;
            out.add("gradcheck.csv", gradcheck_csv(&rows));
            let failed = rows.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                out.finish(name, seed, &cfg, None)?;
                bail!("{failed} of {} gradient checks failed", rows.len());
            }
            None
        }
    };
    let manifest = out.finish(name, seed, &cfg, ckpt.as_deref())?;
    for o in &manifest.outputs {
        println!("{}  {}", o.sha256, Path::new(&o.file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
