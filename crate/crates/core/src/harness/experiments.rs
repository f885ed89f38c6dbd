use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{
    ConvergenceSection, FairnessSection, HarnessConfig, LossSweepSection, Scenario, TcrSection,
};
use super::run::{run_flows, FlowSpec, GoalSource, RunOptions, RunResult, Scheme, SeriesRow};
use crate::agent::{run_training, Agent, EnvConfig, LinkEnv, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::netsim::LinkSpec;
use crate::objective::{normalize_goal, Goal, Target};
use crate::transport::RunSummary;
use crate::tuner::{TuneRecord, TunerConfig};

fn csv<T, F: Fn(&T) -> String>(header: &str, rows: &[T], line: F) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&line(r));
        s.push('\n');
    }
    s
}

/// Trains a fresh agent on `scenario` for `iterations`.
pub fn train_agent(cfg: &HarnessConfig, scenario: &str, iterations: usize, seed: u64) -> Result<TrainOutcome> {
    let sc = cfg.scenario(scenario)?;
    let mut acfg = cfg.train.agent.clone();
    acfg.bound = sc.bound()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = Agent::new(acfg.clone(), &mut rng)?;
    let mut env = LinkEnv::new(EnvConfig::new(sc.link.clone(), acfg.bound), seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let tc = TrainConfig {
        iterations,
        log_every: cfg.train.log_every,
        plateau: cfg.train.plateau,
    };
    run_training(&mut env, agent, &tc, &mut rng)
}

fn options(duration_ms: u64, tuner: &TunerConfig) -> RunOptions {
    let mut o = RunOptions::new(duration_ms);
    o.tuner = *tuner;
    o
}

fn run_one(agent: &Agent, link: &LinkSpec, scheme: Scheme, opts: &RunOptions, seed: u64) -> Result<RunResult> {
    run_flows(Some(agent), link.build(seed)?, &[FlowSpec::new(scheme)], opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierRow {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub throughput_mbps: f64,
    pub p95_qdelay_ms: f64,
    pub p95_rtt_ms: f64,
    pub loss_rate: f64,
}

impl FrontierRow {
    pub const HEADER: &'static str = "g1,g2,g3,throughput_mbps,p95_qdelay_ms,p95_rtt_ms,loss_rate";

    pub fn csv_line(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.3},{:.3},{:.6}",
            self.g1, self.g2, self.g3, self.throughput_mbps, self.p95_qdelay_ms, self.p95_rtt_ms, self.loss_rate
        )
    }
}

pub fn frontier_csv(rows: &[FrontierRow]) -> String {
    csv(FrontierRow::HEADER, rows, FrontierRow::csv_line)
}

/// Fixed-goal runs, one per grid point; averages cover the second half.
pub fn frontier(agent: &Agent, sc: &Scenario, goals: &[[f64; 3]], duration_ms: u64, seed: u64) -> Result<Vec<FrontierRow>> {
    if goals.is_empty() {
        return Err(Error::Config("frontier goal grid is empty".into()));
    }
    let opts = RunOptions::new(duration_ms);
    goals
        .iter()
        .map(|raw| {
            let g = normalize_goal(*raw)?;
            let r = run_one(agent, &sc.link, Scheme::Learned(GoalSource::Fixed(g)), &opts, seed)?;
            let s = r.flows[0].summary;
            let w = g.weights();
            Ok(FrontierRow {
                g1: w[0],
                g2: w[1],
                g3: w[2],
                throughput_mbps: s.throughput_mbps,
                p95_qdelay_ms: s.p95_qdelay_ms,
                p95_rtt_ms: s.p95_rtt_ms,
                loss_rate: s.loss_rate,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TcrRow {
    pub index: usize,
    pub thr_mbps: f64,
    pub delay_ms: f64,
    pub loss: f64,
    pub tuned_thr: f64,
    pub tuned_delay: f64,
    pub tuned_loss: f64,
    pub tuned: bool,
    pub aimd: bool,
    pub uniform: bool,
}

impl TcrRow {
    pub const HEADER: &'static str =
        "index,thr_mbps,delay_ms,loss,tuned_thr,tuned_delay,tuned_loss,tuned,aimd,uniform";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.3},{:.6},{:.6},{:.3},{:.6},{},{},{}",
            self.index,
            self.thr_mbps,
            self.delay_ms,
            self.loss,
            self.tuned_thr,
            self.tuned_delay,
            self.tuned_loss,
            self.tuned as u8,
            self.aimd as u8,
            self.uniform as u8
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcrSchemeRow {
    pub scheme: &'static str,
    pub achieved: usize,
    pub total: usize,
    pub tcr: f64,
}

impl TcrSchemeRow {
    pub const HEADER: &'static str = "scheme,achieved,total,tcr";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{:.6}", self.scheme, self.achieved, self.total, self.tcr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcrReport {
    pub max_throughput_mbps: f64,
    pub max_delay_ms: f64,
    pub min_delay_ms: f64,
    pub targets: Vec<TcrRow>,
    pub schemes: Vec<TcrSchemeRow>,
}

impl TcrReport {
    pub fn tcr(&self, scheme: &str) -> Option<f64> {
        self.schemes.iter().find(|r| r.scheme == scheme).map(|r| r.tcr)
    }

    pub fn targets_csv(&self) -> String {
        csv(TcrRow::HEADER, &self.targets, TcrRow::csv_line)
    }

    pub fn schemes_csv(&self) -> String {
        csv(TcrSchemeRow::HEADER, &self.schemes, TcrSchemeRow::csv_line)
    }
}

/// Whether run averages meet every bound of `target`.
pub fn achieves(summary: &RunSummary, target: &Target) -> bool {
    target.all_satisfied(&summary.physical())
}

pub fn scheme_row(scheme: &'static str, flags: impl IntoIterator<Item = bool>) -> TcrSchemeRow {
    let (mut achieved, mut total) = (0, 0);
    for f in flags {
        total += 1;
        achieved += f as usize;
    }
    TcrSchemeRow {
        scheme,
        achieved,
        total,
        tcr: if total == 0 { 0.0 } else { achieved as f64 / total as f64 },
    }
}

/// Samples targets inside the range the schemes can span on this link: the
/// throughput bound up to the best run average, the delay bound between the
/// base RTT and the worst p95 RTT, the loss bound in `(0, max_loss]`.
pub fn sample_targets<R: Rng + ?Sized>(
    n: usize,
    max_thr: f64,
    (min_delay, max_delay): (f64, f64),
    max_loss: f64,
    rng: &mut R,
) -> Result<Vec<Target>> {
    let open = |hi: f64, rng: &mut R| hi * (1.0 - rng.random::<f64>());
    (0..n)
        .map(|_| {
            let thr = open(max_thr, rng);
            let delay = min_delay + (max_delay - min_delay) * rng.random::<f64>();
            let loss = open(max_loss, rng);
            Target::explicit(thr, delay, loss)
        })
        .collect()
}

/// Target completion ratios of the tuned agent, AIMD and the agent pinned to
/// the uniform goal.
pub fn tcr(
    agent: &Agent,
    sc: &Scenario,
    frontier_goals: &[[f64; 3]],
    tc: &TcrSection,
    tuner: &TunerConfig,
    seed: u64,
) -> Result<TcrReport> {
    let opts = options(tc.duration_ms, tuner);
    let run = |scheme: Scheme| -> Result<RunSummary> { Ok(run_one(agent, &sc.link, scheme, &opts, seed)?.flows[0].summary) };

    let aimd = run(Scheme::Aimd)?;
    let uniform = run(Scheme::Learned(GoalSource::Fixed(Goal::uniform())))?;
    let mut refs = vec![aimd, uniform];
    for g in frontier_goals {
        refs.push(run(Scheme::Learned(GoalSource::Fixed(normalize_goal(*g)?)))?);
    }
    let max_thr = refs.iter().map(|s| s.throughput_mbps).fold(0.0, f64::max);
    let max_delay = refs.iter().map(|s| s.p95_rtt_ms).fold(0.0, f64::max);
    let min_delay = sc.link.min_rtt_ms();
    if !(max_thr > 0.0) || !(max_delay > min_delay) {
        return Err(Error::Config(format!(
            "reference runs span no target range: thr {max_thr}, delay {min_delay}..{max_delay}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7c3));
    let targets = sample_targets(tc.n_targets, max_thr, (min_delay, max_delay), tc.max_loss, &mut rng)?;
    let mut rows = Vec::with_capacity(targets.len());
    for (index, t) in targets.iter().enumerate() {
        let s = run(Scheme::Learned(GoalSource::Tuned(*t)))?;
        rows.push(TcrRow {
            index,
            thr_mbps: t.min_throughput.unwrap_or(0.0),
            delay_ms: t.max_delay.unwrap_or(0.0),
            loss: t.max_loss.unwrap_or(0.0),
            tuned_thr: s.throughput_mbps,
            tuned_delay: s.p95_rtt_ms,
            tuned_loss: s.loss_rate,
            tuned: achieves(&s, t),
            aimd: achieves(&aimd, t),
            uniform: achieves(&uniform, t),
        });
    }
    let schemes = vec![
        scheme_row("learned_tuned", rows.iter().map(|r| r.tuned)),
        scheme_row("aimd", rows.iter().map(|r| r.aimd)),
        scheme_row("learned_uniform", rows.iter().map(|r| r.uniform)),
    ];
    Ok(TcrReport {
        max_throughput_mbps: max_thr,
        max_delay_ms: max_delay,
        min_delay_ms: min_delay,
        targets: rows,
        schemes,
    })
}

pub fn tuning_csv(rows: &[TuneRecord]) -> String {
    csv(TuneRecord::HEADER, rows, TuneRecord::csv_line)
}

pub struct ConvergenceResult {
    pub series: Vec<SeriesRow>,
    pub tuning: Vec<TuneRecord>,
    pub summary: RunSummary,
}

/// One tuned flow towards the convergence target, binned throughput.
pub fn convergence(agent: &Agent, sc: &Scenario, cc: &ConvergenceSection, tuner: &TunerConfig, seed: u64) -> Result<ConvergenceResult> {
    let mut opts = options(cc.duration_ms, tuner);
    opts.bin_ms = Some(cc.bin_ms);
    opts.keep_tuning_log = true;
    let target = cc.target.to_target()?;
    let mut r = run_one(agent, &sc.link, Scheme::Learned(GoalSource::Tuned(target)), &opts, seed)?;
    let f = r.flows.swap_remove(0);
    Ok(ConvergenceResult {
        series: r.series,
        tuning: f.tuning_log,
        summary: f.summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSweepRow {
    pub link_loss: f64,
    pub throughput_mbps: f64,
    pub p95_rtt_ms: f64,
    pub loss_rate: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub raw_g3_constant: bool,
    pub g3_constant: bool,
}

impl LossSweepRow {
    pub const HEADER: &'static str = "link_loss,throughput_mbps,p95_rtt_ms,loss_rate,g1,g2,g3,raw_g3_constant,g3_constant";

    pub fn csv_line(&self) -> String {
        format!(
            "{:.4},{:.6},{:.3},{:.6},{:.9},{:.9},{:.9},{},{}",
            self.link_loss,
            self.throughput_mbps,
            self.p95_rtt_ms,
            self.loss_rate,
            self.g1,
            self.g2,
            self.g3,
            self.raw_g3_constant as u8,
            self.g3_constant as u8
        )
    }
}

pub fn loss_sweep_csv(rows: &[LossSweepRow]) -> String {
    csv(LossSweepRow::HEADER, rows, LossSweepRow::csv_line)
}

/// The tuned agent against one target while the link's random loss varies.
pub fn loss_sweep(agent: &Agent, sc: &Scenario, ls: &LossSweepSection, tuner: &TunerConfig, seed: u64) -> Result<Vec<LossSweepRow>> {
    let opts = options(ls.duration_ms, tuner);
    let target = ls.target.to_target()?;
    ls.losses
        .iter()
        .map(|&p| {
            let link = LinkSpec {
                stochastic_loss: p,
                ..sc.link.clone()
            };
            let r = run_one(agent, &link, Scheme::Learned(GoalSource::Tuned(target)), &opts, seed)?;
            let f = &r.flows[0];
            let g = f.final_goal.expect("learned flow").weights();
            Ok(LossSweepRow {
                link_loss: p,
                throughput_mbps: f.summary.throughput_mbps,
                p95_rtt_ms: f.summary.p95_rtt_ms,
                loss_rate: f.summary.loss_rate,
                g1: g[0],
                g2: g[1],
                g3: g[2],
                raw_g3_constant: f.raw_g3_constant,
                g3_constant: f.g3_constant,
            })
        })
        .collect()
}

/// `(Σx)² / (n·Σx²)`; 1 for fewer than two flows or all-zero shares.
pub fn jain_index(xs: &[f64]) -> f64 {
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if xs.len() < 2 || sq == 0.0 {
        return 1.0;
    }
    let s: f64 = xs.iter().sum();
    s * s / (xs.len() as f64 * sq)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessRow {
    pub case: &'static str,
    pub flow: usize,
    pub scheme: &'static str,
    pub start_ms: u64,
    pub final_third_mbps: f64,
    pub jain: f64,
}

impl FairnessRow {
    pub const HEADER: &'static str = "case,flow,scheme,start_ms,final_third_mbps,jain";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.case, self.flow, self.scheme, self.start_ms, self.final_third_mbps, self.jain
        )
    }
}

pub fn fairness_csv(rows: &[FairnessRow]) -> String {
    csv(FairnessRow::HEADER, rows, FairnessRow::csv_line)
}

pub struct FairnessResult {
    pub rows: Vec<FairnessRow>,
    /// Per-case series, tagged by case name.
    pub series: Vec<(&'static str, Vec<SeriesRow>)>,
}

/// Mean binned throughput per flow over the last third of the run.
pub fn final_third_means(series: &[SeriesRow], flows: usize, end_ms: u64) -> Vec<f64> {
    let from = end_ms - end_ms / 3;
    let mut sum = vec![0.0; flows];
    let mut n = vec![0usize; flows];
    for r in series.iter().filter(|r| r.time_ms > from) {
        sum[r.flow] += r.thr_mbps;
        n[r.flow] += 1;
    }
    sum.iter().zip(&n).map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 }).collect()
}

/// Two same-target tuned flows with a staggered start, then a tuned flow
/// against AIMD.
pub fn fairness(agent: &Agent, sc: &Scenario, fc: &FairnessSection, tuner: &TunerConfig, seed: u64) -> Result<FairnessResult> {
    let mut opts = options(fc.duration_ms, tuner);
    opts.bin_ms = Some(fc.bin_ms);
    let target = fc.target.to_target()?;
    let tuned = Scheme::Learned(GoalSource::Tuned(target));
    let cases: [(&'static str, [Scheme; 2]); 2] = [("same_target", [tuned, tuned]), ("vs_aimd", [tuned, Scheme::Aimd])];
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (case, schemes) in cases {
        let flows: Vec<FlowSpec> = schemes
            .iter()
            .enumerate()
            .map(|(i, s)| FlowSpec::new(*s).starting_at(i as u64 * fc.stagger_ms))
            .collect();
        let r = run_flows(Some(agent), sc.link.build(seed)?, &flows, &opts)?;
        let means = final_third_means(&r.series, flows.len(), r.end_ms);
        let jain = jain_index(&means);
        for (i, f) in flows.iter().enumerate() {
            rows.push(FairnessRow {
                case,
                flow: i,
                scheme: f.scheme.name(),
                start_ms: f.start_ms,
                final_third_mbps: means[i],
                jain,
            });
        }
        series.push((case, r.series));
    }
    Ok(FairnessResult { rows, series })
}
