use serde::Serialize;

use crate::agent::{observation, Agent};
use crate::baselines::AimdState;
use crate::error::{Error, Result};
use crate::netsim::{Ack, Endpoint, Link, Packet, Simulation};
use crate::objective::{Goal, Target};
use crate::transport::{Controller, RateControl, RunSummary, Sender, SenderConfig, SenderStats};
use crate::tuner::{TuneRecord, Tuner, TunerConfig};

/// Where a learned flow's goal comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalSource {
    Fixed(Goal),
    Tuned(Target),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Learned(GoalSource),
    Aimd,
    Constant(f64),
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Learned(GoalSource::Fixed(_)) => "learned_fixed",
            Scheme::Learned(GoalSource::Tuned(_)) => "learned_tuned",
            Scheme::Aimd => "aimd",
            Scheme::Constant(_) => "constant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSpec {
    pub scheme: Scheme,
    pub start_ms: u64,
    pub stop_ms: Option<u64>,
}

impl FlowSpec {
    pub fn new(scheme: Scheme) -> Self {
        FlowSpec {
            scheme,
            start_ms: 0,
            stop_ms: None,
        }
    }

    pub fn starting_at(mut self, ms: u64) -> Self {
        self.start_ms = ms;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub duration_ms: u64,
    /// Summaries cover `[max(record_from, flow start), end)`; defaults to the
    /// second half of the run.
    pub record_from_ms: Option<u64>,
    /// Time-series bin width; `None` disables the series.
    pub bin_ms: Option<u64>,
    pub sender: SenderConfig,
    pub tuner: TunerConfig,
    /// Learned flows never command less than this fraction of the bound.
    pub min_rate_fraction: f64,
    /// Keep every tuning tick in the result.
    pub keep_tuning_log: bool,
}

impl RunOptions {
    pub fn new(duration_ms: u64) -> Self {
        RunOptions {
            duration_ms,
            record_from_ms: None,
            bin_ms: None,
            sender: SenderConfig::default(),
            tuner: TunerConfig::default(),
            min_rate_fraction: 0.01,
            keep_tuning_log: false,
        }
    }
}

/// The two sender kinds that can share a bottleneck.
pub enum FlowSender {
    Rate(Sender<RateControl>),
    Aimd(Sender<AimdState>),
}

macro_rules! with_sender {
    ($self:expr, $s:ident => $body:expr) => {
        match $self {
            FlowSender::Rate($s) => $body,
            FlowSender::Aimd($s) => $body,
        }
    };
}

impl FlowSender {
    pub fn stats(&self) -> &SenderStats {
        with_sender!(self, s => s.stats())
    }

    pub fn rate_mbps(&self) -> f64 {
        with_sender!(self, s => s.rate_mbps())
    }

    pub fn summary(&self, now: u64) -> RunSummary {
        with_sender!(self, s => s.summary(now))
    }

    fn start_record(&mut self, now: u64) {
        with_sender!(self, s => s.start_record(now))
    }

    fn last_delay(&self) -> f64 {
        with_sender!(self, s => s.last_measurement().1.delay_ms)
    }
}

impl Endpoint for FlowSender {
    fn poll_transmit(&mut self, now: u64, out: &mut Vec<Packet>) {
        with_sender!(self, s => s.poll_transmit(now, out))
    }

    fn on_ack(&mut self, ack: &Ack, now: u64) -> Result<()> {
        with_sender!(self, s => s.on_ack(ack, now))
    }
}

fn build_sender<C: Controller>(id: u32, cfg: SenderConfig, c: C, spec: &FlowSpec) -> Sender<C> {
    Sender::new(id, cfg, c).with_schedule(spec.start_ms, spec.stop_ms)
}

/// One time bin of one flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesRow {
    pub time_ms: u64,
    pub flow: usize,
    pub thr_mbps: f64,
    pub rate_mbps: f64,
    pub delay_ms: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl SeriesRow {
    pub const HEADER: &'static str = "time_ms,flow,thr_mbps,rate_mbps,delay_ms,g1,g2,g3";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.3},{:.9},{:.9},{:.9}",
            self.time_ms, self.flow, self.thr_mbps, self.rate_mbps, self.delay_ms, self.g1, self.g2, self.g3
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub scheme: &'static str,
    pub summary: RunSummary,
    /// Goal in force at the end; `None` for non-learned flows.
    pub final_goal: Option<Goal>,
    pub tuning_ticks: usize,
    /// Whether the tuner's raw and normalized loss weights never changed.
    pub raw_g3_constant: bool,
    pub g3_constant: bool,
    pub final_raw: Option<[f64; 3]>,
    pub tuning_log: Vec<TuneRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub flows: Vec<FlowResult>,
    pub series: Vec<SeriesRow>,
    pub end_ms: u64,
}

struct Driver {
    goal: Option<Goal>,
    tuner: Option<Tuner>,
    ticks: usize,
    raw_g3: Option<u64>,
    g3: Option<u64>,
    raw_g3_constant: bool,
    g3_constant: bool,
    log: Vec<TuneRecord>,
}

/// Runs `flows` over `link` for `opts.duration_ms`. Learned flows need `agent`.
pub fn run_flows(agent: Option<&Agent>, link: Link, flows: &[FlowSpec], opts: &RunOptions) -> Result<RunResult> {
    if flows.is_empty() {
        return Err(Error::Config("no flows to run".into()));
    }
    if opts.duration_ms == 0 {
        return Err(Error::Config("duration must be positive".into()));
    }
    let mut senders = Vec::with_capacity(flows.len());
    let mut drivers = Vec::with_capacity(flows.len());
    for (i, f) in flows.iter().enumerate() {
        let id = i as u32;
        let (sender, goal, tuner) = match f.scheme {
            Scheme::Learned(src) => {
                if agent.is_none() {
                    return Err(Error::Config("learned flow without an agent".into()));
                }
                let s = FlowSender::Rate(build_sender(id, opts.sender, RateControl::new(0.0), f));
                match src {
                    GoalSource::Fixed(g) => (s, Some(g), None),
                    GoalSource::Tuned(t) => {
                        let tu = Tuner::new(opts.tuner, t)?;
                        (s, Some(tu.goal()), Some(tu))
                    }
                }
            }
            Scheme::Aimd => (FlowSender::Aimd(build_sender(id, opts.sender, AimdState::default(), f)), None, None),
            Scheme::Constant(r) => (FlowSender::Rate(build_sender(id, opts.sender, RateControl::new(r), f)), None, None),
        };
        senders.push(sender);
        let raw_g3 = tuner.as_ref().map(|t| t.raw()[2].to_bits());
        drivers.push(Driver {
            g3: goal.map(|g| g.weights()[2].to_bits()),
            goal,
            tuner,
            ticks: 0,
            raw_g3,
            raw_g3_constant: true,
            g3_constant: true,
            log: Vec::new(),
        });
    }

    let bound = agent.map(|a| a.config.bound).unwrap_or(1.0);
    let floor = opts.min_rate_fraction * bound;
    let record_from = opts.record_from_ms.unwrap_or(opts.duration_ms / 2);
    let mut sim = Simulation::new(link, senders);
    let mut recording = vec![false; flows.len()];
    let mut series = Vec::new();
    let mut bin_bytes: Vec<u64> = vec![0; flows.len()];

    for t in 0..opts.duration_ms {
        for (i, f) in flows.iter().enumerate() {
            if !recording[i] && t >= record_from.max(f.start_ms) {
                sim.endpoint_mut(i).start_record(t);
                recording[i] = true;
            }
        }
        sim.step()?;
        for i in 0..flows.len() {
            let d = &mut drivers[i];
            let FlowSender::Rate(s) = sim.endpoint_mut(i) else { continue };
            let Some(agent) = agent.filter(|_| d.goal.is_some()) else { continue };
            if let Some(tu) = d.tuner.as_mut() {
                if s.tuning_due(t) {
                    let m = s.take_tuning(t);
                    let rec = tu.on_tuning_tick(m, t);
                    d.ticks += 1;
                    let g = tu.goal();
                    d.goal = Some(g);
                    d.raw_g3_constant &= d.raw_g3 == Some(tu.raw()[2].to_bits());
                    d.g3_constant &= d.g3 == Some(g.weights()[2].to_bits());
                    if opts.keep_tuning_log {
                        d.log.push(rec);
                    }
                }
            }
            if s.decision_due(t) {
                let snap = s.take_decision(t);
                let obs = observation(s, &snap, bound, t);
                let a = agent.act(&obs.state, &obs.measurement, &d.goal.expect("learned flow"))?;
                s.set_rate(a.clamp(floor, bound), t);
            }
        }
        if let Some(bin) = opts.bin_ms {
            if (t + 1) % bin == 0 {
                for i in 0..flows.len() {
                    let e = &sim.endpoints()[i];
                    let acked = e.stats().acked_bytes;
                    let thr = (acked - bin_bytes[i]) as f64 * 8.0 / (bin as f64 * 1000.0);
                    bin_bytes[i] = acked;
                    let g = drivers[i].goal.map(|g| g.weights()).unwrap_or([0.0; 3]);
                    series.push(SeriesRow {
                        time_ms: t + 1,
                        flow: i,
                        thr_mbps: thr,
                        rate_mbps: e.rate_mbps(),
                        delay_ms: e.last_delay(),
                        g1: g[0],
                        g2: g[1],
                        g3: g[2],
                    });
                }
            }
        }
    }

    let end = opts.duration_ms;
    let results = flows
        .iter()
        .zip(drivers)
        .enumerate()
        .map(|(i, (f, d))| FlowResult {
            scheme: f.scheme.name(),
            summary: sim.endpoints()[i].summary(end),
            final_goal: d.goal,
            tuning_ticks: d.ticks,
            raw_g3_constant: d.raw_g3_constant,
            g3_constant: d.g3_constant,
            final_raw: d.tuner.as_ref().map(|t| t.raw()),
            tuning_log: d.log,
        })
        .collect();
    Ok(RunResult {
        flows: results,
        series,
        end_ms: end,
    })
}

pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut s = String::from(SeriesRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}
