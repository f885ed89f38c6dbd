use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{LinkSpec, Simulation};
use crate::objective::{Measurement, PhysicalMeasurement};
use crate::transport::{DecisionSnapshot, RateControl, Sender, SenderConfig};

/// What the learner sees at a decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Scaled `[history_len, 4]` state, row-major.
    pub state: Vec<f64>,
    pub measurement: Measurement,
    pub physical: PhysicalMeasurement,
    pub time_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub done: bool,
}

/// Decision-step interface the training loop drives.
pub trait Environment {
    fn reset(&mut self) -> Result<Observation>;

    /// Applies `action_mbps` until the next decision point.
    fn step(&mut self, action_mbps: f64) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub link: LinkSpec,
    pub sender: SenderConfig,
    pub bound: f64,
    /// Commanded rates are raised to at least this fraction of `bound`, so a
    /// zero action cannot stop the ACK clock.
    pub min_rate_fraction: f64,
    /// Forces a decision when no ACK arrives for this long.
    pub stall_ms: u64,
    /// Keep the throughput maximum across resets, as a host would across
    /// connections on the same path.
    pub carry_throughput_max: bool,
}

impl EnvConfig {
    pub fn new(link: LinkSpec, bound: f64) -> Self {
        EnvConfig {
            link,
            sender: SenderConfig::default(),
            bound,
            min_rate_fraction: 0.01,
            stall_ms: 2000,
            carry_throughput_max: true,
        }
    }

    pub fn min_rate(&self) -> f64 {
        self.min_rate_fraction * self.bound
    }
}

pub(crate) fn observation(sender: &Sender<RateControl>, snap: &DecisionSnapshot, bound: f64, now: u64) -> Observation {
    Observation {
        state: sender.history().to_input(bound, sender.stats().min_rtt_or_zero()),
        measurement: snap.measurement,
        physical: snap.physical,
        time_ms: now,
    }
}

/// One rate-controlled flow over a freshly built link per episode.
pub struct LinkEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    sim: Option<Simulation<Sender<RateControl>>>,
    last_decision: u64,
    throughput_max: f64,
}

impl LinkEnv {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.link.link_config().validate()?;
        if !(cfg.bound > 0.0) {
            return Err(Error::Config(format!("bound must be positive, got {}", cfg.bound)));
        }
        Ok(LinkEnv {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sim: None,
            last_decision: 0,
            throughput_max: 0.0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn sender(&self) -> Option<&Sender<RateControl>> {
        self.sim.as_ref().map(|s| &s.endpoints()[0])
    }

    pub fn sender_mut(&mut self) -> Option<&mut Sender<RateControl>> {
        self.sim.as_mut().map(|s| s.endpoint_mut(0))
    }

    pub fn throughput_max(&self) -> f64 {
        self.throughput_max
    }

    fn sim_mut(&mut self) -> Result<&mut Simulation<Sender<RateControl>>> {
        self.sim
            .as_mut()
            .ok_or_else(|| Error::Config("environment stepped before reset".into()))
    }
}

impl Environment for LinkEnv {
    fn reset(&mut self) -> Result<Observation> {
        if let Some(sim) = &self.sim {
            self.throughput_max = self.throughput_max.max(sim.endpoints()[0].stats().max_throughput);
        }
        let link = self.cfg.link.build(self.rng.random())?;
        let mut sender = Sender::new(0, self.cfg.sender, RateControl::new(0.0));
        if self.cfg.carry_throughput_max {
            sender.set_throughput_max(self.throughput_max);
        }
        let snap = sender.take_decision(0);
        let obs = observation(&sender, &snap, self.cfg.bound, 0);
        self.sim = Some(Simulation::new(link, vec![sender]));
        self.last_decision = 0;
        Ok(obs)
    }

    fn step(&mut self, action_mbps: f64) -> Result<StepOutcome> {
        let rate = action_mbps.clamp(self.cfg.min_rate(), self.cfg.bound);
        let (bound, stall, from) = (self.cfg.bound, self.cfg.stall_ms, self.last_decision);
        let sim = self.sim_mut()?;
        sim.endpoint_mut(0).set_rate(rate, from);
        loop {
            let t = sim.step()?;
            let s = sim.endpoint_mut(0);
            if s.decision_due(t) || t - from >= stall {
                let snap = s.take_decision(t);
                let obs = observation(s, &snap, bound, t);
                self.last_decision = t;
                return Ok(StepOutcome { obs, done: false });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> LinkEnv {
        LinkEnv::new(EnvConfig::new(LinkSpec::constant(12.0, 30, 60), 24.0), 7).unwrap()
    }

    #[test]
    fn decisions_advance_by_half_rtt_or_more() {
        let mut e = env();
        let o = e.reset().unwrap();
        assert_eq!(o.time_ms, 0);
        assert!(o.state.iter().all(|x| *x == 0.0));
        let mut t = 0;
        for i in 0..50 {
            let s = e.step(6.0).unwrap();
            if i > 0 {
                assert!(s.obs.time_ms - t >= 30);
            }
            t = s.obs.time_ms;
        }
        let (m, p) = e.sender().unwrap().last_measurement();
        assert!((p.throughput_mbps - 6.0).abs() < 0.5, "{p:?}");
        assert!(m.delay_ratio < 1.05);
    }

    #[test]
    fn zero_action_keeps_the_ack_clock() {
        let mut e = env();
        e.reset().unwrap();
        let mut last = 0;
        for _ in 0..30 {
            last = e.step(0.0).unwrap().obs.time_ms;
        }
        // at the 0.24 Mbps floor one packet leaves every 50 ms
        assert!(last < 30 * 200, "{last}");
    }

    #[test]
    fn throughput_max_survives_reset() {
        let mut e = env();
        e.reset().unwrap();
        for _ in 0..100 {
            e.step(20.0).unwrap();
        }
        e.reset().unwrap();
        assert!(e.throughput_max() > 11.0);
        assert!(e.sender().unwrap().stats().max_throughput > 11.0);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut e = LinkEnv::new(
                EnvConfig::new(
                    LinkSpec {
                        stochastic_loss: 0.02,
                        ..LinkSpec::constant(12.0, 30, 60)
                    },
                    24.0,
                ),
                3,
            )
            .unwrap();
            e.reset().unwrap();
            (0..40).map(|i| e.step(4.0 + (i % 7) as f64 * 3.0).unwrap().obs).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
