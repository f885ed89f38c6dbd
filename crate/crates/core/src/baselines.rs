//! Reference congestion controls: Reno-style AIMD and an open-loop constant
//! rate.

use crate::transport::{Controller, RateControl, Sender, SenderConfig, SenderStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AimdState {
    pub cwnd: f64,
    pub ssthresh: f64,
    /// Losses below this sequence number belong to an episode that already
    /// halved the window.
    recovery_until: u64,
}

impl Default for AimdState {
    fn default() -> Self {
        AimdState::new(10.0)
    }
}

impl AimdState {
    pub fn new(initial_cwnd: f64) -> Self {
        AimdState {
            cwnd: initial_cwnd.max(1.0),
            ssthresh: f64::INFINITY,
            recovery_until: 0,
        }
    }

    /// Slow start below `ssthresh`, else `+1/cwnd`.
    pub fn aimd_on_ack(&mut self) {
        if self.cwnd < self.ssthresh {
            self.cwnd += 1.0;
        } else {
            self.cwnd += 1.0 / self.cwnd;
        }
    }

    /// Halves the window, never below one packet.
    pub fn aimd_on_loss(&mut self) {
        self.cwnd = (self.cwnd * 0.5).max(1.0);
        self.ssthresh = self.cwnd;
    }
}

impl Controller for AimdState {
    fn cwnd(&self, _stats: &SenderStats) -> f64 {
        self.cwnd
    }

    fn pacing_interval(&self, _mtu: u32) -> Option<f64> {
        None
    }

    fn rate_mbps(&self, stats: &SenderStats, mtu: u32) -> f64 {
        match stats.ewma_rtt {
            Some(rtt) if rtt > 0.0 => self.cwnd * mtu as f64 * 8.0 / (rtt * 1000.0),
            _ => 0.0,
        }
    }

    fn on_ack(&mut self, _now: u64) {
        self.aimd_on_ack();
    }

    /// One decrease per window of data.
    fn on_loss(&mut self, seq: u64, next_seq: u64) {
        if seq >= self.recovery_until {
            self.aimd_on_loss();
            self.recovery_until = next_seq;
        }
    }
}

pub fn aimd_sender(flow_id: u32, cfg: SenderConfig) -> Sender<AimdState> {
    Sender::new(flow_id, cfg, AimdState::default())
}

/// Fixed pacing at `rate_mbps` whatever the feedback.
pub fn constant_rate(flow_id: u32, cfg: SenderConfig, rate_mbps: f64) -> Sender<RateControl> {
    assert!(rate_mbps >= 0.0, "negative rate {rate_mbps}");
    Sender::new(flow_id, cfg, RateControl::new(rate_mbps))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::netsim::{Link, LinkConfig, Simulation, TraceSchedule, DEFAULT_MTU};

    fn steady_link(cap: usize) -> Link {
        let cfg = LinkConfig {
            one_way_delay_ms: 30,
            queue_capacity: cap,
            stochastic_loss: 0.0,
            wraparound: true,
        };
        Link::new(cfg, Arc::new(TraceSchedule::constant(12.0, 1000, DEFAULT_MTU).unwrap()), 0).unwrap()
    }

    #[test]
    fn halving_and_floor() {
        let mut a = AimdState::new(10.0);
        a.aimd_on_loss();
        assert_eq!(a.cwnd, 5.0);
        let mut a = AimdState::new(1.0);
        for _ in 0..5 {
            a.aimd_on_loss();
            assert!(a.cwnd >= 1.0);
        }
    }

    #[test]
    fn additive_increase_is_one_per_window() {
        let mut a = AimdState::new(10.0);
        a.ssthresh = 5.0;
        for _ in 0..10 {
            a.aimd_on_ack();
        }
        // 10 ACKs of +1/cwnd with cwnd drifting from 10 upward
        assert!((a.cwnd - 11.0).abs() < 0.05, "{}", a.cwnd);
        let mut s = AimdState::new(2.0);
        s.aimd_on_ack();
        s.aimd_on_ack();
        assert_eq!(s.cwnd, 4.0);
    }

    #[test]
    fn one_decrease_per_recovery_window() {
        let mut a = AimdState::new(40.0);
        a.on_loss(5, 50);
        a.on_loss(7, 52);
        assert_eq!(a.cwnd, 20.0);
        a.on_loss(51, 90);
        assert_eq!(a.cwnd, 10.0);
    }

    fn queue_trace(rate: f64, ms: u64) -> (Vec<usize>, u64) {
        let mut sim = Simulation::new(steady_link(60), vec![constant_rate(0, SenderConfig::default(), rate)]);
        let mut q = Vec::new();
        for _ in 0..ms {
            sim.step().unwrap();
            q.push(sim.link().queue_len());
        }
        (q, sim.link().counters().dropped_tail)
    }

    #[test]
    fn constant_rate_queue_behaviour() {
        let (q, drops) = queue_trace(12.0, 5000);
        assert!(q.iter().all(|&l| l <= 1), "max {}", q.iter().max().unwrap());
        assert_eq!(drops, 0);

        let (q, drops) = queue_trace(24.0, 5000);
        assert!(q[150] > q[100]);
        // sampled after the millisecond's service, so one below capacity
        assert_eq!(*q.iter().max().unwrap(), 59);
        assert!(drops > 0);

        let (q, _) = queue_trace(0.0, 1000);
        assert!(q.iter().all(|&l| l == 0));
    }

    #[test]
    fn aimd_sawtooth_on_steady_link() {
        let mut sim = Simulation::new(steady_link(60), vec![aimd_sender(0, SenderConfig::default())]);
        let mut cw = Vec::new();
        for t in 0..120_000u64 {
            sim.step().unwrap();
            if t >= 40_000 {
                cw.push(sim.endpoints()[0].controller().cwnd);
            }
        }
        let max = cw.iter().cloned().fold(f64::MIN, f64::max);
        let min = cw.iter().cloned().fold(f64::MAX, f64::min);
        let ratio = max / min;
        assert!((1.8..=2.2).contains(&ratio), "max {max} min {min}");
    }
}
