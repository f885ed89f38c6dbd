use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::TraceSchedule;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub one_way_delay_ms: u64,
    pub queue_capacity: usize,
    pub stochastic_loss: f64,
    pub wraparound: bool,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queue_capacity < 1 {
            return Err(Error::Config("queue_capacity must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.stochastic_loss) {
            return Err(Error::Config(format!(
                "stochastic_loss {} outside [0, 1]",
                self.stochastic_loss
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub seq: u64,
    pub size: u32,
    pub sent_at: u64,
    pub flow_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    DroppedTail,
    DroppedStochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub packet: Packet,
    /// Trace opportunity that carried the packet off the queue.
    pub served_at: u64,
    /// Arrival at the receiver.
    pub delivered_at: u64,
}

impl Delivery {
    /// Time spent queued at the bottleneck.
    pub fn queueing_delay(&self, one_way_delay_ms: u64) -> u64 {
        let transit = self.delivered_at - self.packet.sent_at;
        assert!(
            transit >= one_way_delay_ms,
            "packet {} arrived {transit} ms after send with a {one_way_delay_ms} ms path",
            self.packet.seq
        );
        transit - one_way_delay_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkCounters {
    pub accepted: u64,
    pub dropped_tail: u64,
    pub dropped_stochastic: u64,
    pub served: u64,
    pub wasted_opportunities: u64,
}

/// Single drop-tail bottleneck served by a trace.
#[derive(Debug, Clone)]
pub struct Link {
    cfg: LinkConfig,
    trace: Arc<TraceSchedule>,
    queue: VecDeque<Packet>,
    /// Next millisecond whose opportunities have not been used yet.
    next: u64,
    rng: ChaCha8Rng,
    counters: LinkCounters,
}

impl Link {
    pub fn new(cfg: LinkConfig, trace: Arc<TraceSchedule>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Link {
            cfg,
            trace,
            queue: VecDeque::with_capacity(cfg.queue_capacity),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counters: LinkCounters::default(),
        })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn trace(&self) -> &TraceSchedule {
        &self.trace
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn counters(&self) -> LinkCounters {
        self.counters
    }

    /// One uniform draw decides the stochastic drop; survivors are tail-dropped
    /// when the queue is full.
    pub fn enqueue(&mut self, pkt: Packet, _now: u64) -> EnqueueOutcome {
        assert!(
            pkt.size as usize <= self.trace.mtu(),
            "packet of {} bytes exceeds the {} byte MTU",
            pkt.size,
            self.trace.mtu()
        );
        let u: f64 = self.rng.random();
        if u < self.cfg.stochastic_loss {
            self.counters.dropped_stochastic += 1;
            return EnqueueOutcome::DroppedStochastic;
        }
        if self.queue.len() >= self.cfg.queue_capacity {
            self.counters.dropped_tail += 1;
            return EnqueueOutcome::DroppedTail;
        }
        self.queue.push_back(pkt);
        self.counters.accepted += 1;
        EnqueueOutcome::Accepted
    }

    /// Serves every opportunity up to and including `to`, appending deliveries
    /// to `out` in service order. Unused opportunities are lost.
    pub fn advance(&mut self, to: u64, out: &mut Vec<Delivery>) {
        if to < self.next {
            assert!(to + 1 == self.next, "link clock moved backwards to {to}");
            return;
        }
        let wrap = self.cfg.wraparound;
        for t in self.next..=to {
            let n = self.trace.opportunities_at(t, wrap);
            for _ in 0..n {
                match self.queue.pop_front() {
                    Some(packet) => {
                        self.counters.served += 1;
                        out.push(Delivery {
                            packet,
                            served_at: t,
                            delivered_at: t + self.cfg.one_way_delay_ms,
                        });
                    }
                    None => self.counters.wasted_opportunities += 1,
                }
            }
        }
        self.next = to + 1;
    }
}

#[cfg(test)]
mod tests {
    use super::super::trace::{parse_trace, DEFAULT_MTU};
    use super::*;

    fn pkt(seq: u64, at: u64) -> Packet {
        Packet {
            seq,
            size: 1500,
            sent_at: at,
            flow_id: 0,
        }
    }

    fn link(trace: &str, cap: usize, loss: f64, wrap: bool) -> Link {
        let cfg = LinkConfig {
            one_way_delay_ms: 30,
            queue_capacity: cap,
            stochastic_loss: loss,
            wraparound: wrap,
        };
        Link::new(cfg, Arc::new(parse_trace(trace, DEFAULT_MTU).unwrap()), 1).unwrap()
    }

    #[test]
    fn enqueue_outcomes() {
        let mut l = link("1\n", 130, 0.0, false);
        assert_eq!(l.enqueue(pkt(0, 0), 0), EnqueueOutcome::Accepted);
        assert_eq!(l.queue_len(), 1);
        for s in 1..130 {
            assert_eq!(l.enqueue(pkt(s, 0), 0), EnqueueOutcome::Accepted);
        }
        assert_eq!(l.enqueue(pkt(130, 0), 0), EnqueueOutcome::DroppedTail);
        assert_eq!(l.queue_len(), 130);

        let mut l = link("1\n", 10, 1.0, false);
        for s in 0..50 {
            assert_eq!(l.enqueue(pkt(s, 0), 0), EnqueueOutcome::DroppedStochastic);
        }
    }

    #[test]
    fn advance_serves_one_head_packet_per_opportunity() {
        let mut l = link("10\n11\n", 10, 0.0, false);
        for s in 0..3 {
            l.enqueue(pkt(s, 0), 0);
        }
        let mut out = Vec::new();
        l.advance(20, &mut out);
        let times: Vec<(u64, u64)> = out.iter().map(|d| (d.packet.seq, d.delivered_at)).collect();
        assert_eq!(times, vec![(0, 40), (1, 41)]);
        assert_eq!(l.queue_len(), 1);
    }

    #[test]
    fn idle_opportunities_are_not_banked() {
        let mut l = link("1\n2\n3\n", 10, 0.0, false);
        let mut out = Vec::new();
        l.advance(2, &mut out);
        l.enqueue(pkt(0, 2), 2);
        l.enqueue(pkt(1, 2), 2);
        l.advance(10, &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!(l.counters().wasted_opportunities, 2);
    }

    #[test]
    fn wraparound_replays_the_trace() {
        let mut l = link("1\n2\n3\n", 10, 0.0, true);
        for s in 0..8 {
            l.enqueue(pkt(s, 0), 0);
        }
        let mut out = Vec::new();
        l.advance(6, &mut out);
        assert_eq!(out.len(), 6);
        let served: Vec<u64> = out.iter().map(|d| d.served_at).collect();
        assert_eq!(served, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn queueing_delay_counts_service_slots() {
        let trace: String = (1..=100).map(|t| format!("{t}\n")).collect();
        let mut l = link(&trace, 100, 0.0, false);
        let mut out = Vec::new();
        for s in 0..13 {
            l.enqueue(pkt(s, 0), 0);
        }
        l.advance(100, &mut out);
        // behind 12 packets on a one-per-ms schedule
        assert_eq!(out[12].queueing_delay(30), 13);
        assert_eq!(out[0].queueing_delay(30), 1);
    }
}
