use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::Write;

use super::link::{Delivery, EnqueueOutcome, Link, Packet};
use crate::error::Result;

/// Acknowledgement returned to the sender for one delivered packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub flow_id: u32,
    pub seq: u64,
    pub size: u32,
    pub sent_at: u64,
    pub received_at: u64,
}

/// A sending host attached to the bottleneck. The receiving side is built in:
/// every delivered packet is acknowledged over a lossless return path.
pub trait Endpoint {
    /// Appends the packets to hand to the link at `now`.
    fn poll_transmit(&mut self, now: u64, out: &mut Vec<Packet>);

    fn on_ack(&mut self, ack: &Ack, now: u64) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Enqueue,
    DropTail,
    DropStochastic,
    Deliver,
    Ack,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Enqueue => "enqueue",
            EventKind::DropTail => "drop_tail",
            EventKind::DropStochastic => "drop_stochastic",
            EventKind::Deliver => "deliver",
            EventKind::Ack => "ack",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time_ms: u64,
    pub flow_id: u32,
    pub kind: EventKind,
    pub seq: u64,
    /// Bottleneck queue length right after the event.
    pub queue_len: usize,
    /// Set on deliveries only.
    pub qdelay_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub const HEADER: &'static str = "time_ms,flow_id,event,seq,queue_len,qdelay_ms";

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.events.len() * 32 + 64);
        s.push_str(Self::HEADER);
        s.push('\n');
        for e in &self.events {
            let _ = write!(
                s,
                "{},{},{},{},{},",
                e.time_ms,
                e.flow_id,
                e.kind.as_str(),
                e.seq,
                e.queue_len
            );
            if let Some(q) = e.qdelay_ms {
                let _ = write!(s, "{q}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// Packet accounting across the whole simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Conservation {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_tail: u64,
    pub dropped_stochastic: u64,
    pub queued: u64,
    pub propagating: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.sent == self.delivered + self.dropped_tail + self.dropped_stochastic + self.queued + self.propagating
    }
}

/// Millisecond-stepped event loop over one bottleneck.
///
/// Within a millisecond: arrivals at receivers, then ACK arrivals at senders,
/// then sends in endpoint order, then link service. A packet sent into an idle
/// queue at an opportunity leaves in the same millisecond.
pub struct Simulation<E> {
    link: Link,
    endpoints: Vec<E>,
    next: u64,
    to_receiver: VecDeque<Delivery>,
    to_sender: VecDeque<Ack>,
    sent: u64,
    delivered: u64,
    log: Option<EventLog>,
    tx: Vec<Packet>,
    rx: Vec<Delivery>,
}

impl<E: Endpoint> Simulation<E> {
    /// Endpoint `i` is flow `i`.
    pub fn new(link: Link, endpoints: Vec<E>) -> Self {
        Simulation {
            link,
            endpoints,
            next: 0,
            to_receiver: VecDeque::new(),
            to_sender: VecDeque::new(),
            sent: 0,
            delivered: 0,
            log: None,
            tx: Vec::new(),
            rx: Vec::new(),
        }
    }

    pub fn with_log(mut self) -> Self {
        self.log = Some(EventLog::default());
        self
    }

    /// The next millisecond to be processed.
    pub fn now(&self) -> u64 {
        self.next
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn endpoints(&self) -> &[E] {
        &self.endpoints
    }

    pub fn endpoints_mut(&mut self) -> &mut [E] {
        &mut self.endpoints
    }

    pub fn endpoint_mut(&mut self, i: usize) -> &mut E {
        &mut self.endpoints[i]
    }

    pub fn log(&self) -> Option<&EventLog> {
        self.log.as_ref()
    }

    pub fn take_log(&mut self) -> Option<EventLog> {
        self.log.take()
    }

    pub fn conservation(&self) -> Conservation {
        let c = self.link.counters();
        Conservation {
            sent: self.sent,
            delivered: self.delivered,
            dropped_tail: c.dropped_tail,
            dropped_stochastic: c.dropped_stochastic,
            queued: self.link.queue_len() as u64,
            propagating: self.to_receiver.len() as u64,
        }
    }

    fn record(&mut self, time_ms: u64, flow_id: u32, kind: EventKind, seq: u64, qdelay_ms: Option<u64>) {
        if let Some(log) = self.log.as_mut() {
            log.events.push(Event {
                time_ms,
                flow_id,
                kind,
                seq,
                queue_len: self.link.queue_len(),
                qdelay_ms,
            });
        }
    }

    /// Processes one millisecond and returns its timestamp.
    pub fn step(&mut self) -> Result<u64> {
        let t = self.next;
        let owd = self.link.config().one_way_delay_ms;

        while self.to_receiver.front().is_some_and(|d| d.delivered_at <= t) {
            let d = self.to_receiver.pop_front().unwrap();
            self.delivered += 1;
            let p = d.packet;
            self.record(d.delivered_at, p.flow_id, EventKind::Deliver, p.seq, Some(d.queueing_delay(owd)));
            self.to_sender.push_back(Ack {
                flow_id: p.flow_id,
                seq: p.seq,
                size: p.size,
                sent_at: p.sent_at,
                received_at: d.delivered_at + owd,
            });
        }

        while self.to_sender.front().is_some_and(|a| a.received_at <= t) {
            let ack = self.to_sender.pop_front().unwrap();
            self.record(t, ack.flow_id, EventKind::Ack, ack.seq, None);
            self.endpoints[ack.flow_id as usize].on_ack(&ack, t)?;
        }

        let mut tx = std::mem::take(&mut self.tx);
        for i in 0..self.endpoints.len() {
            tx.clear();
            self.endpoints[i].poll_transmit(t, &mut tx);
            for &p in &tx {
                debug_assert_eq!(p.flow_id as usize, i);
                self.sent += 1;
                let kind = match self.link.enqueue(p, t) {
                    EnqueueOutcome::Accepted => EventKind::Enqueue,
                    EnqueueOutcome::DroppedTail => EventKind::DropTail,
                    EnqueueOutcome::DroppedStochastic => EventKind::DropStochastic,
                };
                self.record(t, p.flow_id, kind, p.seq, None);
            }
        }
        self.tx = tx;

        let mut rx = std::mem::take(&mut self.rx);
        rx.clear();
        self.link.advance(t, &mut rx);
        self.to_receiver.extend(rx.iter().copied());
        self.rx = rx;

        self.next = t + 1;
        Ok(t)
    }

    /// Processes every millisecond before `until`.
    pub fn run_until(&mut self, until: u64) -> Result<()> {
        while self.next < until {
            self.step()?;
        }
        Ok(())
    }
}

/// Runs `endpoints` over `link` for `until` ms and returns the event log.
pub fn run_event_loop<E: Endpoint>(link: Link, endpoints: Vec<E>, until: u64) -> Result<(EventLog, Simulation<E>)> {
    let mut sim = Simulation::new(link, endpoints).with_log();
    sim.run_until(until)?;
    let log = sim.take_log().unwrap_or_default();
    Ok((log, sim))
}
