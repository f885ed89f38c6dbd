use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::history::{percentile, StateHistory};
use crate::error::{Error, Result};
use crate::netsim::{Ack, Endpoint, Packet};
use crate::objective::{Measurement, PhysicalMeasurement, StateSample};

/// Decides how much a sender may put in flight and how fast.
pub trait Controller {
    /// Cap on unacknowledged packets.
    fn cwnd(&self, stats: &SenderStats) -> f64;

    /// Milliseconds between packets, `None` for purely window-limited sending,
    /// `Some(f64::INFINITY)` to stop.
    fn pacing_interval(&self, mtu: u32) -> Option<f64>;

    /// Sending rate in Mbps, for state and logs.
    fn rate_mbps(&self, stats: &SenderStats, mtu: u32) -> f64;

    fn on_ack(&mut self, _now: u64) {}

    /// `next_seq` is the first sequence number not yet sent.
    fn on_loss(&mut self, _seq: u64, _next_seq: u64) {}
}

/// Externally commanded rate, with the window capped at one rate-delay
/// product of the smoothed RTT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateControl {
    pub rate_mbps: f64,
    pub initial_cwnd: f64,
}

impl RateControl {
    pub fn new(rate_mbps: f64) -> Self {
        RateControl {
            rate_mbps,
            initial_cwnd: 10.0,
        }
    }
}

pub fn packet_interval_ms(rate_mbps: f64, mtu: u32) -> f64 {
    if rate_mbps > 0.0 {
        mtu as f64 * 8.0 / (rate_mbps * 1000.0)
    } else {
        f64::INFINITY
    }
}

impl Controller for RateControl {
    fn cwnd(&self, stats: &SenderStats) -> f64 {
        match stats.ewma_rtt {
            Some(rtt) => rate_window(self.rate_mbps, rtt, stats.mtu),
            None => self.initial_cwnd,
        }
    }

    fn pacing_interval(&self, mtu: u32) -> Option<f64> {
        Some(packet_interval_ms(self.rate_mbps, mtu))
    }

    fn rate_mbps(&self, _stats: &SenderStats, _mtu: u32) -> f64 {
        self.rate_mbps
    }
}

/// `rate * rtt / (mtu * 8)` packets, at least one.
pub fn rate_window(rate_mbps: f64, rtt_ms: f64, mtu: u32) -> f64 {
    (rate_mbps * 1000.0 * rtt_ms / (mtu as f64 * 8.0)).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SenderConfig {
    pub mtu: u32,
    pub ewma_alpha: f64,
    /// Later ACKs that declare an outstanding packet lost.
    pub reorder_threshold: u32,
    /// Timeout in multiples of the smoothed RTT.
    pub rto_factor: f64,
    pub initial_rto_ms: f64,
    /// Decision spacing as a fraction of the minimum RTT.
    pub decision_fraction: f64,
    /// Measurement and tuning windows, in smoothed RTTs.
    pub window_rtts: f64,
    pub history_len: usize,
}

impl Default for SenderConfig {
    fn default() -> Self {
        SenderConfig {
            mtu: 1500,
            ewma_alpha: 0.125,
            reorder_threshold: 3,
            rto_factor: 2.0,
            initial_rto_ms: 1000.0,
            decision_fraction: 0.5,
            window_rtts: 4.0,
            history_len: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SenderStats {
    pub mtu: u32,
    pub ewma_rtt: Option<f64>,
    /// `INFINITY` until the first sample.
    pub min_rtt: f64,
    /// Running maximum of window throughput, Mbps.
    pub max_throughput: f64,
    pub sent: u64,
    pub acked: u64,
    pub lost: u64,
    pub acked_bytes: u64,
    pub interval_ack_count: u64,
    pub interval_rtt_samples: Vec<f64>,
    interval_sent_bytes: u64,
}

impl SenderStats {
    fn new(mtu: u32) -> Self {
        SenderStats {
            mtu,
            ewma_rtt: None,
            min_rtt: f64::INFINITY,
            max_throughput: 0.0,
            sent: 0,
            acked: 0,
            lost: 0,
            acked_bytes: 0,
            interval_ack_count: 0,
            interval_rtt_samples: Vec::new(),
            interval_sent_bytes: 0,
        }
    }

    pub fn min_rtt_or_zero(&self) -> f64 {
        if self.min_rtt.is_finite() {
            self.min_rtt
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outstanding {
    seq: u64,
    sent_at: u64,
    size: u32,
    later_acks: u32,
}

/// Aggregates over a span of the run, used for per-run summaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub from_ms: u64,
    pub acked_bytes: u64,
    pub sent: u64,
    pub lost: u64,
    pub rtts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub throughput_mbps: f64,
    pub p95_rtt_ms: f64,
    pub p95_qdelay_ms: f64,
    pub mean_rtt_ms: f64,
    pub loss_rate: f64,
}

impl RunSummary {
    pub fn physical(&self) -> PhysicalMeasurement {
        PhysicalMeasurement {
            throughput_mbps: self.throughput_mbps,
            delay_ms: self.p95_rtt_ms,
            loss_rate: self.loss_rate,
        }
    }
}

/// Everything produced at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSnapshot {
    pub state: StateSample,
    pub measurement: Measurement,
    pub physical: PhysicalMeasurement,
}

/// Paced, window-capped sender with RTT, loss and throughput estimators.
/// The payload is never retransmitted; loss only feeds the statistics.
#[derive(Debug, Clone)]
pub struct Sender<C> {
    pub flow_id: u32,
    cfg: SenderConfig,
    controller: C,
    stats: SenderStats,
    start_ms: u64,
    stop_ms: Option<u64>,
    next_seq: u64,
    next_send: f64,
    outstanding: VecDeque<Outstanding>,
    /// Recently declared losses, kept so a late ACK is not an error.
    presumed_lost: BTreeSet<u64>,
    window_acks: VecDeque<(u64, f64, u32)>,
    window_sends: VecDeque<u64>,
    window_losses: VecDeque<u64>,
    history: StateHistory,
    last_decision: Option<u64>,
    ack_since_decision: bool,
    last_tuning: Option<u64>,
    last_measurement: Measurement,
    last_physical: PhysicalMeasurement,
    last_interval_delay: f64,
    record: Option<RunRecord>,
}

const LOST_SET_LIMIT: usize = 1 << 16;

impl<C: Controller> Sender<C> {
    pub fn new(flow_id: u32, cfg: SenderConfig, controller: C) -> Self {
        Sender {
            flow_id,
            cfg,
            controller,
            stats: SenderStats::new(cfg.mtu),
            start_ms: 0,
            stop_ms: None,
            next_seq: 0,
            next_send: 0.0,
            outstanding: VecDeque::new(),
            presumed_lost: BTreeSet::new(),
            window_acks: VecDeque::new(),
            window_sends: VecDeque::new(),
            window_losses: VecDeque::new(),
            history: StateHistory::new(cfg.history_len),
            last_decision: None,
            ack_since_decision: false,
            last_tuning: None,
            last_measurement: Measurement {
                thr_norm: 0.0,
                delay_ratio: 1.0,
                loss_rate: 0.0,
            },
            last_physical: PhysicalMeasurement::default(),
            last_interval_delay: 0.0,
            record: None,
        }
    }

    /// Active during `[start, stop)`.
    pub fn with_schedule(mut self, start_ms: u64, stop_ms: Option<u64>) -> Self {
        self.start_ms = start_ms;
        self.stop_ms = stop_ms;
        self.next_send = start_ms as f64;
        self
    }

    pub fn config(&self) -> &SenderConfig {
        &self.cfg
    }

    pub fn controller(&self) -> &C {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut C {
        &mut self.controller
    }

    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }

    pub fn history(&self) -> &StateHistory {
        &self.history
    }

    pub fn in_flight(&self) -> usize {
        self.outstanding.len()
    }

    pub fn cwnd(&self) -> f64 {
        self.controller.cwnd(&self.stats)
    }

    pub fn rate_mbps(&self) -> f64 {
        self.controller.rate_mbps(&self.stats, self.cfg.mtu)
    }

    pub fn start_ms(&self) -> u64 {
        self.start_ms
    }

    pub fn is_active(&self, now: u64) -> bool {
        now >= self.start_ms && self.stop_ms.is_none_or(|s| now < s)
    }

    /// Seeds the running throughput maximum, e.g. with what earlier
    /// connections on the same path reached.
    pub fn set_throughput_max(&mut self, mbps: f64) {
        self.stats.max_throughput = self.stats.max_throughput.max(mbps);
    }

    /// Restarts pacing after a rate change: the next packet leaves one new
    /// interval after `now`.
    pub fn reset_pacing(&mut self, now: u64) {
        if let Some(iv) = self.controller.pacing_interval(self.cfg.mtu) {
            self.next_send = now as f64 + iv;
        }
    }

    pub fn last_measurement(&self) -> (Measurement, PhysicalMeasurement) {
        (self.last_measurement, self.last_physical)
    }

    /// Starts accumulating a [`RunRecord`] from `now`.
    pub fn start_record(&mut self, now: u64) {
        self.record = Some(RunRecord {
            from_ms: now,
            ..Default::default()
        });
    }

    pub fn record(&self) -> Option<&RunRecord> {
        self.record.as_ref()
    }

    pub fn summary(&self, now: u64) -> RunSummary {
        let Some(r) = &self.record else {
            return RunSummary::default();
        };
        let span = now.saturating_sub(r.from_ms).max(1) as f64;
        let min = self.stats.min_rtt_or_zero();
        let p95 = percentile(&r.rtts, 0.95).unwrap_or(min);
        let mean = if r.rtts.is_empty() {
            min
        } else {
            r.rtts.iter().sum::<f64>() / r.rtts.len() as f64
        };
        RunSummary {
            throughput_mbps: r.acked_bytes as f64 * 8.0 / (span * 1000.0),
            p95_rtt_ms: p95,
            p95_qdelay_ms: (p95 - min).max(0.0),
            mean_rtt_ms: mean,
            loss_rate: if r.sent > 0 {
                (r.lost as f64 / r.sent as f64).min(1.0)
            } else {
                0.0
            },
        }
    }

    fn rto(&self) -> f64 {
        match self.stats.ewma_rtt {
            Some(e) => self.cfg.rto_factor * e,
            None => self.cfg.initial_rto_ms,
        }
    }

    fn window_len(&self) -> f64 {
        match self.stats.ewma_rtt {
            Some(e) => self.cfg.window_rtts * e,
            None => self.cfg.initial_rto_ms,
        }
    }

    fn prune_windows(&mut self, now: u64) {
        let cutoff = now as f64 - self.window_len();
        while self.window_acks.front().is_some_and(|a| (a.0 as f64) < cutoff) {
            self.window_acks.pop_front();
        }
        while self.window_sends.front().is_some_and(|t| (*t as f64) < cutoff) {
            self.window_sends.pop_front();
        }
        while self.window_losses.front().is_some_and(|t| (*t as f64) < cutoff) {
            self.window_losses.pop_front();
        }
    }

    fn declare_lost(&mut self, o: Outstanding, now: u64) {
        self.stats.lost += 1;
        self.window_losses.push_back(now);
        if let Some(r) = self.record.as_mut() {
            r.lost += 1;
        }
        self.presumed_lost.insert(o.seq);
        if self.presumed_lost.len() > LOST_SET_LIMIT {
            self.presumed_lost.pop_first();
        }
        self.controller.on_loss(o.seq, self.next_seq);
    }

    fn check_timeouts(&mut self, now: u64) {
        let rto = self.rto();
        while let Some(front) = self.outstanding.front() {
            if (now as f64) - (front.sent_at as f64) < rto {
                break;
            }
            let o = self.outstanding.pop_front().unwrap();
            self.declare_lost(o, now);
        }
    }

    fn sample_rtt(&mut self, rtt: f64, size: u32, now: u64) {
        let a = self.cfg.ewma_alpha;
        self.stats.ewma_rtt = Some(match self.stats.ewma_rtt {
            Some(e) => a * rtt + (1.0 - a) * e,
            None => rtt,
        });
        self.stats.min_rtt = self.stats.min_rtt.min(rtt);
        self.stats.acked += 1;
        self.stats.acked_bytes += size as u64;
        self.stats.interval_ack_count += 1;
        self.stats.interval_rtt_samples.push(rtt);
        self.window_acks.push_back((now, rtt, size));
        if let Some(r) = self.record.as_mut() {
            r.acked_bytes += size as u64;
            r.rtts.push(rtt);
        }
        self.ack_since_decision = true;
    }

    /// Processes one ACK; see [`Endpoint::on_ack`].
    pub fn handle_ack(&mut self, ack: &Ack, now: u64) -> Result<()> {
        if ack.flow_id != self.flow_id || ack.seq >= self.next_seq {
            return Err(Error::UnknownSeq {
                flow: ack.flow_id,
                seq: ack.seq,
            });
        }
        let rtt = (now - ack.sent_at) as f64;
        match self.outstanding.binary_search_by_key(&ack.seq, |o| o.seq) {
            Ok(idx) => {
                self.outstanding.remove(idx);
                for o in self.outstanding.iter_mut().take(idx) {
                    o.later_acks += 1;
                }
                while self
                    .outstanding
                    .front()
                    .is_some_and(|o| o.later_acks >= self.cfg.reorder_threshold)
                {
                    let o = self.outstanding.pop_front().unwrap();
                    self.declare_lost(o, now);
                }
                self.sample_rtt(rtt, ack.size, now);
                self.controller.on_ack(now);
            }
            Err(_) => {
                if !self.presumed_lost.remove(&ack.seq) {
                    return Err(Error::UnknownSeq {
                        flow: ack.flow_id,
                        seq: ack.seq,
                    });
                }
                // Declared lost too early; the data did arrive.
                self.sample_rtt(rtt, ack.size, now);
            }
        }
        Ok(())
    }

    /// See [`Endpoint::poll_transmit`].
    pub fn transmit(&mut self, now: u64, out: &mut Vec<Packet>) {
        if !self.is_active(now) {
            return;
        }
        self.check_timeouts(now);
        let cwnd = self.controller.cwnd(&self.stats);
        let pacing = self.controller.pacing_interval(self.cfg.mtu);
        if let Some(iv) = pacing {
            if !iv.is_finite() {
                return;
            }
            // No more than a millisecond of banked credit after a stall.
            if self.next_send < now as f64 - 1.0 {
                self.next_send = now as f64;
            }
        }
        loop {
            if (self.outstanding.len() + 1) as f64 > cwnd + 1e-9 {
                break;
            }
            if let Some(iv) = pacing {
                // A packet never leaves before its slot; slots round up.
                if self.next_send > now as f64 {
                    break;
                }
                self.next_send += iv;
            }
            let seq = self.next_seq;
            self.next_seq += 1;
            self.outstanding.push_back(Outstanding {
                seq,
                sent_at: now,
                size: self.cfg.mtu,
                later_acks: 0,
            });
            self.stats.sent += 1;
            self.stats.interval_sent_bytes += self.cfg.mtu as u64;
            self.window_sends.push_back(now);
            if let Some(r) = self.record.as_mut() {
                r.sent += 1;
            }
            out.push(Packet {
                seq,
                size: self.cfg.mtu,
                sent_at: now,
                flow_id: self.flow_id,
            });
        }
    }

    /// True at flow start, and afterwards iff an ACK arrived since the last
    /// decision and at least `decision_fraction * min_rtt` has passed.
    pub fn decision_due(&self, now: u64) -> bool {
        if !self.is_active(now) {
            return false;
        }
        match self.last_decision {
            None => true,
            Some(last) => {
                self.ack_since_decision
                    && self.stats.min_rtt.is_finite()
                    && (now - last) as f64 >= self.cfg.decision_fraction * self.stats.min_rtt
            }
        }
    }

    /// Window estimates ending at `now`: throughput over the window, 95th
    /// percentile RTT, and losses over sends. Without ACKs in the window the
    /// previous snapshot is repeated.
    pub fn snapshot_measurement(&mut self, now: u64) -> (Measurement, PhysicalMeasurement) {
        self.prune_windows(now);
        if self.window_acks.is_empty() {
            return (self.last_measurement, self.last_physical);
        }
        let span = self.window_len().min((now - self.start_ms) as f64).max(1.0);
        let bytes: u64 = self.window_acks.iter().map(|a| a.2 as u64).sum();
        let thr = bytes as f64 * 8.0 / (span * 1000.0);
        let rtts: Vec<f64> = self.window_acks.iter().map(|a| a.1).collect();
        let p95 = percentile(&rtts, 0.95).unwrap();
        let sends = self.window_sends.len();
        let loss = if sends > 0 {
            (self.window_losses.len() as f64 / sends as f64).min(1.0)
        } else {
            0.0
        };
        self.stats.max_throughput = self.stats.max_throughput.max(thr);
        let m = Measurement {
            thr_norm: if self.stats.max_throughput > 0.0 {
                thr / self.stats.max_throughput
            } else {
                0.0
            },
            delay_ratio: p95 / self.stats.min_rtt,
            loss_rate: loss,
        };
        let p = PhysicalMeasurement {
            throughput_mbps: thr,
            delay_ms: p95,
            loss_rate: loss,
        };
        self.last_measurement = m;
        self.last_physical = p;
        (m, p)
    }

    /// Closes the current decision interval: appends its state sample to the
    /// history and returns it with a fresh measurement.
    pub fn take_decision(&mut self, now: u64) -> DecisionSnapshot {
        let interval = match self.last_decision {
            Some(last) => (now - last).max(1) as f64,
            None => 0.0,
        };
        let send_rate = if interval > 0.0 {
            self.stats.interval_sent_bytes as f64 * 8.0 / (interval * 1000.0)
        } else {
            0.0
        };
        let rtts = &self.stats.interval_rtt_samples;
        if !rtts.is_empty() {
            self.last_interval_delay = rtts.iter().sum::<f64>() / rtts.len() as f64;
        }
        let state = StateSample {
            last_action: self.rate_mbps(),
            ewma_rtt: self.stats.ewma_rtt.unwrap_or(0.0),
            actual_send_rate: send_rate,
            avg_interval_delay: self.last_interval_delay,
        };
        if self.last_decision.is_some() {
            self.history.push(state);
        }
        self.stats.interval_ack_count = 0;
        self.stats.interval_rtt_samples.clear();
        self.stats.interval_sent_bytes = 0;
        self.last_decision = Some(now);
        self.ack_since_decision = false;
        let (measurement, physical) = self.snapshot_measurement(now);
        DecisionSnapshot {
            state,
            measurement,
            physical,
        }
    }

    /// Timer-driven: every `window_rtts` smoothed RTTs once an RTT is known.
    pub fn tuning_due(&self, now: u64) -> bool {
        let Some(e) = self.stats.ewma_rtt else {
            return false;
        };
        if !self.is_active(now) {
            return false;
        }
        let last = self.last_tuning.unwrap_or(self.start_ms);
        (now - last) as f64 >= self.cfg.window_rtts * e
    }

    pub fn take_tuning(&mut self, now: u64) -> PhysicalMeasurement {
        self.last_tuning = Some(now);
        self.snapshot_measurement(now).1
    }
}

impl<C: Controller> Endpoint for Sender<C> {
    fn poll_transmit(&mut self, now: u64, out: &mut Vec<Packet>) {
        self.transmit(now, out)
    }

    fn on_ack(&mut self, ack: &Ack, now: u64) -> Result<()> {
        self.handle_ack(ack, now)
    }
}

impl Sender<RateControl> {
    pub fn set_rate(&mut self, rate_mbps: f64, now: u64) {
        assert!(rate_mbps >= 0.0 && rate_mbps.is_finite(), "rate {rate_mbps}");
        self.controller.rate_mbps = rate_mbps;
        self.reset_pacing(now);
    }
}
