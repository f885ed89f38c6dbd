//! Sending endpoints and the estimators behind state and measurement.

mod history;
mod sender;

pub use history::{percentile, StateHistory};
pub use sender::{
    packet_interval_ms, rate_window, Controller, DecisionSnapshot, RateControl, RunRecord, RunSummary, Sender,
    SenderConfig, SenderStats,
};

/// Per-flow log row.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FlowLogRow {
    pub time_ms: u64,
    pub rate_mbps: f64,
    pub cwnd_pkts: f64,
    pub ewma_rtt_ms: f64,
    pub p95_rtt_ms: f64,
    pub qdelay_ms: f64,
    pub thr_mbps: f64,
    pub loss_rate: f64,
}

impl FlowLogRow {
    pub const HEADER: &'static str = "time_ms,rate_mbps,cwnd_pkts,ewma_rtt_ms,p95_rtt_ms,qdelay_ms,thr_mbps,loss_rate";

    pub fn capture<C: Controller>(sender: &Sender<C>, now: u64) -> Self {
        let (_, p) = sender.last_measurement();
        let min = sender.stats().min_rtt_or_zero();
        FlowLogRow {
            time_ms: now,
            rate_mbps: sender.rate_mbps(),
            cwnd_pkts: sender.cwnd(),
            ewma_rtt_ms: sender.stats().ewma_rtt.unwrap_or(0.0),
            p95_rtt_ms: p.delay_ms,
            qdelay_ms: (p.delay_ms - min).max(0.0),
            thr_mbps: p.throughput_mbps,
            loss_rate: p.loss_rate,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.time_ms,
            self.rate_mbps,
            self.cwnd_pkts,
            self.ewma_rtt_ms,
            self.p95_rtt_ms,
            self.qdelay_ms,
            self.thr_mbps,
            self.loss_rate
        )
    }
}
