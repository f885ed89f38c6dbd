//! Delivery-opportunity schedules in the Mahimahi text format: one integer
//! millisecond timestamp per line, each line allowing one MTU-sized packet
//! through the bottleneck.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

pub const DEFAULT_MTU: usize = 1500;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSchedule {
    opportunities: Vec<u64>,
    mtu: usize,
    duration: u64,
    /// `counts[x]`: opportunities at offset `x`, for `x` in `0..=duration`.
    counts: Vec<u32>,
}

impl TraceSchedule {
    pub fn new(opportunities: Vec<u64>, mtu: usize) -> Result<Self> {
        if opportunities.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if let Some(i) = opportunities.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::NonMonotone { line: i + 2 });
        }
        let duration = *opportunities.last().unwrap();
        let mut counts = vec![0u32; duration as usize + 1];
        for &t in &opportunities {
            counts[t as usize] += 1;
        }
        Ok(TraceSchedule {
            opportunities,
            mtu,
            duration,
            counts,
        })
    }

    /// A constant-rate schedule. Fractional packets per ms carry over, so
    /// 42 Mbps alternates 3 and 4 opportunities per ms.
    pub fn constant(rate_mbps: f64, duration_ms: u64, mtu: usize) -> Result<Self> {
        if !(rate_mbps > 0.0) || duration_ms == 0 {
            return Err(Error::Config(format!(
                "constant trace needs a positive rate and duration, got {rate_mbps} Mbps over {duration_ms} ms"
            )));
        }
        let per_ms = mbps_to_packets_per_ms(rate_mbps, mtu);
        let mut out = Vec::with_capacity((per_ms * duration_ms as f64) as usize + 1);
        for t in 1..=duration_ms {
            let n = (per_ms * t as f64 + 1e-9).floor() - (per_ms * (t - 1) as f64 + 1e-9).floor();
            for _ in 0..n as u64 {
                out.push(t);
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyTrace);
        }
        // Pin the period to the requested duration even when the last ms is idle.
        let mut trace = TraceSchedule::new(out, mtu)?;
        trace.extend_duration(duration_ms);
        Ok(trace)
    }

    fn extend_duration(&mut self, duration: u64) {
        if duration > self.duration {
            self.duration = duration;
            self.counts.resize(duration as usize + 1, 0);
        }
    }

    pub fn opportunities(&self) -> &[u64] {
        &self.opportunities
    }

    pub fn mtu(&self) -> usize {
        self.mtu
    }

    pub fn duration(&self) -> u64 {
        self.duration
    }

    /// Average capacity over one period.
    pub fn mean_rate_mbps(&self) -> f64 {
        if self.duration == 0 {
            return 0.0;
        }
        self.opportunities.len() as f64 * self.mtu as f64 * 8.0 / (self.duration as f64 * 1000.0)
    }

    /// Highest capacity over any `window_ms` span of one period.
    pub fn peak_rate_mbps(&self, window_ms: u64) -> f64 {
        let w = window_ms.max(1) as usize;
        let counts = &self.counts;
        if counts.len() <= w {
            return self.mean_rate_mbps();
        }
        let mut sum: u64 = counts[..w].iter().map(|&c| c as u64).sum();
        let mut best = sum;
        for i in w..counts.len() {
            sum = sum + counts[i] as u64 - counts[i - w] as u64;
            best = best.max(sum);
        }
        best as f64 * self.mtu as f64 * 8.0 / (w as f64 * 1000.0)
    }

    /// Opportunities falling exactly on absolute time `t`.
    pub fn opportunities_at(&self, t: u64, wraparound: bool) -> u32 {
        let d = self.duration;
        if !wraparound || d == 0 {
            return if t <= d { self.counts[t as usize] } else { 0 };
        }
        let off = t % d;
        let mut n = self.counts[off as usize];
        // Offset `d` of one period coincides with offset 0 of the next.
        if off == 0 && t >= d {
            n += self.counts[d as usize];
        }
        n
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.opportunities.len() * 6);
        for t in &self.opportunities {
            let _ = writeln!(s, "{t}");
        }
        s
    }
}

pub fn mbps_to_packets_per_ms(rate_mbps: f64, mtu: usize) -> f64 {
    rate_mbps * 1000.0 / (mtu as f64 * 8.0)
}

/// Parses Mahimahi text; blank lines are skipped, line numbers are 1-based.
pub fn parse_trace(text: &str, mtu: usize) -> Result<TraceSchedule> {
    let mut out = Vec::new();
    let mut last: Option<u64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let t: u64 = line.parse().map_err(|_| Error::TraceParse {
            line: i + 1,
            text: raw.to_string(),
        })?;
        if last.is_some_and(|l| t < l) {
            return Err(Error::NonMonotone { line: i + 1 });
        }
        last = Some(t);
        out.push(t);
    }
    TraceSchedule::new(out, mtu)
}

/// Per-ms delivery counts drawn from a Poisson law with the given mean rate.
pub fn generate_poisson_trace<R: Rng + ?Sized>(
    mean_rate_mbps: f64,
    duration_ms: u64,
    mtu: usize,
    rng: &mut R,
) -> Result<TraceSchedule> {
    if !(mean_rate_mbps > 0.0) || duration_ms == 0 {
        return Err(Error::Config(format!(
            "poisson trace needs a positive rate and duration, got {mean_rate_mbps} Mbps over {duration_ms} ms"
        )));
    }
    let lambda = mbps_to_packets_per_ms(mean_rate_mbps, mtu);
    let law = Poisson::new(lambda).map_err(|e| Error::Config(format!("poisson rate {lambda}: {e}")))?;
    let mut out = Vec::with_capacity((lambda * duration_ms as f64 * 1.1) as usize + 16);
    for t in 1..=duration_ms {
        let n: f64 = law.sample(rng);
        for _ in 0..n as u64 {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut trace = TraceSchedule::new(out, mtu)?;
    trace.extend_duration(duration_ms);
    Ok(trace)
}
