use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::link::{Link, LinkConfig};
use super::trace::{generate_poisson_trace, parse_trace, TraceSchedule, DEFAULT_MTU};
use crate::error::{Error, Result};

/// Where delivery opportunities come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSpec {
    Constant { rate_mbps: f64 },
    /// Redrawn on every build.
    Poisson { rate_mbps: f64, duration_ms: u64 },
    /// Mahimahi text file.
    File { path: PathBuf },
}

fn default_true() -> bool {
    true
}

fn default_mtu() -> usize {
    DEFAULT_MTU
}

/// A buildable bottleneck description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub trace: TraceSpec,
    pub one_way_delay_ms: u64,
    pub queue_capacity: usize,
    #[serde(default)]
    pub stochastic_loss: f64,
    #[serde(default = "default_true")]
    pub wraparound: bool,
    #[serde(default = "default_mtu")]
    pub mtu: usize,
}

impl LinkSpec {
    pub fn constant(rate_mbps: f64, one_way_delay_ms: u64, queue_capacity: usize) -> Self {
        LinkSpec {
            trace: TraceSpec::Constant { rate_mbps },
            one_way_delay_ms,
            queue_capacity,
            stochastic_loss: 0.0,
            wraparound: true,
            mtu: DEFAULT_MTU,
        }
    }

    pub fn link_config(&self) -> LinkConfig {
        LinkConfig {
            one_way_delay_ms: self.one_way_delay_ms,
            queue_capacity: self.queue_capacity,
            stochastic_loss: self.stochastic_loss,
            wraparound: self.wraparound,
        }
    }

    pub fn min_rtt_ms(&self) -> f64 {
        2.0 * self.one_way_delay_ms as f64
    }

    pub fn trace<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Arc<TraceSchedule>> {
        let t = match &self.trace {
            TraceSpec::Constant { rate_mbps } => TraceSchedule::constant(*rate_mbps, 1000, self.mtu)?,
            TraceSpec::Poisson { rate_mbps, duration_ms } => {
                generate_poisson_trace(*rate_mbps, *duration_ms, self.mtu, rng)?
            }
            TraceSpec::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_trace(&text, self.mtu)?
            }
        };
        Ok(Arc::new(t))
    }

    /// Nominal rate for constant and Poisson links; the busiest second of a
    /// file trace.
    pub fn peak_rate_mbps(&self) -> Result<f64> {
        match &self.trace {
            TraceSpec::Constant { rate_mbps } | TraceSpec::Poisson { rate_mbps, .. } => Ok(*rate_mbps),
            TraceSpec::File { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                Ok(self.trace(&mut rng)?.peak_rate_mbps(1000))
            }
        }
    }

    /// Trace draw and loss RNG both derive from `seed`.
    pub fn build(&self, seed: u64) -> Result<Link> {
        let cfg = self.link_config();
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = self.trace(&mut rng)?;
        Link::new(cfg, trace, rng.random())
    }

    /// Reuses an already drawn trace.
    pub fn build_with_trace(&self, trace: Arc<TraceSchedule>, seed: u64) -> Result<Link> {
        let cfg = self.link_config();
        cfg.validate()?;
        Link::new(cfg, trace, seed)
    }
}
