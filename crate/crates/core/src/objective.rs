//! Goals, measurements, targets and the reward and target-distance arithmetic
//! built on them.
//!
//! A [`Goal`] is a point on the 3-simplex weighting throughput, delay and loss.
//! The learner is rewarded by [`compute_reward`] under a goal; the online tuner
//! moves the goal to shrink [`target_loss`] against an application [`Target`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value substituted for non-positive raw goal components before normalizing.
pub const GOAL_CLAMP: f64 = 1e-6;

const SIMPLEX_TOL: f64 = 1e-9;

/// Trade-off weights on (throughput, delay, loss). Components are non-negative
/// and sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal([f64; 3]);

impl Goal {
    /// Validates that `w` already lies on the simplex.
    pub fn new(w: [f64; 3]) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Config(format!("goal {w:?} is not on the unit simplex")));
        }
        Ok(Goal(w))
    }

    pub fn uniform() -> Self {
        Goal([1.0 / 3.0; 3])
    }

    pub fn weights(&self) -> [f64; 3] {
        self.0
    }

    pub fn throughput(&self) -> f64 {
        self.0[0]
    }

    pub fn delay(&self) -> f64 {
        self.0[1]
    }

    pub fn loss(&self) -> f64 {
        self.0[2]
    }
}

/// Normalized performance as seen by the learner.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    /// Window throughput over the connection's running maximum, in `[0, 1]`.
    pub thr_norm: f64,
    /// 95th-percentile RTT over the minimum RTT, `>= 1`.
    pub delay_ratio: f64,
    pub loss_rate: f64,
}

impl Measurement {
    pub fn as_array(&self) -> [f64; 3] {
        [self.thr_norm, self.delay_ratio, self.loss_rate]
    }
}

/// The same window in physical units; this is what targets are checked against.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhysicalMeasurement {
    pub throughput_mbps: f64,
    /// 95th-percentile RTT in ms.
    pub delay_ms: f64,
    pub loss_rate: f64,
}

impl PhysicalMeasurement {
    pub fn as_array(&self) -> [f64; 3] {
        [self.throughput_mbps, self.delay_ms, self.loss_rate]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Explicit,
    HighThroughput,
    LowLatency,
}

/// Application requirement bounds. A `None` bound is a don't-care dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub min_throughput: Option<f64>,
    pub max_delay: Option<f64>,
    pub max_loss: Option<f64>,
    pub mode: TargetMode,
}

impl Target {
    /// Explicit bounds: Mbps, ms of RTT, loss fraction. All must be positive.
    pub fn explicit(min_throughput: f64, max_delay: f64, max_loss: f64) -> Result<Self> {
        for (name, v) in [
            ("min_throughput", min_throughput),
            ("max_delay", max_delay),
            ("max_loss", max_loss),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidTarget(format!("{name} must be > 0, got {v}")));
            }
        }
        if max_loss > 1.0 {
            return Err(Error::InvalidTarget(format!("max_loss {max_loss} exceeds 1")));
        }
        Ok(Target {
            min_throughput: Some(min_throughput),
            max_delay: Some(max_delay),
            max_loss: Some(max_loss),
            mode: TargetMode::Explicit,
        })
    }

    pub fn bounds(&self) -> [Option<f64>; 3] {
        [self.min_throughput, self.max_delay, self.max_loss]
    }

    /// Whether dimension `dim` is met (excluded dimensions always are).
    pub fn satisfied(&self, dim: usize, achieved: &PhysicalMeasurement) -> bool {
        relative_residuals(achieved, self)[dim] == 0.0
    }

    pub fn all_satisfied(&self, achieved: &PhysicalMeasurement) -> bool {
        relative_residuals(achieved, self).iter().all(|r| *r == 0.0)
    }

    /// Every included bound loosened by `factor >= 1`.
    pub fn relaxed(&self, factor: f64) -> Target {
        Target {
            min_throughput: self.min_throughput.map(|b| b / factor),
            max_delay: self.max_delay.map(|b| b * factor),
            max_loss: self.max_loss.map(|b| b * factor),
            mode: self.mode,
        }
    }
}

/// What a flow has observed about its path, used to resolve preference modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkObservations {
    pub min_rtt_ms: f64,
    pub max_throughput_mbps: f64,
}

/// Raw per-decision-interval state, before input scaling.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateSample {
    pub last_action: f64,
    pub ewma_rtt: f64,
    pub actual_send_rate: f64,
    pub avg_interval_delay: f64,
}

impl StateSample {
    /// Rates over `bound`, times over `4 * min_rtt`. Zero `min_rtt` (no sample
    /// yet) maps times to zero.
    pub fn scaled(&self, bound: f64, min_rtt: f64) -> [f64; 4] {
        let time_scale = if min_rtt > 0.0 { 1.0 / (4.0 * min_rtt) } else { 0.0 };
        [
            self.last_action / bound,
            self.ewma_rtt * time_scale,
            self.actual_send_rate / bound,
            self.avg_interval_delay * time_scale,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Loss fraction treated as fully intolerable; divides the loss penalty.
    pub loss_threshold: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            loss_threshold: 0.05,
            gamma: 0.95,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_threshold > 0.0) {
            return Err(Error::Config("loss_threshold must be > 0".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Throughput is rewarded; delay ratio and loss are penalties.
pub fn compute_reward(m: &Measurement, g: &Goal, cfg: &RewardConfig) -> f64 {
    let [w1, w2, w3] = g.0;
    w1 * m.thr_norm - w2 * m.delay_ratio - w3 * m.loss_rate / cfg.loss_threshold
}

/// Projects an arbitrary raw weight vector onto the simplex by clamping
/// non-positive entries to [`GOAL_CLAMP`] and dividing by the sum.
pub fn normalize_goal(raw: [f64; 3]) -> Result<Goal> {
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("non-finite goal component in {raw:?}")));
    }
    if raw.iter().all(|x| *x <= 0.0) {
        return Err(Error::AllZeroGoal);
    }
    let clamped = raw.map(|x| if x <= 0.0 { GOAL_CLAMP } else { x });
    let sum: f64 = clamped.iter().sum();
    Ok(Goal(clamped.map(|x| x / sum)))
}

/// Uniform draw from the simplex via the gaps between two sorted uniforms.
pub fn sample_random_goal<R: Rng + ?Sized>(rng: &mut R) -> Goal {
    let mut u = [rng.random::<f64>(), rng.random::<f64>()];
    if u[0] > u[1] {
        u.swap(0, 1);
    }
    Goal([u[0], u[1] - u[0], 1.0 - u[1]])
}

/// Per-dimension shortfall relative to the bound. Zero when the bound is met or
/// the dimension is excluded. A zero bound (e.g. "no loss") uses the absolute
/// excess, since there is nothing to divide by.
pub fn relative_residuals(achieved: &PhysicalMeasurement, target: &Target) -> [f64; 3] {
    signed_errors(achieved, target).map(f64::abs)
}

/// Like [`relative_residuals`] but signed in measurement space: throughput
/// shortfalls are negative, delay and loss excesses positive.
pub fn signed_errors(achieved: &PhysicalMeasurement, target: &Target) -> [f64; 3] {
    let a = achieved.as_array();
    let b = target.bounds();
    let mut out = [0.0; 3];
    for dim in 0..3 {
        let Some(bound) = b[dim] else { continue };
        let violated = if dim == 0 { a[dim] < bound } else { a[dim] > bound };
        if violated {
            let scale = if bound > 0.0 { bound } else { 1.0 };
            out[dim] = (a[dim] - bound) / scale;
        }
    }
    out
}

/// Euclidean norm of the relative residual vector.
pub fn target_loss(achieved: &PhysicalMeasurement, target: &Target) -> f64 {
    relative_residuals(achieved, target)
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt()
}

/// Resolves a preference mode into concrete bounds from what the path showed.
pub fn map_preference_to_target(mode: TargetMode, obs: &LinkObservations) -> Result<Target> {
    match mode {
        TargetMode::Explicit => Err(Error::ExplicitModeNotMappable),
        TargetMode::LowLatency => Ok(Target {
            min_throughput: None,
            max_delay: Some(obs.min_rtt_ms),
            max_loss: Some(0.0),
            mode,
        }),
        TargetMode::HighThroughput => Ok(Target {
            min_throughput: Some(obs.max_throughput_mbps),
            max_delay: None,
            max_loss: Some(0.0),
            mode,
        }),
    }
}
