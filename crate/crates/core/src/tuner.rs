//! Online goal tuning: treats the trained agent as a black box `m = f(g)` and
//! moves the goal by gradient descent on the distance to an application target.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Tensor};
use crate::objective::{
    normalize_goal, relative_residuals, signed_errors, target_loss, Goal, PhysicalMeasurement, Target, TargetMode,
    GOAL_CLAMP,
};

/// Goal deltas below this are not divided by.
pub const MIN_GOAL_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerConfig {
    /// Averaging window, in tuning ticks.
    pub k: usize,
    pub alpha: f64,
    pub escape_threshold: f64,
    pub escape_bump: f64,
    /// Consecutive ticks above the threshold before a bump.
    pub escape_ticks: u32,
    /// Probe size used when no sensitivity can be estimated.
    pub probe: f64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            k: 5,
            alpha: 0.05,
            escape_threshold: 0.5,
            escape_bump: 0.1,
            escape_ticks: 3,
            probe: 0.02,
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("tuner k must be at least 1".into()));
        }
        if !(self.alpha > 0.0) || !(self.escape_bump > 0.0) || !(self.probe > 0.0) {
            return Err(Error::Config("tuner alpha, escape_bump and probe must be > 0".into()));
        }
        Ok(())
    }
}

/// The last `k + 1` (goal, measurement) pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRing {
    cap: usize,
    items: VecDeque<([f64; 3], PhysicalMeasurement)>,
}

impl ObservationRing {
    pub fn new(k: usize) -> Self {
        ObservationRing {
            cap: k + 1,
            items: VecDeque::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, goal: [f64; 3], m: PhysicalMeasurement) {
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back((goal, m));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &([f64; 3], PhysicalMeasurement)> {
        self.items.iter()
    }

    /// Mean of the last `n` measurements.
    pub fn mean_measurement(&self, n: usize) -> Option<PhysicalMeasurement> {
        let n = n.min(self.items.len());
        if n == 0 {
            return None;
        }
        let mut acc = [0.0; 3];
        for (_, m) in self.items.iter().skip(self.items.len() - n) {
            for (a, v) in acc.iter_mut().zip(m.as_array()) {
                *a += v;
            }
        }
        Some(PhysicalMeasurement {
            throughput_mbps: acc[0] / n as f64,
            delay_ms: acc[1] / n as f64,
            loss_rate: acc[2] / n as f64,
        })
    }
}

/// Diagonal sensitivity `∂m_i/∂g_i`, averaged over consecutive pairs whose
/// goal moved by at least [`MIN_GOAL_DELTA`] in that dimension. `None` marks a
/// dimension with no usable pair.
pub fn estimate_gradient(ring: &ObservationRing) -> Result<[Option<f64>; 3]> {
    let mut sum = [0.0; 3];
    let mut count = [0usize; 3];
    let items: Vec<_> = ring.iter().collect();
    for w in items.windows(2) {
        let (g0, m0) = (w[0].0, w[0].1.as_array());
        let (g1, m1) = (w[1].0, w[1].1.as_array());
        for i in 0..3 {
            let dg = g1[i] - g0[i];
            if dg.abs() >= MIN_GOAL_DELTA {
                sum[i] += (m1[i] - m0[i]) / dg;
                count[i] += 1;
            }
        }
    }
    if count.iter().all(|&c| c == 0) {
        return Err(Error::Degenerate);
    }
    Ok([0, 1, 2].map(|i| (count[i] > 0).then(|| sum[i] / count[i] as f64)))
}

/// The loss goal follows the delay gradient while loss is out of bounds
/// together with throughput or delay; otherwise it is frozen, so loss that
/// stays within the target (random, non-congestion loss) never moves it.
pub fn loss_gradient_constraint(grad: [f64; 3], achieved: &PhysicalMeasurement, target: &Target) -> [f64; 3] {
    let ok = [0, 1, 2].map(|d| target.satisfied(d, achieved));
    let mut g = grad;
    g[2] = if !ok[2] && (!ok[0] || !ok[1]) { grad[1] } else { 0.0 };
    g
}

/// Per-dimension persistence counters for the jump-out rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EscapeState {
    pub counts: [u32; 3],
}

/// Adds `escape_bump` to each raw component whose residual stayed above the
/// threshold for `escape_ticks` consecutive calls, then restarts its count.
pub fn escape_local_optimum(raw: [f64; 3], residuals: &[f64; 3], state: &mut EscapeState, cfg: &TunerConfig) -> [f64; 3] {
    let mut out = raw;
    for i in 0..3 {
        if residuals[i] > cfg.escape_threshold {
            state.counts[i] += 1;
            if state.counts[i] >= cfg.escape_ticks {
                out[i] += cfg.escape_bump;
                state.counts[i] = 0;
            }
        } else {
            state.counts[i] = 0;
        }
    }
    out
}

/// Starting goal for a target's mode.
pub fn initial_goal(mode: TargetMode) -> Goal {
    match mode {
        TargetMode::Explicit => Goal::uniform(),
        TargetMode::HighThroughput => normalize_goal([0.6, 0.2, 0.2]).expect("positive"),
        TargetMode::LowLatency => normalize_goal([0.2, 0.6, 0.2]).expect("positive"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TickAction {
    /// Fewer than two observations.
    Warmup,
    Satisfied,
    Probe,
    Gradient,
}

impl TickAction {
    pub fn as_str(self) -> &'static str {
        match self {
            TickAction::Warmup => "warmup",
            TickAction::Satisfied => "satisfied",
            TickAction::Probe => "probe",
            TickAction::Gradient => "gradient",
        }
    }
}

/// What one tuning tick saw and did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuneRecord {
    pub time_ms: u64,
    pub goal: [f64; 3],
    pub raw: [f64; 3],
    pub residuals: [f64; 3],
    pub loss: f64,
    pub gradient: [f64; 3],
    pub action: TickAction,
}

impl TuneRecord {
    pub const HEADER: &'static str = "time_ms,g1,g2,g3,r1,r2,r3,J,grad1,grad2,grad3,action";

    pub fn csv_line(&self) -> String {
        let g = self.goal;
        let r = self.residuals;
        let d = self.gradient;
        format!(
            "{},{:.9},{:.9},{:.9},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.time_ms,
            g[0],
            g[1],
            g[2],
            r[0],
            r[1],
            r[2],
            self.loss,
            d[0],
            d[1],
            d[2],
            self.action.as_str()
        )
    }
}

/// One flow's goal controller.
#[derive(Debug, Clone)]
pub struct Tuner {
    cfg: TunerConfig,
    target: Target,
    raw: Tensor,
    goal: Goal,
    adam: AdamState,
    ring: ObservationRing,
    escape: EscapeState,
    probe_sign: f64,
}

impl Tuner {
    pub fn new(cfg: TunerConfig, target: Target) -> Result<Self> {
        Self::with_goal(cfg, target, initial_goal(target.mode))
    }

    pub fn with_goal(cfg: TunerConfig, target: Target, goal: Goal) -> Result<Self> {
        cfg.validate()?;
        let raw = Tensor::scalar_vec(&goal.weights());
        let adam = AdamState::new(AdamConfig::with_lr(cfg.alpha), [&raw]);
        Ok(Tuner {
            ring: ObservationRing::new(cfg.k),
            cfg,
            target,
            raw,
            goal,
            adam,
            escape: EscapeState::default(),
            probe_sign: 1.0,
        })
    }

    pub fn goal(&self) -> Goal {
        self.goal
    }

    pub fn raw(&self) -> [f64; 3] {
        let d = self.raw.data();
        [d[0], d[1], d[2]]
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn ring(&self) -> &ObservationRing {
        &self.ring
    }

    /// Feeds the measurement obtained under the current goal and returns the
    /// goal for the next interval.
    pub fn on_tuning_tick(&mut self, m: PhysicalMeasurement, time_ms: u64) -> TuneRecord {
        self.ring.push(self.goal.weights(), m);
        let avg = self.ring.mean_measurement(self.cfg.k).expect("just pushed");
        let residuals = relative_residuals(&avg, &self.target);
        let mut rec = TuneRecord {
            time_ms,
            goal: self.goal.weights(),
            raw: self.raw(),
            residuals,
            loss: target_loss(&avg, &self.target),
            gradient: [0.0; 3],
            action: TickAction::Warmup,
        };
        if self.ring.len() < 2 {
            return rec;
        }
        if self.target.all_satisfied(&avg) {
            self.escape = EscapeState::default();
            rec.action = TickAction::Satisfied;
            return rec;
        }

        let errors = signed_errors(&avg, &self.target);
        let worst = (0..3).max_by(|&a, &b| residuals[a].total_cmp(&residuals[b])).unwrap();
        let sens = estimate_gradient(&self.ring).ok();
        let mut raw = self.raw();
        match sens {
            Some(s) if s[worst].is_some() => {
                let bounds = self.target.bounds();
                let mut grad = [0.0; 3];
                for i in 0..3 {
                    if let (Some(si), Some(b)) = (s[i], bounds[i]) {
                        let scale = if b > 0.0 { b } else { 1.0 };
                        grad[i] = errors[i] * si / scale;
                    }
                }
                let grad = loss_gradient_constraint(grad, &avg, &self.target);
                let gt = Tensor::scalar_vec(&grad);
                adam_step(&mut [&mut self.raw], &[gt], &mut self.adam).expect("fixed shapes");
                raw = self.raw();
                rec.gradient = grad;
                rec.action = TickAction::Gradient;
            }
            _ => {
                // The loss goal only moves through the constraint or the
                // jump-out rule, so a probe on it would defeat the freeze.
                let dim = if worst == 2 { 1 } else { worst };
                raw[dim] += self.probe_sign * self.cfg.probe;
                self.probe_sign = -self.probe_sign;
                rec.action = TickAction::Probe;
            }
        }
        raw = escape_local_optimum(raw, &residuals, &mut self.escape, &self.cfg);
        let raw = raw.map(|x| x.max(GOAL_CLAMP));
        self.raw.data_mut().copy_from_slice(&raw);
        self.goal = normalize_goal(raw).expect("raw components are clamped positive");
        rec.raw = raw;
        rec.goal = self.goal.weights();
        rec
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn pm(thr: f64, delay: f64, loss: f64) -> PhysicalMeasurement {
        PhysicalMeasurement {
            throughput_mbps: thr,
            delay_ms: delay,
            loss_rate: loss,
        }
    }

    #[test]
    fn single_step_sensitivity() {
        let mut r = ObservationRing::new(5);
        r.push([0.3, 0.3, 0.4], pm(1.0, 50.0, 0.01));
        r.push([0.4, 0.3, 0.4], pm(1.05, 50.0, 0.01));
        let s = estimate_gradient(&r).unwrap();
        assert!((s[0].unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(s[1], None);
        assert_eq!(s[2], None);
    }

    #[test]
    fn frozen_goal_is_degenerate() {
        let mut r = ObservationRing::new(5);
        r.push([0.3, 0.3, 0.4], pm(1.0, 50.0, 0.01));
        r.push([0.3, 0.3, 0.4 + 1e-7], pm(2.0, 60.0, 0.02));
        assert!(matches!(estimate_gradient(&r), Err(Error::Degenerate)));
    }

    #[test]
    fn linear_plant_diagonal_is_recovered() {
        let a = [[8.0, 0.7, -0.4], [-1.5, -60.0, 2.0], [0.01, -0.02, -0.05]];
        let plant = |g: [f64; 3]| {
            let m: Vec<f64> = a.iter().map(|row| row.iter().zip(&g).map(|(x, y)| x * y).sum()).collect();
            pm(m[0], m[1], m[2])
        };
        let mut r = ObservationRing::new(5);
        let mut g = [0.3, 0.3, 0.3];
        r.push(g, plant(g));
        for step in 0..5 {
            g[step % 3] += 0.05 * (1 + step) as f64;
            r.push(g, plant(g));
        }
        let s = estimate_gradient(&r).unwrap();
        for i in 0..3 {
            let est = s[i].unwrap();
            assert!(((est - a[i][i]) / a[i][i]).abs() < 0.05, "dim {i}: {est} vs {}", a[i][i]);
        }
    }

    #[test]
    fn escape_rule() {
        let cfg = TunerConfig::default();
        let mut st = EscapeState::default();
        let raw = [0.3, 0.3, 0.3];
        let res = [0.6, 0.0, 0.0];
        assert_eq!(escape_local_optimum(raw, &res, &mut st, &cfg), raw);
        assert_eq!(escape_local_optimum(raw, &res, &mut st, &cfg), raw);
        let out = escape_local_optimum(raw, &res, &mut st, &cfg);
        assert!((out[0] - 0.4).abs() < 1e-15);
        assert_eq!(&out[1..], &raw[1..]);

        let mut st = EscapeState::default();
        escape_local_optimum(raw, &res, &mut st, &cfg);
        escape_local_optimum(raw, &res, &mut st, &cfg);
        escape_local_optimum(raw, &[0.0; 3], &mut st, &cfg);
        assert_eq!(st.counts, [0; 3]);
        assert_eq!(escape_local_optimum(raw, &[0.4, 0.5, 0.1], &mut st, &cfg), raw);
    }

    #[test]
    fn loss_constraint_cases() {
        let t = Target::explicit(10.0, 100.0, 0.05).unwrap();
        let g = [-0.3, -0.7, 0.9];
        // delay and loss out of bounds
        assert_eq!(loss_gradient_constraint(g, &pm(12.0, 150.0, 0.08), &t), [-0.3, -0.7, -0.7]);
        // random loss within the target freezes the loss goal
        assert_eq!(loss_gradient_constraint(g, &pm(8.0, 150.0, 0.02), &t), [-0.3, -0.7, 0.0]);
        // loss alone cannot move it either
        assert_eq!(loss_gradient_constraint(g, &pm(12.0, 80.0, 0.08), &t), [-0.3, -0.7, 0.0]);
        assert_eq!(loss_gradient_constraint([0.0; 3], &pm(12.0, 80.0, 0.01), &t), [0.0; 3]);
    }

    fn tuner(t: Target) -> Tuner {
        Tuner::new(TunerConfig::default(), t).unwrap()
    }

    #[test]
    fn satisfied_target_is_a_fixed_point() {
        let mut tu = tuner(Target::explicit(5.0, 100.0, 0.05).unwrap());
        let g0 = tu.goal();
        for i in 0..50 {
            let rec = tu.on_tuning_tick(pm(6.0 + (i % 3) as f64, 70.0, 0.01), i);
            assert_ne!(rec.action, TickAction::Gradient);
            assert_eq!(tu.goal(), g0);
        }
    }

    #[test]
    fn warmup_returns_the_goal_unchanged() {
        let mut tu = tuner(Target::explicit(50.0, 10.0, 0.01).unwrap());
        let g0 = tu.goal();
        let rec = tu.on_tuning_tick(pm(1.0, 500.0, 0.5), 0);
        assert_eq!(rec.action, TickAction::Warmup);
        assert_eq!(tu.goal(), g0);
    }

    /// Puts a moved goal into the ring so the next tick has a usable delta.
    fn primed(t: Target, first: PhysicalMeasurement, second: PhysicalMeasurement) -> Tuner {
        let mut tu = tuner(t);
        tu.on_tuning_tick(first, 0);
        let rec = tu.on_tuning_tick(first, 1);
        assert_eq!(rec.action, TickAction::Probe);
        tu.on_tuning_tick(second, 2);
        tu
    }

    #[test]
    fn low_throughput_raises_g1() {
        let t = Target::explicit(10.0, 1000.0, 0.5).unwrap();
        let mut tu = tuner(t);
        tu.on_tuning_tick(pm(5.0, 60.0, 0.0), 0);
        tu.on_tuning_tick(pm(5.0, 60.0, 0.0), 1);
        // probe moved g1 up; throughput responded
        let raw_before = tu.raw();
        assert!(raw_before[0] > 1.0 / 3.0);
        let rec = tu.on_tuning_tick(pm(6.0, 60.0, 0.0), 2);
        assert_eq!(rec.action, TickAction::Gradient);
        assert!(rec.gradient[0] < 0.0);
        assert!(tu.raw()[0] > raw_before[0]);
    }

    #[test]
    fn high_delay_raises_g2_and_drags_g3_with_it() {
        let t = Target::explicit(1.0, 100.0, 0.01).unwrap();
        let mut tu = primed(t, pm(10.0, 140.0, 0.013), pm(10.0, 135.0, 0.013));
        let before = tu.raw();
        let rec = tu.on_tuning_tick(pm(10.0, 130.0, 0.013), 3);
        assert_eq!(rec.action, TickAction::Gradient);
        assert!(rec.gradient[1] < 0.0);
        assert_eq!(rec.gradient[2], rec.gradient[1]);
        let after = tu.raw();
        assert!(after[1] > before[1]);
        // same Adam history on both, so the same step
        assert!(((after[2] - before[2]) - (after[1] - before[1])).abs() < 1e-12);
    }

    #[test]
    fn random_loss_under_target_never_moves_g3() {
        let t = Target::explicit(11.0, 100.0, 0.05).unwrap();
        let mut tu = tuner(t);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g3 = tu.raw()[2];
        for i in 0..300 {
            let m = pm(8.0 + 4.0 * rng.random::<f64>(), 60.0 + 80.0 * rng.random::<f64>(), 0.02);
            tu.on_tuning_tick(m, i);
            assert_eq!(tu.raw()[2].to_bits(), g3.to_bits());
        }
    }

    #[test]
    fn outputs_stay_on_the_simplex() {
        let t = Target::explicit(30.0, 20.0, 0.001).unwrap();
        let mut tu = tuner(t);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..500 {
            let m = pm(40.0 * rng.random::<f64>(), 300.0 * rng.random::<f64>(), 0.1 * rng.random::<f64>());
            tu.on_tuning_tick(m, i);
            let w = tu.goal().weights();
            assert!(w.iter().all(|x| *x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// m1 rises with g1, m2 falls with g2, loss falls with g3; mild noise.
    pub(crate) fn monotone_plant(g: [f64; 3], noise: f64, rng: &mut ChaCha8Rng) -> PhysicalMeasurement {
        let mut n = || 1.0 + noise * (2.0 * rng.random::<f64>() - 1.0);
        pm(
            20.0 * g[0] * n(),
            (60.0 + 200.0 * (1.0 - g[1])) * n(),
            (0.04 * (1.0 - g[2])) * n(),
        )
    }

    #[test]
    fn converges_on_a_monotone_plant() {
        let t = Target::explicit(8.0, 180.0, 0.04).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tu = tuner(t);
            let mut best = f64::INFINITY;
            for tick in 0..200 {
                let m = monotone_plant(tu.goal().weights(), 0.01, &mut rng);
                best = best.min(target_loss(&m, &t));
                tu.on_tuning_tick(m, tick);
            }
            let end = monotone_plant(tu.goal().weights(), 0.0, &mut rng);
            assert!(target_loss(&end, &t) < 0.05, "seed {seed}: {end:?} goal {:?}", tu.goal());
        }
    }
}
