use std::collections::VecDeque;

use crate::objective::StateSample;

/// The last `capacity` decision-interval samples, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StateHistory {
    capacity: usize,
    samples: VecDeque<StateSample>,
}

impl StateHistory {
    pub fn new(capacity: usize) -> Self {
        StateHistory {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, s: StateSample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(s);
    }

    pub fn latest(&self) -> Option<&StateSample> {
        self.samples.back()
    }

    /// Exactly `capacity` samples; missing leading entries are zero.
    pub fn padded(&self) -> Vec<StateSample> {
        let mut out = vec![StateSample::default(); self.capacity - self.samples.len()];
        out.extend(self.samples.iter().copied());
        out
    }

    /// Row-major `[capacity, 4]` network input, scaled by
    /// [`StateSample::scaled`]. Padding rows stay zero.
    pub fn to_input(&self, bound: f64, min_rtt: f64) -> Vec<f64> {
        let mut out = vec![0.0; 4 * (self.capacity - self.samples.len())];
        for s in &self.samples {
            out.extend_from_slice(&s.scaled(bound, min_rtt));
        }
        out
    }
}

/// Nearest-rank percentile of an unsorted sample; `None` when empty.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize) -> StateSample {
        StateSample {
            last_action: i as f64,
            ewma_rtt: 60.0,
            actual_send_rate: 1.0,
            avg_interval_delay: 61.0,
        }
    }

    #[test]
    fn empty_history_is_all_zero() {
        let h = StateHistory::new(16);
        assert_eq!(h.padded(), vec![StateSample::default(); 16]);
        assert!(h.to_input(24.0, 60.0).iter().all(|x| *x == 0.0));
        assert_eq!(h.to_input(24.0, 60.0).len(), 64);
    }

    #[test]
    fn ring_keeps_the_latest_sixteen() {
        let mut h = StateHistory::new(16);
        for i in 1..=20 {
            h.push(sample(i));
        }
        let kept: Vec<f64> = h.padded().iter().map(|s| s.last_action).collect();
        assert_eq!(kept, (5..=20).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn partial_history_pads_in_front() {
        let mut h = StateHistory::new(4);
        h.push(sample(7));
        let input = h.to_input(14.0, 60.0);
        assert_eq!(&input[..12], &[0.0; 12]);
        assert_eq!(&input[12..], &[0.5, 0.25, 1.0 / 14.0, 61.0 / 240.0]);
    }

    #[test]
    fn nearest_rank_percentile() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), Some(95.0));
        assert_eq!(percentile(&[3.0], 0.95), Some(3.0));
        assert_eq!(percentile(&[], 0.95), None);
        assert_eq!(percentile(&[5.0, 1.0, 2.0], 0.0), Some(1.0));
    }
}
