use rand::Rng;

use crate::error::{Error, Result};
use crate::objective::{Goal, Measurement};

/// One decision step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Scaled `[history_len, 4]` state, row-major.
    pub state: Vec<f64>,
    pub measurement: Measurement,
    pub goal: Goal,
    /// Mbps, in `[0, bound]`.
    pub action: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_measurement: Measurement,
    /// True only for a real terminal state; time-limit cut-offs still
    /// bootstrap.
    pub done: bool,
}

/// Fixed-capacity ring over flat arrays.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_len: usize,
    len: usize,
    head: usize,
    state: Vec<f64>,
    next_state: Vec<f64>,
    meas: Vec<[f64; 3]>,
    next_meas: Vec<[f64; 3]>,
    goal: Vec<Goal>,
    action: Vec<f64>,
    reward: Vec<f64>,
    done: Vec<bool>,
}

fn meas_of(a: [f64; 3]) -> Measurement {
    Measurement {
        thr_norm: a[0],
        delay_ratio: a[1],
        loss_rate: a[2],
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_len: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            state_len,
            len: 0,
            head: 0,
            state: Vec::new(),
            next_state: Vec::new(),
            meas: Vec::new(),
            next_meas: Vec::new(),
            goal: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            done: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn state_len(&self) -> usize {
        self.state_len
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn store(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_len || t.next_state.len() != self.state_len {
            return Err(Error::ShapeMismatch(format!(
                "transition states of {} and {} values, buffer expects {}",
                t.state.len(),
                t.next_state.len(),
                self.state_len
            )));
        }
        let sl = self.state_len;
        if self.len < self.capacity {
            self.state.extend_from_slice(&t.state);
            self.next_state.extend_from_slice(&t.next_state);
            self.meas.push(t.measurement.as_array());
            self.next_meas.push(t.next_measurement.as_array());
            self.goal.push(t.goal);
            self.action.push(t.action);
            self.reward.push(t.reward);
            self.done.push(t.done);
            self.len += 1;
        } else {
            let i = self.head;
            self.state[i * sl..(i + 1) * sl].copy_from_slice(&t.state);
            self.next_state[i * sl..(i + 1) * sl].copy_from_slice(&t.next_state);
            self.meas[i] = t.measurement.as_array();
            self.next_meas[i] = t.next_measurement.as_array();
            self.goal[i] = t.goal;
            self.action[i] = t.action;
            self.reward[i] = t.reward;
            self.done[i] = t.done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// Entry `i` in insertion order, oldest first.
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let slot = if self.len < self.capacity { i } else { (self.head + i) % self.capacity };
        Some(self.slot(slot))
    }

    fn slot(&self, i: usize) -> Transition {
        let sl = self.state_len;
        Transition {
            state: self.state[i * sl..(i + 1) * sl].to_vec(),
            measurement: meas_of(self.meas[i]),
            goal: self.goal[i],
            action: self.action[i],
            reward: self.reward[i],
            next_state: self.next_state[i * sl..(i + 1) * sl].to_vec(),
            next_measurement: meas_of(self.next_meas[i]),
            done: self.done[i],
        }
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len < n || n == 0 {
            return Err(Error::NotEnoughData {
                have: self.len,
                need: n.max(1),
            });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn batch(&self, slots: &[usize]) -> Vec<Transition> {
        slots.iter().map(|&i| self.slot(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(tag: f64) -> Transition {
        Transition {
            state: vec![tag; 4],
            measurement: meas_of([0.5, 1.25, tag]),
            goal: Goal::uniform(),
            action: tag,
            reward: -tag,
            next_state: vec![tag + 0.5; 4],
            next_measurement: meas_of([1.0, 1.0, 0.0]),
            done: false,
        }
    }

    #[test]
    fn eviction_at_capacity() {
        let mut b = ReplayBuffer::new(3, 4);
        for i in 0..4 {
            b.store(&t(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let kept: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().action).collect();
        assert_eq!(kept, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn stored_transition_round_trips() {
        let mut b = ReplayBuffer::new(8, 4);
        let x = Transition {
            state: vec![0.1, -2.5e-310, 3.0, f64::MIN_POSITIVE],
            ..t(0.3)
        };
        b.store(&x).unwrap();
        assert_eq!(b.get(0).unwrap(), x);
        assert!(b.store(&Transition { state: vec![0.0; 3], ..t(0.0) }).is_err());
    }

    #[test]
    fn sampling_needs_a_full_batch() {
        let mut b = ReplayBuffer::new(100, 4);
        for i in 0..10 {
            b.store(&t(i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.sample_indices(64, &mut rng),
            Err(Error::NotEnoughData { have: 10, need: 64 })
        ));
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(10, 4);
        for i in 0..10 {
            b.store(&t(i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n / 10 {
            for i in b.sample_indices(10, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 0.1;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
