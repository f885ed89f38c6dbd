use std::collections::BTreeMap;
use std::sync::Arc;

use goalcc_core::netsim::{Ack, Endpoint, EventKind, Link, LinkConfig, Packet, Simulation, TraceSchedule, DEFAULT_MTU};
use goalcc_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Random {
    flow: u32,
    p: f64,
    seq: u64,
    rng: ChaCha8Rng,
}

impl Endpoint for Random {
    fn poll_transmit(&mut self, now: u64, out: &mut Vec<Packet>) {
        while self.rng.random_bool(self.p) {
            out.push(Packet {
                seq: self.seq,
                size: DEFAULT_MTU as u32,
                sent_at: now,
                flow_id: self.flow,
            });
            self.seq += 1;
        }
    }

    fn on_ack(&mut self, _ack: &Ack, _now: u64) -> Result<()> {
        Ok(())
    }
}

fn scenario() -> impl Strategy<Value = (LinkConfig, Vec<u64>, Vec<f64>, u64)> {
    (
        0u64..80,
        1usize..100,
        prop_oneof![Just(0.0), 0.0f64..0.3],
        any::<bool>(),
        prop::collection::vec(0u64..1500, 1..800),
        prop::collection::vec(0.01f64..0.9, 1..4),
        any::<u64>(),
    )
        .prop_map(|(owd, cap, loss, wrap, mut opps, rates, seed)| {
            opps.sort_unstable();
            let cfg = LinkConfig {
                one_way_delay_ms: owd,
                queue_capacity: cap,
                stochastic_loss: loss,
                wraparound: wrap,
            };
            (cfg, opps, rates, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn emulator_invariants_hold((cfg, opps, rates, seed) in scenario()) {
        let trace = TraceSchedule::new(opps, DEFAULT_MTU).unwrap();
        let link = Link::new(cfg, Arc::new(trace.clone()), seed).unwrap();
        let eps = rates
            .iter()
            .enumerate()
            .map(|(i, p)| Random { flow: i as u32, p: *p, seq: 0, rng: ChaCha8Rng::seed_from_u64(seed ^ i as u64) })
            .collect();
        let mut sim = Simulation::new(link, eps).with_log();
        for _ in 0..2500 {
            sim.step().unwrap();
            prop_assert!(sim.conservation().holds(), "{:?}", sim.conservation());
            prop_assert!(sim.link().queue_len() <= cfg.queue_capacity);
        }

        let log = sim.log().unwrap();
        let mut accepted = Vec::new();
        let mut delivered = Vec::new();
        let mut served_per_ms: BTreeMap<u64, u32> = BTreeMap::new();
        for e in &log.events {
            prop_assert!(e.queue_len <= cfg.queue_capacity);
            match e.kind {
                EventKind::Enqueue => accepted.push((e.flow_id, e.seq)),
                EventKind::Deliver => {
                    delivered.push((e.flow_id, e.seq));
                    *served_per_ms.entry(e.time_ms - cfg.one_way_delay_ms).or_default() += 1;
                }
                _ => {}
            }
        }
        // global FIFO implies per-flow FIFO
        prop_assert!(delivered.len() <= accepted.len());
        prop_assert_eq!(&accepted[..delivered.len()], &delivered[..]);
        for (t, n) in served_per_ms {
            prop_assert!(n <= trace.opportunities_at(t, cfg.wraparound), "{n} served at {t}");
        }
    }
}
