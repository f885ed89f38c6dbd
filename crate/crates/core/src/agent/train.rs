use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ddpg::{Agent, TrainStats};
use super::env::Environment;
use super::replay::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::objective::{compute_reward, sample_random_goal};

/// Stop once the logged batch-mean Q of the last `window` rows fails to beat
/// the `window` rows before it by `min_gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauRule {
    pub window: usize,
    pub min_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub log_every: usize,
    #[serde(default)]
    pub plateau: Option<PlateauRule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 50_000,
            log_every: 100,
            plateau: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub iter: usize,
    /// Means over the train steps since the previous row; NaN before the
    /// first step.
    pub critic_loss: f64,
    pub mean_q: f64,
    pub mean_reward: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl CurveRow {
    pub const HEADER: &'static str = "iter,critic_loss,mean_q,mean_reward,g1,g2,g3";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.9},{:.6},{:.6},{:.6}",
            self.iter, self.critic_loss, self.mean_q, self.mean_reward, self.g1, self.g2, self.g3
        )
    }
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(CurveRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub struct TrainOutcome {
    pub agent: Agent,
    pub curve: Vec<CurveRow>,
    pub iterations: usize,
    pub episodes: usize,
    pub stopped_on_plateau: bool,
}

fn plateaued(curve: &[CurveRow], rule: &PlateauRule) -> bool {
    let w = rule.window.max(1);
    if curve.len() < 2 * w {
        return false;
    }
    let mean = |rows: &[CurveRow]| rows.iter().map(|r| r.mean_q).sum::<f64>() / rows.len() as f64;
    let recent = mean(&curve[curve.len() - w..]);
    let before = mean(&curve[curve.len() - 2 * w..curve.len() - w]);
    recent.is_finite() && before.is_finite() && recent - before < rule.min_gain
}

/// Random-goal episodes against `env`: one environment step per iteration and
/// one train step per iteration once the warm-up is collected.
pub fn run_training<E: Environment, R: Rng + ?Sized>(
    env: &mut E,
    mut agent: Agent,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if cfg.log_every == 0 {
        return Err(Error::Config("log_every must be positive".into()));
    }
    let acfg = agent.config.clone();
    let warmup = acfg.warmup.max(acfg.batch_size);
    let mut buffer = ReplayBuffer::new(acfg.replay_capacity, acfg.state_len());
    let mut curve = Vec::with_capacity(cfg.iterations / cfg.log_every);
    let (mut loss_sum, mut q_sum, mut steps, mut reward_sum) = (0.0, 0.0, 0usize, 0.0);
    let mut it = 0;
    let mut episodes = 0;
    let mut stopped_on_plateau = false;

    'outer: while it < cfg.iterations {
        let goal = sample_random_goal(rng);
        let mut obs = env.reset()?;
        episodes += 1;
        for _ in 0..acfg.episode_length {
            if it >= cfg.iterations {
                break 'outer;
            }
            let sigma = acfg.noise_sigma(it, cfg.iterations);
            let action = agent.act_explore(&obs.state, &obs.measurement, &goal, sigma, rng)?;
            let step = env.step(action)?;
            let reward = compute_reward(&step.obs.measurement, &goal, &acfg.reward);
            buffer.store(&Transition {
                state: obs.state,
                measurement: obs.measurement,
                goal,
                action,
                reward,
                next_state: step.obs.state.clone(),
                next_measurement: step.obs.measurement,
                done: step.done,
            })?;
            reward_sum += reward;
            if buffer.len() >= warmup {
                let TrainStats { critic_loss, mean_q } = agent.train_step(&buffer, rng)?;
                loss_sum += critic_loss;
                q_sum += mean_q;
                steps += 1;
            }
            it += 1;
            if it % cfg.log_every == 0 {
                let w = goal.weights();
                let per = |x: f64| if steps > 0 { x / steps as f64 } else { f64::NAN };
                curve.push(CurveRow {
                    iter: it,
                    critic_loss: per(loss_sum),
                    mean_q: per(q_sum),
                    mean_reward: reward_sum / cfg.log_every as f64,
                    g1: w[0],
                    g2: w[1],
                    g3: w[2],
                });
                (loss_sum, q_sum, steps, reward_sum) = (0.0, 0.0, 0, 0.0);
                if let Some(rule) = &cfg.plateau {
                    if plateaued(&curve, rule) {
                        stopped_on_plateau = true;
                        break 'outer;
                    }
                }
            }
            obs = step.obs;
            if step.done {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        agent,
        curve,
        iterations: it,
        episodes,
        stopped_on_plateau,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::agent::env::{Observation, StepOutcome};
    use crate::agent::{AgentConfig, NetConfig};
    use crate::objective::{Measurement, PhysicalMeasurement};

    /// Throughput tracks the action; delay grows once it exceeds 1.
    struct Toy {
        t: u64,
        len: usize,
    }

    impl Toy {
        fn obs(&self, a: f64) -> Observation {
            Observation {
                state: vec![a; self.len],
                measurement: Measurement {
                    thr_norm: a.min(1.0),
                    delay_ratio: 1.0 + (a - 1.0).max(0.0),
                    loss_rate: 0.0,
                },
                physical: PhysicalMeasurement::default(),
                time_ms: self.t,
            }
        }
    }

    impl Environment for Toy {
        fn reset(&mut self) -> Result<Observation> {
            self.t = 0;
            Ok(self.obs(0.0))
        }
        fn step(&mut self, a: f64) -> Result<StepOutcome> {
            self.t += 1;
            Ok(StepOutcome {
                obs: self.obs(a),
                done: self.t % 37 == 0,
            })
        }
    }

    fn small_agent(seed: u64) -> Agent {
        let cfg = AgentConfig {
            net: NetConfig {
                history_len: 4,
                conv_filters: 4,
                conv_width: 2,
                hidden: [8, 8, 4],
                merge_width: 8,
                final_init: 3e-3,
            },
            bound: 2.0,
            batch_size: 16,
            replay_capacity: 500,
            warmup: 50,
            episode_length: 60,
            ..AgentConfig::default()
        };
        Agent::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn train(seed: u64, iters: usize) -> TrainOutcome {
        let mut env = Toy { t: 0, len: 16 };
        let cfg = TrainConfig {
            iterations: iters,
            log_every: 25,
            plateau: None,
        };
        run_training(&mut env, small_agent(seed), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn budget_and_curve_length() {
        let out = train(1, 300);
        assert_eq!(out.iterations, 300);
        assert_eq!(out.curve.len(), 12);
        assert!(out.curve[0].critic_loss.is_nan());
        assert!(out.curve.last().unwrap().critic_loss.is_finite());
        assert!(out.episodes > 300 / 60);
        let csv = curve_csv(&out.curve);
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with(CurveRow::HEADER));
    }

    #[test]
    fn equal_seeds_train_identically() {
        let a = train(5, 200);
        let b = train(5, 200);
        assert_eq!(a.agent.to_container().unwrap(), b.agent.to_container().unwrap());
        assert_ne!(a.agent.to_container().unwrap(), train(6, 200).agent.to_container().unwrap());
    }

    #[test]
    fn plateau_rule_stops_early() {
        let mut env = Toy { t: 0, len: 16 };
        let cfg = TrainConfig {
            iterations: 5000,
            log_every: 10,
            plateau: Some(PlateauRule {
                window: 3,
                min_gain: f64::INFINITY,
            }),
        };
        let out = run_training(&mut env, small_agent(2), &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(out.stopped_on_plateau);
        assert!(out.iterations < 5000);
    }
}
