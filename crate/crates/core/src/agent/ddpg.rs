use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::networks::{ActorNet, CriticNet, NetConfig, GOAL_DIM, MEAS_DIM, STATE_FEATURES};
use super::replay::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::nn::{adam_step, soft_update, AdamConfig, AdamState, Container, Parameterized, Tensor};
use crate::objective::{Goal, Measurement, RewardConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub net: NetConfig,
    /// Largest rate the actor can command, Mbps.
    pub bound: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Exploration σ as a fraction of `bound`, decayed linearly from start to
    /// end over the training budget.
    pub noise_start: f64,
    pub noise_end: f64,
    pub episode_length: usize,
    /// Transitions collected before the first train step (never below the
    /// batch size).
    pub warmup: usize,
    pub reward: RewardConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            net: NetConfig::default(),
            bound: 24.0,
            tau: 0.005,
            batch_size: 64,
            replay_capacity: 100_000,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            noise_start: 0.2,
            noise_end: 0.02,
            episode_length: 400,
            warmup: 1000,
            reward: RewardConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::Config(format!("bound must be positive, got {}", self.bound)));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config("need 1 <= batch_size <= replay_capacity".into()));
        }
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be positive".into()));
        }
        if self.net.history_len < self.net.conv_width {
            return Err(Error::InputTooShort {
                len: self.net.history_len,
                width: self.net.conv_width,
            });
        }
        self.reward.validate()
    }

    pub fn state_len(&self) -> usize {
        self.net.history_len * STATE_FEATURES
    }

    /// Exploration σ in Mbps at iteration `it` of `total`.
    pub fn noise_sigma(&self, it: usize, total: usize) -> f64 {
        let frac = if total <= 1 { 1.0 } else { (it as f64 / (total - 1) as f64).min(1.0) };
        self.bound * (self.noise_start + (self.noise_end - self.noise_start) * frac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub mean_q: f64,
}

/// A sampled minibatch laid out as network inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub state: Tensor,
    pub meas: Tensor,
    pub goal: Tensor,
    /// Critic-space action `2u - 1`.
    pub action: Tensor,
    pub reward: Vec<f64>,
    pub next_state: Tensor,
    pub next_meas: Tensor,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition], cfg: &AgentConfig) -> Result<Batch> {
        let n = ts.len();
        let l = cfg.net.history_len;
        let mut state = Vec::with_capacity(n * l * STATE_FEATURES);
        let mut next_state = Vec::with_capacity(n * l * STATE_FEATURES);
        let mut meas = Vec::with_capacity(n * MEAS_DIM);
        let mut next_meas = Vec::with_capacity(n * MEAS_DIM);
        let mut goal = Vec::with_capacity(n * GOAL_DIM);
        let mut action = Vec::with_capacity(n);
        for t in ts {
            state.extend_from_slice(&t.state);
            next_state.extend_from_slice(&t.next_state);
            meas.extend_from_slice(&t.measurement.as_array());
            next_meas.extend_from_slice(&t.next_measurement.as_array());
            goal.extend_from_slice(&t.goal.weights());
            action.push(2.0 * t.action / cfg.bound - 1.0);
        }
        Ok(Batch {
            state: Tensor::from_vec(&[n, l, STATE_FEATURES], state)?,
            meas: Tensor::from_vec(&[n, MEAS_DIM], meas)?,
            goal: Tensor::from_vec(&[n, GOAL_DIM], goal)?,
            action: Tensor::from_vec(&[n, 1], action)?,
            reward: ts.iter().map(|t| t.reward).collect(),
            next_state: Tensor::from_vec(&[n, l, STATE_FEATURES], next_state)?,
            next_meas: Tensor::from_vec(&[n, MEAS_DIM], next_meas)?,
            done: ts.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}

fn to_critic_action(u: &Tensor) -> Tensor {
    let mut a = u.clone();
    a.data_mut().iter_mut().for_each(|x| *x = 2.0 * *x - 1.0);
    a
}

/// Evaluation and target actor/critic pairs with their optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub actor_target: ActorNet,
    pub critic_target: CriticNet,
    actor_opt: AdamState,
    critic_opt: AdamState,
}

const KIND: &str = "goalcc-agent";

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actor = ActorNet::new(&config.net, rng);
        let critic = CriticNet::new(&config.net, rng);
        Ok(Self::from_nets(config, actor, critic))
    }

    fn from_nets(config: AgentConfig, actor: ActorNet, critic: CriticNet) -> Self {
        let actor_opt = AdamState::new(AdamConfig::with_lr(config.actor_lr), actor.params());
        let critic_opt = AdamState::new(AdamConfig::with_lr(config.critic_lr), critic.params());
        Agent {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            config,
        }
    }

    /// Deterministic policy output in Mbps, `bound · (tanh(z) + 1) / 2`.
    pub fn act(&self, state: &[f64], meas: &Measurement, goal: &Goal) -> Result<f64> {
        let l = self.config.net.history_len;
        let s = Tensor::from_vec(&[1, l, STATE_FEATURES], state.to_vec())?;
        let m = Tensor::from_vec(&[1, MEAS_DIM], meas.as_array().to_vec())?;
        let g = Tensor::from_vec(&[1, GOAL_DIM], goal.weights().to_vec())?;
        let (u, _) = self.actor.forward(&s, &m, &g)?;
        Ok(self.config.bound * u.data()[0])
    }

    /// [`Agent::act`] plus zero-mean Gaussian noise of `sigma` Mbps, clipped
    /// to `[0, bound]`.
    pub fn act_explore<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        meas: &Measurement,
        goal: &Goal,
        sigma: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let a = self.act(state, meas, goal)?;
        let noise = if sigma > 0.0 {
            Normal::new(0.0, sigma)
                .map_err(|e| Error::Config(format!("noise sigma {sigma}: {e}")))?
                .sample(rng)
        } else {
            0.0
        };
        Ok((a + noise).clamp(0.0, self.config.bound))
    }

    /// Bootstrapped regression targets `y = r + γ (1 - done) Q'(s', g, μ'(s'))`.
    pub fn targets(&self, batch: &Batch) -> Result<Vec<f64>> {
        let (u_next, _) = self.actor_target.forward(&batch.next_state, &batch.next_meas, &batch.goal)?;
        let (q_next, _) = self
            .critic_target
            .forward(&batch.next_state, &batch.goal, &to_critic_action(&u_next))?;
        let gamma = self.config.reward.gamma;
        Ok(batch
            .reward
            .iter()
            .zip(q_next.data())
            .zip(&batch.done)
            .map(|((r, q), d)| if *d { *r } else { r + gamma * q })
            .collect())
    }

    /// Mean squared critic error against fixed targets, with parameter
    /// gradients.
    pub fn critic_loss_grads(&self, batch: &Batch, y: &[f64]) -> Result<(f64, f64, Vec<Tensor>)> {
        let n = batch.len() as f64;
        let (q, cache) = self.critic.forward(&batch.state, &batch.goal, &batch.action)?;
        let mut dq = Tensor::zeros(&[batch.len(), 1]);
        let mut loss = 0.0;
        for ((d, q), y) in dq.data_mut().iter_mut().zip(q.data()).zip(y) {
            let e = q - y;
            loss += e * e;
            *d = 2.0 * e / n;
        }
        let (grads, _) = self.critic.backward(&cache, &dq, true)?;
        Ok((loss / n, q.mean(), grads.expect("requested parameter gradients")))
    }

    /// Batch-mean `Q(s, g, μ(s, m, g))` and its gradient w.r.t. the actor
    /// parameters.
    pub fn actor_objective_grads(&self, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
        let n = batch.len();
        let (u, acache) = self.actor.forward(&batch.state, &batch.meas, &batch.goal)?;
        let (q, ccache) = self.critic.forward(&batch.state, &batch.goal, &to_critic_action(&u))?;
        let dq = Tensor::from_vec(&[n, 1], vec![1.0 / n as f64; n])?;
        let (_, da) = self.critic.backward(&ccache, &dq, false)?;
        let mut du = da;
        du.data_mut().iter_mut().for_each(|x| *x *= 2.0);
        Ok((q.mean(), self.actor.backward(&acache, &du)?))
    }

    /// One critic Adam step against fixed targets; returns the loss before it.
    pub fn critic_step(&mut self, batch: &Batch, y: &[f64]) -> Result<f64> {
        let (loss, _, g) = self.critic_loss_grads(batch, y)?;
        adam_step(&mut self.critic.params_mut(), &g, &mut self.critic_opt)?;
        Ok(loss)
    }

    /// One critic step, one actor step (ascent), then both soft updates.
    pub fn train_on_batch(&mut self, batch: &Batch) -> Result<TrainStats> {
        let y = self.targets(batch)?;
        let (critic_loss, mean_q, cgrads) = self.critic_loss_grads(batch, &y)?;
        adam_step(&mut self.critic.params_mut(), &cgrads, &mut self.critic_opt)?;

        let (_, mut agrads) = self.actor_objective_grads(batch)?;
        for g in &mut agrads {
            g.data_mut().iter_mut().for_each(|x| *x = -*x);
        }
        adam_step(&mut self.actor.params_mut(), &agrads, &mut self.actor_opt)?;

        soft_update(&mut self.critic_target, &self.critic, self.config.tau);
        soft_update(&mut self.actor_target, &self.actor, self.config.tau);
        Ok(TrainStats { critic_loss, mean_q })
    }

    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<TrainStats> {
        let idx = buffer.sample_indices(self.config.batch_size, rng)?;
        let batch = Batch::from_transitions(&buffer.batch(&idx), &self.config)?;
        self.train_on_batch(&batch)
    }

    pub fn to_container(&self) -> Result<Container> {
        let config = serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = Vec::new();
        let groups: [(&str, Vec<(String, &Tensor)>); 4] = [
            ("actor", self.actor.named_params()),
            ("critic", self.critic.named_params()),
            ("actor_target", self.actor_target.named_params()),
            ("critic_target", self.critic_target.named_params()),
        ];
        for (prefix, params) in groups {
            for (name, t) in params {
                tensors.push((format!("{prefix}.{name}"), t.clone()));
            }
        }
        Ok(Container {
            meta: vec![("kind".into(), KIND.into()), ("config".into(), config)],
            tensors,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    /// Rebuilds an agent from the configuration stored in the checkpoint.
    /// Optimizer moments are not stored; they restart from zero.
    pub fn load_checkpoint(path: &Path) -> Result<Agent> {
        let c = Container::load(path)?;
        Self::from_container(&c)
    }

    pub fn from_container(c: &Container) -> Result<Agent> {
        if c.meta("kind") != Some(KIND) {
            return Err(Error::Checkpoint(format!("not an agent checkpoint (kind {:?})", c.meta("kind"))));
        }
        let json = c.meta("config").ok_or_else(|| Error::Checkpoint("missing config".into()))?;
        let config: AgentConfig = serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        config.validate()?;
        // Weights are overwritten below; the seed only shapes the skeleton.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = Agent::new(config, &mut rng)?;
        agent.assign_weights(c)?;
        Ok(agent)
    }

    /// Copies weights from `path` into this agent, whose shapes must match.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let c = Container::load(path)?;
        self.assign_weights(&c)
    }

    fn assign_weights(&mut self, c: &Container) -> Result<()> {
        fn fill<M: Parameterized>(net: &mut M, prefix: &str, c: &Container) -> Result<()> {
            let names = net.param_names();
            for (name, slot) in names.iter().zip(net.params_mut()) {
                let key = format!("{prefix}.{name}");
                let t = c
                    .tensors
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, t)| t)
                    .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint lacks {key}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "{key}: checkpoint {:?}, network {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                slot.data_mut().copy_from_slice(t.data());
            }
            Ok(())
        }
        let expected = 2 * (self.actor.params().len() + self.critic.params().len());
        if c.tensors.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint holds {} tensors, agent has {expected}",
                c.tensors.len()
            )));
        }
        let mut next = self.clone();
        fill(&mut next.actor, "actor", c)?;
        fill(&mut next.critic, "critic", c)?;
        fill(&mut next.actor_target, "actor_target", c)?;
        fill(&mut next.critic_target, "critic_target", c)?;
        *self = next;
        Ok(())
    }
}
