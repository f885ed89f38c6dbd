//! Goal-conditioned DDPG: networks, replay, the learner, its environment and
//! the training loop.

mod ddpg;
mod env;
pub mod networks;
mod replay;
mod train;

pub use ddpg::{Agent, AgentConfig, Batch, TrainStats};
pub use env::{EnvConfig, Environment, LinkEnv, Observation, StepOutcome};
pub(crate) use env::observation;
pub use networks::{ActorNet, CriticNet, NetConfig};
pub use replay::{ReplayBuffer, Transition};
pub use train::{curve_csv, run_training, CurveRow, PlateauRule, TrainConfig, TrainOutcome};
