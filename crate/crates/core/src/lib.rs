//! Q-learning with neural-network value approximation on cart-pole, with two
//! pseudorehearsal strategies for mitigating catastrophic forgetting.
//!
//! Modules, bottom-up:
//! * [`mlp`]: sigmoid/linear network with activation traces and backprop.
//! * [`cartpole`]: cart-pole physics and observations.
//! * [`encoders`]: sign-split and sparse unary feature encodings.
//! * [`rehearsal`]: pseudoset generation, Frean-Robins correction, batch rehearsal.
//! * [`agent`]: ε-greedy Q-learning delegating updates to a rehearsal strategy.
//! * [`harness`]: episodes, grid cells, sweeps and mean/median summaries.

pub mod agent;
pub mod cartpole;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod mlp;
pub mod rehearsal;
pub mod rng;

pub use agent::{Agent, AgentConfig, Transition};
pub use cartpole::{Action, CartPoleState, Observability, Observation, PhysicsParams};
pub use encoders::{EncoderKind, EncoderSpec, FeatureVector};
pub use error::{Error, Result};
pub use harness::{
    CellResult, CellSpec, CellStrategy, CellSummary, Classification, EpisodeLog, Protocol,
    SweepResult, SweepSpec,
};
pub use mlp::{ActivationTrace, LayerErrors, Network, NetworkSpec};
pub use rehearsal::{PseudoSet, RehearsalConfig, Strategy};
