//! Anything that can drive a drone inside the arena.

use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::arena::{observation, AgentId, EpisodeState, WorldConfig};
use crate::dynamics::ControlCommand;
use crate::error::Result;
use crate::policy::PolicyParameters;

pub trait Controller: Send + Sync {
    fn act(
        &self,
        st: &EpisodeState,
        agent: AgentId,
        cfg: &WorldConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<ControlCommand>;

    fn name(&self) -> String;
}

impl fmt::Debug for dyn Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Controller({})", self.name())
    }
}

/// A trained network. Stochastic mode samples from the Gaussian head,
/// deterministic mode returns the mean and never touches `rng`.
#[derive(Debug, Clone)]
pub struct LearnedController {
    pub policy: Arc<PolicyParameters>,
    pub deterministic: bool,
    pub label: String,
}

impl LearnedController {
    pub fn new(policy: PolicyParameters, deterministic: bool) -> Self {
        Self {
            policy: Arc::new(policy),
            deterministic,
            label: "policy".into(),
        }
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl Controller for LearnedController {
    fn act(
        &self,
        st: &EpisodeState,
        agent: AgentId,
        cfg: &WorldConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<ControlCommand> {
        let obs = observation(st, cfg, agent)?;
        self.policy
            .act(obs.as_slice(), self.deterministic, rng)?
            .command()
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Hovers in place.
#[derive(Debug, Clone, Copy, Default)]
pub struct Idle;

impl Controller for Idle {
    fn act(
        &self,
        _: &EpisodeState,
        _: AgentId,
        _: &WorldConfig,
        _: &mut ChaCha8Rng,
    ) -> Result<ControlCommand> {
        Ok(ControlCommand::ZERO)
    }

    fn name(&self) -> String {
        "idle".into()
    }
}
