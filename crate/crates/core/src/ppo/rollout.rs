//! On-policy rollout collection over persistent environments.
//!
//! Every agent's experience is buffered as its own trajectory and moved into
//! the side's batch when the agent's episode ends (terminal outcome or
//! chaser deactivation) or when the side's batch is full, in which case the
//! open trajectory is truncated and bootstrapped from the value of the
//! agent's current observation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RolloutBatch, Segment};
use crate::arena::{
    observation, spawn_episode_with, step_env, AgentId, EpisodeState, JointAction, Outcome,
    RewardWeights, WorldConfig,
};
use crate::controller::Controller;
use crate::dynamics::ControlCommand;
use crate::error::{Error, Result};
use crate::policy::{PolicyParameters, ValueParameters};

/// How one side acts during collection.
#[derive(Clone, Copy)]
pub enum SideRole<'a> {
    /// Sample from the policy and record transitions.
    Train {
        policy: &'a PolicyParameters,
        value: &'a ValueParameters,
    },
    /// Act through a controller, record nothing.
    Fixed(&'a dyn Controller),
}

impl SideRole<'_> {
    fn trains(&self) -> bool {
        matches!(self, SideRole::Train { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpisodeSummary {
    pub episode_id: u64,
    pub outcome: Outcome,
    pub steps: usize,
    /// Unscaled episode return of the runner.
    pub runner_return: f64,
    /// Unscaled return averaged over the chasers spawned (0 without chasers).
    pub chaser_return: f64,
    pub chasers_deactivated: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Collection {
    pub runner: Option<RolloutBatch>,
    pub chaser: Option<RolloutBatch>,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, Default)]
struct Traj {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
}

impl Traj {
    fn len(&self) -> usize {
        self.rewards.len()
    }

    fn flush_into(
        &mut self,
        batch: &mut RolloutBatch,
        episode_id: u64,
        done: bool,
        bootstrap: f64,
    ) {
        let n = self.len();
        if n == 0 {
            return;
        }
        batch.segments.push(Segment {
            start: batch.len(),
            len: n,
            bootstrap,
        });
        batch.obs.append(&mut self.obs);
        batch.actions.append(&mut self.actions);
        batch.log_prob_old.append(&mut self.log_probs);
        batch.rewards.append(&mut self.rewards);
        batch.value_old.append(&mut self.values);
        batch.dones.extend(std::iter::repeat_n(false, n - 1));
        batch.dones.push(done);
        batch.episode_id.extend(std::iter::repeat_n(episode_id, n));
    }
}

struct EnvSlot {
    state: EpisodeState,
    rng: ChaCha8Rng,
    episode_id: u64,
    returns: Vec<f64>,
    deactivated: usize,
    /// Index 0 is the runner, `1 + i` chaser `i`.
    pending: Vec<Traj>,
}

fn agent_of(k: usize) -> AgentId {
    if k == 0 {
        AgentId::Runner
    } else {
        AgentId::Chaser(k - 1)
    }
}

/// Persistent set of environments; episodes carry over between calls.
pub struct Collector {
    world: WorldConfig,
    weights: RewardWeights,
    n_spawn: usize,
    envs: Vec<EnvSlot>,
    next_episode: u64,
}

impl Collector {
    /// `n_spawn` chasers are placed per episode (0 for navigation-only
    /// training); observation sizes always follow `world.n_chasers`.
    pub fn new(
        world: WorldConfig,
        weights: RewardWeights,
        n_spawn: usize,
        n_envs: usize,
        seed: u64,
    ) -> Result<Self> {
        world.validate()?;
        weights.validate()?;
        if n_spawn > world.n_chasers {
            return Err(Error::Config(format!(
                "cannot spawn {n_spawn} chasers with n_chasers = {}",
                world.n_chasers
            )));
        }
        if n_envs == 0 {
            return Err(Error::Config("need at least one environment".into()));
        }
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let mut envs = Vec::with_capacity(n_envs);
        for k in 0..n_envs {
            let mut rng = ChaCha8Rng::from_rng(&mut seeder);
            let state = spawn_episode_with(&world, n_spawn, &mut rng)?;
            envs.push(EnvSlot {
                state,
                rng,
                episode_id: k as u64,
                returns: vec![0.0; 1 + n_spawn],
                deactivated: 0,
                pending: vec![Traj::default(); 1 + n_spawn],
            });
        }
        Ok(Self {
            world,
            weights,
            n_spawn,
            envs,
            next_episode: n_envs as u64,
        })
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }

    pub fn states(&self) -> impl Iterator<Item = &EpisodeState> {
        self.envs.iter().map(|e| &e.state)
    }

    fn pending_len(&self, side_runner: bool) -> usize {
        self.envs
            .iter()
            .map(|e| {
                if side_runner {
                    e.pending[0].len()
                } else {
                    e.pending[1..].iter().map(Traj::len).sum()
                }
            })
            .sum()
    }

    /// Truncate every open trajectory of one side, bootstrapping from the
    /// value of the agent's current observation.
    fn close_side(
        &mut self,
        side_runner: bool,
        value: &ValueParameters,
        batch: &mut RolloutBatch,
    ) -> Result<()> {
        for env in &mut self.envs {
            let range = if side_runner {
                0..1
            } else {
                1..env.pending.len()
            };
            for k in range {
                if env.pending[k].len() == 0 {
                    continue;
                }
                let obs = observation(&env.state, &self.world, agent_of(k))?;
                let v = value.forward(obs.as_slice())?;
                env.pending[k].flush_into(batch, env.episode_id, false, v);
            }
        }
        Ok(())
    }

    /// Step until each training side has `buffer_size` transitions. Sides
    /// given as [`SideRole::Fixed`] get no batch.
    pub fn collect(
        &mut self,
        runner: SideRole<'_>,
        chaser: SideRole<'_>,
        buffer_size: usize,
        reward_scale: f64,
    ) -> Result<Collection> {
        if !runner.trains() && !chaser.trains() {
            return Err(Error::InvalidInput(
                "collect needs at least one training side".into(),
            ));
        }
        if buffer_size == 0 {
            return Err(Error::InvalidInput("buffer_size must be > 0".into()));
        }
        if chaser.trains() && self.n_spawn == 0 {
            return Err(Error::InvalidInput(
                "cannot train chasers when none are spawned".into(),
            ));
        }
        let mut out = Collection {
            runner: runner.trains().then(RolloutBatch::default),
            chaser: chaser.trains().then(RolloutBatch::default),
            episodes: Vec::new(),
        };
        let mut open_r = runner.trains();
        let mut open_c = chaser.trains();
        let mut env_ix = 0;
        while open_r || open_c {
            if open_r
                && out.runner.as_ref().map_or(0, |b| b.len()) + self.pending_len(true)
                    >= buffer_size
            {
                if let (SideRole::Train { value, .. }, Some(b)) = (runner, out.runner.as_mut()) {
                    self.close_side(true, value, b)?;
                }
                open_r = false;
                continue;
            }
            if open_c
                && out.chaser.as_ref().map_or(0, |b| b.len()) + self.pending_len(false)
                    >= buffer_size
            {
                if let (SideRole::Train { value, .. }, Some(b)) = (chaser, out.chaser.as_mut()) {
                    self.close_side(false, value, b)?;
                }
                open_c = false;
                continue;
            }
            self.step_env_slot(
                env_ix,
                runner,
                chaser,
                open_r,
                open_c,
                reward_scale,
                &mut out,
            )?;
            env_ix = (env_ix + 1) % self.envs.len();
        }
        for b in [out.runner.as_mut(), out.chaser.as_mut()]
            .into_iter()
            .flatten()
        {
            trim(b, buffer_size);
            b.check()?;
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn step_env_slot(
        &mut self,
        ix: usize,
        runner: SideRole<'_>,
        chaser: SideRole<'_>,
        record_r: bool,
        record_c: bool,
        reward_scale: f64,
        out: &mut Collection,
    ) -> Result<()> {
        let world = &self.world;
        let env = &mut self.envs[ix];
        let n = env.state.chasers.len();
        let mut recorded = vec![false; 1 + n];
        let mut cmds: Vec<Option<ControlCommand>> = Vec::with_capacity(1 + n);
        for k in 0..=n {
            let agent = agent_of(k);
            if k > 0 && !env.state.chaser_alive[k - 1] {
                cmds.push(None);
                continue;
            }
            let (role, record) = if k == 0 {
                (runner, record_r)
            } else {
                (chaser, record_c)
            };
            let cmd = match role {
                SideRole::Fixed(c) => c.act(&env.state, agent, world, &mut env.rng)?,
                SideRole::Train { policy, value } => {
                    let obs = observation(&env.state, world, agent)?;
                    let sample = policy.distribution(obs.as_slice())?.sample(&mut env.rng);
                    let cmd = sample.command()?;
                    if record {
                        let v = value.forward(obs.as_slice())?;
                        let t = &mut env.pending[k];
                        t.obs.push(obs.0);
                        t.actions.push(sample.raw);
                        t.log_probs.push(sample.log_prob);
                        t.values.push(v);
                        recorded[k] = true;
                    }
                    cmd
                }
            };
            cmds.push(Some(cmd));
        }
        let joint = JointAction {
            runner: cmds[0].unwrap_or(ControlCommand::ZERO),
            chasers: cmds[1..].to_vec(),
        };
        let res = step_env(&env.state, &joint, world, &self.weights, &mut env.rng)?;
        let rewards = res.rewards.to_vec();
        for (k, r) in rewards.iter().enumerate() {
            env.returns[k] += r;
            if recorded[k] {
                env.pending[k].rewards.push(r * reward_scale);
            }
        }
        for &i in &res.deactivated {
            env.deactivated += 1;
            if let Some(b) = out.chaser.as_mut() {
                env.pending[1 + i].flush_into(b, env.episode_id, true, 0.0);
            }
        }
        if res.done {
            if let Some(b) = out.runner.as_mut() {
                env.pending[0].flush_into(b, env.episode_id, true, 0.0);
            }
            if let Some(b) = out.chaser.as_mut() {
                for t in &mut env.pending[1..] {
                    t.flush_into(b, env.episode_id, true, 0.0);
                }
            }
            let chaser_return = if n == 0 {
                0.0
            } else {
                env.returns[1..].iter().sum::<f64>() / n as f64
            };
            out.episodes.push(EpisodeSummary {
                episode_id: env.episode_id,
                outcome: res.outcome,
                steps: res.state.step,
                runner_return: env.returns[0],
                chaser_return,
                chasers_deactivated: env.deactivated,
            });
            env.state = spawn_episode_with(world, self.n_spawn, &mut env.rng)?;
            env.episode_id = self.next_episode;
            self.next_episode += 1;
            env.returns.iter_mut().for_each(|r| *r = 0.0);
            env.deactivated = 0;
        } else {
            env.state = res.state;
        }
        Ok(())
    }
}

/// Drop transitions from the end until `len == n`. A cut segment is
/// bootstrapped from the stored value of the first dropped transition,
/// which is the value of its successor observation.
fn trim(b: &mut RolloutBatch, n: usize) {
    while b.len() > n {
        let popped_value = b.value_old.pop().unwrap_or(0.0);
        b.obs.pop();
        b.actions.pop();
        b.log_prob_old.pop();
        b.rewards.pop();
        b.dones.pop();
        b.episode_id.pop();
        let Some(seg) = b.segments.last_mut() else {
            break;
        };
        seg.len -= 1;
        if seg.len == 0 {
            b.segments.pop();
        } else {
            seg.bootstrap = popped_value;
            if let Some(d) = b.dones.last_mut() {
                *d = false;
            }
        }
    }
}
