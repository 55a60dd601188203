//! The simulation side of a live match, independent of any transport.
//!
//! `Session` owns the episode and the outcome ledger. The network layer
//! feeds it client messages between ticks and broadcasts whatever `tick`
//! returns.

use std::collections::BTreeMap;
use std::sync::Arc;

use pursuit_core::arena::{
    step_env, AgentId, EpisodeState, JointAction, Outcome, RewardWeights, WorldConfig,
};
use pursuit_core::controller::Controller;
use pursuit_core::dynamics::{clamp_command, ControlCommand};
use pursuit_core::eval::{episode_rng, initial_state, Placement};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::wire::{AgentFrame, ChaserFrame, ClientMsg, LedgerFrame, Role, ServerMsg};
use crate::Error;

pub type ClientId = u64;

pub struct SessionSpec {
    pub world: WorldConfig,
    pub rewards: RewardWeights,
    /// `None` when a connected pilot flies the runner.
    pub runner: Option<Arc<dyn Controller>>,
    pub chaser: Arc<dyn Controller>,
    pub placement: Placement,
    pub seed: u64,
    pub tick_hz: f64,
    /// Pause after each episode, seconds.
    pub pause_secs: f64,
    /// Pilot silence after which the held command drops to zero, seconds.
    pub hold_secs: f64,
}

impl SessionSpec {
    pub fn new(
        world: WorldConfig,
        runner: Option<Arc<dyn Controller>>,
        chaser: Arc<dyn Controller>,
    ) -> Self {
        let tick_hz = 1.0 / world.dt;
        Self {
            world,
            rewards: RewardWeights::default(),
            runner,
            chaser,
            placement: Placement::Random,
            seed: 0,
            tick_hz,
            pause_secs: 1.0,
            hold_secs: 0.5,
        }
    }

    fn ticks(&self, secs: f64) -> u64 {
        (secs * self.tick_hz).round().max(0.0) as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Ledger {
    pub reached: u64,
    pub captured: u64,
    pub wall: u64,
    pub timeout: u64,
    /// Episodes aborted by a pilot reset; not part of the success rate.
    pub excluded: u64,
}

impl Ledger {
    pub fn episodes(&self) -> u64 {
        self.reached + self.captured + self.wall + self.timeout
    }

    pub fn sr_runner(&self) -> f64 {
        match self.episodes() {
            0 => 0.0,
            n => self.reached as f64 / n as f64,
        }
    }

    fn record(&mut self, o: Outcome) {
        match o {
            Outcome::ReachedTarget => self.reached += 1,
            Outcome::Captured => self.captured += 1,
            Outcome::RunnerWallCrash => self.wall += 1,
            Outcome::Timeout => self.timeout += 1,
            Outcome::Running => {}
        }
    }

    fn frame(&self) -> LedgerFrame {
        LedgerFrame {
            sr_runner: self.sr_runner(),
            episodes: self.episodes(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientInfo {
    pub role: Role,
    pub name: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub tick: u64,
    pub episode: u64,
    pub runner: String,
    pub chaser: String,
    pub pilot: Option<String>,
    pub spectators: usize,
    pub paused: bool,
    pub sr_runner: f64,
    pub episodes: u64,
    pub ledger: Ledger,
}

pub struct Session {
    id: String,
    spec: SessionSpec,
    state: EpisodeState,
    rng: ChaCha8Rng,
    tick: u64,
    episode: u64,
    clients: BTreeMap<ClientId, ClientInfo>,
    pilot: Option<ClientId>,
    held: ControlCommand,
    last_seq: Option<u64>,
    last_control_tick: u64,
    pause_left: u64,
    ledger: Ledger,
}

impl Session {
    pub fn new(id: impl Into<String>, spec: SessionSpec) -> Result<Self, Error> {
        spec.world.validate()?;
        spec.rewards.validate()?;
        if !(spec.tick_hz > 0.0 && spec.tick_hz.is_finite()) {
            return Err(Error::Config(format!(
                "tick_hz must be > 0, got {}",
                spec.tick_hz
            )));
        }
        let mut rng = episode_rng(spec.seed, 0);
        let state = initial_state(&spec.world, spec.placement, &mut rng)?;
        Ok(Self {
            id: id.into(),
            spec,
            state,
            rng,
            tick: 0,
            episode: 0,
            clients: BTreeMap::new(),
            pilot: None,
            held: ControlCommand::ZERO,
            last_seq: None,
            last_control_tick: 0,
            pause_left: 0,
            ledger: Ledger::default(),
        })
    }

    pub fn spec(&self) -> &SessionSpec {
        &self.spec
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn held_command(&self) -> ControlCommand {
        self.held
    }

    pub fn role(&self, client: ClientId) -> Option<Role> {
        self.clients.get(&client).map(|c| c.role)
    }

    fn manual(&self) -> bool {
        self.spec.runner.is_none()
    }

    fn start_episode(&mut self, index: u64) -> Result<(), Error> {
        self.episode = index;
        self.rng = episode_rng(self.spec.seed, index);
        self.state = initial_state(&self.spec.world, self.spec.placement, &mut self.rng)?;
        self.pause_left = 0;
        Ok(())
    }

    /// New connections watch until they say hello.
    pub fn connect(&mut self, client: ClientId) {
        self.clients.insert(
            client,
            ClientInfo {
                role: Role::Spectator,
                name: String::new(),
            },
        );
    }

    pub fn disconnect(&mut self, client: ClientId) {
        self.clients.remove(&client);
        if self.pilot == Some(client) {
            // the held command keeps running until the silence timeout
            self.pilot = None;
        }
    }

    /// Apply one client message; the returned frames go to that client only.
    pub fn handle_client_message(&mut self, client: ClientId, msg: ClientMsg) -> Vec<ServerMsg> {
        if !self.clients.contains_key(&client) {
            self.connect(client);
        }
        match msg {
            ClientMsg::Hello { role, name } => {
                let mut out = Vec::new();
                let granted = match role {
                    Role::Spectator => Role::Spectator,
                    Role::Pilot if !self.manual() => {
                        out.push(ServerMsg::error(
                            "runner is not manually controlled; joined as spectator",
                        ));
                        Role::Spectator
                    }
                    Role::Pilot if self.pilot.is_some_and(|p| p != client) => {
                        out.push(ServerMsg::error("pilot slot taken; joined as spectator"));
                        Role::Spectator
                    }
                    Role::Pilot => Role::Pilot,
                };
                if granted == Role::Pilot {
                    self.pilot = Some(client);
                    self.last_seq = None;
                } else if self.pilot == Some(client) {
                    self.pilot = None;
                }
                self.clients.insert(
                    client,
                    ClientInfo {
                        role: granted,
                        name,
                    },
                );
                out
            }
            ClientMsg::Control {
                vx,
                vy,
                vz,
                wz,
                seq,
            } => {
                if self.pilot != Some(client) {
                    return vec![ServerMsg::error(
                        "control rejected: only the pilot may send commands",
                    )];
                }
                if self.last_seq.is_some_and(|s| seq <= s) {
                    return Vec::new();
                }
                let cmd = ControlCommand {
                    vx_b: vx,
                    vy_b: vy,
                    vz_b: vz,
                    wz,
                };
                match clamp_command(
                    cmd,
                    self.spec.world.v_max(AgentId::Runner),
                    self.spec.world.w_max,
                ) {
                    Ok(c) => {
                        self.held = c;
                        self.last_seq = Some(seq);
                        self.last_control_tick = self.tick;
                        Vec::new()
                    }
                    Err(e) => vec![ServerMsg::error(format!("control rejected: {e}"))],
                }
            }
            ClientMsg::Reset => {
                if self.pilot != Some(client) {
                    return vec![ServerMsg::error("reset rejected: only the pilot may reset")];
                }
                self.ledger.excluded += 1;
                match self.start_episode(self.episode + 1) {
                    Ok(()) => Vec::new(),
                    Err(e) => vec![ServerMsg::error(e.to_string())],
                }
            }
        }
    }

    pub fn state_frame(&self) -> ServerMsg {
        let s = &self.state;
        ServerMsg::State {
            tick: self.tick,
            episode: self.episode,
            runner: AgentFrame {
                p: s.runner.position(),
                psi: s.runner.psi,
            },
            chasers: s
                .chasers
                .iter()
                .zip(&s.chaser_alive)
                .map(|(c, alive)| ChaserFrame {
                    p: c.position(),
                    psi: c.psi,
                    alive: *alive,
                })
                .collect(),
            target: s.target,
            bounds: self.spec.world.bounds,
        }
    }

    fn runner_command(&mut self) -> Result<ControlCommand, Error> {
        match &self.spec.runner {
            Some(c) => Ok(c.act(
                &self.state,
                AgentId::Runner,
                &self.spec.world,
                &mut self.rng,
            )?),
            None => {
                if self.tick.saturating_sub(self.last_control_tick)
                    > self.spec.ticks(self.spec.hold_secs)
                {
                    self.held = ControlCommand::ZERO;
                }
                Ok(self.held)
            }
        }
    }

    /// Advance one tick. Returns the frames to broadcast: always a state
    /// frame, followed by an outcome frame when an episode ends.
    pub fn tick(&mut self) -> Result<Vec<ServerMsg>, Error> {
        self.tick += 1;
        if self.pause_left > 0 {
            self.pause_left -= 1;
            if self.pause_left == 0 {
                self.start_episode(self.episode + 1)?;
            }
            return Ok(vec![self.state_frame()]);
        }
        let runner = self.runner_command()?;
        let world = &self.spec.world;
        let mut chasers = Vec::with_capacity(self.state.chasers.len());
        for i in 0..self.state.chasers.len() {
            chasers.push(if self.state.chaser_alive[i] {
                Some(
                    self.spec
                        .chaser
                        .act(&self.state, AgentId::Chaser(i), world, &mut self.rng)?,
                )
            } else {
                None
            });
        }
        let res = step_env(
            &self.state,
            &JointAction { runner, chasers },
            world,
            &self.spec.rewards,
            &mut self.rng,
        )?;
        self.state = res.state;
        let mut out = vec![self.state_frame()];
        if res.done {
            self.ledger.record(res.outcome);
            out.push(ServerMsg::Outcome {
                episode: self.episode,
                result: res.outcome.label().into(),
                ledger: self.ledger.frame(),
            });
            self.pause_left = self.spec.ticks(self.spec.pause_secs);
            if self.pause_left == 0 {
                self.start_episode(self.episode + 1)?;
            }
        }
        Ok(out)
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            tick: self.tick,
            episode: self.episode,
            runner: self
                .spec
                .runner
                .as_ref()
                .map_or("manual".into(), |c| c.name()),
            chaser: self.spec.chaser.name(),
            pilot: self
                .pilot
                .and_then(|p| self.clients.get(&p))
                .map(|c| c.name.clone()),
            spectators: self
                .clients
                .values()
                .filter(|c| c.role == Role::Spectator)
                .count(),
            paused: self.pause_left > 0,
            sr_runner: self.ledger.sr_runner(),
            episodes: self.ledger.episodes(),
            ledger: self.ledger.clone(),
        }
    }
}
