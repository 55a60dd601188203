//! The pursuit-evasion arena: geometry, spawning, observations, event
//! detection, rewards and the joint step function.
//!
//! World coordinates put the origin at a floor corner of the room, so every
//! valid position lies in `[0, W] x [0, L] x [0, H]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    clamp_command, step_kinematic, world_to_body, AgentState, ControlCommand, NoiseSpec,
};
use crate::error::{Error, Result};

/// How runner arrival at the target is detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalMode {
    /// Runner box collider overlaps the target box.
    Collider,
    /// Runner center within `threshold` meters of the target center.
    Distance { threshold: f64 },
}

/// Frame in which relative positions are presented to policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationFrame {
    /// Raw world-axis differences.
    World,
    /// Differences rotated into the observing drone's heading frame, so a
    /// body-frame command proportional to an entry points at that entry.
    Heading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Room size (width, length, height), meters.
    pub bounds: [f64; 3],
    pub n_chasers: usize,
    /// Drone box collider (L, W, H), meters.
    pub drone_collider: [f64; 3],
    /// Edge of the cubic target box, meters.
    pub target_size: f64,
    pub arrival: ArrivalMode,
    /// Physics step, seconds.
    pub dt: f64,
    /// Maximum steps per episode.
    pub t_max: usize,
    pub runner_v_max: f64,
    pub chaser_v_max: f64,
    pub w_max: f64,
    pub noise: NoiseSpec,
    /// Minimum center distance between spawned objects, meters.
    pub spawn_clearance: f64,
    /// Extra distance kept from the walls beyond half the object size.
    pub spawn_wall_margin: f64,
    pub observation_frame: ObservationFrame,
    /// Divide observations by the room diagonal.
    pub normalize_observations: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            bounds: [5.0, 5.0, 3.0],
            n_chasers: 2,
            drone_collider: [0.30, 0.30, 0.05],
            target_size: 0.20,
            arrival: ArrivalMode::Collider,
            dt: 0.05,
            t_max: 1000,
            runner_v_max: 1.0,
            chaser_v_max: 1.0,
            w_max: 20.0,
            noise: NoiseSpec::default(),
            spawn_clearance: 0.8,
            spawn_wall_margin: 0.1,
            observation_frame: ObservationFrame::Heading,
            normalize_observations: false,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("world.{name} must be > 0, got {v}")))
            }
        };
        for (i, b) in self.bounds.iter().enumerate() {
            positive(&format!("bounds[{i}]"), *b)?;
        }
        for (i, c) in self.drone_collider.iter().enumerate() {
            positive(&format!("drone_collider[{i}]"), *c)?;
        }
        positive("target_size", self.target_size)?;
        positive("dt", self.dt)?;
        positive("runner_v_max", self.runner_v_max)?;
        positive("chaser_v_max", self.chaser_v_max)?;
        positive("w_max", self.w_max)?;
        positive("spawn_clearance", self.spawn_clearance)?;
        if let ArrivalMode::Distance { threshold } = self.arrival {
            positive("arrival.threshold", threshold)?;
        }
        if self.spawn_wall_margin < 0.0 {
            return Err(Error::Config("world.spawn_wall_margin must be >= 0".into()));
        }
        if self.t_max < 1 {
            return Err(Error::Config("world.t_max must be >= 1".into()));
        }
        if self.n_chasers < 1 {
            return Err(Error::Config("world.n_chasers must be >= 1".into()));
        }
        self.noise.validate()
    }

    pub fn runner_obs_dim(&self) -> usize {
        3 * (self.n_chasers + 1)
    }

    pub fn chaser_obs_dim(&self) -> usize {
        3 * self.n_chasers
    }

    pub fn diagonal(&self) -> f64 {
        self.bounds.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    /// Placeholder relative vector for absent or deactivated chasers.
    pub fn sentinel(&self) -> [f64; 3] {
        self.bounds
    }

    fn drone_margin(&self) -> [f64; 3] {
        let m = self.spawn_wall_margin;
        [
            self.drone_collider[0] / 2.0 + m,
            self.drone_collider[1] / 2.0 + m,
            self.drone_collider[2] / 2.0 + m,
        ]
    }

    fn target_margin(&self) -> [f64; 3] {
        [self.target_size / 2.0 + self.spawn_wall_margin; 3]
    }

    /// Corners `(lo, hi)` of the box where a drone may spawn.
    pub fn drone_region(&self) -> ([f64; 3], [f64; 3]) {
        let m = self.drone_margin();
        (m, std::array::from_fn(|k| self.bounds[k] - m[k]))
    }

    /// Corners `(lo, hi)` of the box where the target may spawn.
    pub fn target_region(&self) -> ([f64; 3], [f64; 3]) {
        let m = self.target_margin();
        (m, std::array::from_fn(|k| self.bounds[k] - m[k]))
    }

    /// Whether `p` keeps a drone's spawn margin from every wall.
    pub fn drone_spawnable(&self, p: [f64; 3]) -> bool {
        let m = self.drone_margin();
        (0..3).all(|k| p[k] >= m[k] && p[k] <= self.bounds[k] - m[k])
    }

    /// Clamp `p` into the drone spawn region.
    pub fn clamp_to_drone_region(&self, p: [f64; 3]) -> [f64; 3] {
        let m = self.drone_margin();
        std::array::from_fn(|k| p[k].clamp(m[k], self.bounds[k] - m[k]))
    }

    pub fn v_max(&self, agent: AgentId) -> f64 {
        match agent {
            AgentId::Runner => self.runner_v_max,
            AgentId::Chaser(_) => self.chaser_v_max,
        }
    }
}

/// Reward constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub c1: f64,
    pub c2: f64,
    pub w1: f64,
    /// Chaser-chaser risk distance, meters.
    pub d_eps: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            c1: 1000.0,
            c2: 1000.0,
            w1: 10000.0,
            d_eps: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("w1", self.w1),
            ("d_eps", self.d_eps),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "rewards.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn existential_penalty(&self, t_max: usize) -> f64 {
        -self.w1 / t_max as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentId {
    Runner,
    Chaser(usize),
}

/// Full world snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub runner: AgentState,
    pub chasers: Vec<AgentState>,
    pub target: [f64; 3],
    pub step: usize,
    pub initial_distance: f64,
    pub chaser_alive: Vec<bool>,
}

impl EpisodeState {
    /// Build a state from explicit placements.
    pub fn new(runner: AgentState, chasers: Vec<AgentState>, target: [f64; 3]) -> Self {
        let initial_distance = dist(runner.position(), target);
        let n = chasers.len();
        Self {
            runner,
            chasers,
            target,
            step: 0,
            initial_distance,
            chaser_alive: vec![true; n],
        }
    }

    pub fn runner_target_distance(&self) -> f64 {
        dist(self.runner.position(), self.target)
    }

    pub fn alive_chasers(&self) -> impl Iterator<Item = (usize, &AgentState)> {
        self.chasers
            .iter()
            .enumerate()
            .filter(|(i, _)| self.chaser_alive[*i])
    }

    pub fn agent(&self, id: AgentId) -> &AgentState {
        match id {
            AgentId::Runner => &self.runner,
            AgentId::Chaser(i) => &self.chasers[i],
        }
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(sub(a, b))
}

/// Flat vector of relative positions in meters (or normalized units).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn push_relative(out: &mut Vec<f64>, rel: [f64; 3], psi: f64, cfg: &WorldConfig) {
    let rel = match cfg.observation_frame {
        ObservationFrame::World => rel,
        ObservationFrame::Heading => {
            let b = world_to_body(psi, [rel[0], rel[1]]);
            [b[0], b[1], rel[2]]
        }
    };
    out.extend_from_slice(&rel);
}

fn finish(mut v: Vec<f64>, cfg: &WorldConfig) -> Observation {
    if cfg.normalize_observations {
        let d = cfg.diagonal();
        v.iter_mut().for_each(|x| *x /= d);
    }
    Observation(v)
}

/// Runner observation: target-relative position, then each chaser slot in
/// index order. Slots for absent or deactivated chasers hold the sentinel.
pub fn runner_observation(st: &EpisodeState, cfg: &WorldConfig) -> Observation {
    let p = st.runner.position();
    let mut v = Vec::with_capacity(cfg.runner_obs_dim());
    push_relative(&mut v, sub(st.target, p), st.runner.psi, cfg);
    for j in 0..cfg.n_chasers {
        match st.chasers.get(j) {
            Some(c) if st.chaser_alive[j] => {
                push_relative(&mut v, sub(c.position(), p), st.runner.psi, cfg)
            }
            _ => v.extend_from_slice(&cfg.sentinel()),
        }
    }
    finish(v, cfg)
}

/// Chaser `i` observation: teammates in ascending index order (skipping
/// `i`), then the runner-relative position.
pub fn chaser_observation(st: &EpisodeState, cfg: &WorldConfig, i: usize) -> Result<Observation> {
    let me = st.chasers.get(i).ok_or_else(|| {
        Error::InvalidInput(format!(
            "chaser index {i} out of range ({})",
            st.chasers.len()
        ))
    })?;
    if i >= cfg.n_chasers {
        return Err(Error::InvalidInput(format!(
            "chaser index {i} >= n_chasers {}",
            cfg.n_chasers
        )));
    }
    let p = me.position();
    let mut v = Vec::with_capacity(cfg.chaser_obs_dim());
    for j in (0..cfg.n_chasers).filter(|j| *j != i) {
        match st.chasers.get(j) {
            Some(c) if st.chaser_alive[j] => {
                push_relative(&mut v, sub(c.position(), p), me.psi, cfg)
            }
            _ => v.extend_from_slice(&cfg.sentinel()),
        }
    }
    push_relative(&mut v, sub(st.runner.position(), p), me.psi, cfg);
    Ok(finish(v, cfg))
}

pub fn observation(st: &EpisodeState, cfg: &WorldConfig, agent: AgentId) -> Result<Observation> {
    match agent {
        AgentId::Runner => Ok(runner_observation(st, cfg)),
        AgentId::Chaser(i) => chaser_observation(st, cfg, i),
    }
}

fn sample_point<R: Rng + ?Sized>(
    cfg: &WorldConfig,
    margin: [f64; 3],
    rng: &mut R,
) -> Result<[f64; 3]> {
    let mut p = [0.0; 3];
    for k in 0..3 {
        let lo = margin[k];
        let hi = cfg.bounds[k] - margin[k];
        if lo >= hi {
            return Err(Error::Config(format!(
                "arena axis {k} too small for spawn margins"
            )));
        }
        p[k] = rng.random_range(lo..hi);
    }
    Ok(p)
}

pub fn random_heading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // (-pi, pi]
    std::f64::consts::PI - rng.random_range(0.0..std::f64::consts::TAU)
}

const SPAWN_ATTEMPTS: usize = 200;
const SPAWN_RESTARTS: usize = 100;

/// Spawn an episode with `cfg.n_chasers` chasers.
pub fn spawn_episode<R: Rng + ?Sized>(cfg: &WorldConfig, rng: &mut R) -> Result<EpisodeState> {
    spawn_episode_with(cfg, cfg.n_chasers, rng)
}

/// Spawn an episode with an explicit chaser count (0 for navigation-only
/// training). Target first, then runner, then chasers, each uniform inside
/// the room minus its wall margin and at least `spawn_clearance` from every
/// object already placed.
pub fn spawn_episode_with<R: Rng + ?Sized>(
    cfg: &WorldConfig,
    n_chasers: usize,
    rng: &mut R,
) -> Result<EpisodeState> {
    'restart: for _ in 0..SPAWN_RESTARTS {
        let mut placed: Vec<[f64; 3]> = Vec::with_capacity(n_chasers + 2);
        for k in 0..n_chasers + 2 {
            let margin = if k == 0 {
                cfg.target_margin()
            } else {
                cfg.drone_margin()
            };
            let mut ok = None;
            for _ in 0..SPAWN_ATTEMPTS {
                let p = sample_point(cfg, margin, rng)?;
                if placed.iter().all(|q| dist(*q, p) >= cfg.spawn_clearance) {
                    ok = Some(p);
                    break;
                }
            }
            match ok {
                Some(p) => placed.push(p),
                None => continue 'restart,
            }
        }
        let target = placed[0];
        let runner = AgentState::at(placed[1], random_heading(rng));
        let chasers = placed[2..]
            .iter()
            .map(|p| AgentState::at(*p, random_heading(rng)))
            .collect();
        return Ok(EpisodeState::new(runner, chasers, target));
    }
    Err(Error::Config(format!(
        "could not place {} objects with clearance {} in {:?}",
        n_chasers + 2,
        cfg.spawn_clearance,
        cfg.bounds
    )))
}

fn boxes_overlap(a: [f64; 3], a_size: [f64; 3], b: [f64; 3], b_size: [f64; 3]) -> bool {
    (0..3).all(|k| (a[k] - b[k]).abs() < (a_size[k] + b_size[k]) / 2.0)
}

fn outside_room(p: [f64; 3], size: [f64; 3], bounds: [f64; 3]) -> bool {
    (0..3).any(|k| p[k] - size[k] / 2.0 < 0.0 || p[k] + size[k] / 2.0 > bounds[k])
}

/// Collision and proximity events for one state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Events {
    pub arrival: bool,
    /// Alive chasers whose collider overlaps the runner's.
    pub capture_by: Vec<usize>,
    pub runner_wall: bool,
    /// Alive chasers whose collider leaves the room.
    pub chaser_wall: Vec<usize>,
    /// Minimum distance from each chaser to its alive teammates; `None` for
    /// deactivated chasers or when no teammate is alive.
    pub chaser_min_distance: Vec<Option<f64>>,
}

impl Events {
    pub fn captured(&self) -> bool {
        !self.capture_by.is_empty()
    }
}

pub fn detect_events(st: &EpisodeState, cfg: &WorldConfig) -> Events {
    let rp = st.runner.position();
    let target_box = [cfg.target_size; 3];
    let arrival = match cfg.arrival {
        ArrivalMode::Collider => boxes_overlap(rp, cfg.drone_collider, st.target, target_box),
        ArrivalMode::Distance { threshold } => dist(rp, st.target) < threshold,
    };
    let capture_by = st
        .alive_chasers()
        .filter(|(_, c)| boxes_overlap(rp, cfg.drone_collider, c.position(), cfg.drone_collider))
        .map(|(i, _)| i)
        .collect();
    let runner_wall = outside_room(rp, cfg.drone_collider, cfg.bounds);
    let chaser_wall = st
        .alive_chasers()
        .filter(|(_, c)| outside_room(c.position(), cfg.drone_collider, cfg.bounds))
        .map(|(i, _)| i)
        .collect();
    let chaser_min_distance = (0..st.chasers.len())
        .map(|i| {
            if !st.chaser_alive[i] {
                return None;
            }
            st.alive_chasers()
                .filter(|(j, _)| *j != i)
                .map(|(_, c)| dist(c.position(), st.chasers[i].position()))
                .reduce(f64::min)
        })
        .collect();
    Events {
        arrival,
        capture_by,
        runner_wall,
        chaser_wall,
        chaser_min_distance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Running,
    ReachedTarget,
    Captured,
    RunnerWallCrash,
    Timeout,
}

impl Outcome {
    pub fn is_terminal(&self) -> bool {
        *self != Outcome::Running
    }

    /// Short label used in traces and wire messages.
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::ReachedTarget => "reached",
            Outcome::Captured => "captured",
            Outcome::RunnerWallCrash => "wall",
            Outcome::Timeout => "timeout",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "running" => Outcome::Running,
            "reached" => Outcome::ReachedTarget,
            "captured" => Outcome::Captured,
            "wall" => Outcome::RunnerWallCrash,
            "timeout" => Outcome::Timeout,
            _ => return None,
        })
    }
}

pub fn runner_success(outcome: Outcome) -> Result<bool> {
    match outcome {
        Outcome::Running => Err(Error::Contract(
            "runner_success called on a running episode".into(),
        )),
        o => Ok(o == Outcome::ReachedTarget),
    }
}

pub fn chaser_success(outcome: Outcome) -> Result<bool> {
    match outcome {
        Outcome::Running => Err(Error::Contract(
            "chaser_success called on a running episode".into(),
        )),
        o => Ok(matches!(o, Outcome::Captured | Outcome::RunnerWallCrash)),
    }
}

/// One command for the runner and one slot per chaser; deactivated chasers
/// must have `None`, alive ones `Some`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAction {
    pub runner: ControlCommand,
    pub chasers: Vec<Option<ControlCommand>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub runner: f64,
    pub chasers: Vec<f64>,
}

impl Rewards {
    /// Runner first, then chasers in index order.
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.runner)
            .chain(self.chasers.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: EpisodeState,
    pub rewards: Rewards,
    pub done: bool,
    pub outcome: Outcome,
    pub events: Events,
    /// Chasers deactivated by this step.
    pub deactivated: Vec<usize>,
}

/// Advance every agent one step and score the transition.
///
/// Event precedence when several fire on the same step: capture, then runner
/// wall crash, then arrival.
pub fn step_env<R: Rng + ?Sized>(
    st: &EpisodeState,
    actions: &JointAction,
    cfg: &WorldConfig,
    weights: &RewardWeights,
    rng: &mut R,
) -> Result<StepResult> {
    if st.step >= cfg.t_max {
        return Err(Error::Contract(
            "step_env called on a finished episode".into(),
        ));
    }
    if actions.chasers.len() != st.chasers.len() {
        return Err(Error::Contract(format!(
            "expected {} chaser slots, got {}",
            st.chasers.len(),
            actions.chasers.len()
        )));
    }
    for (i, a) in actions.chasers.iter().enumerate() {
        match (st.chaser_alive[i], a) {
            (false, Some(_)) => {
                return Err(Error::Contract(format!(
                    "action supplied for deactivated chaser {i}"
                )))
            }
            (true, None) => return Err(Error::Contract(format!("missing action for chaser {i}"))),
            _ => {}
        }
    }

    let mut next = st.clone();
    let cmd = clamp_command(actions.runner, cfg.runner_v_max, cfg.w_max)?;
    next.runner = step_kinematic(st.runner, cmd, cfg.dt, &cfg.noise, rng);
    for (i, a) in actions.chasers.iter().enumerate() {
        if let Some(a) = a {
            let cmd = clamp_command(*a, cfg.chaser_v_max, cfg.w_max)?;
            next.chasers[i] = step_kinematic(st.chasers[i], cmd, cfg.dt, &cfg.noise, rng);
        }
    }
    next.step += 1;

    let events = detect_events(&next, cfg);
    let penalty = weights.existential_penalty(cfg.t_max);
    let mut runner_r = penalty;
    let mut chaser_r: Vec<f64> = st
        .chaser_alive
        .iter()
        .map(|alive| if *alive { penalty } else { 0.0 })
        .collect();

    for (i, d) in events.chaser_min_distance.iter().enumerate() {
        if let Some(d) = d {
            // strict: no penalty exactly at the threshold
            if *d < weights.d_eps {
                chaser_r[i] -= weights.c2;
            }
        }
    }
    let deactivated = events.chaser_wall.clone();
    for &i in &deactivated {
        chaser_r[i] -= weights.c2;
    }

    let task_reward =
        |s: &EpisodeState| weights.c1 * (1.0 - s.runner_target_distance() / s.initial_distance);
    let outcome = if events.captured() || events.runner_wall {
        runner_r -= weights.c2;
        for (i, r) in chaser_r.iter_mut().enumerate() {
            if st.chaser_alive[i] {
                *r += weights.c1;
            }
        }
        if events.captured() {
            Outcome::Captured
        } else {
            Outcome::RunnerWallCrash
        }
    } else if events.arrival {
        runner_r += task_reward(&next);
        Outcome::ReachedTarget
    } else if next.step >= cfg.t_max {
        runner_r += task_reward(&next);
        Outcome::Timeout
    } else {
        Outcome::Running
    };

    for &i in &deactivated {
        next.chaser_alive[i] = false;
    }

    Ok(StepResult {
        state: next,
        rewards: Rewards {
            runner: runner_r,
            chasers: chaser_r,
        },
        done: outcome.is_terminal(),
        outcome,
        events,
        deactivated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn world_frame() -> WorldConfig {
        WorldConfig {
            observation_frame: ObservationFrame::World,
            ..WorldConfig::default()
        }
    }

    fn still(st: &EpisodeState) -> JointAction {
        JointAction {
            runner: ControlCommand::ZERO,
            chasers: st
                .chaser_alive
                .iter()
                .map(|a| a.then_some(ControlCommand::ZERO))
                .collect(),
        }
    }

    #[test]
    fn runner_observation_examples() {
        let cfg = world_frame();
        let st = EpisodeState::new(
            AgentState::new(0.0, 0.0, 0.0, 0.0),
            vec![
                AgentState::new(1.0, 1.0, 1.0, 0.0),
                AgentState::new(-1.0, 2.0, 0.0, 0.0),
            ],
            [1.0, 3.5, 0.5],
        );
        let o = runner_observation(&st, &cfg);
        assert_eq!(o.0, vec![1.0, 3.5, 0.5, 1.0, 1.0, 1.0, -1.0, 2.0, 0.0]);
        assert_eq!(o.len(), 9);
        // heading frame at psi = 0 is identical
        assert_eq!(runner_observation(&st, &WorldConfig::default()), o);

        let p = AgentState::new(2.0, 2.0, 1.0, 0.3);
        let st = EpisodeState::new(p, vec![p, p], [2.0, 2.0, 1.0]);
        assert!(runner_observation(&st, &WorldConfig::default())
            .0
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn chaser_observation_examples() {
        let cfg = world_frame();
        let st = EpisodeState::new(
            AgentState::new(0.0, 2.0, 0.0, 0.0),
            vec![
                AgentState::new(0.0, 0.0, 0.0, 0.0),
                AgentState::new(1.0, 0.0, 0.0, 0.0),
            ],
            [3.0, 3.0, 1.0],
        );
        let o = chaser_observation(&st, &cfg, 0).unwrap();
        assert_eq!(o.0, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        assert_eq!(o.len(), 6);
        assert!(matches!(
            chaser_observation(&st, &cfg, 2),
            Err(Error::InvalidInput(_))
        ));

        let p = AgentState::new(1.0, 1.0, 1.0, 1.0);
        let st = EpisodeState::new(p, vec![p, p], [0.0; 3]);
        assert!(chaser_observation(&st, &cfg, 1)
            .unwrap()
            .0
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn heading_frame_rotates_into_body_axes() {
        // psi = pi/2: body x maps to world -y, so a target at world -y reads as +x
        let st = EpisodeState::new(
            AgentState::new(2.0, 2.0, 1.0, std::f64::consts::FRAC_PI_2),
            vec![],
            [2.0, 1.0, 1.0],
        );
        let o = runner_observation(&st, &WorldConfig::default());
        assert!((o.0[0] - 1.0).abs() < 1e-12 && o.0[1].abs() < 1e-12);
        // absent chasers read as the sentinel
        assert_eq!(&o.0[3..6], &[5.0, 5.0, 3.0]);
    }

    #[test]
    fn spawn_is_uniform_and_clear() {
        let cfg = WorldConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut sum = [0.0; 3];
        let mut count = 0.0;
        for _ in 0..n {
            let st = spawn_episode(&cfg, &mut rng).unwrap();
            let mut pts = vec![st.target, st.runner.position()];
            pts.extend(st.chasers.iter().map(|c| c.position()));
            for (a, p) in pts.iter().enumerate() {
                for q in &pts[a + 1..] {
                    assert!(dist(*p, *q) >= cfg.spawn_clearance);
                }
                for k in 0..3 {
                    sum[k] += p[k];
                }
                count += 1.0;
            }
            assert!(!outside_room(
                st.runner.position(),
                cfg.drone_collider,
                cfg.bounds
            ));
            assert_eq!(st.step, 0);
            assert!(st.runner.psi > -std::f64::consts::PI && st.runner.psi <= std::f64::consts::PI);
        }
        for k in 0..3 {
            let mean = sum[k] / count;
            let center = cfg.bounds[k] / 2.0;
            assert!((mean - center).abs() / center < 0.02, "axis {k}: {mean}");
        }
    }

    #[test]
    fn spawn_with_unit_clearance_always_succeeds() {
        let cfg = WorldConfig {
            spawn_clearance: 1.0,
            ..WorldConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            spawn_episode(&cfg, &mut rng).unwrap();
        }
    }

    #[test]
    fn infeasible_spawn_is_a_config_error() {
        let cfg = WorldConfig {
            bounds: [1.0, 1.0, 1.0],
            spawn_clearance: 2.0,
            ..WorldConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            spawn_episode(&cfg, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn event_examples() {
        let cfg = WorldConfig::default();
        let t = [2.0, 2.0, 1.0];
        let st = EpisodeState::new(AgentState::at(t, 0.0), vec![], t);
        assert!(detect_events(&st, &cfg).arrival);

        let p = [2.5, 2.5, 1.5];
        let st = EpisodeState::new(
            AgentState::at(p, 0.0),
            vec![AgentState::at(p, 1.0)],
            [1.0, 1.0, 1.0],
        );
        assert_eq!(detect_events(&st, &cfg).capture_by, vec![0]);

        let st = EpisodeState::new(
            AgentState::new(4.0, 4.0, 2.0, 0.0),
            vec![
                AgentState::new(1.0, 1.0, 1.0, 0.0),
                AgentState::new(1.4, 1.0, 1.0, 0.0),
            ],
            [3.0, 1.0, 1.0],
        );
        let ev = detect_events(&st, &cfg);
        let d = ev.chaser_min_distance[0].unwrap();
        assert!((d - 0.4).abs() < 1e-12);
        let r = step_env(
            &st,
            &still(&st),
            &cfg,
            &RewardWeights::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.rewards.chasers, vec![-10.0 - 1000.0, -10.0 - 1000.0]);
        assert_eq!(r.outcome, Outcome::Running);
    }

    #[test]
    fn heaviside_is_zero_at_threshold() {
        let cfg = WorldConfig::default();
        let w = RewardWeights {
            d_eps: 0.5,
            ..RewardWeights::default()
        };
        let st = EpisodeState::new(
            AgentState::new(4.0, 4.0, 2.0, 0.0),
            vec![
                AgentState::new(1.0, 1.0, 1.0, 0.0),
                AgentState::new(1.5, 1.0, 1.0, 0.0),
            ],
            [3.0, 1.0, 1.0],
        );
        assert_eq!(detect_events(&st, &cfg).chaser_min_distance[0], Some(0.5));
        let r = step_env(
            &st,
            &still(&st),
            &cfg,
            &w,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.rewards.chasers, vec![-10.0, -10.0]);
    }

    #[test]
    fn timeout_reward_four_to_one_meter() {
        let cfg = WorldConfig {
            t_max: 1,
            ..WorldConfig::default()
        };
        let mut st =
            EpisodeState::new(AgentState::new(0.5, 1.0, 1.0, 0.0), vec![], [4.5, 1.0, 1.0]);
        assert_eq!(st.initial_distance, 4.0);
        st.runner.x = 3.5;
        let r = step_env(
            &st,
            &still(&st),
            &cfg,
            &RewardWeights::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert!(r.done);
        let penalty = -10000.0;
        assert_eq!(r.rewards.runner - penalty, 750.0);
    }

    #[test]
    fn existential_penalty_and_capture_rewards() {
        let cfg = WorldConfig::default();
        let w = RewardWeights::default();
        assert_eq!(w.existential_penalty(cfg.t_max), -10.0);

        let st = EpisodeState::new(
            AgentState::new(2.0, 2.0, 1.0, 0.0),
            vec![
                AgentState::new(2.1, 2.0, 1.0, 0.0),
                AgentState::new(4.0, 4.0, 1.0, 0.0),
            ],
            [1.0, 4.0, 1.0],
        );
        let r = step_env(
            &st,
            &still(&st),
            &cfg,
            &w,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.outcome, Outcome::Captured);
        assert_eq!(r.rewards.runner, -10.0 - 1000.0);
        assert_eq!(r.rewards.chasers, vec![-10.0 + 1000.0, -10.0 + 1000.0]);
        // task rewards oppose exactly
        assert_eq!(
            (r.rewards.runner + 10.0) + (r.rewards.chasers[0] + 10.0),
            0.0
        );
    }

    #[test]
    fn runner_wall_crash_credits_chasers() {
        let cfg = WorldConfig::default();
        let st = EpisodeState::new(
            AgentState::new(0.16, 2.0, 1.0, 0.0),
            vec![AgentState::new(3.0, 3.0, 1.0, 0.0)],
            [4.0, 4.0, 1.0],
        );
        let a = JointAction {
            runner: ControlCommand::new(-1.0, 0.0, 0.0, 0.0),
            chasers: vec![Some(ControlCommand::ZERO)],
        };
        let r = step_env(
            &st,
            &a,
            &cfg,
            &RewardWeights::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.outcome, Outcome::RunnerWallCrash);
        assert_eq!(r.rewards.chasers, vec![990.0]);
        assert_eq!(r.rewards.runner, -1010.0);
    }

    #[test]
    fn chaser_wall_crash_deactivates() {
        let cfg = WorldConfig::default();
        let w = RewardWeights::default();
        let st = EpisodeState::new(
            AgentState::new(2.0, 2.0, 1.0, 0.0),
            vec![
                AgentState::new(4.84, 3.0, 1.0, 0.0),
                AgentState::new(1.0, 4.0, 1.0, 0.0),
            ],
            [4.0, 1.0, 1.0],
        );
        let a = JointAction {
            runner: ControlCommand::ZERO,
            chasers: vec![
                Some(ControlCommand::new(1.0, 0.0, 0.0, 0.0)),
                Some(ControlCommand::ZERO),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = step_env(&st, &a, &cfg, &w, &mut rng).unwrap();
        assert_eq!(r.outcome, Outcome::Running);
        assert_eq!(r.deactivated, vec![0]);
        assert_eq!(r.rewards.chasers[0], -1010.0);
        assert_eq!(r.state.chaser_alive, vec![false, true]);

        // acting for the deactivated chaser is a contract violation
        let err = step_env(&r.state, &a, &cfg, &w, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let ok = JointAction {
            runner: ControlCommand::ZERO,
            chasers: vec![None, Some(ControlCommand::ZERO)],
        };
        let r2 = step_env(&r.state, &ok, &cfg, &w, &mut rng).unwrap();
        assert_eq!(r2.rewards.chasers[0], 0.0);
    }

    #[test]
    fn success_predicates() {
        assert_eq!(runner_success(Outcome::ReachedTarget).unwrap(), true);
        assert_eq!(chaser_success(Outcome::ReachedTarget).unwrap(), false);
        assert_eq!(runner_success(Outcome::RunnerWallCrash).unwrap(), false);
        assert_eq!(chaser_success(Outcome::RunnerWallCrash).unwrap(), true);
        assert_eq!(chaser_success(Outcome::Captured).unwrap(), true);
        assert_eq!(runner_success(Outcome::Timeout).unwrap(), false);
        assert_eq!(chaser_success(Outcome::Timeout).unwrap(), false);
        assert!(runner_success(Outcome::Running).is_err());
        assert!(chaser_success(Outcome::Running).is_err());
    }

    #[test]
    fn stationary_episode_costs_exactly_w1() {
        let cfg = WorldConfig::default();
        let w = RewardWeights::default();
        let mut st = EpisodeState::new(
            AgentState::new(1.0, 1.0, 1.0, 0.0),
            vec![
                AgentState::new(4.0, 4.0, 2.0, 0.0),
                AgentState::new(4.0, 1.0, 2.0, 0.0),
            ],
            [2.5, 4.0, 1.5],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let r = step_env(&st, &still(&st), &cfg, &w, &mut rng).unwrap();
            total += r.rewards.runner;
            steps += 1;
            st = r.state;
            if r.done {
                assert_eq!(r.outcome, Outcome::Timeout);
                break;
            }
        }
        assert_eq!(steps, cfg.t_max);
        assert_eq!(total, -w.w1);
    }

    proptest! {
        #[test]
        fn observations_are_translation_invariant(
            seed in 0u64..1000, dx in -10.0f64..10.0, dy in -10.0f64..10.0, dz in -10.0f64..10.0,
        ) {
            let cfg = WorldConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let st = spawn_episode(&cfg, &mut rng).unwrap();
            let mut moved = st.clone();
            let shift = |p: &mut AgentState| { p.x += dx; p.y += dy; p.z += dz; };
            shift(&mut moved.runner);
            moved.chasers.iter_mut().for_each(shift);
            moved.target = [st.target[0] + dx, st.target[1] + dy, st.target[2] + dz];
            let a = runner_observation(&st, &cfg);
            let b = runner_observation(&moved, &cfg);
            for (x, y) in a.0.iter().zip(&b.0) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            for i in 0..cfg.n_chasers {
                let a = chaser_observation(&st, &cfg, i).unwrap();
                let b = chaser_observation(&moved, &cfg, i).unwrap();
                for (x, y) in a.0.iter().zip(&b.0) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn episodes_always_end_by_t_max(seed in 0u64..200) {
            let cfg = WorldConfig { t_max: 200, noise: NoiseSpec::uniform(0.05), ..WorldConfig::default() };
            let w = RewardWeights::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut st = spawn_episode(&cfg, &mut rng).unwrap();
            let mut n = 0;
            loop {
                let a = JointAction {
                    runner: ControlCommand::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
                    chasers: st.chaser_alive.iter().map(|a| a.then_some(ControlCommand::new(0.3, -0.2, 0.1, 0.0))).collect(),
                };
                let r = step_env(&st, &a, &cfg, &w, &mut rng).unwrap();
                n += 1;
                prop_assert_eq!(r.done, r.outcome != Outcome::Running);
                st = r.state;
                if r.done { break; }
            }
            prop_assert!(n <= cfg.t_max);
        }
    }
}
