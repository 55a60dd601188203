//! Evaluation protocols: fixed-placement matches, relative-speed and
//! chaser-count sweeps, the geometry heatmap, an inference benchmark and
//! trace replay.

mod heatmap;
pub mod stats;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arena::{
    dist, random_heading, spawn_episode_with, step_env, AgentId, EpisodeState, JointAction,
    Outcome, RewardWeights, StepResult, WorldConfig,
};
use crate::baselines::{ApfController, PidController, RandomController};
use crate::controller::{Controller, Idle, LearnedController};
use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::policy::{drone_bounds, load_policy, PolicyParameters};

pub use heatmap::{
    geometry_heatmap, geometry_placement, render_heatmap_png, write_heatmap_csv, HeatmapCell,
    HeatmapConfig,
};
pub use trace::{record_episode, replay, write_trace, TraceHeader, TraceRecord};

/// Fixed evaluation target and runner, shifted into the corner-origin room.
pub const TABLE3_TARGET: [f64; 3] = [1.0, 4.25, 0.5];
pub const TABLE3_RUNNER: [f64; 3] = [1.0, 0.75, 0.2];
pub const TABLE3_NOISE_RADIUS: f64 = 0.2;

/// Where a controller comes from.
#[derive(Clone)]
pub enum PolicyRef {
    Random,
    Pid,
    Apf,
    Idle,
    Manual,
    /// `policy:<path>` weight file.
    File(PathBuf),
    /// Weights already in memory.
    Loaded {
        label: String,
        params: Arc<PolicyParameters>,
    },
}

impl PolicyRef {
    pub fn loaded(label: impl Into<String>, params: PolicyParameters) -> Self {
        PolicyRef::Loaded {
            label: label.into(),
            params: Arc::new(params),
        }
    }

    /// Build a deterministic controller for `side` in `world`. Learned
    /// policies get their action bounds replaced by the side's limits.
    pub fn resolve(&self, world: &WorldConfig, side: AgentId) -> Result<Box<dyn Controller>> {
        let learned = |p: PolicyParameters, label: String| -> Result<Box<dyn Controller>> {
            let want = match side {
                AgentId::Runner => world.runner_obs_dim(),
                AgentId::Chaser(_) => world.chaser_obs_dim(),
            };
            if p.obs_dim() != want {
                return Err(Error::PolicyRef(format!(
                    "{label}: network expects {} inputs but this side observes {want}",
                    p.obs_dim()
                )));
            }
            let p = p.with_bounds(drone_bounds(world.v_max(side), world.w_max));
            Ok(Box::new(LearnedController::new(p, true).labelled(label)))
        };
        match self {
            PolicyRef::Random => Ok(Box::new(RandomController)),
            PolicyRef::Pid => match side {
                AgentId::Chaser(_) => Ok(Box::new(PidController::default())),
                AgentId::Runner => Err(Error::PolicyRef("pid drives chasers only".into())),
            },
            PolicyRef::Apf => match side {
                AgentId::Runner => Ok(Box::new(ApfController::default())),
                AgentId::Chaser(_) => Err(Error::PolicyRef("apf drives the runner only".into())),
            },
            PolicyRef::Idle => Ok(Box::new(Idle)),
            PolicyRef::Manual => Err(Error::PolicyRef(
                "manual control is only available in the live server".into(),
            )),
            PolicyRef::File(path) => {
                let p = load_policy(path)
                    .map_err(|e| Error::PolicyRef(format!("policy:{}: {e}", path.display())))?;
                learned(p, self.to_string())
            }
            PolicyRef::Loaded { label, params } => learned((**params).clone(), label.clone()),
        }
    }
}

impl fmt::Display for PolicyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyRef::Random => f.write_str("random"),
            PolicyRef::Pid => f.write_str("pid"),
            PolicyRef::Apf => f.write_str("apf"),
            PolicyRef::Idle => f.write_str("idle"),
            PolicyRef::Manual => f.write_str("manual"),
            PolicyRef::File(p) => write!(f, "policy:{}", p.display()),
            PolicyRef::Loaded { label, .. } => f.write_str(label),
        }
    }
}

impl fmt::Debug for PolicyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolicyRef({self})")
    }
}

impl FromStr for PolicyRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PolicyRef::Random),
            "pid" => Ok(PolicyRef::Pid),
            "apf" => Ok(PolicyRef::Apf),
            "idle" => Ok(PolicyRef::Idle),
            "manual" => Ok(PolicyRef::Manual),
            _ => match s.strip_prefix("policy:") {
                Some(p) if !p.is_empty() => Ok(PolicyRef::File(PathBuf::from(p))),
                _ => Err(Error::PolicyRef(format!(
                    "unknown policy `{s}` (expected random|pid|apf|idle|manual|policy:<path>)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Placement {
    Random,
    FixedTable3,
    Geometry { angle_deg: f64, radius: f64 },
}

fn sample_box<R: Rng + ?Sized>(lo: [f64; 3], hi: [f64; 3], rng: &mut R) -> [f64; 3] {
    std::array::from_fn(|k| rng.random_range(lo[k]..hi[k]))
}

/// Uniform point inside a ball (rejection from the enclosing cube).
pub fn sample_in_sphere<R: Rng + ?Sized>(center: [f64; 3], radius: f64, rng: &mut R) -> [f64; 3] {
    loop {
        let d: [f64; 3] = std::array::from_fn(|_| rng.random_range(-radius..=radius));
        if d.iter().map(|x| x * x).sum::<f64>() <= radius * radius {
            return [center[0] + d[0], center[1] + d[1], center[2] + d[2]];
        }
    }
}

fn place_chasers<R: Rng + ?Sized>(
    world: &WorldConfig,
    taken: &[[f64; 3]],
    n: usize,
    rng: &mut R,
) -> Result<Vec<AgentState>> {
    let (lo, hi) = world.drone_region();
    let mut placed: Vec<[f64; 3]> = taken.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let p = (0..10_000)
            .map(|_| sample_box(lo, hi, rng))
            .find(|p| placed.iter().all(|q| dist(*p, *q) >= world.spawn_clearance))
            .ok_or_else(|| {
                Error::Config("could not place chasers with the configured clearance".into())
            })?;
        placed.push(p);
        out.push(AgentState::at(p, random_heading(rng)));
    }
    Ok(out)
}

/// Initial state for one evaluation episode.
pub fn initial_state<R: Rng + ?Sized>(
    world: &WorldConfig,
    placement: Placement,
    rng: &mut R,
) -> Result<EpisodeState> {
    match placement {
        Placement::Random => spawn_episode_with(world, world.n_chasers, rng),
        Placement::FixedTable3 => {
            let (tlo, thi) = world.target_region();
            let t = sample_in_sphere(TABLE3_TARGET, TABLE3_NOISE_RADIUS, rng);
            let target = std::array::from_fn(|k| t[k].clamp(tlo[k], thi[k]));
            let runner = world.clamp_to_drone_region(sample_in_sphere(
                TABLE3_RUNNER,
                TABLE3_NOISE_RADIUS,
                rng,
            ));
            let chasers = place_chasers(world, &[target, runner], world.n_chasers, rng)?;
            Ok(EpisodeState::new(
                AgentState::at(runner, random_heading(rng)),
                chasers,
                target,
            ))
        }
        Placement::Geometry { angle_deg, radius } => {
            let g = geometry_placement(world, angle_deg, radius)?;
            let runner = AgentState::at(g.runner, random_heading(rng));
            let chasers = g
                .chasers
                .iter()
                .map(|c| AgentState::at(*c, random_heading(rng)))
                .collect();
            Ok(EpisodeState::new(runner, chasers, g.target))
        }
    }
}

/// Outcome of one simulated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub outcome: Outcome,
    pub steps: usize,
    pub runner_return: f64,
}

/// Run `init` to completion with both sides driven by controllers; every
/// step result is passed to `on_step`.
pub fn simulate_episode(
    world: &WorldConfig,
    weights: &RewardWeights,
    init: EpisodeState,
    runner: &dyn Controller,
    chaser: &dyn Controller,
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(&StepResult),
) -> Result<EpisodeRecord> {
    let mut st = init;
    let mut ret = 0.0;
    loop {
        let r_cmd = runner.act(&st, AgentId::Runner, world, rng)?;
        let mut c_cmds = Vec::with_capacity(st.chasers.len());
        for i in 0..st.chasers.len() {
            c_cmds.push(if st.chaser_alive[i] {
                Some(chaser.act(&st, AgentId::Chaser(i), world, rng)?)
            } else {
                None
            });
        }
        let res = step_env(
            &st,
            &JointAction {
                runner: r_cmd,
                chasers: c_cmds,
            },
            world,
            weights,
            rng,
        )?;
        ret += res.rewards.runner;
        on_step(&res);
        if res.done {
            return Ok(EpisodeRecord {
                outcome: res.outcome,
                steps: res.state.step,
                runner_return: ret,
            });
        }
        st = res.state;
    }
}

/// Per-episode random stream derived from `(seed, index)` only.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub sr_runner: f64,
    pub sr_chaser: f64,
    pub timeout_rate: f64,
    pub mean_steps: f64,
    /// Mean episode length over runner wins (NaN if none).
    pub mean_success_steps: f64,
    pub outcomes: Vec<Outcome>,
    pub steps: Vec<usize>,
}

impl MatchResult {
    pub fn from_episodes(outcomes: Vec<Outcome>, steps: Vec<usize>) -> Self {
        let n = outcomes.len().max(1) as f64;
        let count = |f: &dyn Fn(&Outcome) -> bool| outcomes.iter().filter(|o| f(o)).count();
        let wins: Vec<usize> = outcomes
            .iter()
            .zip(&steps)
            .filter(|(o, _)| **o == Outcome::ReachedTarget)
            .map(|(_, s)| *s)
            .collect();
        Self {
            sr_runner: count(&|o| *o == Outcome::ReachedTarget) as f64 / n,
            sr_chaser: count(&|o| matches!(o, Outcome::Captured | Outcome::RunnerWallCrash)) as f64
                / n,
            timeout_rate: count(&|o| *o == Outcome::Timeout) as f64 / n,
            mean_steps: steps.iter().sum::<usize>() as f64 / n,
            mean_success_steps: if wins.is_empty() {
                f64::NAN
            } else {
                wins.iter().sum::<usize>() as f64 / wins.len() as f64
            },
            outcomes,
            steps,
        }
    }

    pub fn runner_wins(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| **o == Outcome::ReachedTarget)
            .count()
    }
}

/// Play `episodes` episodes between two resolved controllers.
pub fn run_match_with(
    world: &WorldConfig,
    weights: &RewardWeights,
    runner: &dyn Controller,
    chaser: &dyn Controller,
    episodes: usize,
    placement: Placement,
    seed: u64,
) -> Result<MatchResult> {
    if episodes == 0 {
        return Err(Error::InvalidInput("episodes must be >= 1".into()));
    }
    let mut outcomes = Vec::with_capacity(episodes);
    let mut steps = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut rng = episode_rng(seed, i as u64);
        let init = initial_state(world, placement, &mut rng)?;
        let rec = simulate_episode(world, weights, init, runner, chaser, &mut rng, |_| {})?;
        outcomes.push(rec.outcome);
        steps.push(rec.steps);
    }
    Ok(MatchResult::from_episodes(outcomes, steps))
}

#[derive(Debug, Clone)]
pub struct MatchSpec {
    pub runner: PolicyRef,
    pub chaser: PolicyRef,
    pub episodes: usize,
    pub placement: Placement,
    /// Runner top speed over chaser top speed.
    pub relative_speed: f64,
    pub n_chasers: usize,
    pub seed: u64,
}

impl MatchSpec {
    pub fn new(runner: PolicyRef, chaser: PolicyRef) -> Self {
        Self {
            runner,
            chaser,
            episodes: 200,
            placement: Placement::FixedTable3,
            relative_speed: 1.0,
            n_chasers: 2,
            seed: 0,
        }
    }

    /// `base` with this spec's chaser count and runner speed applied.
    pub fn world(&self, base: &WorldConfig) -> Result<WorldConfig> {
        if !(self.relative_speed > 0.0) {
            return Err(Error::InvalidInput(format!(
                "relative speed must be > 0, got {}",
                self.relative_speed
            )));
        }
        let w = WorldConfig {
            n_chasers: self.n_chasers,
            runner_v_max: self.relative_speed * base.chaser_v_max,
            ..base.clone()
        };
        w.validate()?;
        Ok(w)
    }
}

pub fn run_match(
    spec: &MatchSpec,
    base: &WorldConfig,
    weights: &RewardWeights,
) -> Result<MatchResult> {
    let world = spec.world(base)?;
    let runner = spec.runner.resolve(&world, AgentId::Runner)?;
    let chaser = spec.chaser.resolve(&world, AgentId::Chaser(0))?;
    run_match_with(
        &world,
        weights,
        runner.as_ref(),
        chaser.as_ref(),
        spec.episodes,
        spec.placement,
        spec.seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x: f64,
    pub sr_runner: f64,
    pub sr_chaser: f64,
    pub timeout_rate: f64,
    pub mean_steps: f64,
    pub episodes: usize,
}

impl SweepRow {
    fn new(x: f64, r: &MatchResult) -> Self {
        Self {
            x,
            sr_runner: r.sr_runner,
            sr_chaser: r.sr_chaser,
            timeout_rate: r.timeout_rate,
            mean_steps: r.mean_steps,
            episodes: r.outcomes.len(),
        }
    }
}

pub const DEFAULT_SPEEDS: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

/// One match per relative speed with chasers held at `base.chaser_v_max`.
pub fn speed_sweep(
    spec: &MatchSpec,
    speeds: &[f64],
    base: &WorldConfig,
    weights: &RewardWeights,
) -> Result<Vec<SweepRow>> {
    speeds
        .iter()
        .map(|s| {
            if !(*s > 0.0) {
                return Err(Error::InvalidInput(format!("speeds must be > 0, got {s}")));
            }
            let spec = MatchSpec {
                relative_speed: *s,
                ..spec.clone()
            };
            Ok(SweepRow::new(*s, &run_match(&spec, base, weights)?))
        })
        .collect()
}

/// Evaluate one (runner, chaser) pair per chaser count; every count needs
/// its own pair since network input sizes depend on it.
pub fn chaser_count_sweep(
    spec: &MatchSpec,
    counts: &[usize],
    policies: &BTreeMap<usize, (PolicyRef, PolicyRef)>,
    base: &WorldConfig,
    weights: &RewardWeights,
) -> Result<Vec<SweepRow>> {
    counts
        .iter()
        .map(|n| {
            let (runner, chaser) = policies.get(n).ok_or_else(|| {
                Error::PolicyRef(format!("no trained policy pair for {n} chasers"))
            })?;
            let spec = MatchSpec {
                runner: runner.clone(),
                chaser: chaser.clone(),
                n_chasers: *n,
                ..spec.clone()
            };
            Ok(SweepRow::new(*n as f64, &run_match(&spec, base, weights)?))
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], x_name: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "{x_name},sr_runner,sr_chaser,timeout_rate,mean_steps,episodes"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.x, r.sr_runner, r.sr_chaser, r.timeout_rate, r.mean_steps, r.episodes
        )?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub iterations: usize,
}

/// Wall-clock time per policy forward pass on random observations.
pub fn bench_inference(
    policy: &PolicyParameters,
    iterations: usize,
    seed: u64,
) -> Result<LatencyStats> {
    if iterations == 0 {
        return Err(Error::InvalidInput("iterations must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = policy.obs_dim();
    let obs: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let mut sink = 0.0;
    for o in obs.iter().cycle().take(iterations.min(100)) {
        sink += policy.forward(o)?.0[0];
    }
    let mut times = Vec::with_capacity(iterations);
    for o in obs.iter().cycle().take(iterations) {
        let t = Instant::now();
        sink += policy.forward(o)?.0[0];
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    std::hint::black_box(sink);
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(LatencyStats {
        mean_ms: mean,
        std_ms: var.sqrt(),
        iterations,
    })
}
