//! Staged self-play: a navigation-only cold start for the runner, then
//! phases that alternately train the chasers (odd) and the runner (even)
//! against the other side's frozen weights, stopping once the two success
//! rates are within `eta` of each other. Also hosts the simultaneous
//! ("direct") and single-opponent baselines.

mod monitor;
mod output;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arena::{
    chaser_success, runner_success, spawn_episode_with, AgentId, Outcome, RewardWeights,
    WorldConfig,
};
use crate::config::RunConfig;
use crate::controller::{Controller, LearnedController};
use crate::error::{Error, Result};
use crate::eval::{episode_rng, simulate_episode, MatchResult};
use crate::policy::{
    drone_bounds, init_params, init_value, NetworkConfig, PolicyParameters, ValueParameters,
};
use crate::ppo::{
    lr_at, Collector, EpisodeSummary, PpoLearner, SideRole, TrainerConfig, UpdateStats,
};

pub use monitor::{convergence_monitor, ConvergenceMonitor};
pub use output::{Manifest, MetricsRow, RunOutput, RunStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagePlan {
    /// Equilibrium threshold on `|sr_runner - sr_chaser|`.
    pub eta: f64,
    pub k_max: usize,
    /// Evaluation episodes at the end of each stage.
    pub ws: usize,
    /// Convergence window, episodes.
    pub l_sw: usize,
    pub min_episodes: u64,
    pub stage_episode_cap: u64,
    /// Smallest rolling-mean gain that still counts as improvement.
    pub improvement_eps: f64,
    /// Evenly spaced weight snapshots per stage.
    pub checkpoints: usize,
    /// Re-initialise the chaser network at every chaser phase.
    pub reset_chaser: bool,
    /// Episode budget of the simultaneous baseline; 0 means
    /// `(k_max + 1) * stage_episode_cap`.
    pub direct_episode_cap: u64,
}

impl Default for StagePlan {
    fn default() -> Self {
        let w = RewardWeights::default();
        Self {
            eta: 0.10,
            k_max: 10,
            ws: 500,
            l_sw: 1000,
            min_episodes: 10_000,
            stage_episode_cap: 200_000,
            improvement_eps: 0.01 * (w.w1 + w.c1 + w.c2),
            checkpoints: 10,
            reset_chaser: false,
            direct_episode_cap: 0,
        }
    }
}

impl StagePlan {
    pub fn full_scale() -> Self {
        Self {
            stage_episode_cap: 6_000_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!(
                "plan.eta must be in (0, 1], got {}",
                self.eta
            )));
        }
        if self.k_max == 0 || self.ws == 0 || self.l_sw == 0 {
            return Err(Error::Config(
                "plan.k_max, plan.ws and plan.l_sw must be >= 1".into(),
            ));
        }
        if self.stage_episode_cap == 0 || self.checkpoints == 0 {
            return Err(Error::Config(
                "plan.stage_episode_cap and plan.checkpoints must be >= 1".into(),
            ));
        }
        if !(self.improvement_eps >= 0.0 && self.improvement_eps.is_finite()) {
            return Err(Error::Config(format!(
                "plan.improvement_eps must be finite and >= 0, got {}",
                self.improvement_eps
            )));
        }
        Ok(())
    }

    pub fn direct_cap(&self) -> u64 {
        if self.direct_episode_cap > 0 {
            self.direct_episode_cap
        } else {
            (self.k_max as u64 + 1) * self.stage_episode_cap
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainedSide {
    Runner,
    Chaser,
    Both,
}

/// Side trained in phase `i >= 1`.
pub fn phase_side(i: usize) -> TrainedSide {
    if i % 2 == 1 {
        TrainedSide::Chaser
    } else {
        TrainedSide::Runner
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: usize,
    pub trained_side: TrainedSide,
    pub episodes: u64,
    pub steps: u64,
    pub updates: u64,
    /// The convergence monitor fired before the episode cap.
    pub converged: bool,
    pub sr_runner: f64,
    pub sr_chaser: f64,
    pub timeout_rate: f64,
    pub eval_episodes: usize,
    /// `|sr_runner - sr_chaser| <= eta` (never set for the cold start).
    pub equilibrium: bool,
    pub snapshots: Vec<String>,
    pub wall_seconds: f64,
}

/// Policy and value network of one side.
#[derive(Debug, Clone, PartialEq)]
pub struct SideModel {
    pub policy: PolicyParameters,
    pub value: ValueParameters,
}

impl SideModel {
    pub fn fresh(
        world: &WorldConfig,
        agent: AgentId,
        net: &NetworkConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let obs = match agent {
            AgentId::Runner => world.runner_obs_dim(),
            AgentId::Chaser(_) => world.chaser_obs_dim(),
        };
        let policy = init_params(
            obs,
            4,
            drone_bounds(world.v_max(agent), world.w_max),
            net,
            rng,
        )?;
        let value = init_value(obs, net, rng)?;
        Ok(Self { policy, value })
    }

    fn controller(&self, deterministic: bool, label: &str) -> LearnedController {
        LearnedController::new(self.policy.clone(), deterministic).labelled(label)
    }
}

/// Seed for one purpose within one stage.
fn derive_seed(seed: u64, stage: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage as u64) << 8) | purpose);
    rng.random()
}

const SEED_INIT: u64 = 1;
const SEED_COLLECT: u64 = 2;
const SEED_UPDATE: u64 = 3;
const SEED_EVAL: u64 = 4;

/// `ws` fresh random episodes with `n_spawn` chasers, both sides acting
/// through the given controllers.
pub fn evaluate_success_rates(
    world: &WorldConfig,
    weights: &RewardWeights,
    runner: &dyn Controller,
    chaser: &dyn Controller,
    n_spawn: usize,
    ws: usize,
    seed: u64,
) -> Result<MatchResult> {
    if ws == 0 {
        return Err(Error::InvalidInput("ws must be >= 1".into()));
    }
    let mut outcomes = Vec::with_capacity(ws);
    let mut steps = Vec::with_capacity(ws);
    for i in 0..ws {
        let mut rng = episode_rng(seed, i as u64);
        let init = spawn_episode_with(world, n_spawn, &mut rng)?;
        let rec = simulate_episode(world, weights, init, runner, chaser, &mut rng, |_| {})?;
        outcomes.push(rec.outcome);
        steps.push(rec.steps);
    }
    Ok(MatchResult::from_episodes(outcomes, steps))
}

/// How one side takes part in a stage.
pub enum Slot<'a> {
    Train(&'a mut SideModel),
    Fixed(&'a dyn Controller),
}

/// Shared state of a training run: configuration, output sink and
/// progress counters.
pub struct Driver<'a> {
    pub cfg: &'a RunConfig,
    pub out: Option<&'a RunOutput>,
    pub global_step: u64,
    on_stage: Option<Box<dyn FnMut(&PhaseReport) + 'a>>,
}

impl<'a> Driver<'a> {
    pub fn new(cfg: &'a RunConfig, out: Option<&'a RunOutput>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            out,
            global_step: 0,
            on_stage: None,
        })
    }

    /// Called with every finished stage report.
    pub fn on_stage(mut self, f: impl FnMut(&PhaseReport) + 'a) -> Self {
        self.on_stage = Some(Box::new(f));
        self
    }

    fn finish(&mut self, report: &PhaseReport) {
        if let Some(f) = self.on_stage.as_mut() {
            f(report);
        }
    }

    pub fn fresh_side(&self, stage: usize, agent: AgentId) -> Result<SideModel> {
        let purpose = SEED_INIT
            + if matches!(agent, AgentId::Runner) {
                0
            } else {
                16
            };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, stage, purpose));
        SideModel::fresh(&self.cfg.world, agent, &self.cfg.trainer.network, &mut rng)
    }
}

struct StageRun {
    episodes: u64,
    steps: u64,
    updates: u64,
    converged: bool,
    snapshots: Vec<String>,
}

struct TrainedState {
    learner: PpoLearner,
    monitor: ConvergenceMonitor,
    best: Option<(f64, PolicyParameters, ValueParameters)>,
    label: &'static str,
}

impl TrainedState {
    fn new(model: &SideModel, plan: &StagePlan, label: &'static str) -> Self {
        Self {
            learner: PpoLearner::new(model.policy.clone(), model.value.clone()),
            monitor: ConvergenceMonitor::new(plan.l_sw, plan.min_episodes, plan.improvement_eps),
            best: None,
            label,
        }
    }

    fn track_best(&mut self) {
        if let Some(m) = self.monitor.recent_mean() {
            if self.best.as_ref().is_none_or(|(b, _, _)| m > *b) {
                self.best = Some((m, self.learner.policy.clone(), self.learner.value.clone()));
            }
        }
    }

    /// Final weights: the latest on convergence, otherwise the best
    /// rolling-mean snapshot seen.
    fn into_model(self, converged: bool) -> SideModel {
        match (converged, self.best) {
            (false, Some((_, policy, value))) => SideModel { policy, value },
            _ => SideModel {
                policy: self.learner.policy,
                value: self.learner.value,
            },
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Train whichever slots are `Train` until every trained side's monitor
/// fires or `cap` episodes have run.
fn train_stage(
    d: &mut Driver<'_>,
    stage: usize,
    n_spawn: usize,
    cap: u64,
    runner: Slot<'_>,
    chaser: Slot<'_>,
) -> Result<StageRun> {
    let cfg = d.cfg;
    let plan = &cfg.plan;
    let trainer = TrainerConfig {
        max_episodes: cap,
        ..cfg.trainer.clone()
    };
    let mut collector = Collector::new(
        cfg.world.clone(),
        cfg.rewards.clone(),
        n_spawn,
        trainer.n_envs,
        derive_seed(cfg.seed, stage, SEED_COLLECT),
    )?;
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stage, SEED_UPDATE));

    let (mut r_model, r_fixed) = match runner {
        Slot::Train(m) => (Some(m), None),
        Slot::Fixed(c) => (None, Some(c)),
    };
    let (mut c_model, c_fixed) = match chaser {
        Slot::Train(m) => (Some(m), None),
        Slot::Fixed(c) => (None, Some(c)),
    };
    let mut r_state = r_model
        .as_deref()
        .map(|m| TrainedState::new(m, plan, "runner"));
    let mut c_state = c_model
        .as_deref()
        .map(|m| TrainedState::new(m, plan, "chaser"));
    if r_state.is_none() && c_state.is_none() {
        return Err(Error::InvalidInput("stage has no trained side".into()));
    }

    let mut run = StageRun {
        episodes: 0,
        steps: 0,
        updates: 0,
        converged: false,
        snapshots: Vec::new(),
    };
    let mut next_ckpt = 1usize;
    loop {
        let lr = lr_at(run.episodes, &trainer);
        let collection = {
            let r_role = match (&r_state, r_fixed) {
                (Some(s), _) => SideRole::Train {
                    policy: &s.learner.policy,
                    value: &s.learner.value,
                },
                (None, Some(c)) => SideRole::Fixed(c),
                (None, None) => unreachable!(),
            };
            let c_role = match (&c_state, c_fixed) {
                (Some(s), _) => SideRole::Train {
                    policy: &s.learner.policy,
                    value: &s.learner.value,
                },
                (None, Some(c)) => SideRole::Fixed(c),
                (None, None) => unreachable!(),
            };
            collector.collect(r_role, c_role, trainer.buffer_size, trainer.reward_scale)?
        };
        let eps: &[EpisodeSummary] = &collection.episodes;
        run.episodes += eps.len() as u64;
        let steps = collection
            .runner
            .as_ref()
            .or(collection.chaser.as_ref())
            .map_or(0, |b| b.len() as u64);
        run.steps += steps;
        d.global_step += steps;
        let ep_len = mean(eps.iter().map(|e| e.steps as f64));
        let rate = |f: fn(Outcome) -> Result<bool>| {
            mean(
                eps.iter()
                    .map(|e| f(e.outcome).map_or(0.0, |b| b as u8 as f64)),
            )
        };
        let (sr_r, sr_c) = (rate(runner_success), rate(chaser_success));

        let sides = [
            (r_state.as_mut(), collection.runner.as_ref(), true),
            (c_state.as_mut(), collection.chaser.as_ref(), false),
        ];
        for (state, batch, is_runner) in sides {
            let (Some(s), Some(batch)) = (state, batch) else {
                continue;
            };
            for e in eps {
                s.monitor.push(if is_runner {
                    e.runner_return
                } else {
                    e.chaser_return
                });
            }
            let stats: UpdateStats = s.learner.update(batch, &trainer, lr, &mut update_rng)?;
            s.track_best();
            if let Some(out) = d.out {
                out.append_metrics(&MetricsRow {
                    global_step: d.global_step,
                    phase: stage,
                    side: s.label.into(),
                    episodes: run.episodes,
                    mean_reward: mean(eps.iter().map(|e| {
                        if is_runner {
                            e.runner_return
                        } else {
                            e.chaser_return
                        }
                    })),
                    episode_len: ep_len,
                    sr_runner: sr_r,
                    sr_chaser: sr_c,
                    policy_loss: stats.policy_loss,
                    value_loss: stats.value_loss,
                    entropy: stats.entropy,
                    clip_fraction: stats.clip_fraction,
                    approx_kl: stats.approx_kl,
                    lr: stats.lr,
                })?;
            }
        }
        run.updates += 1;

        while next_ckpt <= plan.checkpoints
            && run.episodes >= cap * next_ckpt as u64 / plan.checkpoints as u64
        {
            if let Some(out) = d.out {
                for s in [r_state.as_ref(), c_state.as_ref()].into_iter().flatten() {
                    let p =
                        out.save_policy(stage, s.label, &next_ckpt.to_string(), &s.learner.policy)?;
                    run.snapshots.push(p.display().to_string());
                }
            }
            next_ckpt += 1;
        }

        let all_converged = [r_state.as_mut(), c_state.as_mut()]
            .into_iter()
            .flatten()
            .all(|s| s.monitor.converged());
        if all_converged {
            run.converged = true;
            break;
        }
        if run.episodes >= cap {
            break;
        }
    }

    for (state, model) in [
        (r_state, r_model.as_deref_mut()),
        (c_state, c_model.as_deref_mut()),
    ] {
        let (Some(s), Some(m)) = (state, model) else {
            continue;
        };
        let label = s.label;
        *m = s.into_model(run.converged);
        if let Some(out) = d.out {
            let p = out.save_policy(stage, label, "final", &m.policy)?;
            out.save_value(stage, label, &m.value)?;
            run.snapshots.push(p.display().to_string());
        }
    }
    Ok(run)
}

fn report_from(
    stage: usize,
    side: TrainedSide,
    run: StageRun,
    eval: &MatchResult,
    eta: Option<f64>,
    started: Instant,
) -> PhaseReport {
    PhaseReport {
        phase: stage,
        trained_side: side,
        episodes: run.episodes,
        steps: run.steps,
        updates: run.updates,
        converged: run.converged,
        sr_runner: eval.sr_runner,
        sr_chaser: eval.sr_chaser,
        timeout_rate: eval.timeout_rate,
        eval_episodes: eval.outcomes.len(),
        equilibrium: eta.is_some_and(|eta| (eval.sr_runner - eval.sr_chaser).abs() <= eta),
        snapshots: run.snapshots,
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

/// Cold start: the runner learns to navigate with no chasers spawned.
pub fn run_cold_start(d: &mut Driver<'_>) -> Result<(SideModel, PhaseReport)> {
    let started = Instant::now();
    let mut runner = d.fresh_side(0, AgentId::Runner)?;
    let idle = crate::controller::Idle;
    let cap = d.cfg.plan.stage_episode_cap;
    let run = train_stage(d, 0, 0, cap, Slot::Train(&mut runner), Slot::Fixed(&idle))?;
    let cfg = d.cfg;
    let eval = evaluate_success_rates(
        &cfg.world,
        &cfg.rewards,
        &runner.controller(true, "runner"),
        &idle,
        0,
        cfg.plan.ws,
        derive_seed(cfg.seed, 0, SEED_EVAL),
    )?;
    let report = report_from(0, TrainedSide::Runner, run, &eval, None, started);
    d.finish(&report);
    Ok((runner, report))
}

/// Phase `i >= 1`: trains one side while the other samples from its
/// frozen weights, then evaluates both deterministically.
pub fn run_phase(
    d: &mut Driver<'_>,
    i: usize,
    runner: &mut SideModel,
    chaser: &mut SideModel,
) -> Result<PhaseReport> {
    if i == 0 {
        return Err(Error::InvalidInput(
            "phase index must be >= 1; use run_cold_start for S0".into(),
        ));
    }
    let started = Instant::now();
    let side = phase_side(i);
    let cfg = d.cfg;
    let cap = cfg.plan.stage_episode_cap;
    let n = cfg.world.n_chasers;
    if n == 0 {
        return Err(Error::Config("self-play phases need n_chasers >= 1".into()));
    }
    let run = match side {
        TrainedSide::Chaser => {
            if cfg.plan.reset_chaser && i > 1 {
                *chaser = d.fresh_side(i, AgentId::Chaser(0))?;
            }
            let frozen = runner.controller(false, "runner");
            train_stage(d, i, n, cap, Slot::Fixed(&frozen), Slot::Train(chaser))?
        }
        _ => {
            let frozen = chaser.controller(false, "chaser");
            train_stage(d, i, n, cap, Slot::Train(runner), Slot::Fixed(&frozen))?
        }
    };
    let eval = evaluate_success_rates(
        &cfg.world,
        &cfg.rewards,
        &runner.controller(true, "runner"),
        &chaser.controller(true, "chaser"),
        n,
        cfg.plan.ws,
        derive_seed(cfg.seed, i, SEED_EVAL),
    )?;
    if let Some(out) = d.out {
        // keep the frozen side's weights next to the trained ones
        let (label, m) = match side {
            TrainedSide::Chaser => ("runner", &*runner),
            _ => ("chaser", &*chaser),
        };
        out.save_policy(i, label, "final", &m.policy)?;
        out.save_value(i, label, &m.value)?;
    }
    let report = report_from(i, side, run, &eval, Some(cfg.plan.eta), started);
    d.finish(&report);
    Ok(report)
}

/// Weights and history of a staged run, enough to continue it.
#[derive(Debug, Clone)]
pub struct AmsState {
    pub runner: SideModel,
    pub chaser: Option<SideModel>,
    pub reports: Vec<PhaseReport>,
}

#[derive(Debug, Clone)]
pub struct AmsOutcome {
    pub runner: SideModel,
    pub chaser: SideModel,
    pub reports: Vec<PhaseReport>,
    /// The last phase met the equilibrium threshold.
    pub converged: bool,
}

/// Cold start, then alternate phases until the success rates are within
/// `eta` or `k_max` phases have run.
pub fn run_ams_drl(d: &mut Driver<'_>) -> Result<AmsOutcome> {
    let (runner, report) = run_cold_start(d)?;
    if let Some(out) = d.out {
        out.write_reports(std::slice::from_ref(&report))?;
    }
    continue_ams(
        d,
        AmsState {
            runner,
            chaser: None,
            reports: vec![report],
        },
    )
}

/// Resume after the last phase in `state.reports`.
pub fn continue_ams(d: &mut Driver<'_>, state: AmsState) -> Result<AmsOutcome> {
    let AmsState {
        mut runner,
        chaser,
        mut reports,
    } = state;
    let mut chaser = match chaser {
        Some(c) => c,
        None => d.fresh_side(1, AgentId::Chaser(0))?,
    };
    let last = reports.last().map_or(0, |r| r.phase);
    let mut converged = reports.last().is_some_and(|r| r.phase > 0 && r.equilibrium);
    let k_max = d.cfg.plan.k_max;
    let mut i = last + 1;
    while !converged && i <= k_max {
        let report = run_phase(d, i, &mut runner, &mut chaser)?;
        converged = report.equilibrium;
        reports.push(report);
        if let Some(out) = d.out {
            out.write_reports(&reports)?;
        }
        i += 1;
    }
    Ok(AmsOutcome {
        runner,
        chaser,
        reports,
        converged,
    })
}

/// Load the weights needed to continue a run from its output directory.
pub fn load_resume_state(out: &RunOutput) -> Result<AmsState> {
    let reports = RunOutput::read_reports(out.root())?;
    let last = reports.last().ok_or_else(|| {
        Error::InvalidInput(format!("{}: report.json is empty", out.root().display()))
    })?;
    if last.trained_side == TrainedSide::Both {
        return Err(Error::InvalidInput(
            "cannot resume a simultaneous-training run".into(),
        ));
    }
    let load = |label: &str| -> Result<SideModel> {
        Ok(SideModel {
            policy: crate::policy::load_policy(&out.policy_path(last.phase, label, "final"))?,
            value: crate::policy::load_value(&out.value_path(last.phase, label))?,
        })
    };
    let runner = load("runner")?;
    let chaser = if last.phase == 0 {
        None
    } else {
        Some(load("chaser")?)
    };
    Ok(AmsState {
        runner,
        chaser,
        reports,
    })
}

/// Both sides from fresh weights, updated together every iteration.
pub fn run_direct(d: &mut Driver<'_>) -> Result<(SideModel, SideModel, PhaseReport)> {
    let started = Instant::now();
    let cfg = d.cfg;
    let n = cfg.world.n_chasers;
    if n == 0 {
        return Err(Error::Config(
            "simultaneous training needs n_chasers >= 1".into(),
        ));
    }
    let mut runner = d.fresh_side(0, AgentId::Runner)?;
    let mut chaser = d.fresh_side(0, AgentId::Chaser(0))?;
    let run = train_stage(
        d,
        0,
        n,
        cfg.plan.direct_cap(),
        Slot::Train(&mut runner),
        Slot::Train(&mut chaser),
    )?;
    let eval = evaluate_success_rates(
        &cfg.world,
        &cfg.rewards,
        &runner.controller(true, "runner"),
        &chaser.controller(true, "chaser"),
        n,
        cfg.plan.ws,
        derive_seed(cfg.seed, 0, SEED_EVAL),
    )?;
    let report = report_from(
        0,
        TrainedSide::Both,
        run,
        &eval,
        Some(cfg.plan.eta),
        started,
    );
    d.finish(&report);
    Ok((runner, chaser, report))
}

/// A runner trained from fresh weights in a single stage against a fixed
/// chaser controller, with no cold start.
pub fn run_one_stage(
    d: &mut Driver<'_>,
    opponent: &dyn Controller,
) -> Result<(SideModel, PhaseReport)> {
    let started = Instant::now();
    let cfg = d.cfg;
    let n = cfg.world.n_chasers;
    let mut runner = d.fresh_side(0, AgentId::Runner)?;
    let run = train_stage(
        d,
        0,
        n,
        cfg.plan.stage_episode_cap,
        Slot::Train(&mut runner),
        Slot::Fixed(opponent),
    )?;
    let eval = evaluate_success_rates(
        &cfg.world,
        &cfg.rewards,
        &runner.controller(true, "runner"),
        opponent,
        n,
        cfg.plan.ws,
        derive_seed(cfg.seed, 0, SEED_EVAL),
    )?;
    let report = report_from(0, TrainedSide::Runner, run, &eval, None, started);
    d.finish(&report);
    Ok((runner, report))
}
