//! JSONL episode traces and bit-exact replay.
//!
//! The first line is a header holding everything needed to re-run the
//! episode; each following line is one step.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{episode_rng, initial_state, simulate_episode, Placement, PolicyRef};
use crate::arena::{AgentId, RewardWeights, StepResult, WorldConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub seed: u64,
    pub episode_index: u64,
    pub world: WorldConfig,
    pub rewards: RewardWeights,
    pub placement: Placement,
    pub runner: String,
    pub chaser: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t: usize,
    pub runner: [f64; 4],
    pub chasers: Vec<[f64; 4]>,
    pub target: [f64; 3],
    pub rewards: Vec<f64>,
    pub outcome: String,
}

impl TraceRecord {
    fn from_step(r: &StepResult) -> Self {
        Self {
            t: r.state.step,
            runner: r.state.runner.to_array(),
            chasers: r.state.chasers.iter().map(|c| c.to_array()).collect(),
            target: r.state.target,
            rewards: r.rewards.to_vec(),
            outcome: r.outcome.label().to_string(),
        }
    }
}

/// Simulate one evaluation episode and capture every step.
pub fn record_episode(header: &TraceHeader) -> Result<Vec<TraceRecord>> {
    let runner: PolicyRef = header.runner.parse()?;
    let chaser: PolicyRef = header.chaser.parse()?;
    let runner = runner.resolve(&header.world, AgentId::Runner)?;
    let chaser = chaser.resolve(&header.world, AgentId::Chaser(0))?;
    let mut rng = episode_rng(header.seed, header.episode_index);
    let init = initial_state(&header.world, header.placement, &mut rng)?;
    let mut records = Vec::new();
    simulate_episode(
        &header.world,
        &header.rewards,
        init,
        runner.as_ref(),
        chaser.as_ref(),
        &mut rng,
        |r| records.push(TraceRecord::from_step(r)),
    )?;
    Ok(records)
}

pub fn write_trace(path: &Path, header: &TraceHeader, records: &[TraceRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut f, header)?;
    f.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn read_trace(path: &Path) -> Result<(TraceHeader, Vec<TraceRecord>)> {
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let header: TraceHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l?)?,
        None => {
            return Err(Error::InvalidInput(format!(
                "{}: empty trace",
                path.display()
            )))
        }
    };
    let mut records = Vec::new();
    for l in lines {
        let l = l?;
        if !l.trim().is_empty() {
            records.push(serde_json::from_str(&l)?);
        }
    }
    Ok((header, records))
}

fn diverged(
    step: usize,
    field: &str,
    recorded: impl std::fmt::Debug,
    replayed: impl std::fmt::Debug,
) -> Error {
    Error::Divergence {
        step,
        field: field.into(),
        recorded: format!("{recorded:?}"),
        replayed: format!("{replayed:?}"),
    }
}

/// Re-run a recorded trace and fail at the first step that differs.
pub fn replay(path: &Path) -> Result<Vec<TraceRecord>> {
    let (header, recorded) = read_trace(path)?;
    let replayed = record_episode(&header)?;
    for (i, (a, b)) in recorded.iter().zip(&replayed).enumerate() {
        let step = a.t;
        if a.t != b.t {
            return Err(diverged(i, "t", a.t, b.t));
        }
        if a.runner.map(f64::to_bits) != b.runner.map(f64::to_bits) {
            return Err(diverged(step, "runner", a.runner, b.runner));
        }
        let bits = |v: &Vec<[f64; 4]>| v.iter().map(|c| c.map(f64::to_bits)).collect::<Vec<_>>();
        if bits(&a.chasers) != bits(&b.chasers) {
            return Err(diverged(step, "chasers", &a.chasers, &b.chasers));
        }
        if a.target.map(f64::to_bits) != b.target.map(f64::to_bits) {
            return Err(diverged(step, "target", a.target, b.target));
        }
        let rbits = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if rbits(&a.rewards) != rbits(&b.rewards) {
            return Err(diverged(step, "rewards", &a.rewards, &b.rewards));
        }
        if a.outcome != b.outcome {
            return Err(diverged(step, "outcome", &a.outcome, &b.outcome));
        }
    }
    if recorded.len() != replayed.len() {
        let step = recorded.len().min(replayed.len()) + 1;
        return Err(diverged(step, "length", recorded.len(), replayed.len()));
    }
    Ok(replayed)
}
