//! Success rate over mirrored chaser placements around the runner-target
//! line.

use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{episode_rng, simulate_episode, MatchResult, SweepRow};
use crate::arena::{random_heading, EpisodeState, RewardWeights, WorldConfig};
use crate::controller::Controller;
use crate::dynamics::AgentState;
use crate::error::{Error, Result};

/// Runner start and target; the line between them runs along +y.
pub const GEOMETRY_RUNNER: [f64; 3] = [2.5, 1.5, 1.0];
pub const GEOMETRY_TARGET: [f64; 3] = [2.5, 4.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryLayout {
    pub runner: [f64; 3],
    pub target: [f64; 3],
    pub chasers: [[f64; 3]; 2],
}

/// Two chasers at `radius` from the runner, each `angle_deg` off the
/// runner-to-target direction, one on either side of the line.
pub fn geometry_placement(
    world: &WorldConfig,
    angle_deg: f64,
    radius: f64,
) -> Result<GeometryLayout> {
    if !(angle_deg > 0.0 && angle_deg < 180.0) {
        return Err(Error::InvalidInput(format!(
            "angle must lie in (0, 180) degrees, got {angle_deg}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!(
            "radius must be > 0, got {radius}"
        )));
    }
    if world.n_chasers != 2 {
        return Err(Error::Config(format!(
            "geometry placement needs 2 chasers, world has {}",
            world.n_chasers
        )));
    }
    let a = angle_deg.to_radians();
    let r = GEOMETRY_RUNNER;
    let at = |side: f64| {
        [
            r[0] + side * radius * a.sin(),
            r[1] + radius * a.cos(),
            r[2],
        ]
    };
    let layout = GeometryLayout {
        runner: r,
        target: GEOMETRY_TARGET,
        chasers: [at(1.0), at(-1.0)],
    };
    let (tlo, thi) = world.target_region();
    let target_ok = (0..3).all(|k| layout.target[k] >= tlo[k] && layout.target[k] <= thi[k]);
    if !target_ok
        || !world.drone_spawnable(layout.runner)
        || !layout.chasers.iter().all(|c| world.drone_spawnable(*c))
    {
        return Err(Error::Config(format!(
            "placement ({angle_deg} deg, {radius} m) leaves the arena"
        )));
    }
    Ok(layout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub angles_deg: Vec<f64>,
    pub radii: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            angles_deg: vec![10.0, 15.0, 22.5, 30.0, 40.0, 60.0, 90.0, 120.0],
            radii: vec![0.5, 1.0, 1.5, 2.0],
            episodes: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub angle_deg: f64,
    pub radius: f64,
    /// `None` when the placement leaves the arena.
    pub result: Option<SweepRow>,
}

fn cell_seed(seed: u64, angle_deg: f64, radius: f64) -> u64 {
    // depends on the cell coordinates only, not on grid order
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [angle_deg.to_bits(), radius.to_bits()] {
        h ^= v;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

pub fn geometry_heatmap(
    world: &WorldConfig,
    weights: &RewardWeights,
    runner: &dyn Controller,
    chaser: &dyn Controller,
    cfg: &HeatmapConfig,
) -> Result<Vec<HeatmapCell>> {
    if cfg.episodes == 0 {
        return Err(Error::InvalidInput("episodes per cell must be >= 1".into()));
    }
    let mut cells = Vec::with_capacity(cfg.angles_deg.len() * cfg.radii.len());
    for &radius in &cfg.radii {
        for &angle in &cfg.angles_deg {
            let layout = match geometry_placement(world, angle, radius) {
                Ok(l) => l,
                Err(Error::Config(_)) => {
                    cells.push(HeatmapCell {
                        angle_deg: angle,
                        radius,
                        result: None,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let seed = cell_seed(cfg.seed, angle, radius);
            let mut outcomes = Vec::with_capacity(cfg.episodes);
            let mut steps = Vec::with_capacity(cfg.episodes);
            for i in 0..cfg.episodes {
                let mut rng = episode_rng(seed, i as u64);
                let init = EpisodeState::new(
                    AgentState::at(layout.runner, random_heading(&mut rng)),
                    layout
                        .chasers
                        .iter()
                        .map(|c| AgentState::at(*c, random_heading(&mut rng)))
                        .collect(),
                    layout.target,
                );
                let rec = simulate_episode(world, weights, init, runner, chaser, &mut rng, |_| {})?;
                outcomes.push(rec.outcome);
                steps.push(rec.steps);
            }
            let r = MatchResult::from_episodes(outcomes, steps);
            cells.push(HeatmapCell {
                angle_deg: angle,
                radius,
                result: Some(SweepRow::new(angle, &r)),
            });
        }
    }
    Ok(cells)
}

pub fn write_heatmap_csv(cells: &[HeatmapCell], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "angle_deg,radius,sr_runner,sr_chaser,timeout_rate,episodes,skipped"
    )?;
    for c in cells {
        match &c.result {
            Some(r) => writeln!(
                f,
                "{},{},{},{},{},{},false",
                c.angle_deg, c.radius, r.sr_runner, r.sr_chaser, r.timeout_rate, r.episodes
            )?,
            None => writeln!(f, "{},{},,,,0,true", c.angle_deg, c.radius)?,
        }
    }
    f.flush()?;
    Ok(())
}

fn heat(v: f64) -> Rgb<u8> {
    // dark blue -> yellow
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    Rgb([lerp(20.0, 250.0), lerp(30.0, 220.0), lerp(120.0, 40.0)])
}

/// One square per cell: columns are angles, rows radii (smallest on top).
/// Skipped cells are grey.
pub fn render_heatmap_png(cells: &[HeatmapCell], path: &Path) -> Result<()> {
    const PX: u32 = 48;
    let mut angles: Vec<f64> = cells.iter().map(|c| c.angle_deg).collect();
    let mut radii: Vec<f64> = cells.iter().map(|c| c.radius).collect();
    for v in [&mut angles, &mut radii] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    if angles.is_empty() {
        return Err(Error::InvalidInput("no heatmap cells to render".into()));
    }
    let mut img = RgbImage::from_pixel(
        angles.len() as u32 * PX,
        radii.len() as u32 * PX,
        Rgb([128, 128, 128]),
    );
    for c in cells {
        let Some(r) = &c.result else { continue };
        let col = angles.iter().position(|a| *a == c.angle_deg).unwrap_or(0) as u32;
        let row = radii.iter().position(|a| *a == c.radius).unwrap_or(0) as u32;
        let color = heat(r.sr_runner);
        for y in row * PX + 1..(row + 1) * PX - 1 {
            for x in col * PX + 1..(col + 1) * PX - 1 {
                img.put_pixel(x, y, color);
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path).map_err(|e| Error::Image(e.to_string()))
}
