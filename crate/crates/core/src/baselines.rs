//! Closed-form comparison controllers: random chasers, proportional
//! pursuit and potential-field navigation.
//!
//! All three compute a velocity in world axes and rotate it into the body
//! frame with the inverse heading rotation before handing it to the arena.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arena::{dist, sub, AgentId, EpisodeState, WorldConfig};
use crate::controller::Controller;
use crate::dynamics::{clamp_command, world_to_body, ControlCommand};
use crate::error::{Error, Result};

/// Nearest-repulsor distance floor, meters.
pub const D_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApfConfig {
    pub xi: f64,
    pub zeta: f64,
    pub d_star_g: f64,
    pub d_star: f64,
    /// Treat the four side walls as planar repulsors too.
    pub wall_repulsion: bool,
}

impl Default for ApfConfig {
    fn default() -> Self {
        Self {
            xi: 2.0,
            zeta: 2.0,
            d_star_g: 0.5,
            d_star: 0.5,
            wall_repulsion: false,
        }
    }
}

impl ApfConfig {
    pub fn validate(&self) -> Result<()> {
        let v = [self.xi, self.zeta, self.d_star_g, self.d_star];
        if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!(
                "apf gains and distances must be > 0, got {v:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub kp: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { kp: 2.0 }
    }
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// World-axis velocity to a clamped body-frame command with `wz = 0`.
pub fn world_velocity_command(v: [f64; 3], psi: f64, v_max: f64) -> Result<ControlCommand> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite velocity {v:?}")));
    }
    let v = v.map(|x| x.clamp(-v_max, v_max));
    let b = world_to_body(psi, [v[0], v[1]]);
    clamp_command(ControlCommand::new(b[0], b[1], v[2], 0.0), v_max, f64::MAX)
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, v_max: f64) -> ControlCommand {
    let mut u = || rng.random_range(-v_max..=v_max);
    ControlCommand::new(u(), u(), u(), 0.0)
}

/// Proportional pursuit on the world-frame runner-relative vector `p_cr`.
pub fn pid_pursuit(
    p_cr: [f64; 3],
    psi: f64,
    cfg: &PidConfig,
    v_max: f64,
) -> Result<ControlCommand> {
    world_velocity_command(scale(p_cr, cfg.kp), psi, v_max)
}

pub fn apf_attractive_potential(p_r: [f64; 3], p_g: [f64; 3], cfg: &ApfConfig) -> f64 {
    let d = dist(p_r, p_g);
    if d <= cfg.d_star_g {
        0.5 * cfg.xi * d * d
    } else {
        cfg.d_star_g * cfg.xi * d - 0.5 * cfg.xi * cfg.d_star_g * cfg.d_star_g
    }
}

pub fn apf_attractive_gradient(p_r: [f64; 3], p_g: [f64; 3], cfg: &ApfConfig) -> [f64; 3] {
    let rel = sub(p_r, p_g);
    let d = dist(p_r, p_g);
    if d <= cfg.d_star_g {
        scale(rel, cfg.xi)
    } else {
        scale(rel, cfg.d_star_g * cfg.xi / d)
    }
}

fn nearest(p_r: [f64; 3], chasers: &[[f64; 3]]) -> Option<([f64; 3], f64)> {
    chasers
        .iter()
        .map(|c| (*c, dist(p_r, *c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn repulsive_term(d: f64, cfg: &ApfConfig) -> Option<f64> {
    let d = d.max(D_FLOOR);
    (d <= cfg.d_star).then(|| cfg.zeta * (1.0 / cfg.d_star - 1.0 / d) / (d * d))
}

pub fn apf_repulsive_potential(p_r: [f64; 3], chasers: &[[f64; 3]], cfg: &ApfConfig) -> f64 {
    match nearest(p_r, chasers) {
        Some((_, d)) => {
            let d = d.max(D_FLOOR);
            if d <= cfg.d_star {
                0.5 * cfg.zeta * (1.0 / d - 1.0 / cfg.d_star).powi(2)
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

/// Gradient of the repulsive potential of the nearest chaser.
pub fn apf_repulsive_gradient(p_r: [f64; 3], chasers: &[[f64; 3]], cfg: &ApfConfig) -> [f64; 3] {
    let Some((c, d)) = nearest(p_r, chasers) else {
        return [0.0; 3];
    };
    let Some(k) = repulsive_term(d, cfg) else {
        return [0.0; 3];
    };
    if d == 0.0 {
        // direction undefined; no push
        return [0.0; 3];
    }
    let grad_d = scale(sub(p_r, c), 1.0 / d);
    scale(grad_d, k)
}

/// Repulsion from the four side walls, each a plane with inward normal.
fn wall_gradient(p_r: [f64; 3], bounds: [f64; 3], cfg: &ApfConfig) -> [f64; 3] {
    let mut g = [0.0; 3];
    for axis in 0..2 {
        for (d, n) in [(p_r[axis], 1.0), (bounds[axis] - p_r[axis], -1.0)] {
            if let Some(k) = repulsive_term(d, cfg) {
                g[axis] += k * n;
            }
        }
    }
    g
}

/// Body-frame command following `F = -(grad U_att + grad U_rep)`.
pub fn apf_navigation(
    p_r: [f64; 3],
    psi_r: f64,
    p_g: [f64; 3],
    chasers: &[[f64; 3]],
    cfg: &ApfConfig,
    v_max: f64,
) -> Result<ControlCommand> {
    let grad = add(
        apf_attractive_gradient(p_r, p_g, cfg),
        apf_repulsive_gradient(p_r, chasers, cfg),
    );
    world_velocity_command(scale(grad, -1.0), psi_r, v_max)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomController;

impl Controller for RandomController {
    fn act(
        &self,
        _: &EpisodeState,
        agent: AgentId,
        cfg: &WorldConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<ControlCommand> {
        Ok(random_policy(rng, cfg.v_max(agent)))
    }

    fn name(&self) -> String {
        "random".into()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PidController(pub PidConfig);

impl Controller for PidController {
    fn act(
        &self,
        st: &EpisodeState,
        agent: AgentId,
        cfg: &WorldConfig,
        _: &mut ChaCha8Rng,
    ) -> Result<ControlCommand> {
        let AgentId::Chaser(i) = agent else {
            return Err(Error::InvalidInput(
                "pid pursuit drives chasers only".into(),
            ));
        };
        let me = st.agent(agent);
        let p_cr = sub(st.runner.position(), me.position());
        pid_pursuit(p_cr, me.psi, &self.0, cfg.v_max(AgentId::Chaser(i)))
    }

    fn name(&self) -> String {
        "pid".into()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ApfController(pub ApfConfig);

impl Controller for ApfController {
    fn act(
        &self,
        st: &EpisodeState,
        agent: AgentId,
        cfg: &WorldConfig,
        _: &mut ChaCha8Rng,
    ) -> Result<ControlCommand> {
        if agent != AgentId::Runner {
            return Err(Error::InvalidInput(
                "apf navigation drives the runner only".into(),
            ));
        }
        let p_r = st.runner.position();
        let chasers: Vec<[f64; 3]> = st.alive_chasers().map(|(_, c)| c.position()).collect();
        let mut grad = add(
            apf_attractive_gradient(p_r, st.target, &self.0),
            apf_repulsive_gradient(p_r, &chasers, &self.0),
        );
        if self.0.wall_repulsion {
            grad = add(grad, wall_gradient(p_r, cfg.bounds, &self.0));
        }
        world_velocity_command(scale(grad, -1.0), st.runner.psi, cfg.runner_v_max)
    }

    fn name(&self) -> String {
        "apf".into()
    }
}
