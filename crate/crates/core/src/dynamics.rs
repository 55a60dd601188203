//! State-transition mathematics for the drones.
//!
//! The training environment uses the heading-only kinematic model: a drone
//! state is `[x, y, z, psi]` and a command is a body-frame velocity plus a
//! yaw rate. The heading block maps body velocities into the world as
//!
//! ```text
//! [ cos psi   sin psi  0  0 ]
//! [ -sin psi  cos psi  0  0 ]
//! [ 0         0        1  0 ]
//! [ 0         0        0  1 ]
//! ```
//!
//! and states advance by explicit Euler with additive Gaussian process noise
//! scaled by `sqrt(dt)`. The quaternion and point-mass helpers exist for
//! fidelity cross-checks and are not used by the environment.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.81;

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; guard the exact lower boundary
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Position (m) and heading (rad) of one drone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, z: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            z,
            psi: wrap_angle(psi),
        }
    }

    pub fn at(p: [f64; 3], psi: f64) -> Self {
        Self::new(p[0], p[1], p[2], psi)
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.psi]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Desired body-frame velocities (m/s) and yaw rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub vx_b: f64,
    pub vy_b: f64,
    pub vz_b: f64,
    pub wz: f64,
}

impl ControlCommand {
    pub const ZERO: ControlCommand = ControlCommand {
        vx_b: 0.0,
        vy_b: 0.0,
        vz_b: 0.0,
        wz: 0.0,
    };

    pub fn new(vx_b: f64, vy_b: f64, vz_b: f64, wz: f64) -> Self {
        Self {
            vx_b,
            vy_b,
            vz_b,
            wz,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.vx_b, self.vy_b, self.vz_b, self.wz]
    }
}

/// Per-step process noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub sigma_psi: f64,
}

impl NoiseSpec {
    pub fn uniform(sigma: f64) -> Self {
        Self {
            sigma_x: sigma,
            sigma_y: sigma,
            sigma_z: sigma,
            sigma_psi: sigma,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_x == 0.0 && self.sigma_y == 0.0 && self.sigma_z == 0.0 && self.sigma_psi == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let s = [self.sigma_x, self.sigma_y, self.sigma_z, self.sigma_psi];
        if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "noise sigmas must be finite and >= 0, got {s:?}"
            )));
        }
        Ok(())
    }
}

/// Per-axis clamp of the linear velocity and clamp of the yaw rate.
pub fn clamp_command(cmd: ControlCommand, v_max: f64, w_max: f64) -> Result<ControlCommand> {
    if !(v_max > 0.0 && w_max > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bounds must be positive (v_max={v_max}, w_max={w_max})"
        )));
    }
    if cmd.to_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite command {cmd:?}")));
    }
    Ok(ControlCommand {
        vx_b: cmd.vx_b.clamp(-v_max, v_max),
        vy_b: cmd.vy_b.clamp(-v_max, v_max),
        vz_b: cmd.vz_b.clamp(-v_max, v_max),
        wz: cmd.wz.clamp(-w_max, w_max),
    })
}

/// The 4x4 kinematic transition matrix for heading `psi`.
pub fn transition_matrix(psi: f64) -> [[f64; 4]; 4] {
    let (s, c) = psi.sin_cos();
    [
        [c, s, 0.0, 0.0],
        [-s, c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Map a body-frame planar vector into world axes (upper-left block of the
/// transition matrix).
pub fn body_to_world(psi: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = psi.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

/// Inverse of [`body_to_world`].
pub fn world_to_body(psi: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = psi.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// One Euler step of the kinematic model with process noise.
pub fn step_kinematic<R: Rng + ?Sized>(
    s: AgentState,
    cmd: ControlCommand,
    dt: f64,
    noise: &NoiseSpec,
    rng: &mut R,
) -> AgentState {
    let g = transition_matrix(s.psi);
    let u = cmd.to_array();
    let mut rate = [0.0; 4];
    for (r, row) in rate.iter_mut().zip(g.iter()) {
        *r = row.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    }
    let mut w = [0.0; 4];
    if !noise.is_zero() {
        let sq = dt.sqrt();
        let sig = [noise.sigma_x, noise.sigma_y, noise.sigma_z, noise.sigma_psi];
        for (wi, si) in w.iter_mut().zip(sig) {
            let n: f64 = rng.sample(StandardNormal);
            *wi = si * n * sq;
        }
    }
    AgentState {
        x: s.x + rate[0] * dt + w[0],
        y: s.y + rate[1] * dt + w[1],
        z: s.z + rate[2] * dt + w[2],
        psi: wrap_angle(s.psi + rate[3] * dt + w[3]),
    }
}

/// Scalar-first attitude quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        q0: 1.0,
        q1: 0.0,
        q2: 0.0,
        q3: 0.0,
    };

    pub fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Self {
        Self { q0, q1, q2, q3 }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q0, self.q1, self.q2, self.q3]
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Self::new(self.q0 / n, self.q1 / n, self.q2 / n, self.q3 / n)
    }

    /// Body-to-world rotation matrix.
    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let Quaternion { q0, q1, q2, q3 } = *self;
        [
            [
                1.0 - 2.0 * (q2 * q2 + q3 * q3),
                2.0 * (q1 * q2 - q0 * q3),
                2.0 * (q1 * q3 + q0 * q2),
            ],
            [
                2.0 * (q1 * q2 + q0 * q3),
                1.0 - 2.0 * (q1 * q1 + q3 * q3),
                2.0 * (q2 * q3 - q0 * q1),
            ],
            [
                2.0 * (q1 * q3 - q0 * q2),
                2.0 * (q2 * q3 + q0 * q1),
                1.0 - 2.0 * (q1 * q1 + q2 * q2),
            ],
        ]
    }
}

/// Body rates, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyRate {
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl BodyRate {
    pub fn new(wx: f64, wy: f64, wz: f64) -> Self {
        Self { wx, wy, wz }
    }
}

/// Skew-symmetric rate matrix acting on scalar-first quaternions.
pub fn omega_matrix(w: BodyRate) -> [[f64; 4]; 4] {
    let BodyRate { wx, wy, wz } = w;
    [
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, wz, -wy],
        [wy, -wz, 0.0, wx],
        [wz, wy, -wx, 0.0],
    ]
}

/// `q_dot = 0.5 * Omega(w) * q`.
pub fn quaternion_derivative(q: Quaternion, w: BodyRate) -> [f64; 4] {
    let om = omega_matrix(w);
    let qa = q.to_array();
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(om.iter()) {
        *o = 0.5 * row.iter().zip(qa.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    out
}

/// Euler step on the quaternion kinematics followed by renormalization.
pub fn integrate_quaternion(q: Quaternion, w: BodyRate, dt: f64) -> Quaternion {
    let d = quaternion_derivative(q, w);
    Quaternion::new(
        q.q0 + d[0] * dt,
        q.q1 + d[1] * dt,
        q.q2 + d[2] * dt,
        q.q3 + d[3] * dt,
    )
    .normalize()
}

/// Translational point-mass step under mass-normalized collective thrust `f`.
pub fn point_mass_step(
    p: [f64; 3],
    v: [f64; 3],
    q: Quaternion,
    f: f64,
    dt: f64,
) -> ([f64; 3], [f64; 3]) {
    let r = q.rotation_matrix();
    let acc = [r[0][2] * f, r[1][2] * f, r[2][2] * f - GRAVITY];
    let v_next = [v[0] + acc[0] * dt, v[1] + acc[1] * dt, v[2] + acc[2] * dt];
    let p_next = [p[0] + v[0] * dt, p[1] + v[1] * dt, p[2] + v[2] * dt];
    (p_next, v_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EXACT: f64 = 1e-12;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn clamp_examples() {
        let z = clamp_command(ControlCommand::ZERO, 1.0, 20.0).unwrap();
        assert_eq!(z, ControlCommand::ZERO);
        let c = clamp_command(ControlCommand::new(2.5, -0.3, 0.0, 0.0), 1.0, 20.0).unwrap();
        assert_eq!(c, ControlCommand::new(1.0, -0.3, 0.0, 0.0));
        let c = clamp_command(ControlCommand::new(0.0, 0.0, 0.0, 30.0), 1.0, 20.0).unwrap();
        assert_eq!(c.wz, 20.0);
    }

    #[test]
    fn clamp_rejects_non_finite() {
        let bad = ControlCommand::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(
            clamp_command(bad, 1.0, 1.0),
            Err(Error::InvalidInput(_))
        ));
        let inf = ControlCommand::new(0.0, 0.0, f64::INFINITY, 0.0);
        assert!(clamp_command(inf, 1.0, 1.0).is_err());
        assert!(clamp_command(ControlCommand::ZERO, 0.0, 1.0).is_err());
    }

    #[test]
    fn transition_matrix_examples() {
        let id = transition_matrix(0.0);
        for (i, row) in id.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let m = transition_matrix(PI / 2.0);
        assert!(close(&m[0], &[0.0, 1.0, 0.0, 0.0], EXACT));
        assert!(close(&m[1], &[-1.0, 0.0, 0.0, 0.0], EXACT));
    }

    #[test]
    fn kinematic_step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = NoiseSpec::default();
        let s = step_kinematic(
            AgentState::new(0.0, 0.0, 0.0, 0.0),
            ControlCommand::new(1.0, 0.0, 0.0, 0.0),
            0.05,
            &zero,
            &mut rng,
        );
        assert!(close(&s.to_array(), &[0.05, 0.0, 0.0, 0.0], EXACT));

        let s = step_kinematic(
            AgentState::new(0.0, 0.0, 0.0, PI / 2.0),
            ControlCommand::new(1.0, 0.0, 0.0, 0.0),
            0.05,
            &zero,
            &mut rng,
        );
        assert!(close(&s.to_array(), &[0.0, -0.05, 0.0, PI / 2.0], EXACT));

        let s0 = AgentState::new(1.2, -0.4, 2.0, 0.7);
        let s1 = step_kinematic(s0, ControlCommand::ZERO, 0.05, &zero, &mut rng);
        assert_eq!(s0, s1);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < EXACT);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < EXACT);
    }

    #[test]
    fn quaternion_examples() {
        assert_eq!(
            quaternion_derivative(Quaternion::new(0.5, 0.5, 0.5, 0.5), BodyRate::default()),
            [0.0; 4]
        );
        let d = quaternion_derivative(Quaternion::IDENTITY, BodyRate::new(1.0, 0.0, 0.0));
        assert!(close(&d, &[0.0, 0.5, 0.0, 0.0], EXACT));
        let q = Quaternion::new(0.3, -0.2, 0.9, 0.1).normalize();
        assert_eq!(
            integrate_quaternion(q, BodyRate::default(), 0.01),
            q.normalize()
        );
    }

    #[test]
    fn quaternion_pi_rotation_about_x() {
        // closed form: rotating by angle a about unit axis n gives (cos a/2, n sin a/2)
        let steps = 100_000;
        let dt = 1.0 / steps as f64;
        let w = BodyRate::new(PI, 0.0, 0.0);
        let mut q = Quaternion::IDENTITY;
        for _ in 0..steps {
            q = integrate_quaternion(q, w, dt);
        }
        let expected = [(PI / 2.0).cos(), (PI / 2.0).sin(), 0.0, 0.0];
        let dot: f64 = q.to_array().iter().zip(expected).map(|(a, b)| a * b).sum();
        let angle_err = 2.0 * dot.abs().min(1.0).acos();
        assert!(angle_err < 1e-3, "angle error {angle_err}");
    }

    #[test]
    fn point_mass_examples() {
        let (_, v) = point_mass_step(
            [0.0; 3],
            [0.3, -0.1, 0.2],
            Quaternion::IDENTITY,
            GRAVITY,
            0.05,
        );
        assert!(close(&v, &[0.3, -0.1, 0.2], EXACT));
        let (_, v) = point_mass_step([0.0; 3], [0.0; 3], Quaternion::IDENTITY, 0.0, 0.05);
        assert!(close(&v, &[0.0, 0.0, -0.4905], EXACT));
        let (p, _) = point_mass_step(
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            Quaternion::IDENTITY,
            GRAVITY,
            0.1,
        );
        assert!(close(&p, &[0.1, 0.0, 1.0], EXACT));
    }

    #[test]
    fn quaternion_norm_preserved_over_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut q = Quaternion::IDENTITY;
        for _ in 0..1_000_000 {
            let w = BodyRate::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            q = integrate_quaternion(q, w, 0.01);
            assert!((q.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_variance_matches_sigma_squared_dt() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sigma = 0.1;
        let dt = 0.05;
        let noise = NoiseSpec::uniform(sigma);
        let n = 100_000;
        let s0 = AgentState::new(0.0, 0.0, 0.0, 0.0);
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let s = step_kinematic(s0, ControlCommand::ZERO, dt, &noise, &mut rng);
            for (k, d) in [s.x, s.y, s.z].into_iter().enumerate() {
                sum[k] += d;
                sq[k] += d * d;
            }
        }
        let target = sigma * sigma * dt;
        for k in 0..3 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!(
                (var / target - 1.0).abs() < 0.05,
                "axis {k}: var {var} vs {target}"
            );
        }
    }

    proptest! {
        #[test]
        fn heading_block_is_orthonormal(psi in -10.0f64..10.0) {
            let m = transition_matrix(psi);
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            prop_assert!((det - 1.0).abs() < 1e-12);
            let c0 = m[0][0] * m[0][0] + m[1][0] * m[1][0];
            let c01 = m[0][0] * m[0][1] + m[1][0] * m[1][1];
            prop_assert!((c0 - 1.0).abs() < 1e-12 && c01.abs() < 1e-12);
        }

        #[test]
        fn world_body_round_trip(psi in -4.0f64..4.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let w = body_to_world(psi, world_to_body(psi, [a, b]));
            prop_assert!((w[0] - a).abs() < 1e-12 && (w[1] - b).abs() < 1e-12);
        }

        #[test]
        fn zero_noise_step_is_deterministic_and_bounded(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in 0.0f64..3.0, psi in -3.1f64..3.1,
            vx in -5.0f64..5.0, vy in -5.0f64..5.0, vz in -5.0f64..5.0, wz in -30.0f64..30.0,
        ) {
            let s = AgentState::new(x, y, z, psi);
            let cmd = clamp_command(ControlCommand::new(vx, vy, vz, wz), 1.0, 20.0).unwrap();
            let mut r1 = ChaCha8Rng::seed_from_u64(1);
            let mut r2 = ChaCha8Rng::seed_from_u64(2);
            let a = step_kinematic(s, cmd, 0.05, &NoiseSpec::default(), &mut r1);
            let b = step_kinematic(s, cmd, 0.05, &NoiseSpec::default(), &mut r2);
            prop_assert_eq!(a, b);
            let d = ((a.x - x).powi(2) + (a.y - y).powi(2) + (a.z - z).powi(2)).sqrt();
            prop_assert!(d <= 3f64.sqrt() * 0.05 + 1e-12);
            prop_assert!(a.psi > -PI && a.psi <= PI);
        }

        #[test]
        fn quaternion_derivative_orthogonal(
            q0 in -1.0f64..1.0, q1 in -1.0f64..1.0, q2 in -1.0f64..1.0, q3 in -1.0f64..1.0,
            wx in -5.0f64..5.0, wy in -5.0f64..5.0, wz in -5.0f64..5.0,
        ) {
            let q = Quaternion::new(q0, q1, q2, q3);
            prop_assume!(q.norm() > 1e-3);
            let q = q.normalize();
            let d = quaternion_derivative(q, BodyRate::new(wx, wy, wz));
            let dot: f64 = q.to_array().iter().zip(d).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() < 1e-12);
        }
    }
}
