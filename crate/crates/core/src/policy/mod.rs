//! Policy and value networks.
//!
//! The policy is a diagonal Gaussian whose mean is the tanh-squashed network
//! output scaled to the action bounds and whose log standard deviation is a
//! learned, state-independent vector. Samples are clamped to the bounds but
//! their log-density is evaluated before clamping.

mod mlp;
mod weights;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::ControlCommand;
use crate::error::{Error, Result};

pub use mlp::{Activation, Dense, DenseGrad, Mlp, MlpGrad};
pub use weights::{load_policy, load_value, save_policy, save_value, WeightFile, FORMAT_VERSION};

/// `0.5 * ln(2 pi)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Output-layer init scale relative to fan-in scaling; keeps fresh policies
/// close to a zero-mean action.
const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 512],
            activation: Activation::Sigmoid,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "network.hidden must be non-empty positive sizes, got {:?}",
                self.hidden
            )));
        }
        Ok(())
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect()
    }
}

/// Gaussian policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub net: Mlp,
    pub log_std: Vec<f64>,
    /// Per-component action bound (the mean lies strictly inside `+-bound`).
    pub bounds: Vec<f64>,
}

/// Scalar state-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueParameters {
    pub net: Mlp,
}

/// Policy bounds for the drone action `[vx, vy, vz, wz]`.
pub fn drone_bounds(v_max: f64, w_max: f64) -> Vec<f64> {
    vec![v_max, v_max, v_max, w_max]
}

/// Fresh policy: fan-in uniform weights, zero biases and
/// `log_std = ln(0.5 * v_max)` where `v_max` is the first bound.
pub fn init_params<R: Rng + ?Sized>(
    obs_dim: usize,
    act_dim: usize,
    bounds: Vec<f64>,
    net: &NetworkConfig,
    rng: &mut R,
) -> Result<PolicyParameters> {
    if obs_dim == 0 || act_dim == 0 {
        return Err(Error::InvalidInput("policy dimensions must be > 0".into()));
    }
    if bounds.len() != act_dim || bounds.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "need {act_dim} positive bounds, got {bounds:?}"
        )));
    }
    net.validate()?;
    let mlp = Mlp::new(
        &net.sizes(obs_dim, act_dim),
        net.activation,
        OUTPUT_INIT_SCALE,
        rng,
    );
    let log_std = vec![(0.5 * bounds[0]).ln(); act_dim];
    Ok(PolicyParameters {
        net: mlp,
        log_std,
        bounds,
    })
}

pub fn init_value<R: Rng + ?Sized>(
    obs_dim: usize,
    net: &NetworkConfig,
    rng: &mut R,
) -> Result<ValueParameters> {
    if obs_dim == 0 {
        return Err(Error::InvalidInput(
            "value input dimension must be > 0".into(),
        ));
    }
    net.validate()?;
    Ok(ValueParameters {
        net: Mlp::new(&net.sizes(obs_dim, 1), net.activation, 1.0, rng),
    })
}

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDist {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    /// Sample clamped to the bounds.
    pub action: Vec<f64>,
    /// Unclamped sample (what the log-density refers to).
    pub raw: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ActionSample {
    /// Interpret a 4-dimensional action as a drone command.
    pub fn command(&self) -> Result<ControlCommand> {
        to_command(&self.action)
    }
}

pub fn to_command(a: &[f64]) -> Result<ControlCommand> {
    match a {
        [vx, vy, vz, wz] => Ok(ControlCommand::new(*vx, *vy, *vz, *wz)),
        _ => Err(Error::Dimension {
            expected: 4,
            got: a.len(),
        }),
    }
}

impl ActionDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ActionSample {
        let raw: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let n: f64 = rng.sample(StandardNormal);
                m + s * n
            })
            .collect();
        self.finish(raw)
    }

    /// Deterministic mode: the mean, drawing nothing from any rng.
    pub fn mode(&self) -> ActionSample {
        self.finish(self.mean.clone())
    }

    fn finish(&self, raw: Vec<f64>) -> ActionSample {
        let action = raw
            .iter()
            .zip(&self.bounds)
            .map(|(a, b)| a.clamp(-b, *b))
            .collect();
        ActionSample {
            action,
            log_prob: self.log_prob(&raw),
            raw,
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    /// Sum of per-dimension Gaussian log-densities at `raw`.
    pub fn log_prob(&self, raw: &[f64]) -> f64 {
        gaussian_log_prob(&self.mean, &self.std, raw)
    }

    pub fn entropy(&self) -> f64 {
        self.std.iter().map(|s| s.ln() + 0.5 + HALF_LN_2PI).sum()
    }
}

pub fn gaussian_log_prob(mean: &[f64], std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(std)
        .zip(x)
        .map(|((m, s), x)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_2PI
        })
        .sum()
}

/// Entropy of a diagonal Gaussian with the given log standard deviations.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum()
}

/// Per-sample gradient seeds for [`PolicyParameters::backward`]:
/// `d loss / d mean` and `d loss / d log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySeed {
    pub d_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub net: MlpGrad,
    pub log_std: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros_like(p: &PolicyParameters) -> Self {
        Self {
            net: MlpGrad::zeros_like(&p.net),
            log_std: vec![0.0; p.log_std.len()],
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.net.slices();
        v.push(&self.log_std);
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.net.slices_mut();
        v.push(&mut self.log_std);
        v
    }
}

/// Cached forward pass of the policy for one observation.
pub struct PolicyTrace {
    acts: Vec<Vec<f64>>,
    /// `tanh` of the network output.
    squashed: Vec<f64>,
    pub mean: Vec<f64>,
}

impl PolicyParameters {
    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.log_std.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Mean and standard deviation of the action distribution.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.net.forward(obs)?;
        let mean = out
            .iter()
            .zip(&self.bounds)
            .map(|(z, b)| b * z.tanh())
            .collect();
        Ok((mean, self.std()))
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<ActionDist> {
        let (mean, std) = self.forward(obs)?;
        Ok(ActionDist {
            mean,
            std,
            bounds: self.bounds.clone(),
        })
    }

    pub fn forward_traced(&self, obs: &[f64]) -> Result<PolicyTrace> {
        let acts = self.net.forward_cached(obs)?;
        let squashed: Vec<f64> = acts
            .last()
            .map(|o| o.iter().map(|z| z.tanh()).collect())
            .unwrap_or_default();
        let mean = squashed
            .iter()
            .zip(&self.bounds)
            .map(|(t, b)| b * t)
            .collect();
        Ok(PolicyTrace {
            acts,
            squashed,
            mean,
        })
    }

    /// Accumulate gradients for one traced sample.
    pub fn backward_traced(
        &self,
        trace: &PolicyTrace,
        seed: &PolicySeed,
        grad: &mut PolicyGrad,
    ) -> Result<()> {
        if seed.d_mean.len() != self.act_dim() || seed.d_log_std.len() != self.act_dim() {
            return Err(Error::Dimension {
                expected: self.act_dim(),
                got: seed.d_mean.len().min(seed.d_log_std.len()),
            });
        }
        let d_out: Vec<f64> = seed
            .d_mean
            .iter()
            .zip(&trace.squashed)
            .zip(&self.bounds)
            .map(|((d, t), b)| d * b * (1.0 - t * t))
            .collect();
        self.net.backward_into(&trace.acts, &d_out, &mut grad.net)?;
        for (g, d) in grad.log_std.iter_mut().zip(&seed.d_log_std) {
            *g += d;
        }
        Ok(())
    }

    /// Gradient of `sum_i seed_i . (mean_i, log_std)` with respect to every
    /// parameter.
    pub fn backward(&self, obs: &[&[f64]], seeds: &[PolicySeed]) -> Result<PolicyGrad> {
        if obs.len() != seeds.len() {
            return Err(Error::Dimension {
                expected: obs.len(),
                got: seeds.len(),
            });
        }
        let mut grad = PolicyGrad::zeros_like(self);
        for (o, s) in obs.iter().zip(seeds) {
            let t = self.forward_traced(o)?;
            self.backward_traced(&t, s, &mut grad)?;
        }
        Ok(grad)
    }

    /// Act on one observation; `deterministic` returns the mean.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<ActionSample> {
        let d = self.distribution(obs)?;
        Ok(if deterministic {
            d.mode()
        } else {
            d.sample(rng)
        })
    }

    /// Replace the action bounds, e.g. to run a policy at another speed.
    pub fn with_bounds(mut self, bounds: Vec<f64>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.net.slices();
        v.push(&self.log_std);
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.net.slices_mut();
        v.push(&mut self.log_std);
        v
    }

    /// Order-sensitive checksum of all parameter bits.
    pub fn checksum(&self) -> u64 {
        checksum(self.slices())
    }
}

impl ValueParameters {
    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn forward(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.net.forward(obs)?[0])
    }

    pub fn forward_batch(&self, obs: &[&[f64]]) -> Result<Vec<f64>> {
        obs.iter().map(|o| self.forward(o)).collect()
    }

    /// Gradient of `sum_i seed_i * V(obs_i)`.
    pub fn backward(&self, obs: &[&[f64]], seeds: &[f64]) -> Result<MlpGrad> {
        let seeds: Vec<Vec<f64>> = seeds.iter().map(|s| vec![*s]).collect();
        self.net.backward(obs, &seeds)
    }

    pub fn checksum(&self) -> u64 {
        checksum(self.net.slices())
    }
}

fn checksum(slices: Vec<&[f64]>) -> u64 {
    // FNV-1a over the raw bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in slices {
        for v in s {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// `-0.5 * ln(2 pi)` times the dimension: log-density at the mean with unit std.
pub fn unit_gaussian_peak(dim: usize) -> f64 {
    -(dim as f64) * 0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetworkConfig {
        NetworkConfig {
            hidden: vec![8, 8],
            activation: Activation::Sigmoid,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(
            9,
            4,
            drone_bounds(1.0, 20.0),
            &small(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let b = init_params(
            9,
            4,
            drone_bounds(1.0, 20.0),
            &small(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log_std, vec![0.5f64.ln(); 4]);
    }

    #[test]
    fn default_parameter_count() {
        let p = init_params(
            9,
            4,
            drone_bounds(1.0, 20.0),
            &NetworkConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(
            p.param_count(),
            9 * 512 + 512 + 512 * 512 + 512 + 512 * 4 + 4 + 4
        );
        assert_eq!(p.param_count(), 269_832);
    }

    #[test]
    fn fresh_policy_mean_is_small() {
        for seed in 0..100 {
            let p = init_params(
                9,
                4,
                drone_bounds(1.0, 20.0),
                &NetworkConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            let (mean, _) = p.forward(&[0.0; 9]).unwrap();
            assert_eq!(mean.len(), 4);
            for m in &mean[..3] {
                assert!(m.abs() < 0.5, "seed {seed}: {mean:?}");
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_mean() {
        let mut p = init_params(
            6,
            4,
            drone_bounds(1.0, 20.0),
            &small(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        p.net = Mlp::zeros(&[6, 8, 8, 4], Activation::Sigmoid);
        assert_eq!(p.forward(&[1.0; 6]).unwrap().0, vec![0.0; 4]);
        let v = ValueParameters {
            net: Mlp::zeros(&[6, 8, 8, 1], Activation::Sigmoid),
        };
        assert_eq!(v.forward(&[3.0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn mean_stays_inside_bounds() {
        let mut p = init_params(
            3,
            4,
            drone_bounds(1.0, 20.0),
            &small(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for l in &mut p.net.layers {
            l.w.iter_mut().for_each(|w| *w *= 50.0);
        }
        let (mean, _) = p.forward(&[10.0, -10.0, 3.0]).unwrap();
        for (m, b) in mean.iter().zip(&p.bounds) {
            assert!(m.abs() <= *b);
        }
    }

    #[test]
    fn log_prob_at_mean_unit_std() {
        let d = ActionDist {
            mean: vec![0.3, -0.2, 0.0, 1.0],
            std: vec![1.0; 4],
            bounds: vec![5.0; 4],
        };
        let lp = d.log_prob(&d.mean);
        assert!((lp - unit_gaussian_peak(4)).abs() < 1e-12);
        assert!((lp + 3.675_754_132_818_690_5).abs() < 1e-9);
        // maximal at the mean
        assert!(d.log_prob(&[0.31, -0.2, 0.0, 1.0]) < lp);
    }

    #[test]
    fn deterministic_mode_draws_nothing() {
        let d = ActionDist {
            mean: vec![0.1, 0.2, 0.3, 0.4],
            std: vec![0.5; 4],
            bounds: vec![1.0; 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let before = rng.clone();
        let s = d.mode();
        assert_eq!(s.action, d.mean);
        assert_eq!(rng.random::<u64>(), before.clone().random::<u64>());
        // tiny std collapses onto the mean
        let narrow = ActionDist {
            std: vec![1e-12; 4],
            ..d.clone()
        };
        let s = narrow.sample(&mut rng);
        for (a, m) in s.action.iter().zip(&d.mean) {
            assert!((a - m).abs() < 1e-9);
        }
    }

    #[test]
    fn samples_are_clamped_but_density_is_unclamped() {
        let d = ActionDist {
            mean: vec![0.9; 4],
            std: vec![2.0; 4],
            bounds: vec![1.0; 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let s = d.sample(&mut rng);
            assert!(s.action.iter().all(|a| a.abs() <= 1.0));
            assert_eq!(s.log_prob, d.log_prob(&s.raw));
        }
    }

    #[test]
    fn log_std_gradient_at_mean_is_minus_one() {
        // d/d log_std of sum log N(mean | mean, std) = -1 per dimension
        let p = init_params(
            3,
            2,
            vec![1.0, 1.0],
            &small(),
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let std = p.std();
        let x = [0.5, 0.1, -0.3];
        let (mean, _) = p.forward(&x).unwrap();
        let raw = mean.clone();
        let seed = PolicySeed {
            d_mean: mean
                .iter()
                .zip(&raw)
                .zip(&std)
                .map(|((m, a), s)| (a - m) / (s * s))
                .collect(),
            d_log_std: mean
                .iter()
                .zip(&raw)
                .zip(&std)
                .map(|((m, a), s)| ((a - m) / s).powi(2) - 1.0)
                .collect(),
        };
        let g = p.backward(&[&x], &[seed]).unwrap();
        assert_eq!(g.log_std, vec![-1.0, -1.0]);
    }

    #[test]
    fn zero_seed_gives_zero_gradient() {
        let p = init_params(
            3,
            2,
            vec![1.0, 1.0],
            &small(),
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let seed = PolicySeed {
            d_mean: vec![0.0; 2],
            d_log_std: vec![0.0; 2],
        };
        let g = p.backward(&[&[1.0, 2.0, 3.0]], &[seed]).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn batched_value_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = init_value(9, &small(), &mut rng).unwrap();
        let obs: Vec<Vec<f64>> = (0..100_000)
            .map(|_| (0..9).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = obs.iter().map(|o| o.as_slice()).collect();
        let batch = v.forward_batch(&refs).unwrap();
        for (o, b) in obs.iter().zip(&batch) {
            let s = v.forward(o).unwrap();
            assert!(s.is_finite());
            assert_eq!(s.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sigmoid_hidden_activations_are_bounded() {
        let p = init_params(
            9,
            4,
            drone_bounds(1.0, 20.0),
            &small(),
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let h = p
            .net
            .hidden_activations(&[4.0, -3.0, 1.0, 0.0, 2.0, -2.0, 5.0, 5.0, 3.0])
            .unwrap();
        assert_eq!(h.len(), 2);
        for layer in h {
            assert!(layer.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}
