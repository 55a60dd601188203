use super::*;
use crate::arena::{RewardWeights, WorldConfig};
use crate::baselines::RandomController;
use crate::controller::Idle;
use crate::policy::{drone_bounds, init_params, init_value, Activation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// k-step advantage estimate truncated at the end of the episode.
fn k_step(r: &[f64], v: &[f64], t: usize, k: usize, end: usize, tail: f64, gamma: f64) -> f64 {
    let k = k.min(end + 1 - t);
    let mut a = -v[t];
    for l in 0..k {
        a += gamma.powi(l as i32) * r[t + l];
    }
    let next = if t + k > end { tail } else { v[t + k] };
    a + gamma.powi(k as i32) * next
}

/// Direct lambda-weighted mixture of every k-step estimate.
fn gae_oracle(
    r: &[f64],
    v: &[f64],
    d: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    (0..r.len())
        .map(|t| {
            let end = (t..r.len()).find(|i| d[*i]).unwrap_or(r.len() - 1);
            let tail = if d[end] { 0.0 } else { bootstrap };
            let horizon = end + 1 - t;
            let mut a = 0.0;
            for k in 1..horizon {
                a += (1.0 - lambda)
                    * lambda.powi(k as i32 - 1)
                    * k_step(r, v, t, k, end, tail, gamma);
            }
            a + lambda.powi(horizon as i32 - 1) * k_step(r, v, t, horizon, end, tail, gamma)
        })
        .collect()
}

#[test]
fn gae_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.15)).collect();
        let boot = rng.random_range(-2.0..2.0);
        let gamma = rng.random_range(0.5..1.0);
        let lambda = rng.random_range(0.0..1.0);
        let (a, ret) = compute_gae(&r, &v, &d, boot, gamma, lambda).unwrap();
        let want = gae_oracle(&r, &v, &d, boot, gamma, lambda);
        for t in 0..n {
            worst = worst.max((a[t] - want[t]).abs());
            assert_eq!(ret[t], a[t] + v[t]);
        }
    }
    assert!(worst < 1e-10, "max |delta| = {worst:e}");
}

#[test]
fn gae_hand_cases() {
    let (a, _) = compute_gae(
        &[1.0, 1.0, 1.0],
        &[0.0; 3],
        &[false, false, true],
        0.0,
        0.5,
        1.0,
    )
    .unwrap();
    assert_eq!(a, vec![1.75, 1.5, 1.0]);
    let (a, _) = compute_gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95).unwrap();
    assert!(a.iter().all(|x| *x == 0.0));
    // lambda = 0 is the one-step TD residual
    let r = [0.3, -1.0, 2.0];
    let v = [0.5, 0.1, -0.4];
    let (a, _) = compute_gae(&r, &v, &[false, false, false], 0.7, 0.9, 0.0).unwrap();
    let td = [
        r[0] + 0.9 * v[1] - v[0],
        r[1] + 0.9 * v[2] - v[1],
        r[2] + 0.9 * 0.7 - v[2],
    ];
    assert_eq!(a, td.to_vec());
    assert!(compute_gae(&[0.0], &[0.0, 1.0], &[false], 0.0, 0.9, 0.9).is_err());
}

#[test]
fn clip_hand_cases() {
    assert_eq!(clipped_surrogate(1.5, 2.0, 0.2), 2.4);
    assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
    assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainerConfig {
        max_episodes: 1000,
        ..TrainerConfig::default()
    };
    assert_eq!(lr_at(0, &cfg), 3e-4);
    assert_eq!(lr_at(1000, &cfg), 0.0);
    assert!((lr_at(500, &cfg) - 1.5e-4).abs() < 1e-18);
    assert_eq!(lr_at(5000, &cfg), 0.0);
}

fn small_net() -> NetworkConfig {
    NetworkConfig {
        hidden: vec![8, 8],
        activation: Activation::Sigmoid,
    }
}

struct Fixture {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    old: Vec<f64>,
    adv: Vec<f64>,
    ret: Vec<f64>,
}

impl Fixture {
    fn new(p: &PolicyParameters, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut actions = Vec::new();
        let mut old = Vec::new();
        for (i, o) in obs.iter().enumerate() {
            let s = p.act(o, false, &mut rng).unwrap();
            // mostly near-unit ratios, a few far outside the clip range
            let shift = if i % 5 == 4 {
                0.6
            } else {
                rng.random_range(-0.05..0.05)
            };
            old.push(s.log_prob + if i % 2 == 0 { shift } else { -shift });
            actions.push(s.raw);
        }
        let adv = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ret = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Self {
            obs,
            actions,
            old,
            adv,
            ret,
        }
    }

    fn mb(&self) -> Minibatch<'_> {
        Minibatch {
            obs: self.obs.iter().map(|o| o.as_slice()).collect(),
            actions: self.actions.iter().map(|o| o.as_slice()).collect(),
            log_prob_old: self.old.clone(),
            advantages: self.adv.clone(),
            returns: self.ret.clone(),
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Max relative error between `analytic` and central differences of `loss`
/// over every parameter of `params`.
fn fd_check<P: Clone>(
    params: &P,
    slices_mut: impl Fn(&mut P) -> Vec<&mut [f64]>,
    analytic: &[&[f64]],
    loss: impl Fn(&P) -> f64,
) -> f64 {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let shapes: Vec<usize> = slices_mut(&mut probe).iter().map(|s| s.len()).collect();
    for (k, len) in shapes.iter().enumerate() {
        for i in 0..*len {
            let mut plus = params.clone();
            slices_mut(&mut plus)[k][i] += h;
            let mut minus = params.clone();
            slices_mut(&mut minus)[k][i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[k][i], fd));
        }
    }
    worst
}

#[test]
fn policy_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = init_params(4, 2, vec![1.0, 1.0], &small_net(), &mut rng).unwrap();
    // larger output weights so the tanh squashing is exercised
    p.net.layers[2].w.iter_mut().for_each(|w| *w *= 10.0);
    let fx = Fixture::new(&p, 24, 2);
    let eps = 0.2;
    let (_, g) = policy_loss_and_grad(&p, &fx.mb(), eps, 0.0).unwrap();
    let worst = fd_check(
        &p,
        |q| q.slices_mut(),
        &g.slices(),
        |q| {
            policy_loss_and_grad(q, &fx.mb(), eps, 0.0)
                .unwrap()
                .0
                .total(0.0)
        },
    );
    assert!(worst < 1e-4, "policy loss max rel err {worst:e}");
}

#[test]
fn entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = init_params(4, 2, vec![1.0, 1.0], &small_net(), &mut rng).unwrap();
    let mut fx = Fixture::new(&p, 8, 4);
    fx.adv.iter_mut().for_each(|a| *a = 0.0);
    let beta = 0.37;
    let (_, g) = policy_loss_and_grad(&p, &fx.mb(), 0.2, beta).unwrap();
    let worst = fd_check(
        &p,
        |q| q.slices_mut(),
        &g.slices(),
        |q| {
            policy_loss_and_grad(q, &fx.mb(), 0.2, beta)
                .unwrap()
                .0
                .total(beta)
        },
    );
    assert!(worst < 1e-4, "entropy max rel err {worst:e}");
    // zero advantages: only the entropy term remains
    assert!(g.net.slices().iter().all(|s| s.iter().all(|x| *x == 0.0)));
    assert!(g.log_std.iter().all(|x| *x == -beta));
}

#[test]
fn value_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = init_value(4, &small_net(), &mut rng).unwrap();
    let p = init_params(4, 2, vec![1.0, 1.0], &small_net(), &mut rng).unwrap();
    let fx = Fixture::new(&p, 16, 6);
    let (_, g) = value_loss_and_grad(&v, &fx.mb(), 0.5).unwrap();
    let worst = fd_check(
        &v,
        |q| q.net.slices_mut(),
        &g.slices(),
        |q| value_loss_and_grad(q, &fx.mb(), 0.5).unwrap().0,
    );
    assert!(worst < 1e-4, "value loss max rel err {worst:e}");
}

#[test]
fn unit_ratio_surrogate_is_mean_advantage() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = init_params(4, 2, vec![1.0, 1.0], &small_net(), &mut rng).unwrap();
    let mut fx = Fixture::new(&p, 10, 9);
    for (i, o) in fx.obs.iter().enumerate() {
        fx.old[i] = p.distribution(o).unwrap().log_prob(&fx.actions[i]);
    }
    let (parts, _) = policy_loss_and_grad(&p, &fx.mb(), 0.2, 0.0).unwrap();
    let mean_adv = fx.adv.iter().sum::<f64>() / fx.adv.len() as f64;
    assert!((parts.surrogate_loss + mean_adv).abs() < 1e-12);
    assert_eq!(parts.clip_fraction, 0.0);
    assert!(parts.approx_kl.abs() < 1e-15);
}

fn collector(seed: u64) -> Collector {
    let world = WorldConfig {
        t_max: 60,
        ..WorldConfig::default()
    };
    Collector::new(world, RewardWeights::default(), 2, 2, seed).unwrap()
}

fn nets(
    world: &WorldConfig,
    seed: u64,
) -> (
    PolicyParameters,
    ValueParameters,
    PolicyParameters,
    ValueParameters,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = small_net();
    let b = drone_bounds(1.0, 20.0);
    (
        init_params(world.runner_obs_dim(), 4, b.clone(), &net, &mut rng).unwrap(),
        init_value(world.runner_obs_dim(), &net, &mut rng).unwrap(),
        init_params(world.chaser_obs_dim(), 4, b, &net, &mut rng).unwrap(),
        init_value(world.chaser_obs_dim(), &net, &mut rng).unwrap(),
    )
}

#[test]
fn collection_has_exact_size_and_consistent_boundaries() {
    let mut c = collector(1);
    let (rp, rv, cp, cv) = nets(c.world(), 2);
    for size in [1, 37, 500] {
        let out = c
            .collect(
                SideRole::Train {
                    policy: &rp,
                    value: &rv,
                },
                SideRole::Train {
                    policy: &cp,
                    value: &cv,
                },
                size,
                1e-3,
            )
            .unwrap();
        for b in [out.runner.unwrap(), out.chaser.unwrap()] {
            assert_eq!(b.len(), size);
            b.check().unwrap();
        }
    }
}

#[test]
fn chaser_experience_is_pooled() {
    // stationary runner, no deactivation possible before the first
    // collection ends: every step yields one transition per chaser
    let world = WorldConfig {
        t_max: 1000,
        ..WorldConfig::default()
    };
    let mut c = Collector::new(world.clone(), RewardWeights::default(), 2, 1, 4).unwrap();
    let (_, _, mut cp, cv) = nets(&world, 5);
    cp.log_std.iter_mut().for_each(|l| *l = -30.0);
    cp.net
        .layers
        .last_mut()
        .unwrap()
        .w
        .iter_mut()
        .for_each(|w| *w = 0.0);
    let out = c
        .collect(
            SideRole::Fixed(&Idle),
            SideRole::Train {
                policy: &cp,
                value: &cv,
            },
            40,
            1.0,
        )
        .unwrap();
    let b = out.chaser.unwrap();
    assert_eq!(b.segments.len(), 2);
    assert_eq!(b.segments[0].len, 20);
    assert_eq!(c.states().next().unwrap().step, 20);
    assert!(out.runner.is_none());
}

#[test]
fn collection_is_deterministic() {
    let run = || {
        let mut c = collector(9);
        let (rp, rv, _, _) = nets(c.world(), 3);
        let out = c
            .collect(
                SideRole::Train {
                    policy: &rp,
                    value: &rv,
                },
                SideRole::Fixed(&Idle),
                300,
                1e-3,
            )
            .unwrap();
        (out.runner.unwrap(), out.episodes)
    };
    let (a, ea) = run();
    let (b, eb) = run();
    assert_eq!(a, b);
    assert_eq!(ea, eb);
}

#[test]
fn trimmed_segments_bootstrap_from_successor_value() {
    let mut c = collector(11);
    let (rp, rv, _, _) = nets(c.world(), 4);
    let out = c
        .collect(
            SideRole::Train {
                policy: &rp,
                value: &rv,
            },
            SideRole::Fixed(&RandomController),
            1000,
            1e-3,
        )
        .unwrap();
    let b = out.runner.unwrap();
    // every non-terminal segment end is bootstrapped with V(next obs)
    for s in &b.segments {
        let last = s.start + s.len - 1;
        if !b.dones[last] {
            assert!(s.bootstrap != 0.0);
        }
    }
    assert!(
        b.dones.iter().any(|d| *d),
        "60-step episodes must terminate inside 1000 steps"
    );
}

#[test]
fn fixed_seed_training_is_reproducible() {
    let run = || {
        let mut c = collector(21);
        let (rp, rv, _, _) = nets(c.world(), 6);
        let cfg = TrainerConfig {
            buffer_size: 256,
            batch_size: 64,
            network: small_net(),
            ..TrainerConfig::default()
        };
        let mut learner = PpoLearner::new(rp, rv);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut stats = Vec::new();
        for _ in 0..3 {
            let out = c
                .collect(
                    SideRole::Train {
                        policy: &learner.policy,
                        value: &learner.value,
                    },
                    SideRole::Fixed(&Idle),
                    256,
                    1e-3,
                )
                .unwrap();
            stats.push(
                learner
                    .update(&out.runner.unwrap(), &cfg, 3e-4, &mut rng)
                    .unwrap(),
            );
        }
        (stats, learner.policy.checksum())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    for s in &a {
        assert!((0.0..=1.0).contains(&s.clip_fraction));
        assert!(s.approx_kl > -1e-9);
    }
}

#[test]
fn update_moves_policy_toward_positive_advantage() {
    // one state, reward 1 for the first action dim above the mean
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let p = init_params(4, 2, vec![1.0, 1.0], &small_net(), &mut rng).unwrap();
    let v = init_value(4, &small_net(), &mut rng).unwrap();
    let o = vec![0.1, 0.2, 0.3, 0.4];
    let mut batch = RolloutBatch::default();
    for i in 0..256 {
        let s = p.act(&o, false, &mut rng).unwrap();
        batch
            .rewards
            .push(if s.raw[0] > s.mean[0] { 1.0 } else { 0.0 });
        batch.obs.push(o.clone());
        batch.log_prob_old.push(s.log_prob);
        batch.actions.push(s.raw);
        batch.value_old.push(0.0);
        batch.dones.push(true);
        batch.episode_id.push(i);
        batch.segments.push(Segment {
            start: i as usize,
            len: 1,
            bootstrap: 0.0,
        });
    }
    let cfg = TrainerConfig {
        batch_size: 64,
        buffer_size: 256,
        network: small_net(),
        ..TrainerConfig::default()
    };
    let before = p.forward(&o).unwrap().0[0];
    let (q, _, stats) = ppo_update(&p, &v, &batch, &cfg, 1e-2, &mut rng).unwrap();
    assert!(q.forward(&o).unwrap().0[0] > before);
    assert!(stats.lr == 1e-2 && stats.value_loss.is_finite());
}

#[test]
fn config_validation() {
    assert!(TrainerConfig::default().validate().is_ok());
    let bad = TrainerConfig {
        batch_size: 20000,
        ..TrainerConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainerConfig {
        gamma: 1.5,
        ..TrainerConfig::default()
    };
    assert!(bad.validate().is_err());
    let parsed: Result<TrainerConfig, _> = serde_json::from_str(r#"{"gama": 0.9}"#);
    assert!(parsed.is_err());
}
