use gridgame::agents::{DdpgAgent, DdpgConfig, DqnAgent, DqnConfig, Mlp, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

// L = Σ c_k y_k so dL/dy = c.
fn weighted_out(net: &Mlp, x: &[f64], c: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(c).map(|(y, c)| y * c).sum()
}

#[test]
fn mlp_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for sizes in [vec![3, 5, 4, 2], vec![6, 8, 1], vec![2, 3]] {
        let mut net = Mlp::new(&sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = net.forward_cached(&x).unwrap();
        let mut grad = net.zero_grad();
        let dx = net.backward(&cache, &c, &mut grad);
        for _ in 0..10 {
            let i = rng.random_range(0..net.params.len());
            let p0 = net.params[i];
            net.params[i] = p0 + H;
            let up = weighted_out(&net, &x, &c);
            net.params[i] = p0 - H;
            let dn = weighted_out(&net, &x, &c);
            net.params[i] = p0;
            let fd = (up - dn) / (2.0 * H);
            assert!(rel_err(fd, grad[i]) < 1e-4, "{sizes:?} param {i}: {fd} vs {}", grad[i]);
        }
        for (i, &g) in dx.iter().enumerate() {
            let mut xp = x.clone();
            xp[i] += H;
            let mut xm = x.clone();
            xm[i] -= H;
            let fd = (weighted_out(&net, &xp, &c) - weighted_out(&net, &xm, &c)) / (2.0 * H);
            assert!(rel_err(fd, g) < 1e-4, "input {i}: {fd} vs {g}");
        }
    }
}

fn ddpg(seed: u64, gamma: f64) -> DdpgAgent {
    DdpgAgent::new(
        4,
        DdpgConfig {
            hidden: vec![16, 16],
            gamma,
            actor_lr: 1e-3,
            critic_lr: 3e-3,
            noise_sigma: 0.0,
            ..DdpgConfig::default()
        },
        seed,
    )
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Transition<f64>> {
    (0..n)
        .map(|_| Transition {
            obs: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: rng.random_range(0.0..2.5),
            reward: rng.random_range(-1.0..1.0),
            next_obs: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: false,
        })
        .collect()
}

#[test]
fn actor_chain_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut agent = ddpg(2, 0.99);
    let batch = random_batch(&mut rng, 5);
    let (_, grad) = agent.actor_gradient(&batch);
    for _ in 0..10 {
        let i = rng.random_range(0..agent.actor.params.len());
        let p0 = agent.actor.params[i];
        agent.actor.params[i] = p0 + H;
        let (up, _) = agent.actor_gradient(&batch);
        agent.actor.params[i] = p0 - H;
        let (dn, _) = agent.actor_gradient(&batch);
        agent.actor.params[i] = p0;
        // The gradient is of the negated objective.
        let fd = -(up - dn) / (2.0 * H);
        assert!(rel_err(fd, grad[i]) < 1e-4, "param {i}: {fd} vs {}", grad[i]);
    }
}

#[test]
fn critic_fits_single_transition() {
    let mut agent = ddpg(4, 0.0);
    let t = Transition {
        obs: vec![0.3, -0.2, 0.1, 0.5],
        action: 1.7,
        reward: 0.8,
        next_obs: vec![0.0; 4],
        done: false,
    };
    for _ in 0..3000 {
        agent.update_on(std::slice::from_ref(&t));
    }
    assert!((agent.q_value(&t.obs, t.action) - t.reward).abs() < 1e-3);
}

#[test]
fn zero_gamma_ignores_next_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = random_batch(&mut rng, 8);
    let mut moved = batch.clone();
    for t in &mut moved {
        t.next_obs.iter_mut().for_each(|v| *v = -3.0 * *v + 1.0);
    }
    let mut a = ddpg(9, 0.0);
    let mut b = ddpg(9, 0.0);
    for _ in 0..20 {
        assert_eq!(a.update_on(&batch), b.update_on(&moved));
    }
    assert_eq!(a.critic.params, b.critic.params);
}

/// Two states, two actions, deterministic.
/// s0: a0 -> (0, s1), a1 -> (1, s0); s1: a0 -> (2, s0), a1 -> (0, s1).
const MDP: [[(f64, usize); 2]; 2] = [[(0.0, 1), (1.0, 0)], [(2.0, 0), (0.0, 1)]];

fn value_iteration(gamma: f64) -> [[f64; 2]; 2] {
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..10_000 {
        let mut next = q;
        for s in 0..2 {
            for a in 0..2 {
                let (r, s2) = MDP[s][a];
                next[s][a] = r + gamma * q[s2][0].max(q[s2][1]);
            }
        }
        q = next;
    }
    q
}

#[test]
fn dqn_recovers_value_iteration() {
    let gamma = 0.9;
    let oracle = value_iteration(gamma);
    let onehot = |s: usize| if s == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    let batch: Vec<Transition<usize>> = (0..2)
        .flat_map(|s| (0..2).map(move |a| (s, a)))
        .map(|(s, a)| Transition {
            obs: onehot(s),
            action: a,
            reward: MDP[s][a].0,
            next_obs: onehot(MDP[s][a].1),
            done: false,
        })
        .collect();
    let cfg = DqnConfig {
        hidden: vec![16],
        lr: 3e-3,
        gamma,
        target_sync: 50,
        ..DqnConfig::default()
    };
    let mut agent = DqnAgent::new(2, 2, cfg, 1);
    for _ in 0..10_000 {
        agent.update_on(&batch);
    }
    for s in 0..2 {
        let q = agent.q_values(&onehot(s));
        for a in 0..2 {
            let want = oracle[s][a];
            assert!((q[a] - want).abs() <= 0.05 * want.abs(), "Q({s},{a}) = {} vs {want}", q[a]);
        }
        assert_eq!(agent.greedy(&onehot(s)), if oracle[s][0] >= oracle[s][1] { 0 } else { 1 });
    }
}

#[test]
fn full_exploration_is_uniform() {
    let k = 11;
    let n = 11_000;
    let mut agent = DqnAgent::new(6, k, DqnConfig::default(), 21);
    let mut counts = vec![0usize; k];
    for _ in 0..n {
        counts[agent.act(&[0.0; 6], 1.0)] += 1;
    }
    let e = n as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 10 degrees of freedom, p = 0.001.
    assert!(chi2 < 29.59, "chi2 = {chi2}, counts {counts:?}");
}
