//! Q-learning defender over the discrete threshold grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{Adam, Mlp};
use super::normalizer::Normalizer;
use super::replay::ReplayBuffer;
use super::Transition;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub warmup: usize,
    pub capacity: usize,
    /// Updates between hard target copies.
    pub target_sync: usize,
    /// Huber loss with unit threshold instead of squared error.
    pub huber: bool,
    /// Online net picks the bootstrap action, target net scores it.
    pub double: bool,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Longest hold of a random action during exploration, steps.
    pub explore_hold: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 1e-3,
            gamma: 0.99,
            batch: 64,
            warmup: 1000,
            capacity: 100_000,
            target_sync: 500,
            huber: true,
            double: true,
            eps_start: 1.0,
            eps_end: 0.05,
            explore_hold: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub cfg: DqnConfig,
    pub q: Mlp,
    pub target: Mlp,
    opt: Adam,
    pub buffer: ReplayBuffer<Transition<usize>>,
    pub norm: Normalizer,
    rng: ChaCha8Rng,
    updates: usize,
    /// Random action being held and steps left.
    hold: Option<(usize, usize)>,
}

/// Lowest index among maximal values.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl DqnAgent {
    pub fn new(obs_dim: usize, n_actions: usize, cfg: DqnConfig, seed: u64) -> Self {
        let mut init = rng::stream(seed, "dqn-init", &[]);
        let mut sizes = vec![obs_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(n_actions);
        let q = Mlp::new(&sizes, &mut init);
        Self::from_net(cfg, q, Normalizer::new(obs_dim), seed)
    }

    pub fn from_net(cfg: DqnConfig, q: Mlp, norm: Normalizer, seed: u64) -> Self {
        Self {
            opt: Adam::new(q.params.len(), cfg.lr),
            target: q.clone(),
            buffer: ReplayBuffer::new(cfg.capacity),
            rng: rng::stream(seed, "dqn-explore", &[]),
            updates: 0,
            hold: None,
            q,
            norm,
            cfg,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.q.n_outputs()
    }

    pub fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        self.q.forward(&self.norm.normalize(obs)).expect("observation width")
    }

    pub fn greedy(&self, obs: &[f64]) -> usize {
        argmax(&self.q_values(obs))
    }

    /// ε-greedy with uniform random actions.
    pub fn act(&mut self, obs: &[f64], eps: f64) -> usize {
        if self.rng.random::<f64>() < eps {
            self.rng.random_range(0..self.n_actions())
        } else {
            self.greedy(obs)
        }
    }

    /// ε-greedy where a random pick is held for a random number of steps,
    /// so slow relay timers can feel the effect of a threshold.
    pub fn act_sticky(&mut self, obs: &[f64], eps: f64) -> usize {
        if let Some((a, left)) = self.hold {
            self.hold = (left > 1).then(|| (a, left - 1));
            return a;
        }
        if self.rng.random::<f64>() < eps {
            let a = self.rng.random_range(0..self.n_actions());
            let len = self.rng.random_range(1..=self.cfg.explore_hold.max(1));
            self.hold = (len > 1).then_some((a, len - 1));
            a
        } else {
            self.greedy(obs)
        }
    }

    /// Drop any held exploratory action (call at episode start).
    pub fn reset_exploration(&mut self) {
        self.hold = None;
    }

    pub fn remember(&mut self, t: Transition<usize>) {
        self.norm.observe(&t.obs);
        self.buffer.push(t);
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.warmup.max(1)
    }

    pub fn update(&mut self) -> Option<f64> {
        if !self.ready() {
            return None;
        }
        let batch: Vec<Transition<usize>> = self
            .buffer
            .sample(self.cfg.batch, &mut self.rng)
            .into_iter()
            .cloned()
            .collect();
        Some(self.update_on(&batch))
    }

    pub fn update_on(&mut self, batch: &[Transition<usize>]) -> f64 {
        let n = batch.len() as f64;
        let mut grad = self.q.zero_grad();
        let mut loss = 0.0;
        let mut grad_out = vec![0.0; self.n_actions()];
        for t in batch {
            let y = t.reward
                + if t.done {
                    0.0
                } else {
                    let x = self.norm.normalize(&t.next_obs);
                    let next = self.target.forward(&x).expect("width");
                    let best = if self.cfg.double {
                        next[argmax(&self.q.forward(&x).expect("width"))]
                    } else {
                        next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    };
                    self.cfg.gamma * best
                };
            let cache = self.q.forward_cached(&self.norm.normalize(&t.obs)).expect("width");
            let err = cache.output()[t.action] - y;
            let (l, dl) = if self.cfg.huber && err.abs() > 1.0 {
                (err.abs() - 0.5, err.signum())
            } else {
                (0.5 * err * err, err)
            };
            loss += l / n;
            grad_out.iter_mut().for_each(|g| *g = 0.0);
            grad_out[t.action] = dl / n;
            self.q.backward(&cache, &grad_out, &mut grad);
        }
        self.opt.step(&mut self.q.params, &grad);
        self.updates += 1;
        if self.updates % self.cfg.target_sync.max(1) == 0 {
            self.sync_target();
        }
        loss
    }

    pub fn sync_target(&mut self) {
        self.target = self.q.clone();
    }
}
