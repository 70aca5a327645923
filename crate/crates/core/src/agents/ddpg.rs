//! Deterministic policy gradient attacker over the falsification range.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::mlp::{Adam, Mlp};
use super::normalizer::Normalizer;
use super::replay::ReplayBuffer;
use super::Transition;
use crate::loads::DELTA_T_MAX;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Exploration noise, °C.
    pub noise_sigma: f64,
    pub batch: usize,
    pub warmup: usize,
    pub capacity: usize,
    pub delta_t_max: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            noise_sigma: 0.5,
            batch: 64,
            warmup: 1000,
            capacity: 100_000,
            delta_t_max: DELTA_T_MAX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub cfg: DdpgConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub buffer: ReplayBuffer<Transition<f64>>,
    pub norm: Normalizer,
    rng: ChaCha8Rng,
}

impl DdpgAgent {
    pub fn new(obs_dim: usize, cfg: DdpgConfig, seed: u64) -> Self {
        let mut init = rng::stream(seed, "ddpg-init", &[]);
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(1);
        let mut critic_sizes = vec![obs_dim + 1];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, &mut init);
        let critic = Mlp::new(&critic_sizes, &mut init);
        Self::from_nets(cfg, actor, critic, Normalizer::new(obs_dim), seed)
    }

    pub fn from_nets(cfg: DdpgConfig, actor: Mlp, critic: Mlp, norm: Normalizer, seed: u64) -> Self {
        Self {
            actor_opt: Adam::new(actor.params.len(), cfg.actor_lr),
            critic_opt: Adam::new(critic.params.len(), cfg.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            buffer: ReplayBuffer::new(cfg.capacity),
            rng: rng::stream(seed, "ddpg-explore", &[]),
            actor,
            critic,
            norm,
            cfg,
        }
    }

    /// Map the squashed output in [-1, 1] to °C.
    pub fn to_delta(&self, squashed: f64) -> f64 {
        self.cfg.delta_t_max * (squashed + 1.0) / 2.0
    }

    pub fn from_delta(&self, delta_t: f64) -> f64 {
        2.0 * delta_t / self.cfg.delta_t_max - 1.0
    }

    fn squashed(net: &Mlp, x: &[f64]) -> f64 {
        net.forward(x).expect("observation width")[0].tanh()
    }

    pub fn greedy(&self, obs: &[f64]) -> f64 {
        let x = self.norm.normalize(obs);
        self.to_delta(Self::squashed(&self.actor, &x))
    }

    pub fn act(&mut self, obs: &[f64], explore: bool) -> f64 {
        let a = self.greedy(obs);
        if !explore || self.cfg.noise_sigma == 0.0 {
            return a;
        }
        let n = Normal::new(0.0, self.cfg.noise_sigma).expect("sigma");
        (a + n.sample(&mut self.rng)).clamp(0.0, self.cfg.delta_t_max)
    }

    pub fn q_value(&self, obs: &[f64], delta_t: f64) -> f64 {
        let mut x = self.norm.normalize(obs);
        x.push(self.from_delta(delta_t));
        self.critic.forward(&x).expect("critic width")[0]
    }

    pub fn remember(&mut self, t: Transition<f64>) {
        self.norm.observe(&t.obs);
        self.buffer.push(t);
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.warmup.max(1)
    }

    /// One minibatch update if past warmup: (critic loss, actor objective).
    pub fn update(&mut self) -> Option<(f64, f64)> {
        if !self.ready() {
            return None;
        }
        let batch: Vec<Transition<f64>> = self
            .buffer
            .sample(self.cfg.batch, &mut self.rng)
            .into_iter()
            .cloned()
            .collect();
        Some(self.update_on(&batch))
    }

    pub fn update_on(&mut self, batch: &[Transition<f64>]) -> (f64, f64) {
        let n = batch.len() as f64;
        let mut critic_grad = self.critic.zero_grad();
        let mut loss = 0.0;
        for t in batch {
            let x_next = self.norm.normalize(&t.next_obs);
            let bootstrap = if t.done {
                0.0
            } else {
                let a_next = Self::squashed(&self.target_actor, &x_next);
                let mut xin = x_next;
                xin.push(a_next);
                self.target_critic.forward(&xin).expect("critic width")[0]
            };
            let y = t.reward + self.cfg.gamma * bootstrap;
            let mut xin = self.norm.normalize(&t.obs);
            xin.push(self.from_delta(t.action));
            let cache = self.critic.forward_cached(&xin).expect("critic width");
            let err = cache.output()[0] - y;
            loss += err * err / n;
            self.critic.backward(&cache, &[2.0 * err / n], &mut critic_grad);
        }
        self.critic_opt.step(&mut self.critic.params, &critic_grad);

        let (objective, actor_grad) = self.actor_gradient(batch);
        self.actor_opt.step(&mut self.actor.params, &actor_grad);

        self.target_actor.soft_update(&self.actor, self.cfg.tau);
        self.target_critic.soft_update(&self.critic, self.cfg.tau);
        (loss, objective)
    }

    /// Mean Q(s, μ(s)) over the batch and the gradient of its negation w.r.t. the actor.
    pub fn actor_gradient(&self, batch: &[Transition<f64>]) -> (f64, Vec<f64>) {
        let n = batch.len() as f64;
        let mut grad = self.actor.zero_grad();
        let mut scratch = self.critic.zero_grad();
        let mut objective = 0.0;
        for t in batch {
            let x = self.norm.normalize(&t.obs);
            let actor_cache = self.actor.forward_cached(&x).expect("actor width");
            let a = actor_cache.output()[0].tanh();
            let mut xin = x;
            xin.push(a);
            let critic_cache = self.critic.forward_cached(&xin).expect("critic width");
            objective += critic_cache.output()[0] / n;
            let dq_dinput = self.critic.backward(&critic_cache, &[1.0 / n], &mut scratch);
            let dq_du = dq_dinput[dq_dinput.len() - 1] * (1.0 - a * a);
            self.actor.backward(&actor_cache, &[-dq_du], &mut grad);
        }
        (objective, grad)
    }
}
