//! Competitive training loop, frozen-policy evaluation and the load-noise sweep.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{DdpgAgent, DdpgConfig, DqnAgent, DqnConfig, Transition};
use crate::dynamics::SimConfig;
use crate::game::{
    calibrate_r_th, AttackAction, DefenseAction, Env, GameConfig, GameError, TransitionRecord, DEFENSE_LEVELS,
    OBS_DIM,
};
use crate::protection::ProtectionEvent;
use crate::rng;

/// Initial-state randomization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mu0 {
    /// Range of the background load multiplier.
    pub load_scale: (f64, f64),
    /// Range of the ambient temperature shift, °C.
    pub ambient_offset: (f64, f64),
}

impl Default for Mu0 {
    fn default() -> Self {
        Self {
            load_scale: (0.9, 1.1),
            ambient_offset: (-0.5, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub game: GameConfig,
    pub episodes: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Thermal/frequency substeps per control step.
    pub decimation: usize,
    /// Run all updates at the end of each episode instead of every step.
    pub literal_epoch_updates: bool,
    /// Train the attacker alone for the first third of the episodes.
    pub curriculum: bool,
    /// Share of episodes without any attack once the defender is learning.
    pub attack_free_fraction: f64,
    pub mu0: Mu0,
    /// Multiplier on rewards inside the learners.
    pub reward_scale: f64,
    pub calibration_episodes: usize,
    pub ddpg: DdpgConfig,
    pub dqn: DqnConfig,
}

impl TrainConfig {
    /// 60 episodes of 1200 one-second steps.
    pub fn desk() -> Self {
        Self {
            game: GameConfig::desk(SimConfig::peak_scenario()),
            episodes: 60,
            gamma: 0.99,
            seed: 1,
            decimation: 100,
            literal_epoch_updates: false,
            curriculum: true,
            attack_free_fraction: 0.3,
            mu0: Mu0::default(),
            reward_scale: 0.02,
            calibration_episodes: 10,
            ddpg: DdpgConfig::default(),
            dqn: DqnConfig::default(),
        }
    }

    /// 500 episodes of 120 000 steps at 0.01 s. Far beyond desk budgets.
    pub fn full_scale() -> Self {
        let mut cfg = Self::desk();
        cfg.episodes = 500;
        cfg.game.steps = 120_000;
        cfg.game.sim.control_dt = 0.01;
        cfg.decimation = 1;
        cfg
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if self.game.steps == 0 || self.episodes == 0 || self.decimation == 0 {
            return Err("steps, episodes and decimation must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.attack_free_fraction) {
            return Err("attack_free_fraction outside [0, 1]".into());
        }
        if !(self.game.sim.control_dt > 0.0) {
            return Err("control_dt must be positive".into());
        }
        Ok(())
    }

    /// Game for one episode with μ0 applied.
    pub fn episode_game(&self, episode_seed: u64, attack: bool) -> GameConfig {
        let mut g = self.game.clone();
        let mut r = rng::stream(episode_seed, "mu0", &[]);
        let (lo, hi) = self.mu0.load_scale;
        let scale = if hi > lo { r.random_range(lo..hi) } else { lo };
        let (lo, hi) = self.mu0.ambient_offset;
        let offset = if hi > lo { r.random_range(lo..hi) } else { lo };
        g.sim.load_scale = scale;
        g.sim.ambient = g.sim.ambient.shifted(offset);
        g.sim.seed = episode_seed;
        g.sim.noise.seed = episode_seed;
        g.sim.substep_dt = g.sim.control_dt / self.decimation as f64;
        g.sim.record_trace = false;
        g.attack_enabled = attack;
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AttackerOnly,
    Joint,
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub phase: Phase,
    pub attack: bool,
    pub steps: usize,
    pub blackout: bool,
    pub trips: usize,
    pub attacker_return: f64,
    pub defender_return: f64,
    pub defender_shaping: f64,
    pub mean_delta_t: f64,
    pub epsilon: f64,
}

pub struct TrainOutcome {
    pub attacker: DdpgAgent,
    pub defender: DqnAgent,
    pub r_th: f64,
    pub curve: Vec<EpisodeMetrics>,
}

fn epsilon(cfg: &DqnConfig, step: usize, decay_steps: usize) -> f64 {
    if decay_steps == 0 {
        return cfg.eps_end;
    }
    let frac = (step as f64 / decay_steps as f64).min(1.0);
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Train both players. `on_episode` sees each learning-curve row as it is produced.
pub fn train(cfg: &TrainConfig, mut on_episode: impl FnMut(&EpisodeMetrics)) -> Result<TrainOutcome, GameError> {
    cfg.validate().map_err(|e| GameError::Dyn(crate::dynamics::DynError::Init(e)))?;
    let mut base = cfg.game.clone();
    base.sim.substep_dt = base.sim.control_dt / cfg.decimation as f64;
    let r_th = if cfg.calibration_episodes == 0 {
        cfg.game.payoff.r_th
    } else {
        calibrate_r_th(&base, cfg.calibration_episodes, rng::derive(cfg.seed, "r_th", &[]))?
    };
    let mut cfg = cfg.clone();
    cfg.game.payoff.r_th = r_th.max(1e-6);

    let mut ddpg = cfg.ddpg.clone();
    ddpg.gamma = cfg.gamma;
    let mut dqn = cfg.dqn.clone();
    dqn.gamma = cfg.gamma;
    let mut attacker = DdpgAgent::new(OBS_DIM, ddpg, rng::derive(cfg.seed, "attacker", &[]));
    let mut defender = DqnAgent::new(OBS_DIM, DEFENSE_LEVELS, dqn, rng::derive(cfg.seed, "defender", &[]));

    let n_pre = if cfg.curriculum { cfg.episodes / 3 } else { 0 };
    let decay_steps = ((cfg.episodes - n_pre) * cfg.game.steps) / 2;
    let mut schedule = rng::stream(cfg.seed, "schedule", &[]);
    let mut joint_steps = 0usize;
    let mut curve = Vec::with_capacity(cfg.episodes);

    for ep in 0..cfg.episodes {
        let phase = if ep < n_pre { Phase::AttackerOnly } else { Phase::Joint };
        let attack = phase == Phase::AttackerOnly || schedule.random::<f64>() >= cfg.attack_free_fraction;
        let ep_seed = rng::derive(cfg.seed, "train-episode", &[ep as u64]);
        let mut env = Env::new(cfg.episode_game(ep_seed, attack))?;
        defender.reset_exploration();
        let mut m = EpisodeMetrics {
            episode: ep,
            phase,
            attack,
            steps: 0,
            blackout: false,
            trips: 0,
            attacker_return: 0.0,
            defender_return: 0.0,
            defender_shaping: 0.0,
            mean_delta_t: 0.0,
            epsilon: 0.0,
        };
        let mut attack_steps = 0usize;
        while !env.is_done() {
            let obs = env.observation().to_array();
            let active = env.attack_active();
            let delta_t = if active { attacker.act(&obs, true) } else { 0.0 };
            let eps = epsilon(&defender.cfg, joint_steps, decay_steps);
            let index = match phase {
                Phase::AttackerOnly => 0,
                Phase::Joint => defender.act_sticky(&obs, eps),
            };
            let out = env.step(AttackAction::new(delta_t), DefenseAction::new(index)?)?;
            let next = out.obs.to_array();
            if active {
                attacker.remember(Transition {
                    obs: obs.to_vec(),
                    action: out.applied.delta_t,
                    reward: out.r_laa * cfg.reward_scale,
                    next_obs: next.to_vec(),
                    done: out.blackout,
                });
                attack_steps += 1;
                m.mean_delta_t += out.applied.delta_t;
            }
            defender.remember(Transition {
                obs: obs.to_vec(),
                action: index,
                reward: (out.r_avps + out.defender_shaping) * cfg.reward_scale,
                next_obs: next.to_vec(),
                done: out.blackout,
            });
            if !cfg.literal_epoch_updates {
                attacker.update();
                if phase == Phase::Joint {
                    defender.update();
                }
            }
            if phase == Phase::Joint {
                joint_steps += 1;
                m.epsilon = eps;
            }
            m.steps += 1;
            m.trips += out.events.len();
            m.blackout |= out.blackout;
            m.attacker_return += out.r_laa;
            m.defender_return += out.r_avps;
            m.defender_shaping += out.defender_shaping;
        }
        if cfg.literal_epoch_updates {
            for _ in 0..m.steps {
                attacker.update();
                if phase == Phase::Joint {
                    defender.update();
                }
            }
        }
        if attack_steps > 0 {
            m.mean_delta_t /= attack_steps as f64;
        }
        on_episode(&m);
        curve.push(m);
    }
    attacker.norm.frozen = true;
    defender.norm.frozen = true;
    Ok(TrainOutcome {
        attacker,
        defender,
        r_th,
        curve,
    })
}

#[derive(Debug, Clone)]
pub enum AttackerPolicy {
    None,
    /// Constant falsification once the attack window opens, °C.
    Scripted(f64),
    Learned(Box<DdpgAgent>),
}

impl AttackerPolicy {
    fn act(&self, obs: &[f64]) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Scripted(d) => *d,
            Self::Learned(a) => a.greedy(obs),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DefenderPolicy {
    Static,
    /// Raise to the top level while the observed voltage is below `below`.
    Threshold { below: f64 },
    Learned(Box<DqnAgent>),
}

impl DefenderPolicy {
    fn act(&self, obs: &[f64]) -> usize {
        match self {
            Self::Static => 0,
            Self::Threshold { below } => {
                if obs[1] < *below {
                    DEFENSE_LEVELS - 1
                } else {
                    0
                }
            }
            Self::Learned(d) => d.greedy(obs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub seed: u64,
    pub attack: bool,
    pub blackout: bool,
    pub blackout_time: Option<f64>,
    /// First protection operation, s.
    pub trigger_time: Option<f64>,
    /// First step with a threshold above the static level, s.
    pub raise_time: Option<f64>,
    pub events: Vec<ProtectionEvent>,
    pub steps: usize,
    pub attacker_return: f64,
    pub defender_return: f64,
}

/// Roll out one episode with frozen policies; optionally collect transitions.
pub fn run_episode(
    game: GameConfig,
    attacker: &AttackerPolicy,
    defender: &DefenderPolicy,
    mut sink: Option<&mut Vec<TransitionRecord>>,
) -> Result<(EpisodeResult, Env), GameError> {
    let attack = game.attack_enabled;
    let seed = game.sim.seed;
    let mut env = Env::new(game)?;
    let mut res = EpisodeResult {
        index: 0,
        seed,
        attack,
        blackout: false,
        blackout_time: None,
        trigger_time: None,
        raise_time: None,
        events: Vec::new(),
        steps: 0,
        attacker_return: 0.0,
        defender_return: 0.0,
    };
    while !env.is_done() {
        let obs = env.observation();
        let x = obs.to_array();
        let t = env.time();
        let delta_t = if env.attack_active() { attacker.act(&x) } else { 0.0 };
        let index = defender.act(&x);
        if index > 0 && res.raise_time.is_none() {
            res.raise_time = Some(t);
        }
        let out = env.step(AttackAction::new(delta_t), DefenseAction::new(index)?)?;
        if let Some(s) = sink.as_deref_mut() {
            s.push(TransitionRecord {
                t,
                obs: x,
                delta_t: out.applied.delta_t,
                defense_index: index,
                r_laa: out.r_laa,
                r_avps: out.r_avps,
                next_obs: out.obs.to_array(),
                done: out.done,
            });
        }
        if res.trigger_time.is_none() {
            res.trigger_time = out.events.first().map(|e| e.time);
        }
        res.events.extend(out.events.iter().copied());
        res.steps += 1;
        res.attacker_return += out.r_laa;
        res.defender_return += out.r_avps;
        if out.blackout {
            res.blackout = true;
            res.blackout_time = Some(env.time());
        }
    }
    Ok((res, env))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attack_episodes: usize,
    pub blackouts: usize,
    pub blackout_rate: f64,
    /// Mean first-trip time over attack episodes that tripped, s.
    pub mean_time_to_trip: Option<f64>,
    pub clean_episodes: usize,
    /// Attack-free episodes with any protection operation.
    pub spurious: usize,
    pub spurious_rate: f64,
    pub episodes: Vec<EpisodeResult>,
}

/// Evaluate frozen policies on `n_attack` attack and `n_clean` attack-free episodes.
/// Seeds come from an "eval" stream disjoint from training.
pub fn evaluate(
    cfg: &TrainConfig,
    attacker: &AttackerPolicy,
    defender: &DefenderPolicy,
    n_attack: usize,
    n_clean: usize,
    seed: u64,
) -> Result<EvalReport, GameError> {
    let plan: Vec<(usize, bool)> = (0..n_attack + n_clean).map(|k| (k, k < n_attack)).collect();
    let mut episodes = plan
        .par_iter()
        .map(|&(k, attack)| {
            let s = rng::derive(seed, "eval", &[k as u64]);
            run_episode(cfg.episode_game(s, attack), attacker, defender, None).map(|(mut r, _)| {
                r.index = k;
                r
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    episodes.sort_by_key(|r| r.index);
    let blackouts = episodes.iter().filter(|r| r.attack && r.blackout).count();
    let trips: Vec<f64> = episodes
        .iter()
        .filter(|r| r.attack)
        .filter_map(|r| r.trigger_time)
        .collect();
    let spurious = episodes.iter().filter(|r| !r.attack && !r.events.is_empty()).count();
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalReport {
        attack_episodes: n_attack,
        blackouts,
        blackout_rate: rate(blackouts, n_attack),
        mean_time_to_trip: (!trips.is_empty()).then(|| trips.iter().sum::<f64>() / trips.len() as f64),
        clean_episodes: n_clean,
        spurious,
        spurious_rate: rate(spurious, n_clean),
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprRow {
    pub variance_mw: f64,
    pub run: usize,
    pub trigger_time: Option<f64>,
    pub blackout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprTable {
    pub attack_start: f64,
    pub rows: Vec<FprRow>,
    /// Variances where some run triggered before the attack started.
    pub premature: Vec<f64>,
    pub fpr: f64,
}

/// Attack episodes under increasing load noise; a variance is a false positive
/// when any run's protection operates before `attack_start`.
pub fn fpr_sweep(
    cfg: &TrainConfig,
    attacker: &AttackerPolicy,
    defender: &DefenderPolicy,
    variances: &[f64],
    runs: usize,
    attack_start: f64,
    seed: u64,
) -> Result<FprTable, GameError> {
    let plan: Vec<(usize, usize)> = (0..variances.len()).flat_map(|v| (0..runs).map(move |r| (v, r))).collect();
    let rows = plan
        .par_iter()
        .map(|&(v, run)| {
            let s = rng::derive(seed, "fpr", &[v as u64, run as u64]);
            let mut game = cfg.episode_game(s, true);
            game.attack_start = attack_start;
            game.sim.noise.variance_mw = variances[v];
            run_episode(game, attacker, defender, None).map(|(r, _)| FprRow {
                variance_mw: variances[v],
                run,
                trigger_time: r.trigger_time,
                blackout: r.blackout,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let premature: Vec<f64> = variances
        .iter()
        .copied()
        .filter(|&v| {
            rows.iter()
                .any(|r| r.variance_mw == v && r.trigger_time.is_some_and(|t| t < attack_start))
        })
        .collect();
    let fpr = if variances.is_empty() {
        0.0
    } else {
        premature.len() as f64 / variances.len() as f64
    };
    Ok(FprTable {
        attack_start,
        rows,
        premature,
        fpr,
    })
}
