//! The attacker/defender game: observations, payoff, rewards and the environment step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynError, ProtectionMode, SimConfig, SimState};
use crate::loads::DELTA_T_MAX;
use crate::protection::{ProtectionEvent, DEFAULT_ALPHA, THRESHOLD_MIN};
use crate::rng;

/// Number of defender threshold levels.
pub const DEFENSE_LEVELS: usize = 11;
pub const DEFENSE_STEP: f64 = 0.05;
pub const OBS_DIM: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum GameError {
    #[error("episode already finished")]
    StepAfterDone,
    #[error("defense index {0} outside 0..{DEFENSE_LEVELS}")]
    BadDefense(usize),
    #[error(transparent)]
    Dyn(#[from] DynError),
}

/// What both players see about the currently targeted bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Active power on the weakest line toward the target, pu.
    pub p_flow: f64,
    pub v: f64,
    pub theta: f64,
    pub v_lower: f64,
    pub fvsi_max: f64,
    /// Backward difference of the observed voltage, pu/s.
    pub dv_dt: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [self.p_flow, self.v, self.theta, self.v_lower, self.fvsi_max, self.dv_dt]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackAction {
    pub delta_t: f64,
}

impl AttackAction {
    pub fn new(delta_t: f64) -> Self {
        let delta_t = if delta_t.is_nan() { 0.0 } else { delta_t.clamp(0.0, DELTA_T_MAX) };
        Self { delta_t }
    }

    pub fn none() -> Self {
        Self { delta_t: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefenseAction {
    pub index: usize,
}

impl DefenseAction {
    pub fn new(index: usize) -> Result<Self, GameError> {
        if index >= DEFENSE_LEVELS {
            return Err(GameError::BadDefense(index));
        }
        Ok(Self { index })
    }

    /// Static thresholds.
    pub fn baseline() -> Self {
        Self { index: 0 }
    }

    pub fn v_lower(self) -> f64 {
        defense_level(self.index)
    }
}

pub fn defense_level(index: usize) -> f64 {
    THRESHOLD_MIN + DEFENSE_STEP * index as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffParams {
    /// MW per °C of falsification at the target bus.
    pub k_gain: f64,
    /// Largest |dV/dt| seen without attack, pu/s.
    pub r_th: f64,
    pub alpha: f64,
}

impl Default for PayoffParams {
    fn default() -> Self {
        Self {
            k_gain: 2.0,
            r_th: 0.01,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// The four payoff terms, in order: demand gain, voltage-rate penalty, UV margin, OV margin.
pub fn payoff_terms(v: f64, dv_dt: f64, delta_t: f64, v_lower: f64, v_upper: f64, p: &PayoffParams) -> [f64; 4] {
    let c1 = if v < v_lower { 0.0 } else { 1.0 };
    let c2 = if v > v_upper { 0.0 } else { 1.0 };
    [
        (p.k_gain * delta_t).ln_1p(),
        -(dv_dt.abs() / p.r_th).ln_1p(),
        c1 * (-v / v_lower).exp().ln_1p(),
        c2 * (-v_upper / v).exp().ln_1p(),
    ]
}

pub fn payoff_f(obs: &Observation, a: AttackAction, v_lower: f64, p: &PayoffParams) -> f64 {
    payoff_terms(obs.v, obs.dv_dt, a.delta_t, v_lower, p.alpha * v_lower, p)
        .iter()
        .sum()
}

/// (attacker, defender).
pub fn rewards(f: f64) -> (f64, f64) {
    (f, -f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub sim: SimConfig,
    /// Episode length in control steps.
    pub steps: usize,
    /// Falsification is forced to zero before this time, s.
    pub attack_start: f64,
    pub attack_enabled: bool,
    /// Blackout bonus to the attacker (and penalty to the defender); `None` disables it.
    pub terminal_bonus: Option<f64>,
    /// Defender-only cost per step with a live relay in under-voltage pickup.
    pub pickup_penalty: f64,
    /// Defender-only cost per relay event.
    pub trip_cost: f64,
    /// Standard deviation of measurement noise on voltage, angle and flow.
    pub obs_sigma: f64,
    pub payoff: PayoffParams,
}

impl GameConfig {
    pub fn desk(mut sim: SimConfig) -> Self {
        // The defender's threshold is ignored unless relays are adaptive.
        if sim.protection == ProtectionMode::Static {
            sim.protection = ProtectionMode::Adaptive;
        }
        let k = sim.fleets.iter().map(|f| f.params.k_gain * f.count as f64).sum::<f64>();
        Self {
            payoff: PayoffParams {
                k_gain: if k > 0.0 { k } else { sim.attack_k },
                alpha: sim.alpha,
                ..PayoffParams::default()
            },
            sim,
            steps: 1200,
            attack_start: 120.0,
            attack_enabled: true,
            terminal_bonus: Some(500.0),
            pickup_penalty: 1.0,
            trip_cost: 50.0,
            obs_sigma: 0.002,
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    /// Falsification actually applied after gating.
    pub applied: AttackAction,
    pub f: f64,
    pub r_laa: f64,
    pub r_avps: f64,
    /// Extra defender cost kept outside the zero-sum pair.
    pub defender_shaping: f64,
    pub done: bool,
    /// Ended by the horizon rather than a blackout.
    pub truncated: bool,
    pub blackout: bool,
    pub events: Vec<ProtectionEvent>,
}

/// One line of a transition dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub t: f64,
    pub obs: [f64; OBS_DIM],
    pub delta_t: f64,
    pub defense_index: usize,
    pub r_laa: f64,
    pub r_avps: f64,
    pub next_obs: [f64; OBS_DIM],
    pub done: bool,
}

pub struct Env {
    pub cfg: GameConfig,
    pub sim: SimState,
    noise: ChaCha8Rng,
    prev_v_obs: Vec<f64>,
    obs: Observation,
    steps_taken: usize,
    done: bool,
}

impl Env {
    pub fn new(cfg: GameConfig) -> Result<Self, GameError> {
        let sim = SimState::new(cfg.sim.clone())?;
        let mut noise = rng::stream(cfg.sim.seed, "measurement", &[]);
        let prev_v_obs: Vec<f64> = sim
            .sol
            .v_mag
            .iter()
            .map(|v| v + gaussian(&mut noise, cfg.obs_sigma))
            .collect();
        let mut env = Self {
            cfg,
            sim,
            noise,
            prev_v_obs,
            obs: Observation {
                p_flow: 0.0,
                v: 0.0,
                theta: 0.0,
                v_lower: 0.0,
                fvsi_max: 0.0,
                dv_dt: 0.0,
            },
            steps_taken: 0,
            done: false,
        };
        env.obs = env.observe();
        Ok(env)
    }

    pub fn observation(&self) -> Observation {
        self.obs
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn time(&self) -> f64 {
        self.sim.t
    }

    /// Whether falsification would be applied on the next step.
    pub fn attack_active(&self) -> bool {
        self.cfg.attack_enabled && self.sim.t >= self.cfg.attack_start
    }

    /// Sample noisy measurements and update the voltage history.
    fn observe(&mut self) -> Observation {
        let sigma = self.cfg.obs_sigma;
        let v_obs: Vec<f64> = self
            .sim
            .sol
            .v_mag
            .iter()
            .map(|v| v + gaussian(&mut self.noise, sigma))
            .collect();
        let theta_noise = gaussian(&mut self.noise, sigma);
        let flow_noise = gaussian(&mut self.noise, sigma);
        let bus = self.sim.attacked_bus;
        let i = self.sim.case.index_of(bus).unwrap_or(0);
        let s_base = self.sim.case.s_base;
        let p_flow = self.sim.fvsi.max_entry.as_ref().map_or(0.0, |e| {
            let k = e.line - 1;
            if e.load_bus == e.to {
                self.sim.sol.p_from[k]
            } else {
                self.sim.sol.p_to[k]
            }
        }) / s_base;
        let dt = self.sim.cfg.control_dt;
        let obs = Observation {
            p_flow: p_flow + flow_noise,
            v: v_obs[i],
            theta: self.sim.sol.v_ang[i] + theta_noise,
            v_lower: self.sim.v_lower(),
            fvsi_max: self.sim.fvsi.max_entry.as_ref().map_or(0.0, |e| e.value),
            dv_dt: (v_obs[i] - self.prev_v_obs[i]) / dt,
        };
        self.prev_v_obs = v_obs;
        obs
    }

    pub fn step(&mut self, attack: AttackAction, defense: DefenseAction) -> Result<StepOutcome, GameError> {
        if self.done {
            return Err(GameError::StepAfterDone);
        }
        let applied = if self.attack_active() { attack } else { AttackAction::none() };
        let v_lower = defense.v_lower();
        let info = self.sim.step(applied.delta_t, Some(v_lower))?;
        self.steps_taken += 1;
        self.obs = self.observe();

        let f = payoff_f(&self.obs, applied, self.sim.v_lower(), &self.cfg.payoff);
        let (mut r_laa, mut r_avps) = rewards(f);
        if info.blackout {
            if let Some(b) = self.cfg.terminal_bonus {
                r_laa += b;
                r_avps -= b;
            }
        }
        let in_pickup = self
            .sim
            .relays
            .iter()
            .any(|r| r.in_uv_pickup(self.sim.bus_voltage(r.bus)));
        let defender_shaping = -(self.cfg.trip_cost * info.events.len() as f64)
            - if in_pickup { self.cfg.pickup_penalty } else { 0.0 };
        if let Some(rec) = self.sim.trace.last_mut() {
            rec.payoff = f;
        }
        let truncated = !info.blackout && self.steps_taken >= self.cfg.steps;
        self.done = info.blackout || truncated;
        Ok(StepOutcome {
            obs: self.obs,
            applied,
            f,
            r_laa,
            r_avps,
            defender_shaping,
            done: self.done,
            truncated,
            blackout: info.blackout,
            events: info.events,
        })
    }
}

fn gaussian(r: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).map_or(0.0, |n| n.sample(r))
}

/// Largest |dV/dt| seen on the target over attack-free episodes.
pub fn calibrate_r_th(base: &GameConfig, episodes: usize, seed: u64) -> Result<f64, GameError> {
    let mut worst: f64 = 0.0;
    for ep in 0..episodes {
        let mut cfg = base.clone();
        cfg.attack_enabled = false;
        cfg.sim.record_trace = false;
        cfg.sim.seed = rng::derive(seed, "calibration", &[ep as u64]);
        cfg.sim.noise.seed = cfg.sim.seed;
        let mut env = Env::new(cfg)?;
        while !env.is_done() {
            let out = env.step(AttackAction::none(), DefenseAction::baseline())?;
            if !out.blackout {
                worst = worst.max(out.obs.dv_dt.abs());
            }
        }
    }
    Ok(worst)
}

/// Uniform ΔT draw, used for exploration smoke tests and random rollouts.
pub fn random_attack(r: &mut impl Rng) -> AttackAction {
    AttackAction::new(r.random::<f64>() * DELTA_T_MAX)
}
