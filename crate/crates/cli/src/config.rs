//! Flat `key = value` run configuration layered over the desk defaults.

use std::collections::BTreeMap;

use gridgame::training::TrainConfig;
use toml::Value;

pub const ENV_PREFIX: &str = "GRIDGAME_";

#[derive(Debug, Clone, Copy)]
enum Kind {
    F64,
    Usize,
    Bool,
}

macro_rules! schema {
    ($($key:literal $kind:ident |$c:ident| $place:expr;)*) => {
        /// Every recognised key, in documentation order.
        pub const KEYS: &[&str] = &[$($key),*];

        fn kind_of(key: &str) -> Option<Kind> {
            match key {
                $($key => Some(Kind::$kind),)*
                _ => None,
            }
        }

        fn get(cfg: &Settings, key: &str) -> Value {
            match key {
                $($key => {
                    let $c = cfg;
                    schema!(@get $kind, $place)
                })*
                _ => unreachable!("unknown key {key}"),
            }
        }

        fn set(cfg: &mut Settings, key: &str, v: &Value) -> Result<(), String> {
            match key {
                $($key => {
                    let $c = cfg;
                    $place = schema!(@parse $kind, key, v)?;
                    Ok(())
                })*
                _ => Err(format!("unknown config key {key:?}")),
            }
        }
    };
    (@get F64, $e:expr) => { Value::Float($e as f64) };
    (@get Usize, $e:expr) => { Value::Integer($e as i64) };
    (@get Bool, $e:expr) => { Value::Boolean($e) };
    (@parse F64, $k:expr, $v:expr) => { as_f64($k, $v) };
    (@parse Usize, $k:expr, $v:expr) => { as_usize($k, $v) };
    (@parse Bool, $k:expr, $v:expr) => { as_bool($k, $v) };
}

schema! {
    "steps" Usize |c| c.game.steps;
    "control_dt" F64 |c| c.game.sim.control_dt;
    "decimation" Usize |c| c.decimation;
    "attack_start" F64 |c| c.game.attack_start;
    "noise_var" F64 |c| c.game.sim.noise.variance_mw;
    "restore_tau" F64 |c| c.game.sim.restore_tau;
    "load_scale" F64 |c| c.game.sim.load_scale;
    "alpha" F64 |c| c.game.sim.alpha;
    "attack_k" F64 |c| c.game.sim.attack_k;
    "obs_sigma" F64 |c| c.game.obs_sigma;
    "terminal_bonus" F64 |c| c.terminal_bonus;
    "pickup_penalty" F64 |c| c.game.pickup_penalty;
    "trip_cost" F64 |c| c.game.trip_cost;
    "r_th" F64 |c| c.game.payoff.r_th;
    "episodes" Usize |c| c.episodes;
    "gamma" F64 |c| c.gamma;
    "reward_scale" F64 |c| c.reward_scale;
    "attack_free_fraction" F64 |c| c.attack_free_fraction;
    "curriculum" Bool |c| c.curriculum;
    "literal_epoch_updates" Bool |c| c.literal_epoch_updates;
    "calibration_episodes" Usize |c| c.calibration_episodes;
    "mu0_load_lo" F64 |c| c.mu0.load_scale.0;
    "mu0_load_hi" F64 |c| c.mu0.load_scale.1;
    "mu0_ambient_lo" F64 |c| c.mu0.ambient_offset.0;
    "mu0_ambient_hi" F64 |c| c.mu0.ambient_offset.1;
    "ddpg_actor_lr" F64 |c| c.ddpg.actor_lr;
    "ddpg_critic_lr" F64 |c| c.ddpg.critic_lr;
    "ddpg_tau" F64 |c| c.ddpg.tau;
    "ddpg_noise_sigma" F64 |c| c.ddpg.noise_sigma;
    "ddpg_batch" Usize |c| c.ddpg.batch;
    "ddpg_warmup" Usize |c| c.ddpg.warmup;
    "ddpg_capacity" Usize |c| c.ddpg.capacity;
    "dqn_lr" F64 |c| c.dqn.lr;
    "dqn_batch" Usize |c| c.dqn.batch;
    "dqn_warmup" Usize |c| c.dqn.warmup;
    "dqn_capacity" Usize |c| c.dqn.capacity;
    "dqn_target_sync" Usize |c| c.dqn.target_sync;
    "dqn_double" Bool |c| c.dqn.double;
    "dqn_eps_end" F64 |c| c.dqn.eps_end;
    "dqn_explore_hold" Usize |c| c.dqn.explore_hold;
}

fn as_f64(key: &str, v: &Value) -> Result<f64, String> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        Value::String(s) => s.trim().parse().map_err(|_| format!("{key}: expected a number, got {s:?}")),
        _ => Err(format!("{key}: expected a number")),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| format!("{key}: expected a non-negative integer, got {s:?}")),
        _ => Err(format!("{key}: expected a non-negative integer")),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool, String> {
    match v {
        Value::Boolean(b) => Ok(*b),
        Value::String(s) => match s.trim() {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(format!("{key}: expected true or false, got {s:?}")),
        },
        _ => Err(format!("{key}: expected true or false")),
    }
}

/// Desk defaults plus overrides. A zero terminal bonus means none.
#[derive(Debug, Clone)]
pub struct Settings {
    pub train: TrainConfig,
    pub terminal_bonus: f64,
}

impl std::ops::Deref for Settings {
    type Target = TrainConfig;
    fn deref(&self) -> &TrainConfig {
        &self.train
    }
}

impl std::ops::DerefMut for Settings {
    fn deref_mut(&mut self) -> &mut TrainConfig {
        &mut self.train
    }
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::desk();
        Self {
            terminal_bonus: train.game.terminal_bonus.unwrap_or(0.0),
            train,
        }
    }
}

impl Settings {
    pub fn apply_toml(&mut self, text: &str) -> Result<(), String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        for (k, v) in &table {
            set(self, k, v)?;
        }
        Ok(())
    }

    /// `GRIDGAME_<KEY>` variables for schema keys; other variables are left alone.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), String> {
        let mut found = BTreeMap::new();
        for (name, value) in vars {
            if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
                let key = rest.to_ascii_lowercase();
                if kind_of(&key).is_some() {
                    found.insert(key, value);
                }
            }
        }
        for (k, v) in found {
            set(self, &k, &Value::String(v)).map_err(|e| format!("{ENV_PREFIX}{}: {e}", k.to_ascii_uppercase()))?;
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line in schema order.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", get(self, k))).collect()
    }

    pub fn resolve(&self) -> Result<TrainConfig, String> {
        let mut t = self.train.clone();
        t.game.terminal_bonus = (self.terminal_bonus != 0.0).then_some(self.terminal_bonus);
        t.validate()?;
        if t.game.sim.alpha <= 1.0 || t.game.sim.alpha > 2.0 {
            return Err(format!("alpha {} outside (1, 2]", t.game.sim.alpha));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut s = Settings::default();
        s.apply_toml("episodes = 7\ndqn_lr = 0.0005\ncurriculum = false\n").unwrap();
        let text = s.render();
        let mut back = Settings::default();
        back.apply_toml(&text).unwrap();
        assert_eq!(back.render(), text);
        assert_eq!(back.episodes, 7);
        assert!(!back.curriculum);
        assert_eq!(text.lines().count(), KEYS.len());
    }

    #[test]
    fn env_overrides_and_rejects() {
        let mut s = Settings::default();
        s.apply_env([("GRIDGAME_EPISODES".to_string(), "3".to_string()), ("GRIDGAME_SEED".into(), "x".into())])
            .unwrap();
        assert_eq!(s.episodes, 3);
        assert!(s.apply_env([("GRIDGAME_GAMMA".to_string(), "abc".to_string())]).is_err());
        assert!(s.apply_toml("nonsense_key = 1").is_err());
        assert!(kind_of("steps").is_some());
    }

    #[test]
    fn zero_bonus_disables() {
        let mut s = Settings::default();
        s.apply_toml("terminal_bonus = 0").unwrap();
        assert_eq!(s.resolve().unwrap().game.terminal_bonus, None);
    }
}
