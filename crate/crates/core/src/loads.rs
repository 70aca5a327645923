//! Thermostatic HVAC loads, ambient temperature profiles and demand noise.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid_core::GridCase;
use crate::rng;

/// Upper end of the falsification range, °C.
pub const DELTA_T_MAX: f64 = 2.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LoadsError {
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("profile: {0}")]
    Profile(String),
}

/// One cooling unit. Thermal quantities use MW of heat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacParams {
    pub bus: usize,
    /// Envelope resistance, °C per MW of heat flow.
    pub r_thermal: f64,
    /// Heat capacity, MJ/°C.
    pub c_thermal: f64,
    pub setpoint: f64,
    /// Half-width of the thermostat band.
    pub deadband: f64,
    /// Compressor draw when on, MW.
    pub p_rated: f64,
    pub q_factor: f64,
    /// Extra draw per °C of falsification, MW/°C.
    pub k_gain: f64,
    /// Heat removed per MW drawn.
    pub cop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacState {
    pub t_inside: f64,
    pub on: bool,
    pub delta_t_attack: f64,
    pub p_draw: f64,
}

impl HvacState {
    pub fn new(t_inside: f64, on: bool, params: &HvacParams) -> Self {
        Self {
            t_inside,
            on,
            delta_t_attack: 0.0,
            p_draw: if on { params.p_rated } else { 0.0 },
        }
    }

    pub fn perceived(&self) -> f64 {
        self.t_inside + self.delta_t_attack
    }
}

pub fn attack_power_delta(delta_t: f64, k_gain: f64) -> f64 {
    k_gain * delta_t
}

/// Thermostat decision on the perceived temperature, then an exact RC update over `dt` seconds.
pub fn step_hvac(state: &HvacState, params: &HvacParams, ambient: f64, dt: f64) -> HvacState {
    let mut next = state.clone();
    next.delta_t_attack = state.delta_t_attack.clamp(0.0, DELTA_T_MAX);
    let perceived = next.perceived();
    if perceived > params.setpoint + params.deadband {
        next.on = true;
    } else if perceived < params.setpoint - params.deadband {
        next.on = false;
    }
    let cooling = if next.on { params.cop * params.p_rated } else { 0.0 };
    let t_eq = ambient - params.r_thermal * cooling;
    let tau = params.r_thermal * params.c_thermal;
    next.t_inside = t_eq + (state.t_inside - t_eq) * (-dt / tau).exp();
    next.p_draw = if next.on { params.p_rated } else { 0.0 }
        + attack_power_delta(next.delta_t_attack, params.k_gain);
    next
}

/// On and off durations of the thermostat cycle at a fixed ambient, s.
/// `None` when the unit cannot cycle (ambient inside the band, or too weak to cool).
pub fn cycle_durations(params: &HvacParams, ambient: f64) -> Option<(f64, f64)> {
    let upper = params.setpoint + params.deadband;
    let lower = params.setpoint - params.deadband;
    let t_on = ambient - params.r_thermal * params.cop * params.p_rated;
    if ambient <= upper || t_on >= lower {
        return None;
    }
    let tau = params.r_thermal * params.c_thermal;
    Some((
        tau * ((upper - t_on) / (lower - t_on)).ln(),
        tau * ((ambient - lower) / (ambient - upper)).ln(),
    ))
}

/// `count` identical units on one bus, placed on the thermostat cycle at
/// stratified phases so the aggregate starts near its mean duty.
pub fn spawn_fleet(params: &HvacParams, count: usize, ambient: f64, seed: u64) -> Vec<HvacState> {
    let mut r = rng::stream(seed, "fleet", &[params.bus as u64]);
    let upper = params.setpoint + params.deadband;
    let lower = params.setpoint - params.deadband;
    let tau = params.r_thermal * params.c_thermal;
    let cycle = cycle_durations(params, ambient);
    (0..count)
        .map(|k| {
            let phase = (k as f64 + r.random::<f64>()) / count as f64;
            match cycle {
                Some((on, off)) => {
                    let s = phase * (on + off);
                    if s < on {
                        let t_eq = ambient - params.r_thermal * params.cop * params.p_rated;
                        HvacState::new(t_eq + (upper - t_eq) * (-s / tau).exp(), true, params)
                    } else {
                        HvacState::new(ambient + (lower - ambient) * (-(s - on) / tau).exp(), false, params)
                    }
                }
                None => HvacState::new(lower + (upper - lower) * phase, ambient > upper, params),
            }
        })
        .collect()
}

/// Outdoor temperature sampled on a fixed step, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientProfile {
    pub samples: Vec<f64>,
    pub step: f64,
}

impl AmbientProfile {
    pub fn new(samples: Vec<f64>, step: f64) -> Result<Self, LoadsError> {
        if samples.is_empty() {
            return Err(LoadsError::Profile("no samples".into()));
        }
        if !(step > 0.0) {
            return Err(LoadsError::Profile("step must be positive".into()));
        }
        Ok(Self { samples, step })
    }

    /// Gaussian hump on a flat base, peaking at `peak_s`.
    pub fn hump(base: f64, amplitude: f64, peak_s: f64, width_s: f64, duration_s: f64) -> Self {
        let step = 1.0;
        let n = (duration_s / step).ceil() as usize + 1;
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 * step;
                base + amplitude * (-((t - peak_s) / width_s).powi(2)).exp()
            })
            .collect();
        Self { samples, step }
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s + offset).collect(),
            step: self.step,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let x = (t / self.step).max(0.0);
        let k = x.floor() as usize;
        if k + 1 >= self.samples.len() {
            return *self.samples.last().expect("non-empty");
        }
        let w = x - k as f64;
        self.samples[k] * (1.0 - w) + self.samples[k + 1] * w
    }

    /// Read a `time_s,ambient_c` CSV with a uniform time column.
    pub fn from_csv(path: &Path) -> Result<Self, LoadsError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadsError::Profile(e.to_string()))?;
        let mut times = Vec::new();
        let mut temps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("time")) {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| {
                s.and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| LoadsError::Profile(format!("line {}: bad row", i + 1)))
            };
            times.push(parse(it.next())?);
            temps.push(parse(it.next())?);
        }
        let step = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        Self::new(temps, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Variance of the per-bus demand noise, MW².
    pub variance_mw: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            variance_mw: 0.0,
            seed: 0,
        }
    }

    /// Half-width of the centred uniform support with this variance.
    pub fn half_width(&self) -> f64 {
        (3.0 * self.variance_mw).sqrt()
    }

    /// Sample for `bus` at time `t`; a pure function of (seed, bus, t).
    pub fn sample(&self, bus: usize, t: f64) -> f64 {
        if self.variance_mw == 0.0 {
            return 0.0;
        }
        let key = (t * 1000.0).round() as i64 as u64;
        let mut r = rng::stream(self.seed, "load-noise", &[bus as u64, key]);
        self.half_width() * (2.0 * r.random::<f64>() - 1.0)
    }
}

/// Per-bus demand (MW, MVAr): case load, HVAC draw and uniform noise on loaded buses.
pub fn aggregate_demand(
    hvacs: &[(HvacParams, Vec<HvacState>)],
    base: &GridCase,
    noise: &NoiseSpec,
    t: f64,
) -> Result<Vec<(f64, f64)>, LoadsError> {
    let mut out: Vec<(f64, f64)> = base.buses.iter().map(|b| (b.p_load, b.q_load)).collect();
    for (params, fleet) in hvacs {
        let i = base.index_of(params.bus).ok_or(LoadsError::UnknownBus(params.bus))?;
        let p: f64 = fleet.iter().map(|s| s.p_draw).sum();
        out[i].0 += p;
        out[i].1 += params.q_factor * p;
    }
    for (i, b) in base.buses.iter().enumerate() {
        if b.p_load != 0.0 {
            out[i].0 += noise.sample(b.id, t);
        }
    }
    Ok(out)
}
