//! Quasi-static co-simulation: thermal loads, power flow, frequency and relays.
//!
//! Power flow is re-solved once per control step. Thermal and frequency
//! states advance on a finer substep in between. Bus demand recovers toward
//! its target through a first-order admittance model, so a load pushed past
//! the network's transfer limit drags the voltage down over tens of seconds
//! instead of collapsing the solver in one step.

use serde::{Deserialize, Serialize};

use crate::grid_core::{solve_from, solve_power_flow, BusKind, GridCase, PfOptions, PowerFlowSolution};
use crate::loads::{aggregate_demand, spawn_fleet, step_hvac, AmbientProfile, HvacParams, HvacState, LoadsError, NoiseSpec};
use crate::protection::{EventKind, FreqRelay, ProtectionEvent, VoltageRelay, DEFAULT_ALPHA};
use crate::stability::{fvsi_report, most_unstable_bus, FvsiReport};

/// Load buses below this voltage count as blacked out.
pub const BLACKOUT_V: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DynError {
    #[error("step after blackout")]
    StepAfterBlackout,
    #[error(transparent)]
    Loads(#[from] LoadsError),
    #[error("initial operating point: {0}")]
    Init(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenModel {
    /// Aggregate inertia constant, s.
    pub h_inertia: f64,
    /// Damping, pu power per pu frequency.
    pub d_damping: f64,
    pub agc_kp: f64,
    pub agc_ki: f64,
    /// Current AGC correction, pu.
    pub p_agc: f64,
    /// Integral of the frequency error, pu·s.
    pub integral: f64,
}

impl Default for GenModel {
    fn default() -> Self {
        Self {
            h_inertia: 5.0,
            d_damping: 2.0,
            agc_kp: 20.0,
            agc_ki: 4.0,
            p_agc: 0.0,
            integral: 0.0,
        }
    }
}

/// One Euler step of the aggregate swing equation with PI secondary control.
///
/// `p_imbalance` is electrical demand above schedule in pu. Returns the new
/// frequency in Hz.
pub fn step_frequency(gen: &GenModel, p_imbalance: f64, freq: f64, f_nominal: f64, dt: f64) -> (f64, GenModel) {
    let mut g = gen.clone();
    let df = (freq - f_nominal) / f_nominal;
    let accel = (g.p_agc - p_imbalance - g.d_damping * df) / (2.0 * g.h_inertia);
    let df_next = df + dt * accel;
    g.integral += df_next * dt;
    g.p_agc = -g.agc_kp * df_next - g.agc_ki * g.integral;
    (f_nominal * (1.0 + df_next), g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtectionMode {
    Off,
    Static,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub params: HvacParams,
    pub count: usize,
}

/// Everything needed to build an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub case: GridCase,
    /// Branches forced out of service, by end buses.
    pub outages: Vec<(usize, usize)>,
    /// Replacement static loads, (bus, MW, MVAr).
    pub static_loads: Vec<(usize, f64, f64)>,
    /// Extra capacitor banks, (bus, MVAr at 1 pu).
    pub shunts: Vec<(usize, f64)>,
    pub fleets: Vec<FleetSpec>,
    pub ambient: AmbientProfile,
    pub noise: NoiseSpec,
    /// Multiplier on the static loads of buses without a fleet.
    pub load_scale: f64,
    /// Demand recovery time constant, s.
    pub restore_tau: f64,
    pub gen: GenModel,
    pub control_dt: f64,
    pub substep_dt: f64,
    pub protection: ProtectionMode,
    /// Direct power gain used when the targeted bus has no HVAC fleet, MW/°C.
    pub attack_k: f64,
    pub alpha: f64,
    pub seed: u64,
    pub record_trace: bool,
}

impl SimConfig {
    /// Peak-hour scenario: line 2-3 on outage, bus 3 compensated and hosting a 100 MW cooling fleet.
    pub fn peak_scenario() -> Self {
        let unit = HvacParams {
            bus: 3,
            r_thermal: 10.0,
            c_thermal: 120.0,
            setpoint: 22.0,
            deadband: 0.5,
            p_rated: 1.0,
            q_factor: 0.25,
            k_gain: 0.02,
            cop: 3.0,
        };
        Self {
            case: GridCase::ieee14(),
            outages: vec![(2, 3)],
            static_loads: vec![(3, 94.2, 55.0)],
            shunts: vec![(3, 130.0)],
            fleets: vec![FleetSpec { params: unit, count: 100 }],
            ambient: AmbientProfile::hump(28.0, 6.0, 120.0, 150.0, 1200.0),
            noise: NoiseSpec { variance_mw: 0.1, seed: 0 },
            load_scale: 1.0,
            restore_tau: 10.0,
            gen: GenModel::default(),
            control_dt: 1.0,
            substep_dt: 0.01,
            protection: ProtectionMode::Static,
            attack_k: 2.0,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            record_trace: true,
        }
    }

    /// The case with outages, compensation and load scaling applied.
    pub fn network(&self) -> GridCase {
        let mut case = self.case.clone();
        for &(a, b) in &self.outages {
            if let Some(k) = case.branch_between(a, b) {
                case.branches[k].in_service = false;
            }
        }
        for &(bus, p, q) in &self.static_loads {
            if let Some(i) = case.index_of(bus) {
                case.buses[i].p_load = p;
                case.buses[i].q_load = q;
            }
        }
        for &(bus, mvar) in &self.shunts {
            if let Some(i) = case.index_of(bus) {
                case.buses[i].b_shunt += mvar;
            }
        }
        for b in &mut case.buses {
            if self.fleets.iter().all(|f| f.params.bus != b.id) {
                b.p_load *= self.load_scale;
                b.q_load *= self.load_scale;
            }
        }
        case
    }

    fn substeps(&self) -> usize {
        ((self.control_dt / self.substep_dt).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub freq: f64,
    pub v_mag: Vec<f64>,
    pub attacked_bus: usize,
    pub delta_t_attack: f64,
    pub v_lower: f64,
    pub payoff: f64,
    pub events: Vec<ProtectionEvent>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub cfg: SimConfig,
    pub t: f64,
    /// Network with outages and compensation; loads here are the static part.
    pub case: GridCase,
    /// Network as served at the last solve: loads equal delivered power.
    pub served: GridCase,
    pub hvacs: Vec<(HvacParams, Vec<HvacState>)>,
    pub sol: PowerFlowSolution,
    pub freq: f64,
    pub gen: GenModel,
    pub relays: Vec<VoltageRelay>,
    pub freq_relays: Vec<FreqRelay>,
    pub fvsi: FvsiReport,
    pub blackout: bool,
    pub prev_v: Vec<f64>,
    /// Delivered P and Q per unit voltage squared, pu.
    pub load_g: Vec<f64>,
    pub load_b: Vec<f64>,
    pub shed: Vec<bool>,
    pub attacked_bus: usize,
    pub p_sched: f64,
    pub trace: Vec<TraceRecord>,
    pub events: Vec<ProtectionEvent>,
}

/// Outcome of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub events: Vec<ProtectionEvent>,
    pub blackout: bool,
    pub attacked_bus: usize,
}

impl SimState {
    pub fn new(cfg: SimConfig) -> Result<Self, DynError> {
        let case = cfg.network();
        let hvacs: Vec<(HvacParams, Vec<HvacState>)> = cfg
            .fleets
            .iter()
            .map(|f| (f.params.clone(), spawn_fleet(&f.params, f.count, cfg.ambient.at(0.0), cfg.seed)))
            .collect();
        let demand = aggregate_demand(&hvacs, &case, &cfg.noise, 0.0)?;
        let mut pq = case.clone();
        for (b, (p, q)) in pq.buses.iter_mut().zip(&demand) {
            b.p_load = *p;
            b.q_load = *q;
        }
        let sol = solve_power_flow(&pq, true);
        if !sol.converged {
            return Err(DynError::Init("initial power flow did not converge".into()));
        }
        let s_base = case.s_base;
        let n = case.buses.len();
        let mut load_g = vec![0.0; n];
        let mut load_b = vec![0.0; n];
        for i in 0..n {
            if case.buses[i].kind == BusKind::Pq && sol.energized[i] {
                let v2 = sol.v_mag[i] * sol.v_mag[i];
                load_g[i] = demand[i].0 / s_base / v2;
                load_b[i] = demand[i].1 / s_base / v2;
            }
        }
        let fvsi = fvsi_report(&sol, &pq, 0.0);
        let attacked_bus = most_unstable_bus(&fvsi).map(|r| r.0).unwrap_or(0);
        let load_buses: Vec<usize> = case
            .buses
            .iter()
            .enumerate()
            .filter(|(i, b)| b.kind == BusKind::Pq && demand[*i].0 != 0.0)
            .map(|(_, b)| b.id)
            .collect();
        let mut relays: Vec<VoltageRelay> = load_buses.iter().map(|&b| VoltageRelay::new(b)).collect();
        for r in &mut relays {
            r.alpha = cfg.alpha;
        }
        let freq_relays = load_buses.iter().map(|&b| FreqRelay::new(b)).collect();
        let p_sched = sol.total_generation(&pq);
        Ok(Self {
            t: 0.0,
            freq: case.f_nominal,
            gen: cfg.gen.clone(),
            prev_v: sol.v_mag.clone(),
            served: pq,
            case,
            hvacs,
            sol,
            relays,
            freq_relays,
            fvsi,
            blackout: false,
            load_g,
            load_b,
            shed: vec![false; n],
            attacked_bus,
            p_sched,
            trace: Vec::new(),
            events: Vec::new(),
            cfg,
        })
    }

    pub fn bus_voltage(&self, bus: usize) -> f64 {
        self.case.index_of(bus).map_or(0.0, |i| self.sol.v_mag[i])
    }

    pub fn relay_at(&self, bus: usize) -> Option<&VoltageRelay> {
        self.relays.iter().find(|r| r.bus == bus)
    }

    pub fn v_lower(&self) -> f64 {
        self.relays
            .iter()
            .find(|r| !r.tripped)
            .or(self.relays.first())
            .map_or(crate::protection::STATIC_V_LOWER, |r| r.v_lower)
    }

    /// Retune every live load-bus relay.
    pub fn set_thresholds(&mut self, v_lower: f64) -> Result<(), crate::protection::ProtectionError> {
        let alpha = self.cfg.alpha;
        for r in self.relays.iter_mut().filter(|r| !r.tripped) {
            r.set_thresholds(v_lower, alpha)?;
        }
        Ok(())
    }

    fn shed_bus(&mut self, bus: usize) {
        if let Some(i) = self.case.index_of(bus) {
            self.shed[i] = true;
            self.load_g[i] = 0.0;
            self.load_b[i] = 0.0;
        }
    }

    /// Case handed to the solver: demand represented by its recovering admittance.
    fn solve_case(&self) -> GridCase {
        let mut c = self.case.clone();
        let s = c.s_base;
        for (i, b) in c.buses.iter_mut().enumerate() {
            if b.kind == BusKind::Pq {
                b.p_load = 0.0;
                b.q_load = 0.0;
                b.g_shunt += self.load_g[i] * s;
                b.b_shunt -= self.load_b[i] * s;
            }
        }
        c
    }

    /// Advance one control step. `delta_t` falsifies sensors at the current
    /// target bus; `v_lower` retunes relays when given.
    pub fn step(&mut self, delta_t: f64, v_lower: Option<f64>) -> Result<StepInfo, DynError> {
        if self.blackout {
            return Err(DynError::StepAfterBlackout);
        }
        let dt = self.cfg.control_dt;
        let n_sub = self.cfg.substeps();
        let h = dt / n_sub as f64;
        let target = self.attacked_bus;
        let delta_t = delta_t.clamp(0.0, crate::loads::DELTA_T_MAX);

        if let (Some(vl), ProtectionMode::Adaptive) = (v_lower, self.cfg.protection) {
            // Out-of-range requests are clamped by the caller; ignore failures here.
            let _ = self.set_thresholds(vl);
        }

        // (1) thermal update with the falsified reading
        let mut fleet_at_target = false;
        for (params, fleet) in &mut self.hvacs {
            let dt_attack = if params.bus == target { delta_t } else { 0.0 };
            fleet_at_target |= params.bus == target;
            for s in fleet.iter_mut() {
                s.delta_t_attack = dt_attack;
            }
        }
        for k in 0..n_sub {
            let ambient = self.cfg.ambient.at(self.t + k as f64 * h);
            for (params, fleet) in &mut self.hvacs {
                for s in fleet.iter_mut() {
                    *s = step_hvac(s, params, ambient, h);
                }
            }
        }
        let t_next = self.t + dt;

        // (2) demand targets
        let mut demand = aggregate_demand(&self.hvacs, &self.case, &self.cfg.noise, t_next)?;
        if !fleet_at_target {
            if let Some(i) = self.case.index_of(target) {
                demand[i].0 += self.cfg.attack_k * delta_t;
            }
        }
        for i in 0..demand.len() {
            if self.shed[i] {
                demand[i] = (0.0, 0.0);
            }
        }

        // (3) power flow on the recovering admittances
        let solve_case = self.solve_case();
        let mut sol = solve_from(&solve_case, &self.sol.v_mag, &self.sol.v_ang, PfOptions::default());
        if !sol.converged {
            // A large jump (e.g. after shedding) can leave the warm start outside the basin.
            sol = solve_power_flow(&solve_case, true);
        }
        let s_base = self.case.s_base;
        self.prev_v = self.sol.v_mag.clone();

        let mut served = self.case.clone();
        for (i, b) in served.buses.iter_mut().enumerate() {
            if b.kind == BusKind::Pq {
                let v2 = sol.v_mag[i] * sol.v_mag[i];
                b.p_load = self.load_g[i] * v2 * s_base;
                b.q_load = self.load_b[i] * v2 * s_base;
            }
        }

        // (4) frequency
        if sol.converged {
            let p_imb = (sol.total_generation(&solve_case) - self.p_sched) / s_base;
            for _ in 0..n_sub {
                let (f, g) = step_frequency(&self.gen, p_imb, self.freq, self.case.f_nominal, h);
                self.freq = f;
                self.gen = g;
            }
        }

        // demand recovery toward the new targets
        if sol.converged {
            let a = dt / self.cfg.restore_tau;
            for i in 0..demand.len() {
                if self.case.buses[i].kind != BusKind::Pq || !sol.energized[i] {
                    continue;
                }
                let v2 = sol.v_mag[i] * sol.v_mag[i];
                self.load_g[i] += a * (demand[i].0 / s_base - self.load_g[i] * v2);
                self.load_b[i] += a * (demand[i].1 / s_base - self.load_b[i] * v2);
                self.load_g[i] = self.load_g[i].max(0.0);
            }
        }

        self.t = t_next;
        self.sol = sol;
        self.served = served;

        // (5) stability scan
        self.fvsi = fvsi_report(&self.sol, &self.served, self.t);

        // (6) relays
        let mut events = Vec::new();
        if self.sol.converged && self.cfg.protection != ProtectionMode::Off {
            for k in 0..self.relays.len() {
                let bus = self.relays[k].bus;
                let v = self.bus_voltage(bus);
                if let Some(ev) = self.relays[k].step(v, dt, self.t) {
                    events.push(ev);
                }
            }
            for k in 0..self.freq_relays.len() {
                if let Some(ev) = self.freq_relays[k].step(self.freq, dt, self.t) {
                    events.push(ev);
                }
            }
            for ev in &events {
                match ev.kind {
                    EventKind::UvTrip | EventKind::OvTrip | EventKind::UflsShed | EventKind::OflsShed => {
                        self.shed_bus(ev.bus)
                    }
                }
            }
        }

        // (7) blackout
        self.blackout = detect_blackout(&self.sol, &self.case, target);
        if !self.blackout {
            if let Ok((bus, _, _)) = most_unstable_bus(&self.fvsi) {
                self.attacked_bus = bus;
            }
        }

        // (8) trace
        if self.cfg.record_trace {
            self.trace.push(TraceRecord {
                t: self.t,
                freq: self.freq,
                v_mag: self.sol.v_mag.clone(),
                attacked_bus: target,
                delta_t_attack: delta_t,
                v_lower: self.v_lower(),
                payoff: 0.0,
                events: events.clone(),
            });
        }
        self.events.extend(events.iter().copied());
        Ok(StepInfo {
            events,
            blackout: self.blackout,
            attacked_bus: target,
        })
    }
}

/// Non-convergence, a live load bus under 0.5 pu, or the attacked bus cut off from the slack.
pub fn detect_blackout(sol: &PowerFlowSolution, case: &GridCase, attacked_bus: usize) -> bool {
    if !sol.converged {
        return true;
    }
    let low = case
        .buses
        .iter()
        .enumerate()
        .any(|(i, b)| b.kind == BusKind::Pq && sol.energized[i] && sol.v_mag[i] < BLACKOUT_V);
    let islanded = case
        .index_of(attacked_bus)
        .is_some_and(|i| !sol.energized[i]);
    low || islanded
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_fixed_point() {
        let g = GenModel::default();
        let (f, g2) = step_frequency(&g, 0.0, 60.0, 60.0, 0.01);
        assert_eq!(f, 60.0);
        assert_eq!(g2.p_agc, 0.0);
    }

    #[test]
    fn droop_offset_without_agc() {
        let mut g = GenModel {
            agc_kp: 0.0,
            agc_ki: 0.0,
            ..GenModel::default()
        };
        let mut f = 60.0;
        let imb = 0.04;
        for _ in 0..200_000 {
            let (nf, ng) = step_frequency(&g, imb, f, 60.0, 0.01);
            f = nf;
            g = ng;
        }
        let df_pu = (f - 60.0) / 60.0;
        assert!((df_pu + imb / g.d_damping).abs() < 1e-9, "{df_pu}");
    }

    #[test]
    fn agc_recovers_small_step() {
        let mut g = GenModel::default();
        let mut f = 60.0;
        let mut nadir: f64 = 60.0;
        for _ in 0..6000 {
            let (nf, ng) = step_frequency(&g, 0.04, f, 60.0, 0.01);
            f = nf;
            g = ng;
            nadir = nadir.min(f);
        }
        assert!(nadir < 60.0);
        assert!((f - 60.0).abs() <= 0.05, "{f}");
    }

    #[test]
    fn blackout_predicate() {
        let case = GridCase::ieee14();
        let mut sol = solve_power_flow(&case, true);
        assert!(!detect_blackout(&sol, &case, 3));
        let mut bad = sol.clone();
        bad.converged = false;
        assert!(detect_blackout(&bad, &case, 3));
        sol.v_mag[13] = 0.49;
        assert!(detect_blackout(&sol, &case, 3));
    }

    #[test]
    fn step_after_blackout_errors() {
        let mut s = SimState::new(SimConfig::peak_scenario()).unwrap();
        s.blackout = true;
        assert_eq!(s.step(0.0, None).unwrap_err(), DynError::StepAfterBlackout);
    }
}
