use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GridError;

const IEEE14: &str = include_str!("../../data/ieee14.case");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slack" | "ref" | "3" => Some(Self::Slack),
            "pv" | "2" => Some(Self::Pv),
            "pq" | "1" => Some(Self::Pq),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Slack => "slack",
            Self::Pv => "pv",
            Self::Pq => "pq",
        }
    }
}

/// A network node. Loads and shunts are in MW / MVAr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub p_gen: f64,
    pub v_setpoint: f64,
    /// Shunt conductance, MW consumed at 1.0 pu.
    pub g_shunt: f64,
    /// Shunt susceptance, MVAr injected at 1.0 pu.
    pub b_shunt: f64,
}

/// Series branch in the pi model, parameters in per unit on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_shunt: f64,
    pub rating_mva: f64,
    /// Off-nominal turns ratio at the from side; 1.0 for lines.
    pub tap: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn z_mag(&self) -> f64 {
        self.r.hypot(self.x)
    }

    /// Series admittance (g, b) = 1 / (r + jx).
    pub fn series_admittance(&self) -> (f64, f64) {
        let d = self.r * self.r + self.x * self.x;
        (self.r / d, -self.x / d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub s_base: f64,
    pub f_nominal: f64,
}

impl GridCase {
    /// The bundled IEEE 14-bus system.
    pub fn ieee14() -> Self {
        Self::parse(IEEE14).expect("bundled case parses")
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path).map_err(|e| GridError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GridError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            System,
            Bus,
            Branch,
        }
        let mut section = Section::None;
        let mut case = GridCase {
            buses: Vec::new(),
            branches: Vec::new(),
            s_base: 100.0,
            f_nominal: 60.0,
        };
        let mut saw_content = false;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            saw_content = true;
            if line.starts_with('[') {
                section = match line {
                    "[system]" => Section::System,
                    "[bus]" => Section::Bus,
                    "[branch]" => Section::Branch,
                    other => {
                        return Err(GridError::Parse {
                            line: line_no,
                            msg: format!("unknown section {other}"),
                        })
                    }
                };
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let perr = |msg: String| GridError::Parse { line: line_no, msg };
            let num = |s: &str| -> Result<f64, GridError> {
                s.parse::<f64>().map_err(|_| perr(format!("bad number '{s}'")))
            };
            match section {
                Section::None => return Err(perr("data outside of a section".into())),
                Section::System => {
                    if cols.len() != 2 {
                        return Err(perr("expected `key value`".into()));
                    }
                    match cols[0] {
                        "s_base" => case.s_base = num(cols[1])?,
                        "f_nominal" => case.f_nominal = num(cols[1])?,
                        k => return Err(perr(format!("unknown system key {k}"))),
                    }
                }
                Section::Bus => {
                    if cols.len() != 9 {
                        return Err(perr(format!("bus row needs 9 columns, got {}", cols.len())));
                    }
                    let id = cols[0]
                        .parse::<usize>()
                        .map_err(|_| perr(format!("bad bus id '{}'", cols[0])))?;
                    let kind = BusKind::parse(cols[1])
                        .ok_or_else(|| perr(format!("bad bus kind '{}'", cols[1])))?;
                    case.buses.push(Bus {
                        id,
                        kind,
                        base_kv: num(cols[2])?,
                        p_load: num(cols[3])?,
                        q_load: num(cols[4])?,
                        p_gen: num(cols[5])?,
                        v_setpoint: num(cols[6])?,
                        g_shunt: num(cols[7])?,
                        b_shunt: num(cols[8])?,
                    });
                }
                Section::Branch => {
                    if cols.len() != 8 {
                        return Err(perr(format!("branch row needs 8 columns, got {}", cols.len())));
                    }
                    let id = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| perr(format!("bad bus id '{s}'")))
                    };
                    let status = num(cols[7])?;
                    case.branches.push(Branch {
                        from_bus: id(cols[0])?,
                        to_bus: id(cols[1])?,
                        r: num(cols[2])?,
                        x: num(cols[3])?,
                        b_shunt: num(cols[4])?,
                        rating_mva: num(cols[5])?,
                        tap: num(cols[6])?,
                        in_service: status != 0.0,
                    });
                }
            }
        }
        if !saw_content {
            return Err(GridError::Parse {
                line: 0,
                msg: "empty case file".into(),
            });
        }
        case.validate()?;
        Ok(case)
    }

    /// Serialise in the same text format `parse` reads.
    pub fn to_case_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[system]");
        let _ = writeln!(out, "s_base {}", self.s_base);
        let _ = writeln!(out, "f_nominal {}", self.f_nominal);
        let _ = writeln!(out, "\n[bus]");
        for b in &self.buses {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {}",
                b.id,
                b.kind.as_str(),
                b.base_kv,
                b.p_load,
                b.q_load,
                b.p_gen,
                b.v_setpoint,
                b.g_shunt,
                b.b_shunt
            );
        }
        let _ = writeln!(out, "\n[branch]");
        for br in &self.branches {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                br.from_bus,
                br.to_bus,
                br.r,
                br.x,
                br.b_shunt,
                br.rating_mva,
                br.tap,
                u8::from(br.in_service)
            );
        }
        out
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let inv = |m: String| Err(GridError::Invalid(m));
        if self.buses.is_empty() {
            return inv("case has no buses".into());
        }
        if !(self.s_base > 0.0) {
            return inv("s_base must be positive".into());
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return inv(format!("exactly one slack bus required, found {slack}"));
        }
        let mut seen = HashMap::new();
        for b in &self.buses {
            if seen.insert(b.id, ()).is_some() {
                return inv(format!("duplicate bus id {}", b.id));
            }
            if !(b.base_kv > 0.0) {
                return inv(format!("bus {}: base_kv must be positive", b.id));
            }
            if !b.p_load.is_finite() || !b.q_load.is_finite() {
                return inv(format!("bus {}: load must be finite", b.id));
            }
            if b.kind != BusKind::Pq && !(b.v_setpoint > 0.0) {
                return inv(format!("bus {}: voltage setpoint must be positive", b.id));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from_bus == br.to_bus {
                return inv(format!("branch {}: from_bus equals to_bus", k + 1));
            }
            for end in [br.from_bus, br.to_bus] {
                if !seen.contains_key(&end) {
                    return inv(format!("branch {}: unknown bus {end}", k + 1));
                }
            }
            if br.r == 0.0 && br.x == 0.0 {
                return inv(format!("branch {}: zero impedance", k + 1));
            }
            if !(br.tap > 0.0) {
                return inv(format!("branch {}: tap must be positive", k + 1));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Per-bus flag: reachable from the slack over in-service branches.
    pub fn energized(&self) -> Vec<bool> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            if let (Some(f), Some(t)) = (self.index_of(br.from_bus), self.index_of(br.to_bus)) {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.slack_index()];
        seen[stack[0]] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        self.energized().iter().all(|&e| e)
    }

    /// Find the first in-service or out-of-service branch between two buses, either direction.
    pub fn branch_between(&self, a: usize, b: usize) -> Option<usize> {
        self.branches
            .iter()
            .position(|br| (br.from_bus == a && br.to_bus == b) || (br.from_bus == b && br.to_bus == a))
    }

    /// New case with `delta_p` MW and `delta_q` MVAr added to a load bus.
    pub fn apply_load_delta(&self, bus: usize, delta_p: f64, delta_q: f64) -> Result<Self, GridError> {
        let idx = self.index_of(bus).ok_or(GridError::UnknownBus(bus))?;
        if self.buses[idx].kind != BusKind::Pq {
            return Err(GridError::NotLoadBus(bus));
        }
        let mut out = self.clone();
        out.buses[idx].p_load += delta_p;
        out.buses[idx].q_load += delta_q;
        Ok(out)
    }

    pub fn total_load_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.p_load).sum()
    }
}
