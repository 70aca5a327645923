//! Fast Voltage Stability Index per line and weakest-bus selection.

use serde::{Deserialize, Serialize};

use crate::grid_core::{GridCase, PowerFlowSolution};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StabilityError {
    #[error("branch {0} has zero series susceptance")]
    DegenerateLine(usize),
    #[error("branch {0} is out of service")]
    OutOfService(usize),
    #[error("bus {0} is not an end of branch {1}")]
    NotEndpoint(usize, usize),
    #[error("bus {0} is de-energized")]
    DeadBus(usize),
    #[error("empty report")]
    EmptyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvsiEntry {
    /// 1-based branch number in case order.
    pub line: usize,
    pub from: usize,
    pub to: usize,
    pub load_bus: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvsiReport {
    pub entries: Vec<FvsiEntry>,
    pub max_entry: Option<FvsiEntry>,
    pub computed_at: f64,
}

/// Index value from explicit per-unit quantities.
///
/// `g`, `b` are the series conductance and susceptance of the line. The
/// susceptance enters through its magnitude so the index keeps the sign of
/// the reactive demand.
pub fn fvsi_value(z: f64, q: f64, g: f64, b: f64, v: f64) -> f64 {
    4.0 * z * z * q * (b * b + g * g) / (v * v * b.abs())
}

/// Index for one branch, with `load_bus` the receiving end.
pub fn fvsi_line(
    sol: &PowerFlowSolution,
    case: &GridCase,
    branch: usize,
    load_bus: usize,
) -> Result<f64, StabilityError> {
    let br = &case.branches[branch];
    if !br.in_service {
        return Err(StabilityError::OutOfService(branch + 1));
    }
    if load_bus != br.from_bus && load_bus != br.to_bus {
        return Err(StabilityError::NotEndpoint(load_bus, branch + 1));
    }
    let (g, b) = br.series_admittance();
    if b == 0.0 {
        return Err(StabilityError::DegenerateLine(branch + 1));
    }
    let i = case.index_of(load_bus).expect("validated endpoint");
    let v = sol.v_mag[i];
    if !sol.energized[i] || v <= 0.0 {
        return Err(StabilityError::DeadBus(load_bus));
    }
    let q = case.buses[i].q_load / case.s_base;
    Ok(fvsi_value(br.z_mag(), q, g, b, v))
}

/// Receiving end: the bus active power flows into.
pub fn receiving_end(sol: &PowerFlowSolution, case: &GridCase, branch: usize) -> usize {
    let br = &case.branches[branch];
    if sol.p_from[branch] >= 0.0 {
        br.to_bus
    } else {
        br.from_bus
    }
}

/// Evaluate every usable line. Degenerate or dead lines are left out.
pub fn fvsi_report(sol: &PowerFlowSolution, case: &GridCase, t: f64) -> FvsiReport {
    let mut entries = Vec::new();
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let load_bus = receiving_end(sol, case, k);
        if let Ok(value) = fvsi_line(sol, case, k, load_bus) {
            entries.push(FvsiEntry {
                line: k + 1,
                from: br.from_bus,
                to: br.to_bus,
                load_bus,
                value,
            });
        }
    }
    let max_entry = select_max(&entries).cloned();
    FvsiReport {
        entries,
        max_entry,
        computed_at: t,
    }
}

fn select_max(entries: &[FvsiEntry]) -> Option<&FvsiEntry> {
    entries.iter().fold(None, |best: Option<&FvsiEntry>, e| match best {
        None => Some(e),
        Some(b) if e.value > b.value || (e.value == b.value && e.load_bus < b.load_bus) => Some(e),
        keep => keep,
    })
}

/// (load bus, partner bus, value) of the highest-index line. Ties go to the lower bus id.
pub fn most_unstable_bus(report: &FvsiReport) -> Result<(usize, usize, f64), StabilityError> {
    let e = select_max(&report.entries).ok_or(StabilityError::EmptyReport)?;
    let partner = if e.load_bus == e.to { e.from } else { e.to };
    Ok((e.load_bus, partner, e.value))
}
