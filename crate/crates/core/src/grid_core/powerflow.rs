use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BusKind, GridCase};

/// Bus admittance matrix split into real and imaginary parts (pu).
#[derive(Debug, Clone)]
pub struct Admittance {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Build the bus admittance matrix. Out-of-service branches contribute nothing.
pub fn build_admittance(case: &GridCase) -> Admittance {
    let n = case.buses.len();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for br in case.branches.iter().filter(|br| br.in_service) {
        let (Some(f), Some(t)) = (case.index_of(br.from_bus), case.index_of(br.to_bus)) else {
            continue;
        };
        let (ys_g, ys_b) = br.series_admittance();
        let tap = br.tap;
        let half_b = br.b_shunt / 2.0;
        g[(f, f)] += ys_g / (tap * tap);
        b[(f, f)] += (ys_b + half_b) / (tap * tap);
        g[(t, t)] += ys_g;
        b[(t, t)] += ys_b + half_b;
        g[(f, t)] -= ys_g / tap;
        b[(f, t)] -= ys_b / tap;
        g[(t, f)] -= ys_g / tap;
        b[(t, f)] -= ys_b / tap;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        g[(i, i)] += bus.g_shunt / case.s_base;
        b[(i, i)] += bus.b_shunt / case.s_base;
    }
    Admittance { g, b }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

/// Solved operating point. Flows and injections are in MW / MVAr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub energized: Vec<bool>,
    /// Flow leaving the from end of each branch.
    pub p_from: Vec<f64>,
    pub q_from: Vec<f64>,
    /// Flow leaving the to end of each branch.
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
    /// Net injection per bus (generation minus load minus shunt).
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    /// Total generation in MW implied by the injections.
    pub fn total_generation(&self, case: &GridCase) -> f64 {
        self.p_inj
            .iter()
            .zip(&case.buses)
            .zip(&self.energized)
            .filter(|(_, &e)| e)
            .map(|((p, b), _)| p + b.p_load)
            .sum()
    }

    pub fn total_losses(&self) -> f64 {
        self.p_from.iter().zip(&self.p_to).map(|(a, b)| a + b).sum()
    }
}

/// Solve from a flat start (`flat_start`) or from the bus setpoint column.
pub fn solve_power_flow(case: &GridCase, flat_start: bool) -> PowerFlowSolution {
    let n = case.buses.len();
    let vm: Vec<f64> = case
        .buses
        .iter()
        .map(|b| match (b.kind, flat_start) {
            (BusKind::Pq, true) => 1.0,
            _ => b.v_setpoint,
        })
        .collect();
    solve_from(case, &vm, &vec![0.0; n], PfOptions::default())
}

/// Newton-Raphson in polar coordinates starting from the given voltages.
/// Setpoints of slack and PV buses override the initial magnitudes there.
pub fn solve_from(case: &GridCase, vm0: &[f64], va0: &[f64], opts: PfOptions) -> PowerFlowSolution {
    let n = case.buses.len();
    let y = build_admittance(case);
    let energized = case.energized();
    let s_base = case.s_base;

    let mut vm: Vec<f64> = vm0.to_vec();
    let mut va: Vec<f64> = va0.to_vec();
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.kind != BusKind::Pq {
            vm[i] = bus.v_setpoint;
        }
        if bus.kind == BusKind::Slack {
            va[i] = 0.0;
        }
        if !energized[i] {
            vm[i] = 0.0;
            va[i] = 0.0;
        } else if !(vm[i] > 0.05) || !vm[i].is_finite() {
            vm[i] = 1.0;
        }
    }

    // Unknown ordering: angles of non-slack buses, then magnitudes of PQ buses.
    let ang_idx: Vec<usize> = (0..n)
        .filter(|&i| energized[i] && case.buses[i].kind != BusKind::Slack)
        .collect();
    let mag_idx: Vec<usize> = (0..n)
        .filter(|&i| energized[i] && case.buses[i].kind == BusKind::Pq)
        .collect();
    let na = ang_idx.len();
    let dim = na + mag_idx.len();

    let p_spec: Vec<f64> = case
        .buses
        .iter()
        .map(|b| (b.p_gen - b.p_load) / s_base)
        .collect();
    let q_spec: Vec<f64> = case.buses.iter().map(|b| -b.q_load / s_base).collect();

    let mut converged = false;
    let mut iterations = 0;
    let mut max_mismatch = f64::INFINITY;

    for it in 0..=opts.max_iter {
        let (p, q) = injections(&y, &vm, &va, &energized);
        let mut f = DVector::zeros(dim);
        for (k, &i) in ang_idx.iter().enumerate() {
            f[k] = p_spec[i] - p[i];
        }
        for (k, &i) in mag_idx.iter().enumerate() {
            f[na + k] = q_spec[i] - q[i];
        }
        max_mismatch = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch <= opts.tol {
            converged = true;
            iterations = it;
            break;
        }
        if it == opts.max_iter {
            iterations = it;
            break;
        }

        let jac = jacobian(&y, &vm, &va, &p, &q, &ang_idx, &mag_idx);
        let Some(dx) = jac.lu().solve(&f) else {
            iterations = it;
            break;
        };
        for (k, &i) in ang_idx.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in mag_idx.iter().enumerate() {
            vm[i] += dx[na + k];
        }
        if vm.iter().any(|v| !v.is_finite()) || mag_idx.iter().any(|&i| vm[i] <= 0.0) {
            iterations = it + 1;
            break;
        }
    }

    let (p, q) = injections(&y, &vm, &va, &energized);
    let nb = case.branches.len();
    let mut sol = PowerFlowSolution {
        v_mag: vm,
        v_ang: va,
        energized,
        p_from: vec![0.0; nb],
        q_from: vec![0.0; nb],
        p_to: vec![0.0; nb],
        q_to: vec![0.0; nb],
        p_inj: p.iter().map(|v| v * s_base).collect(),
        q_inj: q.iter().map(|v| v * s_base).collect(),
        converged,
        iterations,
        max_mismatch,
    };
    branch_flows(case, &mut sol);
    sol
}

fn injections(y: &Admittance, vm: &[f64], va: &[f64], energized: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let n = vm.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        if !energized[i] {
            continue;
        }
        let (mut pi, mut qi) = (0.0, 0.0);
        for j in 0..n {
            let gij = y.g[(i, j)];
            let bij = y.b[(i, j)];
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let (s, c) = (va[i] - va[j]).sin_cos();
            pi += vm[j] * (gij * c + bij * s);
            qi += vm[j] * (gij * s - bij * c);
        }
        p[i] = vm[i] * pi;
        q[i] = vm[i] * qi;
    }
    (p, q)
}

fn jacobian(
    y: &Admittance,
    vm: &[f64],
    va: &[f64],
    p: &[f64],
    q: &[f64],
    ang_idx: &[usize],
    mag_idx: &[usize],
) -> DMatrix<f64> {
    let na = ang_idx.len();
    let dim = na + mag_idx.len();
    let mut jac = DMatrix::zeros(dim, dim);

    // Rows: P equations for ang_idx, Q equations for mag_idx.
    let rows = ang_idx
        .iter()
        .map(|&i| (i, true))
        .chain(mag_idx.iter().map(|&i| (i, false)));
    for (r, (i, is_p)) in rows.enumerate() {
        for (c, &j) in ang_idx.iter().enumerate() {
            jac[(r, c)] = if i == j {
                if is_p {
                    -q[i] - y.b[(i, i)] * vm[i] * vm[i]
                } else {
                    p[i] - y.g[(i, i)] * vm[i] * vm[i]
                }
            } else {
                let (s, co) = (va[i] - va[j]).sin_cos();
                let (gij, bij) = (y.g[(i, j)], y.b[(i, j)]);
                if is_p {
                    vm[i] * vm[j] * (gij * s - bij * co)
                } else {
                    -vm[i] * vm[j] * (gij * co + bij * s)
                }
            };
        }
        for (c, &j) in mag_idx.iter().enumerate() {
            jac[(r, na + c)] = if i == j {
                if is_p {
                    p[i] / vm[i] + y.g[(i, i)] * vm[i]
                } else {
                    q[i] / vm[i] - y.b[(i, i)] * vm[i]
                }
            } else {
                let (s, co) = (va[i] - va[j]).sin_cos();
                let (gij, bij) = (y.g[(i, j)], y.b[(i, j)]);
                if is_p {
                    vm[i] * (gij * co + bij * s)
                } else {
                    vm[i] * (gij * s - bij * co)
                }
            };
        }
    }
    jac
}

fn branch_flows(case: &GridCase, sol: &mut PowerFlowSolution) {
    let s_base = case.s_base;
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let (Some(f), Some(t)) = (case.index_of(br.from_bus), case.index_of(br.to_bus)) else {
            continue;
        };
        let (ys_g, ys_b) = br.series_admittance();
        let tap = br.tap;
        let half_b = br.b_shunt / 2.0;
        // Complex voltages.
        let (vf, af, vt, at) = (sol.v_mag[f], sol.v_ang[f], sol.v_mag[t], sol.v_ang[t]);
        let (ef, ff) = (vf * af.cos(), vf * af.sin());
        let (et, ft) = (vt * at.cos(), vt * at.sin());
        // I_f = Y_ff V_f + Y_ft V_t ; I_t = Y_tf V_f + Y_tt V_t
        let yff = (ys_g / (tap * tap), (ys_b + half_b) / (tap * tap));
        let yft = (-ys_g / tap, -ys_b / tap);
        let ytt = (ys_g, ys_b + half_b);
        let mul = |a: (f64, f64), re: f64, im: f64| (a.0 * re - a.1 * im, a.0 * im + a.1 * re);
        let i1 = mul(yff, ef, ff);
        let i2 = mul(yft, et, ft);
        let i_f = (i1.0 + i2.0, i1.1 + i2.1);
        let i3 = mul(yft, ef, ff);
        let i4 = mul(ytt, et, ft);
        let i_t = (i3.0 + i4.0, i3.1 + i4.1);
        // S = V I*
        sol.p_from[k] = (ef * i_f.0 + ff * i_f.1) * s_base;
        sol.q_from[k] = (ff * i_f.0 - ef * i_f.1) * s_base;
        sol.p_to[k] = (et * i_t.0 + ft * i_t.1) * s_base;
        sol.q_to[k] = (ft * i_t.0 - et * i_t.1) * s_base;
    }
}
