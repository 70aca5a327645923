//! Subcommand bodies. Each returns the files it wrote.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use gridgame::agents::{DdpgAgent, DqnAgent};
use gridgame::dynamics::{ProtectionMode, SimConfig, SimState};
use gridgame::grid_core::{solve_power_flow, GridCase, PowerFlowSolution};
use gridgame::loads::AmbientProfile;
use gridgame::stability::fvsi_report;
use gridgame::training::{
    evaluate, fpr_sweep, run_episode, train, AttackerPolicy, DefenderPolicy, EvalReport, TrainConfig,
};

use crate::{domain, AttackMode, CaseArgs, CliError, Command, EvaluateArgs, FprArgs, Scenario, SimulateArgs, TrainArgs};

/// Stdout that tolerates a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const ATTACKER_FILE: &str = "attacker.policy";
pub const DEFENDER_FILE: &str = "defender.policy";
pub const CALIBRATION_FILE: &str = "calibration.toml";

pub fn dispatch(cmd: &Command, cfg: TrainConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    match cmd {
        Command::Powerflow(a) => powerflow(a, &cfg, seed, out),
        Command::Fvsi(a) => fvsi(a, &cfg, seed, out),
        Command::Simulate(a) => simulate(a, cfg, seed, out),
        Command::Train(a) => train_cmd(a, cfg, seed, out),
        Command::Evaluate(a) => evaluate_cmd(a, cfg, seed, out),
        Command::FprSweep(a) => fpr_cmd(a, cfg, seed, out),
        Command::Replay { .. } => Err(CliError::Usage("replay is handled before dispatch".into())),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_file(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_path(path).map_err(domain)?;
    w.write_record(header).map_err(domain)?;
    for r in rows {
        w.write_record(&r).map_err(domain)?;
    }
    w.flush().map_err(domain)?;
    Ok(path.to_path_buf())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Solved case for the requested scenario. The peak case includes the
/// fleet's initial draw.
fn solved_case(a: &CaseArgs, cfg: &TrainConfig, seed: u64) -> Result<(GridCase, PowerFlowSolution), CliError> {
    let base = match &a.case {
        Some(p) => GridCase::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => GridCase::ieee14(),
    };
    match a.scenario {
        Scenario::Base => {
            let sol = solve_power_flow(&base, true);
            Ok((base, sol))
        }
        Scenario::Peak => {
            let mut sim: SimConfig = cfg.game.sim.clone();
            sim.case = base;
            sim.seed = seed;
            sim.noise.seed = seed;
            let s = SimState::new(sim).map_err(domain)?;
            Ok((s.served, s.sol))
        }
    }
}

fn powerflow(a: &CaseArgs, cfg: &TrainConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (case, sol) = solved_case(a, cfg, seed)?;
    if !sol.converged {
        return Err(CliError::Domain(format!("power flow did not converge in {} iterations", sol.iterations)));
    }
    say!(
        "converged iterations={} max_mismatch={:e} losses_mw={:.4}",
        sol.iterations,
        sol.max_mismatch,
        sol.total_losses()
    );
    let buses = csv_file(
        &out.join("powerflow.csv"),
        &["bus", "kind", "v_pu", "angle_deg", "p_inj_mw", "q_inj_mvar"],
        case.buses.iter().enumerate().map(|(i, b)| {
            vec![
                b.id.to_string(),
                b.kind.as_str().to_string(),
                sol.v_mag[i].to_string(),
                sol.v_ang[i].to_degrees().to_string(),
                sol.p_inj[i].to_string(),
                sol.q_inj[i].to_string(),
            ]
        }),
    )?;
    let flows = csv_file(
        &out.join("flows.csv"),
        &["line_id", "from", "to", "in_service", "p_from_mw", "q_from_mvar", "p_to_mw", "q_to_mvar"],
        case.branches.iter().enumerate().map(|(k, br)| {
            vec![
                (k + 1).to_string(),
                br.from_bus.to_string(),
                br.to_bus.to_string(),
                br.in_service.to_string(),
                sol.p_from[k].to_string(),
                sol.q_from[k].to_string(),
                sol.p_to[k].to_string(),
                sol.q_to[k].to_string(),
            ]
        }),
    )?;
    Ok(vec![buses, flows])
}

fn fvsi(a: &CaseArgs, cfg: &TrainConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (case, sol) = solved_case(a, cfg, seed)?;
    if !sol.converged {
        return Err(CliError::Domain("power flow did not converge".into()));
    }
    let report = fvsi_report(&sol, &case, 0.0);
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            vec![
                e.line.to_string(),
                e.from.to_string(),
                e.to.to_string(),
                e.load_bus.to_string(),
                e.value.to_string(),
            ]
        })
        .collect();
    let header = ["line_id", "from", "to", "load_bus", "fvsi"];
    say!("{}", header.join(","));
    for r in &rows {
        say!("{}", r.join(","));
    }
    Ok(vec![csv_file(&out.join("fvsi.csv"), &header, rows)?])
}

fn load_attacker(path: &Path, cfg: &TrainConfig, seed: u64) -> Result<DdpgAgent, CliError> {
    let mut a = DdpgAgent::from_policy_text(&read(path)?, cfg.ddpg.clone(), seed)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    a.norm.frozen = true;
    Ok(a)
}

fn load_defender(path: &Path, cfg: &TrainConfig, seed: u64) -> Result<DqnAgent, CliError> {
    let mut d = DqnAgent::from_policy_text(&read(path)?, cfg.dqn.clone(), seed)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    d.norm.frozen = true;
    Ok(d)
}

/// Picks up the calibrated rate scale saved next to trained policies.
fn apply_calibration(dir: &Path, cfg: &mut TrainConfig) -> Result<(), CliError> {
    let p = dir.join(CALIBRATION_FILE);
    if !p.exists() {
        return Ok(());
    }
    let table: toml::Table = read(&p)?.parse().map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
    if let Some(v) = table.get("r_th").and_then(toml::Value::as_float) {
        cfg.game.payoff.r_th = v;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, cfg: TrainConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut game = cfg.game.clone();
    game.sim.seed = seed;
    game.sim.noise.seed = seed;
    game.sim.substep_dt = game.sim.control_dt / cfg.decimation as f64;
    game.sim.record_trace = true;
    if let Some(t) = a.attack_start {
        game.attack_start = t;
    }
    if let Some(n) = a.steps {
        game.steps = n;
    }
    if let Some(v) = a.noise_var {
        game.sim.noise.variance_mw = v;
    }
    if let Some(p) = &a.ambient {
        game.sim.ambient = AmbientProfile::from_csv(p).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let attacker = match a.attack_mode {
        AttackMode::None => {
            game.attack_enabled = false;
            AttackerPolicy::None
        }
        AttackMode::Scripted => AttackerPolicy::Scripted(a.attack_delta),
        AttackMode::Policy => {
            let p = a
                .attack_policy
                .as_ref()
                .ok_or_else(|| CliError::Usage("--attack-mode policy needs --attack-policy".into()))?;
            AttackerPolicy::Learned(Box::new(load_attacker(p, &cfg, seed)?))
        }
    };
    let defender = match a.aps.as_str() {
        "off" => {
            game.sim.protection = ProtectionMode::Off;
            DefenderPolicy::Static
        }
        "static" => DefenderPolicy::Static,
        s => match s.strip_prefix("policy:") {
            Some(p) => DefenderPolicy::Learned(Box::new(load_defender(Path::new(p), &cfg, seed)?)),
            None => return Err(CliError::Usage(format!("--aps expects off, static or policy:<path>, got {s:?}"))),
        },
    };

    let mut transitions = Vec::new();
    let sink = a.dump_transitions.then_some(&mut transitions);
    let (res, env) = run_episode(game, &attacker, &defender, sink).map_err(domain)?;
    say!(
        "steps={} blackout={} blackout_time_s={} first_trip_s={} events={}",
        res.steps,
        res.blackout,
        opt(res.blackout_time),
        opt(res.trigger_time),
        res.events.len()
    );

    let ids: Vec<usize> = env.sim.case.buses.iter().map(|b| b.id).collect();
    let mut header: Vec<String> = ["t_s", "freq_hz", "attacked_bus", "delta_t_c", "v_lower_pu", "payoff"]
        .iter()
        .map(ToString::to_string)
        .collect();
    header.extend(ids.iter().map(|i| format!("v{i}_pu")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let trace = csv_file(
        &out.join("trace.csv"),
        &header_refs,
        env.sim.trace.iter().map(|r| {
            let mut row = vec![
                r.t.to_string(),
                r.freq.to_string(),
                r.attacked_bus.to_string(),
                r.delta_t_attack.to_string(),
                r.v_lower.to_string(),
                r.payoff.to_string(),
            ];
            row.extend(r.v_mag.iter().map(ToString::to_string));
            row
        }),
    )?;
    let events = csv_file(
        &out.join("events.csv"),
        &["time_s", "kind", "bus"],
        res.events
            .iter()
            .map(|e| vec![e.time.to_string(), e.kind.as_str().to_string(), e.bus.to_string()]),
    )?;
    let mut files = vec![trace, events];
    if a.dump_transitions {
        let mut text = String::new();
        for t in &transitions {
            text.push_str(&serde_json::to_string(t).map_err(domain)?);
            text.push('\n');
        }
        let p = out.join("transitions.jsonl");
        std::fs::write(&p, text).map_err(domain)?;
        files.push(p);
    }
    Ok(files)
}

fn train_cmd(a: &TrainArgs, mut cfg: TrainConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.seed = seed;
    if let Some(n) = a.episodes {
        cfg.episodes = n;
    }
    cfg.literal_epoch_updates |= a.update_at_epoch_end;
    if a.no_curriculum {
        cfg.curriculum = false;
    }
    cfg.validate().map_err(CliError::Usage)?;
    let outcome = train(&cfg, |m| {
        say!(
            "episode={} phase={:?} attack={} blackout={} trips={} attacker_return={:.3} mean_delta_t={:.3} epsilon={:.3}",
            m.episode, m.phase, m.attack, m.blackout, m.trips, m.attacker_return, m.mean_delta_t, m.epsilon
        );
    })
    .map_err(domain)?;

    let curve = csv_file(
        &out.join("curve.csv"),
        &[
            "episode",
            "phase",
            "attack",
            "steps",
            "blackout",
            "trips",
            "attacker_return",
            "defender_return",
            "defender_shaping",
            "mean_delta_t",
            "epsilon",
        ],
        outcome.curve.iter().map(|m| {
            vec![
                m.episode.to_string(),
                serde_json::to_value(m.phase).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default(),
                m.attack.to_string(),
                m.steps.to_string(),
                m.blackout.to_string(),
                m.trips.to_string(),
                m.attacker_return.to_string(),
                m.defender_return.to_string(),
                m.defender_shaping.to_string(),
                m.mean_delta_t.to_string(),
                m.epsilon.to_string(),
            ]
        }),
    )?;
    let dir = a.save_policy.clone().unwrap_or_else(|| out.join("policy"));
    std::fs::create_dir_all(&dir).map_err(domain)?;
    let files = [
        (dir.join(ATTACKER_FILE), outcome.attacker.to_policy_text()),
        (dir.join(DEFENDER_FILE), outcome.defender.to_policy_text()),
        (dir.join(CALIBRATION_FILE), format!("r_th = {:?}\n", outcome.r_th)),
    ];
    let mut written = vec![curve];
    for (p, text) in files {
        std::fs::write(&p, text).map_err(domain)?;
        written.push(p);
    }
    say!("r_th={} policies={}", outcome.r_th, dir.display());
    Ok(written)
}

fn report_rows(name: &str, r: &EvalReport) -> Vec<Vec<String>> {
    r.episodes
        .iter()
        .map(|e| {
            vec![
                name.to_string(),
                e.index.to_string(),
                e.seed.to_string(),
                e.attack.to_string(),
                e.blackout.to_string(),
                opt(e.blackout_time),
                opt(e.trigger_time),
                opt(e.raise_time),
                e.events.len().to_string(),
                e.attacker_return.to_string(),
                e.defender_return.to_string(),
            ]
        })
        .collect()
}

fn evaluate_cmd(a: &EvaluateArgs, mut cfg: TrainConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    apply_calibration(&a.load_policy, &mut cfg)?;
    let att = AttackerPolicy::Learned(Box::new(load_attacker(&a.load_policy.join(ATTACKER_FILE), &cfg, seed)?));
    let learned = DefenderPolicy::Learned(Box::new(load_defender(&a.load_policy.join(DEFENDER_FILE), &cfg, seed)?));
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (name, def) in [("static", DefenderPolicy::Static), ("learned", learned)] {
        let r = evaluate(&cfg, &att, &def, a.attack_episodes, a.clean_episodes, seed).map_err(domain)?;
        say!(
            "defender={name} blackouts={}/{} spurious={}/{} mean_time_to_trip_s={}",
            r.blackouts,
            r.attack_episodes,
            r.spurious,
            r.clean_episodes,
            opt(r.mean_time_to_trip)
        );
        rows.extend(report_rows(name, &r));
        summary.push(vec![
            name.to_string(),
            r.attack_episodes.to_string(),
            r.blackouts.to_string(),
            r.clean_episodes.to_string(),
            r.spurious.to_string(),
            opt(r.mean_time_to_trip),
        ]);
    }
    let eval = csv_file(
        &out.join("eval.csv"),
        &[
            "defender",
            "index",
            "seed",
            "attack",
            "blackout",
            "blackout_time_s",
            "trigger_time_s",
            "raise_time_s",
            "events",
            "attacker_return",
            "defender_return",
        ],
        rows,
    )?;
    let sum = csv_file(
        &out.join("summary.csv"),
        &["defender", "attack_episodes", "blackouts", "clean_episodes", "spurious", "mean_time_to_trip_s"],
        summary,
    )?;
    Ok(vec![eval, sum])
}

fn fpr_cmd(a: &FprArgs, mut cfg: TrainConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if a.variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(CliError::Usage("variances must be finite and non-negative".into()));
    }
    let (att, def) = match &a.load_policy {
        Some(dir) => {
            apply_calibration(dir, &mut cfg)?;
            (
                AttackerPolicy::Learned(Box::new(load_attacker(&dir.join(ATTACKER_FILE), &cfg, seed)?)),
                DefenderPolicy::Learned(Box::new(load_defender(&dir.join(DEFENDER_FILE), &cfg, seed)?)),
            )
        }
        None => (AttackerPolicy::Scripted(a.attack_delta), DefenderPolicy::Static),
    };
    let start = a.attack_start.unwrap_or(cfg.game.attack_start);
    let table = fpr_sweep(&cfg, &att, &def, &a.variances, a.runs, start, seed).map_err(domain)?;
    say!(
        "premature={}/{} fpr={:.4} premature_variances={:?}",
        table.premature.len(),
        a.variances.len(),
        table.fpr,
        table.premature
    );
    let rows = table.rows.iter().map(|r| {
        vec![
            r.variance_mw.to_string(),
            r.run.to_string(),
            opt(r.trigger_time),
            r.blackout.to_string(),
            r.trigger_time.is_some_and(|t| t < start).to_string(),
        ]
    });
    Ok(vec![csv_file(
        &out.join("fpr.csv"),
        &["variance_mw", "run", "trigger_time_s", "blackout", "premature"],
        rows,
    )?])
}
