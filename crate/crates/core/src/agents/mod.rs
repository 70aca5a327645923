//! Hand-written networks and the two learners: a DDPG attacker and a DQN defender.

pub mod ddpg;
pub mod dqn;
pub mod mlp;
pub mod normalizer;
pub mod replay;

use std::fmt::Write as _;

pub use ddpg::{DdpgAgent, DdpgConfig};
pub use dqn::{argmax, DqnAgent, DqnConfig};
pub use mlp::{Adam, Mlp};
pub use normalizer::Normalizer;
pub use replay::ReplayBuffer;

const POLICY_MAGIC: &str = "gridgame-policy 1";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AgentError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("policy line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("expected a {expected} policy, found {found}")]
    WrongKind { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<A> {
    pub obs: Vec<f64>,
    pub action: A,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

/// Text dump: a header, the normalizer, then each network as
/// `net <name> <sizes...>` followed by one line of parameters.
fn write_policy(kind: &str, extra: &[(&str, f64)], norm: &Normalizer, nets: &[(&str, &Mlp)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{POLICY_MAGIC}");
    let _ = writeln!(out, "kind {kind}");
    for (k, v) in extra {
        let _ = writeln!(out, "{k} {v:?}");
    }
    let _ = writeln!(out, "norm_count {:?}", norm.count);
    let _ = writeln!(out, "norm_mean {}", join(&norm.mean));
    let _ = writeln!(out, "norm_m2 {}", join(&norm.m2));
    for (name, net) in nets {
        let sizes: Vec<String> = net.sizes().iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "net {name} {}", sizes.join(" "));
        let _ = writeln!(out, "{}", join(&net.params));
    }
    out
}

struct ParsedPolicy {
    kind: String,
    scalars: Vec<(String, f64)>,
    norm: Normalizer,
    nets: Vec<(String, Mlp)>,
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>, AgentError> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| AgentError::Format {
                line,
                msg: format!("bad number {t:?}"),
            })
        })
        .collect()
}

fn parse_policy(text: &str) -> Result<ParsedPolicy, AgentError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let bad = |line, msg: &str| AgentError::Format {
        line,
        msg: msg.to_string(),
    };
    match lines.next() {
        Some((_, POLICY_MAGIC)) => {}
        _ => return Err(bad(1, "missing policy header")),
    }
    let mut kind = None;
    let mut scalars = Vec::new();
    let (mut count, mut mean, mut m2) = (0.0, Vec::new(), Vec::new());
    let mut nets = Vec::new();
    while let Some((n, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "kind" => kind = Some(rest.to_string()),
            "norm_count" => count = parse_floats(rest, n)?.first().copied().ok_or_else(|| bad(n, "empty count"))?,
            "norm_mean" => mean = parse_floats(rest, n)?,
            "norm_m2" => m2 = parse_floats(rest, n)?,
            "net" => {
                let mut it = rest.split_whitespace();
                let name = it.next().ok_or_else(|| bad(n, "unnamed network"))?.to_string();
                let sizes = it
                    .map(|t| t.parse::<usize>().map_err(|_| bad(n, "bad layer size")))
                    .collect::<Result<Vec<_>, _>>()?;
                let (pn, params) = lines.next().ok_or_else(|| bad(n + 1, "missing parameters"))?;
                let net = Mlp::from_parts(sizes, parse_floats(params, pn)?).map_err(|e| bad(pn, &e.to_string()))?;
                nets.push((name, net));
            }
            _ => {
                let v = parse_floats(rest, n)?;
                if v.len() != 1 {
                    return Err(bad(n, "expected one value"));
                }
                scalars.push((key.to_string(), v[0]));
            }
        }
    }
    if mean.len() != m2.len() {
        return Err(bad(0, "normalizer fields differ in length"));
    }
    Ok(ParsedPolicy {
        kind: kind.ok_or_else(|| bad(2, "missing kind"))?,
        scalars,
        norm: Normalizer {
            count,
            mean,
            m2,
            frozen: false,
        },
        nets,
    })
}

impl ParsedPolicy {
    fn expect_kind(&self, kind: &str) -> Result<(), AgentError> {
        if self.kind != kind {
            return Err(AgentError::WrongKind {
                expected: kind.into(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    fn take_net(&mut self, name: &str) -> Result<Mlp, AgentError> {
        let k = self.nets.iter().position(|(n, _)| n == name).ok_or_else(|| AgentError::Format {
            line: 0,
            msg: format!("missing network {name}"),
        })?;
        Ok(self.nets.remove(k).1)
    }

    fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

fn check_norm(norm: &Normalizer, obs_dim: usize) -> Result<(), AgentError> {
    if norm.mean.len() != obs_dim {
        return Err(AgentError::Shape(format!(
            "normalizer has {} channels, network expects {obs_dim}",
            norm.mean.len()
        )));
    }
    Ok(())
}

impl DdpgAgent {
    pub fn to_policy_text(&self) -> String {
        write_policy(
            "ddpg",
            &[("delta_t_max", self.cfg.delta_t_max)],
            &self.norm,
            &[("actor", &self.actor), ("critic", &self.critic)],
        )
    }

    pub fn from_policy_text(text: &str, mut cfg: DdpgConfig, seed: u64) -> Result<Self, AgentError> {
        let mut p = parse_policy(text)?;
        p.expect_kind("ddpg")?;
        if let Some(d) = p.scalar("delta_t_max") {
            cfg.delta_t_max = d;
        }
        let actor = p.take_net("actor")?;
        let critic = p.take_net("critic")?;
        if actor.n_outputs() != 1 || critic.n_inputs() != actor.n_inputs() + 1 || critic.n_outputs() != 1 {
            return Err(AgentError::Shape("actor and critic do not fit together".into()));
        }
        check_norm(&p.norm, actor.n_inputs())?;
        Ok(Self::from_nets(cfg, actor, critic, p.norm, seed))
    }
}

impl DqnAgent {
    pub fn to_policy_text(&self) -> String {
        write_policy("dqn", &[], &self.norm, &[("q", &self.q)])
    }

    pub fn from_policy_text(text: &str, cfg: DqnConfig, seed: u64) -> Result<Self, AgentError> {
        let mut p = parse_policy(text)?;
        p.expect_kind("dqn")?;
        let q = p.take_net("q")?;
        check_norm(&p.norm, q.n_inputs())?;
        Ok(Self::from_net(cfg, q, p.norm, seed))
    }
}
