//! Run manifests: enough to replay any invocation byte for byte.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::{run, CliError, Command};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A fully resolved invocation. The config text already folds in the
/// config file and any environment overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Invocation {
    pub command: Command,
    pub seed: u64,
    pub config: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config_sha256: String,
    pub invocation: Invocation,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Write through a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::Domain(format!("write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Domain(format!("rename {}: {e}", path.display())))
}

pub fn execute(inv: &Invocation, out_dir: &Path) -> Result<(), CliError> {
    let mut settings = Settings::default();
    settings.apply_toml(&inv.config).map_err(CliError::Usage)?;
    let cfg = settings.resolve().map_err(CliError::Usage)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Domain(format!("create {}: {e}", out_dir.display())))?;
    let started = now();
    let written: Vec<PathBuf> = run::dispatch(&inv.command, cfg, inv.seed, out_dir)?;
    let mut outputs = Vec::new();
    for p in written {
        let bytes = std::fs::read(&p).map_err(|e| CliError::Domain(format!("read {}: {e}", p.display())))?;
        let rel = p.strip_prefix(out_dir).unwrap_or(&p);
        outputs.push(OutputFile {
            path: rel.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
    }
    let m = RunManifest {
        subcommand: inv.command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha256_hex(inv.config.as_bytes()),
        invocation: inv.clone(),
        started_unix_s: started,
        finished_unix_s: now(),
        outputs,
    };
    let json = serde_json::to_string_pretty(&m).map_err(crate::domain)?;
    write_atomic(&out_dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn replay(manifest: &Path, out_dir: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad manifest: {e}")))?;
    if matches!(m.invocation.command, Command::Replay { .. }) {
        return Err(CliError::Usage("a manifest cannot replay a replay".into()));
    }
    execute(&m.invocation, out_dir)
}
