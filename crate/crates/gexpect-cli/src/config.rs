//! Configuration layering and report plumbing.
//!
//! Values resolve in four layers — built-in defaults, then the TOML config
//! file, then the config embedded in a `--from-report` file, then explicit
//! flags — and `GEXPECT_SEED` beats every seed source. The fully resolved
//! configuration is embedded in each report, so a report is a runnable
//! artifact: feeding it back via `--from-report` replays the run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gexpect::rng::NORMAL_SCHEME;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::GlobalArgs;

/// CLI-level failure, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// The request itself is malformed: flags, config file, CSV schema.
    Usage(String),
    /// The computation could not deliver: tolerance, convergence,
    /// integrability, or a violated mathematical precondition.
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Numeric(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gexpect::Error> for CliError {
    fn from(err: gexpect::Error) -> Self {
        use gexpect::Error::*;
        match err {
            InvalidArgument(_)
            | OffGridTime { .. }
            | UnsupportedGenerator(_)
            | GridTooCoarse(_) => CliError::Usage(err.to_string()),
            _ => CliError::Numeric(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Usage(err.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(err: csv::Error) -> Self {
        CliError::Usage(format!("csv: {err}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// The fully resolved run parameters, embedded verbatim in every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub seed: u64,
    pub tol: f64,
    pub horizon: f64,
    pub grid_steps: usize,
    pub mc_samples: usize,
    pub threads: usize,
    /// Command-specific parameters, as their original spec strings.
    pub params: BTreeMap<String, String>,
}

/// The `[run]` and `[params]` sections of a TOML config file; every field
/// optional so files state only what they mean to override.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    run: FileRun,
    #[serde(default)]
    params: BTreeMap<String, toml::Value>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileRun {
    seed: Option<u64>,
    tol: Option<f64>,
    horizon: Option<f64>,
    grid_steps: Option<usize>,
    mc_samples: Option<usize>,
    threads: Option<usize>,
}

fn toml_param_string(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Builds the resolved configuration for one subcommand.
///
/// `defaults` carries per-command defaults (e.g. the stopping tolerance
/// differs between solve and decompose); `flag_params` the command-specific
/// flags that were explicitly passed.
pub fn resolve(
    globals: &GlobalArgs,
    command: &str,
    default_tol: f64,
    flag_params: BTreeMap<String, String>,
) -> CliResult<ResolvedConfig> {
    let mut cfg = ResolvedConfig {
        command: command.to_string(),
        seed: gexpect::DEFAULT_SEED,
        tol: default_tol,
        horizon: 1.0,
        grid_steps: 64,
        mc_samples: 100_000,
        threads: 0,
        params: BTreeMap::new(),
    };

    if let Some(path) = &globals.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        apply_option(&mut cfg.seed, file.run.seed);
        apply_option(&mut cfg.tol, file.run.tol);
        apply_option(&mut cfg.horizon, file.run.horizon);
        apply_option(&mut cfg.grid_steps, file.run.grid_steps);
        apply_option(&mut cfg.mc_samples, file.run.mc_samples);
        apply_option(&mut cfg.threads, file.run.threads);
        for (k, v) in &file.params {
            cfg.params.insert(k.clone(), toml_param_string(v));
        }
    }

    if let Some(path) = &globals.from_report {
        let embedded = load_embedded_config(path)?;
        if embedded.command != command {
            return Err(CliError::usage(format!(
                "{} embeds a '{}' run; re-run it with that subcommand",
                path.display(),
                embedded.command
            )));
        }
        cfg.seed = embedded.seed;
        cfg.tol = embedded.tol;
        cfg.horizon = embedded.horizon;
        cfg.grid_steps = embedded.grid_steps;
        cfg.mc_samples = embedded.mc_samples;
        cfg.threads = embedded.threads;
        cfg.params = embedded.params;
    }

    apply_option(&mut cfg.tol, globals.tol);
    apply_option(&mut cfg.horizon, globals.horizon);
    apply_option(&mut cfg.grid_steps, globals.grid_steps);
    apply_option(&mut cfg.mc_samples, globals.mc_samples);
    apply_option(&mut cfg.threads, globals.threads);
    for (k, v) in flag_params {
        cfg.params.insert(k, v);
    }

    // Seed precedence: environment, explicit flag, embedded/file, default.
    let configured = globals.seed.or(Some(cfg.seed));
    cfg.seed = gexpect::resolve_seed(configured)?;

    if !(cfg.tol > 0.0 && cfg.tol.is_finite()) {
        return Err(CliError::usage(format!(
            "tolerance must be positive, got {}",
            cfg.tol
        )));
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        return Err(CliError::usage(format!(
            "horizon must be positive, got {}",
            cfg.horizon
        )));
    }
    if cfg.grid_steps < 2 {
        return Err(CliError::usage("grid-steps must be at least 2"));
    }
    Ok(cfg)
}

fn apply_option<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_embedded_config(path: &Path) -> CliResult<ResolvedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let report: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: not a report: {e}", path.display())))?;
    let config = report
        .get("config")
        .ok_or_else(|| CliError::usage(format!("{}: no embedded config", path.display())))?;
    serde_json::from_value(config.clone())
        .map_err(|e| CliError::usage(format!("{}: embedded config: {e}", path.display())))
}

impl ResolvedConfig {
    /// Fetches a command parameter, parsed from its spec string.
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn require_param(&self, key: &str) -> CliResult<&str> {
        self.param(key)
            .ok_or_else(|| CliError::usage(format!("missing required parameter --{key}")))
    }

    pub fn param_flag(&self, key: &str) -> bool {
        matches!(self.param(key), Some("true"))
    }
}

/// Assembles and emits the final report. `results` must depend only on the
/// resolved config — timings are recorded outside it, so two runs of the
/// same config produce byte-identical `config` and `results` subtrees.
pub fn emit_report(
    globals: &GlobalArgs,
    config: &ResolvedConfig,
    results: serde_json::Value,
    timings_ms: BTreeMap<String, f64>,
) -> CliResult<()> {
    let report = json!({
        "tool": {
            "name": "gexpect",
            "version": gexpect::VERSION,
            "normal_scheme": NORMAL_SCHEME,
        },
        "config": config,
        "results": results,
        "timings_ms": timings_ms,
    });
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Numeric(format!("report serialization: {e}")))?;
    match &globals.output {
        Some(path) => {
            std::fs::write(path, text + "\n")
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            if !globals.quiet {
                eprintln!("report written to {}", path.display());
            }
        }
        None => println!("{text}"),
    }
    Ok(())
}

/// Reads a whole file for spec strings of the form `csv:<path>`.
pub fn read_spec_file(path: &str) -> CliResult<String> {
    std::fs::read_to_string(PathBuf::from(path))
        .map_err(|e| CliError::usage(format!("{path}: {e}")))
}
