//! Run configuration: a TOML file with `[model]`, `[ponder]`, `[train]`,
//! `[optimizer]`, and `[data]` sections (plus optional `[output]` and
//! `[eval]`), refined by dotted-key command-line overrides such as
//! `--override ponder.max_steps=3`. Unknown sections or keys are errors,
//! reported with their full key path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ponder_core::config::{ModelConfig, PonderSettings};
use ponder_core::optimizer::OptimizerConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub ponder: PonderSettings,
    pub train: TrainSection,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub window_len: usize,
    pub total_steps: usize,
    /// Steps between periodic held-out evaluations.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_held_out_fraction")]
    pub held_out_fraction: f64,
}

fn default_eval_interval() -> usize {
    50
}

fn default_held_out_fraction() -> f64 {
    0.05
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Periodic evaluation during training: which modes to run and how many
/// held-out windows to spend on each.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub modes: Vec<String>,
    pub max_windows: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { modes: vec!["adaptive".into()], max_windows: 32 }
    }
}

impl RunConfig {
    /// The corpus location, which every training run must name.
    pub fn data_path(&self) -> CliResult<&Path> {
        self.data
            .path
            .as_deref()
            .ok_or_else(|| CliError::config("data.path is required (set `path` under `[data]`)"))
    }
}

/// Known keys per section; overrides and config files are checked against
/// this so typos fail with the offending key path instead of being ignored.
const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "vocab_size",
            "d_model",
            "n_layers",
            "n_heads",
            "d_head",
            "d_ff",
            "max_position",
            "rope_base",
            "distinct_latent_positions",
            "router_post_norm",
            "attention",
            "norm_eps",
            "seed",
        ],
    ),
    ("ponder", &["max_steps", "tau", "lambda", "jacobi_iters", "mode", "latent_init"]),
    (
        "train",
        &["batch_size", "window_len", "total_steps", "eval_interval", "seed", "held_out_fraction"],
    ),
    (
        "optimizer",
        &["lr", "beta1", "beta2", "eps", "weight_decay", "warmup_steps", "grad_clip", "final_lr_fraction"],
    ),
    ("data", &["path"]),
    ("output", &["dir"]),
    ("eval", &["modes", "max_windows"]),
];

fn check_known_keys(root: &toml::Value) -> CliResult<()> {
    let table = root
        .as_table()
        .ok_or_else(|| CliError::config("the configuration root must be a table"))?;
    for (section, value) in table {
        let Some((_, keys)) = KNOWN_KEYS.iter().find(|(name, _)| name == section) else {
            return Err(CliError::config(format!("unknown configuration section '{section}'")));
        };
        let sub = value
            .as_table()
            .ok_or_else(|| CliError::config(format!("'{section}' must be a table of keys")))?;
        for key in sub.keys() {
            if !keys.contains(&key.as_str()) {
                return Err(CliError::config(format!(
                    "unknown configuration key '{section}.{key}'"
                )));
            }
        }
    }
    Ok(())
}

/// Parses the right-hand side of an override as a TOML literal, falling
/// back to a bare string (`ponder.mode=fixed-step` works unquoted).
fn parse_toml_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    if let Ok(table) = wrapped.parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(root: &mut toml::Value, spec: &str) -> CliResult<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        return Err(CliError::usage(format!(
            "override '{spec}' must look like section.key=value"
        )));
    };
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!(
            "override key '{key}' must be a dotted path like ponder.max_steps"
        )));
    }
    let value = parse_toml_literal(raw.trim());
    let mut cursor = root;
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override '{key}': '{part}' is not a table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| CliError::config(format!("override '{key}' does not name a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads, overrides, checks, and deserializes a run configuration. Returns
/// the typed configuration together with the resolved TOML snapshot that
/// goes into the manifest.
pub fn load_run_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> CliResult<(RunConfig, toml::Value)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    let mut root: toml::Value = text
        .parse()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    for spec in overrides {
        apply_override(&mut root, spec)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut root, &format!("train.seed={seed}"))?;
    }
    check_known_keys(&root)?;
    let config: RunConfig = root
        .clone()
        .try_into()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    config.model.validate()?;
    config.ponder.validate()?;
    Ok((config, root))
}
