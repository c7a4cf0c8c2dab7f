//! Flat key=value run configuration with typed validation.
//!
//! Unknown keys are rejected; command-line flags override file values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

/// Raw values read from a config file; every field optional so CLI flags can
/// fill or override.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<String>,
    pub alpha: Option<f64>,
    pub partition: Option<String>,
    pub n: Option<String>,
    pub t_len: Option<usize>,
    pub reps: Option<usize>,
    pub errors: Option<String>,
    pub misspec: Option<String>,
    pub calibrate_missingness: Option<bool>,
    pub redraw_q: Option<bool>,
    pub estimators: Option<String>,
    pub drop_outcome: Option<String>,
    pub drop_propensity: Option<String>,
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "out_dir",
    "alpha",
    "partition",
    "n",
    "t_len",
    "reps",
    "errors",
    "misspec",
    "calibrate_missingness",
    "redraw_q",
    "estimators",
    "drop_outcome",
    "drop_propensity",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError> {
    value.parse().map_err(|_| {
        CliError::input(format!("config line {line}: invalid value {value:?} for key {key:?}"))
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::input(format!(
            "config line {line}: invalid boolean {value:?} for key {key:?}"
        ))),
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = FileConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::input(format!("config line {lineno}: expected key=value, got {line:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::input(format!(
                    "config line {lineno}: unknown key {key:?} (known keys: {})",
                    KNOWN_KEYS.join(", ")
                )));
            }
            if let Some(prev) = seen.insert(key.to_string(), lineno) {
                return Err(CliError::input(format!(
                    "config line {lineno}: key {key:?} already set on line {prev}"
                )));
            }
            match key {
                "seed" => cfg.seed = Some(parse(key, value, lineno)?),
                "threads" => cfg.threads = Some(parse(key, value, lineno)?),
                "out_dir" => cfg.out_dir = Some(value.to_string()),
                "alpha" => cfg.alpha = Some(parse(key, value, lineno)?),
                "partition" => cfg.partition = Some(value.to_string()),
                "n" => cfg.n = Some(value.to_string()),
                "t_len" => cfg.t_len = Some(parse(key, value, lineno)?),
                "reps" => cfg.reps = Some(parse(key, value, lineno)?),
                "errors" => cfg.errors = Some(value.to_string()),
                "misspec" => cfg.misspec = Some(value.to_string()),
                "calibrate_missingness" => {
                    cfg.calibrate_missingness = Some(parse_bool(key, value, lineno)?)
                }
                "redraw_q" => cfg.redraw_q = Some(parse_bool(key, value, lineno)?),
                "estimators" => cfg.estimators = Some(value.to_string()),
                "drop_outcome" => cfg.drop_outcome = Some(value.to_string()),
                "drop_propensity" => cfg.drop_propensity = Some(value.to_string()),
                _ => unreachable!("key list checked above"),
            }
        }
        Ok(cfg)
    }
}

/// Comma-separated breakpoint list like "0,0.25,0.5,1".
pub fn parse_partition(text: &str) -> Result<fnmiss_core::Partition, CliError> {
    let breaks: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::input(format!("invalid partition breakpoint {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    fnmiss_core::Partition::from_breakpoints(&breaks)
        .map_err(|e| CliError::input(format!("invalid partition: {e}")))
}

/// Comma-separated list of sample sizes.
pub fn parse_n_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::input(format!("invalid sample size {s:?}")))
        })
        .collect()
}

/// Comma-separated zero-based column indices; empty string means none.
pub fn parse_drop_list(text: &str) -> Result<Vec<usize>, CliError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::input(format!("invalid column index {s:?}")))
        })
        .collect()
}
