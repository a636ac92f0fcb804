//! Flat `key = value` experiment files.
//!
//! One key per line, `#` starts a comment, keys are the field names of
//! `ExperimentConfig`. Keys left out keep the regression-table defaults.

use std::fmt;
use std::fs;
use std::path::Path;

use afl_core::delay::{DelayMode, ScheduleKind};
use afl_core::model::ModelTag;
use afl_core::orchestrator::{ExperimentConfig, Mode};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.field {
            write!(f, "field `{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, field: Option<&str>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        field: field.map(str::to_owned),
        message: message.into(),
    }
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("expected {what}, got `{value}`"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}

fn parse_optional<T: std::str::FromStr>(value: &str, what: &str) -> Result<Option<T>, String> {
    match value {
        "none" | "" => Ok(None),
        v => parse(v, what).map(Some),
    }
}

/// Sets one field from its textual value.
pub fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "clients" => cfg.clients = parse(value, "a count")?,
        "rounds" => cfg.rounds = parse(value, "a count")?,
        "local_epochs" => cfg.local_epochs = parse(value, "a count")?,
        "gamma0" => cfg.gamma0 = parse(value, "a number")?,
        "alpha" => cfg.alpha = parse(value, "a number")?,
        "lr_schedule" => {
            cfg.lr_schedule = match value {
                "adaptive" => ScheduleKind::Adaptive,
                "constant" => ScheduleKind::Constant,
                _ => return Err(format!("expected adaptive or constant, got `{value}`")),
            }
        }
        "batch" => cfg.batch = parse(value, "a count")?,
        "d" => cfg.d = parse(value, "a count")?,
        "n" => cfg.n = parse(value, "a count")?,
        "fraction" => cfg.fraction = parse(value, "a number")?,
        "tau_max" => cfg.tau_max = parse(value, "a count")?,
        "zeta" => cfg.zeta = parse(value, "a number")?,
        "model" => {
            cfg.model = match value {
                "regression" => ModelTag::Regression,
                "svm" => ModelTag::Svm,
                _ => return Err(format!("expected regression or svm, got `{value}`")),
            }
        }
        "l2_mu" => cfg.l2_mu = parse(value, "a number")?,
        "delay_mode" => {
            cfg.delay_mode = match value {
                "simulated" => DelayMode::Simulated,
                "wallclock" => DelayMode::Wallclock,
                _ => return Err(format!("expected simulated or wallclock, got `{value}`")),
            }
        }
        "delay_base_mean" => cfg.delay_base_mean = parse(value, "a number")?,
        "delay_jitter" => cfg.delay_jitter = parse(value, "a number")?,
        "seed" => cfg.seed = parse(value, "an unsigned integer")?,
        "data_seed" => cfg.data_seed = parse_optional(value, "an unsigned integer or none")?,
        "mode" => cfg.mode = parse_mode(value)?,
        "min_per_client" => cfg.min_per_client = parse_optional(value, "a count or none")?,
        "powers" => {
            cfg.powers = match value {
                "none" | "" => None,
                list => Some(
                    list.split(',')
                        .map(|w| parse(w.trim(), "a comma-separated list of watts"))
                        .collect::<Result<_, _>>()?,
                ),
            }
        }
        "record_iterates" => cfg.record_iterates = parse_bool(value)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

pub fn parse_mode(value: &str) -> Result<Mode, String> {
    match value {
        "afl" => Ok(Mode::Afl),
        "sync" => Ok(Mode::Sync),
        _ => Err(format!("expected afl or sync, got `{value}`")),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::regression_table();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(Some(line), None, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_owned()) {
            return Err(err(Some(line), Some(key), "duplicate key"));
        }
        apply(&mut cfg, key, value).map_err(|m| err(Some(line), Some(key), m))?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| err(None, None, format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Applies `key=value` overrides given on the command line.
pub fn apply_overrides(cfg: &mut ExperimentConfig, overrides: &[String]) -> Result<(), ConfigError> {
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| err(None, None, format!("override `{o}` is not key=value")))?;
        apply(cfg, key.trim(), value.trim()).map_err(|m| err(None, Some(key.trim()), m))?;
    }
    Ok(())
}

/// Canonical text form; every field on its own line in a fixed order.
pub fn to_text(cfg: &ExperimentConfig) -> String {
    let opt = |v: Option<u64>| v.map_or("none".to_owned(), |x| x.to_string());
    let fields: Vec<(&str, String)> = vec![
        ("clients", cfg.clients.to_string()),
        ("rounds", cfg.rounds.to_string()),
        ("local_epochs", cfg.local_epochs.to_string()),
        ("gamma0", format!("{:?}", cfg.gamma0)),
        ("alpha", format!("{:?}", cfg.alpha)),
        (
            "lr_schedule",
            match cfg.lr_schedule {
                ScheduleKind::Adaptive => "adaptive",
                ScheduleKind::Constant => "constant",
            }
            .into(),
        ),
        ("batch", cfg.batch.to_string()),
        ("d", cfg.d.to_string()),
        ("n", cfg.n.to_string()),
        ("fraction", format!("{:?}", cfg.fraction)),
        ("tau_max", cfg.tau_max.to_string()),
        ("zeta", format!("{:?}", cfg.zeta)),
        (
            "model",
            match cfg.model {
                ModelTag::Regression => "regression",
                ModelTag::Svm => "svm",
            }
            .into(),
        ),
        ("l2_mu", format!("{:?}", cfg.l2_mu)),
        (
            "delay_mode",
            match cfg.delay_mode {
                DelayMode::Simulated => "simulated",
                DelayMode::Wallclock => "wallclock",
            }
            .into(),
        ),
        ("delay_base_mean", format!("{:?}", cfg.delay_base_mean)),
        ("delay_jitter", format!("{:?}", cfg.delay_jitter)),
        ("seed", cfg.seed.to_string()),
        ("data_seed", opt(cfg.data_seed)),
        (
            "mode",
            match cfg.mode {
                Mode::Afl => "afl",
                Mode::Sync => "sync",
            }
            .into(),
        ),
        ("min_per_client", opt(cfg.min_per_client.map(|v| v as u64))),
        (
            "powers",
            cfg.powers.as_ref().map_or("none".to_owned(), |p| {
                p.iter().map(|w| format!("{w:?}")).collect::<Vec<_>>().join(",")
            }),
        ),
        ("record_iterates", cfg.record_iterates.to_string()),
    ];
    fields.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
