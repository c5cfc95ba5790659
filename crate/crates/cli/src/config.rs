//! Flat key=value run configuration. Parsing rejects unknown keys by line
//! number instead of silently ignoring typos, and `dump` emits a canonical
//! form that a second parse-and-dump reproduces byte for byte.

use std::env;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use boolgan::training::{LossKind, ModelKind, OptimizerKind, TrainConfig};

/// Every accepted key, in canonical dump order. The embedder settings appear
/// as two scalar keys rather than a nested section.
pub const KEYS: [&str; 25] = [
    "model",
    "loss",
    "dropout_p",
    "lr_g",
    "lr_d",
    "beta1",
    "beta2",
    "optimizer",
    "rho",
    "clip_c",
    "clip_bn",
    "n_critic",
    "batch_size",
    "epochs",
    "z_dim",
    "base_width",
    "seed",
    "fid_every_n_iters",
    "fid_sample_count",
    "lr_halve_every_epochs",
    "data_dir",
    "out_dir",
    "drop_last",
    "embedder_seed",
    "embedder_dim",
];

/// A config-layer failure: bad file, bad line, bad override. Always a usage
/// error (exit 2), never a runtime one.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, at: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| {
        ConfigError(format!("{at}: invalid value {value:?} for key {key:?}"))
    })
}

/// Applies one key=value pair. `at` names the source for error messages,
/// either "config line N" or "override \"...\"".
fn apply(cfg: &mut TrainConfig, key: &str, value: &str, at: &str) -> Result<(), ConfigError> {
    match key {
        "model" => {
            cfg.model = ModelKind::parse(value).map_err(|e| ConfigError(format!("{at}: {e}")))?
        }
        "loss" => {
            cfg.loss = LossKind::parse(value).map_err(|e| ConfigError(format!("{at}: {e}")))?
        }
        "dropout_p" => cfg.dropout_p = parse_num(key, value, at)?,
        "lr_g" => cfg.lr_g = parse_num(key, value, at)?,
        "lr_d" => cfg.lr_d = parse_num(key, value, at)?,
        "beta1" => cfg.beta1 = parse_num(key, value, at)?,
        "beta2" => cfg.beta2 = parse_num(key, value, at)?,
        "optimizer" => {
            cfg.optimizer =
                OptimizerKind::parse(value).map_err(|e| ConfigError(format!("{at}: {e}")))?
        }
        "rho" => cfg.rho = parse_num(key, value, at)?,
        "clip_c" => cfg.clip_c = parse_num(key, value, at)?,
        "clip_bn" => cfg.clip_bn = parse_num(key, value, at)?,
        "n_critic" => cfg.n_critic = parse_num(key, value, at)?,
        "batch_size" => cfg.batch_size = parse_num(key, value, at)?,
        "epochs" => cfg.epochs = parse_num(key, value, at)?,
        "z_dim" => cfg.z_dim = parse_num(key, value, at)?,
        "base_width" => cfg.base_width = parse_num(key, value, at)?,
        "seed" => cfg.seed = parse_num(key, value, at)?,
        "fid_every_n_iters" => cfg.fid_every_n_iters = parse_num(key, value, at)?,
        "fid_sample_count" => cfg.fid_sample_count = parse_num(key, value, at)?,
        "lr_halve_every_epochs" => cfg.lr_halve_every_epochs = parse_num(key, value, at)?,
        "data_dir" => cfg.data_dir = PathBuf::from(value),
        "out_dir" => cfg.out_dir = PathBuf::from(value),
        "drop_last" => cfg.drop_last = parse_num(key, value, at)?,
        "embedder_seed" => cfg.embedder.seed = parse_num(key, value, at)?,
        "embedder_dim" => cfg.embedder.output_dim = parse_num(key, value, at)?,
        other => return Err(ConfigError(format!("{at}: unknown key {other:?}"))),
    }
    Ok(())
}

/// Splits "key = value" (or "key=value") and applies it. Returns the key.
fn apply_pair<'a>(
    cfg: &mut TrainConfig,
    pair: &'a str,
    at: &str,
) -> Result<&'a str, ConfigError> {
    let (key, value) = pair.split_once('=').ok_or_else(|| {
        ConfigError(format!("{at}: expected key=value, got {pair:?}"))
    })?;
    let key = key.trim();
    apply(cfg, key, value.trim(), at)?;
    Ok(key)
}

/// Parses a whole config file into `cfg`. Lines are key=value; blank lines
/// and lines starting with '#' are skipped. Returns whether out_dir was set.
fn parse_text(cfg: &mut TrainConfig, text: &str) -> Result<bool, ConfigError> {
    let mut out_dir_set = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = format!("config line {}", idx + 1);
        if apply_pair(cfg, line, &at)? == "out_dir" {
            out_dir_set = true;
        }
    }
    Ok(out_dir_set)
}

/// Resolves the full configuration: documented defaults, then the config
/// file, then the BOOLGAN_OUT_DIR fallback for an unset out_dir, then --set
/// overrides (which win over everything).
pub fn load(config_path: Option<&Path>, sets: &[String]) -> Result<TrainConfig, ConfigError> {
    let mut cfg = TrainConfig::default();
    let mut out_dir_set = false;
    if let Some(path) = config_path {
        let text = fs::read_to_string(path).map_err(|e| {
            ConfigError(format!("cannot read config {}: {e}", path.display()))
        })?;
        out_dir_set = parse_text(&mut cfg, &text)?;
    }
    if !out_dir_set {
        if let Ok(dir) = env::var("BOOLGAN_OUT_DIR") {
            cfg.out_dir = PathBuf::from(dir);
        }
    }
    for pair in sets {
        let at = format!("override {pair:?}");
        apply_pair(&mut cfg, pair, &at)?;
    }
    Ok(cfg)
}

/// Canonical text form: every key once, in KEYS order. Floats print in
/// shortest round-trip form, so dump(parse(dump(c))) == dump(c).
pub fn dump(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    for key in KEYS {
        let value = match key {
            "model" => cfg.model.name().to_string(),
            "loss" => cfg.loss.name().to_string(),
            "dropout_p" => format!("{:?}", cfg.dropout_p),
            "lr_g" => format!("{:?}", cfg.lr_g),
            "lr_d" => format!("{:?}", cfg.lr_d),
            "beta1" => format!("{:?}", cfg.beta1),
            "beta2" => format!("{:?}", cfg.beta2),
            "optimizer" => cfg.optimizer.name().to_string(),
            "rho" => format!("{:?}", cfg.rho),
            "clip_c" => format!("{:?}", cfg.clip_c),
            "clip_bn" => cfg.clip_bn.to_string(),
            "n_critic" => cfg.n_critic.to_string(),
            "batch_size" => cfg.batch_size.to_string(),
            "epochs" => cfg.epochs.to_string(),
            "z_dim" => cfg.z_dim.to_string(),
            "base_width" => cfg.base_width.to_string(),
            "seed" => cfg.seed.to_string(),
            "fid_every_n_iters" => cfg.fid_every_n_iters.to_string(),
            "fid_sample_count" => cfg.fid_sample_count.to_string(),
            "lr_halve_every_epochs" => cfg.lr_halve_every_epochs.to_string(),
            "data_dir" => cfg.data_dir.display().to_string(),
            "out_dir" => cfg.out_dir.display().to_string(),
            "drop_last" => cfg.drop_last.to_string(),
            "embedder_seed" => cfg.embedder.seed.to_string(),
            "embedder_dim" => cfg.embedder.output_dim.to_string(),
            _ => unreachable!("KEYS and dump cover the same set"),
        };
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    }
    out
}
