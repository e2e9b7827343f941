//! Line-based `key = value` configuration.
//!
//! Values are layered: built-in defaults, then the config file, then
//! `BINHASH_SEED` (only when nothing else set the seed), then flags.

use std::fmt::Write as _;
use std::path::Path;

use binhash::dataset::WorldGenParams;
use binhash::optimizer::TrainConfig;

use crate::CliError;

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "num_models",
    "images_per_model",
    "points_per_model",
    "obs_fraction",
    "feature_dim",
    "cluster_spread",
    "noise_sigma",
    "tau",
    "code_len",
    "k",
    "m",
    "margin",
    "alpha",
    "outer_iters",
    "inner_iters",
    "epochs",
    "learning_rate",
    "momentum",
    "queries_per_batch",
    "seed",
];

pub const SEED_ENV: &str = "BINHASH_SEED";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub world: WorldGenParams,
    pub train: TrainConfig,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value `{value}` for `{key}`")))
}

impl Config {
    /// Sets one key. `tau` and `seed` are shared by generation and training.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let w = &mut self.world;
        let t = &mut self.train;
        match key {
            "num_models" => w.num_models = parse(key, value)?,
            "images_per_model" => w.images_per_model = parse(key, value)?,
            "points_per_model" => w.points_per_model = parse(key, value)?,
            "obs_fraction" => w.obs_fraction = parse(key, value)?,
            "feature_dim" => w.feature_dim = parse(key, value)?,
            "cluster_spread" => w.cluster_spread = parse(key, value)?,
            "noise_sigma" => w.noise_sigma = parse(key, value)?,
            "tau" => {
                w.tau = parse(key, value)?;
                t.mining.tau = w.tau;
            }
            "code_len" => t.code_len = parse(key, value)?,
            "k" => t.mining.k = parse(key, value)?,
            "m" => t.mining.m = parse(key, value)?,
            "margin" => {
                t.margin = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "alpha" => t.alpha = parse(key, value)?,
            "outer_iters" => t.schedule.outer_iters = parse(key, value)?,
            "inner_iters" => t.schedule.inner_iters = parse(key, value)?,
            "epochs" => t.schedule.epochs = parse(key, value)?,
            "learning_rate" => t.schedule.learning_rate = parse(key, value)?,
            "momentum" => t.schedule.momentum = parse(key, value)?,
            "queries_per_batch" => t.schedule.queries_per_batch = parse(key, value)?,
            "seed" => {
                w.seed = parse(key, value)?;
                t.schedule.seed = w.seed;
            }
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let w = &self.world;
        let t = &self.train;
        let s = &t.schedule;
        Some(match key {
            "num_models" => w.num_models.to_string(),
            "images_per_model" => w.images_per_model.to_string(),
            "points_per_model" => w.points_per_model.to_string(),
            "obs_fraction" => w.obs_fraction.to_string(),
            "feature_dim" => w.feature_dim.to_string(),
            "cluster_spread" => w.cluster_spread.to_string(),
            "noise_sigma" => w.noise_sigma.to_string(),
            "tau" => w.tau.to_string(),
            "code_len" => t.code_len.to_string(),
            "k" => t.mining.k.to_string(),
            "m" => t.mining.m.to_string(),
            "margin" => t
                .margin
                .map_or_else(|| "auto".to_string(), |c| c.to_string()),
            "alpha" => t.alpha.to_string(),
            "outer_iters" => s.outer_iters.to_string(),
            "inner_iters" => s.inner_iters.to_string(),
            "epochs" => s.epochs.to_string(),
            "learning_rate" => s.learning_rate.to_string(),
            "momentum" => s.momentum.to_string(),
            "queries_per_batch" => s.queries_per_batch.to_string(),
            "seed" => w.seed.to_string(),
            _ => return None,
        })
    }

    /// Effective configuration in the same format `parse_file` reads.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn write_echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::write(dir.join("config.txt"), self.echo())
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
    }

    /// Builds the effective configuration from the layers.
    pub fn resolve(
        file: Option<&Path>,
        env_seed: Option<&str>,
        flags: &[(&'static str, String)],
    ) -> Result<Config, CliError> {
        let mut cfg = Config::default();
        let mut seed_set = false;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config `{}`: {e}", path.display()))
            })?;
            for (key, value) in parse_file(&text)? {
                seed_set |= key == "seed";
                cfg.set(&key, &value)?;
            }
        }
        seed_set |= flags.iter().any(|(k, _)| *k == "seed");
        if let (false, Some(seed)) = (seed_set, env_seed) {
            cfg.set("seed", seed.trim())
                .map_err(|_| CliError::Config(format!("invalid {SEED_ENV} `{seed}`")))?;
        }
        for (key, value) in flags {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }
}

/// Reads `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("config line {}: expected `key = value`", n + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!(
                "config line {}: unknown key `{key}`",
                n + 1
            )));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}
