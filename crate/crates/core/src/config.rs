//! Plain-text run configuration.
//!
//! A TOML file names a scenario and overrides any subset of its settings:
//!
//! ```toml
//! scenario = "3U1O"
//!
//! [env]            # any EnvConfig field; the rest come from the preset
//! dt = 0.5
//!
//! [train]          # any TrainConfig field except scenario/env/method
//! seed = 7
//! total_env_steps = 50000
//!
//! [advantage]      # kind = "maca" | "coma" | "shapley"
//! kind = "coma"
//! samples = 10
//!
//! [eas]            # execution-time filter used by evaluation
//! enabled = true
//! candidates = 32
//! ```

use std::path::Path;

use serde::Deserialize;
use toml::Table;

use crate::credit::AdvantageMethod;
use crate::eas::EasConfig;
use crate::env::Scenario;
use crate::error::{MacaError, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eas: EasConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<Scenario>,
    #[serde(default)]
    env: Table,
    #[serde(default)]
    train: Table,
    advantage: Option<AdvantageMethod>,
    #[serde(default)]
    eas: EasConfig,
}

fn invalid(e: impl std::fmt::Display) -> MacaError {
    MacaError::InvalidConfig(e.to_string())
}

impl RunConfig {
    /// Defaults for a scenario and method.
    pub fn preset(scenario: Scenario, method: AdvantageMethod, seed: u64) -> Self {
        Self {
            train: TrainConfig::new(scenario, method, seed),
            eas: EasConfig::default(),
        }
    }

    /// Parses TOML text; `fallback_scenario` is used when the file names none.
    pub fn from_toml(text: &str, fallback_scenario: Scenario) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(invalid)?;
        let scenario = raw.scenario.unwrap_or(fallback_scenario);
        let base = TrainConfig::new(scenario, raw.advantage.unwrap_or(AdvantageMethod::Maca), 0);
        let mut merged = Table::try_from(&base).map_err(invalid)?;
        for reserved in ["scenario", "env", "method"] {
            if raw.train.contains_key(reserved) {
                return Err(invalid(format!("[train] may not set {reserved:?}; use the top level or its own table")));
            }
        }
        if let Some(toml::Value::Table(env)) = merged.get_mut("env") {
            for (k, v) in raw.env {
                if !env.contains_key(&k) {
                    return Err(invalid(format!("unknown [env] key {k:?}")));
                }
                env.insert(k, v);
            }
        }
        for (k, v) in raw.train {
            if !merged.contains_key(&k) {
                return Err(invalid(format!("unknown [train] key {k:?}")));
            }
            merged.insert(k, v);
        }
        let train: TrainConfig = merged.try_into().map_err(invalid)?;
        train.validate()?;
        Ok(Self { train, eas: raw.eas })
    }

    pub fn load(path: &Path, fallback_scenario: Scenario) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, fallback_scenario)
    }
}
