//! Run configuration: one TOML file with a section per component.
//!
//! ```toml
//! [seed]
//! master_seed = 7
//!
//! [model]
//! sigma_g = 0.2
//!
//! [grid]
//! horizon_t = 5.0
//! k_steps = 100
//!
//! [coupling]
//! kind = "scaled_mean"
//! coord = "x2"
//! gain = 0.5
//!
//! [experiment]
//! x1_0 = 0.4
//! x2_0 = 0.5
//! n_samples = 200
//! ```
//!
//! Every section and key is optional; unknown keys are rejected. When
//! `model.failure_penalty_M` is not given it is set to `100 * e * t`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::HjbConfig;
use crate::measures::{Coord, CouplingKind};
use crate::model::{ModelParams, State};
use crate::pic::PicConfig;
use crate::simulate::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    /// `zero`, `mean_x1`, `mean_x2` or `scaled_mean`.
    pub kind: String,
    pub coord: Option<Coord>,
    pub gain: Option<f64>,
}

impl Default for CouplingSection {
    fn default() -> Self {
        Self { kind: "zero".into(), coord: None, gain: None }
    }
}

impl CouplingSection {
    pub fn to_kind(&self) -> Result<CouplingKind> {
        match self.kind.as_str() {
            "scaled_mean" => {
                let coord = self.coord.ok_or_else(|| Error::Parse("coupling.coord is required for scaled_mean".into()))?;
                let gain = self.gain.ok_or_else(|| Error::Parse("coupling.gain is required for scaled_mean".into()))?;
                if !gain.is_finite() {
                    return Err(Error::Parse("coupling.gain must be finite".into()));
                }
                Ok(CouplingKind::ScaledMean { coord, gain })
            }
            other => {
                if self.coord.is_some() || self.gain.is_some() {
                    return Err(Error::Parse(format!("coupling.coord/gain only apply to scaled_mean, kind is {other:?}")));
                }
                CouplingKind::from_str(other)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: PathBuf,
    pub run_label: String,
}

impl Default for IoSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), run_label: "run".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub x1_0: f64,
    pub x2_0: f64,
    pub n_samples: usize,
    /// Write one CSV per simulated path.
    pub csv_trajectories: bool,
    /// Default policy for `simulate`.
    pub policy: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { x1_0: 0.4, x2_0: 0.5, n_samples: 100, csv_trajectories: true, policy: "zero".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: SeedSection,
    pub model: ModelParams,
    pub grid: TimeGrid,
    pub coupling: CouplingSection,
    pub pic: PicConfig,
    pub hjb: HjbConfig,
    pub io: IoSection,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    /// Parse TOML text, apply `key.path=value` overrides, fill the default
    /// penalty and validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let penalty_given = table
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("failure_penalty_M"));
        // parse the original text when possible so diagnostics keep line numbers
        let mut cfg: RunConfig = if overrides.is_empty() {
            toml::from_str(text)
        } else {
            toml::from_str(&toml::to_string(&table).map_err(|e| Error::Parse(e.to_string()))?)
        }
        .map_err(|e| Error::Parse(e.to_string()))?;
        if !penalty_given {
            cfg.model.failure_penalty_m = 100.0 * cfg.model.stabilization_weight_e * cfg.grid.horizon_t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.grid.validate()?;
        self.coupling.to_kind()?;
        self.pic.validate()?;
        self.hjb.validate()?;
        self.initial_state()?;
        Ok(())
    }

    pub fn coupling_kind(&self) -> CouplingKind {
        self.coupling.to_kind().expect("validated at load")
    }

    pub fn initial_state(&self) -> Result<State> {
        State::new(self.experiment.x1_0, self.experiment.x2_0)
    }
}

/// `section.key=value`, where `value` is a TOML literal; bare words are taken as strings.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override {spec:?} is not key=value")))?;
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just parsed"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields one element");
    let mut cur = table;
    for k in parents {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("override {spec:?}: {k} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
