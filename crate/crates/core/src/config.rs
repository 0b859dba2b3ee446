//! Run configuration: one TOML document with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contact::ContactConfig;
use crate::error::{Error, Result};
use crate::fixtures::SynthesisConfig;
use crate::icp::IcpConfig;
use crate::metrics::MetricConfig;
use crate::mokap::FitConfig;
use crate::refine::RefineConfig;
use crate::shape_path::{DEFAULT_N_ITPL, MAX_CELLS};

/// Commented default configuration shipped with the crate.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../assets/tink.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdfConfig {
    /// Cells along the longest side of a converted mesh's grid.
    pub resolution: usize,
    /// Margin added around mesh bounds before gridding, m.
    pub padding: f64,
}

impl Default for SdfConfig {
    fn default() -> Self {
        SdfConfig {
            resolution: 64,
            padding: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub n_itpl: usize,
    pub max_cells: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            n_itpl: DEFAULT_N_ITPL,
            max_cells: MAX_CELLS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TinkConfig {
    pub sdf: SdfConfig,
    pub path: PathConfig,
    pub contact: ContactConfig,
    pub icp: IcpConfig,
    pub refine: RefineConfig,
    pub fit: FitConfig,
    pub metrics: MetricConfig,
    pub synthesis: SynthesisConfig,
}

impl TinkConfig {
    pub fn from_toml(s: &str) -> std::result::Result<Self, String> {
        let cfg: TinkConfig = toml::from_str(s).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies a JSON object of overrides, section by section.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("configuration serializes");
        merge(&mut base, overrides);
        let cfg: TinkConfig =
            serde_json::from_value(base).map_err(|e| Error::invalid(format!("config overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sdf.resolution < 4 || !(self.sdf.padding >= 0.0) {
            return Err(Error::invalid("sdf resolution must be >= 4 and padding >= 0"));
        }
        if self.path.n_itpl == 0 || self.path.max_cells < 4 {
            return Err(Error::invalid("path n_itpl must be >= 1 and max_cells >= 4"));
        }
        if !(self.contact.threshold > 0.0) {
            return Err(Error::invalid("contact threshold must be positive"));
        }
        if self.icp.max_iterations == 0 || !(self.icp.tolerance > 0.0) {
            return Err(Error::invalid("icp needs at least one iteration and a positive tolerance"));
        }
        if !(self.metrics.voxel > 0.0) {
            return Err(Error::invalid("metrics voxel must be positive"));
        }
        self.refine.weights.validate()?;
        self.refine.adam.validate()?;
        self.fit.adam.validate()?;
        self.synthesis.adam.validate()?;
        self.metrics.sim.validate()
    }
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_defaults() {
        assert_eq!(TinkConfig::from_toml(DEFAULT_CONFIG_TOML).unwrap(), TinkConfig::default());
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(TinkConfig::from_toml("").unwrap(), TinkConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = TinkConfig::default();
        assert_eq!(TinkConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(TinkConfig::from_toml("[path]\nn_itpl = 0\n").is_err());
        assert!(TinkConfig::from_toml("[refine.weights]\nintp = -1.0\n").is_err());
        assert!(TinkConfig::from_toml("[sdf]\nresolution = \"x\"\n").is_err());
    }

    #[test]
    fn overrides_touch_only_named_keys() {
        let c = TinkConfig::default()
            .with_overrides(&serde_json::json!({"refine": {"adam": {"iterations": 10}}}))
            .unwrap();
        assert_eq!(c.refine.adam.iterations, 10);
        assert_eq!(c.refine.adam.lr, TinkConfig::default().refine.adam.lr);
        assert_eq!(c.metrics, TinkConfig::default().metrics);
    }
}
