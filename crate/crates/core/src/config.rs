//! Run configuration: weights, binning, anchor policy, calibration
//! source, bootstrap, and the weight-sweep list.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::Weights;
use crate::calibration::DEFAULT_NUM_BINS;
use crate::{Error, Result};

/// How the calibration-pillar anchor (the worst ECE) is chosen.
///
/// `auto` takes the largest baseline ECE among the models in the current
/// run; `fixed` pins a value so scores stay comparable across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EceAnchor {
    Auto,
    Fixed(f64),
}

impl Default for EceAnchor {
    fn default() -> Self {
        EceAnchor::Auto
    }
}

/// Which ECE feeds the calibration pillar: the baseline value or the
/// value after a post-hoc intervention fit on the validation split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CSource {
    #[default]
    Baseline,
    Temperature,
    Isotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n: usize,
    pub seed: u64,
}

/// Full configuration for a scoring run. Every key is optional in the
/// file; omitted keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub weights: Weights,
    pub num_bins: usize,
    pub ece_anchor: EceAnchor,
    pub c_source: CSource,
    pub bootstrap: Option<BootstrapConfig>,
    pub weightings: Vec<Weights>,
    /// Externally stated composites to cross-check, keyed by model.
    pub expected_crs: BTreeMap<String, f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            weights: Weights::balanced(),
            num_bins: DEFAULT_NUM_BINS,
            ece_anchor: EceAnchor::default(),
            c_source: CSource::default(),
            bootstrap: None,
            weightings: Vec::new(),
            expected_crs: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bins == 0 {
            return Err(Error::Config("num_bins must be at least 1".into()));
        }
        if let EceAnchor::Fixed(v) = self.ece_anchor {
            if !(v > 0.0) {
                return Err(Error::Config(format!(
                    "fixed ECE anchor must be positive, got {v}"
                )));
            }
        }
        if let Some(b) = &self.bootstrap {
            if b.n == 0 {
                return Err(Error::Config("bootstrap.n must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Weightings for the sensitivity sweep: the configured list, or the
    /// standard trio (balanced, calibration-focused, robustness-focused)
    /// when none are configured.
    pub fn sweep_weightings(&self) -> Vec<Weights> {
        if self.weightings.is_empty() {
            vec![
                Weights::balanced(),
                Weights::new(0.5, 0.25, 0.25).expect("static weights are valid"),
                Weights::new(0.2, 0.5, 0.3).expect("static weights are valid"),
            ]
        } else {
            self.weightings.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_balanced() {
        let config = RunConfig::default();
        assert_eq!(config.num_bins, 10);
        assert_eq!(config.c_source, CSource::Baseline);
        assert!(config.validate().is_ok());
        assert_eq!(config.sweep_weightings().len(), 3);
    }

    #[test]
    fn parses_anchor_variants() {
        let auto: RunConfig = serde_json::from_str(r#"{"ece_anchor":"auto"}"#).unwrap();
        assert_eq!(auto.ece_anchor, EceAnchor::Auto);
        let fixed: RunConfig =
            serde_json::from_str(r#"{"ece_anchor":{"fixed":0.062}}"#).unwrap();
        assert_eq!(fixed.ece_anchor, EceAnchor::Fixed(0.062));
    }

    #[test]
    fn rejects_invalid_weights_in_file() {
        let err = serde_json::from_str::<RunConfig>(
            r#"{"weights":{"alpha":0.9,"beta":0.9,"gamma":0.9}}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"bins":10}"#).is_err());
    }
}
