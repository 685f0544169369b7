//! Pipeline configuration file (JSON or TOML). Command-line flags take precedence.

use std::path::{Path, PathBuf};

use mvpure::model::NoiseKind;
use mvpure::spectrum::RankRule;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Windows {
    pub noise: Option<[f64; 2]>,
    pub data: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub l0: Option<f64>,
    pub rank: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub channels: Option<usize>,
    pub candidates: Option<usize>,
    pub n_sources: Option<usize>,
    pub snr: Option<Vec<f64>>,
    pub noise: Option<NoiseKind>,
    pub correlation: Option<f64>,
    pub separation: Option<f64>,
    pub n_epochs: Option<usize>,
    pub n_times: Option<usize>,
    pub sfreq: Option<f64>,
    pub t0: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub leadfield: Option<PathBuf>,
    pub epochs: Option<PathBuf>,
    pub data_cov: Option<PathBuf>,
    pub noise_cov: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub sources: Option<PathBuf>,
    #[serde(default)]
    pub windows: Windows,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    pub rank_rule: Option<RankRule>,
    pub index: Option<String>,
    pub filter: Option<String>,
    pub rank: Option<usize>,
    pub n_sources: Option<usize>,
    pub reg: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

impl PipelineConfig {
    /// Loads a config file. `.toml` files are parsed as TOML, everything else as JSON.
    /// Returns `None` for a file with no content.
    pub fn load(path: &Path) -> Result<Option<Self>, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("--config: cannot read {}: {e}", path.display())))?;
        if text.trim().is_empty() {
            return Ok(None);
        }
        let bad = |e: String| CliError::Usage(format!("--config: invalid configuration in {}: {e}", path.display()));
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
        };
        if let Some(g) = cfg.reg {
            if g < 0.0 {
                return Err(bad(format!("reg must be non-negative, got {g}")));
            }
        }
        Ok(Some(cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "index = \"mpz-mvp\"\nrank = 2\n[windows]\nnoise = [-0.2, 0.0]\n").unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"index": "mpz-mvp", "rank": 2, "windows": {"noise": [-0.2, 0.0]}}"#).unwrap();
        for p in [t, j] {
            let c = PipelineConfig::load(&p).unwrap().unwrap();
            assert_eq!(c.index.as_deref(), Some("mpz-mvp"));
            assert_eq!(c.rank, Some(2));
            assert_eq!(c.windows.noise, Some([-0.2, 0.0]));
        }
    }

    #[test]
    fn empty_and_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.json");
        std::fs::write(&e, "  \n").unwrap();
        assert!(PipelineConfig::load(&e).unwrap().is_none());
        let u = dir.path().join("u.json");
        std::fs::write(&u, r#"{"rnak": 2}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&u), Err(CliError::Usage(_))));
    }
}
