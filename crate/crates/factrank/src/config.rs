//! TOML configuration file.
//!
//! ```toml
//! min_freq = 1
//!
//! [ranker]
//! k1 = 20
//! patterns = 8
//! [ranker.encoder]
//! dim = 64
//! [ranker.adam]
//! lr = 5e-4
//!
//! [generator]
//! min_distractors = 8
//! ```
//!
//! Every key is optional. Command-line flags override the file.

use std::path::Path;

use factrank_core::corpus::GeneratorConfig;
use factrank_core::ranker::RankerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub min_freq: u64,
    pub ranker: RankerConfig,
    pub generator: GeneratorConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            min_freq: 1,
            ranker: RankerConfig::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("{}: {}", path.display(), e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "config is not UTF-8"))?;
        Self::parse(path, &text)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }
}

#[cfg(test)]
mod tests {
    use factrank_core::memory::ThresholdRule;

    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse(Path::new("c"), "").unwrap(), Config::default());
    }

    #[test]
    fn nested_tables_override_defaults() {
        let text = "min_freq = 2\n[ranker]\nk1 = 20\nfeedback = \"all-key-sentences\"\n[ranker.encoder]\ndim = 16\n[ranker.threshold]\nkind = \"absolute\"\nlow = 0.19\nhigh = 0.227\n[ranker.ablation]\nno_pmb = true\n";
        let c = Config::parse(Path::new("c"), text).unwrap();
        assert_eq!(c.min_freq, 2);
        assert_eq!(c.ranker.k1, 20);
        assert_eq!(c.ranker.encoder.dim, 16);
        assert_eq!(c.ranker.encoder.heads, 4);
        assert_eq!(c.ranker.threshold, ThresholdRule::Absolute { low: 0.19, high: 0.227 });
        assert!(c.ranker.ablation.no_pmb);
    }

    #[test]
    fn unknown_top_level_key_is_a_usage_error() {
        let err = Config::parse(Path::new("c"), "k1 = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_nested_key_is_a_usage_error() {
        for text in ["[ranker]
k3 = 1
", "[ranker.encoder]
width = 8
", "[generator]
noise = 1
"] {
            assert_eq!(Config::parse(Path::new("c"), text).unwrap_err().exit_code(), 1, "{text}");
        }
    }
}
