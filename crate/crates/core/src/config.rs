//! Detector configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::DecodeParams;
use crate::error::{Error, Result};
use crate::segmentation::SegmentationParams;
use crate::tagmodel::TagFamily;
use crate::topology::FilterParams;

/// Environment variable naming a config file used when none is given.
pub const CONFIG_ENV: &str = "TOPOTAG_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub segmentation: SegmentationParams,
    pub filter: FilterParams,
    pub decode: DecodeParams,
    /// Grid sizes to search for.
    pub families: Vec<usize>,
    pub intrinsics: Option<PathBuf>,
    /// Outer border side in meters; needed for pose output.
    pub tag_size: Option<f64>,
    pub verbosity: u8,
    pub debug_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            segmentation: SegmentationParams::default(),
            filter: FilterParams::default(),
            decode: DecodeParams::default(),
            families: vec![4],
            intrinsics: None,
            tag_size: None,
            verbosity: 0,
            debug_dir: None,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.filter.validate()?;
        self.decode.validate()?;
        if self.families.is_empty() {
            return Err(Error::InvalidArgument("no tag families configured".into()));
        }
        self.family_list()?;
        if let Some(s) = self.tag_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tag_size {s} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn family_list(&self) -> Result<Vec<TagFamily>> {
        self.families.iter().map(|&n| TagFamily::new(n)).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Explicit path first, then [`CONFIG_ENV`], then defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }
}
