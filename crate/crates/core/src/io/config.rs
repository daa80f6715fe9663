//! Job configuration files.
//!
//! Every field is optional; missing fields take the defaults below and
//! command-line flags override whatever the file sets. Relative paths are
//! resolved against the directory containing the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ovscore::DEFAULT_TEMPERATURE;
use crate::pseudo::NamingMode;
use crate::taxonomy::PromptTemplate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub taxonomy: Option<PathBuf>,
    /// Packed gallery file.
    pub gallery: Option<PathBuf>,
    /// Feature file and COCO labels used to build a gallery.
    pub gallery_features: Option<PathBuf>,
    pub gallery_labels: Option<PathBuf>,
    pub novel_features: Option<PathBuf>,
    /// COCO document whose `images` give sizes and object names.
    pub images: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Correspondence similarity below which a cell transfers as background.
    pub min_score: f64,
    pub temperature: f64,
    pub top_k: usize,
    pub prompt: PromptTemplate,
    /// Minimum class probability kept by `score`.
    pub score_threshold: f64,
    /// Minimum detector score kept for base images by the hybrid parser.
    pub tau: f64,
    pub naming: NamingMode,
    pub workers: Option<usize>,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            taxonomy: None,
            gallery: None,
            gallery_features: None,
            gallery_labels: None,
            novel_features: None,
            images: None,
            predictions: None,
            bank: None,
            regions: None,
            output: None,
            min_score: 0.0,
            temperature: DEFAULT_TEMPERATURE,
            top_k: 100,
            prompt: PromptTemplate::ObjectPart,
            score_threshold: 0.0,
            tau: 0.5,
            naming: NamingMode::Novel,
            workers: None,
        }
    }
}

impl JobConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(-1.0..=1.0).contains(&self.min_score) {
            return bad(format!("min_score {} outside [-1, 1]", self.min_score));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad(format!("score_threshold {} outside [0, 1]", self.score_threshold));
        }
        if !self.tau.is_finite() {
            return bad(format!("tau {} is not finite", self.tau));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: JobConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: JobConfig = serde_json::from_slice(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.taxonomy,
            &mut self.gallery,
            &mut self.gallery_features,
            &mut self.gallery_labels,
            &mut self.novel_features,
            &mut self.images,
            &mut self.predictions,
            &mut self.bank,
            &mut self.regions,
            &mut self.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
