//! The shared JSON configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use scarecrow_core::dataset::DEFAULT_MIN_PER_CLASS;
use scarecrow_core::monitor::PolicyConfig;
use scarecrow_core::multibox::NmsConfig;
use scarecrow_core::{AnchorConfig, Variances};

pub const CONFIG_ENV: &str = "SCARECROW_CONFIG";

/// Either a path to a policy file or the policy itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySource {
    Path(PathBuf),
    Inline(PolicyConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub anchors: AnchorConfig,
    pub variances: Variances,
    /// Foreground class names in network output order.
    pub labels: Vec<String>,
    pub weights: Option<PathBuf>,
    pub stub: Option<PathBuf>,
    pub policy: Option<PolicySource>,
    pub score_threshold: f64,
    /// IoU needed for a detection to count as a hit during evaluation.
    pub iou_threshold: f64,
    pub nms: NmsConfig,
    pub min_images_per_class: usize,
    pub fps: f64,
    pub spool: PathBuf,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            anchors: AnchorConfig::default(),
            variances: Variances::default(),
            labels: vec!["lion".into(), "cheetah".into(), "cat".into()],
            weights: None,
            stub: None,
            policy: None,
            score_threshold: 0.5,
            iou_threshold: 0.5,
            nms: NmsConfig::default(),
            min_images_per_class: DEFAULT_MIN_PER_CLASS,
            fps: 10.0,
            spool: PathBuf::from("alerts.spool.jsonl"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {}", .problems.join("; "))]
    Invalid { path: String, problems: Vec<String> },
}

impl GlobalConfig {
    /// Every rule the configuration breaks, including those of an inline
    /// policy and of the policy file it points at.
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .anchors
            .violations()
            .into_iter()
            .map(|p| format!("anchors: {p}"))
            .collect();
        if self.labels.is_empty() {
            v.push("labels must name at least one class".into());
        }
        let mut sorted = self.labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.labels.len() {
            v.push("labels must be unique".into());
        }
        if self.labels.iter().any(|l| l.trim().is_empty()) {
            v.push("labels must not be empty strings".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            v.push(format!("score_threshold ({}) must lie in [0, 1]", self.score_threshold));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            v.push(format!("iou_threshold ({}) must lie in (0, 1)", self.iou_threshold));
        }
        if !(0.0..=1.0).contains(&self.nms.iou_threshold) {
            v.push(format!("nms.iou_threshold ({}) must lie in [0, 1]", self.nms.iou_threshold));
        }
        if self.nms.top_k == 0 {
            v.push("nms.top_k must be at least 1".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            v.push(format!("fps ({}) must be positive", self.fps));
        }
        for (key, path) in [("weights", &self.weights), ("stub", &self.stub)] {
            if let Some(p) = path {
                if !p.is_file() {
                    v.push(format!("{key}: {} does not exist", p.display()));
                }
            }
        }
        match &self.policy {
            Some(PolicySource::Inline(p)) => v.extend(p.violations().into_iter().map(|p| format!("policy: {p}"))),
            Some(PolicySource::Path(p)) => {
                if let Err(e) = PolicyConfig::load(p) {
                    v.push(format!("policy {}: {e}", p.display()));
                }
            }
            None => {}
        }
        v
    }

    /// Policy from the file or inline object, or the default policy.
    pub fn policy(&self) -> Result<PolicyConfig, String> {
        match &self.policy {
            None => Ok(PolicyConfig::default()),
            Some(PolicySource::Inline(p)) => Ok(p.clone()),
            Some(PolicySource::Path(p)) => PolicyConfig::load(p).map_err(|e| format!("{}: {e}", p.display())),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.weights.iter_mut().for_each(fix);
        self.stub.iter_mut().for_each(fix);
        if let Some(PolicySource::Path(p)) = &mut self.policy {
            fix(p);
        }
        fix(&mut self.spool);
    }
}

/// Parses `text`; `path` is used for messages and to resolve relative paths.
pub fn parse_config(text: &str, path: &Path) -> Result<GlobalConfig, ConfigError> {
    let shown = path.display().to_string();
    let mut cfg: GlobalConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: shown.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    let problems = cfg.violations();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid { path: shown, problems })
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<GlobalConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, path)
}
