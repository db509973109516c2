use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgam::SoftmaxAxis;

/// Model and training hyperparameters, read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the common embedding space.
    pub t: usize,
    pub heads: usize,
    pub mmt_layers: usize,
    pub defum_layers: usize,
    /// Heads in the feature-updating encoder layers; defaults to the largest
    /// divisor of the appearance width not exceeding `heads`.
    pub defum_heads: Option<usize>,
    /// Heads in the depth-biased attention stage.
    pub depth_heads: usize,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    /// Normalization axis of the concept/token attention.
    pub sgam_softmax: SoftmaxAxis,
    pub max_len: usize,
    /// Relative paths resolve against the config file's directory.
    pub vocab_path: Option<String>,
    pub seed: u64,
    pub lr: f64,
    /// Step at which the learning rate is multiplied by `lr_decay`; `None`
    /// decays at 7/9 of the run.
    pub lr_decay_step: Option<usize>,
    pub lr_decay: f64,
    /// Captions per update; `None` uses every caption each step.
    pub batch_size: Option<usize>,
    /// Supervise the copy head when a target word is both a vocabulary word
    /// and an OCR token.
    pub prefer_copy: bool,
    pub allow_oov: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t: 768,
            heads: 12,
            mmt_layers: 4,
            defum_layers: 2,
            defum_heads: None,
            depth_heads: 1,
            k: 5,
            sgam_softmax: SoftmaxAxis::Concepts,
            max_len: 30,
            vocab_path: None,
            seed: 0,
            lr: 1e-4,
            lr_decay_step: None,
            lr_decay: 0.1,
            batch_size: None,
            prefer_copy: false,
            allow_oov: false,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in seconds on one core.
    pub fn desk() -> Self {
        Self {
            t: 32,
            heads: 4,
            mmt_layers: 2,
            defum_layers: 2,
            defum_heads: None,
            vocab_path: Some("vocab.txt".into()),
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.t == 0 || self.heads == 0 || self.t % self.heads != 0 {
            return bad(format!("heads {} must divide t {}", self.heads, self.t));
        }
        if self.mmt_layers == 0 {
            return bad("mmt_layers must be at least 1".into());
        }
        if self.defum_layers == 0 {
            return bad("defum_layers must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        if self.depth_heads == 0 {
            return bad("depth_heads must be at least 1".into());
        }
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        Ok(())
    }

    /// Head count for encoder layers of width `d`.
    pub fn defum_heads_for(&self, d: usize) -> usize {
        match self.defum_heads {
            Some(h) => h,
            None => (1..=self.heads.min(d)).rev().find(|h| d % h == 0).unwrap_or(1),
        }
    }

    pub fn resolved_vocab_path(&self, config_dir: &Path) -> Option<PathBuf> {
        self.vocab_path.as_ref().map(|p| config_dir.join(p))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_defaults() {
        let c = ModelConfig::default();
        assert_eq!(
            (c.t, c.heads, c.mmt_layers, c.defum_layers, c.k, c.max_len),
            (768, 12, 4, 2, 5, 30)
        );
        assert_eq!(c.lr, 1e-4);
        c.validate().unwrap();
        assert_eq!(c.defum_heads_for(2048), 8);
    }

    #[test]
    fn parses_spec_keys() {
        let c: ModelConfig =
            serde_json::from_str(r#"{"t":16,"heads":2,"mmt_layers":1,"defum_layers":1,"K":2,"max_len":30,"vocab_path":"v.txt","seed":3,"lr":0.001}"#)
                .unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.vocab_path.as_deref(), Some("v.txt"));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_zero_defum_layers() {
        let c = ModelConfig {
            defum_layers: 0,
            ..ModelConfig::desk()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            heads: 5,
            ..ModelConfig::desk()
        };
        assert!(c.validate().is_err());
    }
}
