//! Serializable run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::SupConConfig;
use crate::error::{Error, Result};
use crate::features::AffectLexicon;
use crate::model::{FusionSource, ModelDims};
use crate::training::{SplitSpec, TrainPlan};

/// Architecture widths that do not come from the feature store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Expected feature width; checked against the store when set.
    pub input_dim: Option<usize>,
    /// Expected caption width; checked against the store when set.
    pub caption_dim: Option<usize>,
    pub proj_dim: usize,
    /// Defaults to the feature width.
    pub cross_dim: Option<usize>,
    pub aux_dim: usize,
    pub encoder_depth: usize,
    pub classifier_widths: Vec<usize>,
    pub dropout: f64,
    pub fusion: FusionSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ModelDims::new(1, 1, 3);
        Self {
            input_dim: None,
            caption_dim: None,
            proj_dim: d.proj_dim,
            cross_dim: None,
            aux_dim: d.aux_dim,
            encoder_depth: d.encoder_depth,
            classifier_widths: d.classifier_widths,
            dropout: d.dropout,
            fusion: d.fusion,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, input_dim: usize, caption_dim: usize, classes: usize) -> Result<ModelDims> {
        for (name, want, got) in [
            ("input_dim", self.input_dim, input_dim),
            ("caption_dim", self.caption_dim, caption_dim),
        ] {
            if let Some(w) = want {
                if w != got {
                    return Err(Error::Config(format!(
                        "config sets {name}={w} but the store has {got}"
                    )));
                }
            }
        }
        let dims = ModelDims {
            input_dim,
            caption_dim,
            proj_dim: self.proj_dim,
            cross_dim: self.cross_dim.unwrap_or(input_dim),
            aux_dim: self.aux_dim,
            encoder_depth: self.encoder_depth,
            classifier_widths: self.classifier_widths.clone(),
            classes,
            dropout: self.dropout,
            fusion: self.fusion,
        };
        dims.validate()?;
        Ok(dims)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Feature store directory or manifest.
    pub store: Option<PathBuf>,
    /// Run directory for artifacts.
    pub out: Option<PathBuf>,
    /// Affect lexicon; defaults to `lexicon.tsv` beside the manifest, then the
    /// bundled toy lexicon.
    pub lexicon: Option<PathBuf>,
    pub plan: TrainPlan,
    pub split: SplitSpec,
    pub supcon: SupConConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.supcon.validate()?;
        let probe = self.model.dims(
            self.model.input_dim.unwrap_or(1),
            self.model.caption_dim.unwrap_or(1),
            self.plan.task.classes(),
        )?;
        probe.validate()
    }

    /// Lexicon for a store located at `store`.
    pub fn resolve_lexicon(&self, store: &Path) -> Result<AffectLexicon> {
        if let Some(p) = &self.lexicon {
            return AffectLexicon::load(p);
        }
        let dir = if store.is_dir() {
            store.to_path_buf()
        } else {
            store.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        let beside = dir.join("lexicon.tsv");
        if beside.is_file() {
            AffectLexicon::load(&beside)
        } else {
            Ok(AffectLexicon::toy())
        }
    }
}
