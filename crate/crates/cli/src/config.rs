//! Pipeline configuration: a JSON file plus command-line overrides.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use texgram_core::infotheory::EntropyMethod;
use texgram_core::rdm::DistanceVariant;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    /// Bundle directory.
    pub bundle: PathBuf,
    /// Replaces the bundle's tap list when set.
    #[serde(default)]
    pub taps: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    /// Exemplar images; each is synthesized with every selected model.
    pub exemplars: Vec<PathBuf>,
    pub iterations: usize,
    pub history_size: usize,
    pub grad_tolerance: f64,
    pub layer_weights: Option<Vec<f64>>,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self { exemplars: Vec::new(), iterations: 1000, history_size: 10, grad_tolerance: 1e-7, layer_weights: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FigureOptions {
    pub heatmaps: bool,
    /// Larger RDMs are block-averaged down to at most this many pixels per side.
    pub max_heatmap_size: usize,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self { heatmaps: true, max_heatmap_size: 1024 }
    }
}

fn method_de<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<EntropyMethod, D::Error> {
    String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
}

fn method_ser<S: Serializer>(m: &EntropyMethod, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&m.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub models: Vec<ModelEntry>,
    pub dataset_root: PathBuf,
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub brainscore_csv: Option<PathBuf>,
    #[serde(default)]
    pub distance: DistanceVariant,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default, deserialize_with = "method_de", serialize_with = "method_ser")]
    pub mi_method: EntropyMethod,
    /// Clamp negative MI at zero in `best_mi.csv`, `mi_per_layer.csv` and the correlation inputs.
    #[serde(default)]
    pub clamp_mi: bool,
    /// Number of clusters; defaults to the number of classes.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub figures: FigureOptions,
    #[serde(default)]
    pub seed: u64,
}

fn default_cache() -> PathBuf {
    PathBuf::from("cache")
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub layer: Option<usize>,
    pub k: Option<usize>,
    pub mi_method: Option<EntropyMethod>,
    pub distance: Option<DistanceVariant>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A validated configuration with overrides applied and paths made absolute.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: PipelineConfig,
    /// 1-based tap index restricting per-layer stages.
    pub layer: Option<usize>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for m in &mut self.models {
            fix(&mut m.bundle);
        }
        fix(&mut self.dataset_root);
        fix(&mut self.cache_dir);
        fix(&mut self.output_dir);
        if let Some(p) = self.brainscore_csv.as_mut() {
            fix(p);
        }
        for p in &mut self.synthesis.exemplars {
            fix(p);
        }
    }

    pub fn apply(mut self, o: Overrides) -> Result<Settings> {
        if let Some(name) = &o.model {
            self.models.retain(|m| &m.name == name);
            if self.models.is_empty() {
                return Err(PipelineError::Config(format!("model `{name}` is not in the config")));
            }
        }
        if let Some(k) = o.k {
            self.k = Some(k);
        }
        if let Some(m) = o.mi_method {
            self.mi_method = m;
        }
        if let Some(d) = o.distance {
            self.distance = d;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = o.out {
            self.output_dir = out;
        }
        self.validate()?;
        if o.layer == Some(0) {
            return Err(PipelineError::Config("--layer is 1-based".into()));
        }
        Ok(Settings { config: self, layer: o.layer })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !names.insert(&m.name) {
                return bad(format!("model `{}` is listed twice", m.name));
            }
            if m.name.is_empty() || m.name.contains(['/', '\\', ',']) {
                return bad(format!("invalid model name `{}`", m.name));
            }
            if !m.bundle.is_dir() {
                return bad(format!("bundle {} for `{}` does not exist", m.bundle.display(), m.name));
            }
        }
        if !self.dataset_root.is_dir() {
            return bad(format!("dataset root {} does not exist", self.dataset_root.display()));
        }
        if let Some(p) = &self.brainscore_csv {
            if !p.is_file() {
                return bad(format!("Brain-Score CSV {} does not exist", p.display()));
            }
        }
        if self.k == Some(0) {
            return bad("k must be at least 1".into());
        }
        if self.synthesis.iterations == 0 || self.synthesis.history_size == 0 {
            return bad("synthesis iterations and history size must be positive".into());
        }
        if self.figures.max_heatmap_size == 0 {
            return bad("max_heatmap_size must be positive".into());
        }
        Ok(())
    }
}
