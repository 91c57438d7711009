//! Run configuration: JSON files with `preset` inheritance, plus flag
//! overrides.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use emograph::corpus::CorpusOptions;
use emograph::model::{EncoderConfig, HeadConfig, TrainConfig};

use crate::error::ConfigError;

/// Presets compiled into the binary, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("semeval-gcn", include_str!("../presets/semeval-gcn.json")),
    ("semeval-gat", include_str!("../presets/semeval-gat.json")),
    ("twitter", include_str!("../presets/twitter.json")),
    ("iemocap-transfer", include_str!("../presets/iemocap-transfer.json")),
    ("reference-trs-semeval", include_str!("../presets/reference-trs-semeval.json")),
    ("reference-trs-twitter", include_str!("../presets/reference-trs-twitter.json")),
];

const MAX_PRESET_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// JSON array of label names fixing the label order.
    pub label_file: Option<PathBuf>,
    /// Inline alternative to `label_file`.
    pub label_names: Option<Vec<String>>,
    /// JSON object mapping corpus label names to label-space names; merged
    /// over `corpus.aliases`.
    pub alias_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub mu: f64,
    pub w: f64,
    /// Count co-occurrence over the validation split as well.
    pub use_val: bool,
    /// Use this prebuilt graph instead of counting.
    pub path: Option<PathBuf>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { mu: 0.4, w: 0.35, use_val: false, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeConfig {
    #[default]
    Multilabel,
    /// Kept labels by name; aliases apply.
    Singlelabel { kept: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Classes with fewer gold examples are flagged in single-label reports.
    pub min_support: usize,
    /// Run k-fold cross-validation over the training corpus instead of a
    /// single train/evaluate pass.
    pub folds: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { min_support: 5, folds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// The preset this configuration started from, if any.
    pub preset: Option<String>,
    pub data: DataConfig,
    pub corpus: CorpusOptions,
    pub graph: GraphConfig,
    pub model: ModelSection,
    pub mode: ModeConfig,
    pub optim: TrainConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            data: DataConfig::default(),
            corpus: CorpusOptions::default(),
            graph: GraphConfig::default(),
            model: ModelSection::default(),
            mode: ModeConfig::default(),
            optim: TrainConfig::default(),
            eval: EvalConfig::default(),
            seed: 13,
            out: None,
        }
    }
}

/// Command-line values that take precedence over every file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub mu: Option<f64>,
    pub w: Option<f64>,
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Recursively overlays `top` onto `base`; objects merge key by key, every
/// other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn builtin_preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

fn parse_object(text: &str, origin: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text).with_context(|| format!("{origin} is not valid JSON"))? {
        Value::Object(map) => Ok(map),
        _ => bail!(ConfigError(format!("{origin} must contain a JSON object"))),
    }
}

/// Resolves `preset` references (builtin names or paths relative to `dir`)
/// and returns the merged object without any `preset` keys.
fn expand(mut object: Map<String, Value>, dir: &Path, depth: usize) -> Result<Value> {
    let Some(preset) = object.remove("preset") else {
        return Ok(Value::Object(object));
    };
    if depth >= MAX_PRESET_DEPTH {
        bail!(ConfigError("preset chain is too deep (cycle?)".into()));
    }
    let name = preset.as_str().ok_or_else(|| ConfigError("preset must be a string".into()))?;
    let mut base = match builtin_preset(name) {
        Some(text) => expand(parse_object(text, &format!("preset {name:?}"))?, dir, depth + 1)?,
        None => {
            let path = dir.join(name);
            if !path.is_file() {
                let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                bail!(ConfigError(format!("unknown preset {name:?}; builtin presets: {}", known.join(", "))));
            }
            let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
            let parent = path.parent().unwrap_or(dir).to_path_buf();
            let base = expand(parse_object(&text, &path.display().to_string())?, &parent, depth + 1)?;
            rebase_paths(base, &parent)
        }
    };
    merge(&mut base, Value::Object(object));
    Ok(base)
}

/// Makes relative paths inside a file-based config absolute against `dir`.
fn rebase_paths(mut value: Value, dir: &Path) -> Value {
    let fix = |v: &mut Value| {
        if let Some(s) = v.as_str() {
            let p = Path::new(s);
            if p.is_relative() {
                *v = Value::String(dir.join(p).to_string_lossy().into_owned());
            }
        }
    };
    if let Some(data) = value.get_mut("data").and_then(Value::as_object_mut) {
        for key in ["train", "val", "test", "label_file", "alias_file"] {
            if let Some(v) = data.get_mut(key) {
                fix(v);
            }
        }
    }
    if let Some(v) = value.get_mut("graph").and_then(|g| g.get_mut("path")) {
        fix(v);
    }
    if let Some(v) = value.get_mut("out") {
        fix(v);
    }
    value
}

impl RunConfig {
    /// Preset, then config file, then flags. Nothing is validated here.
    pub fn resolve(config_path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut root = Map::new();
        if let Some(p) = &overrides.preset {
            root.insert("preset".into(), Value::String(p.clone()));
        }
        let mut top_preset = overrides.preset.clone();
        let value = match config_path {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                let file = parse_object(&text, &path.display().to_string())?;
                if let Some(Value::String(p)) = file.get("preset") {
                    top_preset = Some(p.clone());
                }
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                let file = rebase_paths(expand(file, &dir, 0)?, &dir);
                let mut base = expand(root, Path::new("."), 0)?;
                merge(&mut base, file);
                base
            }
            None => expand(root, Path::new("."), 0)?,
        };
        let mut config: RunConfig =
            serde_json::from_value(value).map_err(|e| ConfigError(format!("invalid configuration: {e}")))?;
        config.preset = top_preset;
        config.apply(overrides);
        Ok(config)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.mu {
            self.graph.mu = v;
        }
        if let Some(v) = o.w {
            self.graph.w = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threshold {
            self.optim.threshold = v;
        }
        if let Some(v) = &o.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = &o.train {
            self.data.train = Some(v.clone());
        }
        if let Some(v) = &o.val {
            self.data.val = Some(v.clone());
        }
        if let Some(v) = &o.test {
            self.data.test = Some(v.clone());
        }
    }

    /// Domain checks that need no I/O beyond file existence. `needs_train`
    /// is false for commands that only consume a checkpoint. A missing input
    /// file is reported as an I/O error, everything else as [`ConfigError`].
    pub fn validate(&self, needs_train: bool) -> Result<()> {
        let err = |m: String| Err(ConfigError(m).into());
        if !(0.0..=1.0).contains(&self.graph.mu) {
            return err(format!("graph.mu = {} must lie in [0, 1]", self.graph.mu));
        }
        if !(0.0..1.0).contains(&self.graph.w) {
            return err(format!("graph.w = {} must lie in [0, 1)", self.graph.w));
        }
        self.model.encoder.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.model.head.validate(&self.model.encoder).map_err(|e| ConfigError(e.to_string()))?;
        self.optim.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.corpus.max_len == 0 || self.corpus.max_len > self.model.encoder.max_len {
            return err(format!(
                "corpus.max_len = {} must be in 1..={} (encoder max_len)",
                self.corpus.max_len, self.model.encoder.max_len
            ));
        }
        if self.corpus.min_freq == 0 {
            return err("corpus.min_freq must be at least 1".into());
        }
        if let ModeConfig::Singlelabel { kept } = &self.mode {
            if kept.len() < 2 {
                return err("single-label mode needs at least 2 kept labels".into());
            }
        }
        if let Some(k) = self.eval.folds {
            if k < 2 {
                return err(format!("eval.folds = {k} must be at least 2"));
            }
        }
        if self.data.label_file.is_some() && self.data.label_names.is_some() {
            return err("set data.label_file or data.label_names, not both".into());
        }
        if needs_train && self.data.train.is_none() {
            return err("no training corpus: set data.train or pass --train".into());
        }
        let files = [
            ("data.train", &self.data.train),
            ("data.val", &self.data.val),
            ("data.test", &self.data.test),
            ("data.label_file", &self.data.label_file),
            ("data.alias_file", &self.data.alias_file),
            ("graph.path", &self.graph.path),
        ];
        for (key, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    let e = io::Error::new(io::ErrorKind::NotFound, format!("{key}: file not found: {}", p.display()));
                    return Err(e.into());
                }
            }
        }
        Ok(())
    }

    /// Corpus options with the alias file folded in.
    pub fn corpus_options(&self) -> Result<CorpusOptions> {
        let mut options = self.corpus.clone();
        if let Some(path) = &self.data.alias_file {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let aliases: BTreeMap<String, String> =
                serde_json::from_str(&text).with_context(|| format!("{}: expected a JSON object of strings", path.display()))?;
            options.aliases.extend(aliases);
        }
        Ok(options)
    }
}
