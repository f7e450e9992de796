//! Pipeline configuration: a TOML file whose keys may be written either as
//! sections or as flat dotted keys (`model.growth_rate = 4`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ecgibi_core::ingest::{ChannelSelect, DEFAULT_MAX_SAMPLES};
use ecgibi_core::noisemix::MixWeights;
use ecgibi_core::tiramisu::{ModelConfig, TrainingConfig};
use ecgibi_core::Error;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Wfdb,
    /// `<record>.csv` (`sample_index,mV`) plus `<record>.beats` (one index per line).
    Csv,
}

/// Lead selector as written in the config: an index or a signal label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Channel {
    Index(usize),
    Label(String),
}

impl Channel {
    pub fn select(&self) -> ChannelSelect {
        match self {
            Channel::Index(i) => ChannelSelect::Index(*i),
            Channel::Label(l) => ChannelSelect::Label(l.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
    #[serde(default = "default_channel")]
    pub channel: Channel,
    #[serde(default = "default_format")]
    pub format: RecordFormat,
    /// Sampling rate of CSV records; WFDB records carry their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs: Option<f64>,
    #[serde(default = "default_annotator")]
    pub annotator: String,
    /// Expected SHA-256 of files under `root`, keyed by file name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sha256: BTreeMap<String, String>,
    /// Archive directory used by `fetch`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

fn default_channel() -> Channel {
    Channel::Index(0)
}

fn default_format() -> RecordFormat {
    RecordFormat::Wfdb
}

fn default_annotator() -> String {
    "atr".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub noise_root: PathBuf,
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_url: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub noise_sha256: BTreeMap<String, String>,
}

fn default_output_root() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub em: f64,
    pub ma: f64,
    pub bw: f64,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        let w = MixWeights::default();
        MixConfig {
            em: w.em,
            ma: w.ma,
            bw: w.bw,
            seed: 0,
        }
    }
}

impl MixConfig {
    pub fn weights(&self) -> MixWeights {
        MixWeights {
            em: self.em,
            ma: self.ma,
            bw: self.bw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub max_samples: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            max_samples: DEFAULT_MAX_SAMPLES,
        }
    }
}

/// How training windows are cut from the prepared signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_stride: usize,
    /// Every `round(1 / val_fraction)`-th window is held out for validation; 0 disables.
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_stride: 1024,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Denoiser {
    /// Detect peaks on the noisy signal directly.
    Identity,
    /// Denoise with the trained checkpoint first.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub snr_set: Vec<i32>,
    pub stride: usize,
    pub tolerance_ms: f64,
    pub denoiser: Denoiser,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            snr_set: vec![0, -6, -12, -18, -24, -30],
            stride: 1024,
            tolerance_ms: 150.0,
            denoiser: Denoiser::Model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchConfig {
    pub enabled: bool,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig { enabled: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub datasets: BTreeMap<String, DatasetConfig>,
    pub paths: PathsConfig,
    #[serde(default)]
    pub mix: MixConfig,
    #[serde(default)]
    pub prepare: PrepareConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub fetch: FetchConfig,
}

/// Reduced settings applied by `--smoke` underneath the file's own `smoke` table.
fn builtin_smoke() -> Table {
    let text = "
        model.growth_rate = 4
        model.initial_filters = 16
        model.window_len = 512
        model.bn_momentum = 0.9
        training.epochs = 3
        training.train_snr_set = [0]
        split.train_stride = 512
        split.val_fraction = 0.0
        eval.stride = 512
    ";
    text.parse().expect("built-in smoke table parses")
}

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// Run-time overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub smoke: bool,
}

impl PipelineConfig {
    /// Parse, apply smoke settings and overrides, resolve relative paths
    /// against the config file's directory and validate.
    pub fn load(path: &Path, ov: &Overrides) -> anyhow::Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(parent)
            .map_err(|e| config_err(format!("cannot resolve {}: {e}", parent.display())))?;
        PipelineConfig::from_toml(&text, &base, ov)
    }

    pub fn from_toml(text: &str, base_dir: &Path, ov: &Overrides) -> anyhow::Result<PipelineConfig> {
        let mut table: Table = text.parse().map_err(|e| config_err(format!("config: {e}")))?;
        let file_smoke = match table.remove("smoke") {
            Some(Value::Table(t)) => t,
            Some(_) => return Err(config_err("`smoke` must be a table")),
            None => Table::new(),
        };
        if ov.smoke {
            merge(&mut table, &builtin_smoke());
            merge(&mut table, &file_smoke);
        }
        let mut cfg: PipelineConfig =
            Value::Table(table).try_into().map_err(|e| config_err(format!("config: {e}")))?;

        for ds in cfg.datasets.values_mut() {
            ds.root = base_dir.join(&ds.root);
        }
        cfg.paths.noise_root = base_dir.join(&cfg.paths.noise_root);
        cfg.paths.output_root = match &ov.out {
            Some(out) => out.clone(),
            None => base_dir.join(&cfg.paths.output_root),
        };
        if let Some(seed) = ov.seed {
            cfg.mix.seed = seed;
            cfg.training.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.datasets.is_empty() {
            return Err(config_err("no datasets configured"));
        }
        let mut any = false;
        for (name, ds) in &self.datasets {
            let train: BTreeSet<&String> = ds.train.iter().collect();
            if let Some(r) = ds.test.iter().find(|r| train.contains(r)) {
                return Err(config_err(format!(
                    "dataset {name}: record {r} is listed in both train and test"
                )));
            }
            if ds.format == RecordFormat::Csv && ds.fs.is_none() {
                return Err(config_err(format!("dataset {name}: csv records need `fs`")));
            }
            any |= !ds.train.is_empty() || !ds.test.is_empty();
        }
        if !any {
            return Err(config_err("record lists are empty"));
        }
        self.mix.weights().validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if !(0.0..0.5).contains(&self.split.val_fraction) {
            return Err(config_err(format!(
                "split.val_fraction {} must be in [0, 0.5)",
                self.split.val_fraction
            )));
        }
        for &(what, stride) in &[("split.train_stride", self.split.train_stride), ("eval.stride", self.eval.stride)] {
            if stride == 0 || stride > self.model.window_len {
                return Err(config_err(format!(
                    "{what} {stride} must be in 1..={}",
                    self.model.window_len
                )));
            }
        }
        if self.eval.snr_set.is_empty() {
            return Err(config_err("eval.snr_set is empty"));
        }
        if !(self.eval.tolerance_ms > 0.0) {
            return Err(config_err("eval.tolerance_ms must be positive"));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths.output_root.join("dataset")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.paths.output_root.join("train")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.paths.output_root.join("eval")
    }

    /// The resolved configuration as flat `dotted.key = value` lines.
    pub fn to_flat_toml(&self) -> anyhow::Result<String> {
        let value = Value::try_from(self)?;
        let mut lines = Vec::new();
        flatten(&value, &mut Vec::new(), &mut lines);
        let mut out = lines.join("\n");
        out.push('\n');
        Ok(out)
    }
}

fn key_part(k: &str) -> String {
    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        Value::String(k.to_string()).to_string()
    }
}

fn flatten(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<String>) {
    match v {
        Value::Table(t) => {
            for (k, child) in t {
                prefix.push(key_part(k));
                flatten(child, prefix, out);
                prefix.pop();
            }
        }
        other => out.push(format!("{} = {other}", prefix.join("."))),
    }
}
