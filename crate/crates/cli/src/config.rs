//! Run configuration: one TOML file, every key overridable from the command
//! line as `--section.key value` or `--section.key=value`.

use std::path::{Path, PathBuf};

use dcbm::cbm::{Optimizer, TrainConfig};
use dcbm::concept_bank::{BankSpec, CentroidMode, ClusterMethod, ClusteringConfig, DEFAULT_K, DEFAULT_ROW_CAP};
use dcbm::pipeline::PipelineConfig;
use dcbm::preprocess::{AreaFilter, SubsetSpec};
use dcbm::synth::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SynthSection,
    pub preprocess: Preprocess,
    pub clustering: Clustering,
    pub training: Training,
    pub removal: Removal,
    pub eval: Eval,
}

/// Unset paths fall back to conventional names inside `output_dir`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output_dir: PathBuf,
    pub proposals: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub vocab_labels: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("dcbm-out"),
            proposals: None,
            train: None,
            test: None,
            labels: None,
            bank: None,
            model: None,
            vocab: None,
            vocab_labels: None,
        }
    }
}

impl Paths {
    fn or_default(&self, set: &Option<PathBuf>, name: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.output_dir.join(name))
    }

    pub fn proposals(&self) -> PathBuf {
        self.or_default(&self.proposals, "proposals.emb")
    }

    pub fn train(&self) -> PathBuf {
        self.or_default(&self.train, "train.emb")
    }

    pub fn test(&self) -> PathBuf {
        self.or_default(&self.test, "test.emb")
    }

    pub fn labels(&self) -> PathBuf {
        self.or_default(&self.labels, "labels.json")
    }

    pub fn bank(&self) -> PathBuf {
        self.or_default(&self.bank, "bank.emb")
    }

    pub fn model(&self) -> PathBuf {
        self.or_default(&self.model, "model.emb")
    }

    pub fn projection(&self) -> PathBuf {
        self.output_dir.join("projection.json")
    }

    /// PCA fitted as part of the bank's projection.
    pub fn pca_prefix(&self) -> PathBuf {
        self.output_dir.join("bank.pca")
    }

    pub fn in_output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_classes: usize,
    pub images_per_class: usize,
    pub proposals_per_image: usize,
    pub concepts_per_class: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            n_classes: s.n_classes,
            images_per_class: s.images_per_class,
            proposals_per_image: s.proposals_per_image,
            concepts_per_class: s.concepts_per_class,
            dim: s.dim,
            class_separation: s.class_separation,
            noise_sigma: s.noise_sigma,
            seed: s.seed,
        }
    }
}

impl SynthSection {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            n_classes: self.n_classes,
            images_per_class: self.images_per_class,
            proposals_per_image: self.proposals_per_image,
            concepts_per_class: self.concepts_per_class,
            dim: self.dim,
            class_separation: self.class_separation,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    /// Images per class used for concept generation; unset keeps all.
    pub n_per_class: Option<usize>,
    pub subset_seed: u64,
    /// `"GT1000"` style preset; overrides `area_min` / `area_max`.
    pub area_preset: Option<String>,
    pub area_min: Option<u64>,
    pub area_max: Option<u64>,
    pub pca_components: Option<usize>,
    pub normalize: bool,
}

impl Preprocess {
    pub fn area_filter(&self) -> Result<AreaFilter, CliError> {
        if let Some(preset) = &self.area_preset {
            return parse_area_preset(preset);
        }
        let filter = AreaFilter::new(self.area_min.unwrap_or(0), self.area_max.unwrap_or(u64::MAX))?;
        Ok(filter)
    }
}

/// `GT<n>` keeps areas above n pixels, `LT<n>` below; `k` means thousands.
fn parse_area_preset(preset: &str) -> Result<AreaFilter, CliError> {
    let bad = || CliError::Usage(format!("area preset {preset:?}: expected GT<n> or LT<n>, e.g. GT1000 or LT200k"));
    let upper = preset.trim().to_ascii_uppercase();
    let (kind, rest) = upper.split_at_checked(2).ok_or_else(bad)?;
    let (digits, scale) = match rest.strip_suffix('K') {
        Some(d) => (d, 1000),
        None => (rest, 1),
    };
    let n: u64 = digits.parse().map_err(|_| bad())?;
    let n = n.checked_mul(scale).ok_or_else(bad)?;
    match kind {
        "GT" => Ok(AreaFilter::greater_than(n)),
        "LT" => Ok(AreaFilter::less_than(n)),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Clustering {
    pub method: ClusterMethod,
    pub k: usize,
    pub centroid_mode: CentroidMode,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub n_init: usize,
    pub agglomerative_cap: usize,
}

impl Default for Clustering {
    fn default() -> Self {
        let c = ClusteringConfig::default();
        Self {
            method: ClusterMethod::KMeans,
            k: DEFAULT_K,
            centroid_mode: CentroidMode::Median,
            seed: c.seed,
            max_iters: c.max_iters,
            tol: c.tol,
            n_init: c.n_init,
            agglomerative_cap: DEFAULT_ROW_CAP,
        }
    }
}

impl Clustering {
    pub fn bank_spec(&self) -> BankSpec {
        BankSpec {
            method: self.method,
            clustering: ClusteringConfig {
                k: self.k,
                seed: self.seed,
                max_iters: self.max_iters,
                tol: self.tol,
                n_init: self.n_init,
            },
            centroid_mode: self.centroid_mode,
            agglomerative_cap: self.agglomerative_cap,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub learning_rate: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub bias: bool,
}

impl Default for Training {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            lambda: t.lambda,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            optimizer: t.optimizer,
            bias: t.bias,
        }
    }
}

impl Training {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: self.optimizer,
            bias: self.bias,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Removal {
    /// EMB1 file whose rows are removal queries.
    pub queries: Option<PathBuf>,
    pub tau: f64,
}

impl Default for Removal {
    fn default() -> Self {
        Self { queries: None, tau: 0.9 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    /// Also fit and score a linear probe on the raw embeddings.
    pub probe: bool,
    pub top_n: usize,
    /// Threshold below which a weight counts as zero in sparsity reports.
    pub zero_threshold: f64,
}

impl Default for Eval {
    fn default() -> Self {
        Self {
            probe: false,
            top_n: 5,
            zero_threshold: 1e-6,
        }
    }
}

impl RunConfig {
    /// Reads `path` (if given), applies `overrides` and checks every section.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_dotted(&mut table, key, parse_scalar(value))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        let usage = |e: dcbm::Error| CliError::Usage(e.to_string());
        cfg.training.train_config().validate().map_err(usage)?;
        cfg.clustering.bank_spec().clustering.validate().map_err(usage)?;
        cfg.synth.spec().validate().map_err(usage)?;
        cfg.preprocess.area_filter()?;
        if cfg.preprocess.n_per_class == Some(0) {
            return Err(CliError::Usage("preprocess.n_per_class must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let subset = self
            .preprocess
            .n_per_class
            .map(|n| SubsetSpec::new(n, self.preprocess.subset_seed))
            .transpose()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(PipelineConfig {
            subset,
            area: self.preprocess.area_filter()?,
            pca_components: self.preprocess.pca_components,
            normalize: self.preprocess.normalize,
            bank: self.clustering.bank_spec(),
            train: self.training.train_config(),
        })
    }
}

/// Integers, floats and booleans keep their type; anything else is a string.
fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(v) = raw.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return toml::Value::Float(v);
    }
    match raw {
        "true" => toml::Value::Boolean(true),
        "false" => toml::Value::Boolean(false),
        _ => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed override key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut current = table;
    for section in sections {
        current = current
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key:?}: {section} is not a section")))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

pub type Overrides = Vec<(String, String)>;

/// Pulls `--a.b value` and `--a.b=value` pairs out of argv; a dot in the flag
/// name marks a config override.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|n| n.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let value = iter
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("override --{flag} needs a value")))?;
                overrides.push((flag.to_string(), value));
            }
        }
    }
    Ok((rest, overrides))
}
