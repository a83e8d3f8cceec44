//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use iurkit::datamodel::DataFormat;
use iurkit::querygen::RelationLabels;
use iurkit::scoring::{Dtype, EncoderMode, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Decoding thresholds used for the four benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaPreset {
    Rewrite,
    Task,
    Restoration,
    Canard,
}

impl ThetaPreset {
    pub fn theta(self) -> f64 {
        match self {
            ThetaPreset::Rewrite | ThetaPreset::Task => 0.1,
            ThetaPreset::Restoration | ThetaPreset::Canard => 0.05,
        }
    }
}

/// How training-time query templates are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// Same lexicon + parse procedure as inference.
    #[default]
    Predicted,
    /// Coreference markers at the gold substitution intervals.
    Gold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Jsonl,
    Tsv,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => DataFormat::CanonicalJsonl,
            Format::Tsv => DataFormat::TabSeparated,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    mode: Option<EncoderMode>,
    d_model: Option<usize>,
    d_head: Option<usize>,
    heads: Option<usize>,
    mixer: Option<bool>,
    d_ff: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    seed: Option<u64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    include_partial: Option<bool>,
    dtype: Option<Dtype>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelSection {
    subject: Option<BTreeSet<String>>,
    object: Option<BTreeSet<String>>,
}

/// The TOML file layout; every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    format: Option<Format>,
    lexicon: Option<PathBuf>,
    verbs: Option<PathBuf>,
    parses: Option<PathBuf>,
    model: Option<PathBuf>,
    vectors: Option<PathBuf>,
    unify_markers: Option<bool>,
    query_mode: Option<QueryMode>,
    theta: Option<f64>,
    preset: Option<ThetaPreset>,
    workers: Option<usize>,
    #[serde(default)]
    network: NetworkSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    labels: LabelSection,
}

/// Fully resolved settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub format: Format,
    pub lexicon: Option<PathBuf>,
    pub verbs: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub unify_markers: bool,
    pub query_mode: QueryMode,
    pub theta: f64,
    pub workers: Option<usize>,
    pub labels: RelationLabels,
    pub network: ModelConfig,
    pub train: TrainConfig,
    pub include_partial: bool,
    pub dtype: Dtype,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            format: Format::Jsonl,
            lexicon: None,
            verbs: None,
            parses: None,
            model: None,
            vectors: None,
            unify_markers: true,
            query_mode: QueryMode::Predicted,
            theta: ThetaPreset::Rewrite.theta(),
            workers: None,
            labels: RelationLabels::default(),
            network: ModelConfig::default(),
            train: TrainConfig::default(),
            include_partial: false,
            dtype: Dtype::F32,
        }
    }
}

/// Values given on the command line; `None` leaves the file/default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub format: Option<Format>,
    pub lexicon: Option<PathBuf>,
    pub verbs: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub unify: Option<bool>,
    pub query_mode: Option<QueryMode>,
    pub theta: Option<f64>,
    pub preset: Option<ThetaPreset>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

impl RunConfig {
    /// Paths in the file are relative to the file's directory.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let f: FileConfig = toml::from_str(text).context("invalid configuration file")?;
        let mut c = RunConfig::default();
        let path = |p: Option<PathBuf>| p.map(|p| resolve(base, p));
        c.data = path(f.data);
        c.lexicon = path(f.lexicon);
        c.verbs = path(f.verbs);
        c.parses = path(f.parses);
        c.model = path(f.model);
        c.vectors = path(f.vectors);
        if let Some(v) = f.format {
            c.format = v;
        }
        if let Some(v) = f.unify_markers {
            c.unify_markers = v;
        }
        if let Some(v) = f.query_mode {
            c.query_mode = v;
        }
        if let Some(p) = f.preset {
            c.theta = p.theta();
        }
        if let Some(t) = f.theta {
            c.theta = t;
        }
        c.workers = f.workers;

        let n = f.network;
        let net = &mut c.network;
        net.mode = n.mode.unwrap_or(net.mode);
        net.d_model = n.d_model.unwrap_or(net.d_model);
        net.d_head = n.d_head.unwrap_or(net.d_head);
        net.heads = n.heads.unwrap_or(net.heads);
        net.mixer = n.mixer.unwrap_or(net.mixer);
        net.d_ff = n.d_ff.unwrap_or(net.d_ff);

        let t = f.train;
        let tr = &mut c.train;
        tr.learning_rate = t.learning_rate.unwrap_or(tr.learning_rate);
        tr.batch_size = t.batch_size.unwrap_or(tr.batch_size);
        tr.epochs = t.epochs.unwrap_or(tr.epochs);
        tr.seed = t.seed.unwrap_or(tr.seed);
        tr.beta1 = t.beta1.unwrap_or(tr.beta1);
        tr.beta2 = t.beta2.unwrap_or(tr.beta2);
        tr.eps = t.eps.unwrap_or(tr.eps);
        c.include_partial = t.include_partial.unwrap_or(false);
        c.dtype = t.dtype.unwrap_or_default();

        if let Some(s) = f.labels.subject {
            c.labels.subject = s;
        }
        if let Some(o) = f.labels.object {
            c.labels.object = o;
        }
        Ok(c)
    }

    pub fn load(config: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut c = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                Self::from_toml(&text, p.parent().unwrap_or(Path::new(".")))?
            }
            None => RunConfig::default(),
        };
        c.apply(o);
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        set(&mut self.data, &o.data);
        set(&mut self.lexicon, &o.lexicon);
        set(&mut self.verbs, &o.verbs);
        set(&mut self.parses, &o.parses);
        set(&mut self.model, &o.model);
        set(&mut self.vectors, &o.vectors);
        if let Some(v) = o.format {
            self.format = v;
        }
        if let Some(v) = o.unify {
            self.unify_markers = v;
        }
        if let Some(v) = o.query_mode {
            self.query_mode = v;
        }
        if let Some(p) = o.preset {
            self.theta = p.theta();
        }
        if let Some(t) = o.theta {
            self.theta = t;
        }
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(lr) = o.learning_rate {
            self.train.learning_rate = lr;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        self.train.theta_decode = self.theta;
    }

    pub fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() {
            bail!("theta must be finite");
        }
        if self.workers == Some(0) {
            bail!("--workers must be at least 1");
        }
        for p in [&self.data, &self.lexicon, &self.verbs, &self.parses, &self.vectors].into_iter().flatten() {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        self.network.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().context("no dataset given (use --data or `data` in the config)")
    }

    pub fn model_path(&self) -> Result<&Path> {
        self.model.as_deref().context("no model path given (use --model or `model` in the config)")
    }
}
