//! Run configuration: a TOML file layered under environment variables and
//! command-line flags.
//!
//! The `[train]` table is merged over the named profile, so a file only
//! needs the keys it changes. Flags and `SCAFFOLD_*` variables are resolved
//! together by clap (flag wins) and applied last.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scaffold_core::grader::{LlmJudge, LlmSettings, MockTable, Transcript};
use scaffold_core::metrics::{Embedder, EmbeddingSettings, HashNgramEmbedder, HttpEmbedder, DEFAULT_HASH_DIM};
use scaffold_core::{DecayFamily, Grader, GraderBackend, IntraGroupMode, SynthTaskSpec, TrainConfig};

/// Invalid configuration or input, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Mock,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraderSettings {
    pub backend: BackendKind,
    /// In-flight per-criterion calls.
    pub parallelism: usize,
    /// JSON array of `{task_id, criterion_id, criteria_met}` for `mock`.
    pub mock_table: Option<PathBuf>,
    /// Judge transcript replayed as a mock table.
    pub mock_transcript: Option<PathBuf>,
    pub llm: LlmSettings,
}

impl Default for GraderSettings {
    fn default() -> Self {
        Self {
            backend: BackendKind::Oracle,
            parallelism: 8,
            mock_table: None,
            mock_transcript: None,
            llm: LlmSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSettings {
    pub backend: EmbedderKind,
    pub dim: usize,
    pub http: EmbeddingSettings,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            backend: EmbedderKind::Hash,
            dim: DEFAULT_HASH_DIM,
            http: EmbeddingSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base hyperparameters for `[train]`: `desk` or `paper`.
    pub profile: String,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    /// Generate the dataset instead of reading one. Its seed is ignored in
    /// favour of the run seed.
    pub synthetic: Option<SynthTaskSpec>,
    pub out: Option<PathBuf>,
    /// Checkpoint every this many steps; 0 keeps only the initial and final.
    pub checkpoint_every: usize,
    pub train: TrainConfig,
    pub grader: GraderSettings,
    pub embedder: EmbedderSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: "desk".into(),
            seed: None,
            dataset: None,
            synthetic: None,
            out: None,
            checkpoint_every: 50,
            train: TrainConfig::desk(),
            grader: GraderSettings::default(),
            embedder: EmbedderSettings::default(),
        }
    }
}

/// Flag and environment overrides, already merged by clap.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true, env = "SCAFFOLD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "SCAFFOLD_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "SCAFFOLD_GRADER", value_enum)]
    pub grader: Option<BackendKind>,
    /// LLM judge base URL.
    #[arg(long, global = true, env = "SCAFFOLD_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, global = true, env = "SCAFFOLD_MODEL")]
    pub model: Option<String>,
    /// sigmoid[:ALPHA:T0], constant, linear or power:N.
    #[arg(long, global = true, env = "SCAFFOLD_DECAY")]
    pub decay: Option<String>,
    #[arg(long, global = true, env = "SCAFFOLD_ALPHA")]
    pub alpha: Option<f64>,
    #[arg(long, global = true, env = "SCAFFOLD_T0")]
    pub t0: Option<f64>,
    /// linear or binary:N.
    #[arg(long, global = true, env = "SCAFFOLD_INTRA")]
    pub intra: Option<String>,
    #[arg(long, global = true, env = "SCAFFOLD_GROUP_SIZE")]
    pub group_size: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "SCAFFOLD_OUT")]
    pub out: Option<PathBuf>,
    /// Rubric dataset (JSONL).
    #[arg(long, global = true, env = "SCAFFOLD_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Hyperparameter profile: desk or paper.
    #[arg(long, global = true, env = "SCAFFOLD_PROFILE")]
    pub profile: Option<String>,
    /// Mock verdict table for `--grader mock`.
    #[arg(long, global = true, env = "SCAFFOLD_MOCK_TABLE")]
    pub mock_table: Option<PathBuf>,
}

pub fn parse_decay(s: &str) -> anyhow::Result<DecayFamily> {
    let s = s.trim().to_ascii_lowercase();
    let mut parts = s.split(':');
    let kind = parts.next().unwrap_or_default();
    let nums = parts
        .map(|p| p.parse::<f64>().map_err(|_| config_err(format!("bad number `{p}` in decay `{s}`"))))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    let decay = match (kind, nums.as_slice()) {
        ("sigmoid", []) => DecayFamily::default(),
        ("sigmoid", [alpha, t0]) => DecayFamily::Sigmoid { alpha: *alpha, t0: *t0 },
        ("constant", []) => DecayFamily::Constant,
        ("linear", []) => DecayFamily::Linear,
        ("power", [n]) => DecayFamily::Power { n: *n },
        _ => {
            return Err(config_err(format!(
                "unknown decay `{s}` (expected sigmoid[:ALPHA:T0], constant, linear or power:N)"
            )))
        }
    };
    decay.validate()?;
    Ok(decay)
}

pub fn parse_intra(s: &str) -> anyhow::Result<IntraGroupMode> {
    Ok(s.parse::<IntraGroupMode>()?)
}

/// Replaces sigmoid parameters, keeping the other one.
pub fn with_sigmoid(decay: DecayFamily, alpha: Option<f64>, t0: Option<f64>) -> anyhow::Result<DecayFamily> {
    if alpha.is_none() && t0.is_none() {
        return Ok(decay);
    }
    let DecayFamily::Sigmoid { alpha: a, t0: t } = decay else {
        return Err(config_err(format!(
            "--alpha/--t0 apply only to sigmoid decay, not {}",
            decay.label()
        )));
    };
    Ok(DecayFamily::Sigmoid {
        alpha: alpha.unwrap_or(a),
        t0: t0.unwrap_or(t),
    })
}

/// Deep-merges `over` into `base`; tables merge, everything else replaces.
/// Tables whose `kind` differs are replaced whole, so switching an enum
/// variant does not inherit the old variant's fields.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o))
                if o.get("kind").is_none() || o.get("kind") == b.get("kind") =>
            {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn profile_table(name: &str) -> anyhow::Result<toml::Table> {
    let cfg = TrainConfig::profile(name)?;
    match toml::Value::try_from(cfg)? {
        toml::Value::Table(t) => Ok(t),
        _ => unreachable!("a struct serializes to a table"),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, profile_override: Option<&str>) -> anyhow::Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
        let profile = match profile_override {
            Some(p) => p.to_string(),
            None => match table.get("profile") {
                Some(toml::Value::String(p)) => p.clone(),
                Some(_) => return Err(config_err("config: profile must be a string")),
                None => "desk".into(),
            },
        };
        let mut train = profile_table(&profile)?;
        if let Some(v) = table.remove("train") {
            let toml::Value::Table(t) = v else {
                return Err(config_err("config: [train] must be a table"));
            };
            merge(&mut train, t);
        }
        table.insert("train".into(), toml::Value::Table(train));
        table.insert("profile".into(), toml::Value::String(profile));
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(format!("config: {e}")))
    }

    /// Reads the config file (if any) and applies overrides.
    pub fn resolve(o: &Overrides) -> anyhow::Result<Self> {
        let text = match &o.config {
            Some(path) => fs::read_to_string(path)
                .map_err(|e| config_err(format!("reading config {}: {e}", path.display())))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml(&text, o.profile.as_deref())?;
        cfg.apply(o)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> anyhow::Result<()> {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(g) = o.grader {
            self.grader.backend = g;
        }
        if let Some(e) = &o.endpoint {
            self.grader.llm.endpoint = e.clone();
        }
        if let Some(m) = &o.model {
            self.grader.llm.model = m.clone();
        }
        if let Some(d) = &o.decay {
            self.train.scaffold.decay = parse_decay(d)?;
        }
        self.train.scaffold.decay = with_sigmoid(self.train.scaffold.decay, o.alpha, o.t0)?;
        self.train.scaffold.decay.validate()?;
        if let Some(i) = &o.intra {
            self.train.scaffold.intra = parse_intra(i)?;
        }
        if let Some(g) = o.group_size {
            self.train.group_size = g;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if o.dataset.is_some() {
            self.dataset = o.dataset.clone();
        }
        if o.mock_table.is_some() {
            self.grader.mock_table = o.mock_table.clone();
        }
        if let Some(seed) = self.seed {
            self.train.seed = seed;
        }
        Ok(())
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        self.seed
            .ok_or_else(|| config_err("a seed is required (--seed, SCAFFOLD_SEED or `seed` in the config)"))
    }

    pub fn out_dir(&self, command: &str) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(command))
    }

    /// Checks everything a training run needs before any compute.
    pub fn validate_for_training(&self) -> anyhow::Result<()> {
        self.seed()?;
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => return Err(config_err("set either `dataset` or `[synthetic]`, not both")),
            (None, None) => return Err(config_err("no dataset: pass --dataset or add a `[synthetic]` table")),
            (Some(p), None) => require_file(p, "dataset")?,
            (None, Some(spec)) => spec.validate()?,
        }
        self.train.validate()?;
        self.validate_grader()
    }

    pub fn validate_grader(&self) -> anyhow::Result<()> {
        if self.grader.parallelism == 0 {
            return Err(config_err("grader parallelism must be at least 1"));
        }
        match self.grader.backend {
            BackendKind::Oracle => {}
            BackendKind::Mock => match (&self.grader.mock_table, &self.grader.mock_transcript) {
                (Some(p), _) => require_file(p, "mock table")?,
                (None, Some(p)) => require_file(p, "mock transcript")?,
                (None, None) => {
                    return Err(config_err("mock grader needs `grader.mock_table` or `grader.mock_transcript`"))
                }
            },
            BackendKind::Llm => self.grader.llm.validate()?,
        }
        Ok(())
    }

    /// Tasks from the dataset file or the synthetic generator.
    pub fn load_tasks(&self) -> anyhow::Result<Vec<scaffold_core::RubricTask>> {
        if let Some(spec) = &self.synthetic {
            let spec = SynthTaskSpec {
                seed: self.seed()?,
                ..spec.clone()
            };
            return Ok(scaffold_core::synthenv::generate_tasks(&spec)?);
        }
        let path = self
            .dataset
            .as_ref()
            .ok_or_else(|| config_err("no dataset: pass --dataset"))?;
        require_file(path, "dataset")?;
        scaffold_core::dataset::load_dataset(path)
            .map_err(|e| config_err(format!("dataset {}: {e}", path.display())))
    }

    /// Builds the grader. LLM calls are transcribed to `transcript` when given.
    pub fn grader(&self, transcript: Option<&Path>) -> anyhow::Result<Grader> {
        let backend = match self.grader.backend {
            BackendKind::Oracle => GraderBackend::Oracle,
            BackendKind::Mock => {
                let table = match (&self.grader.mock_table, &self.grader.mock_transcript) {
                    (Some(p), _) => MockTable::load(p)?,
                    (None, Some(p)) => MockTable::from_transcript(p)?,
                    (None, None) => return Err(config_err("mock grader needs a table")),
                };
                GraderBackend::Mock(table)
            }
            BackendKind::Llm => {
                let t = transcript.map(Transcript::create).transpose()?;
                GraderBackend::Llm(LlmJudge::new(self.grader.llm.clone(), t)?)
            }
        };
        Ok(Grader::new(backend, self.grader.parallelism)?)
    }

    pub fn embedder(&self) -> anyhow::Result<Box<dyn Embedder>> {
        Ok(match self.embedder.backend {
            EmbedderKind::Hash => {
                if self.embedder.dim == 0 {
                    return Err(config_err("embedder dim must be positive"));
                }
                Box::new(HashNgramEmbedder { dim: self.embedder.dim })
            }
            EmbedderKind::Http => Box::new(HttpEmbedder::new(&self.embedder.http)?),
        })
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the resolved config into `dir` as `config.toml`.
    pub fn persist(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir)?;
        let resolved = Self {
            out: Some(dir.to_path_buf()),
            ..self.clone()
        };
        fs::write(dir.join("config.toml"), resolved.to_toml()?)?;
        Ok(())
    }
}

pub fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(config_err(format!("{what} not found: {}", path.display())))
    }
}
