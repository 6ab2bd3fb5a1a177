//! Run configuration shared by every command.
//!
//! A TOML file is layered over the defaults of the selected profile; keys
//! that do not belong to the schema are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{ExperimentConfig, TestId};
use crate::error::{Error, Result};
use crate::naf::Variant;
use crate::novelty::NoveltyConfig;
use crate::optimizers::OptimizerConfig;
use crate::ppo::PpoConfig;
use crate::users::{Corpus, SpherePopulation, Task, TypistPopulation};

pub const ECHO_FORMAT: &str = "homi-config/1";
pub const OUTPUT_ENV: &str = "HOMI_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    /// Reduced training budget for continuous integration.
    Ci,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "ci" => Ok(Self::Ci),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Sphere,
    Typing,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Typing => "typing",
        }
    }
}

/// A named typist population or explicit parameter distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PopulationSpec {
    Named(String),
    Explicit(TypistPopulation),
}

impl PopulationSpec {
    pub fn resolve(&self) -> Result<TypistPopulation> {
        match self {
            Self::Named(n) => TypistPopulation::named(n),
            Self::Explicit(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub sphere_train: SpherePopulation,
    pub sphere_novel: SpherePopulation,
    pub typist_train: PopulationSpec,
    pub typist_novel: PopulationSpec,
    /// Sentence file, one lowercase sentence per line; bundled corpus if unset.
    pub corpus: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Sphere,
            sphere_train: SpherePopulation::training(),
            sphere_novel: SpherePopulation::novel(),
            typist_train: PopulationSpec::Named("appendix-train".into()),
            typist_novel: PopulationSpec::Named("appendix-novel".into()),
            corpus: None,
        }
    }
}

impl TaskConfig {
    fn corpus(&self) -> Result<Arc<Corpus>> {
        Ok(Arc::new(match &self.corpus {
            Some(p) => Corpus::load(p)?,
            None => Corpus::bundled(),
        }))
    }

    pub fn build(&self, kind: TaskKind, novel: bool) -> Result<Task> {
        let task = match kind {
            TaskKind::Sphere => Task::Sphere(if novel { self.sphere_novel.clone() } else { self.sphere_train.clone() }),
            TaskKind::Typing => Task::Typing {
                population: if novel { &self.typist_novel } else { &self.typist_train }.resolve()?,
                corpus: self.corpus()?,
            },
        };
        task.validate()?;
        Ok(task)
    }

    /// The configured task on its training population.
    pub fn train_task(&self) -> Result<Task> {
        self.build(self.kind, false)
    }

    /// Test population for an experiment id; `custom` uses the configured kind.
    pub fn test_task(&self, test: TestId) -> Result<Task> {
        match test {
            TestId::Custom => self.build(self.kind, false),
            t => self.build(
                if t.is_typing() { TaskKind::Typing } else { TaskKind::Sphere },
                t.is_novel(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Session event logs; `<output_dir>/sessions` when unset.
    pub sessions_dir: Option<PathBuf>,
    /// Directory served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Observations between snapshots.
    pub snapshot_every: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            sessions_dir: None,
            static_dir: None,
            snapshot_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub task: TaskConfig,
    pub ppo: PpoConfig,
    pub novelty: NoveltyConfig,
    pub optimizer: OptimizerConfig,
    pub experiment: ExperimentConfig,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Full)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = Self {
            profile,
            seed: 0,
            output_dir: PathBuf::from("homi-out"),
            task: TaskConfig::default(),
            ppo: PpoConfig::default(),
            novelty: NoveltyConfig::default(),
            optimizer: OptimizerConfig::default(),
            experiment: ExperimentConfig::default(),
            service: ServiceConfig::default(),
        };
        if profile == Profile::Ci {
            cfg.ppo.total_steps = 8_000;
            cfg.novelty.epochs = 30;
        }
        cfg
    }

    /// Parses TOML text layered over the profile defaults. `profile`
    /// overrides the file's own `profile` key.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let chosen = match (profile, file.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => Profile::parse(v.as_str().ok_or_else(|| Error::Config("profile must be a string".into()))?)?,
            (None, None) => Profile::Full,
        };
        let base = toml::Table::try_from(Self::for_profile(chosen)).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = base;
        merge(&mut merged, file);
        merged.insert("profile".into(), toml::Value::String(format!("{chosen:?}").to_lowercase()));
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml(&text, profile)?;
        if let Ok(dir) = std::env::var(OUTPUT_ENV) {
            if !dir.is_empty() {
                cfg.output_dir = PathBuf::from(dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.optimizer.budget != self.ppo.budget {
            return Err(Error::Config(format!(
                "optimizer budget {} differs from the training budget {}",
                self.optimizer.budget, self.ppo.budget
            )));
        }
        if !(self.optimizer.fallback.tau > 0.0 && self.optimizer.fallback.tau <= 1.0) {
            return Err(Error::Config("tau must lie in (0, 1]".into()));
        }
        if self.novelty.mc_passes < 2 {
            return Err(Error::Config("novelty needs at least two MC passes".into()));
        }
        Ok(())
    }

    /// Directory holding the trained assets for a task kind.
    pub fn assets_dir(&self, kind: TaskKind) -> PathBuf {
        self.output_dir.join(kind.as_str())
    }

    pub fn echo(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "format": ECHO_FORMAT,
            "config": serde_json::to_value(self)?,
        }))
    }

    /// SHA-256 over the canonical JSON of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&serde_json::to_value(self)?)?;
        Ok(format!("{:x}", Sha256::digest(bytes)))
    }

    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let p = dir.join("config_echo.json");
        std::fs::write(&p, serde_json::to_vec_pretty(&self.echo()?)?)?;
        Ok(p)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// File names of the trained assets inside an assets directory.
pub mod files {
    use super::Variant;

    pub fn actor(variant: Variant) -> &'static str {
        match variant {
            Variant::WithWeights => "actor_with_weights.json",
            Variant::WithoutWeights => "actor_without_weights.json",
        }
    }

    pub fn curve(variant: Variant) -> &'static str {
        match variant {
            Variant::WithWeights => "curve_with_weights.csv",
            Variant::WithoutWeights => "curve_without_weights.csv",
        }
    }

    pub const NOVELTY_MODEL: &str = "novelty.json";
    pub const NOVELTY_DATASET: &str = "novelty_dataset.csv";
}
