//! Asset loading and on-disk session persistence.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use homi_core::config::{files, RunConfig, TaskKind};
use homi_core::naf::Variant;
use homi_core::nn::Network;
use homi_core::novelty::NoveltyModel;
use homi_core::optimizers::Assets;

use crate::api::SessionState;
use crate::session::{AssetStore, Event, TaskAssets};

fn load_family(cfg: &RunConfig, kind: TaskKind) -> TaskAssets {
    let dir = cfg.assets_dir(kind);
    let actor = |v: Variant| {
        let p = dir.join(files::actor(v));
        match Network::load(&p) {
            Ok(n) => Some(Arc::new(n)),
            Err(e) => {
                tracing::warn!("{}: {e}", p.display());
                None
            }
        }
    };
    let novelty_path = dir.join(files::NOVELTY_MODEL);
    let novelty = match NoveltyModel::load(&novelty_path) {
        Ok(m) => Some(Arc::new(m)),
        Err(e) => {
            tracing::warn!("{}: {e}", novelty_path.display());
            None
        }
    };
    let assets = Assets {
        actor_with_weights: actor(Variant::WithWeights),
        actor_without_weights: actor(Variant::WithoutWeights),
        novelty,
        taf_priors: None,
    };
    let train = cfg.task.build(kind, false).ok();
    TaskAssets::new(assets, train)
}

/// Loads whatever trained assets exist under the configured output
/// directory. Missing files only disable the conditions that need them.
pub fn load_assets(cfg: &RunConfig) -> AssetStore {
    AssetStore {
        sphere: load_family(cfg, TaskKind::Sphere),
        typing: load_family(cfg, TaskKind::Typing),
        optimizer: cfg.optimizer.clone(),
        seed: cfg.seed,
    }
}

/// One JSONL event log and an optional snapshot per session.
#[derive(Debug, Clone)]
pub struct Persistence {
    dir: PathBuf,
    snapshot_every: usize,
}

impl Persistence {
    pub fn new(dir: impl Into<PathBuf>, snapshot_every: usize) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, snapshot_every })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.snapshot.json"))
    }

    /// Appends events with a single write so a crash never splits an operation.
    pub fn append(&self, id: &str, events: &[Event]) -> std::io::Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(self.log_path(id))?;
        f.write_all(&buf)?;
        f.sync_data()
    }

    pub fn should_snapshot(&self, observations: usize) -> bool {
        self.snapshot_every > 0 && observations > 0 && observations % self.snapshot_every == 0
    }

    pub fn snapshot(&self, state: &SessionState) -> std::io::Result<()> {
        let tmp = self.dir.join(format!("{}.snapshot.tmp", state.id));
        fs::write(&tmp, serde_json::to_vec(state)?)?;
        fs::rename(tmp, self.snapshot_path(&state.id))
    }

    /// All event logs in the directory, keyed by session id.
    pub fn load_logs(&self) -> std::io::Result<Vec<(String, Vec<Event>)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".jsonl")) else {
                continue;
            };
            let mut events = Vec::new();
            for line in BufReader::new(fs::File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(e) => events.push(e),
                    Err(e) => {
                        tracing::warn!("{}: skipping truncated tail: {e}", path.display());
                        break;
                    }
                }
            }
            out.push((id.to_string(), events));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}
