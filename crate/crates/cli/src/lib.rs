//! Pipelines behind the `homi` subcommands: training assets, running
//! benchmarks and one-off simulations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use homi_core::bench::{self, ExperimentResult, TestId};
use homi_core::config::{files, RunConfig, TaskKind};
use homi_core::design_space::{make_grid, validate_weights, DesignGrid};
use homi_core::naf::Variant;
use homi_core::nn::Network;
use homi_core::novelty::{self, NoveltyModel};
use homi_core::optimizers::{build_taf_priors, Assets, Condition};
use homi_core::ppo::{self, PpoConfig};
use homi_core::seed;
use homi_core::users::{typing, Corpus, KeyboardDesign, SphereUser, Task, TypistPopulation};
use homi_core::Error;

pub const MANIFEST_FORMAT: &str = "homi-manifest/1";

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSET: i32 = 3;
pub const EXIT_ENVIRONMENT: i32 = 4;

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: m.into(),
        }
    }

    pub fn asset(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_ASSET,
            message: m.into(),
        }
    }

    pub fn environment(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_ENVIRONMENT,
            message: m.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => EXIT_ENVIRONMENT,
            Error::Config(_)
            | Error::InvalidSpace(_)
            | Error::InvalidResolution(_)
            | Error::InvalidWeights(_)
            | Error::InvalidKey(_)
            | Error::InvalidSentence(_)
            | Error::InvalidSigma(_)
            | Error::InvalidP(_)
            | Error::BoundsViolation(_) => EXIT_CONFIG,
            _ => EXIT_ASSET,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::environment(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

/// Records the files a command produced, with digests, next to them.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, produced: &[PathBuf]) -> CliResult<PathBuf> {
    let mut entries = Vec::new();
    for p in produced {
        let bytes = std::fs::read(p)?;
        entries.push(ManifestEntry {
            path: p.strip_prefix(dir).unwrap_or(p).display().to_string(),
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        });
    }
    let doc = serde_json::json!({
        "format": MANIFEST_FORMAT,
        "command": command,
        "config_hash": cfg.hash()?,
        "files": entries,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&doc).map_err(Error::from)?)?;
    Ok(path)
}

/// Search grid shared by training, benchmarking and serving.
pub fn task_grid(task: &Task, cfg: &RunConfig) -> CliResult<Arc<DesignGrid>> {
    let space = task.space();
    Ok(Arc::new(make_grid(&space, &vec![cfg.ppo.grid_resolution; space.dims()])?))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Mean episode return over the first and last quarter of training, per variant.
    pub returns: Vec<(String, f64, f64)>,
}

fn quartile_means(curve: &[ppo::CurvePoint]) -> (f64, f64) {
    let q = (curve.len() / 4).max(1);
    let mean = |s: &[ppo::CurvePoint]| s.iter().map(|p| p.mean_return).sum::<f64>() / s.len().max(1) as f64;
    (mean(&curve[..q.min(curve.len())]), mean(&curve[curve.len().saturating_sub(q)..]))
}

/// Trains both actor variants and the novelty detector for `kind`, writing
/// every asset under `cfg.assets_dir(kind)`.
pub fn train_assets(cfg: &RunConfig, kind: TaskKind, mut log: impl FnMut(&str)) -> CliResult<TrainReport> {
    let task = cfg.task.build(kind, false)?;
    let dir = cfg.assets_dir(kind);
    std::fs::create_dir_all(&dir)?;
    let hash = cfg.hash()?;
    let mut produced = vec![cfg.write_echo(&dir)?];
    let mut returns = Vec::new();
    let mut dataset = Vec::new();
    for variant in [Variant::WithWeights, Variant::WithoutWeights] {
        let pc = PpoConfig {
            variant,
            ..cfg.ppo.clone()
        };
        log(&format!("training {} actor ({variant:?}), {} steps", kind.as_str(), pc.total_steps));
        let every = (pc.num_updates() / 10).max(1);
        let mut n = 0;
        let out = ppo::train(&task, &pc, cfg.seed, |p| {
            n += 1;
            if n % every == 0 {
                log(&format!("  step {:>6}  mean return {:>8.3}", p.step, p.mean_return));
            }
        })?;
        let actor = dir.join(files::actor(variant));
        out.learner.actor.save(&actor, &hash)?;
        let curve = dir.join(files::curve(variant));
        ppo::write_curve(&curve, &out.curve)?;
        produced.extend([actor, curve]);
        if let Some(reason) = out.failure {
            write_manifest(&dir, "train", cfg, &produced)?;
            return Err(CliError::asset(format!("training stopped ({reason}); last good actor kept")));
        }
        let (first, last) = quartile_means(&out.curve);
        returns.push((format!("{variant:?}"), first, last));
        if variant == Variant::WithWeights {
            dataset = out.dataset;
        }
    }
    let ds = dir.join(files::NOVELTY_DATASET);
    novelty::write_dataset(&ds, &dataset)?;
    log(&format!("training novelty detector on {} rows, {} epochs", dataset.len(), cfg.novelty.epochs));
    let model = novelty::train_novelty(&dataset, &task.space(), &cfg.novelty, cfg.seed)?;
    let mp = dir.join(files::NOVELTY_MODEL);
    model.save(&mp)?;
    produced.extend([ds, mp]);
    write_manifest(&dir, "train", cfg, &produced)?;
    Ok(TrainReport {
        dir,
        files: produced,
        returns,
    })
}

/// Loads the assets the given conditions need; anything missing is an asset error.
pub fn load_assets(cfg: &RunConfig, kind: TaskKind, conditions: &[Condition]) -> CliResult<Assets> {
    let dir = cfg.assets_dir(kind);
    let actor = |v: Variant| -> CliResult<Arc<Network>> {
        let p = dir.join(files::actor(v));
        Network::load(&p)
            .map(Arc::new)
            .map_err(|e| CliError::asset(format!("{}: {e} (run `homi train` first)", p.display())))
    };
    let mut assets = Assets::default();
    for &c in conditions {
        match c.variant() {
            Some(Variant::WithWeights) if assets.actor_with_weights.is_none() => assets.actor_with_weights = Some(actor(Variant::WithWeights)?),
            Some(Variant::WithoutWeights) if assets.actor_without_weights.is_none() => {
                assets.actor_without_weights = Some(actor(Variant::WithoutWeights)?)
            }
            _ => {}
        }
        if c.uses_novelty() && assets.novelty.is_none() {
            let p = dir.join(files::NOVELTY_MODEL);
            assets.novelty = Some(Arc::new(
                NoveltyModel::load(&p).map_err(|e| CliError::asset(format!("{}: {e} (run `homi train` first)", p.display())))?,
            ));
        }
    }
    Ok(assets)
}

fn kind_of(test: TestId, cfg: &RunConfig) -> TaskKind {
    match test {
        TestId::Custom => cfg.task.kind,
        t if t.is_typing() => TaskKind::Typing,
        _ => TaskKind::Sphere,
    }
}

/// Runs the configured experiment and writes its CSV exports.
pub fn run_bench(cfg: &RunConfig, mut log: impl FnMut(&str)) -> CliResult<(ExperimentResult, PathBuf)> {
    let test = cfg.experiment.test;
    let kind = kind_of(test, cfg);
    let task = cfg.task.test_task(test)?;
    let grid = task_grid(&task, cfg)?;
    let conditions = cfg.experiment.resolved_conditions();
    let mut assets = load_assets(cfg, kind, &conditions)?;
    if conditions.contains(&Condition::Taf) {
        log("building taf prior library");
        let train = cfg.task.build(kind, false)?;
        assets.taf_priors = Some(Arc::new(build_taf_priors(&train, grid.clone(), &cfg.optimizer.taf, cfg.seed)?));
    }
    log(&format!(
        "running test {} ({} users x {} seeds x {} conditions)",
        test.as_str(),
        cfg.experiment.n_users,
        cfg.experiment.seeds.len(),
        conditions.len()
    ));
    let result = bench::run_experiment(&cfg.experiment, &cfg.optimizer, &task, grid, &assets)?;
    let dir = cfg.output_dir.join("bench").join(test.as_str());
    bench::export(&result, &dir)?;
    let mut produced = vec![cfg.write_echo(&dir)?];
    produced.extend(["regret.csv", "summary.csv", "histories.csv"].map(|f| dir.join(f)));
    write_manifest(&dir, "bench", cfg, &produced)?;
    Ok((result, dir))
}

/// Which synthetic user a simulation evaluates.
#[derive(Debug, Clone)]
pub enum SimUser {
    Sphere(SphereUser),
    /// Mean member of a named or explicit population, or a sampled one when
    /// `sample` is set.
    Typist { population: TypistPopulation, sample: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum SimOutput {
    Sphere {
        x: Vec<f64>,
        weights: Vec<f64>,
        objectives: Vec<f64>,
        y: f64,
    },
    Typing {
        x: Vec<f64>,
        weights: Vec<f64>,
        sentences: usize,
        wpm: f64,
        error_rate: f64,
        speed: f64,
        accuracy: f64,
        y: f64,
    },
}

/// One-off evaluation of a synthetic user at a design.
pub fn simulate(user: &SimUser, x: &[f64], weights: &[f64], sentences: usize, corpus: &Corpus, seed_value: u64) -> CliResult<SimOutput> {
    let w = validate_weights(weights)?;
    match user {
        SimUser::Sphere(u) => {
            let v = u.eval(x, &w)?;
            Ok(SimOutput::Sphere {
                x: x.to_vec(),
                weights: w.as_slice().to_vec(),
                objectives: u.objectives(x)?.to_vec(),
                y: v.y,
            })
        }
        SimUser::Typist { population, sample } => {
            if x.len() != 2 {
                return Err(CliError::config("keyboard designs are (key width, key height)"));
            }
            if sentences == 0 {
                return Err(CliError::config("at least one sentence is required"));
            }
            let u = if *sample {
                population.sample_one(&mut seed::child_rng(seed_value, &[seed::tag::POPULATION]))
            } else {
                population.mean_user()
            };
            let kb = KeyboardDesign::new(x[0], x[1])?;
            let mut rng = seed::child_rng(seed_value, &[seed::tag::SENTENCE]);
            let (mut wpm, mut err) = (0.0, 0.0);
            for i in 0..sentences {
                let s = corpus.request(&mut rng);
                let out = typing::type_sentence(&u, &kb, &s, seed::derive(seed_value, &[seed::tag::EVALUATION, i as u64]))?;
                wpm += out.wpm;
                err += out.error_rate;
            }
            wpm /= sentences as f64;
            err /= sentences as f64;
            Ok(SimOutput::Typing {
                x: x.to_vec(),
                weights: w.as_slice().to_vec(),
                sentences,
                wpm,
                error_rate: err,
                speed: typing::speed_score(wpm),
                accuracy: typing::accuracy_score(err),
                y: typing::objective(wpm, err, &w)?,
            })
        }
    }
}
