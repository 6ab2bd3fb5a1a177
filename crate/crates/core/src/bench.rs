//! Experiment harness: runs conditions over a test population, converts run
//! histories to log-regret and aggregates per-iteration quartiles.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignGrid, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::optimizers::{run_condition, Assets, Condition, Optimizer, OptimizerConfig, RunHistory};
use crate::seed::{self, tag};
use crate::stats::quantile;
use crate::users::{ReferenceConfig, Task, User};

pub const LOG_REGRET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestId {
    #[serde(rename = "1.1")]
    SphereTrain,
    #[serde(rename = "1.2")]
    SphereNovel,
    #[serde(rename = "2.1")]
    TypingTrain,
    #[serde(rename = "2.2")]
    TypingNovel,
    #[serde(rename = "custom")]
    Custom,
}

impl TestId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1.1" => Ok(Self::SphereTrain),
            "1.2" => Ok(Self::SphereNovel),
            "2.1" => Ok(Self::TypingTrain),
            "2.2" => Ok(Self::TypingNovel),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Config(format!("unknown test id {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SphereTrain => "1.1",
            Self::SphereNovel => "1.2",
            Self::TypingTrain => "2.1",
            Self::TypingNovel => "2.2",
            Self::Custom => "custom",
        }
    }

    /// Whether the test population lies outside the training distribution.
    pub fn is_novel(self) -> bool {
        matches!(self, Self::SphereNovel | Self::TypingNovel)
    }

    pub fn is_typing(self) -> bool {
        matches!(self, Self::TypingTrain | Self::TypingNovel)
    }

    /// In-distribution tests ablate the weight input; out-of-distribution
    /// tests ablate the EI fallback.
    pub fn default_conditions(self) -> Vec<Condition> {
        let ablation = if self.is_novel() {
            Condition::NafWithoutEi
        } else {
            Condition::NafWithoutWeight
        };
        vec![Condition::NafPlus, ablation, Condition::StandardBo, Condition::Taf]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub test: TestId,
    /// Conditions to run; the test's defaults when absent.
    pub conditions: Option<Vec<Condition>>,
    pub n_users: usize,
    pub seeds: Vec<u64>,
    pub population_seed: u64,
    pub reference: Option<ReferenceConfig>,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            test: TestId::SphereTrain,
            conditions: None,
            n_users: 20,
            seeds: vec![0, 1, 2],
            population_seed: 1000,
            reference: None,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_conditions(&self) -> Vec<Condition> {
        self.conditions.clone().unwrap_or_else(|| self.test.default_conditions())
    }
}

/// A sampled test user with its weights and best achievable value.
#[derive(Debug, Clone)]
pub struct TestUser {
    pub id: usize,
    pub user: User,
    pub weights: ObjectiveWeights,
    pub f_max: f64,
}

pub fn sample_test_users(task: &Task, grid: &DesignGrid, n: usize, population_seed: u64, reference: &ReferenceConfig) -> Result<Vec<TestUser>> {
    let users = task.sample_users(n, population_seed)?;
    users
        .into_iter()
        .enumerate()
        .map(|(id, user)| {
            let weights = crate::ppo::sample_weights(
                task.n_objectives(),
                &mut seed::child_rng(population_seed, &[tag::WEIGHTS, id as u64]),
            );
            let f_max = task
                .reference(&user, reference, grid.points(), seed::derive(population_seed, &[tag::FMAX, id as u64]))?
                .f_max(&weights);
            Ok(TestUser { id, user, weights, f_max })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub condition: Condition,
    pub user: usize,
    pub seed: u64,
    pub t: usize,
    pub regret: f64,
    pub log10_regret: f64,
    pub running_best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: Condition,
    pub t: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub n: usize,
}

/// Regret and floored log10 regret per iteration.
pub fn compute_regret(history: &RunHistory, f_max: f64) -> Result<Vec<(f64, f64)>> {
    if !f_max.is_finite() {
        return Err(Error::Numeric(format!("f_max {f_max}")));
    }
    Ok(history
        .records
        .iter()
        .map(|r| {
            let regret = (f_max - r.running_best).max(0.0);
            (regret, regret.max(LOG_REGRET_FLOOR).log10())
        })
        .collect())
}

/// Per-condition, per-iteration median and quartiles of log10 regret.
pub fn summarize(rows: &[RegretRow], conditions: &[Condition]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &c in conditions {
        let t_max = rows.iter().filter(|r| r.condition == c).map(|r| r.t + 1).max().unwrap_or(0);
        for t in 0..t_max {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.condition == c && r.t == t)
                .map(|r| r.log10_regret)
                .collect();
            out.push(SummaryRow {
                condition: c,
                t,
                median: quantile(&vals, 0.5),
                q25: quantile(&vals, 0.25),
                q75: quantile(&vals, 0.75),
                n: vals.len(),
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub conditions: Vec<Condition>,
    pub users: Vec<TestUser>,
    pub histories: Vec<RunHistory>,
    pub regret: Vec<RegretRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    /// Median log10 regret of `condition` at 1-based iteration `iteration`.
    pub fn median_at(&self, condition: Condition, iteration: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.condition == condition && s.t + 1 == iteration)
            .map(|s| s.median)
    }
}

/// Runs every `(condition, user, seed)` cell. Assets must already hold what
/// the conditions need, including the prior library for TAF.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    optimizer: &OptimizerConfig,
    task: &Task,
    grid: Arc<DesignGrid>,
    assets: &Assets,
) -> Result<ExperimentResult> {
    if cfg.n_users == 0 || cfg.seeds.is_empty() {
        return Err(Error::Config("experiment needs users and seeds".into()));
    }
    let conditions = cfg.resolved_conditions();
    let reference = cfg.reference.unwrap_or_else(|| task.default_reference());
    let users = sample_test_users(task, &grid, cfg.n_users, cfg.population_seed, &reference)?;
    let probe_w = users[0].weights.clone();
    for &c in &conditions {
        let oc = OptimizerConfig {
            condition: c,
            ..optimizer.clone()
        };
        Optimizer::new(oc, grid.clone(), probe_w.clone(), assets, 0)?;
    }
    let mut cells = Vec::new();
    for &c in &conditions {
        for u in &users {
            for &s in &cfg.seeds {
                cells.push((c, u, s));
            }
        }
    }
    let run = |&(c, u, s): &(Condition, &TestUser, u64)| {
        let oc = OptimizerConfig {
            condition: c,
            ..optimizer.clone()
        };
        let mut h = run_condition(&oc, task, grid.clone(), assets, &u.user, &u.weights, seed::derive(s, &[u.id as u64]))?;
        h.user_id = u.id;
        h.seed = s;
        Ok(h)
    };
    let histories: Vec<RunHistory> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| cells.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        cells.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    let mut regret = Vec::new();
    for h in &histories {
        let f_max = users[h.user_id].f_max;
        for (r, (reg, lg)) in h.records.iter().zip(compute_regret(h, f_max)?) {
            regret.push(RegretRow {
                condition: h.condition,
                user: h.user_id,
                seed: h.seed,
                t: r.t,
                regret: reg,
                log10_regret: lg,
                running_best: r.running_best,
            });
        }
    }
    let summary = summarize(&regret, &conditions);
    Ok(ExperimentResult {
        conditions,
        users,
        histories,
        regret,
        summary,
    })
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::Format(format!("{other:?}")),
    }
}

pub const REGRET_HEADER: [&str; 7] = ["condition", "user", "seed", "t", "regret", "log10_regret", "running_best"];
pub const SUMMARY_HEADER: [&str; 6] = ["condition", "t", "median", "q25", "q75", "n"];

pub fn write_regret(path: &Path, rows: &[RegretRow]) -> Result<()> {
    write_rows(path, &REGRET_HEADER, rows)
}

pub fn read_regret(path: &Path) -> Result<Vec<RegretRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, &SUMMARY_HEADER, rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Run histories as `condition,user_id,seed,t,x_1..x_d,y,running_best,lambda_ei,p_bar`.
pub fn write_histories(path: &Path, histories: &[RunHistory]) -> Result<()> {
    let dims = histories
        .iter()
        .flat_map(|h| h.records.first())
        .map(|r| r.x.len())
        .next()
        .unwrap_or(0);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = ["condition", "user_id", "seed", "t"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=dims).map(|i| format!("x_{i}")));
    header.extend(["y", "running_best", "lambda_ei", "p_bar"].iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for h in histories {
        for r in &h.records {
            let mut rec = vec![h.condition.to_string(), h.user_id.to_string(), h.seed.to_string(), r.t.to_string()];
            rec.extend(r.x.iter().map(|v| v.to_string()));
            rec.push(r.y.to_string());
            rec.push(r.running_best.to_string());
            rec.push(r.lambda_ei.to_string());
            rec.push(r.p_bar.map(|p| p.to_string()).unwrap_or_default());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `regret.csv`, `summary.csv` and `histories.csv` into `dir`.
pub fn export(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_regret(&dir.join("regret.csv"), &result.regret)?;
    write_summary(&dir.join("summary.csv"), &result.summary)?;
    write_histories(&dir.join("histories.csv"), &result.histories)
}
