//! Propose/observe optimizers for the five compared conditions.
//!
//! All conditions share the same loop: `propose` reads the current state and
//! returns a grid index, `observe` appends the evaluated point and refits the
//! scalar-objective GP. Proposals are pure functions of the state so a
//! session can be replayed exactly.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::acquisition::{aggregate, expected_improvement, normalize_field, AcquisitionField, Provenance};
use crate::design_space::{DesignGrid, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::gp::{fit_surrogate, GpModel, Posterior};
use crate::naf::{self, Variant};
use crate::nn::Network;
use crate::novelty::{p_value, NoveltyModel, NoveltyState};
use crate::seed::{self, tag};
use crate::stats::argmax;
use crate::users::{Task, User};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    NafPlus,
    NafWithoutWeight,
    NafWithoutEi,
    StandardBo,
    Taf,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::NafPlus,
        Condition::NafWithoutWeight,
        Condition::NafWithoutEi,
        Condition::StandardBo,
        Condition::Taf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::NafPlus => "naf_plus",
            Condition::NafWithoutWeight => "naf_wo_weight",
            Condition::NafWithoutEi => "naf_wo_ei",
            Condition::StandardBo => "standard_bo",
            Condition::Taf => "taf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition {s:?}")))
    }

    /// Actor variant used by the neural conditions.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Condition::NafPlus | Condition::NafWithoutEi => Some(Variant::WithWeights),
            Condition::NafWithoutWeight => Some(Variant::WithoutWeights),
            _ => None,
        }
    }

    pub fn uses_novelty(self) -> bool {
        matches!(self, Condition::NafPlus | Condition::NafWithoutWeight)
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub n_random: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { n_random: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TafConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub n_priors: usize,
    pub prior_random: usize,
    pub prior_steps: usize,
}

impl Default for TafConfig {
    fn default() -> Self {
        Self {
            alpha1: 4.0,
            alpha2: 0.2,
            n_priors: 15,
            prior_random: 10,
            prior_steps: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallbackConfig {
    pub tau: f64,
    pub k_min: usize,
}

impl Default for FallbackConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            k_min: 3,
        }
    }
}

/// Trained models an optimizer may need, shared across runs.
#[derive(Debug, Clone, Default)]
pub struct Assets {
    pub actor_with_weights: Option<Arc<Network>>,
    pub actor_without_weights: Option<Arc<Network>>,
    pub novelty: Option<Arc<NoveltyModel>>,
    pub taf_priors: Option<Arc<Vec<TafPrior>>>,
}

/// One prior user's per-objective GPs.
#[derive(Debug, Clone)]
pub struct TafPrior {
    pub gps: Vec<GpModel>,
}

/// A prior's per-objective posterior cached on the search grid.
#[derive(Debug, Clone)]
struct PriorGrid {
    objectives: Vec<Posterior>,
}

impl PriorGrid {
    fn weighted(&self, w: &ObjectiveWeights) -> Posterior {
        let n = self.objectives[0].len();
        let mut means = vec![0.0; n];
        let mut vars = vec![0.0; n];
        for (post, &wi) in self.objectives.iter().zip(w.as_slice()) {
            for j in 0..n {
                means[j] += wi * post.means[j];
                vars[j] += wi * wi * post.stds[j] * post.stds[j];
            }
        }
        Posterior {
            means,
            stds: vars.into_iter().map(f64::sqrt).collect(),
        }
    }
}

/// Prior weight in the transfer acquisition at iteration `t`.
pub fn taf_prior_mass(t: usize, alpha1: f64, alpha2: f64) -> f64 {
    (-alpha2 * (t as f64 - alpha1).max(0.0)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Per-objective values, when the task exposes them; used to rescalarize
    /// after a weight change.
    pub objectives: Option<Vec<f64>>,
    pub raw: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: usize,
    pub index: usize,
    pub x: Vec<f64>,
    pub raw: Vec<f64>,
    pub y: f64,
    pub running_best: f64,
    pub lambda_ei: f64,
    pub p_bar: Option<f64>,
    pub p_value: Option<f64>,
}

/// Proposal with the fields that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub index: usize,
    pub x: Vec<f64>,
    pub lambda_ei: f64,
    pub naf: Option<AcquisitionField>,
    pub ei: Option<AcquisitionField>,
    pub aggregate: Option<AcquisitionField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub condition: Condition,
    pub budget: usize,
    pub bo: BoConfig,
    pub taf: TafConfig,
    pub fallback: FallbackConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            condition: Condition::NafPlus,
            budget: 20,
            bo: BoConfig::default(),
            taf: TafConfig::default(),
            fallback: FallbackConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    grid: Arc<DesignGrid>,
    weights: ObjectiveWeights,
    seed: u64,
    actor: Option<Arc<Network>>,
    novelty: Option<Arc<NoveltyModel>>,
    priors: Vec<PriorGrid>,
    random_phase: Vec<usize>,
    observations: Vec<Observation>,
    indices: Vec<usize>,
    gp: Option<GpModel>,
    novelty_state: NoveltyState,
    records: Vec<Record>,
}

impl Optimizer {
    pub fn new(
        cfg: OptimizerConfig,
        grid: Arc<DesignGrid>,
        weights: ObjectiveWeights,
        assets: &Assets,
        seed_value: u64,
    ) -> Result<Self> {
        if cfg.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        let missing = |what: &str| Error::Config(format!("{} requires a {what}", cfg.condition));
        let actor = match cfg.condition.variant() {
            Some(Variant::WithWeights) => Some(assets.actor_with_weights.clone().ok_or_else(|| missing("weight-conditioned actor"))?),
            Some(Variant::WithoutWeights) => Some(assets.actor_without_weights.clone().ok_or_else(|| missing("weight-free actor"))?),
            None => None,
        };
        if let (Some(a), Some(v)) = (&actor, cfg.condition.variant()) {
            if a.spec().input_dim != v.input_len(grid.len(), weights.len()) || a.spec().head.outputs() != grid.len() {
                return Err(Error::Config(format!(
                    "actor expects {} inputs, grid and weights need {}",
                    a.spec().input_dim,
                    v.input_len(grid.len(), weights.len())
                )));
            }
        }
        let novelty = if cfg.condition.uses_novelty() {
            let m = assets.novelty.clone().ok_or_else(|| missing("novelty model"))?;
            if m.n_objectives() != weights.len() {
                return Err(Error::Config("novelty model objective count differs from weights".into()));
            }
            Some(m)
        } else {
            None
        };
        let priors = if cfg.condition == Condition::Taf {
            let lib = assets.taf_priors.as_ref().ok_or_else(|| missing("prior library"))?;
            if lib.is_empty() {
                return Err(missing("non-empty prior library"));
            }
            lib.iter()
                .map(|p| {
                    if p.gps.len() != weights.len() {
                        return Err(Error::Config("prior objective count differs from weights".into()));
                    }
                    Ok(PriorGrid {
                        objectives: p.gps.iter().map(|g| g.predict(grid.points())).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let random_phase = if cfg.condition == Condition::StandardBo {
            if cfg.budget < cfg.bo.n_random {
                return Err(Error::Config(format!(
                    "budget {} below the {} random explorations",
                    cfg.budget, cfg.bo.n_random
                )));
            }
            if cfg.bo.n_random > grid.len() {
                return Err(Error::Config("more random explorations than grid points".into()));
            }
            random_indices(grid.len(), cfg.bo.n_random, seed_value)
        } else {
            Vec::new()
        };
        Ok(Self {
            novelty_state: NoveltyState::new(cfg.fallback.tau, cfg.fallback.k_min),
            cfg,
            grid,
            weights,
            seed: seed_value,
            actor,
            novelty,
            priors,
            random_phase,
            observations: Vec::new(),
            indices: Vec::new(),
            gp: None,
            records: Vec::new(),
        })
    }

    pub fn condition(&self) -> Condition {
        self.cfg.condition
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    pub fn weights(&self) -> &ObjectiveWeights {
        &self.weights
    }

    pub fn t(&self) -> usize {
        self.observations.len()
    }

    pub fn budget(&self) -> usize {
        self.cfg.budget
    }

    pub fn is_complete(&self) -> bool {
        self.t() >= self.cfg.budget
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn novelty_state(&self) -> &NoveltyState {
        &self.novelty_state
    }

    pub fn gp(&self) -> Option<&GpModel> {
        self.gp.as_ref()
    }

    pub fn posterior(&self) -> Option<Posterior> {
        self.gp.as_ref().map(|g| g.predict(self.grid.points()))
    }

    fn ys(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y).collect()
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.observations
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, o)| match acc {
                Some((_, b)) if b >= o.y => acc,
                _ => Some((i, o.y)),
            })
            .map(|(i, y)| (self.indices[i], y))
    }

    fn lambda(&self) -> f64 {
        match self.cfg.condition {
            Condition::NafPlus | Condition::NafWithoutWeight if self.t() >= self.cfg.fallback.k_min => {
                self.novelty_state.lambda()
            }
            _ => 0.0,
        }
    }

    fn ei_field(&self, post: Option<&Posterior>) -> AcquisitionField {
        match (post, self.best()) {
            (Some(p), Some((_, best))) => expected_improvement(p, best),
            _ => AcquisitionField::new(vec![0.0; self.grid.len()], Provenance::Ei),
        }
    }

    /// Computes the next proposal without changing state.
    pub fn propose(&self) -> Result<Proposal> {
        if self.is_complete() {
            return Err(Error::Config("budget exhausted".into()));
        }
        let t = self.t();
        let post = self.posterior();
        let mut out = Proposal {
            index: 0,
            x: Vec::new(),
            lambda_ei: 0.0,
            naf: None,
            ei: None,
            aggregate: None,
        };
        match self.cfg.condition {
            Condition::NafPlus | Condition::NafWithoutWeight | Condition::NafWithoutEi => {
                let actor = self.actor.as_ref().expect("checked at construction");
                let variant = self.cfg.condition.variant().expect("neural condition");
                let input = naf::featurize(post.as_ref(), self.grid.len(), t, self.cfg.budget, &self.weights, variant)?;
                let naf_field = AcquisitionField::new(naf::policy(actor, &input)?.0, Provenance::Naf);
                let lambda = self.lambda();
                out.lambda_ei = lambda;
                if lambda == 0.0 {
                    out.index = naf_field.argmax();
                } else {
                    let ei = self.ei_field(post.as_ref());
                    let agg = aggregate(&normalize_field(&naf_field), &normalize_field(&ei), lambda)?;
                    out.index = agg.argmax();
                    out.aggregate = Some(agg);
                    out.ei = Some(ei);
                }
                if out.ei.is_none() && post.is_some() {
                    out.ei = Some(self.ei_field(post.as_ref()));
                }
                out.naf = Some(naf_field);
            }
            Condition::StandardBo => {
                let ei = self.ei_field(post.as_ref());
                out.index = if t < self.random_phase.len() {
                    self.random_phase[t]
                } else {
                    ei.argmax()
                };
                out.ei = Some(ei);
            }
            Condition::Taf => {
                let (index, target, agg) = self.taf_fields(post.as_ref());
                out.index = index;
                out.ei = Some(target);
                out.aggregate = Some(agg);
            }
        }
        out.x = self.grid.point(out.index).to_vec();
        Ok(out)
    }

    fn taf_fields(&self, post: Option<&Posterior>) -> (usize, AcquisitionField, AcquisitionField) {
        let t = self.t();
        let pi = taf_prior_mass(t, self.cfg.taf.alpha1, self.cfg.taf.alpha2);
        let target = self.ei_field(post);
        let n = self.grid.len();
        let mut prior_mean = vec![0.0; n];
        for prior in &self.priors {
            let wp = prior.weighted(&self.weights);
            let best = if self.indices.is_empty() {
                wp.means.iter().copied().fold(f64::INFINITY, f64::min)
            } else {
                self.indices.iter().map(|&i| wp.means[i]).fold(f64::NEG_INFINITY, f64::max)
            };
            let field = normalize_field(&expected_improvement(&wp, best));
            for (acc, v) in prior_mean.iter_mut().zip(&field.values) {
                *acc += v / self.priors.len() as f64;
            }
        }
        let target_norm = normalize_field(&target);
        let values: Vec<f64> = target_norm
            .values
            .iter()
            .zip(&prior_mean)
            .map(|(e, p)| (1.0 - pi) * e + pi * p)
            .collect();
        let index = if pi == 0.0 { target.argmax() } else { argmax(&values) };
        (index, target, AcquisitionField::new(values, Provenance::Aggregate))
    }

    /// Records an evaluated design and refits the surrogate.
    pub fn observe(&mut self, index: usize, obs: Observation) -> Result<&Record> {
        if self.is_complete() {
            return Err(Error::Config("budget exhausted".into()));
        }
        if index >= self.grid.len() {
            return Err(Error::InvalidObservation(format!("grid index {index} out of range")));
        }
        if !obs.y.is_finite() {
            return Err(Error::InvalidObservation(format!("non-finite objective {}", obs.y)));
        }
        if let Some(o) = &obs.objectives {
            if o.len() != self.weights.len() || o.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidObservation("objective vector mismatch".into()));
            }
        }
        let t = self.t();
        let x = self.grid.point(index).to_vec();
        let mut p = None;
        if let Some(model) = &self.novelty {
            let (mu, sigma) = model.predict_mc(&x, &self.weights, seed::derive(self.seed, &[tag::NOVELTY, t as u64]))?;
            let pv = p_value(obs.y, mu, sigma)?;
            self.novelty_state.update(pv)?;
            p = Some(pv);
        }
        let lambda_ei = self.lambda();
        self.indices.push(index);
        self.observations.push(obs.clone());
        self.refit()?;
        let running_best = self.records.last().map_or(obs.y, |r| r.running_best.max(obs.y));
        self.records.push(Record {
            t,
            index,
            x,
            raw: obs.raw,
            y: obs.y,
            running_best,
            lambda_ei,
            p_bar: self.novelty_state.p_bar(),
            p_value: p,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    fn refit(&mut self) -> Result<()> {
        let t = self.t();
        if t == 0 {
            self.gp = None;
            return Ok(());
        }
        let xs: Vec<Vec<f64>> = self.indices.iter().map(|&i| self.grid.point(i).to_vec()).collect();
        self.gp = Some(fit_surrogate(
            &xs,
            &self.ys(),
            self.grid.space(),
            seed::derive(self.seed, &[tag::GP_RESTARTS, t as u64 - 1]),
        )?);
        Ok(())
    }

    /// Replaces the weights; observations with per-objective values are
    /// rescalarized and the surrogate refit.
    pub fn set_weights(&mut self, weights: ObjectiveWeights) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::InvalidWeights(format!(
                "expected {} weights, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        if weights == self.weights {
            return Ok(());
        }
        for o in &mut self.observations {
            if let Some(obj) = &o.objectives {
                o.y = weights.scalarize(obj);
            }
        }
        self.weights = weights;
        self.refit()
    }
}

fn random_indices(n: usize, k: usize, seed_value: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::child_rng(seed_value, &[tag::RANDOM_PHASE]));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub condition: Condition,
    pub user_id: usize,
    pub seed: u64,
    pub records: Vec<Record>,
}

impl RunHistory {
    pub fn running_best(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.running_best).collect()
    }
}

/// Runs one full optimization of `user` under `cfg.condition`.
pub fn run_condition(
    cfg: &OptimizerConfig,
    task: &Task,
    grid: Arc<DesignGrid>,
    assets: &Assets,
    user: &User,
    weights: &ObjectiveWeights,
    seed_value: u64,
) -> Result<RunHistory> {
    let mut opt = Optimizer::new(cfg.clone(), grid, weights.clone(), assets, seed_value)?;
    while !opt.is_complete() {
        let prop = opt.propose()?;
        let eval = task.evaluate(user, &prop.x, weights, seed::derive(seed_value, &[tag::OBSERVATION, opt.t() as u64]))?;
        opt.observe(
            prop.index,
            Observation {
                objectives: Some(eval.objectives),
                raw: eval.raw,
                y: eval.y,
            },
        )?;
    }
    Ok(RunHistory {
        condition: cfg.condition,
        user_id: 0,
        seed: seed_value,
        records: opt.records().to_vec(),
    })
}

/// Standard BO with a custom random/EI split, keeping per-objective values.
pub fn standard_bo_run(
    task: &Task,
    grid: Arc<DesignGrid>,
    user: &User,
    weights: &ObjectiveWeights,
    n_random: usize,
    budget: usize,
    seed_value: u64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>, RunHistory)> {
    let cfg = OptimizerConfig {
        condition: Condition::StandardBo,
        budget,
        bo: BoConfig { n_random },
        ..OptimizerConfig::default()
    };
    let mut opt = Optimizer::new(cfg, grid, weights.clone(), &Assets::default(), seed_value)?;
    let mut indices = Vec::with_capacity(budget);
    let mut objectives = Vec::with_capacity(budget);
    while !opt.is_complete() {
        let prop = opt.propose()?;
        let eval = task.evaluate(user, &prop.x, weights, seed::derive(seed_value, &[tag::OBSERVATION, opt.t() as u64]))?;
        indices.push(prop.index);
        objectives.push(eval.objectives.clone());
        opt.observe(
            prop.index,
            Observation {
                objectives: Some(eval.objectives),
                raw: eval.raw,
                y: eval.y,
            },
        )?;
    }
    let history = RunHistory {
        condition: Condition::StandardBo,
        user_id: 0,
        seed: seed_value,
        records: opt.records().to_vec(),
    };
    Ok((indices, objectives, history))
}

/// Builds the prior library: for each sampled user a standard BO run under
/// random weights, then one GP per objective on its observations.
pub fn build_taf_priors(task: &Task, grid: Arc<DesignGrid>, cfg: &TafConfig, seed_value: u64) -> Result<Vec<TafPrior>> {
    if cfg.n_priors == 0 {
        return Err(Error::Config("prior library must hold at least one prior".into()));
    }
    let users = task.sample_users(cfg.n_priors, seed::derive(seed_value, &[tag::TAF]))?;
    let mut priors = Vec::with_capacity(users.len());
    for (m, user) in users.iter().enumerate() {
        let run_seed = seed::derive(seed_value, &[tag::TAF, m as u64]);
        let weights = crate::ppo::sample_weights(task.n_objectives(), &mut seed::child_rng(run_seed, &[tag::WEIGHTS]));
        let (indices, objectives, _) = standard_bo_run(
            task,
            grid.clone(),
            user,
            &weights,
            cfg.prior_random,
            cfg.prior_random + cfg.prior_steps,
            run_seed,
        )?;
        let xs: Vec<Vec<f64>> = indices.iter().map(|&i| grid.point(i).to_vec()).collect();
        let gps = (0..task.n_objectives())
            .map(|k| {
                let ys: Vec<f64> = objectives.iter().map(|o| o[k]).collect();
                fit_surrogate(&xs, &ys, grid.space(), seed::derive(run_seed, &[tag::GP_RESTARTS, k as u64]))
            })
            .collect::<Result<Vec<_>>>()?;
        priors.push(TafPrior { gps });
    }
    Ok(priors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::make_grid;
    use crate::users::{SpherePopulation, SphereUser};

    fn setup() -> (Task, Arc<DesignGrid>, User, ObjectiveWeights) {
        let task = Task::Sphere(SpherePopulation::training());
        let grid = Arc::new(make_grid(&task.space(), &[6, 6]).unwrap());
        (task, grid, User::Sphere(SphereUser::default()), ObjectiveWeights::new(&[0.5, 0.5]).unwrap())
    }

    #[test]
    fn prior_mass_decay() {
        assert_eq!(taf_prior_mass(0, 4.0, 0.2), 1.0);
        assert_eq!(taf_prior_mass(4, 4.0, 0.2), 1.0);
        assert!((taf_prior_mass(9, 4.0, 0.2) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn standard_bo_random_phase() {
        let (task, grid, user, w) = setup();
        let cfg = OptimizerConfig {
            condition: Condition::StandardBo,
            budget: 10,
            ..OptimizerConfig::default()
        };
        let a = run_condition(&cfg, &task, grid.clone(), &Assets::default(), &user, &w, 4).unwrap();
        let b = run_condition(&cfg, &task, grid.clone(), &Assets::default(), &user, &w, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 10);
        let first: Vec<usize> = a.records[..6].iter().map(|r| r.index).collect();
        let mut uniq = first.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 6);
        assert!(a.running_best().windows(2).all(|p| p[1] >= p[0]));
        let short = OptimizerConfig { budget: 5, ..cfg };
        assert!(matches!(
            Optimizer::new(short, grid, w, &Assets::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_assets_are_config_errors() {
        let (_, grid, _, w) = setup();
        for c in [Condition::NafPlus, Condition::NafWithoutEi, Condition::Taf] {
            let cfg = OptimizerConfig {
                condition: c,
                ..OptimizerConfig::default()
            };
            assert!(matches!(
                Optimizer::new(cfg, grid.clone(), w.clone(), &Assets::default(), 0),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn taf_runs_and_is_deterministic() {
        let (task, grid, user, w) = setup();
        let tcfg = TafConfig {
            n_priors: 3,
            prior_random: 3,
            prior_steps: 2,
            ..TafConfig::default()
        };
        let priors = build_taf_priors(&task, grid.clone(), &tcfg, 1).unwrap();
        assert_eq!(priors.len(), 3);
        assert!(priors.iter().all(|p| p.gps.len() == 2 && p.gps[0].len() == 5));
        let assets = Assets {
            taf_priors: Some(Arc::new(priors)),
            ..Assets::default()
        };
        let cfg = OptimizerConfig {
            condition: Condition::Taf,
            budget: 8,
            taf: tcfg,
            ..OptimizerConfig::default()
        };
        let a = run_condition(&cfg, &task, grid.clone(), &assets, &user, &w, 2).unwrap();
        assert_eq!(a, run_condition(&cfg, &task, grid, &assets, &user, &w, 2).unwrap());
        assert!(a.running_best().windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn weight_change_rescalarizes() {
        let (task, grid, user, w) = setup();
        let cfg = OptimizerConfig {
            condition: Condition::StandardBo,
            budget: 8,
            ..OptimizerConfig::default()
        };
        let mut opt = Optimizer::new(cfg, grid, w.clone(), &Assets::default(), 0).unwrap();
        for _ in 0..3 {
            let p = opt.propose().unwrap();
            let e = task.evaluate(&user, &p.x, &w, 0).unwrap();
            opt.observe(p.index, Observation { objectives: Some(e.objectives), raw: e.raw, y: e.y }).unwrap();
        }
        let before = opt.propose().unwrap();
        opt.set_weights(w.clone()).unwrap();
        assert_eq!(opt.propose().unwrap(), before);
        let w2 = ObjectiveWeights::new(&[1.0, 0.0]).unwrap();
        opt.set_weights(w2.clone()).unwrap();
        for (o, r) in opt.observations.iter().zip(opt.records()) {
            let e = task.evaluate(&user, &r.x, &w2, 0).unwrap();
            assert!((o.y - e.y).abs() < 1e-12);
        }
        assert!(opt.observe(0, Observation { objectives: None, raw: vec![], y: f64::NAN }).is_err());
    }
}
