//! Session state machine and its append-only event log.
//!
//! A session is fully determined by its `created` event and the ordered
//! observations and weight changes that follow, so replaying the log rebuilds
//! the optimizer and every proposal exactly.

use std::sync::{Arc, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use homi_core::design_space::{make_grid, validate_weights, DesignGrid, DesignSpace, DEFAULT_RESOLUTION};
use homi_core::optimizers::{build_taf_priors, Assets, Condition, Observation, Optimizer, OptimizerConfig, Proposal, TafConfig, TafPrior};
use homi_core::users::{typing, KeyboardDesign, Task};

use crate::api::*;

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Trained models for one task family plus a lazily built prior library.
#[derive(Debug, Default)]
pub struct TaskAssets {
    pub assets: Assets,
    /// Training-population task used to build the prior library on demand.
    pub train_task: Option<Task>,
    priors: OnceLock<Arc<Vec<TafPrior>>>,
}

impl TaskAssets {
    pub fn new(assets: Assets, train_task: Option<Task>) -> Self {
        Self {
            assets,
            train_task,
            priors: OnceLock::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct AssetStore {
    pub sphere: TaskAssets,
    pub typing: TaskAssets,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl AssetStore {
    fn family(&self, task: &TaskSpec) -> &TaskAssets {
        match task {
            TaskSpec::Keyboard => &self.typing,
            TaskSpec::Sphere | TaskSpec::Custom { .. } => &self.sphere,
        }
    }

    /// Assets for a session, building TAF priors the first time they are needed.
    fn resolve(&self, task: &TaskSpec, condition: Condition, grid: &Arc<DesignGrid>, taf: &TafConfig) -> Result<Assets, ApiError> {
        if matches!(task, TaskSpec::Custom { .. }) && (condition.uses_novelty() || condition == Condition::Taf) {
            return Err(ApiError::invalid(format!("{condition} is not available for custom tasks")));
        }
        let fam = self.family(task);
        let mut assets = fam.assets.clone();
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(ApiError::unavailable(format!("{condition} needs the {what}, which is not loaded")))
            }
        };
        match condition {
            Condition::NafPlus | Condition::NafWithoutEi => need(assets.actor_with_weights.is_some(), "weight-conditioned actor")?,
            Condition::NafWithoutWeight => need(assets.actor_without_weights.is_some(), "weight-free actor")?,
            _ => {}
        }
        if condition.uses_novelty() {
            need(assets.novelty.is_some(), "novelty model")?;
        }
        if condition == Condition::Taf {
            let train = fam
                .train_task
                .as_ref()
                .ok_or_else(|| ApiError::unavailable("no training population configured for taf priors"))?;
            let priors = match fam.priors.get() {
                Some(p) => p.clone(),
                None => {
                    let built = Arc::new(build_taf_priors(train, grid.clone(), taf, self.seed)?);
                    fam.priors.get_or_init(|| built).clone()
                }
            };
            assets.taf_priors = Some(priors);
        }
        Ok(assets)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        at_ms: u64,
        id: String,
        request: CreateRequest,
    },
    Proposed {
        at_ms: u64,
        id: usize,
        index: usize,
    },
    Observed {
        at_ms: u64,
        proposal: usize,
        index: usize,
        observation: Observation,
    },
    WeightsChanged {
        at_ms: u64,
        weights: Vec<f64>,
    },
}

pub struct Session {
    pub id: String,
    pub request: CreateRequest,
    pub created_ms: u64,
    pub updated_ms: u64,
    grid: Arc<DesignGrid>,
    optimizer: Optimizer,
    pending: Option<Proposal>,
    events: Vec<Event>,
}

fn session_grid(task: &TaskSpec) -> Result<DesignGrid, ApiError> {
    let (space, res) = match task {
        TaskSpec::Keyboard => (KeyboardDesign::space(), vec![DEFAULT_RESOLUTION; 2]),
        TaskSpec::Sphere => (DesignSpace::unit(2), vec![DEFAULT_RESOLUTION; 2]),
        TaskSpec::Custom { lower, upper, resolution, .. } => {
            let space = DesignSpace::new(lower.clone(), upper.clone())?;
            let res = resolution.clone().unwrap_or_else(|| vec![DEFAULT_RESOLUTION; space.dims()]);
            (space, res)
        }
    };
    Ok(make_grid(&space, &res)?)
}

fn objectives_of(task: &TaskSpec) -> usize {
    match task {
        TaskSpec::Custom { objectives, .. } => *objectives,
        _ => 2,
    }
}

impl Session {
    /// Validates the request and computes the first proposal.
    pub fn create(id: String, request: CreateRequest, store: &AssetStore) -> Result<Self, ApiError> {
        Self::build(id, request, store, now_ms())
    }

    fn build(id: String, request: CreateRequest, store: &AssetStore, at_ms: u64) -> Result<Self, ApiError> {
        if request.budget == 0 {
            return Err(ApiError::invalid("T must be at least 1"));
        }
        let weights = validate_weights(&request.weights)?;
        if weights.len() != objectives_of(&request.task) {
            return Err(ApiError::invalid(format!(
                "{} weights for a task with {} objectives",
                weights.len(),
                objectives_of(&request.task)
            )));
        }
        let grid = Arc::new(session_grid(&request.task)?);
        let cfg = OptimizerConfig {
            condition: request.condition,
            budget: request.budget,
            ..store.optimizer.clone()
        };
        let assets = store.resolve(&request.task, request.condition, &grid, &cfg.taf)?;
        let optimizer = Optimizer::new(cfg, grid.clone(), weights, &assets, request.seed)?;
        let mut s = Self {
            id: id.clone(),
            request: request.clone(),
            created_ms: at_ms,
            updated_ms: at_ms,
            grid,
            optimizer,
            pending: None,
            events: vec![Event::Created { at_ms, id, request }],
        };
        s.refresh_proposal(at_ms)?;
        Ok(s)
    }

    fn refresh_proposal(&mut self, at_ms: u64) -> Result<(), ApiError> {
        if self.optimizer.is_complete() {
            self.pending = None;
            return Ok(());
        }
        let p = self.optimizer.propose()?;
        self.events.push(Event::Proposed {
            at_ms,
            id: self.optimizer.t(),
            index: p.index,
        });
        self.pending = Some(p);
        Ok(())
    }

    pub fn observations(&self) -> usize {
        self.optimizer.records().len()
    }

    pub fn is_complete(&self) -> bool {
        self.optimizer.is_complete()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn pending_view(&self) -> Option<ProposalView> {
        self.pending.as_ref().map(|p| ProposalView {
            id: self.optimizer.t(),
            index: p.index,
            x: p.x.clone(),
        })
    }

    fn best_view(&self) -> Option<BestView> {
        self.optimizer.best().map(|(i, y)| BestView {
            x: self.grid.point(i).to_vec(),
            y,
        })
    }

    fn observation_from(&self, req: &ObserveRequest) -> Result<Observation, ApiError> {
        let w = self.optimizer.weights();
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ApiError::invalid(format!("{name} must be finite")))
            }
        };
        match &self.request.task {
            TaskSpec::Keyboard => {
                let wpm = finite(req.wpm.ok_or_else(|| ApiError::invalid("keyboard observations need wpm"))?, "wpm")?;
                let err = finite(
                    req.error_rate.ok_or_else(|| ApiError::invalid("keyboard observations need error_rate"))?,
                    "error_rate",
                )?;
                if wpm < 0.0 || !(0.0..=1.0).contains(&err) {
                    return Err(ApiError::invalid(format!("wpm {wpm} or error rate {err} out of range")));
                }
                Ok(Observation {
                    objectives: Some(vec![typing::speed_score(wpm), typing::accuracy_score(err)]),
                    raw: vec![wpm, err],
                    y: typing::objective(wpm, err, w)?,
                })
            }
            TaskSpec::Sphere => {
                let obj = req
                    .objectives
                    .clone()
                    .ok_or_else(|| ApiError::invalid("sphere observations need objectives"))?;
                if obj.len() != w.len() || obj.iter().any(|v| !v.is_finite()) {
                    return Err(ApiError::invalid("objectives must be finite, one per weight"));
                }
                Ok(Observation {
                    y: w.scalarize(&obj),
                    raw: obj.clone(),
                    objectives: Some(obj),
                })
            }
            TaskSpec::Custom { .. } => match (&req.objectives, req.y) {
                (Some(obj), _) => {
                    if obj.len() != w.len() || obj.iter().any(|v| !v.is_finite()) {
                        return Err(ApiError::invalid("objectives must be finite, one per weight"));
                    }
                    Ok(Observation {
                        y: w.scalarize(obj),
                        raw: obj.clone(),
                        objectives: Some(obj.clone()),
                    })
                }
                (None, Some(y)) => {
                    let y = finite(y, "y")?;
                    Ok(Observation {
                        objectives: None,
                        raw: vec![y],
                        y,
                    })
                }
                (None, None) => Err(ApiError::invalid("custom observations need y or objectives")),
            },
        }
    }

    pub fn observe(&mut self, req: &ObserveRequest) -> Result<ObserveResponse, ApiError> {
        let pending = self.pending_view().ok_or_else(|| ApiError::conflict("no pending proposal"))?;
        if let Some(id) = req.proposal {
            if id != pending.id {
                return Err(ApiError::conflict(format!("proposal {id} is not pending (pending: {})", pending.id)));
            }
        }
        let obs = self.observation_from(req)?;
        let at = now_ms();
        self.apply_observation(pending.id, pending.index, obs, at)?;
        let complete = self.optimizer.is_complete();
        let y = self.optimizer.records().last().map_or(f64::NAN, |r| r.y);
        Ok(ObserveResponse {
            complete,
            y,
            proposal: self.pending_view(),
            best: if complete { self.best_view() } else { None },
            history: complete.then(|| self.optimizer.records().to_vec()),
        })
    }

    fn apply_observation(&mut self, proposal: usize, index: usize, obs: Observation, at_ms: u64) -> Result<(), ApiError> {
        self.optimizer.observe(index, obs.clone())?;
        self.events.push(Event::Observed {
            at_ms,
            proposal,
            index,
            observation: obs,
        });
        self.updated_ms = at_ms;
        self.refresh_proposal(at_ms)
    }

    pub fn set_weights(&mut self, req: &WeightsRequest) -> Result<WeightsResponse, ApiError> {
        let w = validate_weights(&req.weights)?;
        let at = now_ms();
        self.apply_weights(w.as_slice().to_vec(), at)?;
        Ok(WeightsResponse {
            weights: self.optimizer.weights().as_slice().to_vec(),
            proposal: self.pending_view(),
        })
    }

    fn apply_weights(&mut self, weights: Vec<f64>, at_ms: u64) -> Result<(), ApiError> {
        let w = validate_weights(&weights)?;
        self.optimizer.set_weights(w)?;
        self.events.push(Event::WeightsChanged { at_ms, weights });
        self.updated_ms = at_ms;
        self.refresh_proposal(at_ms)
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            task: self.request.task.clone(),
            condition: self.request.condition,
            t: self.optimizer.t(),
            budget: self.optimizer.budget(),
            complete: self.optimizer.is_complete(),
        }
    }

    pub fn state(&self) -> SessionState {
        let post = self.optimizer.posterior();
        let records = self.optimizer.records();
        SessionState {
            id: self.id.clone(),
            task: self.request.task.clone(),
            condition: self.request.condition,
            t: self.optimizer.t(),
            budget: self.optimizer.budget(),
            complete: self.optimizer.is_complete(),
            weights: self.optimizer.weights().as_slice().to_vec(),
            grid: self.grid.points().to_vec(),
            pending: self.pending_view(),
            history: records.to_vec(),
            running_best: records.last().map(|r| r.running_best),
            best: self.best_view(),
            p_bar: self.optimizer.novelty_state().p_bar(),
            lambda_ei: self.pending.as_ref().map_or(0.0, |p| p.lambda_ei),
            posterior: post.map(|p| PosteriorView {
                means: p.means,
                stds: p.stds,
            }),
            fields: FieldsView {
                naf: self.pending.as_ref().and_then(|p| p.naf.clone()),
                ei: self.pending.as_ref().and_then(|p| p.ei.clone()),
                aggregate: self.pending.as_ref().and_then(|p| p.aggregate.clone()),
            },
            created_ms: self.created_ms,
            updated_ms: self.updated_ms,
        }
    }

    /// Rebuilds a session from its event log, checking that every logged
    /// proposal is reproduced.
    pub fn replay(events: &[Event], store: &AssetStore) -> Result<Self, ApiError> {
        let (id, request, at) = match events.first() {
            Some(Event::Created { id, request, at_ms }) => (id.clone(), request.clone(), *at_ms),
            _ => return Err(ApiError::internal("event log does not start with a created event")),
        };
        let mut s = Self::build(id, request, store, at)?;
        for ev in &events[1..] {
            match ev {
                Event::Proposed { .. } => {}
                Event::Observed {
                    at_ms,
                    proposal,
                    index,
                    observation,
                } => {
                    let pending = s.pending_view().ok_or_else(|| ApiError::internal("observation without proposal in log"))?;
                    if pending.id != *proposal || pending.index != *index {
                        return Err(ApiError::internal(format!("replay diverged before observation {proposal}")));
                    }
                    s.apply_observation(*proposal, *index, observation.clone(), *at_ms)?;
                }
                Event::WeightsChanged { at_ms, weights } => s.apply_weights(weights.clone(), *at_ms)?,
                Event::Created { .. } => return Err(ApiError::internal("duplicate created event")),
            }
        }
        let proposals = |evs: &[Event]| -> Vec<(usize, usize)> {
            evs.iter()
                .filter_map(|e| match e {
                    Event::Proposed { id, index, .. } => Some((*id, *index)),
                    _ => None,
                })
                .collect()
        };
        if proposals(events) != proposals(&s.events) {
            return Err(ApiError::internal("replayed proposals differ from the log"));
        }
        // Keep the original timestamps.
        s.events = events.to_vec();
        Ok(s)
    }
}
