//! PPO training of the acquisition policy against synthetic users.
//!
//! Each episode samples a user and a weight vector, runs `T` acquisition
//! steps on the design grid, and rewards each observation with its negative
//! regret against the user's best achievable value. Returns are plain
//! discounted sums and advantages are normalized per update batch.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignGrid, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::gp::{fit_surrogate, GpModel};
use crate::naf::{self, NafInput, SelectMode, Variant};
use crate::nn::{adam_step, AdamState, Gradients, Head, Mode, Network, NetworkSpec};
use crate::novelty::NoveltyRow;
use crate::seed::{self, tag, Rng};
use crate::users::{ReferenceConfig, Task, User};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub clip: f64,
    pub epochs: usize,
    pub gamma: f64,
    pub entropy_coeff: f64,
    pub episodes_per_update: usize,
    /// Environment steps (observations) across all episodes.
    pub total_steps: usize,
    pub budget: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
    /// Multiplier on the actor's initial output weights; small values start near uniform.
    pub actor_output_scale: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub grid_resolution: usize,
    pub variant: Variant,
    /// Reference grid for `f_max`; the task default when absent.
    pub reference: Option<ReferenceConfig>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            clip: 0.15,
            epochs: 10,
            gamma: 0.98,
            entropy_coeff: 0.01,
            episodes_per_update: 10,
            total_steps: 80_000,
            budget: 20,
            minibatch_size: 50,
            max_grad_norm: 0.5,
            actor_output_scale: 0.01,
            actor_hidden: naf::default_hidden(),
            critic_hidden: vec![128, 128],
            grid_resolution: crate::design_space::DEFAULT_RESOLUTION,
            variant: Variant::WithWeights,
            reference: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning rates and gradient norm must be positive");
        }
        if !(self.entropy_coeff >= 0.0) {
            return bad("entropy coefficient must be non-negative");
        }
        if self.epochs == 0
            || self.episodes_per_update == 0
            || self.total_steps == 0
            || self.budget == 0
            || self.minibatch_size == 0
            || self.grid_resolution == 0
        {
            return bad("epochs, batch sizes, steps, budget and resolution must be positive");
        }
        Ok(())
    }

    /// Number of PPO updates needed to cover `total_steps` environment steps.
    pub fn num_updates(&self) -> usize {
        self.total_steps.div_ceil(self.episodes_per_update * self.budget)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub input: NafInput,
    pub action: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub reward: f64,
    pub log_prob: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub weights: ObjectiveWeights,
    pub f_max: f64,
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Everything an episode needs besides the networks.
pub struct EpisodeEnv<'a> {
    pub task: &'a Task,
    pub grid: &'a DesignGrid,
    pub user: &'a User,
    pub weights: &'a ObjectiveWeights,
    pub f_max: f64,
    pub budget: usize,
    pub variant: Variant,
    /// Take the policy's mode instead of sampling.
    pub greedy: bool,
}

pub fn reward(f_max: f64, y: f64) -> f64 {
    (y - f_max).min(0.0)
}

pub fn run_episode(actor: &Network, critic: Option<&Network>, env: &EpisodeEnv<'_>, seed_value: u64) -> Result<Episode> {
    if env.budget == 0 {
        return Err(Error::Config("episode budget must be at least 1".into()));
    }
    let space = env.grid.space();
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(env.budget);
    let mut ys: Vec<f64> = Vec::with_capacity(env.budget);
    let mut gp: Option<GpModel> = None;
    let mut steps = Vec::with_capacity(env.budget);
    for t in 0..env.budget {
        let post = gp.as_ref().map(|g| g.predict(env.grid.points()));
        let input = naf::featurize(post.as_ref(), env.grid.len(), t, env.budget, env.weights, env.variant)?;
        let dist = naf::policy(actor, &input)?;
        let mode = if env.greedy {
            SelectMode::Argmax
        } else {
            SelectMode::Sample {
                seed: seed::derive(seed_value, &[tag::ACTION, t as u64]),
            }
        };
        let action = naf::select(&dist, mode);
        let value = match critic {
            Some(c) => c.forward(&input.0, Mode::Eval)?[0],
            None => 0.0,
        };
        let x = env.grid.point(action).to_vec();
        let eval = env
            .task
            .evaluate(env.user, &x, env.weights, seed::derive(seed_value, &[tag::OBSERVATION, t as u64]))
            .map_err(|e| Error::EpisodeAborted(e.to_string()))?;
        if !eval.y.is_finite() {
            return Err(Error::EpisodeAborted(format!("non-finite observation {}", eval.y)));
        }
        steps.push(Step {
            input,
            action,
            x: x.clone(),
            y: eval.y,
            reward: reward(env.f_max, eval.y),
            log_prob: dist.0[action].max(f64::MIN_POSITIVE).ln(),
            value,
        });
        xs.push(x);
        ys.push(eval.y);
        if t + 1 < env.budget {
            gp = Some(fit_surrogate(&xs, &ys, space, seed::derive(seed_value, &[tag::GP_RESTARTS, t as u64]))?);
        }
    }
    Ok(Episode {
        weights: env.weights.clone(),
        f_max: env.f_max,
        steps,
    })
}

/// Discounted reward-to-go for each step.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Clipped surrogate objective for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Zero mean, unit standard deviation; all-equal inputs become zeros.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let m = crate::stats::mean(adv);
    let s = crate::stats::population_std(adv);
    if s < 1e-8 {
        vec![0.0; adv.len()]
    } else {
        adv.iter().map(|a| (a - m) / s).collect()
    }
}

pub fn sample_weights(n: usize, rng: &mut Rng) -> ObjectiveWeights {
    let raw: Vec<f64> = if n == 2 {
        let a: f64 = rng.gen();
        vec![a, 1.0 - a]
    } else {
        let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    ObjectiveWeights::new(&raw).expect("simplex sample")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorStats {
    pub loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub entropy: f64,
}

/// Mean clipped-surrogate loss (negated, with entropy bonus) over a batch
/// and its gradient.
pub fn actor_loss_grad(
    actor: &Network,
    inputs: &DMatrix<f64>,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
    entropy_coeff: f64,
) -> Result<(ActorStats, Gradients)> {
    let n = actions.len();
    let (mut kl, mut clipped, mut entropy) = (0.0, 0.0, 0.0);
    let (loss, grads) = actor.grad(inputs, Mode::Eval, |j, logp| {
        let a = actions[j];
        let adv = advantages[j];
        let ratio = (logp[a] - old_log_probs[j]).exp();
        let unclipped = ratio * adv;
        let objective = clipped_surrogate(ratio, adv, clip);
        let mut g = vec![0.0; logp.len()];
        if unclipped <= objective {
            g[a] = -ratio * adv;
        }
        let mut h = 0.0;
        for (gi, &lp) in g.iter_mut().zip(logp) {
            let p = lp.exp();
            if p > 0.0 {
                h -= p * lp;
                *gi += entropy_coeff * p * (lp + 1.0);
            }
        }
        kl += old_log_probs[j] - logp[a];
        if (ratio - 1.0).abs() > clip {
            clipped += 1.0;
        }
        entropy += h;
        (-(objective + entropy_coeff * h), g)
    })?;
    let nf = n as f64;
    Ok((
        ActorStats {
            loss,
            kl: kl / nf,
            clip_frac: clipped / nf,
            entropy: entropy / nf,
        },
        grads,
    ))
}

pub fn critic_spec(input_dim: usize, hidden: Vec<usize>) -> NetworkSpec {
    NetworkSpec {
        input_dim,
        hidden,
        head: Head::Scalar,
        dropout_p: 0.0,
    }
}

/// Actor, critic and their optimizer states.
#[derive(Debug, Clone)]
pub struct Learner {
    pub actor: Network,
    pub critic: Network,
    actor_adam: AdamState,
    critic_adam: AdamState,
}

impl Learner {
    pub fn new(actor: Network, critic: Network, cfg: &PpoConfig) -> Self {
        let actor_adam = AdamState::new(&actor, cfg.actor_lr);
        let critic_adam = AdamState::new(&critic, cfg.critic_lr);
        Self {
            actor,
            critic,
            actor_adam,
            critic_adam,
        }
    }

    pub fn init(grid_size: usize, n_objectives: usize, cfg: &PpoConfig, seed_value: u64) -> Result<Self> {
        let spec = naf::actor_spec(grid_size, n_objectives, cfg.variant, cfg.actor_hidden.clone());
        let mut actor = Network::init(&spec, seed::derive(seed_value, &[tag::INIT]))?;
        actor.scale_output_layer(cfg.actor_output_scale);
        let critic = Network::init(
            &critic_spec(spec.input_dim, cfg.critic_hidden.clone()),
            seed::derive(seed_value, &[tag::CRITIC]),
        )?;
        Ok(Self::new(actor, critic, cfg))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub entropy: f64,
}

/// One PPO update over a batch of completed episodes.
pub fn ppo_update(learner: &mut Learner, episodes: &[Episode], cfg: &PpoConfig, seed_value: u64) -> Result<UpdateStats> {
    let steps: Vec<&Step> = episodes.iter().flat_map(|e| &e.steps).collect();
    if steps.is_empty() {
        return Err(Error::Training("empty update batch".into()));
    }
    let rets: Vec<f64> = episodes.iter().flat_map(|e| returns(&e.rewards(), cfg.gamma)).collect();
    let dim = steps[0].input.0.len();
    let all_inputs = DMatrix::from_fn(dim, steps.len(), |r, c| steps[c].input.0[r]);
    let values = learner.critic.forward_batch(&all_inputs, Mode::Eval)?;
    let raw_adv: Vec<f64> = rets.iter().enumerate().map(|(i, g)| g - values.outputs()[(0, i)]).collect();
    let adv = normalize_advantages(&raw_adv);

    let mut order: Vec<usize> = (0..steps.len()).collect();
    let mut rng = seed::child_rng(seed_value, &[tag::PPO_SHUFFLE]);
    let mut stats = UpdateStats::default();
    let mut batches = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let inputs = DMatrix::from_fn(dim, chunk.len(), |r, c| steps[chunk[c]].input.0[r]);
            let actions: Vec<usize> = chunk.iter().map(|&i| steps[i].action).collect();
            let old: Vec<f64> = chunk.iter().map(|&i| steps[i].log_prob).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let (s, mut g) = actor_loss_grad(&learner.actor, &inputs, &actions, &old, &a, cfg.clip, cfg.entropy_coeff)
                .map_err(|e| Error::Training(e.to_string()))?;
            let (vloss, mut vg) = learner
                .critic
                .grad(&inputs, Mode::Eval, |j, out| {
                    let d = out[0] - rets[chunk[j]];
                    (0.5 * d * d, vec![d])
                })
                .map_err(|e| Error::Training(e.to_string()))?;
            if !g.is_finite() || !vg.is_finite() {
                return Err(Error::Training("non-finite gradient".into()));
            }
            g.clip_norm(cfg.max_grad_norm);
            vg.clip_norm(cfg.max_grad_norm);
            adam_step(&mut learner.actor, &g, &mut learner.actor_adam)?;
            adam_step(&mut learner.critic, &vg, &mut learner.critic_adam)?;
            stats.actor_loss += s.loss;
            stats.critic_loss += vloss;
            stats.kl += s.kl;
            stats.clip_frac += s.clip_frac;
            stats.entropy += s.entropy;
            batches += 1.0;
        }
    }
    if !learner.actor.is_finite() || !learner.critic.is_finite() {
        return Err(Error::Training("parameters diverged".into()));
    }
    stats.actor_loss /= batches;
    stats.critic_loss /= batches;
    stats.kl /= batches;
    stats.clip_frac /= batches;
    stats.entropy /= batches;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_return: f64,
    pub kl: f64,
    pub clip_frac: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Last parameters that completed an update without failure.
    pub learner: Learner,
    pub curve: Vec<CurvePoint>,
    /// `(x, w, y)` for every environment step, for the novelty detector.
    pub dataset: Vec<NoveltyRow>,
    pub env_steps: usize,
    pub failure: Option<String>,
}

/// Samples the user, weights and `f_max` for one training episode.
pub fn sample_episode_setup(
    task: &Task,
    grid: &DesignGrid,
    reference: &ReferenceConfig,
    seed_value: u64,
    path: &[u64],
) -> Result<(User, ObjectiveWeights, f64)> {
    let with = |t: u64| {
        let mut p = vec![t];
        p.extend_from_slice(path);
        p
    };
    let user = task.sample_user(&mut seed::child_rng(seed_value, &with(tag::POPULATION)));
    let weights = sample_weights(task.n_objectives(), &mut seed::child_rng(seed_value, &with(tag::WEIGHTS)));
    let f_max = task
        .reference(&user, reference, grid.points(), seed::derive(seed_value, &with(tag::FMAX)))?
        .f_max(&weights);
    Ok((user, weights, f_max))
}

/// Trains an actor from scratch. `progress` sees each curve point as it is
/// produced.
pub fn train(task: &Task, cfg: &PpoConfig, seed_value: u64, mut progress: impl FnMut(&CurvePoint)) -> Result<TrainOutcome> {
    cfg.validate()?;
    task.validate()?;
    let space = task.space();
    let grid = crate::design_space::make_grid(&space, &vec![cfg.grid_resolution; space.dims()])?;
    let reference = cfg.reference.unwrap_or_else(|| task.default_reference());
    let mut learner = Learner::init(grid.len(), task.n_objectives(), cfg, seed_value)?;
    let mut curve = Vec::new();
    let mut dataset = Vec::new();
    let mut env_steps = 0;
    for u in 0..cfg.num_updates() {
        let mut episodes = Vec::with_capacity(cfg.episodes_per_update);
        for e in 0..cfg.episodes_per_update {
            let path = [u as u64, e as u64];
            let (user, weights, f_max) = sample_episode_setup(task, &grid, &reference, seed_value, &path)?;
            let env = EpisodeEnv {
                task,
                grid: &grid,
                user: &user,
                weights: &weights,
                f_max,
                budget: cfg.budget,
                variant: cfg.variant,
                greedy: false,
            };
            let ep = run_episode(
                &learner.actor,
                Some(&learner.critic),
                &env,
                seed::derive(seed_value, &[tag::EPISODE, path[0], path[1]]),
            )?;
            for s in &ep.steps {
                dataset.push(NoveltyRow {
                    x: s.x.clone(),
                    w: weights.as_slice().to_vec(),
                    y: s.y,
                });
            }
            env_steps += ep.steps.len();
            episodes.push(ep);
        }
        let mean_return = episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len() as f64;
        let snapshot = learner.clone();
        match ppo_update(&mut learner, &episodes, cfg, seed::derive(seed_value, &[tag::PPO_SHUFFLE, u as u64])) {
            Ok(stats) => {
                let point = CurvePoint {
                    step: env_steps,
                    mean_return,
                    kl: stats.kl,
                    clip_frac: stats.clip_frac,
                };
                progress(&point);
                curve.push(point);
            }
            Err(e) => {
                return Ok(TrainOutcome {
                    learner: snapshot,
                    curve,
                    dataset,
                    env_steps,
                    failure: Some(e.to_string()),
                })
            }
        }
    }
    Ok(TrainOutcome {
        learner,
        curve,
        dataset,
        env_steps,
        failure: None,
    })
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,mean_return,kl,clip_frac")?;
    for p in curve {
        writeln!(f, "{},{},{},{}", p.step, p.mean_return, p.kl, p.clip_frac)?;
    }
    f.flush()?;
    Ok(())
}
