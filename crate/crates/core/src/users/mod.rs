//! Synthetic users and the task abstraction the trainers and optimizers
//! evaluate against.

pub mod sphere;
pub mod typing;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::design_space::{make_grid, DesignSpace, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub use sphere::{SpherePopulation, SphereUser};
pub use typing::{Corpus, KeyboardDesign, TypingOutcome, TypistPopulation, TypistUser};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum User {
    Sphere(SphereUser),
    Typist(TypistUser),
}

/// One noisy evaluation of a user at a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Per-objective values whose weighted sum is the noiseless objective.
    pub objectives: Vec<f64>,
    /// Task-native measurements: sphere `(y1, y2)`, typing `(wpm, error_rate)`.
    pub raw: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub resolution: usize,
    /// Monte-Carlo rollouts per reference point (stochastic tasks only).
    pub rollouts: usize,
}

/// Per-objective expected values over a dense reference grid, from which
/// `f_max` follows for any weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    components: Vec<Vec<f64>>,
}

impl Reference {
    pub fn from_components(components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { components })
    }

    pub fn f_max(&self, weights: &ObjectiveWeights) -> f64 {
        self.components
            .iter()
            .map(|c| weights.scalarize(c))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum Task {
    Sphere(SpherePopulation),
    Typing {
        population: TypistPopulation,
        corpus: Arc<Corpus>,
    },
}

impl Task {
    pub fn typing(population: TypistPopulation) -> Self {
        Task::Typing {
            population,
            corpus: Arc::new(Corpus::bundled()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Sphere(_) => "sphere",
            Task::Typing { .. } => "typing",
        }
    }

    pub fn space(&self) -> DesignSpace {
        match self {
            Task::Sphere(_) => DesignSpace::unit(2),
            Task::Typing { .. } => KeyboardDesign::space(),
        }
    }

    pub fn n_objectives(&self) -> usize {
        2
    }

    pub fn default_reference(&self) -> ReferenceConfig {
        match self {
            Task::Sphere(_) => ReferenceConfig {
                resolution: 200,
                rollouts: 1,
            },
            Task::Typing { .. } => ReferenceConfig {
                resolution: 20,
                rollouts: 200,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Task::Sphere(p) => p.validate(),
            Task::Typing { population, .. } => population.validate(),
        }
    }

    pub fn sample_user(&self, rng: &mut Rng) -> User {
        match self {
            Task::Sphere(p) => User::Sphere(p.sample_one(rng)),
            Task::Typing { population, .. } => User::Typist(population.sample_one(rng)),
        }
    }

    pub fn sample_users(&self, n: usize, seed_value: u64) -> Result<Vec<User>> {
        self.validate()?;
        let mut rng = seed::child_rng(seed_value, &[seed::tag::POPULATION]);
        Ok((0..n).map(|_| self.sample_user(&mut rng)).collect())
    }

    /// Noisy evaluation of `user` at design `x` (design units).
    pub fn evaluate(&self, user: &User, x: &[f64], weights: &ObjectiveWeights, seed_value: u64) -> Result<Evaluation> {
        if weights.len() != self.n_objectives() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for a {}-objective task",
                weights.len(),
                self.n_objectives()
            )));
        }
        match (self, user) {
            (Task::Sphere(pop), User::Sphere(u)) => {
                let v = u.eval(x, weights)?;
                let noise = if pop.noise_sd > 0.0 {
                    use rand_distr::Distribution;
                    let mut rng = seed::child_rng(seed_value, &[seed::tag::EVALUATION]);
                    rand_distr::Normal::new(0.0, pop.noise_sd)
                        .map_err(|e| Error::Config(e.to_string()))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                Ok(Evaluation {
                    objectives: vec![u.scale * v.y1, u.scale * v.y2],
                    raw: vec![v.y1, v.y2],
                    y: v.y + noise,
                })
            }
            (Task::Typing { corpus, .. }, User::Typist(u)) => {
                let kb = KeyboardDesign::new(x.first().copied().unwrap_or(f64::NAN), x.get(1).copied().unwrap_or(f64::NAN))?;
                let mut rng = seed::child_rng(seed_value, &[seed::tag::EVALUATION]);
                let sentence = corpus.request(&mut rng);
                let out = typing::type_sentence_with(u, &kb, &sentence, &mut rng)?;
                let objectives = vec![typing::speed_score(out.wpm), typing::accuracy_score(out.error_rate)];
                Ok(Evaluation {
                    y: typing::objective(out.wpm, out.error_rate, weights)?,
                    objectives,
                    raw: vec![out.wpm, out.error_rate],
                })
            }
            _ => Err(Error::Config(format!("user kind does not match the {} task", self.name()))),
        }
    }

    /// Expected per-objective values on the dense reference grid, plus any
    /// `extra` design points (so `f_max` also bounds the search grid).
    pub fn reference(&self, user: &User, cfg: &ReferenceConfig, extra: &[Vec<f64>], seed_value: u64) -> Result<Reference> {
        let grid = make_grid(&self.space(), &vec![cfg.resolution; 2])?;
        let points = grid.points().iter().chain(extra);
        let mut comps = Vec::with_capacity(grid.len() + extra.len());
        match (self, user) {
            (Task::Sphere(_), User::Sphere(u)) => {
                for p in points {
                    comps.push(u.objectives(p)?.to_vec());
                }
            }
            (Task::Typing { corpus, .. }, User::Typist(u)) => {
                let rollouts = cfg.rollouts.max(1);
                let mut rng = seed::child_rng(seed_value, &[seed::tag::FMAX]);
                for p in points {
                    let kb = KeyboardDesign::new(p[0], p[1])?;
                    let (mut s, mut a) = (0.0, 0.0);
                    for _ in 0..rollouts {
                        let sentence = corpus.request(&mut rng);
                        let out = typing::type_sentence_with(u, &kb, &sentence, &mut rng)?;
                        s += typing::speed_score(out.wpm);
                        a += typing::accuracy_score(out.error_rate);
                    }
                    comps.push(vec![s / rollouts as f64, a / rollouts as f64]);
                }
            }
            _ => return Err(Error::Config(format!("user kind does not match the {} task", self.name()))),
        }
        Reference::from_components(comps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(a: f64) -> ObjectiveWeights {
        ObjectiveWeights::new(&[a, 1.0 - a]).unwrap()
    }

    #[test]
    fn sphere_reference_attains_the_base_maximum() {
        let task = Task::Sphere(SpherePopulation::training());
        let user = User::Sphere(SphereUser::default());
        let reference = task
            .reference(&user, &ReferenceConfig { resolution: 200, rollouts: 1 }, &[vec![0.4, 0.4]], 0)
            .unwrap();
        assert_eq!(reference.f_max(&w(1.0)), 1.0);
        let grid = make_grid(&task.space(), &[10, 10]).unwrap();
        for a in [0.0, 0.3, 0.8] {
            let f = reference.f_max(&w(a));
            for p in grid.points() {
                assert!(task.evaluate(&user, p, &w(a), 0).unwrap().y <= f + 1e-12);
            }
        }
    }

    #[test]
    fn evaluations_are_linear_in_weights() {
        let task = Task::Sphere(SpherePopulation::training());
        let users = task.sample_users(3, 2).unwrap();
        for u in &users {
            let e = task.evaluate(u, &[0.2, 0.7], &w(0.25), 0).unwrap();
            assert!((e.y - w(0.25).scalarize(&e.objectives)).abs() < 1e-12);
        }
    }

    #[test]
    fn typing_evaluation_is_seeded() {
        let task = Task::typing(TypistPopulation::study());
        let users = task.sample_users(1, 4).unwrap();
        let a = task.evaluate(&users[0], &[30.0, 30.0], &w(0.7), 5).unwrap();
        assert_eq!(a, task.evaluate(&users[0], &[30.0, 30.0], &w(0.7), 5).unwrap());
        assert!((0.0..=1.0).contains(&a.y));
        assert!(task.evaluate(&users[0], &[10.0, 30.0], &w(0.7), 5).is_err());
    }

    #[test]
    fn mismatched_user_is_rejected() {
        let task = Task::typing(TypistPopulation::study());
        assert!(task.evaluate(&User::Sphere(SphereUser::default()), &[30.0, 30.0], &w(0.5), 0).is_err());
    }
}
