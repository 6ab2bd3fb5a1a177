//! The neural acquisition function: featurization of the surrogate state,
//! the categorical policy over grid candidates, and candidate selection.
//!
//! Input layout for a grid of `s` points and `N` objectives:
//! `[μ(x_1), σ(x_1), …, μ(x_s), σ(x_s), t/T, w_1 … w_N]`. Means are
//! standardized over the grid and standard deviations divided by their grid
//! maximum, so the policy does not depend on the objective's scale. Before
//! any observation the means are 0 and the deviations 1.
//!
//! The network is not permutation-equivariant: it learns the grid layout.

use nalgebra::DMatrix;
use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::design_space::ObjectiveWeights;
use crate::error::{Error, Result};
use crate::gp::Posterior;
use crate::nn::{Head, Mode, Network, NetworkSpec};
use crate::seed;
use crate::stats::argmax;

const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithWeights,
    WithoutWeights,
}

impl Variant {
    pub fn input_len(self, grid_size: usize, n_objectives: usize) -> usize {
        match self {
            Variant::WithWeights => 2 * grid_size + 1 + n_objectives,
            Variant::WithoutWeights => 2 * grid_size + 1,
        }
    }
}

/// Hidden widths of the acquisition network.
pub fn default_hidden() -> Vec<usize> {
    vec![256; 6]
}

/// Actor architecture for a grid of `grid_size` candidates.
pub fn actor_spec(grid_size: usize, n_objectives: usize, variant: Variant, hidden: Vec<usize>) -> NetworkSpec {
    NetworkSpec {
        input_dim: variant.input_len(grid_size, n_objectives),
        hidden,
        head: Head::Softmax { outputs: grid_size },
        dropout_p: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NafInput(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NafDistribution(pub Vec<f64>);

impl NafDistribution {
    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Sample { seed: u64 },
    Argmax,
}

/// Builds the policy input. `posterior = None` encodes the empty surrogate.
pub fn featurize(
    posterior: Option<&Posterior>,
    grid_size: usize,
    t: usize,
    budget: usize,
    weights: &ObjectiveWeights,
    variant: Variant,
) -> Result<NafInput> {
    if budget == 0 || t >= budget {
        return Err(Error::Shape(format!("iteration {t} outside budget {budget}")));
    }
    let mut v = Vec::with_capacity(variant.input_len(grid_size, weights.len()));
    match posterior {
        None => {
            for _ in 0..grid_size {
                v.push(0.0);
                v.push(1.0);
            }
        }
        Some(post) => {
            if post.len() != grid_size || post.stds.len() != grid_size {
                return Err(Error::Shape(format!(
                    "posterior over {} points, grid has {grid_size}",
                    post.len()
                )));
            }
            let n = grid_size as f64;
            let mean = post.means.iter().sum::<f64>() / n;
            let sd = (post.means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n)
                .sqrt()
                .max(SCALE_FLOOR);
            let max_std = post.stds.iter().copied().fold(0.0, f64::max).max(SCALE_FLOOR);
            for (m, s) in post.means.iter().zip(&post.stds) {
                v.push((m - mean) / sd);
                v.push(s / max_std);
            }
        }
    }
    v.push(t as f64 / budget as f64);
    if variant == Variant::WithWeights {
        v.extend_from_slice(weights.as_slice());
    }
    Ok(NafInput(v))
}

pub fn policy(actor: &Network, input: &NafInput) -> Result<NafDistribution> {
    Ok(NafDistribution(actor.forward(&input.0, Mode::Eval)?))
}

/// Log-probabilities for a batch of inputs (one per column).
pub fn log_policy_batch(actor: &Network, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(actor.forward_batch(inputs, Mode::Eval)?.outputs().clone())
}

pub fn select(dist: &NafDistribution, mode: SelectMode) -> usize {
    match mode {
        SelectMode::Argmax => argmax(&dist.0),
        SelectMode::Sample { seed: s } => {
            let mut rng = seed::child_rng(s, &[seed::tag::ACTION]);
            match WeightedIndex::new(&dist.0) {
                Ok(w) => w.sample(&mut rng),
                Err(_) => argmax(&dist.0),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: &[f64]) -> ObjectiveWeights {
        ObjectiveWeights::new(v).unwrap()
    }

    #[test]
    fn input_length_and_budget_entry() {
        let x = featurize(None, 100, 0, 20, &w(&[0.5, 0.5]), Variant::WithWeights).unwrap();
        assert_eq!(x.0.len(), 203);
        assert_eq!(x.0[200], 0.0);
        assert_eq!(&x.0[201..], &[0.5, 0.5]);
        let y = featurize(None, 100, 19, 20, &w(&[0.5, 0.5]), Variant::WithoutWeights).unwrap();
        assert_eq!(y.0.len(), 201);
        assert!((y.0[200] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn empty_surrogate_convention() {
        let x = featurize(None, 3, 0, 5, &w(&[1.0]), Variant::WithWeights).unwrap();
        assert_eq!(x.0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_means_standardize_to_zero() {
        let post = Posterior {
            means: vec![2.0; 4],
            stds: vec![0.1, 0.2, 0.4, 0.2],
        };
        let x = featurize(Some(&post), 4, 1, 5, &w(&[1.0]), Variant::WithoutWeights).unwrap();
        let mus: Vec<f64> = x.0[..8].iter().step_by(2).copied().collect();
        let sds: Vec<f64> = x.0[1..8].iter().step_by(2).copied().collect();
        assert_eq!(mus, vec![0.0; 4]);
        assert_eq!(sds, vec![0.25, 0.5, 1.0, 0.5]);
    }

    #[test]
    fn featurize_rejects_mismatch() {
        let post = Posterior {
            means: vec![0.0; 3],
            stds: vec![1.0; 3],
        };
        assert!(matches!(
            featurize(Some(&post), 4, 0, 5, &w(&[1.0]), Variant::WithWeights),
            Err(Error::Shape(_))
        ));
        assert!(featurize(None, 4, 5, 5, &w(&[1.0]), Variant::WithWeights).is_err());
    }

    #[test]
    fn zero_logits_give_uniform_policy() {
        let spec = actor_spec(5, 2, Variant::WithWeights, vec![8]);
        let mut net = Network::init(&spec, 0).unwrap();
        let last = net.layers_mut().last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.0);
        let x = featurize(None, 5, 0, 10, &w(&[0.3, 0.7]), Variant::WithWeights).unwrap();
        let d = policy(&net, &x).unwrap();
        assert!(d.0.iter().all(|p| (p - 0.2).abs() < 1e-15));
        assert!((d.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn selection_rules() {
        let d = NafDistribution(vec![0.1, 0.8, 0.1]);
        assert_eq!(select(&d, SelectMode::Argmax), 1);
        assert_eq!(select(&NafDistribution(vec![0.5, 0.5]), SelectMode::Argmax), 0);
        let u = NafDistribution(vec![0.25; 4]);
        assert_eq!(
            select(&u, SelectMode::Sample { seed: 42 }),
            select(&u, SelectMode::Sample { seed: 42 })
        );
    }
}
