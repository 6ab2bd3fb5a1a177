//! Gaussian-process regression with a Matérn-5/2 ARD kernel.
//!
//! Inputs are mapped to the unit cube of the owning [`DesignSpace`] and
//! targets are standardized per fit. Hyperparameters (lengthscales,
//! outputscale, noise) live in log space while they are optimized by
//! multi-restart Adam ascent on the log marginal likelihood of the
//! standardized targets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::design_space::DesignSpace;
use crate::error::{Error, Result};
use crate::seed;

const SQRT5: f64 = 2.236_067_977_499_79;
const JITTER_LADDER: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

pub const NOISE_FLOOR: f64 = 1e-6;
pub const PRIOR_LENGTHSCALE: f64 = 0.5;
pub const PRIOR_OUTPUTSCALE: f64 = 1.0;
pub const PRIOR_NOISE: f64 = 1e-4;

const LOG_LENGTHSCALE_BOUNDS: (f64, f64) = (-3.0, 2.302_585_092_994_046); // [0.05, 10]
const LOG_OUTPUTSCALE_BOUNDS: (f64, f64) = (-2.995_732_273_553_991, 2.995_732_273_553_991); // [0.05, 20]
const LOG_NOISE_BOUNDS: (f64, f64) = (-13.815_510_557_964_274, 0.0); // [1e-6, 1]

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscales: Vec<f64>,
    pub outputscale: f64,
    pub noise: f64,
}

impl Hyperparameters {
    pub fn prior(dims: usize) -> Self {
        Self {
            lengthscales: vec![PRIOR_LENGTHSCALE; dims],
            outputscale: PRIOR_OUTPUTSCALE,
            noise: PRIOR_NOISE,
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.outputscale.ln());
        v.push(self.noise.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            lengthscales: v[..d].iter().map(|l| l.exp()).collect(),
            outputscale: v[d].exp(),
            noise: v[d + 1].exp().max(NOISE_FLOOR),
        }
    }

    fn validate(&self, dims: usize) -> Result<()> {
        if self.lengthscales.len() != dims {
            return Err(Error::Shape(format!(
                "{} lengthscales for {dims} dimensions",
                self.lengthscales.len()
            )));
        }
        if self.lengthscales.iter().any(|l| !(*l > 0.0)) || !(self.outputscale > 0.0) {
            return Err(Error::Config("kernel scales must be positive".into()));
        }
        Ok(())
    }
}

/// Options for hyperparameter optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            steps: 100,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Predictive mean and latent standard deviation, in original target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    space: DesignSpace,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    hyper: Hyperparameters,
    y_mean: f64,
    y_std: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn matern52(a: &[f64], b: &[f64], lengthscales: &[f64], outputscale: f64) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    let r = r2.sqrt();
    outputscale * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
}

fn kernel_matrix(xs: &[Vec<f64>], hyper: &Hyperparameters) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = matern52(&xs[i], &xs[j], &hyper.lengthscales, hyper.outputscale);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factorize(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in &JITTER_LADDER {
        let mut a = k.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += noise + jitter;
        }
        if let Some(c) = a.cholesky() {
            return Ok((c, jitter));
        }
    }
    Err(Error::NumericalFailure(
        "covariance not positive definite after jitter 1e-4".into(),
    ))
}

fn standardize(ys: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (ys.iter().map(|y| (y - mean) / std).collect(), mean, std)
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, alpha: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let l = chol.l_dirty();
    let log_det_half: f64 = (0..y.len()).map(|i| l[(i, i)].ln()).sum();
    -0.5 * y.dot(alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood and its gradient with respect to the log
/// hyperparameters `[log l_1.. log l_d, log s, log noise]`.
fn lml_and_grad(xs: &[Vec<f64>], y: &DVector<f64>, log_params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let hyper = Hyperparameters::from_log(log_params);
    let d = hyper.lengthscales.len();
    let n = xs.len();
    let k = kernel_matrix(xs, &hyper);
    let (chol, _) = factorize(&k, hyper.noise)?;
    let alpha = chol.solve(y);
    let lml = lml_from_factor(&chol, &alpha, y);
    let k_inv = chol.inverse();

    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - k_inv[(i, j)];
            // outputscale: dK/dlog s = K (kernel part only)
            grad[d] += w * k[(i, j)];
            if i == j {
                grad[d + 1] += w * hyper.noise;
                continue;
            }
            let mut r2 = 0.0;
            for (dim, l) in hyper.lengthscales.iter().enumerate() {
                r2 += ((xs[i][dim] - xs[j][dim]) / l).powi(2);
            }
            let r = r2.sqrt();
            let common = hyper.outputscale * 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
            for (dim, l) in hyper.lengthscales.iter().enumerate() {
                let scaled = (xs[i][dim] - xs[j][dim]) / l;
                grad[dim] += w * common * scaled * scaled;
            }
        }
    }
    for g in &mut grad {
        *g *= 0.5;
    }
    Ok((lml, grad))
}

fn clamp_log(v: &mut [f64]) {
    let d = v.len() - 2;
    for x in &mut v[..d] {
        *x = x.clamp(LOG_LENGTHSCALE_BOUNDS.0, LOG_LENGTHSCALE_BOUNDS.1);
    }
    v[d] = v[d].clamp(LOG_OUTPUTSCALE_BOUNDS.0, LOG_OUTPUTSCALE_BOUNDS.1);
    v[d + 1] = v[d + 1].clamp(LOG_NOISE_BOUNDS.0, LOG_NOISE_BOUNDS.1);
}

fn ascend(xs: &[Vec<f64>], y: &DVector<f64>, start: Vec<f64>, cfg: &FitConfig) -> Option<(f64, Vec<f64>)> {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut params = start;
    clamp_log(&mut params);
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for step in 1..=cfg.steps {
        let Ok((lml, grad)) = lml_and_grad(xs, y, &params) else {
            break;
        };
        if !lml.is_finite() {
            break;
        }
        if best.as_ref().map_or(true, |(b, _)| lml > *b) {
            best = Some((lml, params.clone()));
        }
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - b1.powi(step as i32));
            let v_hat = v[i] / (1.0 - b2.powi(step as i32));
            params[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        clamp_log(&mut params);
    }
    if let Ok((lml, _)) = lml_and_grad(xs, y, &params) {
        if lml.is_finite() && best.as_ref().map_or(true, |(b, _)| lml > *b) {
            best = Some((lml, params));
        }
    }
    best
}

/// Observation count below which hyperparameters stay at the prior.
pub const WARMUP_OBSERVATIONS: usize = 3;

/// Fits the surrogate used inside optimization loops: prior hyperparameters
/// during warm-up, multi-restart optimization afterwards.
pub fn fit_surrogate(xs: &[Vec<f64>], ys: &[f64], space: &DesignSpace, seed_value: u64) -> Result<GpModel> {
    if xs.len() < WARMUP_OBSERVATIONS {
        GpModel::with_hyperparameters(xs, ys, space, Hyperparameters::prior(space.dims()))
    } else {
        GpModel::fit(xs, ys, space, &FitConfig::with_seed(seed_value))
    }
}

impl GpModel {
    /// Fits a GP, optimizing hyperparameters when at least two observations
    /// exist. With a single observation the prior hyperparameters are kept.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], space: &DesignSpace, cfg: &FitConfig) -> Result<Self> {
        let (unit, y_std_vals, _, _) = Self::prepare(xs, ys, space)?;
        let dims = space.dims();
        let prior = Hyperparameters::prior(dims);
        if xs.len() < 2 || cfg.restarts == 0 || cfg.steps == 0 {
            return Self::with_hyperparameters(xs, ys, space, prior);
        }
        let y = DVector::from_vec(y_std_vals);
        let mut rng = seed::child_rng(cfg.seed, &[seed::tag::GP_RESTARTS]);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for restart in 0..cfg.restarts {
            let start = if restart == 0 {
                prior.to_log()
            } else {
                let mut v: Vec<f64> = (0..dims).map(|_| rng.gen_range(0.1f64.ln()..0.0)).collect();
                v.push(rng.gen_range(0.5f64.ln()..2.0f64.ln()));
                v.push(rng.gen_range(1e-5f64.ln()..1e-2f64.ln()));
                v
            };
            if let Some((lml, params)) = ascend(&unit, &y, start, cfg) {
                if best.as_ref().map_or(true, |(b, _)| lml > *b) {
                    best = Some((lml, params));
                }
            }
        }
        let hyper = match best {
            Some((_, p)) => Hyperparameters::from_log(&p),
            None => prior,
        };
        Self::with_hyperparameters(xs, ys, space, hyper)
    }

    /// Conditions a GP on data with fixed hyperparameters.
    pub fn with_hyperparameters(
        xs: &[Vec<f64>],
        ys: &[f64],
        space: &DesignSpace,
        hyper: Hyperparameters,
    ) -> Result<Self> {
        let (unit, y_stdized, y_mean, y_std) = Self::prepare(xs, ys, space)?;
        hyper.validate(space.dims())?;
        let hyper = Hyperparameters {
            noise: hyper.noise.max(NOISE_FLOOR),
            ..hyper
        };
        let k = kernel_matrix(&unit, &hyper);
        let (chol, jitter) = factorize(&k, hyper.noise)?;
        let alpha = chol.solve(&DVector::from_vec(y_stdized.clone()));
        Ok(Self {
            space: space.clone(),
            train_x: unit,
            train_y: y_stdized,
            hyper,
            y_mean,
            y_std,
            chol,
            alpha,
            jitter,
        })
    }

    fn prepare(xs: &[Vec<f64>], ys: &[f64], space: &DesignSpace) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64, f64)> {
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if xs.len() != ys.len() {
            return Err(Error::Shape(format!("{} inputs but {} targets", xs.len(), ys.len())));
        }
        if let Some(bad) = ys.iter().find(|y| !y.is_finite()) {
            return Err(Error::Numeric(format!("target {bad}")));
        }
        let unit = xs.iter().map(|x| space.normalize(x)).collect::<Result<Vec<_>>>()?;
        let (y_stdized, mean, std) = standardize(ys);
        Ok((unit, y_stdized, mean, std))
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.train_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_x.is_empty()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_std(&self) -> f64 {
        self.y_std
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    /// Standardized training targets.
    pub fn train_targets(&self) -> &[f64] {
        &self.train_y
    }

    /// Jitter added on top of the noise to obtain a positive-definite factor.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor of `K + noise * I`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Posterior at points given in design units. Points outside the bounds
    /// are extrapolated.
    pub fn predict(&self, points: &[Vec<f64>]) -> Posterior {
        let unit: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                p.iter()
                    .zip(self.space.lower().iter().zip(self.space.upper()))
                    .map(|(&x, (&lo, &hi))| (x - lo) / (hi - lo))
                    .collect()
            })
            .collect();
        self.predict_unit(&unit)
    }

    /// Posterior at points already mapped to the unit cube.
    pub fn predict_unit(&self, unit_points: &[Vec<f64>]) -> Posterior {
        let n = self.train_x.len();
        let m = unit_points.len();
        let mut k_star = DMatrix::zeros(n, m);
        for (j, q) in unit_points.iter().enumerate() {
            for (i, x) in self.train_x.iter().enumerate() {
                k_star[(i, j)] = matern52(x, q, &self.hyper.lengthscales, self.hyper.outputscale);
            }
        }
        let mean_std = k_star.transpose() * &self.alpha;
        let mut v = k_star;
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let prior_var = self.hyper.outputscale;
        let mut means = Vec::with_capacity(m);
        let mut stds = Vec::with_capacity(m);
        for j in 0..m {
            let explained: f64 = v.column(j).norm_squared();
            let var = (prior_var - explained).max(0.0);
            means.push(mean_std[j] * self.y_std + self.y_mean);
            stds.push(var.sqrt() * self.y_std);
        }
        Posterior { means, stds }
    }

    /// Gaussian log marginal likelihood of the standardized targets under the
    /// stored kernel.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_column_slice(&self.train_y);
        lml_from_factor(&self.chol, &self.alpha, &y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit1() -> DesignSpace {
        DesignSpace::unit(1)
    }

    #[test]
    fn single_observation_reverts_to_its_value() {
        let gp = GpModel::fit(&[vec![0.3]], &[0.5], &unit1(), &FitConfig::default()).unwrap();
        let post = gp.predict(&[vec![0.3]]);
        assert!((post.means[0] - 0.5).abs() < 1e-3);
        assert_eq!(gp.hyperparameters(), &Hyperparameters::prior(1));
    }

    #[test]
    fn two_points_are_interpolated() {
        let xs = vec![vec![0.2], vec![0.8]];
        let ys = vec![1.0, -1.0];
        let gp = GpModel::fit(&xs, &ys, &unit1(), &FitConfig::default()).unwrap();
        let post = gp.predict(&xs);
        let noise_sd = gp.hyperparameters().noise.sqrt() * gp.y_std();
        for (m, y) in post.means.iter().zip(&ys) {
            assert!((m - y).abs() <= 3.0 * noise_sd + 1e-6, "{m} vs {y}");
        }
    }

    #[test]
    fn far_queries_revert_to_prior() {
        let xs = vec![vec![0.1], vec![0.2], vec![0.3]];
        let ys = vec![1.0, 2.0, 4.0];
        let hyper = Hyperparameters {
            lengthscales: vec![0.05],
            outputscale: 1.3,
            noise: 1e-4,
        };
        let gp = GpModel::with_hyperparameters(&xs, &ys, &unit1(), hyper).unwrap();
        let post = gp.predict(&[vec![1.0]]); // 14 lengthscales away
        assert!((post.means[0] - gp.y_mean()).abs() <= 0.01 * gp.y_std());
        let prior_sd = 1.3f64.sqrt() * gp.y_std();
        assert!((post.stds[0] - prior_sd).abs() / prior_sd < 0.01);
    }

    #[test]
    fn near_noiseless_interpolation_has_tiny_std() {
        let xs = vec![vec![0.25], vec![0.75]];
        let hyper = Hyperparameters {
            lengthscales: vec![0.5],
            outputscale: 1.0,
            noise: 1e-6,
        };
        let gp = GpModel::with_hyperparameters(&xs, &[0.0, 1.0], &unit1(), hyper).unwrap();
        let post = gp.predict(&xs);
        assert!(post.stds.iter().all(|s| *s <= 2e-3));
    }

    #[test]
    fn single_point_lml_matches_scalar_density() {
        let hyper = Hyperparameters {
            lengthscales: vec![0.5],
            outputscale: 1.0,
            noise: 1e-6,
        };
        let gp = GpModel::with_hyperparameters(&[vec![0.5]], &[0.0], &unit1(), hyper).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0f64 + 1e-6).ln();
        assert!((gp.log_marginal_likelihood() - expected).abs() < 1e-12);
    }

    #[test]
    fn lml_is_scale_invariant_and_deterministic() {
        let xs = vec![vec![0.1], vec![0.4], vec![0.9]];
        let ys = vec![0.3, -0.2, 0.8];
        let hyper = Hyperparameters::prior(1);
        let a = GpModel::with_hyperparameters(&xs, &ys, &unit1(), hyper.clone()).unwrap();
        let scaled: Vec<f64> = ys.iter().map(|y| 7.5 * y).collect();
        let b = GpModel::with_hyperparameters(&xs, &scaled, &unit1(), hyper).unwrap();
        assert!((a.log_marginal_likelihood() - b.log_marginal_likelihood()).abs() < 1e-10);
        assert_eq!(
            a.log_marginal_likelihood().to_bits(),
            a.log_marginal_likelihood().to_bits()
        );
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let xs = vec![vec![0.1, 0.2], vec![0.4, 0.9], vec![0.8, 0.3], vec![0.5, 0.5]];
        let y = DVector::from_vec(vec![0.5, -1.0, 1.2, -0.7]);
        let p = vec![(0.4f64).ln(), (0.7f64).ln(), (1.3f64).ln(), (1e-2f64).ln()];
        let (_, grad) = lml_and_grad(&xs, &y, &p).unwrap();
        for i in 0..p.len() {
            let h = 1e-6;
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (lml_and_grad(&xs, &y, &up).unwrap().0 - lml_and_grad(&xs, &y, &dn).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn fitting_improves_likelihood_over_prior() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
        let prior = GpModel::with_hyperparameters(&xs, &ys, &unit1(), Hyperparameters::prior(1)).unwrap();
        let fitted = GpModel::fit(&xs, &ys, &unit1(), &FitConfig::default()).unwrap();
        assert!(fitted.log_marginal_likelihood() >= prior.log_marginal_likelihood() - 1e-9);
    }

    #[test]
    fn fit_is_deterministic_given_seed() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, (i * i) as f64 / 25.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] - x[1] * 2.0).collect();
        let space = DesignSpace::unit(2);
        let a = GpModel::fit(&xs, &ys, &space, &FitConfig::with_seed(3)).unwrap();
        let b = GpModel::fit(&xs, &ys, &space, &FitConfig::with_seed(3)).unwrap();
        assert_eq!(a.hyperparameters(), b.hyperparameters());
        assert_eq!(a.predict(&xs), b.predict(&xs));
    }

    #[test]
    fn duplicate_points_with_conflicting_targets_are_absorbed() {
        let xs = vec![vec![0.5], vec![0.5]];
        let gp = GpModel::fit(&xs, &[0.0, 1.0], &unit1(), &FitConfig::default()).unwrap();
        assert!(gp.predict(&[vec![0.5]]).means[0].is_finite());
    }

    #[test]
    fn cholesky_reconstructs_covariance() {
        let xs = vec![vec![0.1], vec![0.15], vec![0.7]];
        let hyper = Hyperparameters::prior(1);
        let gp = GpModel::with_hyperparameters(&xs, &[1.0, 2.0, 0.0], &unit1(), hyper.clone()).unwrap();
        let l = gp.cholesky_factor();
        let mut k = kernel_matrix(&xs, &hyper);
        for i in 0..3 {
            k[(i, i)] += hyper.noise + gp.jitter();
        }
        assert!((&l * l.transpose() - k).amax() < 1e-8);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(
            GpModel::fit(&[], &[], &unit1(), &FitConfig::default()).unwrap_err(),
            Error::EmptyDataset
        );
    }
}
