//! Novelty detection with an MC-dropout regression network over
//! `(design, weights) → objective`.
//!
//! Each live observation is scored with a two-tailed p-value under the
//! network's predictive distribution; the running mean p̄ of those values
//! sets the fallback weight λ_EI given to Expected Improvement.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignSpace, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Head, Mode, Network, NetworkSpec};
use crate::seed;
use crate::stats::normal_sf;

pub const MODEL_FORMAT: &str = "homi-novelty/1";
pub const SIGMA_FLOOR: f64 = 1e-6;
const TARGET_STD_FLOOR: f64 = 1e-8;
pub const MIN_ROWS: usize = 100;

/// One `(x, w, y)` sample from a synthetic user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyRow {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoveltyConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub dropout_p: f64,
    pub mc_passes: usize,
    /// Novelty threshold τ on p̄.
    pub tau: f64,
    /// Iterations before the EI fallback may activate.
    pub k_min: usize,
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1e-3,
            batch_size: 128,
            hidden: vec![256, 256],
            dropout_p: 0.2,
            mc_passes: 50,
            tau: 0.2,
            k_min: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoveltyModel {
    net: Network,
    space: DesignSpace,
    n_objectives: usize,
    mc_passes: usize,
    y_mean: f64,
    y_std: f64,
}

#[derive(Serialize, Deserialize)]
struct NoveltyFile {
    format: String,
    space: DesignSpace,
    n_objectives: usize,
    mc_passes: usize,
    y_mean: f64,
    y_std: f64,
    network: crate::nn::Checkpoint,
}

fn model_input(space: &DesignSpace, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let mut v = space.normalize(x)?;
    v.extend_from_slice(w);
    Ok(v)
}

/// Trains the regression network with dropout active (MSE on standardized
/// targets). Deterministic given `seed`.
pub fn train_novelty(rows: &[NoveltyRow], space: &DesignSpace, cfg: &NoveltyConfig, seed_value: u64) -> Result<NoveltyModel> {
    if rows.len() < MIN_ROWS {
        return Err(Error::InvalidDataset(format!(
            "{} rows, at least {MIN_ROWS} required",
            rows.len()
        )));
    }
    if cfg.mc_passes < 2 {
        return Err(Error::Config("at least two MC passes required".into()));
    }
    let n_obj = rows[0].w.len();
    if n_obj == 0 {
        return Err(Error::InvalidDataset("rows carry no weights".into()));
    }
    let mut inputs = Vec::with_capacity(rows.len());
    for r in rows {
        if r.w.len() != n_obj || !r.y.is_finite() || r.w.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidDataset("inconsistent or non-finite row".into()));
        }
        inputs.push(model_input(space, &r.x, &r.w).map_err(|e| Error::InvalidDataset(e.to_string()))?);
    }
    let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let y_mean = crate::stats::mean(&ys);
    let y_std = crate::stats::population_std(&ys);
    let y_std = if y_std > TARGET_STD_FLOOR { y_std } else { 1.0 };
    let targets: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_std).collect();

    let spec = NetworkSpec {
        input_dim: space.dims() + n_obj,
        hidden: cfg.hidden.clone(),
        head: Head::Scalar,
        dropout_p: cfg.dropout_p,
    };
    let mut net = Network::init(&spec, seed::derive(seed_value, &[seed::tag::NOVELTY]))?;
    let mut adam = AdamState::new(&net, cfg.learning_rate);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = seed::child_rng(seed_value, &[seed::tag::NOVELTY, 1]);
    let dim = spec.input_dim;
    let batch_size = cfg.batch_size.max(1);
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let mut x = DMatrix::zeros(dim, chunk.len());
            for (j, &i) in chunk.iter().enumerate() {
                x.column_mut(j).copy_from_slice(&inputs[i]);
            }
            step += 1;
            let mode = Mode::Train {
                seed: seed::derive(seed_value, &[seed::tag::DROPOUT, step]),
            };
            let (_, grads) = net.grad(&x, mode, |j, out| {
                let err = out[0] - targets[chunk[j]];
                (err * err, vec![2.0 * err])
            })?;
            adam_step(&mut net, &grads, &mut adam)?;
        }
    }
    if !net.is_finite() {
        return Err(Error::Training("novelty network diverged".into()));
    }
    Ok(NoveltyModel {
        net,
        space: space.clone(),
        n_objectives: n_obj,
        mc_passes: cfg.mc_passes,
        y_mean,
        y_std,
    })
}

impl NoveltyModel {
    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn n_objectives(&self) -> usize {
        self.n_objectives
    }

    pub fn mc_passes(&self) -> usize {
        self.mc_passes
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    /// Predictive mean and standard deviation over `mc_passes` stochastic
    /// forward passes whose masks derive from `seed`.
    pub fn predict_mc(&self, x: &[f64], w: &ObjectiveWeights, seed_value: u64) -> Result<(f64, f64)> {
        let masks = self.net.sample_masks(self.mc_passes, seed_value);
        self.predict_with_masks(x, w, &masks)
    }

    /// MC prediction with explicit dropout multipliers, one column per pass.
    pub fn predict_with_masks(&self, x: &[f64], w: &ObjectiveWeights, masks: &[DMatrix<f64>]) -> Result<(f64, f64)> {
        if w.len() != self.n_objectives {
            return Err(Error::Shape(format!(
                "{} weights, model trained with {}",
                w.len(),
                self.n_objectives
            )));
        }
        let passes = masks.first().map_or(0, |m| m.ncols());
        if passes < 2 {
            return Err(Error::Config("at least two MC passes required".into()));
        }
        let input = model_input(&self.space, x, w.as_slice())?;
        let batch = DMatrix::from_fn(input.len(), passes, |r, _| input[r]);
        let trace = self.net.forward_with_masks(&batch, Some(masks))?;
        let samples: Vec<f64> = trace.outputs().iter().map(|v| v * self.y_std + self.y_mean).collect();
        let mean = crate::stats::mean(&samples);
        let sd = crate::stats::sample_std(&samples).max(SIGMA_FLOOR);
        Ok((mean, sd))
    }

    /// Deterministic (dropout-free) prediction.
    pub fn predict_mean(&self, x: &[f64], w: &ObjectiveWeights) -> Result<f64> {
        let input = model_input(&self.space, x, w.as_slice())?;
        Ok(self.net.forward(&input, Mode::Eval)?[0] * self.y_std + self.y_mean)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = NoveltyFile {
            format: MODEL_FORMAT.into(),
            space: self.space.clone(),
            n_objectives: self.n_objectives,
            mc_passes: self.mc_passes,
            y_mean: self.y_mean,
            y_std: self.y_std,
            network: crate::nn::Checkpoint::from_network(&self.net, ""),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: NoveltyFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unsupported novelty format {}", file.format)));
        }
        Ok(Self {
            net: file.network.into_network()?,
            space: file.space,
            n_objectives: file.n_objectives,
            mc_passes: file.mc_passes,
            y_mean: file.y_mean,
            y_std: file.y_std,
        })
    }
}

/// Two-tailed p-value of `y` under `N(mean, sigma²)`.
pub fn p_value(y: f64, mean: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    let z = (y - mean) / sigma;
    Ok((2.0 * normal_sf(z.abs())).clamp(0.0, 1.0))
}

/// Weight given to EI as a function of the running mean p-value.
pub fn lambda_ei(p_bar: f64, tau: f64) -> f64 {
    if p_bar <= 0.0 {
        1.0
    } else if p_bar >= tau {
        0.0
    } else {
        (tau - p_bar) / tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyState {
    pub p_values: Vec<f64>,
    pub tau: f64,
    pub k_min: usize,
    p_sum: f64,
}

impl NoveltyState {
    pub fn new(tau: f64, k_min: usize) -> Self {
        Self {
            p_values: Vec::new(),
            tau,
            k_min,
            p_sum: 0.0,
        }
    }

    /// Running mean of the recorded p-values, `None` before the first one.
    pub fn p_bar(&self) -> Option<f64> {
        (!self.p_values.is_empty()).then(|| self.p_sum / self.p_values.len() as f64)
    }

    pub fn update(&mut self, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidP(p));
        }
        self.p_values.push(p);
        self.p_sum += p;
        Ok(())
    }

    /// λ_EI for the current p̄; zero while no p-value exists.
    pub fn lambda(&self) -> f64 {
        self.p_bar().map_or(0.0, |p| lambda_ei(p, self.tau))
    }
}

/// Writes rows as CSV with header `x_1..x_d,w_1..w_N,y`.
pub fn write_dataset(path: &Path, rows: &[NoveltyRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (d, n) = rows.first().map_or((0, 0), |r| (r.x.len(), r.w.len()));
    let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    header.extend((1..=n).map(|i| format!("w_{i}")));
    header.push("y".into());
    writeln!(f, "{}", header.join(","))?;
    for r in rows {
        let fields: Vec<String> = r.x.iter().chain(&r.w).chain(std::iter::once(&r.y)).map(|v| v.to_string()).collect();
        writeln!(f, "{}", fields.join(","))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<NoveltyRow>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or(Error::EmptyDataset)??;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.iter().filter(|c| c.starts_with("x_")).count();
    let n = cols.iter().filter(|c| c.starts_with("w_")).count();
    if cols.len() != d + n + 1 || cols.last() != Some(&"y") {
        return Err(Error::Format(format!("unexpected dataset header {header}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != d + n + 1 {
            return Err(Error::Format(format!("row has {} fields", vals.len())));
        }
        rows.push(NoveltyRow {
            x: vals[..d].to_vec(),
            w: vals[d..d + n].to_vec(),
            y: vals[d + n],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> NoveltyConfig {
        NoveltyConfig {
            epochs: 60,
            hidden: vec![32, 32],
            batch_size: 32,
            ..NoveltyConfig::default()
        }
    }

    fn constant_rows(n: usize, y: f64) -> Vec<NoveltyRow> {
        (0..n)
            .map(|i| {
                let a = (i % 10) as f64 / 9.0;
                let b = (i / 10 % 10) as f64 / 9.0;
                NoveltyRow {
                    x: vec![a, b],
                    w: vec![a, 1.0 - a],
                    y,
                }
            })
            .collect()
    }

    #[test]
    fn p_value_reference_points() {
        assert_eq!(p_value(0.3, 0.3, 1.0).unwrap(), 1.0);
        assert!((p_value(1.96, 0.0, 1.0).unwrap() - 0.05).abs() < 5e-4);
        assert!((p_value(4.0, 0.0, 1.0).unwrap() - 6.33e-5).abs() < 1e-6);
        assert!(matches!(p_value(1.0, 0.0, 0.0), Err(Error::InvalidSigma(_))));
    }

    #[test]
    fn lambda_branches() {
        assert_eq!(lambda_ei(0.0, 0.2), 1.0);
        assert_eq!(lambda_ei(0.2, 0.2), 0.0);
        assert_eq!(lambda_ei(0.9, 0.2), 0.0);
        assert!((lambda_ei(0.1, 0.2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn running_mean_updates() {
        let mut s = NoveltyState::new(0.2, 3);
        assert_eq!(s.p_bar(), None);
        s.update(0.4).unwrap();
        assert_eq!(s.p_bar(), Some(0.4));
        let mut s = NoveltyState::new(0.2, 3);
        s.update(0.2).unwrap();
        s.update(0.4).unwrap();
        s.update(0.9).unwrap();
        assert!((s.p_bar().unwrap() - 0.5).abs() < 1e-15);
        s.update(0.5).unwrap();
        assert!((s.p_bar().unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(s.update(1.5), Err(Error::InvalidP(_))));
    }

    #[test]
    fn constant_targets_are_learned() {
        let rows = constant_rows(120, 0.7);
        let model = train_novelty(&rows, &DesignSpace::unit(2), &small_cfg(), 1).unwrap();
        let w = ObjectiveWeights::new(&[0.4, 0.6]).unwrap();
        for x in [[0.0, 0.0], [0.5, 0.3], [1.0, 1.0]] {
            let (mu, _) = model.predict_mc(&x, &w, 3).unwrap();
            assert!((mu - 0.7).abs() <= 0.05, "{mu}");
        }
    }

    #[test]
    fn training_is_deterministic_and_validates() {
        let rows = constant_rows(100, 0.1);
        let cfg = NoveltyConfig {
            epochs: 2,
            ..small_cfg()
        };
        let space = DesignSpace::unit(2);
        let a = train_novelty(&rows, &space, &cfg, 5).unwrap();
        let b = train_novelty(&rows, &space, &cfg, 5).unwrap();
        assert_eq!(a.network(), b.network());
        assert!(matches!(
            train_novelty(&rows[..50], &space, &cfg, 5),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn mc_prediction_with_forced_masks() {
        let rows = constant_rows(100, 0.0);
        let cfg = NoveltyConfig {
            epochs: 1,
            hidden: vec![4],
            ..small_cfg()
        };
        let model = train_novelty(&rows, &DesignSpace::unit(2), &cfg, 2).unwrap();
        let w = ObjectiveWeights::new(&[0.5, 0.5]).unwrap();
        let x = [0.2, 0.9];
        let keep = 1.0 / 0.8;
        // all units kept in both passes: zero spread, floored sigma
        let ones = vec![DMatrix::from_element(4, 2, keep)];
        let (_, sd) = model.predict_with_masks(&x, &w, &ones).unwrap();
        assert_eq!(sd, SIGMA_FLOOR);

        // pass 0 keeps everything, pass 1 drops everything
        let mixed = vec![DMatrix::from_fn(4, 2, |_, c| if c == 0 { keep } else { 0.0 })];
        let (mu, sd) = model.predict_with_masks(&x, &w, &mixed).unwrap();
        let net = model.network();
        let input = [0.2, 0.9, 0.5, 0.5];
        let h: Vec<f64> = (0..4)
            .map(|i| {
                let l = &net.layers()[0];
                (l.w[(i, 0)] * input[0] + l.w[(i, 1)] * input[1] + l.w[(i, 2)] * input[2] + l.w[(i, 3)] * input[3] + l.b[i]).tanh()
            })
            .collect();
        let out = &net.layers()[1];
        let full = out.b[0] + (0..4).map(|i| out.w[(0, i)] * h[i] * keep).sum::<f64>();
        let dropped = out.b[0];
        let (a, b) = (full * model.y_std + model.y_mean, dropped * model.y_std + model.y_mean);
        assert!((mu - (a + b) / 2.0).abs() < 1e-12);
        let expected_sd = ((a - b).abs() / 2f64.sqrt()).max(SIGMA_FLOOR);
        assert!((sd - expected_sd).abs() < 1e-12);
    }

    #[test]
    fn mc_prediction_is_seeded() {
        let rows = constant_rows(100, 0.3);
        let cfg = NoveltyConfig {
            epochs: 1,
            ..small_cfg()
        };
        let model = train_novelty(&rows, &DesignSpace::unit(2), &cfg, 2).unwrap();
        let w = ObjectiveWeights::new(&[0.5, 0.5]).unwrap();
        assert_eq!(
            model.predict_mc(&[0.1, 0.1], &w, 8).unwrap(),
            model.predict_mc(&[0.1, 0.1], &w, 8).unwrap()
        );
    }

    #[test]
    fn dataset_file_round_trip() {
        let rows = vec![
            NoveltyRow { x: vec![20.0, 35.5], w: vec![0.7, 0.3], y: 0.51 },
            NoveltyRow { x: vec![40.0, 20.0], w: vec![0.1, 0.9], y: -1e-3 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("novelty.csv");
        write_dataset(&p, &rows).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), rows);
    }
}
