//! A small feed-forward network engine: dense Tanh layers with optional
//! inverted dropout, a softmax-categorical or scalar head, exact
//! reverse-mode gradients and Adam.
//!
//! Activations are laid out column-per-sample (`features × batch`) so that
//! each layer is a single matrix product.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

pub const CHECKPOINT_FORMAT: &str = "homi-network/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Categorical distribution over `outputs` classes.
    Softmax { outputs: usize },
    /// A single real output.
    Scalar,
}

impl Head {
    pub fn outputs(&self) -> usize {
        match self {
            Head::Softmax { outputs } => *outputs,
            Head::Scalar => 1,
        }
    }
}

/// Architecture of a Tanh MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
    #[serde(default)]
    pub dropout_p: f64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) || self.head.outputs() == 0 {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` for every dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.head.outputs());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_out × fan_in`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    fn zeros(fan_out: usize, fan_in: usize) -> Self {
        Self {
            w: DMatrix::zeros(fan_out, fan_in),
            b: DVector::zeros(fan_out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from `seed`.
    Train { seed: u64 },
}

/// Network parameters together with the spec they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Dense>,
}

/// Per-layer gradients, shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.w.nrows(), l.w.ncols())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.norm_squared() + l.b.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        for r in 0..l.w.nrows() {
            for c in 0..l.w.ncols() {
                out.push(l.w[(r, c)]);
            }
        }
        out.extend(l.b.iter());
    }
    out
}

/// Intermediate values of a batched forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: DMatrix<f64>,
    /// Post-Tanh activations of each hidden layer, before dropout.
    hidden: Vec<DMatrix<f64>>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)) per hidden layer.
    masks: Vec<Option<DMatrix<f64>>>,
    /// Log-probabilities for softmax heads, raw values for scalar heads.
    outputs: DMatrix<f64>,
}

impl Trace {
    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn batch_size(&self) -> usize {
        self.outputs.ncols()
    }
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in z.column_iter_mut() {
        col += b;
    }
}

fn log_softmax_columns(z: &mut DMatrix<f64>) {
    for mut col in z.column_iter_mut() {
        let max = col.max();
        let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        col.add_scalar_mut(-lse);
    }
}

impl Network {
    /// Xavier-uniform weights (gain 1), zero biases.
    pub fn init(spec: &NetworkSpec, seed_value: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::child_rng(seed_value, &[seed::tag::INIT]);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_out, fan_in)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..limit));
                Dense {
                    w,
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Multiplies the output layer's weights by `k`.
    pub fn scale_output_layer(&mut self, k: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.w *= k;
        }
    }

    pub fn from_layers(spec: NetworkSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len()
            || shapes
                .iter()
                .zip(&layers)
                .any(|(&(o, i), l)| l.w.shape() != (o, i) || l.b.len() != o)
        {
            return Err(Error::Shape("layers do not match spec".into()));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    l.w[(r, c)] = *it.next().unwrap();
                }
            }
            for v in l.b.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, inputs: &DMatrix<f64>) -> Result<()> {
        if inputs.nrows() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                inputs.nrows(),
                self.spec.input_dim
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        Ok(())
    }

    /// Samples inverted-dropout multipliers for a batch.
    pub fn sample_masks(&self, batch: usize, dropout_seed: u64) -> Vec<DMatrix<f64>> {
        let p = self.spec.dropout_p;
        let keep_scale = 1.0 / (1.0 - p);
        let mut rng = seed::child_rng(dropout_seed, &[seed::tag::DROPOUT]);
        self.spec
            .hidden
            .iter()
            .map(|&width| {
                DMatrix::from_fn(width, batch, |_, _| {
                    if rng.gen::<f64>() < p {
                        0.0
                    } else {
                        keep_scale
                    }
                })
            })
            .collect()
    }

    /// Batched forward pass. `inputs` is `input_dim × batch`.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>, mode: Mode) -> Result<Trace> {
        let masks = match mode {
            Mode::Train { seed } if self.spec.dropout_p > 0.0 => {
                Some(self.sample_masks(inputs.ncols(), seed))
            }
            _ => None,
        };
        self.forward_with_masks(inputs, masks.as_deref())
    }

    /// Forward pass with caller-provided dropout multipliers (one
    /// `width × batch` matrix per hidden layer). `None` disables dropout.
    pub fn forward_with_masks(&self, inputs: &DMatrix<f64>, masks: Option<&[DMatrix<f64>]>) -> Result<Trace> {
        self.check_input(inputs)?;
        if let Some(m) = masks {
            if m.len() != self.spec.hidden.len()
                || m.iter()
                    .zip(&self.spec.hidden)
                    .any(|(m, &w)| m.shape() != (w, inputs.ncols()))
            {
                return Err(Error::Shape("dropout masks do not match hidden layers".into()));
            }
        }
        let n_hidden = self.spec.hidden.len();
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut mask_store = Vec::with_capacity(n_hidden);
        let mut x = inputs.clone();
        for (i, layer) in self.layers[..n_hidden].iter().enumerate() {
            let mut z = &layer.w * &x;
            add_bias(&mut z, &layer.b);
            z.apply(|v| *v = v.tanh());
            let mask = masks.map(|m| m[i].clone());
            x = match &mask {
                Some(m) => z.component_mul(m),
                None => z.clone(),
            };
            hidden.push(z);
            mask_store.push(mask);
        }
        let last = &self.layers[n_hidden];
        let mut out = &last.w * &x;
        add_bias(&mut out, &last.b);
        if matches!(self.spec.head, Head::Softmax { .. }) {
            log_softmax_columns(&mut out);
        }
        Ok(Trace {
            inputs: inputs.clone(),
            hidden,
            masks: mask_store,
            outputs: out,
        })
    }

    /// Single-sample forward pass. Softmax heads return probabilities.
    pub fn forward(&self, input: &[f64], mode: Mode) -> Result<Vec<f64>> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        let trace = self.forward_batch(&x, mode)?;
        let col = trace.outputs.column(0);
        Ok(match self.spec.head {
            Head::Softmax { .. } => col.iter().map(|v| v.exp()).collect(),
            Head::Scalar => col.iter().copied().collect(),
        })
    }

    /// Backpropagates `d_outputs`, the gradient of the total loss with
    /// respect to the head outputs (log-probabilities for softmax heads).
    pub fn backward(&self, trace: &Trace, d_outputs: &DMatrix<f64>) -> Gradients {
        let n_hidden = self.spec.hidden.len();
        let mut g = d_outputs.clone();
        if matches!(self.spec.head, Head::Softmax { .. }) {
            // d/dz_j of sum_k g_k * logp_k = g_j - p_j * sum_k g_k
            for (mut gcol, lcol) in g.column_iter_mut().zip(trace.outputs.column_iter()) {
                let total: f64 = gcol.iter().sum();
                for (gv, lv) in gcol.iter_mut().zip(lcol.iter()) {
                    *gv -= lv.exp() * total;
                }
            }
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let layer_input: DMatrix<f64> = if li == 0 {
                trace.inputs.clone()
            } else {
                match &trace.masks[li - 1] {
                    Some(m) => trace.hidden[li - 1].component_mul(m),
                    None => trace.hidden[li - 1].clone(),
                }
            };
            let dw = &g * layer_input.transpose();
            let db = g.column_sum();
            grads.push(Dense { w: dw, b: db });
            if li == 0 {
                break;
            }
            let mut dx = self.layers[li].w.transpose() * &g;
            if let Some(m) = &trace.masks[li - 1] {
                dx.component_mul_assign(m);
            }
            let a = &trace.hidden[li - 1];
            dx.zip_apply(a, |d, av| *d *= 1.0 - av * av);
            g = dx;
        }
        debug_assert_eq!(grads.len(), n_hidden + 1);
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Mean loss over a batch and its exact gradient. `loss` receives the
    /// sample index and the head outputs (log-probabilities for softmax heads)
    /// and returns the sample loss with its gradient.
    pub fn grad<F>(&self, inputs: &DMatrix<f64>, mode: Mode, mut loss: F) -> Result<(f64, Gradients)>
    where
        F: FnMut(usize, &[f64]) -> (f64, Vec<f64>),
    {
        let trace = self.forward_batch(inputs, mode)?;
        let batch = trace.batch_size();
        let mut d_out = DMatrix::zeros(trace.outputs.nrows(), batch);
        let mut total = 0.0;
        for j in 0..batch {
            let out: Vec<f64> = trace.outputs.column(j).iter().copied().collect();
            let (l, g) = loss(j, &out);
            total += l;
            for (i, gv) in g.into_iter().enumerate() {
                d_out[(i, j)] = gv / batch as f64;
            }
        }
        let mean = total / batch as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("loss {mean}")));
        }
        Ok((mean, self.backward(&trace, &d_out)))
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let ckpt = Checkpoint::from_network(self, config_hash);
        std::fs::write(path, serde_json::to_vec(&ckpt)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        ckpt.into_network()
    }

    /// SHA-256 over the flattened parameter bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.flat() {
            h.update(v.to_bits().to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// On-disk network container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: NetworkSpec,
    /// `[fan_out, fan_in]` per dense layer; weights stored row-major then bias.
    pub shapes: Vec<[usize; 2]>,
    pub params: Vec<f64>,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn from_network(net: &Network, config_hash: &str) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            spec: net.spec.clone(),
            shapes: net.spec.layer_shapes().into_iter().map(|(o, i)| [o, i]).collect(),
            params: net.flat(),
            config_hash: config_hash.to_string(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {}", self.format)));
        }
        let expected: Vec<[usize; 2]> = self.spec.layer_shapes().into_iter().map(|(o, i)| [o, i]).collect();
        if expected != self.shapes {
            return Err(Error::Format("checkpoint shapes disagree with spec".into()));
        }
        let mut net = Network::init(&self.spec, 0)?;
        net.set_flat(&self.params)?;
        if !net.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite parameters".into()));
        }
        Ok(net)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &Network, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }
}

/// One Adam update of `net` in place.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != net.layers.len()
        || grads
            .layers
            .iter()
            .zip(&net.layers)
            .any(|(g, l)| g.w.shape() != l.w.shape() || g.b.len() != l.b.len())
    {
        return Err(Error::Shape("gradient shapes do not match parameters".into()));
    }
    state.step += 1;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
    };
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        for (((p, &gv), mv), vv) in layer.w.iter_mut().zip(g.w.iter()).zip(m.w.iter_mut()).zip(v.w.iter_mut()) {
            update(p, gv, mv, vv);
        }
        for (((p, &gv), mv), vv) in layer.b.iter_mut().zip(g.b.iter()).zip(m.b.iter_mut()).zip(v.b.iter_mut()) {
            update(p, gv, mv, vv);
        }
    }
    Ok(())
}
