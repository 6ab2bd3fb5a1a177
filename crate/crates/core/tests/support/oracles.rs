//! Independent reference computations shared by the oracle tests and the
//! acceptance run. Each returns the worst discrepancy it found.

#![allow(dead_code)]

use homi_core::acquisition::ei_value;
use homi_core::design_space::DesignSpace;
use homi_core::gp::{GpModel, Hyperparameters};
use homi_core::nn::{Head, Mode, Network, NetworkSpec};
use homi_core::seed;
use homi_core::users::typing::{hit_probability, layout, touch_sample, Key, KeyboardDesign, TypistPopulation};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Max |closed-form EI − Monte-Carlo EI| over random `(mean, std, f_best)`.
pub fn ei_vs_monte_carlo(cases: usize, samples: usize, seed_value: u64) -> f64 {
    let mut rng = seed::rng(seed_value);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let mean: f64 = rng.gen_range(-2.0..2.0);
        let std: f64 = rng.gen_range(0.01..1.5);
        let f_best: f64 = rng.gen_range(-2.0..2.0);
        let mc = (0..samples)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (mean + std * z - f_best).max(0.0)
            })
            .sum::<f64>()
            / samples as f64;
        worst = worst.max((ei_value(mean, std, f_best) - mc).abs());
    }
    worst
}

fn matern52(a: &[f64], b: &[f64], ls: &[f64], s: f64) -> f64 {
    let r = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum::<f64>().sqrt();
    let k = 5f64.sqrt() * r;
    s * (1.0 + k + k * k / 3.0) * (-k).exp()
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// Max |Δ mean| and |Δ std| between the GP and direct dense algebra on
/// random five-point problems with fixed hyperparameters.
pub fn gp_vs_dense(problems: usize, seed_value: u64) -> (f64, f64) {
    let mut rng = seed::rng(seed_value);
    let (mut dm, mut ds): (f64, f64) = (0.0, 0.0);
    for _ in 0..problems {
        let dims = rng.gen_range(1..=3);
        let lower: Vec<f64> = (0..dims).map(|_| rng.gen_range(-5.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.5..10.0)).collect();
        let space = DesignSpace::new(lower.clone(), upper.clone()).unwrap();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..dims).map(|d| rng.gen_range(lower[d]..upper[d])).collect())
            .collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let hyper = Hyperparameters {
            lengthscales: (0..dims).map(|_| rng.gen_range(0.1..1.5)).collect(),
            outputscale: rng.gen_range(0.3..3.0),
            noise: rng.gen_range(1e-4..0.1),
        };
        let gp = GpModel::with_hyperparameters(&xs, &ys, &space, hyper.clone()).unwrap();
        let queries: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..dims).map(|d| rng.gen_range(lower[d]..upper[d])).collect())
            .collect();
        let post = gp.predict(&queries);

        let unit = |p: &[f64]| -> Vec<f64> { p.iter().enumerate().map(|(d, v)| (v - lower[d]) / (upper[d] - lower[d])).collect() };
        let ux: Vec<Vec<f64>> = xs.iter().map(|x| unit(x)).collect();
        let mean_y = ys.iter().sum::<f64>() / 5.0;
        let (m0, s0) = (gp.y_mean(), gp.y_std());
        assert!((m0 - mean_y).abs() < 1e-12);
        let yt: Vec<f64> = ys.iter().map(|y| (y - m0) / s0).collect();
        let k: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| {
                        matern52(&ux[i], &ux[j], &hyper.lengthscales, hyper.outputscale)
                            + if i == j { hyper.noise + gp.jitter() } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let alpha = solve(k.clone(), yt);
        for (q, (mu, sd)) in queries.iter().zip(post.means.iter().zip(&post.stds)) {
            let uq = unit(q);
            let ks: Vec<f64> = ux.iter().map(|x| matern52(x, &uq, &hyper.lengthscales, hyper.outputscale)).collect();
            let mean = m0 + s0 * ks.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
            let v = solve(k.clone(), ks.clone());
            let var = (hyper.outputscale - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()).max(0.0);
            dm = dm.max((mean - mu).abs());
            ds = ds.max((var.sqrt() * s0 - sd).abs());
        }
    }
    (dm, ds)
}

/// Worst relative error between backpropagated and central-difference
/// gradients on a 1-8-2 softmax net and a 1-8-1 scalar net.
pub fn nn_finite_difference(seed_value: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for head in [Head::Softmax { outputs: 2 }, Head::Scalar] {
        let spec = NetworkSpec {
            input_dim: 1,
            hidden: vec![8],
            head,
            dropout_p: 0.0,
        };
        let mut net = Network::init(&spec, seed_value).unwrap();
        let mut rng = seed::rng(seed_value ^ 0x5eed);
        // Non-zero biases so every parameter has a gradient.
        let flat: Vec<f64> = net.flat().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        net.set_flat(&flat).unwrap();
        let inputs = DMatrix::from_fn(1, 4, |_, _| rng.gen_range(-2.0..2.0));
        let coeffs: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let loss = |j: usize, out: &[f64]| -> (f64, Vec<f64>) {
            match head {
                Head::Softmax { .. } => {
                    let l = -(coeffs[j][0] * out[0] + coeffs[j][1] * out[1]);
                    (l, vec![-coeffs[j][0], -coeffs[j][1]])
                }
                Head::Scalar => {
                    let d = out[0] - coeffs[j][0];
                    (0.5 * d * d, vec![d])
                }
            }
        };
        let (_, grads) = net.grad(&inputs, Mode::Eval, loss).unwrap();
        let analytic = grads.flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let eval = |delta: f64| {
                let mut p = flat.clone();
                p[i] += delta;
                let mut n = net.clone();
                n.set_flat(&p).unwrap();
                n.grad(&inputs, Mode::Eval, loss).unwrap().0
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Probability mass of N(c, sd²) on `[c − half, c + half]` by composite
/// Simpson integration of the density.
fn interval_mass(half: f64, sd: f64) -> f64 {
    let n = 4000;
    let h = 2.0 * half / n as f64;
    let pdf = |x: f64| (-0.5 * (x / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let mut s = pdf(-half) + pdf(half);
    for i in 1..n {
        s += pdf(-half + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Worst discrepancy among sampled hit rate, closed-form hit probability and
/// the numerically integrated rectangle mass, over random `(user, key)` pairs.
/// Returns `(max |sampled − integral|, max |closed form − integral|)`.
pub fn dgd_hit_rate(pairs: usize, samples: usize, seed_value: u64) -> (f64, f64) {
    let mut rng = seed::rng(seed_value);
    let pop = TypistPopulation::study();
    let space = KeyboardDesign::space();
    let (mut d_mc, mut d_cf): (f64, f64) = (0.0, 0.0);
    for _ in 0..pairs {
        let user = pop.sample_one(&mut rng);
        let kb = KeyboardDesign::new(
            rng.gen_range(space.lower()[0]..space.upper()[0]),
            rng.gen_range(space.lower()[1]..space.upper()[1]),
        )
        .unwrap();
        let keys = layout(&kb);
        let c = if rng.gen_bool(0.1) { ' ' } else { (b'a' + rng.gen_range(0..26u8)) as char };
        let key: Key = if c == ' ' { *keys.spacebar() } else { *keys.key(c).unwrap() };
        let hits = (0..samples).filter(|_| touch_sample(&user, &key, &mut rng).hit).count();
        let (sx, sy) = user.touch_sd(key.w, key.h);
        let integral = interval_mass(key.w / 2.0, sx) * interval_mass(key.h / 2.0, sy);
        d_mc = d_mc.max((hits as f64 / samples as f64 - integral).abs());
        d_cf = d_cf.max((hit_probability(&user, &key) - integral).abs());
    }
    (d_mc, d_cf)
}
