//! Monte-Carlo touch-typing simulator.
//!
//! A typist moves from key to key with Fitts'-law timing and lands on each
//! target with an axis-aligned Gaussian spread whose variance grows with the
//! key size (dual Gaussian distribution model). Keyboards are QWERTY with
//! uniform key size and no gaps.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignSpace, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const KEY_SIZE_MIN: f64 = 20.0;
pub const KEY_SIZE_MAX: f64 = 40.0;
pub const MOTOR_NOISE_SD: f64 = 0.15;
pub const MIN_MOVEMENT_TIME: f64 = 0.01;
pub const WPM_FLOOR: f64 = 5.0;
pub const WPM_CEIL: f64 = 22.0;
pub const ERROR_CEIL: f64 = 0.30;
pub const MIN_SENTENCE_LEN: usize = 26;
const RESAMPLE_CAP: usize = 100;
const SPACE: usize = 26;

/// Movement parameters in seconds, landing variances in mm².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypistUser {
    pub a: f64,
    pub b: f64,
    pub alpha_x: f64,
    pub var_x: f64,
    pub alpha_y: f64,
    pub var_y: f64,
    #[serde(default = "default_motor_noise")]
    pub motor_noise_sd: f64,
}

fn default_motor_noise() -> f64 {
    MOTOR_NOISE_SD
}

impl TypistUser {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.a, self.b, self.alpha_x, self.var_x, self.alpha_y, self.var_y, self.motor_noise_sd];
        if vals.iter().any(|v| !v.is_finite()) || self.b <= 0.0 || vals.iter().any(|v| *v < 0.0) {
            return Err(Error::Config(format!("invalid typist parameters {self:?}")));
        }
        Ok(())
    }

    /// Landing-point standard deviations for a key of size `w × h`.
    pub fn touch_sd(&self, w: f64, h: f64) -> (f64, f64) {
        (
            (self.alpha_x * w * w + self.var_x).sqrt(),
            (self.alpha_y * h * h + self.var_y).sqrt(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyboardDesign {
    pub key_width: f64,
    pub key_height: f64,
}

impl KeyboardDesign {
    pub fn new(key_width: f64, key_height: f64) -> Result<Self> {
        let ok = |v: f64| (KEY_SIZE_MIN - 1e-9..=KEY_SIZE_MAX + 1e-9).contains(&v);
        if !ok(key_width) || !ok(key_height) {
            return Err(Error::BoundsViolation(format!(
                "key size {key_width}×{key_height} mm outside [{KEY_SIZE_MIN}, {KEY_SIZE_MAX}]"
            )));
        }
        Ok(Self { key_width, key_height })
    }

    pub fn space() -> DesignSpace {
        DesignSpace::new(vec![KEY_SIZE_MIN; 2], vec![KEY_SIZE_MAX; 2]).expect("static bounds")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Key {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Key {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).abs() <= self.w / 2.0 && (y - self.cy).abs() <= self.h / 2.0
    }
}

/// Key rectangles for `a..z` (indices 0..26) followed by the spacebar.
#[derive(Debug, Clone)]
pub struct Layout {
    keys: [Key; 27],
}

const ROWS: [(&str, f64); 3] = [("qwertyuiop", 0.0), ("asdfghjkl", 0.5), ("zxcvbnm", 1.5)];

pub fn layout(kb: &KeyboardDesign) -> Layout {
    let (w, h) = (kb.key_width, kb.key_height);
    let mut keys = [Key { cx: 0.0, cy: 0.0, w, h }; 27];
    for (row, (letters, offset)) in ROWS.iter().enumerate() {
        for (col, c) in letters.bytes().enumerate() {
            keys[(c - b'a') as usize] = Key {
                cx: (offset + col as f64 + 0.5) * w,
                cy: (row as f64 + 0.5) * h,
                w,
                h,
            };
        }
    }
    keys[SPACE] = Key {
        cx: 5.0 * w,
        cy: 3.5 * h,
        w: 5.0 * w,
        h,
    };
    Layout { keys }
}

impl Layout {
    pub fn key(&self, c: char) -> Result<&Key> {
        key_index(c).map(|i| &self.keys[i])
    }

    pub fn spacebar(&self) -> &Key {
        &self.keys[SPACE]
    }
}

fn key_index(c: char) -> Result<usize> {
    match c {
        'a'..='z' => Ok(c as usize - 'a' as usize),
        ' ' => Ok(SPACE),
        _ => Err(Error::InvalidSentence(format!("unsupported character {c:?}"))),
    }
}

/// Noise-free Fitts'-law movement time.
pub fn fitts_mean(user: &TypistUser, distance: f64, width: f64) -> Result<f64> {
    if !(width > 0.0) {
        return Err(Error::InvalidKey(format!("key size {width} must be positive")));
    }
    if !(distance >= 0.0) {
        return Err(Error::InvalidKey(format!("distance {distance} must be non-negative")));
    }
    Ok(user.a + user.b * (distance / width + 1.0).log2())
}

/// Movement time with Gaussian motor noise, resampled until at least
/// `MIN_MOVEMENT_TIME`.
pub fn fitts_mt(user: &TypistUser, distance: f64, width: f64, rng: &mut Rng) -> Result<f64> {
    let mean = fitts_mean(user, distance, width)?;
    if user.motor_noise_sd == 0.0 {
        return Ok(mean.max(MIN_MOVEMENT_TIME));
    }
    let noise = Normal::new(0.0, user.motor_noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..RESAMPLE_CAP {
        let mt = mean + noise.sample(rng);
        if mt >= MIN_MOVEMENT_TIME {
            return Ok(mt);
        }
    }
    Ok(mean.max(MIN_MOVEMENT_TIME))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Touch {
    pub x: f64,
    pub y: f64,
    pub hit: bool,
}

pub fn touch_sample(user: &TypistUser, key: &Key, rng: &mut Rng) -> Touch {
    let (sx, sy) = user.touch_sd(key.w, key.h);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let x = key.cx + sx * std.sample(rng);
    let y = key.cy + sy * std.sample(rng);
    Touch { x, y, hit: key.contains(x, y) }
}

/// Closed-form hit probability of a centered landing distribution.
pub fn hit_probability(user: &TypistUser, key: &Key) -> f64 {
    let (sx, sy) = user.touch_sd(key.w, key.h);
    let axis = |half: f64, sd: f64| {
        if sd == 0.0 {
            1.0
        } else {
            libm::erf(half / (sd * std::f64::consts::SQRT_2))
        }
    };
    axis(key.w / 2.0, sx) * axis(key.h / 2.0, sy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypingOutcome {
    pub wpm: f64,
    pub error_rate: f64,
    pub keystrokes: usize,
    pub total_time: f64,
}

/// Per-keystroke record of one simulated sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Keystroke {
    pub target: char,
    pub distance: f64,
    pub movement_time: f64,
    pub hit: bool,
}

fn validate_sentence(sentence: &str) -> Result<()> {
    if sentence.chars().count() < MIN_SENTENCE_LEN {
        return Err(Error::InvalidSentence(format!(
            "sentence has {} characters, at least {MIN_SENTENCE_LEN} required",
            sentence.chars().count()
        )));
    }
    sentence.chars().try_for_each(|c| key_index(c).map(|_| ()))
}

pub fn type_sentence_trace(
    user: &TypistUser,
    kb: &KeyboardDesign,
    sentence: &str,
    rng: &mut Rng,
) -> Result<Vec<Keystroke>> {
    validate_sentence(sentence)?;
    let lay = layout(kb);
    let mut cur = *lay.spacebar();
    let mut out = Vec::with_capacity(sentence.len());
    for c in sentence.chars() {
        let target = *lay.key(c)?;
        let d = (target.cx - cur.cx).hypot(target.cy - cur.cy);
        let mt = fitts_mt(user, d, target.w.min(target.h), rng)?;
        let touch = touch_sample(user, &target, rng);
        out.push(Keystroke {
            target: c,
            distance: d,
            movement_time: mt,
            hit: touch.hit,
        });
        cur = target;
    }
    Ok(out)
}

fn summarize(trace: &[Keystroke]) -> TypingOutcome {
    let total_time: f64 = trace.iter().map(|k| k.movement_time).sum();
    let errors = trace.iter().filter(|k| !k.hit).count();
    let n = trace.len();
    TypingOutcome {
        wpm: (n as f64 / 5.0) / (total_time / 60.0),
        error_rate: errors as f64 / n as f64,
        keystrokes: n,
        total_time,
    }
}

pub fn type_sentence(user: &TypistUser, kb: &KeyboardDesign, sentence: &str, seed_value: u64) -> Result<TypingOutcome> {
    let mut rng = seed::rng(seed_value);
    type_sentence_with(user, kb, sentence, &mut rng)
}

pub fn type_sentence_with(user: &TypistUser, kb: &KeyboardDesign, sentence: &str, rng: &mut Rng) -> Result<TypingOutcome> {
    Ok(summarize(&type_sentence_trace(user, kb, sentence, rng)?))
}

pub fn speed_score(wpm: f64) -> f64 {
    ((wpm - WPM_FLOOR) / (WPM_CEIL - WPM_FLOOR)).clamp(0.0, 1.0)
}

pub fn accuracy_score(error_rate: f64) -> f64 {
    (1.0 - error_rate / ERROR_CEIL).clamp(0.0, 1.0)
}

/// Weighted speed/accuracy objective in `[0, 1]`.
pub fn objective(wpm: f64, error_rate: f64, weights: &ObjectiveWeights) -> Result<f64> {
    if weights.len() != 2 {
        return Err(Error::InvalidWeights(format!("typing needs 2 weights, got {}", weights.len())));
    }
    if !wpm.is_finite() || !(0.0..=1.0).contains(&error_rate) {
        return Err(Error::InvalidObservation(format!("wpm {wpm}, error rate {error_rate}")));
    }
    Ok(weights
        .scalarize(&[speed_score(wpm), accuracy_score(error_rate)])
        .clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Seconds,
    Milliseconds,
}

/// How the two landing-noise parameters are given in a population config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseParam {
    Variance,
    StdDev,
}

/// Independent normal distributions over `[a, b, α_x, σ_x, α_y, σ_y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypistPopulation {
    pub means: [f64; 6],
    pub sds: [f64; 6],
    pub time_unit: TimeUnit,
    pub noise_param: NoiseParam,
}

impl TypistPopulation {
    pub fn study() -> Self {
        Self {
            means: [0.164, 0.39, 0.0148, 15.52, 0.0133, 15.93],
            sds: [0.0352, 0.171, 0.0011, 2.093, 0.0011, 1.46],
            time_unit: TimeUnit::Seconds,
            noise_param: NoiseParam::Variance,
        }
    }

    pub fn appendix_train() -> Self {
        Self {
            means: [144.3, 75.636, 0.0075, 1.296, 0.0108, 1.153],
            sds: [15.0, 15.0, 0.001, 0.01, 0.001, 0.01],
            time_unit: TimeUnit::Milliseconds,
            noise_param: NoiseParam::StdDev,
        }
    }

    pub fn appendix_novel() -> Self {
        Self {
            means: [180.0, 120.0, 0.0145, 1.6, 0.03, 2.0],
            ..Self::appendix_train()
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "study" => Ok(Self::study()),
            "appendix-train" => Ok(Self::appendix_train()),
            "appendix-novel" => Ok(Self::appendix_novel()),
            other => Err(Error::Config(format!("unknown typist population {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("population standard deviations must be non-negative".into()));
        }
        if self.means.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Config("population means must be positive".into()));
        }
        Ok(())
    }

    /// Converts one raw parameter vector into simulator units.
    pub fn to_user(&self, raw: [f64; 6]) -> TypistUser {
        let t = match self.time_unit {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Milliseconds => 1e-3,
        };
        let var = |v: f64| match self.noise_param {
            NoiseParam::Variance => v,
            NoiseParam::StdDev => v * v,
        };
        TypistUser {
            a: raw[0] * t,
            b: raw[1] * t,
            alpha_x: raw[2],
            var_x: var(raw[3]),
            alpha_y: raw[4],
            var_y: var(raw[5]),
            motor_noise_sd: MOTOR_NOISE_SD,
        }
    }

    pub fn mean_user(&self) -> TypistUser {
        self.to_user(self.means)
    }

    pub fn sample_one(&self, rng: &mut Rng) -> TypistUser {
        let mut raw = [0.0; 6];
        for (i, r) in raw.iter_mut().enumerate() {
            let (m, s) = (self.means[i], self.sds[i]);
            *r = if s == 0.0 {
                m
            } else {
                let dist = Normal::new(m, s).expect("validated sd");
                (0..RESAMPLE_CAP).map(|_| dist.sample(rng)).find(|v| *v > 0.0).unwrap_or(m)
            };
        }
        self.to_user(raw)
    }

    pub fn sample(&self, n: usize, seed_value: u64) -> Result<Vec<TypistUser>> {
        self.validate()?;
        let mut rng = seed::child_rng(seed_value, &[seed::tag::POPULATION]);
        Ok((0..n).map(|_| self.sample_one(&mut rng)).collect())
    }
}

/// Sentence source: lowercase letters and spaces, one sentence per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sentences: Vec<String>,
}

static BUNDLED: &str = include_str!("../../data/sentences.txt");

impl Corpus {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled corpus is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let sentences: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if sentences.is_empty() {
            return Err(Error::InvalidSentence("corpus is empty".into()));
        }
        for s in &sentences {
            s.chars().try_for_each(|c| key_index(c).map(|_| ()))?;
        }
        Ok(Self { sentences })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    /// Random sentences joined by spaces until at least the minimum length.
    pub fn request(&self, rng: &mut Rng) -> String {
        let mut text = String::new();
        while text.chars().count() < MIN_SENTENCE_LEN {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(self.sentences.choose(rng).expect("non-empty corpus"));
        }
        text
    }
}
