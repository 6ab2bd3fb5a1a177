//! Shifted and scaled double-sphere test functions.

use serde::{Deserialize, Serialize};

use crate::design_space::ObjectiveWeights;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereUser {
    pub shift: [f64; 2],
    pub scale: f64,
    pub centers: [[f64; 2]; 2],
    pub gamma: f64,
}

impl Default for SphereUser {
    fn default() -> Self {
        Self {
            shift: [0.0; 2],
            scale: 1.0,
            centers: [[0.4, 0.4], [0.6, 0.6]],
            gamma: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereValues {
    pub y1: f64,
    pub y2: f64,
    pub y: f64,
}

impl SphereUser {
    /// Unscaled sphere values `(y1, y2)` at `x`.
    pub fn components(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != 2 || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("sphere input must be a finite 2-vector, got {x:?}")));
        }
        let shifted = [x[0] + self.shift[0], x[1] + self.shift[1]];
        let mut out = [0.0; 2];
        for (o, c) in out.iter_mut().zip(&self.centers) {
            let d2 = (shifted[0] - c[0]).powi(2) + (shifted[1] - c[1]).powi(2);
            *o = 1.0 - d2 * self.gamma;
        }
        Ok(out)
    }

    /// Per-objective values `S·y_i`, whose weighted sum is the scalar objective.
    pub fn objectives(&self, x: &[f64]) -> Result<[f64; 2]> {
        let [a, b] = self.components(x)?;
        Ok([self.scale * a, self.scale * b])
    }

    pub fn eval(&self, x: &[f64], weights: &ObjectiveWeights) -> Result<SphereValues> {
        if weights.len() != 2 {
            return Err(Error::InvalidWeights(format!("sphere needs 2 weights, got {}", weights.len())));
        }
        let [y1, y2] = self.components(x)?;
        let w = weights.as_slice();
        Ok(SphereValues {
            y1,
            y2,
            y: self.scale * (w[0] * y1 + w[1] * y2),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpherePopulation {
    pub shift_range: f64,
    pub scale_range: f64,
    pub centers: [[f64; 2]; 2],
    pub gamma: f64,
    /// Standard deviation of additive Gaussian noise on observed `y`.
    #[serde(default)]
    pub noise_sd: f64,
}

impl Default for SpherePopulation {
    fn default() -> Self {
        Self::training()
    }
}

impl SpherePopulation {
    pub fn training() -> Self {
        Self {
            shift_range: 0.2,
            scale_range: 0.4,
            centers: [[0.4, 0.4], [0.6, 0.6]],
            gamma: 8.0,
            noise_sd: 0.0,
        }
    }

    /// Out-of-distribution population with the centers pushed apart.
    pub fn novel() -> Self {
        Self {
            centers: [[0.3, 0.3], [0.7, 0.7]],
            ..Self::training()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shift_range >= 0.0 && self.scale_range >= 0.0 && self.noise_sd >= 0.0) {
            return Err(Error::Config("sphere ranges and noise must be non-negative".into()));
        }
        if self.scale_range >= 2.0 {
            return Err(Error::Config("scale_range must stay below 2 so scales are positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_one<R: rand::Rng>(&self, rng: &mut R) -> SphereUser {
        let half_shift = self.shift_range / 2.0;
        let half_scale = self.scale_range / 2.0;
        let mut draw = |h: f64| if h > 0.0 { rng.gen_range(-h..h) } else { 0.0 };
        let shift = [draw(half_shift), draw(half_shift)];
        let scale = 1.0 + draw(half_scale);
        SphereUser {
            shift,
            scale,
            centers: self.centers,
            gamma: self.gamma,
        }
    }

    pub fn sample(&self, n: usize, seed_value: u64) -> Result<Vec<SphereUser>> {
        self.validate()?;
        let mut rng = seed::child_rng(seed_value, &[seed::tag::POPULATION]);
        Ok((0..n).map(|_| self.sample_one(&mut rng)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(a: f64, b: f64) -> ObjectiveWeights {
        ObjectiveWeights::new(&[a, b]).unwrap()
    }

    #[test]
    fn reference_values() {
        let u = SphereUser::default();
        let v = u.eval(&[0.4, 0.4], &w(0.5, 0.5)).unwrap();
        assert_eq!(v.y1, 1.0);
        assert!((v.y2 - 0.36).abs() < 1e-12);
        let scaled = SphereUser {
            scale: 2.0,
            ..SphereUser::default()
        };
        assert_eq!(scaled.eval(&[0.4, 0.4], &w(1.0, 0.0)).unwrap().y, 2.0);
    }

    #[test]
    fn shift_moves_the_optimum() {
        let u = SphereUser {
            shift: [0.1, -0.05],
            ..SphereUser::default()
        };
        assert_eq!(u.components(&[0.3, 0.45]).unwrap()[0], 1.0);
    }

    #[test]
    fn degenerate_population_is_the_base_user() {
        let pop = SpherePopulation {
            shift_range: 0.0,
            scale_range: 0.0,
            ..SpherePopulation::training()
        };
        for u in pop.sample(5, 3).unwrap() {
            assert_eq!(u, SphereUser::default());
        }
    }

    #[test]
    fn population_ranges_and_determinism() {
        let pop = SpherePopulation::training();
        let a = pop.sample(20, 11).unwrap();
        assert_eq!(a, pop.sample(20, 11).unwrap());
        assert_ne!(a, pop.sample(20, 12).unwrap());
        for u in &a {
            assert!(u.shift.iter().all(|s| s.abs() <= 0.1));
            assert!((0.8..=1.2).contains(&u.scale));
        }
        let novel = SpherePopulation::novel().sample(1, 0).unwrap();
        assert_eq!(novel[0].centers, [[0.3, 0.3], [0.7, 0.7]]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SphereUser::default().components(&[0.1]).is_err());
        assert!(SphereUser::default().eval(&[0.1, 0.1], &ObjectiveWeights::new(&[1.0]).unwrap()).is_err());
    }
}
