//! Expected Improvement over the grid and the novelty-weighted blend of EI
//! with the learned acquisition field.
//!
//! The learned field is a probability vector while EI lives in objective
//! units, so both are min-max normalized onto `[0, 1]` before blending.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Posterior;
use crate::stats::{argmax, normal_cdf, normal_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Naf,
    Ei,
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionField {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl AcquisitionField {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Self {
        Self { values, provenance }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Highest-valued index, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

/// Closed-form EI of a single Gaussian marginal above `f_best`.
pub fn ei_value(mean: f64, std: f64, f_best: f64) -> f64 {
    if std <= 0.0 {
        return (mean - f_best).max(0.0);
    }
    let z = (mean - f_best) / std;
    (std * (z * normal_cdf(z) + normal_pdf(z))).max(0.0)
}

pub fn expected_improvement(posterior: &Posterior, f_best: f64) -> AcquisitionField {
    let values = posterior
        .means
        .iter()
        .zip(&posterior.stds)
        .map(|(&m, &s)| ei_value(m, s, f_best))
        .collect();
    AcquisitionField::new(values, Provenance::Ei)
}

/// Min-max normalization onto `[0, 1]`; a constant field maps to zeros.
pub fn normalize_field(field: &AcquisitionField) -> AcquisitionField {
    let lo = field.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let values = if range > 0.0 && range.is_finite() {
        field.values.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; field.values.len()]
    };
    AcquisitionField::new(values, field.provenance)
}

/// `A(x) = λ·EI(x) + (1 − λ)·naf(x)` on pre-normalized fields.
pub fn aggregate(naf: &AcquisitionField, ei: &AcquisitionField, lambda: f64) -> Result<AcquisitionField> {
    if naf.len() != ei.len() {
        return Err(Error::Shape(format!(
            "naf field has {} entries, EI field {}",
            naf.len(),
            ei.len()
        )));
    }
    let lambda = lambda.clamp(0.0, 1.0);
    let values = if lambda == 0.0 {
        naf.values.clone()
    } else if lambda == 1.0 {
        ei.values.clone()
    } else {
        naf.values
            .iter()
            .zip(&ei.values)
            .map(|(n, e)| lambda * e + (1.0 - lambda) * n)
            .collect()
    };
    Ok(AcquisitionField::new(values, Provenance::Aggregate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ei_at_zero_z() {
        assert!((ei_value(1.0, 1.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn ei_without_uncertainty() {
        assert_eq!(ei_value(0.2, 0.0, 0.5), 0.0);
        assert_eq!(ei_value(0.7, 0.0, 0.5), 0.7 - 0.5);
        assert!(ei_value(0.2, 1e-300, 0.5) == 0.0);
    }

    #[test]
    fn min_max_normalization() {
        let f = AcquisitionField::new(vec![1.0, 3.0, 5.0], Provenance::Ei);
        assert_eq!(normalize_field(&f).values, vec![0.0, 0.5, 1.0]);
        let c = AcquisitionField::new(vec![2.0, 2.0], Provenance::Ei);
        assert_eq!(normalize_field(&c).values, vec![0.0, 0.0]);
        let u = AcquisitionField::new(vec![0.0, 0.3, 1.0], Provenance::Naf);
        assert_eq!(normalize_field(&u).values, u.values);
    }

    #[test]
    fn aggregate_branches() {
        let naf = AcquisitionField::new(vec![0.0, 1.0], Provenance::Naf);
        let ei = AcquisitionField::new(vec![1.0, 0.0], Provenance::Ei);
        assert_eq!(aggregate(&naf, &ei, 0.0).unwrap().values, naf.values);
        assert_eq!(aggregate(&naf, &ei, 1.0).unwrap().values, ei.values);
        assert_eq!(aggregate(&naf, &ei, 0.5).unwrap().values, vec![0.5, 0.5]);
        let short = AcquisitionField::new(vec![1.0], Provenance::Ei);
        assert!(matches!(aggregate(&naf, &short, 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_of_ei_is_affine_invariant() {
        let post = Posterior {
            means: vec![0.1, 0.5, 0.3, 0.45],
            stds: vec![0.3, 0.05, 0.2, 0.1],
        };
        let f_best = 0.4;
        let base = expected_improvement(&post, f_best).argmax();
        let (a, b) = (3.5, -2.0);
        let scaled = Posterior {
            means: post.means.iter().map(|m| a * m + b).collect(),
            stds: post.stds.iter().map(|s| a * s).collect(),
        };
        assert_eq!(expected_improvement(&scaled, a * f_best + b).argmax(), base);
    }
}
