//! Bounded continuous design spaces, their fixed grid discretization and the
//! objective-weight vector that parameterizes a weighted-sum objective.
//!
//! Grid points are enumerated with the first dimension varying fastest, so
//! for a `r0 × r1` grid the point `(i0, i1)` sits at index `i0 + r0 * i1`.
//! Trained policy checkpoints depend on this ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of grid points per dimension.
pub const DEFAULT_RESOLUTION: usize = 10;

const BOUNDS_TOLERANCE: f64 = 1e-9;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DesignSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidSpace("at least one dimension required".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidSpace(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidSpace(format!(
                    "dimension {i}: lower {lo} must be below upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit square, used by the sphere benchmark.
    pub fn unit(dims: usize) -> Self {
        Self {
            lower: vec![0.0; dims],
            upper: vec![1.0; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dims()
            && point.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&x, (&lo, &hi))| {
                x >= lo - BOUNDS_TOLERANCE && x <= hi + BOUNDS_TOLERANCE
            })
    }

    /// Maps a point affinely onto the unit cube.
    pub fn normalize(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dims() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, space has {} dimensions",
                point.len(),
                self.dims()
            )));
        }
        if !self.contains(point) {
            return Err(Error::BoundsViolation(format!("{point:?}")));
        }
        Ok(point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&x, (&lo, &hi))| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect())
    }

    pub fn denormalize(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&u, (&lo, &hi))| lo + u * (hi - lo))
            .collect()
    }
}

/// A fixed, evenly spaced lattice over a [`DesignSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignGrid {
    space: DesignSpace,
    resolution: Vec<usize>,
    points: Vec<Vec<f64>>,
    unit_points: Vec<Vec<f64>>,
}

/// Builds the lattice with `resolution[i]` points along dimension `i`,
/// both bounds included.
pub fn make_grid(space: &DesignSpace, resolution: &[usize]) -> Result<DesignGrid> {
    if resolution.len() != space.dims() {
        return Err(Error::InvalidResolution(format!(
            "{} counts for {} dimensions",
            resolution.len(),
            space.dims()
        )));
    }
    if let Some(&bad) = resolution.iter().find(|&&r| r < 2) {
        return Err(Error::InvalidResolution(format!("count {bad} < 2")));
    }
    let total: usize = resolution.iter().product();
    let mut points = Vec::with_capacity(total);
    let mut unit_points = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut unit = Vec::with_capacity(resolution.len());
        for &r in resolution {
            let i = rem % r;
            rem /= r;
            unit.push(i as f64 / (r - 1) as f64);
        }
        points.push(space.denormalize(&unit));
        unit_points.push(unit);
    }
    Ok(DesignGrid {
        space: space.clone(),
        resolution: resolution.to_vec(),
        points,
        unit_points,
    })
}

impl DesignGrid {
    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Grid points mapped onto the unit cube.
    pub fn unit_points(&self) -> &[Vec<f64>] {
        &self.unit_points
    }

    /// Index of the grid point closest to `point`, if it lies on the grid.
    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        let unit = self.space.normalize(point).ok()?;
        let mut flat = 0;
        let mut stride = 1;
        for (&u, &r) in unit.iter().zip(&self.resolution) {
            let pos = u * (r - 1) as f64;
            let i = pos.round();
            if (pos - i).abs() > 1e-6 {
                return None;
            }
            flat += i as usize * stride;
            stride *= r;
        }
        Some(flat)
    }
}

/// Objective weights `w_1..w_N`, non-negative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ObjectiveWeights(Vec<f64>);

impl ObjectiveWeights {
    /// Validates a raw weight vector. Sums within 1e-6 of one are accepted and
    /// renormalized exactly.
    pub fn new(raw: &[f64]) -> Result<Self> {
        validate_weights(raw)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weighted sum of per-objective values.
    pub fn scalarize(&self, objectives: &[f64]) -> f64 {
        self.0.iter().zip(objectives).map(|(w, v)| w * v).sum()
    }
}

impl TryFrom<Vec<f64>> for ObjectiveWeights {
    type Error = Error;

    fn try_from(raw: Vec<f64>) -> Result<Self> {
        validate_weights(&raw)
    }
}

impl From<ObjectiveWeights> for Vec<f64> {
    fn from(w: ObjectiveWeights) -> Self {
        w.0
    }
}

pub fn validate_weights(raw: &[f64]) -> Result<ObjectiveWeights> {
    if raw.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if let Some(bad) = raw.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidWeights(format!("entry {bad} is negative or not finite")));
    }
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, expected 1")));
    }
    Ok(ObjectiveWeights(raw.iter().map(|w| w / sum).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyboard_grid_has_one_hundred_layouts() {
        let space = DesignSpace::new(vec![20.0, 20.0], vec![40.0, 40.0]).unwrap();
        let grid = make_grid(&space, &[10, 10]).unwrap();
        assert_eq!(grid.len(), 100);
        assert_eq!(grid.point(0), &[20.0, 20.0]);
        assert_eq!(grid.point(99), &[40.0, 40.0]);
        // first dimension varies fastest
        assert_eq!(grid.point(1)[1], 20.0);
        assert!(grid.point(1)[0] > 20.0);
    }

    #[test]
    fn two_point_grid_is_the_endpoints() {
        let grid = make_grid(&DesignSpace::unit(1), &[2]).unwrap();
        assert_eq!(grid.points(), &[vec![0.0], vec![1.0]]);
    }

    #[test]
    fn center_of_three_by_three() {
        let grid = make_grid(&DesignSpace::unit(2), &[3, 3]).unwrap();
        assert_eq!(grid.point(4), &[0.5, 0.5]);
        assert_eq!(grid.index_of(&[0.5, 0.5]), Some(4));
        assert_eq!(grid.index_of(&[0.3, 0.5]), None);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(matches!(
            make_grid(&DesignSpace::unit(2), &[1, 3]),
            Err(Error::InvalidResolution(_))
        ));
        assert!(matches!(
            DesignSpace::new(vec![1.0], vec![1.0]),
            Err(Error::InvalidSpace(_))
        ));
        assert!(matches!(DesignSpace::new(vec![], vec![]), Err(Error::InvalidSpace(_))));
    }

    #[test]
    fn normalize_examples() {
        let space = DesignSpace::new(vec![20.0], vec![40.0]).unwrap();
        assert_eq!(space.normalize(&[20.0]).unwrap(), vec![0.0]);
        assert_eq!(space.normalize(&[40.0]).unwrap(), vec![1.0]);
        assert_eq!(space.normalize(&[30.0]).unwrap(), vec![0.5]);
        assert!(matches!(space.normalize(&[41.0]), Err(Error::BoundsViolation(_))));
        assert!(space.normalize(&[40.0 + 1e-10]).is_ok());
    }

    #[test]
    fn weight_validation() {
        assert!(validate_weights(&[0.7, 0.3]).is_ok());
        assert!(validate_weights(&[1.0, 0.0]).is_ok());
        assert!(matches!(validate_weights(&[0.5, 0.6]), Err(Error::InvalidWeights(_))));
        assert!(matches!(validate_weights(&[1.2, -0.2]), Err(Error::InvalidWeights(_))));
        assert!(matches!(validate_weights(&[0.0, 0.0]), Err(Error::InvalidWeights(_))));
        let w = validate_weights(&[0.7, 0.3 + 5e-7]).unwrap();
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weights_deserialize_through_validation() {
        let w: ObjectiveWeights = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<ObjectiveWeights>("[0.6, 0.6]").is_err());
    }
}
