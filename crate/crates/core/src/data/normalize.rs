use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature min-max scaling. A constant feature maps to 0 and inverts
/// back to its (single) value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    /// Fit on a matrix given as rows of equal width (one row per sample).
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::Data("cannot fit normalization on empty input".into()))?;
        if width == 0 {
            return Err(Error::Data("cannot fit normalization on zero features".into()));
        }
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::Shape(format!("row of width {} in a {width}-feature matrix", row.len())));
            }
            for ((lo, hi), x) in min.iter_mut().zip(max.iter_mut()).zip(row) {
                *lo = lo.min(*x);
                *hi = hi.max(*x);
            }
        }
        Ok(NormalizationParams { min, max })
    }

    /// Fit a single feature from a flat slice of values.
    pub fn fit_scalar(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("cannot fit normalization on empty input".into()));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(NormalizationParams {
            min: vec![min],
            max: vec![max],
        })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn apply_value(&self, feature: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn invert_value(&self, feature: usize, y: f64) -> f64 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi > lo {
            lo + y * (hi - lo)
        } else {
            lo
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(f, x)| self.apply_value(f, *x)).collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(f, y)| self.invert_value(f, *y)).collect()
    }
}
