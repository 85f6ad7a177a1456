//! Spatially varying coefficients p, q, r on [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quadrature::CubicSpline;

/// A coefficient given either as a constant or as samples interpolated by a
/// natural cubic spline.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Tabulated(TabulatedCoefficient),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedCoefficient {
    z: Vec<f64>,
    values: Vec<f64>,
    spline: CubicSpline,
}

impl TabulatedCoefficient {
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Serializable view used by configs and manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Constant(f64),
    Table { z: Vec<f64>, values: Vec<f64> },
}

impl Coefficient {
    pub fn constant(v: f64) -> Self {
        Coefficient::Constant(v)
    }

    /// Samples must cover [0, 1] with strictly increasing abscissae.
    pub fn tabulated(z: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(invalid("tabulated coefficient needs at least two samples"));
        }
        if z[0] > 0.0 || *z.last().unwrap() < 1.0 {
            return Err(invalid("tabulated coefficient must cover [0, 1]"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("tabulated coefficient has non-finite samples"));
        }
        let spline = CubicSpline::new(z.clone(), values.clone())?;
        Ok(Coefficient::Tabulated(TabulatedCoefficient { z, values, spline }))
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Tabulated(t) => t.spline.eval(z),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(v) => Some(*v),
            Coefficient::Tabulated(_) => None,
        }
    }

    pub fn sample(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&z| self.eval(z)).collect()
    }

    /// Mean over [0, 1], by Simpson on 201 points for tables.
    pub fn mean(&self) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Tabulated(_) => {
                let n = 201;
                let w = crate::quadrature::simpson_weights(n, 1.0 / (n - 1) as f64);
                (0..n).map(|i| w[i] * self.eval(i as f64 / (n - 1) as f64)).sum()
            }
        }
    }

    pub fn spec(&self) -> CoefficientSpec {
        match self {
            Coefficient::Constant(v) => CoefficientSpec::Constant(*v),
            Coefficient::Tabulated(t) => CoefficientSpec::Table {
                z: t.z.clone(),
                values: t.values.clone(),
            },
        }
    }

    pub fn from_spec(spec: &CoefficientSpec) -> Result<Self> {
        match spec {
            CoefficientSpec::Constant(v) => Ok(Coefficient::Constant(*v)),
            CoefficientSpec::Table { z, values } => Self::tabulated(z.clone(), values.clone()),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_reproduces_quadratic_closely() {
        let z: Vec<f64> = (0..41).map(|i| i as f64 / 40.0).collect();
        let v: Vec<f64> = z.iter().map(|x| 1.0 + x * x).collect();
        let c = Coefficient::tabulated(z, v).unwrap();
        assert!((c.eval(0.37) - (1.0 + 0.37 * 0.37)).abs() < 1e-5);
        assert!((c.mean() - 4.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn table_must_cover_interval() {
        assert!(Coefficient::tabulated(vec![0.1, 1.0], vec![1.0, 1.0]).is_err());
    }
}
