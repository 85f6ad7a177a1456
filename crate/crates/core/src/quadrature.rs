//! Uniform grids, quadrature weights and interpolation shared by every module.

use crate::error::{invalid, Result};

/// Uniform sample points on [0, 1], endpoints included.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// `count` points (M + 1 in the usual notation), spacing 1/(count - 1).
    pub fn uniform(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(invalid(format!("grid needs at least 2 points, got {count}")));
        }
        let m = (count - 1) as f64;
        let points = (0..count).map(|i| i as f64 / m).collect();
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.points.len() - 1) as f64
    }

    /// Composite Simpson weights for this grid.
    pub fn simpson(&self) -> Vec<f64> {
        simpson_weights(self.len(), self.spacing())
    }

    pub fn trapezoid(&self) -> Vec<f64> {
        trapezoid_weights(self.len(), self.spacing())
    }
}

/// Composite Simpson weights for `n` equispaced samples with spacing `h`.
///
/// An odd number of intervals is handled with a Simpson 3/8 panel at the end;
/// two points fall back to the trapezoid rule.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    let intervals = n - 1;
    if intervals == 1 {
        w[0] = h / 2.0;
        w[1] = h / 2.0;
        return w;
    }
    let (simpson_end, tail) = if intervals % 2 == 0 {
        (intervals, false)
    } else {
        (intervals - 3, true)
    };
    let mut i = 0;
    while i < simpson_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if tail {
        let s = simpson_end;
        let c = 3.0 * h / 8.0;
        w[s] += c;
        w[s + 1] += 3.0 * c;
        w[s + 2] += 3.0 * c;
        w[s + 3] += c;
    }
    w
}

pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n == 0 {
        return w;
    }
    if n == 1 {
        w[0] = 0.0;
        return w;
    }
    w[0] = h / 2.0;
    w[n - 1] = h / 2.0;
    w
}

pub fn dot(weights: &[f64], f: &[f64]) -> f64 {
    weights.iter().zip(f).map(|(w, v)| w * v).sum()
}

/// Weighted inner product `sum_i w_i r_i f_i g_i`.
pub fn inner(weights: &[f64], r: &[f64], f: &[f64], g: &[f64]) -> f64 {
    weights
        .iter()
        .zip(r)
        .zip(f.iter().zip(g))
        .map(|((w, r), (f, g))| w * r * f * g)
        .sum()
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule on [0, 1] with `panels` equal panels.
#[derive(Clone, Debug)]
pub struct CompositeGauss {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeGauss {
    pub fn new(panels: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let width = 1.0 / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * width;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + 0.5 * width * xi);
                weights.push(0.5 * width * wi);
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, w)| w * f(z)).sum()
    }
}

/// Natural cubic spline through strictly increasing abscissae.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n != y.len() {
            return Err(invalid("spline abscissae and ordinates differ in length"));
        }
        if n < 2 {
            return Err(invalid("spline needs at least two samples"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("spline abscissae must be strictly increasing"));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives.
            let k = n - 2;
            let mut sub = vec![0.0; k];
            let mut diag = vec![0.0; k];
            let mut sup = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                sub[i - 1] = h0;
                diag[i - 1] = 2.0 * (h0 + h1);
                sup[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            let sol = crate::fd_oracle::solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
            m[1..n - 1].copy_from_slice(&sol);
        }
        Ok(Self { x, y, m })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        for n in [3usize, 4, 5, 8, 11] {
            let g = Grid::uniform(n).unwrap();
            let w = g.simpson();
            let f: Vec<f64> = g.points().iter().map(|z| z * z * z - 2.0 * z + 1.0).collect();
            assert!((dot(&w, &f) - 0.25).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        let cg = CompositeGauss::new(7, 6);
        assert!((cg.integrate(|z| (3.0 * z).sin()) - (1.0 - 3f64.cos()) / 3.0).abs() < 1e-14);
    }

    #[test]
    fn spline_reproduces_nodes_and_lines() {
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let s = CubicSpline::new(x.clone(), y).unwrap();
        for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
            assert!((s.eval(t) - (2.0 * t - 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn grid_rejects_single_point() {
        assert!(Grid::uniform(1).is_err());
    }
}
