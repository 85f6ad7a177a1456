//! Backstepping boundary feedback for `x_t = p x_zz + q x` with Dirichlet
//! ends: closed-form Bessel kernel, Volterra transforms, modal truncation of
//! the gain and the certified sampling period.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, numeric, Error, Result};
use crate::modal_sim::{Lift, LinearFunctional};
use crate::quadrature::{trapezoid_weights, CompositeGauss, Grid};
use crate::reduced_design::bisect_increasing;
use crate::sl_operator::{shoot_eigensystem, static_profile, EigenSystem, SlProblem};

const SERIES_LIMIT: f64 = 25.0;

/// Modified Bessel function of the first kind, order one.
pub fn bessel_i1(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid(format!("I1 argument must be nonnegative, got {x}")));
    }
    Ok(x * i1_over_x(x))
}

/// `I1(x)/x`, finite at zero where it equals 1/2.
pub fn i1_over_x(x: f64) -> f64 {
    if x <= SERIES_LIMIT {
        // sum_m (x^2/4)^m / (m! (m+1)!) / 2, all terms positive.
        let y = 0.25 * x * x;
        let mut term = 0.5;
        let mut sum = term;
        let mut m = 0.0;
        loop {
            m += 1.0;
            term *= y / (m * (m + 1.0));
            sum += term;
            if term < 1e-17 * sum {
                return sum;
            }
        }
    }
    // e^x / sqrt(2 pi x) * sum_k (-1)^k a_k / x^k with
    // a_k = prod_{j<=k} (4 - (2j-1)^2) / (k! 8^k).
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        let next = -term * (4.0 - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    x.exp() / (2.0 * PI * x).sqrt() * sum / x
}

/// `K(z, s) = -(q + c)/p * s * I1(xi)/xi`, `xi = sqrt((q + c)/p (z^2 - s^2))`.
pub fn kernel_value(p: f64, q: f64, c: f64, z: f64, s: f64) -> f64 {
    let a = (q + c) / p;
    let xi = (a * (z * z - s * s)).max(0.0).sqrt();
    -a * s * i1_over_x(xi)
}

/// Gain kernel `k(s) = K(1, s)`.
pub fn gain_kernel(p: f64, q: f64, c: f64, s: f64) -> f64 {
    kernel_value(p, q, c, 1.0, s)
}

/// Kernel samples on the lower triangle `s_j <= z_i` of a uniform grid,
/// stored densely row by row (entries above the diagonal are zero).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TriKernel {
    pub points: usize,
    pub data: Vec<f64>,
}

impl TriKernel {
    pub fn zeros(points: usize) -> Self {
        Self { points, data: vec![0.0; points * points] }
    }

    pub fn from_fn(points: usize, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let h = 1.0 / (points - 1) as f64;
        let mut data = vec![0.0; points * points];
        data.par_chunks_mut(points).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate().take(i + 1) {
                *v = f(i as f64 * h, j as f64 * h);
            }
        });
        Self { points, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.points + j]
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.points - 1) as f64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.points..i * self.points + i + 1]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoid weights of row i over [0, z_i].
    fn row_weights(&self, i: usize) -> Vec<f64> {
        trapezoid_weights(i + 1, self.spacing())
    }
}

pub fn kernel_surface(p: f64, q: f64, c: f64, grid: &Grid) -> Result<TriKernel> {
    if q + c < 0.0 {
        return Err(invalid(format!(
            "q + c = {} is negative; choose c >= max(0, -q)",
            q + c
        )));
    }
    Ok(TriKernel::from_fn(grid.len(), |z, s| kernel_value(p, q, c, z, s)))
}

/// Max of `|p (K_zz - K_ss) - (q + c) K|` over interior triangle points, by
/// central differences with spacing `1/(points - 1)`.
pub fn kernel_pde_residual(p: f64, q: f64, c: f64, points: usize) -> f64 {
    let h = 1.0 / (points - 1) as f64;
    let k = |i: usize, j: usize| kernel_value(p, q, c, i as f64 * h, j as f64 * h);
    (2..points - 1)
        .into_par_iter()
        .map(|i| {
            (1..i - 1)
                .map(|j| {
                    let kzz = (k(i + 1, j) - 2.0 * k(i, j) + k(i - 1, j)) / (h * h);
                    let kss = (k(i, j + 1) - 2.0 * k(i, j) + k(i, j - 1)) / (h * h);
                    (p * (kzz - kss) - (q + c) * k(i, j)).abs()
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Inverse kernel from `L = K + K o L`, with the integral discretized by the
/// same trapezoid rows that `volterra_apply` uses. In weighted form
/// (`A_ij = w_ij K_ij`, `B_ij = w_ij L_ij`) the iteration is
/// `B <- A + A B`, whose fixed point is the exact discrete inverse
/// `(I - A)^{-1} = I + B`; forward and inverse transforms therefore
/// compose to the identity up to rounding.
pub fn inverse_kernel(k: &TriKernel) -> Result<TriKernel> {
    let n = k.points;
    let weights: Vec<Vec<f64>> = (0..n).map(|i| k.row_weights(i)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            a[i * n + j] = weights[i][j] * k.get(i, j);
        }
    }
    let mut b = a.clone();
    let scale = k.max_abs().max(1.0);
    for _ in 0..200 {
        let next = tri_mul_add(&a, &b, n);
        let change = next
            .iter()
            .zip(&b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        b = next;
        if change <= 1e-15 * scale {
            let out = unweight(&b, &weights, k);
            let residual = tri_mul_add(&a, &b, n)
                .iter()
                .zip(&b)
                .zip(0..)
                .map(|((x, y), idx)| {
                    let (i, j) = (idx / n, idx % n);
                    let w = if j <= i { weights[i][j] } else { 0.0 };
                    if w > 0.0 { (x - y).abs() / w } else { 0.0 }
                })
                .fold(0.0f64, f64::max);
            if residual > 1e-10 * scale {
                return Err(numeric(format!("inverse kernel residual {residual:e} too large")));
            }
            return Ok(out);
        }
    }
    Err(numeric("inverse kernel iteration did not converge in 200 sweeps"))
}

/// `A + A B` for lower-triangular dense matrices.
fn tri_mul_add(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = a.to_vec();
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for l in 0..=i {
            let ail = a[i * n + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..l * n + l + 1];
            for (o, bv) in row[..=l].iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    });
    out
}

fn unweight(b: &[f64], weights: &[Vec<f64>], k: &TriKernel) -> TriKernel {
    let n = k.points;
    let mut out = TriKernel::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let w = weights[i][j];
            out.data[i * n + j] = if w > 0.0 { b[i * n + j] / w } else { k.get(i, j) };
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// `y(z) = x(z) - integral_0^z K(z, s) x(s) ds`.
    Forward,
    /// `x(z) = y(z) + integral_0^z L(z, s) y(s) ds`.
    Inverse,
}

pub fn volterra_apply(x: &[f64], kernel: &TriKernel, direction: Direction) -> Result<Vec<f64>> {
    if x.len() != kernel.points {
        return Err(invalid(format!(
            "profile has {} points, kernel has {}",
            x.len(),
            kernel.points
        )));
    }
    let sign = match direction {
        Direction::Forward => -1.0,
        Direction::Inverse => 1.0,
    };
    let h = kernel.spacing();
    Ok((0..x.len())
        .map(|i| {
            if i == 0 {
                return x[0];
            }
            let row = kernel.row(i);
            let inner: f64 = row[1..i].iter().zip(&x[1..i]).map(|(k, v)| k * v).sum::<f64>() * h
                + 0.5 * h * (row[0] * x[0] + row[i] * x[i]);
            x[i] + sign * inner
        })
        .collect())
}

/// `1 + (integral over 0 <= s <= z <= 1 of kernel^2)^(1/2)` by trapezoid rows
/// and a trapezoid rule in z.
pub fn transform_norm(kernel: &TriKernel) -> f64 {
    let n = kernel.points;
    let h = kernel.spacing();
    let outer = trapezoid_weights(n, h);
    let mut total = 0.0;
    for i in 1..n {
        let w = kernel.row_weights(i);
        let row: f64 = kernel.row(i).iter().zip(&w).map(|(v, w)| w * v * v).sum();
        total += outer[i] * row;
    }
    1.0 + total.sqrt()
}

pub fn transform_norms(k: &TriKernel, l: &TriKernel) -> (f64, f64) {
    (transform_norm(k), transform_norm(l))
}

/// ISS data of the target system `y_t = p y_zz - c y`.
#[derive(Clone, Debug, Serialize)]
pub struct TargetIss {
    pub gamma: f64,
    pub big_g: f64,
    pub sigma: f64,
    pub mu1: f64,
    /// `integral xbar^2` for `p xbar'' = c xbar`, `xbar(1) = 1`.
    pub integral: f64,
    /// `(mu_1/(mu_1 - sigma))^2 integral xbar^2`.
    pub k_const: f64,
    #[serde(skip)]
    pub spectrum: EigenSystem,
}

impl TargetIss {
    /// Partial sums of `p^2 sum_n mu_n^{-2} psi_n'(1)^2`.
    pub fn identity_partial_sums(&self) -> Vec<f64> {
        let p = self.spectrum.problem().p.eval(1.0);
        let mut acc = 0.0;
        self.spectrum
            .pairs()
            .iter()
            .map(|e| {
                acc += (p * e.dphi1 / e.lambda).powi(2);
                acc
            })
            .collect()
    }
}

/// Target-system gain `gamma = sqrt(2 K)` with `G = sqrt(2)`.
pub fn target_iss_gain(
    p: f64,
    c: f64,
    (b1, b2): (f64, f64),
    sigma: Option<f64>,
    modes: usize,
) -> Result<TargetIss> {
    if c < 0.0 {
        return Err(invalid("target shift c must be nonnegative"));
    }
    let problem = SlProblem::new(p.into(), c.into(), 1.0.into(), (b1, b2), (1.0, 0.0))?;
    let spectrum = if b2 == 0.0 {
        crate::sl_operator::analytic_eigensystem(p, -c, modes.max(1), 401)?
    } else {
        shoot_eigensystem(&problem, modes.max(1), 401, 1e-13)?
    };
    let mu1 = spectrum.pairs()[0].lambda;
    if !(mu1 > 0.0) {
        return Err(Error::PreconditionViolation(format!(
            "target spectrum must be positive, mu_1 = {mu1}"
        )));
    }
    let sigma = sigma.unwrap_or(0.5 * mu1);
    if !(sigma > 0.0 && sigma < mu1) {
        return Err(Error::PreconditionViolation(format!(
            "sigma = {sigma} must lie in (0, mu_1 = {mu1})"
        )));
    }
    let xbar = static_profile(&problem, 0.0)?;
    let integral = CompositeGauss::new(400, 10).integrate(|z| xbar.eval(z).powi(2));
    let k_const = (mu1 / (mu1 - sigma)).powi(2) * integral;
    Ok(TargetIss {
        gamma: (2.0 * k_const).sqrt(),
        big_g: std::f64::consts::SQRT_2,
        sigma,
        mu1,
        integral,
        k_const,
        spectrum,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TruncationPolicy {
    /// Smallest N meeting the truncation condition.
    Smallest,
    /// The N (among stored modes) that maximizes the certified period.
    MaximizeBound,
}

#[derive(Clone, Debug, Serialize)]
pub struct Truncation {
    pub n: usize,
    /// Modal coefficients of k for every stored mode; the first `n` are used.
    pub k_n: Vec<f64>,
    pub k_norm: f64,
    /// `||k - g||_2` at the chosen N.
    pub tail_norm: f64,
    /// Samples of `g = sum_{n <= N} k_n phi_n` on the eigensystem grid.
    pub g_trunc: Vec<f64>,
}

/// `||k - sum_{n <= N} k_n phi_n||` by Parseval for N = 0..=len.
pub fn parseval_tails(k_norm: f64, k_n: &[f64]) -> Vec<f64> {
    let mut rem = k_norm * k_norm;
    let mut out = Vec::with_capacity(k_n.len() + 1);
    out.push(rem.max(0.0).sqrt());
    for c in k_n {
        rem -= c * c;
        out.push(rem.max(0.0).sqrt());
    }
    out
}

/// Modal expansion of a gain function in the eigenbasis of the original
/// operator, and the truncation order for `2 gamma L_tilde ||k - g|| < 1`.
pub fn modal_truncation(
    k: impl Fn(f64) -> f64 + Sync,
    eigsys: &EigenSystem,
    gamma: f64,
    l_tilde: f64,
) -> Result<Truncation> {
    let k_n = eigsys.project_fn(&k);
    let panels = (eigsys.len() + 8).max(400);
    let k_norm = CompositeGauss::new(panels, 10).integrate(|s| k(s).powi(2)).sqrt();
    let tails = parseval_tails(k_norm, &k_n);
    let factor = 2.0 * gamma * l_tilde;
    let n = match tails.iter().position(|t| factor * t < 1.0) {
        Some(n) => n,
        None => {
            let last = *tails.last().unwrap();
            // ||k - g||^2 decays like 1/N for a gain that is nonzero at the
            // actuated end.
            let needed = ((eigsys.len() as f64) * (factor * last).powi(2)).ceil() as usize + 1;
            return Err(Error::MoreModesRequired { needed: needed.max(eigsys.len() + 1), available: eigsys.len() });
        }
    };
    let g_trunc = eigsys.synthesize(&k_n[..n]);
    Ok(Truncation { n, tail_norm: tails[n], k_n, k_norm, g_trunc })
}

/// `||k - g||` at order N by direct quadrature of the residual, using the
/// closed-form modes.
pub fn truncation_error_quadrature(
    k: impl Fn(f64) -> f64 + Sync,
    eigsys: &EigenSystem,
    k_n: &[f64],
    n: usize,
) -> Result<f64> {
    if eigsys.closed_form().is_none() {
        return Err(invalid("direct residual quadrature needs closed-form modes"));
    }
    let rule = CompositeGauss::new((n + 8).max(400), 10);
    let sum: f64 = rule
        .nodes
        .par_iter()
        .zip(&rule.weights)
        .map(|(&s, w)| {
            let g: f64 = (0..n).map(|i| k_n[i] * eigsys.phi_at(i, s).unwrap()).sum();
            w * (k(s) - g).powi(2)
        })
        .sum();
    Ok(sum.sqrt())
}

/// Left side of the sampling condition at period T.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SamplingCondition {
    pub gamma: f64,
    pub l_tilde: f64,
    pub sigma: f64,
    /// `p ||k|| sum |k_n phi_n'(1)| + sum |k_n lambda_n|`.
    pub bracket: f64,
    pub tail_norm: f64,
}

impl SamplingCondition {
    pub fn value(&self, t: f64) -> f64 {
        let e = (self.sigma * t).exp();
        self.gamma * self.l_tilde * (t * e * self.bracket + self.tail_norm * (e + 1.0))
    }
}

pub fn sampling_bracket(p: f64, k_norm: f64, k_n: &[f64], dphi1: &[f64], lambdas: &[f64]) -> f64 {
    let a: f64 = k_n.iter().zip(dphi1).map(|(k, d)| (k * d).abs()).sum();
    let b: f64 = k_n.iter().zip(lambdas).map(|(k, l)| (k * l).abs()).sum();
    p * k_norm * a + b
}

/// Largest T with condition value below one.
pub fn backstepping_t_bound(cond: &SamplingCondition) -> Result<f64> {
    let at_zero = cond.value(0.0);
    if at_zero >= 1.0 {
        return Err(Error::InfeasibleTruncation { value: at_zero });
    }
    if cond.bracket == 0.0 && cond.tail_norm == 0.0 {
        return Ok(f64::INFINITY);
    }
    bisect_increasing(|t| cond.value(t) - 1.0, 1e-10)
}

#[derive(Clone, Debug)]
pub struct BacksteppingOptions {
    /// Target shift; defaults to `max(0, -lambda_1) + pi^2 p / 2`.
    pub c: Option<f64>,
    /// Decay parameter in (0, mu_1); defaults to `mu_1 / 2`.
    pub sigma: Option<f64>,
    /// Kernel grid size; defaults to the eigensystem grid.
    pub grid_size: Option<usize>,
    pub policy: TruncationPolicy,
    pub target_modes: usize,
}

impl Default for BacksteppingOptions {
    fn default() -> Self {
        Self { c: None, sigma: None, grid_size: None, policy: TruncationPolicy::Smallest, target_modes: 256 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BacksteppingController {
    pub c: f64,
    pub p: f64,
    /// Reaction coefficient of `x_t = p x_zz + q x`.
    pub q: f64,
    pub z: Vec<f64>,
    pub kernel_k: Vec<f64>,
    #[serde(skip)]
    pub k_surface: TriKernel,
    #[serde(skip)]
    pub l_surface: TriKernel,
    pub n: usize,
    pub k_n: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub dphi1: Vec<f64>,
    pub k_norm: f64,
    pub tail_norm: f64,
    pub g_trunc: Vec<f64>,
    pub k_tilde: f64,
    pub l_tilde: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub mu1: f64,
    pub condition: SamplingCondition,
    pub t_star: f64,
}

/// Default shift `max(0, -lambda_1) + pi^2 p / 2`.
pub fn default_shift(lambda1: f64, p: f64) -> f64 {
    (-lambda1).max(0.0) + PI * PI * p / 2.0
}

/// Constant p and reaction q of a problem the closed-form kernel covers.
fn backstepping_constants(problem: &SlProblem) -> Result<(f64, f64)> {
    let (p, q_op, r) = problem
        .constants()
        .ok_or_else(|| invalid("backstepping needs constant coefficients"))?;
    if r != 1.0 {
        return Err(invalid("backstepping needs r = 1"));
    }
    if problem.b2 != 0.0 || problem.a2 != 0.0 || problem.a1 != 1.0 {
        return Err(invalid(
            "backstepping is implemented for Dirichlet ends with x(1) = u only",
        ));
    }
    Ok((p, -q_op))
}

pub fn design_backstepping(eigsys: &EigenSystem, opts: &BacksteppingOptions) -> Result<BacksteppingController> {
    let (p, q) = backstepping_constants(eigsys.problem())?;
    let lambdas_all = eigsys.lambdas();
    let c = opts.c.unwrap_or_else(|| default_shift(lambdas_all[0], p));
    if c < 0.0 || q + c < 0.0 {
        return Err(invalid(format!(
            "q + c = {} must be nonnegative with c >= 0; choose c >= max(0, -q) = {}",
            q + c,
            (-q).max(0.0)
        )));
    }
    let grid = Grid::uniform(opts.grid_size.unwrap_or(eigsys.grid().len()))?;
    let k_surface = kernel_surface(p, q, c, &grid)?;
    let l_surface = inverse_kernel(&k_surface)?;
    let (k_tilde, l_tilde) = transform_norms(&k_surface, &l_surface);
    let target = target_iss_gain(p, c, (1.0, 0.0), opts.sigma, opts.target_modes)?;

    let kfun = |s: f64| gain_kernel(p, q, c, s);
    let trunc = modal_truncation(kfun, eigsys, target.gamma, l_tilde)?;
    let dphi1_all: Vec<f64> = eigsys.pairs().iter().map(|e| e.dphi1).collect();
    let cond_at = |n: usize, tail: f64| SamplingCondition {
        gamma: target.gamma,
        l_tilde,
        sigma: target.sigma,
        bracket: sampling_bracket(p, trunc.k_norm, &trunc.k_n[..n], &dphi1_all[..n], &lambdas_all[..n]),
        tail_norm: tail,
    };
    let (n, tail_norm, condition, t_star) = match opts.policy {
        TruncationPolicy::Smallest => {
            let cond = cond_at(trunc.n, trunc.tail_norm);
            (trunc.n, trunc.tail_norm, cond, backstepping_t_bound(&cond)?)
        }
        TruncationPolicy::MaximizeBound => {
            let tails = parseval_tails(trunc.k_norm, &trunc.k_n);
            (trunc.n..=eigsys.len())
                .into_par_iter()
                .filter_map(|n| {
                    let cond = cond_at(n, tails[n]);
                    backstepping_t_bound(&cond).ok().map(|t| (n, tails[n], cond, t))
                })
                .reduce_with(|a, b| if b.3 > a.3 || (b.3 == a.3 && b.0 < a.0) { b } else { a })
                .ok_or(Error::InfeasibleTruncation { value: 2.0 * target.gamma * l_tilde * trunc.tail_norm })?
        }
    };
    let g_trunc = eigsys.synthesize(&trunc.k_n[..n]);
    let z = grid.points().to_vec();
    Ok(BacksteppingController {
        c,
        p,
        q,
        kernel_k: z.iter().map(|&s| kfun(s)).collect(),
        z,
        k_surface,
        l_surface,
        n,
        k_n: trunc.k_n[..n].to_vec(),
        lambdas: lambdas_all[..n].to_vec(),
        dphi1: dphi1_all[..n].to_vec(),
        k_norm: trunc.k_norm,
        tail_norm,
        g_trunc,
        k_tilde,
        l_tilde,
        gamma: target.gamma,
        sigma: target.sigma,
        mu1: target.mu1,
        condition,
        t_star,
    })
}

impl BacksteppingController {
    pub fn gain(&self, s: f64) -> f64 {
        gain_kernel(self.p, self.q, self.c, s)
    }

    /// Functionals `x -> integral k x` and `x -> integral g x` on the lifted
    /// state of a simulation eigensystem.
    pub fn functionals(
        &self,
        eigsys: &EigenSystem,
        lift: Option<&Lift>,
    ) -> Result<(LinearFunctional, LinearFunctional)> {
        let (p, q) = backstepping_constants(eigsys.problem())?;
        if (p - self.p).abs() > 1e-12 * self.p || (q - self.q).abs() > 1e-12 * self.q.abs().max(1.0) {
            return Err(invalid("controller was designed for a different problem"));
        }
        let kf = |s: f64| self.gain(s);
        let modal = eigsys.project_fn(kf);
        let nm = eigsys.len();
        let mut g_modal = vec![0.0; nm];
        let shared = self.n.min(nm);
        g_modal[..shared].copy_from_slice(&self.k_n[..shared]);
        let (k_tail, g_tail) = match lift {
            Some(l) => {
                let rule = CompositeGauss::new(400, 10);
                let ks = rule.integrate(|s| kf(s) * l.profile.eval(s));
                let resolved: f64 = modal.iter().zip(&l.static_coeffs).map(|(a, b)| a * b).sum();
                // Static coefficients g_n / lambda_n of the modes beyond the
                // simulation's truncation, with g_n = -p phi_n'(1).
                let beyond: f64 = (nm..self.n)
                    .map(|i| self.k_n[i] * (-self.p * self.dphi1[i]) / self.lambdas[i])
                    .sum();
                (ks - resolved, beyond)
            }
            None => (0.0, 0.0),
        };
        Ok((
            LinearFunctional { modal, tail: k_tail },
            LinearFunctional { modal: g_modal, tail: g_tail },
        ))
    }

    pub fn transformed_norm(&self, eigsys: &EigenSystem, profile: &[f64]) -> Option<f64> {
        let y = volterra_apply(profile, &self.k_surface, Direction::Forward).ok()?;
        let w = eigsys.grid().simpson();
        Some(w.iter().zip(&y).map(|(w, v)| w * v * v).sum::<f64>().sqrt())
    }

    /// Profile whose transform is `y`, e.g. a target eigenfunction.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        volterra_apply(y, &self.l_surface, Direction::Inverse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sl_operator::analytic_eigensystem;

    fn i1_quadrature(x: f64) -> f64 {
        // (1/pi) integral_0^pi e^{x cos t} cos t dt, spectrally accurate.
        let rule = CompositeGauss::new(64, 12);
        rule.integrate(|u| {
            let t = PI * u;
            (x * t.cos()).exp() * t.cos()
        })
    }

    #[test]
    fn bessel_values() {
        assert_eq!(bessel_i1(0.0).unwrap(), 0.0);
        assert!((bessel_i1(1e-8).unwrap() / 1e-8 - 0.5).abs() < 1e-8);
        assert!((bessel_i1(1.0).unwrap() - 0.565159103992485).abs() < 1e-15);
        for x in [0.3, 2.0, 7.5, 14.0, 24.0, 26.0, 40.0] {
            let exact = i1_quadrature(x);
            let rel = (bessel_i1(x).unwrap() - exact).abs() / exact;
            assert!(rel < 1e-13, "x = {x}: rel {rel:e}");
        }
        assert!(bessel_i1(-1.0).is_err());
    }

    #[test]
    fn gain_kernel_values() {
        assert_eq!(gain_kernel(1.0, -3.0, 3.0, 0.4), 0.0);
        assert!((gain_kernel(1.0, 15.0, 5.0, 1.0) + 10.0).abs() < 1e-14);
        assert_eq!(gain_kernel(1.0, 15.0, 5.0, 0.0), 0.0);
    }

    #[test]
    fn surface_diagonal_and_boundary_row() {
        let grid = Grid::uniform(101).unwrap();
        let k = kernel_surface(2.0, 15.0, 5.0, &grid).unwrap();
        for i in 0..101 {
            let z = grid.points()[i];
            assert!((k.get(i, i) + 20.0 * z / 4.0).abs() < 1e-12);
            assert!((k.get(100, i) - gain_kernel(2.0, 15.0, 5.0, z)).abs() < 1e-13);
        }
        assert!(kernel_surface(1.0, -6.0, 5.0, &grid).is_err());
    }

    #[test]
    fn pde_residual_second_order() {
        let a = kernel_pde_residual(1.0, 15.0, 5.0, 51);
        let b = kernel_pde_residual(1.0, 15.0, 5.0, 101);
        assert!(a / b >= 3.5, "{a} {b}");
    }

    #[test]
    fn constant_kernel_apply_and_norm() {
        let k = TriKernel::from_fn(201, |_, _| -0.7);
        let y = volterra_apply(&vec![1.0; 201], &k, Direction::Forward).unwrap();
        for (i, v) in y.iter().enumerate() {
            assert!((v - (1.0 + 0.7 * i as f64 / 200.0)).abs() < 1e-13);
        }
        assert!((transform_norm(&k) - (1.0 + 0.7 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(transform_norm(&TriKernel::zeros(11)), 1.0);
    }

    #[test]
    fn inverse_of_zero_kernel() {
        let l = inverse_kernel(&TriKernel::zeros(21)).unwrap();
        assert!(l.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parseval_tail_matches_quadrature() {
        let es = analytic_eigensystem(1.0, 15.0, 40, 401).unwrap();
        let kf = |s: f64| gain_kernel(1.0, 15.0, 5.0, s);
        let tr = modal_truncation(kf, &es, 0.01, 1.0).unwrap();
        let tails = parseval_tails(tr.k_norm, &tr.k_n);
        for n in [0, 5, 17, 40] {
            let q = truncation_error_quadrature(kf, &es, &tr.k_n, n).unwrap();
            assert!((q - tails[n]).abs() < 1e-8, "N = {n}: {q} vs {}", tails[n]);
        }
    }

    #[test]
    fn finite_combination_has_zero_tail() {
        let es = analytic_eigensystem(1.0, 0.0, 10, 401).unwrap();
        let kf = |s: f64| 2.0 * es.phi_at(0, s).unwrap() - 0.5 * es.phi_at(2, s).unwrap();
        let tr = modal_truncation(kf, &es, 1.0, 1.0).unwrap();
        let tails = parseval_tails(tr.k_norm, &tr.k_n);
        assert!(tails[3] < 1e-7);
    }

    #[test]
    fn bound_limits_and_monotonicity() {
        let base = SamplingCondition { gamma: 1.0, l_tilde: 2.0, sigma: 3.0, bracket: 50.0, tail_norm: 0.1 };
        let t1 = backstepping_t_bound(&base).unwrap();
        let t2 = backstepping_t_bound(&SamplingCondition { bracket: 100.0, ..base }).unwrap();
        assert!(t2 < t1 && (base.value(t1) - 1.0).abs() < 1e-8);
        let tiny = SamplingCondition { bracket: 1e-12, tail_norm: 1e-12, ..base };
        assert!(tiny.value(1.0) < 1e-10);
        let bad = SamplingCondition { tail_norm: 0.25, ..base };
        assert!(matches!(backstepping_t_bound(&bad), Err(Error::InfeasibleTruncation { .. })));
    }

    #[test]
    fn target_gain_harmonic_case() {
        let t = target_iss_gain(1.0, 0.0, (1.0, 0.0), Some(1e-9), 16).unwrap();
        assert!((t.integral - 1.0 / 3.0).abs() < 1e-14);
        assert!((t.k_const - 1.0 / 3.0).abs() < 1e-9);
        assert!(target_iss_gain(1.0, 0.0, (1.0, 0.0), Some(t.mu1), 4).is_err());
    }
}
