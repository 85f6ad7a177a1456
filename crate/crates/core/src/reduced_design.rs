//! Reduced-model design: stabilize the finitely many non-decaying modes by
//! pole placement and certify a sampling period for the sample-and-hold
//! implementation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, numeric, Error, Result};
use crate::modal_sim::hold_integral;
use crate::quadrature::CompositeGauss;
use crate::sl_operator::{static_profile, EigenSystem};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducedController {
    pub m: usize,
    pub k: Vec<f64>,
    pub g: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Samples of `r(z) sum_l k_l phi_l(z)`.
    pub kernel: Vec<f64>,
    pub closed_loop_poles: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Controllability {
    pub controllable: bool,
    /// `prod_{i<j} (lambda_j - lambda_i)`.
    pub determinant: f64,
}

/// In the coordinates `xi_n = x_n / g_n` the input vector is all ones and the
/// controllability matrix is a Vandermonde matrix in `-lambda_n`.
pub fn controllability_check(lambdas: &[f64], g: &[f64]) -> Result<Controllability> {
    if lambdas.len() != g.len() {
        return Err(invalid("lambdas and gains differ in length"));
    }
    if let Some(i) = g.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(invalid(format!("input gain of mode {} is zero", i + 1)));
    }
    let mut det = 1.0;
    for j in 0..lambdas.len() {
        for i in 0..j {
            det *= lambdas[j] - lambdas[i];
        }
    }
    Ok(Controllability { controllable: det != 0.0, determinant: det })
}

/// `diag(-lambda) + g k^T`.
pub fn closed_loop_matrix(lambdas: &[f64], g: &[f64], k: &[f64]) -> DMatrix<f64> {
    let m = lambdas.len();
    DMatrix::from_fn(m, m, |i, j| g[i] * k[j] - if i == j { lambdas[i] } else { 0.0 })
}

/// Ackermann pole placement for `diag(-lambda) + g k^T`.
pub fn place_poles(lambdas: &[f64], g: &[f64], desired: &[f64]) -> Result<Vec<f64>> {
    let m = lambdas.len();
    if desired.len() != m {
        return Err(invalid(format!("need {m} poles, got {}", desired.len())));
    }
    if let Some(p) = desired.iter().find(|p| !(**p < 0.0)) {
        return Err(invalid(format!("desired pole {p} is not in the open left half plane")));
    }
    for j in 0..m {
        for i in 0..j {
            if desired[i] == desired[j] {
                return Err(invalid("desired poles must be distinct"));
            }
        }
    }
    let ctrl = controllability_check(lambdas, g)?;
    if !ctrl.controllable {
        return Err(numeric("controllability matrix is singular (repeated eigenvalues)"));
    }
    if m == 0 {
        return Ok(Vec::new());
    }

    // Columns scaled by powers of s = max|lambda|: C = C_s diag(s^j), so
    // C^T y = e_m becomes C_s^T y_s = e_m with y = y_s / s^(m-1).
    let s = lambdas.iter().fold(1.0f64, |a, l| a.max(l.abs()));
    let c = DMatrix::from_fn(m, m, |i, j| (-lambdas[i] / s).powi(j as i32));
    let sv = c.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !(cond < 1e12) {
        return Err(numeric(format!(
            "controllability matrix is ill-conditioned (condition number {cond:e})"
        )));
    }
    let mut e_m = DVector::zeros(m);
    e_m[m - 1] = 1.0;
    let y = c
        .transpose()
        .lu()
        .solve(&e_m)
        .ok_or_else(|| numeric("controllability matrix is singular"))?;
    // phi_d evaluated at the diagonal entries -lambda_n.
    let k: Vec<f64> = (0..m)
        .map(|n| {
            let phi: f64 = desired.iter().map(|p| (-lambdas[n] - p) / s).product();
            -y[n] * phi * s / g[n]
        })
        .collect();

    let w = closed_loop_matrix(lambdas, g, &k);
    let mut got: Vec<_> = w.complex_eigenvalues().iter().copied().collect();
    got.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut want = desired.to_vec();
    want.sort_by(f64::total_cmp);
    let scale = want.iter().fold(1.0f64, |s, p| s.max(p.abs()));
    for (a, b) in got.iter().zip(&want) {
        if (a.re - b).abs() > 1e-6 * scale || a.im.abs() > 1e-6 * scale {
            return Err(numeric(format!(
                "placed pole {a} differs from requested {b} (condition number {cond:e})"
            )));
        }
    }
    Ok(k)
}

/// `|exp(W t)| <= G exp(-(sigma + epsilon) t)` in the spectral norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Envelope {
    pub big_g: f64,
    pub sigma: f64,
    pub epsilon: f64,
    /// Decay margin: minus the largest real part of the spectrum.
    pub mu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeOptions {
    /// sigma = sigma_fraction * mu.
    pub sigma_fraction: f64,
    /// epsilon = (1 - sigma_fraction - margin_fraction) * mu.
    pub margin_fraction: f64,
    pub samples: usize,
    /// Sampling horizon in units of 1/mu.
    pub horizon: f64,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self { sigma_fraction: 0.5, margin_fraction: 0.01, samples: 2000, horizon: 20.0 }
    }
}

pub fn envelope_constants(w: &DMatrix<f64>) -> Result<Envelope> {
    envelope_constants_with(w, &EnvelopeOptions::default())
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.max()
}

pub fn envelope_constants_with(w: &DMatrix<f64>, opts: &EnvelopeOptions) -> Result<Envelope> {
    if !w.is_square() || w.nrows() == 0 {
        return Err(invalid("envelope needs a nonempty square matrix"));
    }
    if !(opts.sigma_fraction > 0.0 && opts.margin_fraction > 0.0)
        || opts.sigma_fraction + opts.margin_fraction >= 1.0
    {
        return Err(invalid("sigma and margin fractions must be positive and sum below 1"));
    }
    let mu = -w
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(mu > 0.0) {
        return Err(Error::PreconditionViolation(format!(
            "matrix is not Hurwitz (spectral abscissa {})",
            -mu
        )));
    }
    let sigma = opts.sigma_fraction * mu;
    let epsilon = (1.0 - opts.sigma_fraction - opts.margin_fraction) * mu;
    let rate = sigma + epsilon;
    if w.nrows() == 1 {
        return Ok(Envelope { big_g: 1.0, sigma, epsilon, mu });
    }

    // Sample on [0, t_cap] until exp(W t_cap) contracts in the weighted norm;
    // then the semigroup property bounds every later time by the sampled sup.
    let shifted = w + DMatrix::identity(w.nrows(), w.nrows()) * rate;
    let mut t_cap = opts.horizon / mu;
    for _ in 0..40 {
        let weighted = |t: f64| spectral_norm(&(&shifted * t).exp());
        if weighted(t_cap) < 1.0 {
            let big_g = (0..=opts.samples)
                .map(|j| weighted(j as f64 * t_cap / opts.samples as f64))
                .fold(1.0, f64::max);
            return Ok(Envelope { big_g, sigma, epsilon, mu });
        }
        t_cap *= 2.0;
    }
    Err(numeric("matrix exponential envelope did not contract"))
}

/// `(sum_n |g_n k - lambda_n e_n|^2)^(1/2)`.
pub fn gamma_constant(g: &[f64], k: &[f64], lambdas: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (n, (&gn, &ln)) in g.iter().zip(lambdas).enumerate() {
        for (j, &kj) in k.iter().enumerate() {
            let v = gn * kj - if j == n { ln } else { 0.0 };
            acc += v * v;
        }
    }
    acc.sqrt()
}

/// Certified sampling period for the reduced-model loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SamplingBound {
    pub t_star: f64,
    pub big_g: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub g_norm: f64,
    pub k_norm: f64,
    pub lambda1: f64,
}

impl SamplingBound {
    /// Small-gain loop factor `G/eps |g| p_1(T) e^{sigma T} |k| Gamma`.
    pub fn loop_gain(&self, t: f64) -> f64 {
        self.big_g / self.epsilon
            * self.g_norm
            * hold_integral(self.lambda1, t)
            * (self.sigma * t).exp()
            * self.k_norm
            * self.gamma
    }

    /// `loop_gain(T) - 1`, negative exactly on (0, T*).
    pub fn condition(&self, t: f64) -> f64 {
        self.loop_gain(t) - 1.0
    }

    /// Overshoot constant `(1 + e^{sigma T}) G / (1 - loop_gain(T))` of the
    /// finite-dimensional estimate, valid for T < T*.
    pub fn overshoot(&self, t: f64) -> Option<f64> {
        let l = self.loop_gain(t);
        (l < 1.0).then(|| (1.0 + (self.sigma * t).exp()) * self.big_g / (1.0 - l))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[allow(clippy::too_many_arguments)]
pub fn max_sampling_period(
    big_g: f64,
    sigma: f64,
    epsilon: f64,
    g: &[f64],
    k: &[f64],
    gamma: f64,
    lambda1: f64,
) -> Result<SamplingBound> {
    if !(big_g > 0.0 && sigma > 0.0 && epsilon > 0.0) {
        return Err(invalid("G, sigma and epsilon must be positive"));
    }
    let mut bound = SamplingBound {
        t_star: f64::INFINITY,
        big_g,
        sigma,
        epsilon,
        gamma,
        g_norm: norm(g),
        k_norm: norm(k),
        lambda1,
    };
    if bound.k_norm == 0.0 || gamma == 0.0 {
        return Ok(bound);
    }
    bound.t_star = bisect_increasing(|t| bound.condition(t), 1e-12)?;
    Ok(bound)
}

/// Root of a strictly increasing `f` with `f(0+) < 0`, by bracketing and
/// bisection to relative width `rel_tol`. Returns the left end, so `f < 0`
/// there.
pub(crate) fn bisect_increasing(f: impl Fn(f64) -> f64, rel_tol: f64) -> Result<f64> {
    let mut hi = 1e-3;
    let mut tries = 0;
    while !(f(hi) > 0.0) {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(numeric("no sign change found while bracketing the sampling bound"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        if lo > 0.0 && hi - lo <= rel_tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !(lo > 0.0) {
        return Err(numeric("condition is violated for arbitrarily small periods"));
    }
    Ok(lo)
}

/// Largest T with `kappa a T e^{(sigma - lambda_1) T} + sigma = a`, where
/// `a = kappa + lambda_1` is the closed-loop rate and `kappa = |g_1 k_1|`.
fn scalar_loop_bound(kappa: f64, lambda1: f64, sigma: f64) -> Result<f64> {
    let a = kappa + lambda1;
    if !(a > 0.0) {
        return Err(invalid("gain does not stabilize the first mode"));
    }
    if !(sigma > 0.0) || sigma >= a {
        return Err(invalid(format!(
            "sigma = {sigma} must lie in (0, {a}); no admissible period"
        )));
    }
    bisect_increasing(|t| kappa * a * t * ((sigma - lambda1) * t).exp() + sigma - a, 1e-13)
}

/// Largest T satisfying
/// `k (k + p pi^2 - q) T exp((q + sigma - p pi^2) T) + sigma < k + p pi^2 - q`
/// for `x_t = p x_zz + q x` with Dirichlet ends and the scalar feedback
/// `u = -k/p integral sin(pi z) x dz`, in the form that takes the first-mode
/// input gain to be `p sqrt(2)`.
pub fn example_bound_t(p: f64, q: f64, k: f64, sigma: f64) -> Result<f64> {
    check_example_range(p, q)?;
    let lambda1 = p * std::f64::consts::PI.powi(2) - q;
    scalar_loop_bound(k, lambda1, sigma)
}

/// The same bound with the first-mode gain `sqrt(2) pi p` obtained from the
/// eigenfunction `sqrt(2) sin(pi z)`: the loop coefficient becomes `pi k`.
pub fn example_bound_t_rederived(p: f64, q: f64, k: f64, sigma: f64) -> Result<f64> {
    check_example_range(p, q)?;
    let lambda1 = p * std::f64::consts::PI.powi(2) - q;
    scalar_loop_bound(std::f64::consts::PI * k, lambda1, sigma)
}

fn check_example_range(p: f64, q: f64) -> Result<()> {
    let pi2 = std::f64::consts::PI.powi(2);
    if !(p > 0.0) || q < p * pi2 || q >= 4.0 * p * pi2 {
        return Err(invalid(format!(
            "need p > 0 and p pi^2 <= q < 4 p pi^2, got p = {p}, q = {q}"
        )));
    }
    Ok(())
}

/// Samples of `r(z) sum_{l <= m} k_l phi_l(z)`.
pub fn feedback_kernel(k: &[f64], eigsys: &EigenSystem) -> Vec<f64> {
    let pr = eigsys.problem();
    let mut out = eigsys.synthesize(k);
    for (v, &z) in out.iter_mut().zip(eigsys.grid().points()) {
        *v *= pr.r.eval(z);
    }
    out
}

/// Smallest m with `lambda_{m+1} > 0`.
pub fn unstable_count(lambdas: &[f64]) -> Result<usize> {
    lambdas
        .iter()
        .position(|&l| l > 0.0)
        .ok_or_else(|| Error::MoreModesRequired { needed: lambdas.len() + 1, available: lambdas.len() })
}

/// `{-1, ..., -m} * max(1, |lambda_1|)`.
pub fn default_poles(m: usize, lambda1: f64) -> Vec<f64> {
    let s = lambda1.abs().max(1.0);
    (1..=m).map(|i| -(i as f64) * s).collect()
}

#[derive(Clone, Debug, Default)]
pub struct ReducedOptions {
    pub m: Option<usize>,
    pub poles: Option<Vec<f64>>,
    pub envelope: Option<EnvelopeOptions>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReducedDesign {
    pub controller: ReducedController,
    pub envelope: Option<Envelope>,
    pub bound: SamplingBound,
}

/// Full reduced-model pipeline: m, poles, gains, envelope and T*.
pub fn design_reduced(eigsys: &EigenSystem, opts: &ReducedOptions) -> Result<ReducedDesign> {
    let lambdas_all = eigsys.lambdas();
    let m = match opts.m {
        Some(m) => m,
        None => unstable_count(&lambdas_all)?,
    };
    if m >= eigsys.len() {
        return Err(Error::MoreModesRequired { needed: m + 1, available: eigsys.len() });
    }
    if !(lambdas_all[m] > 0.0) {
        return Err(invalid(format!("lambda_{} must be positive for m = {m}", m + 1)));
    }
    let lambdas = lambdas_all[..m].to_vec();
    let g = eigsys.gains()?[..m].to_vec();
    let poles = opts
        .poles
        .clone()
        .unwrap_or_else(|| default_poles(m, lambdas_all[0]));
    let k = place_poles(&lambdas, &g, &poles)?;
    let kernel = feedback_kernel(&k, eigsys);
    let controller = ReducedController {
        m,
        k: k.clone(),
        g: g.clone(),
        lambdas: lambdas.clone(),
        kernel,
        closed_loop_poles: poles,
    };
    if m == 0 {
        let bound = max_sampling_period(1.0, 1.0, 1.0, &[], &[], 0.0, lambdas_all[0])?;
        return Ok(ReducedDesign { controller, envelope: None, bound });
    }
    let w = closed_loop_matrix(&lambdas, &g, &k);
    let env = envelope_constants_with(&w, &opts.envelope.unwrap_or_default())?;
    let gamma = gamma_constant(&g, &k, &lambdas);
    let bound = max_sampling_period(env.big_g, env.sigma, env.epsilon, &g, &k, gamma, lambdas[0])?;
    Ok(ReducedDesign { controller, envelope: Some(env), bound })
}

/// Static-response identity: the modal series of the boundary response
/// against its closed-form energy.
#[derive(Clone, Debug, Serialize)]
pub struct IssReport {
    pub w: f64,
    /// `integral r xbar^2`, with `xbar` normalized to boundary data
    /// `sqrt(a1^2 + a2^2)`.
    pub integral: f64,
    /// Cumulative sums of `(a1^2 + a2^2) g_n^2 / (lambda_n + w)^2`.
    pub partial_sums: Vec<f64>,
    /// `(integral - last partial sum) / integral`.
    pub relative_gap: f64,
}

pub fn iss_identity_check(eigsys: &EigenSystem, w: f64) -> Result<IssReport> {
    let lambdas = eigsys.lambdas();
    if !(w > -lambdas[0]) {
        return Err(Error::PreconditionViolation(format!(
            "w = {w} must exceed -lambda_1 = {}",
            -lambdas[0]
        )));
    }
    let pr = eigsys.problem();
    let bn = pr.boundary_norm_sq();
    let s = static_profile(pr, w)?;
    let rule = CompositeGauss::new(400, 10);
    let integral = bn * rule.integrate(|z| pr.r.eval(z) * s.eval(z).powi(2));
    let g = eigsys.gains()?;
    let mut acc = 0.0;
    let partial_sums: Vec<f64> = g
        .iter()
        .zip(&lambdas)
        .map(|(g, l)| {
            acc += bn * g * g / (l + w).powi(2);
            acc
        })
        .collect();
    let relative_gap = (integral - acc) / integral;
    Ok(IssReport { w, integral, partial_sums, relative_gap })
}

/// Tail constant `K = sum_{n > m} (a1^2 + a2^2) g_n^2 / (lambda_n - sigma)^2`
/// over the stored modes, together with its closed-form upper bound
/// `((lambda_{m+1} + w)/(lambda_{m+1} - sigma))^2 integral r xbar^2`.
pub fn iss_tail_constant(eigsys: &EigenSystem, w: f64, m: usize, sigma: f64) -> Result<(f64, f64)> {
    let lambdas = eigsys.lambdas();
    if m >= lambdas.len() {
        return Err(Error::MoreModesRequired { needed: m + 1, available: lambdas.len() });
    }
    let lm = lambdas[m];
    if !(sigma < lm) {
        return Err(Error::PreconditionViolation(format!(
            "sigma = {sigma} must be below lambda_{} = {lm}",
            m + 1
        )));
    }
    let report = iss_identity_check(eigsys, w)?;
    let bn = eigsys.problem().boundary_norm_sq();
    let g = eigsys.gains()?;
    let series = g[m..]
        .iter()
        .zip(&lambdas[m..])
        .map(|(g, l)| bn * g * g / (l - sigma).powi(2))
        .sum();
    let bound = ((lm + w) / (lm - sigma)).powi(2) * report.integral;
    Ok((series, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sl_operator::analytic_eigensystem;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn controllability_examples() {
        let c = controllability_check(&[-5.13], &[1.0]).unwrap();
        assert_eq!(c.determinant, 1.0);
        let l1 = PI * PI - 15.0;
        let l2 = 4.0 * PI * PI - 15.0;
        let c = controllability_check(&[l1, l2], &[1.0, -2.0]).unwrap();
        assert!((c.determinant - 3.0 * PI * PI).abs() < 1e-12);
        assert!((c.determinant - 29.61).abs() < 0.01);
        let c = controllability_check(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(!c.controllable && c.determinant == 0.0);
        assert!(controllability_check(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn scalar_pole_placement() {
        let l1 = PI * PI - 15.0;
        let g1 = SQRT_2 * PI;
        let k = place_poles(&[l1], &[g1], &[-1.0]).unwrap();
        assert!((k[0] - (l1 - 1.0) / g1).abs() < 1e-14);
        assert!((k[0] + 1.3798).abs() < 1e-4);
        let k = place_poles(&[2.0], &[3.0], &[-2.0]).unwrap();
        assert!(k[0].abs() < 1e-15);
    }

    #[test]
    fn two_mode_pole_placement() {
        let es = analytic_eigensystem(1.0, 15.0, 2, 101).unwrap();
        let (l, g) = (es.lambdas(), es.gains().unwrap());
        let k = place_poles(&l, &g, &[-1.0, -2.0]).unwrap();
        let mut ev: Vec<f64> = closed_loop_matrix(&l, &g, &k)
            .complex_eigenvalues()
            .iter()
            .map(|c| c.re)
            .collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + 2.0).abs() < 1e-8 && (ev[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn envelope_examples() {
        let e = envelope_constants(&DMatrix::from_element(1, 1, -1.0)).unwrap();
        assert_eq!((e.big_g, e.sigma), (1.0, 0.5));
        assert!((e.epsilon - 0.49).abs() < 1e-15);
        let e = envelope_constants(&DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0])).unwrap();
        assert!((e.big_g - 1.0).abs() < 1e-12 && (e.mu - 1.0).abs() < 1e-12);
        let w = DMatrix::from_row_slice(2, 2, &[-1.0, 10.0, 0.0, -1.0]);
        let e = envelope_constants(&w).unwrap();
        assert!(e.big_g > 1.0);
        // exp(W t) = e^{-t} [[1, 10t], [0, 1]]; its norm is known in closed form.
        let exact = |t: f64| {
            let a = 10.0 * t;
            (-t).exp() * (a / 2.0 + (1.0 + a * a / 4.0).sqrt())
        };
        // The weighted norm peaks near t = 1/(1 - 0.99) = 100.
        let dense = (0..=200_000)
            .map(|j| {
                let t = j as f64 * 1e-3;
                exact(t) * (0.99 * t).exp()
            })
            .fold(0.0, f64::max);
        assert!((e.big_g - dense).abs() < 1e-3 * dense, "{} {}", e.big_g, dense);
        assert!(envelope_constants(&DMatrix::from_element(1, 1, 0.5)).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert!((gamma_constant(&[2.0], &[-1.5], &[-2.0]) - 1.0).abs() < 1e-15);
        let l = [1.0, 2.0, -3.0];
        let g0 = gamma_constant(&[1.0, 1.0, 1.0], &[0.0; 3], &l);
        assert!((g0 - 14f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn t_star_degenerate_lambda_zero() {
        // F(T) = a T e^{sigma T} - 1 with a = G/eps |g| |k| Gamma.
        let b = max_sampling_period(1.0, 0.5, 0.49, &[2.0], &[1.0], 1.0, 0.0).unwrap();
        let a = 2.0 / 0.49;
        assert!((a * b.t_star * (0.5 * b.t_star).exp() - 1.0).abs() < 1e-10);
        let inf = max_sampling_period(1.0, 0.5, 0.49, &[2.0], &[0.0], 1.0, 0.0).unwrap();
        assert!(inf.t_star.is_infinite());
    }

    #[test]
    fn example_bound_edges() {
        let pi2 = PI * PI;
        assert!(example_bound_t(1.0, 15.0, 7.0, 7.0 + pi2 - 15.0).is_err());
        let a = 7.0 + pi2 - 15.0;
        let near = example_bound_t(1.0, 15.0, 7.0, a * (1.0 - 1e-6)).unwrap();
        assert!(near < 1e-6);
        assert!(example_bound_t(1.0, 5.0, 7.0, 0.5).is_err());
    }

    #[test]
    fn kernel_matches_modal_functional() {
        let es = analytic_eigensystem(1.0, 15.0, 8, 401).unwrap();
        let ker = feedback_kernel(&[1.0], &es);
        assert!(ker.iter().zip(&es.pairs()[0].phi).all(|(a, b)| (a - b).abs() < 1e-15));
        let u = crate::quadrature::dot(&es.grid().simpson(), &ker.iter().zip(&es.pairs()[1].phi).map(|(a, b)| a * b).collect::<Vec<_>>());
        assert!(u.abs() < 1e-12);
    }

    #[test]
    fn iss_harmonic_case() {
        // q + w = 0 gives xbar(z) = z.
        let es = analytic_eigensystem(1.0, 15.0, 64, 401).unwrap();
        let rep = iss_identity_check(&es, -15.0).unwrap_err();
        assert!(matches!(rep, Error::PreconditionViolation(_)));
        let es = analytic_eigensystem(1.0, -2.0, 64, 401).unwrap();
        let rep = iss_identity_check(&es, -2.0).unwrap();
        assert!((rep.integral - 1.0 / 3.0).abs() < 1e-13);
        assert!(rep.relative_gap > 0.0);
    }

    #[test]
    fn iss_series_converges_from_below() {
        for (n, tol) in [(64, 2e-2), (512, 1e-3)] {
            let es = analytic_eigensystem(1.0, 15.0, n, 401).unwrap();
            let rep = iss_identity_check(&es, -es.lambdas()[0] + 1.0).unwrap();
            assert!(rep.relative_gap > 0.0 && rep.relative_gap < tol, "{n}: {}", rep.relative_gap);
            assert!(rep.partial_sums.windows(2).all(|p| p[1] >= p[0]));
        }
    }
}
