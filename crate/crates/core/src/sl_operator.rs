//! Sturm–Liouville operator `A f = -(p f')'/r + q f/r` on [0, 1] with
//! separated boundary conditions `b1 f(0) + b2 f'(0) = 0`,
//! `a1 f(1) + a2 f'(1) = 0`, its eigensystem and the boundary lifting.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficient::Coefficient;
use crate::error::{invalid, numeric, Error, Result};
use crate::quadrature::{CompositeGauss, CubicSpline, Grid};

const POSITIVITY_SAMPLES: usize = 401;
const SHOOTING_STEPS: usize = 4000;
const BRACKET_EXPANSIONS: usize = 200;
const NEWTON_ITERS: usize = 60;

/// Operator data. `q` enters the operator with a plus sign, so the
/// reaction–diffusion equation `x_t = p x_zz + c x` has `q = -c`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlProblem {
    pub p: Coefficient,
    pub q: Coefficient,
    pub r: Coefficient,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl SlProblem {
    pub fn new(
        p: Coefficient,
        q: Coefficient,
        r: Coefficient,
        (b1, b2): (f64, f64),
        (a1, a2): (f64, f64),
    ) -> Result<Self> {
        if b1.abs() + b2.abs() == 0.0 {
            return Err(invalid("left boundary constants b1, b2 are both zero"));
        }
        if a1.abs() + a2.abs() == 0.0 {
            return Err(invalid("right boundary constants a1, a2 are both zero"));
        }
        if ![b1, b2, a1, a2].iter().all(|v| v.is_finite()) {
            return Err(invalid("boundary constants must be finite"));
        }
        for i in 0..POSITIVITY_SAMPLES {
            let z = i as f64 / (POSITIVITY_SAMPLES - 1) as f64;
            let (pv, qv, rv) = (p.eval(z), q.eval(z), r.eval(z));
            if !(pv > 0.0) || !pv.is_finite() {
                return Err(invalid(format!("p must be positive, p({z}) = {pv}")));
            }
            if !(rv > 0.0) || !rv.is_finite() {
                return Err(invalid(format!("r must be positive, r({z}) = {rv}")));
            }
            if !qv.is_finite() {
                return Err(invalid(format!("q({z}) is not finite")));
            }
        }
        Ok(Self { p, q, r, b1, b2, a1, a2 })
    }

    /// Constant coefficients, r = 1, Dirichlet at both ends.
    pub fn dirichlet(p: f64, q: f64) -> Result<Self> {
        Self::new(p.into(), q.into(), 1.0.into(), (1.0, 0.0), (1.0, 0.0))
    }

    /// `x_t = p x_zz + reaction * x` with Dirichlet ends.
    pub fn reaction_diffusion(p: f64, reaction: f64) -> Result<Self> {
        Self::dirichlet(p, -reaction)
    }

    /// `(p, q, r)` when all three coefficients are constant.
    pub fn constants(&self) -> Option<(f64, f64, f64)> {
        Some((self.p.as_constant()?, self.q.as_constant()?, self.r.as_constant()?))
    }

    pub fn is_dirichlet_left(&self) -> bool {
        self.b2 == 0.0
    }

    pub fn is_dirichlet_right(&self) -> bool {
        self.a2 == 0.0
    }

    /// Same problem with `q` replaced by `q + w`.
    pub fn shifted(&self, w: f64) -> Self {
        let q = match &self.q {
            Coefficient::Constant(v) => Coefficient::Constant(v + w),
            Coefficient::Tabulated(t) => {
                let values = t.values().iter().map(|v| v + w).collect();
                Coefficient::tabulated(t.z().to_vec(), values).expect("shift keeps table valid")
            }
        };
        Self { q, ..self.clone() }
    }

    pub fn boundary_norm_sq(&self) -> f64 {
        self.a1 * self.a1 + self.a2 * self.a2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenPair {
    pub n: usize,
    pub lambda: f64,
    pub phi: Vec<f64>,
    pub phi0: f64,
    pub dphi0: f64,
    pub phi1: f64,
    pub dphi1: f64,
    pub max_abs_phi: f64,
}

/// Closed-form eigenfunctions, available for the constant Dirichlet case so
/// that modes can be evaluated away from the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClosedForm {
    /// `phi_n = sqrt(2) sin(n pi z)` with `lambda_n = n^2 pi^2 p + q`.
    DirichletSine { p: f64, q: f64 },
}

impl ClosedForm {
    pub fn phi(&self, n: usize, z: f64) -> f64 {
        match self {
            ClosedForm::DirichletSine { .. } => SQRT_2 * (n as f64 * PI * z).sin(),
        }
    }

    pub fn lambda(&self, n: usize) -> f64 {
        match *self {
            ClosedForm::DirichletSine { p, q } => (n * n) as f64 * PI * PI * p + q,
        }
    }

    fn pair(&self, n: usize, points: &[f64]) -> EigenPair {
        let nf = n as f64;
        let sign1 = if n % 2 == 0 { 1.0 } else { -1.0 };
        EigenPair {
            n,
            lambda: self.lambda(n),
            phi: points.iter().map(|&z| self.phi(n, z)).collect(),
            phi0: 0.0,
            dphi0: SQRT_2 * nf * PI,
            phi1: 0.0,
            dphi1: sign1 * SQRT_2 * nf * PI,
            max_abs_phi: SQRT_2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenSystem {
    problem: SlProblem,
    grid: Grid,
    pairs: Vec<EigenPair>,
    closed_form: Option<ClosedForm>,
    /// Simpson weights multiplied by r on the grid.
    rweights: Vec<f64>,
}

impl EigenSystem {
    fn assemble(
        problem: SlProblem,
        grid: Grid,
        pairs: Vec<EigenPair>,
        closed_form: Option<ClosedForm>,
    ) -> Self {
        let rweights = grid
            .simpson()
            .iter()
            .zip(grid.points())
            .map(|(w, &z)| w * problem.r.eval(z))
            .collect();
        Self { problem, grid, pairs, closed_form, rweights }
    }

    pub fn problem(&self) -> &SlProblem {
        &self.problem
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn pairs(&self) -> &[EigenPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn closed_form(&self) -> Option<ClosedForm> {
        self.closed_form
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.pairs.iter().map(|e| e.lambda).collect()
    }

    pub fn gains(&self) -> Result<Vec<f64>> {
        self.pairs.iter().map(|e| input_gain(e, &self.problem)).collect()
    }

    /// Quadrature weights including the weight function r.
    pub fn rweights(&self) -> &[f64] {
        &self.rweights
    }

    /// `integral r f g dz` on the grid.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.rweights.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g).sum()
    }

    pub fn norm_r(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// Keep the first `n` pairs.
    pub fn truncated(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.pairs.truncate(n);
        out
    }

    /// Value of the `index`-th stored mode (0-based) at an arbitrary point,
    /// when a closed form is known.
    pub fn phi_at(&self, index: usize, z: f64) -> Option<f64> {
        self.closed_form.map(|cf| cf.phi(self.pairs[index].n, z))
    }

    /// Modal coefficients `integral r x phi_n` of grid samples.
    pub fn project(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.grid.len() {
            return Err(invalid(format!(
                "samples have {} points, grid has {}",
                samples.len(),
                self.grid.len()
            )));
        }
        Ok(self.pairs.iter().map(|e| self.inner(samples, &e.phi)).collect())
    }

    /// Modal coefficients of a function of z. With a closed form the
    /// integrals use composite Gauss–Legendre fine enough for every stored
    /// mode; otherwise the grid quadrature is used.
    pub fn project_fn(&self, f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
        match self.closed_form {
            Some(cf) => {
                let panels = (self.pairs.len() + 8).max(64);
                let rule = CompositeGauss::new(panels, 10);
                let fv: Vec<f64> = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&z, w)| w * f(z) * self.problem.r.eval(z))
                    .collect();
                self.pairs
                    .par_iter()
                    .map(|e| rule.nodes.iter().zip(&fv).map(|(&z, v)| v * cf.phi(e.n, z)).sum())
                    .collect()
            }
            None => {
                let samples: Vec<f64> = self.grid.points().iter().map(|&z| f(z)).collect();
                self.pairs.iter().map(|e| self.inner(&samples, &e.phi)).collect()
            }
        }
    }

    /// `sum_n c_n phi_n` on the grid.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (c, e) in coeffs.iter().zip(&self.pairs) {
            if *c != 0.0 {
                for (o, v) in out.iter_mut().zip(&e.phi) {
                    *o += c * v;
                }
            }
        }
        out
    }
}

/// Eigensystem of `x_t = p x_zz + reaction * x`, Dirichlet at both ends:
/// `lambda_n = n^2 pi^2 p - reaction`, `phi_n = sqrt(2) sin(n pi z)`.
pub fn analytic_eigensystem(
    p_const: f64,
    reaction: f64,
    n_max: usize,
    grid_size: usize,
) -> Result<EigenSystem> {
    if n_max < 1 {
        return Err(invalid("n_max must be at least 1"));
    }
    let grid = Grid::uniform(grid_size)?;
    let problem = SlProblem::reaction_diffusion(p_const, reaction)?;
    let cf = ClosedForm::DirichletSine { p: p_const, q: -reaction };
    let pairs = (1..=n_max)
        .into_par_iter()
        .map(|n| cf.pair(n, grid.points()))
        .collect();
    Ok(EigenSystem::assemble(problem, grid, pairs, Some(cf)))
}

/// Scaled Prüfer variables: `f = rho/sqrt(S) sin(theta)`,
/// `p f' = rho sqrt(S) cos(theta)` with a constant scale `S`.
struct Prufer<'a> {
    problem: &'a SlProblem,
    lambda: f64,
    scale: f64,
}

impl Prufer<'_> {
    fn coeffs(&self, z: f64) -> (f64, f64) {
        let pr = &self.problem;
        (pr.p.eval(z), self.lambda * pr.r.eval(z) - pr.q.eval(z))
    }

    /// Right-hand side for (theta, ln rho, d theta / d lambda).
    fn rhs(&self, z: f64, y: [f64; 3]) -> [f64; 3] {
        let (p, a) = self.coeffs(z);
        let r = self.problem.r.eval(z);
        let s = self.scale;
        let (sn, cs) = y[0].sin_cos();
        let sin2 = 2.0 * sn * cs;
        [
            s / p * cs * cs + a / s * sn * sn,
            0.5 * (s / p - a / s) * sin2,
            r / s * sn * sn + (a / s - s / p) * sin2 * y[2],
        ]
    }

    fn theta0(&self) -> f64 {
        let pr = self.problem;
        normalize_angle((self.scale * pr.b2).atan2(-pr.p.eval(0.0) * pr.b1), false)
    }

    fn theta_end(&self) -> f64 {
        let pr = self.problem;
        normalize_angle((-self.scale * pr.a2).atan2(pr.a1 * pr.p.eval(1.0)), true)
    }

    /// Integrate with `steps` RK4 steps, recording the state every `stride`.
    fn integrate(&self, steps: usize, stride: usize, mut record: impl FnMut(usize, [f64; 3])) -> [f64; 3] {
        let h = 1.0 / steps as f64;
        let mut y = [self.theta0(), 0.0, 0.0];
        record(0, y);
        for i in 0..steps {
            let z = i as f64 * h;
            let k1 = self.rhs(z, y);
            let k2 = self.rhs(z + h / 2.0, add(y, k1, h / 2.0));
            let k3 = self.rhs(z + h / 2.0, add(y, k2, h / 2.0));
            let k4 = self.rhs(z + h, add(y, k3, h));
            for j in 0..3 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            if (i + 1) % stride == 0 {
                record((i + 1) / stride, y);
            }
        }
        y
    }

    /// Mismatch whose zero is the eigenvalue with index n.
    fn mismatch(&self, n: usize, steps: usize) -> (f64, f64) {
        let y = self.integrate(steps, steps, |_, _| {});
        (y[0] - self.theta_end() - (n - 1) as f64 * PI, y[2])
    }
}

fn add(y: [f64; 3], k: [f64; 3], h: f64) -> [f64; 3] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
}

/// Map an angle to [0, pi) or, with `upper`, to (0, pi].
fn normalize_angle(a: f64, upper: bool) -> f64 {
    let mut t = a.rem_euclid(PI);
    if upper && t == 0.0 {
        t = PI;
    }
    t
}

struct ScaleRule {
    p_mean: f64,
    q_mean: f64,
    r_mean: f64,
}

impl ScaleRule {
    fn new(problem: &SlProblem) -> Self {
        Self {
            p_mean: problem.p.mean(),
            q_mean: problem.q.mean(),
            r_mean: problem.r.mean(),
        }
    }

    /// Exact for constant coefficients once `lambda r - q > 1`, which makes
    /// the angle equation autonomous and the RK4 integration exact.
    fn scale(&self, lambda: f64) -> f64 {
        (self.p_mean * (lambda * self.r_mean - self.q_mean).abs().max(1.0)).sqrt()
    }
}

/// First `n_max` eigenpairs by Prüfer shooting: bracketing and bisection on
/// the angle mismatch, then safeguarded Newton using the angle sensitivity.
pub fn shoot_eigensystem(
    problem: &SlProblem,
    n_max: usize,
    grid_size: usize,
    tol: f64,
) -> Result<EigenSystem> {
    if n_max < 1 {
        return Err(invalid("n_max must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let grid = Grid::uniform(grid_size)?;
    let intervals = grid.len() - 1;
    let stride = SHOOTING_STEPS.div_ceil(intervals);
    let steps = stride * intervals;
    let rule = ScaleRule::new(problem);
    let q_over_r_min = grid
        .points()
        .iter()
        .map(|&z| problem.q.eval(z) / problem.r.eval(z))
        .fold(f64::INFINITY, f64::min);

    let pairs: Vec<EigenPair> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let lambda = shoot_eigenvalue(problem, &rule, n, steps, tol, q_over_r_min)?;
            Ok(eigenpair_at(problem, &rule, n, lambda, steps, stride, &grid))
        })
        .collect::<Result<_>>()?;

    for w in pairs.windows(2) {
        if !(w[1].lambda > w[0].lambda) {
            return Err(numeric(format!(
                "eigenvalues not strictly increasing at index {}",
                w[1].n
            )));
        }
    }
    Ok(EigenSystem::assemble(problem.clone(), grid, pairs, None))
}

fn shoot_eigenvalue(
    problem: &SlProblem,
    rule: &ScaleRule,
    n: usize,
    steps: usize,
    tol: f64,
    q_over_r_min: f64,
) -> Result<f64> {
    let f = |lambda: f64| {
        Prufer { problem, lambda, scale: rule.scale(lambda) }.mismatch(n, steps).0
    };
    let fail = |what: &str| numeric(format!("eigenvalue {n}: {what}"));

    let mut step = 1.0 + q_over_r_min.abs();
    let mut lo = q_over_r_min - 1.0;
    let mut expansions = 0;
    while f(lo) >= 0.0 {
        lo -= step;
        step *= 2.0;
        expansions += 1;
        if expansions > BRACKET_EXPANSIONS {
            return Err(fail("no lower bracket"));
        }
    }
    let guess = rule.p_mean * (n as f64 * PI).powi(2) / rule.r_mean;
    let mut hi = lo + guess.max(1.0);
    let mut step = guess.max(1.0);
    expansions = 0;
    while f(hi) <= 0.0 {
        lo = hi;
        hi += step;
        step *= 2.0;
        expansions += 1;
        if expansions > BRACKET_EXPANSIONS {
            return Err(fail("no upper bracket"));
        }
    }

    // Bisect to a modest relative width, then polish with Newton.
    for _ in 0..200 {
        if hi - lo <= 1e-6 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..NEWTON_ITERS {
        let pr = Prufer { problem, lambda, scale: rule.scale(lambda) };
        let (value, slope) = pr.mismatch(n, steps);
        if value < 0.0 {
            lo = lo.max(lambda);
        } else {
            hi = hi.min(lambda);
        }
        let mut next = if slope > 0.0 { lambda - value / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let delta = (next - lambda).abs();
        lambda = next;
        if delta <= tol * lambda.abs().max(1.0) {
            return Ok(lambda);
        }
    }
    Err(fail("Newton refinement did not converge"))
}

fn eigenpair_at(
    problem: &SlProblem,
    rule: &ScaleRule,
    n: usize,
    lambda: f64,
    steps: usize,
    stride: usize,
    grid: &Grid,
) -> EigenPair {
    let scale = rule.scale(lambda);
    let pr = Prufer { problem, lambda, scale };
    let mut phi = vec![0.0; grid.len()];
    let mut first = [0.0; 3];
    let last = pr.integrate(steps, stride, |i, y| {
        if i == 0 {
            first = y;
        }
        phi[i] = y[1].exp() / scale.sqrt() * y[0].sin();
    });
    let w = grid.simpson();
    let norm_sq: f64 = phi
        .iter()
        .zip(&w)
        .zip(grid.points())
        .map(|((f, w), &z)| w * problem.r.eval(z) * f * f)
        .sum();
    let c = 1.0 / norm_sq.sqrt();
    for v in phi.iter_mut() {
        *v *= c;
    }
    let dphi = |y: [f64; 3], z: f64| c * y[1].exp() * scale.sqrt() * y[0].cos() / problem.p.eval(z);
    let value = |y: [f64; 3]| c * y[1].exp() / scale.sqrt() * y[0].sin();
    EigenPair {
        n,
        lambda,
        phi0: value(first),
        dphi0: dphi(first, 0.0),
        phi1: value(last),
        dphi1: dphi(last, 1.0),
        max_abs_phi: phi.iter().fold(0.0, |m, v| m.max(v.abs())),
        phi,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    /// Largest `|integral r phi_m phi_n - delta_mn|` over stored pairs.
    pub gram_deviation: f64,
    /// First index included in the partial sums.
    pub tail_start: usize,
    /// `(j, sum_{n = tail_start}^{j} max|phi_n| / lambda_n)`.
    pub partial_sums: Vec<(usize, f64)>,
    /// Slope of log(max|phi_n| / lambda_n) against log n over the upper half.
    pub tail_exponent: Option<f64>,
    /// Largest interior residual of the eigen-ODE, relative to 1 + |lambda_n|.
    pub ode_residual: f64,
}

pub fn validate_eigensystem(eigsys: &EigenSystem, n_tail: usize) -> Result<ValidationReport> {
    let pairs = eigsys.pairs();
    let start = pairs
        .iter()
        .position(|e| e.n >= n_tail.max(1) && e.lambda > 0.0)
        .ok_or_else(|| {
            Error::PreconditionViolation("no stored eigenvalue is positive at or after N".into())
        })?;

    let gram_deviation = (0..pairs.len())
        .into_par_iter()
        .map(|i| {
            (i..pairs.len())
                .map(|j| {
                    let target = if i == j { 1.0 } else { 0.0 };
                    (eigsys.inner(&pairs[i].phi, &pairs[j].phi) - target).abs()
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);

    let mut acc = 0.0;
    let mut partial_sums = Vec::new();
    let mut logs = Vec::new();
    for e in &pairs[start..] {
        let term = e.max_abs_phi / e.lambda;
        acc += term;
        partial_sums.push((e.n, acc));
        logs.push(((e.n as f64).ln(), term.ln()));
    }
    let tail_exponent = if logs.len() >= 4 {
        Some(slope(&logs[logs.len() / 2..]))
    } else {
        None
    };

    Ok(ValidationReport {
        gram_deviation,
        tail_start: pairs[start].n,
        partial_sums,
        tail_exponent,
        ode_residual: ode_residual(eigsys),
    })
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Max interior `|-(p phi')' + q phi - lambda r phi| / (1 + |lambda|)` by
/// central differences.
pub fn ode_residual(eigsys: &EigenSystem) -> f64 {
    let z = eigsys.grid().points();
    let h = eigsys.grid().spacing();
    let pr = eigsys.problem();
    let mut worst: f64 = 0.0;
    for e in eigsys.pairs() {
        let f = &e.phi;
        for i in 1..z.len() - 1 {
            let pp = pr.p.eval(z[i] + h / 2.0);
            let pm = pr.p.eval(z[i] - h / 2.0);
            let flux = (pp * (f[i + 1] - f[i]) - pm * (f[i] - f[i - 1])) / (h * h);
            let res = -flux + pr.q.eval(z[i]) * f[i] - e.lambda * pr.r.eval(z[i]) * f[i];
            worst = worst.max(res.abs() / (1.0 + e.lambda.abs()));
        }
    }
    worst
}

/// `h(z) = sigma1 z^2 + sigma2 z^3` with `h(0) = h'(0) = 0` and
/// `a1 h(1) + a2 h'(1) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LiftingPolynomial {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl LiftingPolynomial {
    pub fn h(&self, z: f64) -> f64 {
        z * z * (self.sigma1 + self.sigma2 * z)
    }

    pub fn dh(&self, z: f64) -> f64 {
        z * (2.0 * self.sigma1 + 3.0 * self.sigma2 * z)
    }
}

pub fn boundary_lifting(a1: f64, a2: f64) -> Result<LiftingPolynomial> {
    let d = a1 * a1 + a2 * a2;
    if d == 0.0 {
        return Err(invalid("a1 and a2 are both zero"));
    }
    Ok(LiftingPolynomial {
        sigma1: (3.0 * a1 - a2) / d,
        sigma2: (a2 - 2.0 * a1) / d,
    })
}

/// `g_n = p(1) / (a1^2 + a2^2) * (a2 phi_n(1) - a1 phi_n'(1))`.
pub fn input_gain(pair: &EigenPair, problem: &SlProblem) -> Result<f64> {
    let g = problem.p.eval(1.0) / problem.boundary_norm_sq()
        * (problem.a2 * pair.phi1 - problem.a1 * pair.dphi1);
    if !(g.abs() >= 1e-12) {
        return Err(numeric(format!(
            "input gain of mode {} is {g:e}; the eigenpair is corrupted",
            pair.n
        )));
    }
    Ok(g)
}

/// Solution of `(p f')' - (q + w r) f = 0` with the homogeneous left
/// condition and `a1 f(1) + a2 f'(1) = 1`.
#[derive(Clone, Debug)]
pub enum StaticProfile {
    Constant {
        kappa: f64,
        b1: f64,
        b2: f64,
        scale: f64,
    },
    Sampled {
        spline: CubicSpline,
    },
}

impl StaticProfile {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            StaticProfile::Constant { kappa, b1, b2, scale } => {
                let (c, s, _, _) = fundamental(*kappa, z);
                scale * (b2 * c - b1 * s)
            }
            StaticProfile::Sampled { spline } => spline.eval(z),
        }
    }

    pub fn sample(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&z| self.eval(z)).collect()
    }
}

/// Fundamental solutions of `f'' = kappa f`: `(C, S, C', S')` with
/// `C(0) = 1, C'(0) = 0, S(0) = 0, S'(0) = 1`.
fn fundamental(kappa: f64, z: f64) -> (f64, f64, f64, f64) {
    if kappa > 0.0 {
        let b = kappa.sqrt();
        let (sh, ch) = ((b * z).sinh(), (b * z).cosh());
        (ch, sh / b, b * sh, ch)
    } else if kappa < 0.0 {
        let b = (-kappa).sqrt();
        let (sn, cs) = (b * z).sin_cos();
        (cs, sn / b, -b * sn, cs)
    } else {
        (1.0, z, 0.0, 1.0)
    }
}

/// Static boundary-response profile for shift `w`. Closed form for constant
/// coefficients, RK4 shooting on a fine mesh otherwise.
pub fn static_profile(problem: &SlProblem, w: f64) -> Result<StaticProfile> {
    let (b1, b2, a1, a2) = (problem.b1, problem.b2, problem.a1, problem.a2);
    if let Some((p, q, r)) = problem.constants() {
        let kappa = (q + w * r) / p;
        let (c, s, dc, ds) = fundamental(kappa, 1.0);
        let denom = a1 * (b2 * c - b1 * s) + a2 * (b2 * dc - b1 * ds);
        if !(denom.abs() > 1e-300) || !denom.is_finite() {
            return Err(numeric(format!("static problem singular for w = {w}")));
        }
        return Ok(StaticProfile::Constant { kappa, b1, b2, scale: 1.0 / denom });
    }

    let points = 2001;
    let sub = 4;
    let steps = (points - 1) * sub;
    let h = 1.0 / steps as f64;
    let rhs = |z: f64, y: [f64; 2]| {
        [y[1] / problem.p.eval(z), (problem.q.eval(z) + w * problem.r.eval(z)) * y[0]]
    };
    let mut y = [b2, -b1 * problem.p.eval(0.0)];
    let mut vals = vec![y[0]];
    for i in 0..steps {
        let z = i as f64 * h;
        let k1 = rhs(z, y);
        let k2 = rhs(z + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = rhs(z + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = rhs(z + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        y[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        y[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        if (i + 1) % sub == 0 {
            vals.push(y[0]);
        }
    }
    let denom = a1 * y[0] + a2 * y[1] / problem.p.eval(1.0);
    if !(denom.abs() > 1e-300) || !denom.is_finite() {
        return Err(numeric(format!("static problem singular for w = {w}")));
    }
    let z: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let v: Vec<f64> = vals.iter().map(|v| v / denom).collect();
    Ok(StaticProfile::Sampled { spline: CubicSpline::new(z, v)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        let es = analytic_eigensystem(1.0, 0.0, 3, 401).unwrap();
        assert!((es.pairs()[0].lambda - PI * PI).abs() < 1e-12);
        assert!((es.pairs()[0].phi[200] - SQRT_2).abs() < 1e-14);
        let es = analytic_eigensystem(1.0, PI * PI, 1, 11).unwrap();
        assert!(es.pairs()[0].lambda.abs() < 1e-12);
        let es = analytic_eigensystem(1.0, 15.0, 2, 11).unwrap();
        assert!((es.pairs()[0].lambda - (PI * PI - 15.0)).abs() < 1e-12);
        assert!((es.pairs()[0].lambda + 5.1304).abs() < 1e-4);
    }

    #[test]
    fn analytic_rejects_bad_sizes() {
        assert!(analytic_eigensystem(1.0, 0.0, 0, 11).is_err());
        assert!(analytic_eigensystem(1.0, 0.0, 3, 1).is_err());
    }

    #[test]
    fn shooting_matches_closed_form() {
        let pr = SlProblem::reaction_diffusion(1.0, 15.0).unwrap();
        let shot = shoot_eigensystem(&pr, 20, 401, 1e-13).unwrap();
        for e in shot.pairs() {
            let exact = (e.n * e.n) as f64 * PI * PI - 15.0;
            assert!((e.lambda - exact).abs() < 1e-8, "n={} {} {}", e.n, e.lambda, exact);
        }
        let an = analytic_eigensystem(1.0, 15.0, 20, 401).unwrap();
        for (a, b) in an.pairs().iter().zip(shot.pairs()) {
            let d: Vec<f64> = a.phi.iter().zip(&b.phi).map(|(x, y)| x - y).collect();
            assert!(an.norm_r(&d) < 1e-6, "mode {}", a.n);
            assert!((a.dphi1 - b.dphi1).abs() < 1e-6 * a.dphi1.abs());
        }
    }

    #[test]
    fn neumann_left_closed_form() {
        let pr = SlProblem::new(1.0.into(), 0.0.into(), 1.0.into(), (0.0, 1.0), (1.0, 0.0)).unwrap();
        let es = shoot_eigensystem(&pr, 5, 401, 1e-13).unwrap();
        for e in es.pairs() {
            let k = (e.n as f64 - 0.5) * PI;
            assert!((e.lambda - k * k).abs() < 1e-8);
            let err = es
                .grid()
                .points()
                .iter()
                .zip(&e.phi)
                .map(|(&z, v)| (v - SQRT_2 * (k * z).cos()).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "mode {} err {err}", e.n);
        }
    }

    #[test]
    fn constant_shift_moves_spectrum() {
        let pr = SlProblem::dirichlet(0.7, 2.0).unwrap();
        let a = shoot_eigensystem(&pr, 6, 201, 1e-13).unwrap();
        let b = shoot_eigensystem(&pr.shifted(3.5), 6, 201, 1e-13).unwrap();
        for (x, y) in a.pairs().iter().zip(b.pairs()) {
            assert!((y.lambda - x.lambda - 3.5).abs() < 1e-9);
            let d = x.phi.iter().zip(&y.phi).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn gram_and_partial_sums() {
        let es = analytic_eigensystem(1.0, 15.0, 30, 401).unwrap();
        let rep = validate_eigensystem(&es, 1).unwrap();
        assert!(rep.gram_deviation < 1e-8);
        assert_eq!(rep.tail_start, 2);
        let mut oracle = 0.0;
        for n in 2..=30 {
            oracle += SQRT_2 / ((n * n) as f64 * PI * PI - 15.0);
        }
        assert!((rep.partial_sums.last().unwrap().1 - oracle).abs() < 1e-12);
        assert!((rep.tail_exponent.unwrap() + 2.0).abs() < 0.05);
    }

    #[test]
    fn single_pair_gram_is_norm_defect() {
        let es = analytic_eigensystem(1.0, 0.0, 1, 9).unwrap();
        let rep = validate_eigensystem(&es, 1).unwrap();
        let n = es.inner(&es.pairs()[0].phi, &es.pairs()[0].phi);
        assert!((rep.gram_deviation - (n - 1.0).abs()).abs() < 1e-15);
    }

    #[test]
    fn validation_needs_positive_eigenvalue() {
        let es = analytic_eigensystem(1.0, 15.0, 1, 21).unwrap();
        assert!(matches!(validate_eigensystem(&es, 1), Err(Error::PreconditionViolation(_))));
    }

    #[test]
    fn ode_residual_is_second_order() {
        let pr = SlProblem::new(
            Coefficient::tabulated(vec![0.0, 0.5, 1.0], vec![1.0, 1.2, 1.5]).unwrap(),
            1.0.into(),
            1.0.into(),
            (1.0, 0.0),
            (1.0, 0.5),
        )
        .unwrap();
        let coarse = ode_residual(&shoot_eigensystem(&pr, 3, 101, 1e-12).unwrap());
        let fine = ode_residual(&shoot_eigensystem(&pr, 3, 201, 1e-12).unwrap());
        assert!(coarse / fine > 3.5, "{coarse} {fine}");
    }

    #[test]
    fn lifting_examples() {
        let l = boundary_lifting(1.0, 0.0).unwrap();
        assert_eq!((l.sigma1, l.sigma2), (3.0, -2.0));
        assert!((l.h(1.0) - 1.0).abs() < 1e-15 && l.dh(1.0).abs() < 1e-15);
        let l = boundary_lifting(0.0, 1.0).unwrap();
        assert_eq!((l.sigma1, l.sigma2), (-1.0, 1.0));
        assert!((l.dh(1.0) - 1.0).abs() < 1e-15);
        assert!(boundary_lifting(0.0, 0.0).is_err());
    }

    #[test]
    fn gains_dirichlet_and_neumann() {
        let es = analytic_eigensystem(1.0, 15.0, 2, 101).unwrap();
        let g = es.gains().unwrap();
        assert!((g[0] - SQRT_2 * PI).abs() < 1e-12);
        assert!((g[1] + 2.0 * SQRT_2 * PI).abs() < 1e-12);
        let pr = SlProblem::new(2.0.into(), 0.0.into(), 1.0.into(), (1.0, 0.0), (0.0, 1.0)).unwrap();
        let es = shoot_eigensystem(&pr, 3, 201, 1e-12).unwrap();
        for e in es.pairs() {
            assert!((input_gain(e, &pr).unwrap() - 2.0 * e.phi1).abs() < 1e-12);
        }
    }

    #[test]
    fn static_profile_closed_and_shot_agree() {
        let pr = SlProblem::dirichlet(1.0, 2.0).unwrap();
        let s = static_profile(&pr, 0.5).unwrap();
        let beta = 2.5f64.sqrt();
        for z in [0.0, 0.3, 0.8, 1.0] {
            assert!((s.eval(z) - (beta * z).sinh() / beta.sinh()).abs() < 1e-14);
        }
        let tab = SlProblem::new(
            Coefficient::tabulated(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap(),
            2.0.into(),
            1.0.into(),
            (1.0, 0.0),
            (1.0, 0.0),
        )
        .unwrap();
        let t = static_profile(&tab, 0.5).unwrap();
        for z in [0.1, 0.55, 0.9] {
            assert!((t.eval(z) - s.eval(z)).abs() < 1e-10);
        }
        let harmonic = static_profile(&SlProblem::dirichlet(1.0, 0.0).unwrap(), 0.0).unwrap();
        assert!((harmonic.eval(0.4) - 0.4).abs() < 1e-15);
    }
}
