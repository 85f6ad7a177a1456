//! Finite-difference reference solver: theta-scheme in time, conservative
//! central differences in space, boundary conditions by ghost-point
//! elimination (or algebraic rows at Dirichlet ends).

use serde::Serialize;

use crate::controller::ControllerSpec;
use crate::error::{invalid, numeric, Result};
use crate::modal_sim::{SamplingSchedule, SimOptions, Snapshot, Trace, TraceMeta, TraceRow, JITTER_FLOOR};
use crate::quadrature::{simpson_weights, trapezoid_weights, CubicSpline};
use crate::sl_operator::{EigenSystem, SlProblem};

/// Thomas algorithm for a tridiagonal system. `sub[0]` and `sup[n-1]` are ignored.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta.abs() < 1e-300 {
        return Err(numeric("singular tridiagonal system"));
    }
    c[0] = if n > 1 { sup[0] / beta } else { 0.0 };
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if beta.abs() < 1e-300 || !beta.is_finite() {
            return Err(numeric("singular tridiagonal system"));
        }
        if i + 1 < n {
            c[i] = sup[i] / beta;
        }
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FdGrid {
    /// Interior point count; nodes are `j h` for `j = 0..=M+1`.
    pub m: usize,
    pub h: f64,
    pub dt: f64,
    pub theta: f64,
}

impl FdGrid {
    pub fn new(m: usize, dt: f64, theta: f64) -> Result<Self> {
        if m < 2 {
            return Err(invalid("finite-difference grid needs at least 2 interior points"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(invalid(format!("theta must lie in [0, 1], got {theta}")));
        }
        Ok(Self { m, h: 1.0 / (m + 1) as f64, dt, theta })
    }

    /// Crank–Nicolson with the given resolution.
    pub fn crank_nicolson(m: usize, dt: f64) -> Result<Self> {
        Self::new(m, dt, 0.5)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m + 2).map(|j| j as f64 * self.h).collect()
    }
}

/// Spatial operator `(p x')' - q x` as a tridiagonal matrix plus the column
/// multiplying the boundary input. Dirichlet ends become algebraic rows
/// (flagged), so their matrix entries are unused.
#[derive(Clone, Debug)]
struct Operator {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    input: Vec<f64>,
    r: Vec<f64>,
    left_algebraic: bool,
    right_algebraic: bool,
    a1: f64,
}

impl Operator {
    fn new(problem: &SlProblem, grid: &FdGrid) -> Self {
        let n = grid.m + 2;
        let h = grid.h;
        let h2 = h * h;
        let z = grid.nodes();
        let pm: Vec<f64> = (0..n - 1).map(|j| problem.p.eval(z[j] + 0.5 * h)).collect();
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut input = vec![0.0; n];
        for j in 1..n - 1 {
            sub[j] = pm[j - 1] / h2;
            sup[j] = pm[j] / h2;
            diag[j] = -(pm[j - 1] + pm[j]) / h2 - problem.q.eval(z[j]);
        }
        // Ghost nodes with the half-point coefficient mirrored, which keeps
        // the operator symmetric in the trapezoid inner product.
        let left_algebraic = problem.b2 == 0.0;
        if !left_algebraic {
            sup[0] = 2.0 * pm[0] / h2;
            diag[0] = -2.0 * pm[0] / h2 + 2.0 * pm[0] * problem.b1 / (problem.b2 * h) - problem.q.eval(0.0);
        }
        let right_algebraic = problem.a2 == 0.0;
        if !right_algebraic {
            let pr = pm[n - 2];
            sub[n - 1] = 2.0 * pr / h2;
            diag[n - 1] = -2.0 * pr / h2 - 2.0 * pr * problem.a1 / (problem.a2 * h) - problem.q.eval(1.0);
            input[n - 1] = 2.0 * pr / (problem.a2 * h);
        }
        Self {
            sub,
            diag,
            sup,
            input,
            r: z.iter().map(|&s| problem.r.eval(s)).collect(),
            left_algebraic,
            right_algebraic,
            a1: problem.a1,
        }
    }

    fn apply(&self, x: &[f64], j: usize) -> f64 {
        let n = x.len();
        let mut v = self.diag[j] * x[j];
        if j > 0 {
            v += self.sub[j] * x[j - 1];
        }
        if j + 1 < n {
            v += self.sup[j] * x[j + 1];
        }
        v
    }

    fn step(&self, x: &[f64], u: f64, dt: f64, theta: f64) -> Result<Vec<f64>> {
        let n = x.len();
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for j in 0..n {
            let c = self.r[j] / dt;
            sub[j] = -theta * self.sub[j];
            sup[j] = -theta * self.sup[j];
            diag[j] = c - theta * self.diag[j];
            rhs[j] = c * x[j] + (1.0 - theta) * self.apply(x, j) + self.input[j] * u;
        }
        if self.left_algebraic {
            sup[0] = 0.0;
            diag[0] = 1.0;
            rhs[0] = 0.0;
        }
        if self.right_algebraic {
            sub[n - 1] = 0.0;
            diag[n - 1] = 1.0;
            rhs[n - 1] = u / self.a1;
        }
        solve_tridiagonal(&sub, &diag, &sup, &rhs)
    }
}

/// One theta-scheme step of `r x_t = (p x')' - q x` with the input held at
/// `u_hold`. `profile` holds all `M + 2` nodes, boundaries included.
pub fn fd_step(profile: &[f64], u_hold: f64, grid: &FdGrid, problem: &SlProblem) -> Result<Vec<f64>> {
    if profile.len() != grid.m + 2 {
        return Err(invalid(format!(
            "profile has {} nodes, grid has {}",
            profile.len(),
            grid.m + 2
        )));
    }
    Operator::new(problem, grid).step(profile, u_hold, grid.dt, grid.theta)
}

/// `(integral r x^2)^(1/2)` with trapezoid weights, the norm in which the
/// scheme is dissipative.
pub fn discrete_energy(profile: &[f64], grid: &FdGrid, problem: &SlProblem) -> f64 {
    let w = trapezoid_weights(profile.len(), grid.h);
    grid.nodes()
        .iter()
        .zip(&w)
        .zip(profile)
        .map(|((&z, w), x)| w * problem.r.eval(z) * x * x)
        .sum::<f64>()
        .sqrt()
}

/// Closed loop on the finite-difference grid with the same controller and
/// schedule as the modal simulator. The feedback is evaluated as
/// `integral f x` with Simpson weights on the nodes; each interval between
/// events is split into equal substeps no longer than `dt`. After every
/// change of the held input the first substep is replaced by two
/// backward-Euler half steps, which damps the Crank–Nicolson response to
/// the jump.
pub fn fd_simulate(
    eigsys: &EigenSystem,
    controller: &ControllerSpec,
    schedule: &SamplingSchedule,
    x0: &[f64],
    grid: &FdGrid,
    opts: &SimOptions,
) -> Result<Trace> {
    let problem = eigsys.problem();
    let z = grid.nodes();
    if x0.len() != z.len() {
        return Err(invalid(format!("initial profile has {} nodes, grid has {}", x0.len(), z.len())));
    }
    if !(opts.t_end >= 0.0) || !opts.t_end.is_finite() || !(opts.output_dt > 0.0) {
        return Err(invalid("t_end must be finite and nonnegative, output_dt positive"));
    }
    let op = Operator::new(problem, grid);
    let quad = simpson_weights(z.len(), grid.h);
    let fb: Vec<f64> = controller
        .physical_kernel(eigsys, &z)?
        .iter()
        .zip(&quad)
        .map(|(f, w)| f * w)
        .collect();
    let rw: Vec<f64> = quad.iter().zip(&op.r).map(|(w, r)| w * r).collect();
    let norm = |x: &[f64]| x.iter().zip(&rw).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
    let feedback = |x: &[f64]| x.iter().zip(&fb).map(|(x, f)| x * f).sum::<f64>();

    let n_out = (opts.t_end / opts.output_dt + 1e-9).floor() as usize;
    let mut out_times: Vec<f64> = (0..=n_out).map(|k| k as f64 * opts.output_dt).collect();
    if opts.t_end - out_times[n_out] > 1e-9 * opts.output_dt {
        out_times.push(opts.t_end);
    }
    let eps = 1e-9 * opts.output_dt.min(JITTER_FLOOR * schedule.t_sup);
    let right = x0.len() - 1;
    let mut held = problem.a1 * x0[right]
        + problem.a2 * (3.0 * x0[right] - 4.0 * x0[right - 1] + x0[right - 2]) / (2.0 * grid.h);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut jumped = false;
    let mut taus = schedule.times();
    let mut next_tau = taus.next().ok_or_else(|| invalid("schedule is empty"))?;
    let mut samples_taken = 0usize;
    let mut rows = Vec::with_capacity(out_times.len());
    let mut snapshots = Vec::new();
    let mut snap_times = opts.snapshot_times.clone();
    snap_times.sort_by(f64::total_cmp);
    let mut snap_iter = snap_times.into_iter().peekable();

    let advance = |x: &mut Vec<f64>, u: f64, span: f64, jumped: &mut bool| -> Result<()> {
        if span <= 0.0 {
            return Ok(());
        }
        let steps = (span / grid.dt - 1e-9).ceil().max(1.0) as usize;
        let dt = span / steps as f64;
        for k in 0..steps {
            if k == 0 && *jumped {
                *x = op.step(x, u, 0.5 * dt, 1.0)?;
                *x = op.step(x, u, 0.5 * dt, 1.0)?;
            } else {
                *x = op.step(x, u, dt, grid.theta)?;
            }
        }
        *jumped = false;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(numeric("finite-difference state overflowed"));
        }
        Ok(())
    };

    for &t_out in &out_times {
        let mut reported_u;
        loop {
            if next_tau <= t_out + eps {
                advance(&mut x, held, next_tau - t, &mut jumped)?;
                t = next_tau;
                let u = feedback(&x);
                jumped = u != held;
                held = u;
                samples_taken += 1;
                reported_u = held;
                next_tau = match taus.next() {
                    Some(v) => v,
                    None if t >= opts.t_end - eps => f64::INFINITY,
                    None => return Err(invalid("explicit schedule ends before t_end")),
                };
                if (t_out - t).abs() <= eps {
                    break;
                }
            } else {
                advance(&mut x, held, t_out - t, &mut jumped)?;
                t = t_out;
                reported_u = held;
                break;
            }
        }
        rows.push(TraceRow {
            t: t_out,
            norm_r: norm(&x),
            u: reported_u,
            v: None,
            w: None,
            y_norm: None,
            decomposition_residual: None,
            modes: Vec::new(),
        });
        let want = opts.snapshot_all || matches!(snap_iter.peek(), Some(&s) if s <= t_out + eps);
        if want {
            while matches!(snap_iter.peek(), Some(&s) if s <= t_out + eps) {
                snap_iter.next();
            }
            snapshots.push(Snapshot { t: t_out, x: x.clone() });
        }
    }

    Ok(Trace {
        rows,
        z,
        snapshots,
        meta: TraceMeta {
            controller: controller.id().to_string(),
            schedule: schedule.descriptor(),
            n_max: 0,
            grid_size: grid.m + 2,
            l2_trusted_only: false,
            lifted: false,
            samples_taken,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub norm_rel: f64,
    pub snapshot_rel: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub max_norm_rel: f64,
    pub t_max_norm: f64,
    pub max_snapshot_rel: Option<f64>,
    pub t_max_snapshot: Option<f64>,
}

fn rel(diff: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        diff / reference
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Per-time relative differences of norms and of snapshots, the latter on
/// the grid of `a` with `b` resampled by a cubic spline.
pub fn compare_traces(a: &Trace, b: &Trace) -> Result<ComparisonReport> {
    let matches = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(s, t)| (s - t).abs() <= 1e-9 * (1.0 + s.abs()))
    };
    if !matches(&a.times(), &b.times()) {
        return Err(invalid("traces have different output times"));
    }
    let snap_t = |t: &Trace| t.snapshots.iter().map(|s| s.t).collect::<Vec<_>>();
    if !matches(&snap_t(a), &snap_t(b)) {
        return Err(invalid("traces have different snapshot times"));
    }
    let w = simpson_weights(a.z.len(), 1.0 / (a.z.len() - 1) as f64);
    let mut snap_rel = Vec::new();
    for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
        let spline = CubicSpline::new(b.z.clone(), sb.x.clone())?;
        let mut diff = 0.0;
        let mut refn = 0.0;
        for ((&z, xa), w) in a.z.iter().zip(&sa.x).zip(&w) {
            diff += w * (xa - spline.eval(z)).powi(2);
            refn += w * xa * xa;
        }
        snap_rel.push((sa.t, rel(diff.sqrt(), refn.sqrt())));
    }
    let rows: Vec<ComparisonRow> = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| ComparisonRow {
            t: ra.t,
            norm_rel: rel((ra.norm_r - rb.norm_r).abs(), ra.norm_r),
            snapshot_rel: snap_rel.iter().find(|(t, _)| (t - ra.t).abs() <= 1e-9 * (1.0 + t.abs())).map(|s| s.1),
        })
        .collect();
    let (t_max_norm, max_norm_rel) = rows
        .iter()
        .map(|r| (r.t, r.norm_rel))
        .fold((0.0, f64::NEG_INFINITY), |m, v| if v.1 > m.1 { v } else { m });
    let snap_max = snap_rel.iter().copied().fold(None, |m: Option<(f64, f64)>, v| match m {
        Some(m) if m.1 >= v.1 => Some(m),
        _ => Some(v),
    });
    Ok(ComparisonReport {
        rows,
        max_norm_rel,
        t_max_norm,
        max_snapshot_rel: snap_max.map(|s| s.1),
        t_max_snapshot: snap_max.map(|s| s.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn heat(q: f64) -> SlProblem {
        SlProblem::dirichlet(1.0, q).unwrap()
    }

    fn run(problem: &SlProblem, grid: &FdGrid, x0: Vec<f64>, u: f64, t: f64) -> Vec<f64> {
        let steps = (t / grid.dt).round() as usize;
        let mut x = x0;
        for _ in 0..steps {
            x = fd_step(&x, u, grid, problem).unwrap();
        }
        x
    }

    fn mode_error(m: usize, dt: f64) -> f64 {
        let grid = FdGrid::crank_nicolson(m, dt).unwrap();
        let z = grid.nodes();
        let phi: Vec<f64> = z.iter().map(|s| 2f64.sqrt() * (PI * s).sin()).collect();
        let x = run(&heat(0.0), &grid, phi.clone(), 0.0, 0.1);
        let decay = (-PI * PI * 0.1).exp();
        let e: f64 = x.iter().zip(&phi).map(|(a, b)| (a - decay * b).powi(2)).sum::<f64>();
        (e * grid.h).sqrt()
    }

    #[test]
    fn tridiagonal_solve() {
        let x = solve_tridiagonal(&[0.0, 1.0, 1.0], &[4.0, 4.0, 4.0], &[1.0, 1.0, 0.0], &[5.0, 6.0, 5.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-15);
        }
        assert!(solve_tridiagonal(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn heat_mode_second_order() {
        let a = mode_error(49, 2e-3);
        let b = mode_error(99, 1e-3);
        assert!(a < 1e-3);
        assert!(a / b > 3.5 && a / b < 4.5, "{a} {b}");
    }

    #[test]
    fn steady_state_is_linear() {
        let grid = FdGrid::new(39, 0.05, 1.0).unwrap();
        let x = run(&heat(0.0), &grid, vec![0.0; 41], 1.0, 10.0);
        for (v, z) in x.iter().zip(grid.nodes()) {
            assert!((v - z).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_stays_zero() {
        let grid = FdGrid::crank_nicolson(20, 1e-3).unwrap();
        let x = run(&heat(-15.0), &grid, vec![0.0; 22], 0.0, 0.05);
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn neumann_mode_and_energy() {
        let pr = SlProblem::new(1.0.into(), 0.5.into(), 1.0.into(), (0.0, 1.0), (0.0, 1.0)).unwrap();
        let grid = FdGrid::crank_nicolson(100, 1e-3).unwrap();
        let x0: Vec<f64> = grid.nodes().iter().map(|s| (PI * s).cos() + 0.3 * (3.0 * PI * s).cos()).collect();
        let mut x = x0.clone();
        let mut e = discrete_energy(&x, &grid, &pr);
        for _ in 0..200 {
            x = fd_step(&x, 0.0, &grid, &pr).unwrap();
            let e2 = discrete_energy(&x, &grid, &pr);
            assert!(e2 <= e * (1.0 + 1e-14));
            e = e2;
        }
        // Leading mode cos(pi z) decays at pi^2 + 0.5.
        let d = (-(PI * PI + 0.5) * 0.2).exp();
        let d3 = (-(9.0 * PI * PI + 0.5) * 0.2).exp();
        for (v, s) in x.iter().zip(grid.nodes()) {
            assert!((v - d * (PI * s).cos() - 0.3 * d3 * (3.0 * PI * s).cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(FdGrid::new(10, 0.0, 0.5).is_err());
        assert!(FdGrid::new(10, 1e-3, 1.5).is_err());
        let grid = FdGrid::crank_nicolson(10, 1e-3).unwrap();
        assert!(fd_step(&[0.0; 5], 0.0, &grid, &heat(0.0)).is_err());
    }
}
