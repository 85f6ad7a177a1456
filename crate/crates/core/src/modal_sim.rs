//! Exact modal propagation of the sampled-data closed loop.
//!
//! Between sampling instants the boundary input is constant, so every modal
//! ODE `x_n' + lambda_n x_n = g_n u` is integrated in closed form. Modes above
//! the truncation order are represented quasi-statically through the static
//! boundary response, which keeps spatial reconstructions and boundary
//! functionals accurate near a Dirichlet-actuated end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerSpec;
use crate::error::{invalid, numeric, Result};
use crate::quadrature::CompositeGauss;
use crate::sl_operator::{static_profile, EigenSystem, StaticProfile};

/// Truncated modal coordinates at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalState {
    pub t: f64,
    pub coeffs: Vec<f64>,
}

impl ModalState {
    /// Parseval norm of the retained coefficients.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// `p(s) = (1 - exp(-lambda s)) / lambda`, or `s` when `lambda = 0`.
pub fn hold_integral(lambda: f64, s: f64) -> f64 {
    if lambda == 0.0 {
        s
    } else {
        -(-lambda * s).exp_m1() / lambda
    }
}

/// Exact solution of `x' + lambda x = g u` after `dt` with constant `u`.
pub fn zoh_scalar(x: f64, lambda: f64, gain: f64, u_hold: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(invalid(format!("step must be positive, got {dt}")));
    }
    if lambda * dt < -700.0 {
        return Err(numeric(format!(
            "mode with lambda = {lambda} grows past floating range over dt = {dt}"
        )));
    }
    Ok((-lambda * dt).exp() * x + gain * u_hold * hold_integral(lambda, dt))
}

pub fn zoh_step(
    state: &ModalState,
    u_hold: f64,
    dt: f64,
    eigsys: &EigenSystem,
    gains: &[f64],
) -> Result<ModalState> {
    if gains.len() < state.coeffs.len() || eigsys.len() < state.coeffs.len() {
        return Err(invalid("state has more modes than eigenpairs or gains"));
    }
    let coeffs = state
        .coeffs
        .iter()
        .zip(eigsys.pairs())
        .zip(gains)
        .map(|((&x, e), &g)| zoh_scalar(x, e.lambda, g, u_hold, dt))
        .collect::<Result<_>>()?;
    Ok(ModalState { t: state.t + dt, coeffs })
}

pub fn project_initial(x0: &[f64], eigsys: &EigenSystem) -> Result<ModalState> {
    Ok(ModalState { t: 0.0, coeffs: eigsys.project(x0)? })
}

/// `sum_n x_n phi_n` on the eigensystem grid.
pub fn reconstruct(state: &ModalState, eigsys: &EigenSystem) -> Vec<f64> {
    eigsys.synthesize(&state.coeffs)
}

/// Quasi-static representation of the unresolved modes: with held input `u`
/// the modes above the truncation are approximated by
/// `u (S - sum_{n <= N} S_n phi_n)`, where `S` solves the static problem with
/// unit boundary data and `S_n = g_n / lambda_n` are its modal coefficients.
#[derive(Clone, Debug)]
pub struct Lift {
    pub profile: StaticProfile,
    pub static_coeffs: Vec<f64>,
    pub tail: Vec<f64>,
    /// `||S - sum_n S_n phi_n||_r^2`.
    pub tail_energy: f64,
}

impl Lift {
    pub fn new(eigsys: &EigenSystem) -> Result<Self> {
        let profile = static_profile(eigsys.problem(), 0.0)?;
        let static_coeffs: Vec<f64> = match eigsys.closed_form() {
            Some(_) => eigsys.project_fn(|z| profile.eval(z)),
            None => eigsys.project(&profile.sample(eigsys.grid().points()))?,
        };
        let resolved = eigsys.synthesize(&static_coeffs);
        let tail = profile
            .sample(eigsys.grid().points())
            .iter()
            .zip(&resolved)
            .map(|(s, r)| s - r)
            .collect();
        let r = &eigsys.problem().r;
        let total = CompositeGauss::new(400, 10).integrate(|z| r.eval(z) * profile.eval(z).powi(2));
        let tail_energy = (total - static_coeffs.iter().map(|c| c * c).sum::<f64>()).max(0.0);
        Ok(Self { profile, static_coeffs, tail, tail_energy })
    }
}

/// Lifted reconstruction `sum_n x_n phi_n + u_hold * tail`.
pub fn reconstruct_lifted(state: &ModalState, eigsys: &EigenSystem, lift: &Lift, u_hold: f64) -> Vec<f64> {
    let mut x = reconstruct(state, eigsys);
    for (v, t) in x.iter_mut().zip(&lift.tail) {
        *v += u_hold * t;
    }
    x
}

/// A linear functional of the (lifted) state:
/// `sum_n modal_n x_n + tail * u_hold`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearFunctional {
    pub modal: Vec<f64>,
    pub tail: f64,
}

impl LinearFunctional {
    pub fn eval(&self, coeffs: &[f64], u_hold: f64) -> f64 {
        self.modal.iter().zip(coeffs).map(|(a, b)| a * b).sum::<f64>() + self.tail * u_hold
    }

    /// Functional `x -> integral kernel * x dz` from grid samples.
    pub fn from_kernel_samples(eigsys: &EigenSystem, lift: Option<&Lift>, kernel: &[f64]) -> Self {
        let w = eigsys.grid().simpson();
        let dot = |f: &[f64]| -> f64 { w.iter().zip(kernel).zip(f).map(|((w, k), f)| w * k * f).sum() };
        Self {
            modal: eigsys.pairs().iter().map(|e| dot(&e.phi)).collect(),
            tail: lift.map_or(0.0, |l| dot(&l.tail)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Periodic,
    Jittered,
    Explicit,
}

/// Sampling instants `tau_0 = 0 < tau_1 < ...` with gaps at most `t_sup`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSchedule {
    pub kind: ScheduleKind,
    pub t_sup: f64,
    pub seed: u64,
    explicit: Vec<f64>,
}

/// Lower end of jittered gaps as a fraction of the sup gap.
pub const JITTER_FLOOR: f64 = 0.25;

impl SamplingSchedule {
    pub fn periodic(t_sup: f64) -> Result<Self> {
        make_schedule(ScheduleKind::Periodic, t_sup, 0, None)
    }

    pub fn jittered(t_sup: f64, seed: u64) -> Result<Self> {
        make_schedule(ScheduleKind::Jittered, t_sup, seed, None)
    }

    pub fn explicit(t_sup: f64, times: Vec<f64>) -> Result<Self> {
        make_schedule(ScheduleKind::Explicit, t_sup, 0, Some(times))
    }

    pub fn times(&self) -> ScheduleIter<'_> {
        ScheduleIter {
            schedule: self,
            index: 0,
            last: 0.0,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }

    pub fn descriptor(&self) -> String {
        match self.kind {
            ScheduleKind::Periodic => format!("periodic(T={:e})", self.t_sup),
            ScheduleKind::Jittered => format!("jittered(T={:e},seed={})", self.t_sup, self.seed),
            ScheduleKind::Explicit => format!("explicit(T={:e},n={})", self.t_sup, self.explicit.len()),
        }
    }
}

pub fn make_schedule(
    kind: ScheduleKind,
    t_sup: f64,
    seed: u64,
    explicit: Option<Vec<f64>>,
) -> Result<SamplingSchedule> {
    if !(t_sup > 0.0) || !t_sup.is_finite() {
        return Err(invalid(format!("sup gap must be positive, got {t_sup}")));
    }
    let explicit = match kind {
        ScheduleKind::Explicit => {
            let times = explicit.ok_or_else(|| invalid("explicit schedule needs a time list"))?;
            if times.first() != Some(&0.0) {
                return Err(invalid("explicit schedule must start at 0"));
            }
            for w in times.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(invalid("explicit schedule must be strictly increasing"));
                }
                if w[1] - w[0] > t_sup * (1.0 + 1e-12) {
                    return Err(invalid(format!(
                        "gap {} exceeds the sup bound {t_sup}",
                        w[1] - w[0]
                    )));
                }
            }
            times
        }
        _ => Vec::new(),
    };
    Ok(SamplingSchedule { kind, t_sup, seed, explicit })
}

/// Generator of sampling instants; unbounded except for explicit lists.
pub struct ScheduleIter<'a> {
    schedule: &'a SamplingSchedule,
    index: usize,
    last: f64,
    rng: ChaCha8Rng,
}

impl Iterator for ScheduleIter<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let s = self.schedule;
        let i = self.index;
        self.index += 1;
        let t = match s.kind {
            ScheduleKind::Periodic => i as f64 * s.t_sup,
            ScheduleKind::Jittered => {
                if i == 0 {
                    0.0
                } else {
                    self.last + self.rng.random_range(JITTER_FLOOR * s.t_sup..=s.t_sup)
                }
            }
            ScheduleKind::Explicit => *s.explicit.get(i)?,
        };
        self.last = t;
        Some(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub norm_r: f64,
    pub u: f64,
    pub v: Option<f64>,
    pub w: Option<f64>,
    /// L2 norm of the backstepping-transformed state.
    pub y_norm: Option<f64>,
    /// `v - w - integral (k - g)(x(tau_i) - x(t))`, zero up to rounding.
    pub decomposition_residual: Option<f64>,
    /// Leading modal coefficients, when requested.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceMeta {
    pub controller: String,
    pub schedule: String,
    pub n_max: usize,
    pub grid_size: usize,
    /// Reconstructions near an actuated Dirichlet end are meaningful in L2 only.
    pub l2_trusted_only: bool,
    pub lifted: bool,
    pub samples_taken: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub z: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.norm_r).collect()
    }

    /// CSV with header `t,norm_r,u,v,w`; absent diagnostics are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,norm_r,u,v,w\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt17(r.t),
                fmt17(r.norm_r),
                fmt17(r.u),
                r.v.map(fmt17).unwrap_or_default(),
                r.w.map(fmt17).unwrap_or_default()
            ));
        }
        out
    }

    /// Snapshot CSV with header `z,x`.
    pub fn snapshot_csv(&self, index: usize) -> String {
        let mut out = String::from("z,x\n");
        for (z, x) in self.z.iter().zip(&self.snapshots[index].x) {
            out.push_str(&format!("{},{}\n", fmt17(*z), fmt17(*x)));
        }
        out
    }
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub t_end: f64,
    pub output_dt: f64,
    /// Snapshot at the first output row at or after each listed time.
    pub snapshot_times: Vec<f64>,
    pub snapshot_all: bool,
    /// Also emit a row at every sampling instant that is not an output time.
    pub sample_rows: bool,
    /// Number of leading modal coefficients recorded on each row.
    pub record_modes: usize,
    /// Record v, w and transformed-state norms when the controller has them.
    pub diagnostics: bool,
    /// Represent unresolved modes quasi-statically.
    pub lift: bool,
}

impl SimOptions {
    pub fn new(t_end: f64, output_dt: f64) -> Self {
        Self {
            t_end,
            output_dt,
            snapshot_times: Vec::new(),
            snapshot_all: false,
            sample_rows: false,
            record_modes: 0,
            diagnostics: false,
            lift: true,
        }
    }
}

/// Exact propagator with cached factors for repeated step lengths.
struct Propagator<'a> {
    lambdas: &'a [f64],
    gains: &'a [f64],
    cached_dt: f64,
    decay: Vec<f64>,
    forcing: Vec<f64>,
}

impl<'a> Propagator<'a> {
    fn new(lambdas: &'a [f64], gains: &'a [f64]) -> Self {
        let n = lambdas.len();
        Self { lambdas, gains, cached_dt: f64::NAN, decay: vec![0.0; n], forcing: vec![0.0; n] }
    }

    fn advance(&mut self, x: &mut [f64], u: f64, dt: f64) -> Result<()> {
        if dt <= 0.0 {
            return Ok(());
        }
        if dt != self.cached_dt {
            for (i, &l) in self.lambdas.iter().enumerate() {
                if l * dt < -700.0 {
                    return Err(numeric(format!(
                        "mode {} with lambda = {l} grows past floating range over dt = {dt}",
                        i + 1
                    )));
                }
                self.decay[i] = (-l * dt).exp();
                self.forcing[i] = self.gains[i] * hold_integral(l, dt);
            }
            self.cached_dt = dt;
        }
        for i in 0..x.len() {
            x[i] = self.decay[i] * x[i] + self.forcing[i] * u;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(numeric("modal state overflowed"));
        }
        Ok(())
    }
}

/// Boundary value `a1 x(1) + a2 x'(1)` of grid samples (one-sided
/// second-order derivative).
pub fn boundary_value(eigsys: &EigenSystem, x: &[f64]) -> f64 {
    let pr = eigsys.problem();
    let n = x.len();
    let h = eigsys.grid().spacing();
    let dx = if n >= 3 {
        (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * h)
    } else {
        (x[n - 1] - x[n - 2]) / h
    };
    pr.a1 * x[n - 1] + pr.a2 * dx
}

/// Simulate the sampled-data closed loop from grid samples `x0`.
///
/// At each sampling instant the controller's functional is applied to the
/// current state and held until the next instant. Output rows at a sampling
/// instant report the state as a left limit (continuous in time) and the
/// newly computed input.
pub fn simulate_closed_loop(
    eigsys: &EigenSystem,
    controller: &ControllerSpec,
    schedule: &SamplingSchedule,
    x0: &[f64],
    opts: &SimOptions,
) -> Result<Trace> {
    if !(opts.t_end >= 0.0) || !opts.t_end.is_finite() {
        return Err(invalid("t_end must be a finite nonnegative time"));
    }
    if !(opts.output_dt > 0.0) {
        return Err(invalid("output_dt must be positive"));
    }
    let lambdas = eigsys.lambdas();
    let gains = eigsys.gains()?;
    let lift = if opts.lift { Some(Lift::new(eigsys)?) } else { None };
    let funcs = controller.functionals(eigsys, lift.as_ref())?;
    let diag = if opts.diagnostics { funcs.diagnostics.as_ref() } else { None };

    let mut x = project_initial(x0, eigsys)?.coeffs;
    let mut held = if lift.is_some() { boundary_value(eigsys, x0) } else { 0.0 };

    let n_out = (opts.t_end / opts.output_dt + 1e-9).floor() as usize;
    let mut out_times: Vec<f64> = (0..=n_out).map(|k| k as f64 * opts.output_dt).collect();
    if opts.t_end - out_times[n_out] > 1e-9 * opts.output_dt {
        out_times.push(opts.t_end);
    }
    let eps = 1e-9 * opts.output_dt.min(JITTER_FLOOR * schedule.t_sup);

    let mut prop = Propagator::new(&lambdas, &gains);
    let mut taus = schedule.times();
    let mut rows = Vec::with_capacity(out_times.len());
    let mut snapshots = Vec::new();
    let mut snap_iter = {
        let mut s = opts.snapshot_times.clone();
        s.sort_by(f64::total_cmp);
        s.into_iter().peekable()
    };

    let mut t = 0.0;
    let mut next_tau = taus.next().ok_or_else(|| invalid("schedule is empty"))?;
    let mut left_held = held;
    // Values of the diagnostic functionals at the latest sampling instant.
    let mut k_at_tau = 0.0;
    let mut g_at_tau = 0.0;
    let mut samples_taken = 0usize;

    let base_row = |t: f64, x: &[f64], lift_u: f64, held: f64, k_tau: f64, g_tau: f64| {
        let mut row = TraceRow {
            t,
            norm_r: (x.iter().map(|c| c * c).sum::<f64>()
                + lift.as_ref().map_or(0.0, |l| lift_u * lift_u * l.tail_energy))
            .sqrt(),
            u: held,
            v: None,
            w: None,
            y_norm: None,
            decomposition_residual: None,
            modes: x[..opts.record_modes.min(x.len())].to_vec(),
        };
        if let Some((kf, gf)) = diag {
            let kx = kf.eval(x, lift_u);
            let gx = gf.eval(x, lift_u);
            let v = held - kx;
            let w = g_tau - gx;
            row.v = Some(v);
            row.w = Some(w);
            row.decomposition_residual = Some(v - w - ((k_tau - g_tau) - (kx - gx)));
        }
        row
    };

    for &t_out in &out_times {
        let mut at_sample;
        loop {
            if next_tau <= t_out + eps {
                prop.advance(&mut x, held, next_tau - t)?;
                t = next_tau;
                left_held = held;
                let u = funcs.feedback.eval(&x, held);
                if let Some((kf, gf)) = diag {
                    k_at_tau = kf.eval(&x, held);
                    g_at_tau = gf.eval(&x, held);
                }
                held = u;
                samples_taken += 1;
                at_sample = true;
                if opts.sample_rows && (t_out - t).abs() > eps {
                    rows.push(base_row(t, &x, left_held, held, k_at_tau, g_at_tau));
                }
                next_tau = match taus.next() {
                    Some(v) => v,
                    None if t >= opts.t_end - eps => f64::INFINITY,
                    None => return Err(invalid("explicit schedule ends before t_end")),
                };
                if !(next_tau > t) {
                    return Err(invalid("sampling instants must increase"));
                }
                if (t_out - t).abs() <= eps {
                    break;
                }
            } else {
                prop.advance(&mut x, held, t_out - t)?;
                t = t_out;
                at_sample = false;
                break;
            }
        }
        let lift_u = if at_sample { left_held } else { held };
        let mut row = base_row(t_out, &x, lift_u, held, k_at_tau, g_at_tau);
        let want_snapshot = opts.snapshot_all
            || matches!(snap_iter.peek(), Some(&s) if s <= t_out + eps);
        let need_profile = want_snapshot || (diag.is_some() && controller.has_transform());
        if need_profile {
            let state = ModalState { t, coeffs: x.clone() };
            let profile = match &lift {
                Some(l) => reconstruct_lifted(&state, eigsys, l, lift_u),
                None => reconstruct(&state, eigsys),
            };
            if diag.is_some() {
                row.y_norm = controller.transformed_norm(eigsys, &profile);
            }
            if want_snapshot {
                while matches!(snap_iter.peek(), Some(&s) if s <= t_out + eps) {
                    snap_iter.next();
                }
                snapshots.push(Snapshot { t: t_out, x: profile });
            }
        }
        rows.push(row);
    }

    Ok(Trace {
        rows,
        z: eigsys.grid().points().to_vec(),
        snapshots,
        meta: TraceMeta {
            controller: controller.id().to_string(),
            schedule: schedule.descriptor(),
            n_max: eigsys.len(),
            grid_size: eigsys.grid().len(),
            l2_trusted_only: eigsys.problem().is_dirichlet_right(),
            lifted: lift.is_some(),
            samples_taken,
        },
    })
}
