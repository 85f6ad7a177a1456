//! Post-processing of simulated traces: decay fits, empirical
//! destabilization periods and checks of the input-to-state estimate.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::modal_sim::{fmt17, Trace};

/// Norms below this are treated as floating-point noise.
pub const NORM_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// Smallest G with `norm(t) <= G e^{-c t} norm(0)` on every usable row.
    pub g_est: f64,
    pub c_est: f64,
    pub fit_window: (f64, f64),
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    /// `exp(intercept)`, the fitted norm at t = 0.
    pub amplitude: f64,
}

/// Least-squares line through `(t, ln norm)` for rows with `t >= t_lo`.
pub fn fit_decay(trace: &Trace, t_lo: f64) -> Result<DecayFit> {
    let window: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .filter(|r| r.t >= t_lo)
        .map(|r| (r.t, r.norm_r))
        .collect();
    if !window.is_empty() && window.iter().all(|(_, n)| *n < NORM_FLOOR) {
        return Err(Error::DegenerateTrace("every norm in the window is at the floating-point floor".into()));
    }
    let pts: Vec<(f64, f64)> = window
        .iter()
        .filter(|(_, n)| *n >= NORM_FLOOR && n.is_finite())
        .map(|&(t, n)| (t, n.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::DegenerateTrace(format!(
            "{} usable rows after t = {t_lo}, need at least 10",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateTrace("all usable rows share one time".into()));
    }
    let slope = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum::<f64>() / sxx;
    let intercept = ym - slope * tm;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    let c_est = -slope;

    let first = &trace.rows[0];
    let x0 = first.norm_r;
    let g_est = if x0 >= NORM_FLOOR {
        trace
            .rows
            .iter()
            .filter(|r| r.norm_r >= NORM_FLOOR)
            .map(|r| r.norm_r / (x0 * (-c_est * (r.t - first.t)).exp()))
            .fold(1.0, f64::max)
    } else {
        1.0
    };
    Ok(DecayFit {
        g_est,
        c_est,
        fit_window: (pts[0].0, pts[pts.len() - 1].0),
        residual,
        amplitude: intercept.exp(),
    })
}

/// Default fit window start: 20% of the horizon.
pub fn default_fit_start(trace: &Trace) -> f64 {
    trace.rows.last().map_or(0.0, |r| 0.2 * r.t)
}

/// Boundedness predicate: the final norm is below the initial one.
pub fn is_bounded(trace: &Trace) -> bool {
    match (trace.rows.first(), trace.rows.last()) {
        (Some(a), Some(b)) => b.norm_r.is_finite() && b.norm_r < a.norm_r,
        _ => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Destabilization {
    /// Largest period verified stable.
    pub t_emp: f64,
    /// Smallest period verified unstable.
    pub t_unstable: f64,
    pub t_star: f64,
    /// `t_emp / t_star`.
    pub ratio: f64,
    pub evaluations: usize,
}

/// Bisection on the sampling period for the change of the boundedness
/// predicate. `stable(T)` runs the closed loop; numeric blow-up counts as
/// unstable. The bracket ends are checked first.
pub fn destabilization_search(
    stable: impl Fn(f64) -> Result<bool>,
    (lo, hi): (f64, f64),
    rel_tol: f64,
    t_star: f64,
) -> Result<Destabilization> {
    if !(lo > 0.0 && hi > lo) {
        return Err(invalid(format!("bad period range [{lo}, {hi}]")));
    }
    let check = |t: f64| match stable(t) {
        Ok(b) => Ok(b),
        Err(Error::NumericFailure(_)) => Ok(false),
        Err(e) => Err(e),
    };
    if !check(lo)? {
        return Err(Error::Bracket(format!("closed loop is not bounded at T = {lo}")));
    }
    if check(hi)? {
        return Err(Error::Bracket(format!("closed loop is still bounded at T = {hi}")));
    }
    let (mut a, mut b) = (lo, hi);
    let mut evaluations = 2;
    while b - a > rel_tol * b {
        let mid = (a * b).sqrt();
        evaluations += 1;
        if check(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Destabilization { t_emp: a, t_unstable: b, t_star, ratio: a / t_star, evaluations })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IssCheck {
    pub holds: bool,
    pub violations: usize,
    pub checked: usize,
    /// Smallest and largest `rhs - lhs` over checked rows.
    pub min_slack: f64,
    pub max_slack: f64,
}

/// Checks `|y(t)| <= G e^{-sigma t} |y(0)| + gamma sup_{s<=t} |v(s)| e^{-sigma (t - s)}`
/// on every row carrying a transformed norm. The running supremum uses all
/// rows, including those without transformed norms.
pub fn verify_iss_estimate(trace: &Trace, big_g: f64, sigma: f64, gamma: f64) -> Result<IssCheck> {
    let first = trace.rows.first().ok_or_else(|| invalid("empty trace"))?;
    let y0 = first.y_norm.ok_or_else(|| invalid("trace has no transformed norm at the first row"))?;
    let t0 = first.t;
    let mut sup = 0.0f64;
    let mut last_t = t0;
    let mut out = IssCheck {
        holds: true,
        violations: 0,
        checked: 0,
        min_slack: f64::INFINITY,
        max_slack: f64::NEG_INFINITY,
    };
    for r in &trace.rows {
        let v = r.v.ok_or_else(|| invalid("trace has no v diagnostic"))?;
        sup = (sup * (-sigma * (r.t - last_t)).exp()).max(v.abs());
        last_t = r.t;
        if let Some(y) = r.y_norm {
            let rhs = big_g * (-sigma * (r.t - t0)).exp() * y0 + gamma * sup;
            let slack = rhs - y;
            out.checked += 1;
            out.min_slack = out.min_slack.min(slack);
            out.max_slack = out.max_slack.max(slack);
            if slack < -1e-12 * rhs.max(y) {
                out.violations += 1;
                out.holds = false;
            }
        }
    }
    Ok(out)
}

/// One row of a sampling-period sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub t: f64,
    pub stable: bool,
    pub c_est: Option<f64>,
    pub g_est: Option<f64>,
    /// `T / T*`.
    pub ratio: f64,
}

/// CSV with header `T,stable,c_est,G_est,ratio`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("T,stable,c_est,G_est,ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt17(r.t),
            r.stable,
            r.c_est.map(fmt17).unwrap_or_default(),
            r.g_est.map(fmt17).unwrap_or_default(),
            fmt17(r.ratio)
        ));
    }
    out
}
