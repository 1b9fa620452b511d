//! Independent oracles and grid-refinement studies.
//!
//! The continuum geodesic equations are integrated with an adaptive
//! Dormand-Prince 5(4) pair; values between steps come from cubic Hermite
//! interpolation of the stored states and derivatives. The conventional
//! equation of motion in physical time is integrated with the same scheme.

use crate::config::ProblemConfig;
use crate::diagnostics::{error_norms, DiagnosticsReport, ErrorNorms};
use crate::error::{Result, WorldlineError};
use crate::sbp::Order;
use crate::solver::{continuation_report, solve_report, Solution, SolveOptions};
use rayon::prelude::*;
use serde::Serialize;

#[rustfmt::skip]
mod tableau {
    pub const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    pub const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    /// fifth-order weights minus embedded fourth-order weights
    pub const E: [f64; 7] = [
        71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
        -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0,
    ];
}

/// Accepted steps of an adaptive integration: node times, states, derivatives.
#[derive(Debug, Clone)]
struct Track<const N: usize> {
    s: Vec<f64>,
    y: Vec<[f64; N]>,
    dy: Vec<[f64; N]>,
}

fn check_tol(tol: f64) -> Result<()> {
    if (1e-14..=1e-6).contains(&tol) {
        Ok(())
    } else {
        Err(WorldlineError::InvalidConfig(format!(
            "oracle tolerance must lie in [1e-14, 1e-6], got {tol}"
        )))
    }
}

/// Integrates `y' = f(s, y)` from `s0` to `s1` with Dormand-Prince 5(4).
/// `guard` is called on every accepted state and may abort the run.
fn dopri5<const N: usize, F, G>(
    f: F,
    s0: f64,
    y0: [f64; N],
    s1: f64,
    tol: f64,
    h_max: f64,
    guard: G,
) -> Result<Track<N>>
where
    F: Fn(f64, &[f64; N]) -> Result<[f64; N]>,
    G: Fn(f64, &[f64; N]) -> Result<()>,
{
    use tableau::{A, C, E};
    const MAX_STEPS: usize = 10_000_000;
    let span = s1 - s0;
    let mut s = s0;
    let mut y = y0;
    let mut k0 = f(s, &y)?;
    let mut track = Track {
        s: vec![s],
        y: vec![y],
        dy: vec![k0],
    };
    let mut h = (span * 1e-3).min(h_max);
    let mut steps = 0;
    while s < s1 {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(WorldlineError::StepFailure {
                at: s,
                reason: "step budget exhausted".into(),
            });
        }
        let last = s + h >= s1 - 1e-14 * span.abs().max(1.0);
        if last {
            h = s1 - s;
        }
        let mut k = [[0.0; N]; 7];
        k[0] = k0;
        let mut stage_ok = true;
        for i in 1..7 {
            let mut yi = y;
            for (j, kj) in k.iter().enumerate().take(i) {
                let a = A[i][j];
                if a != 0.0 {
                    for d in 0..N {
                        yi[d] += h * a * kj[d];
                    }
                }
            }
            match f(s + C[i] * h, &yi) {
                Ok(v) => k[i] = v,
                Err(_) => {
                    stage_ok = false;
                    break;
                }
            }
        }
        let mut err = f64::INFINITY;
        let mut y_new = y;
        if stage_ok {
            // the last stage is evaluated at the fifth-order solution
            for d in 0..N {
                y_new[d] = y[d] + h * (0..6).map(|j| A[6][j] * k[j][d]).sum::<f64>();
            }
            let mut acc = 0.0;
            for d in 0..N {
                let e = h * (0..7).map(|j| E[j] * k[j][d]).sum::<f64>();
                let sc = tol + tol * y[d].abs().max(y_new[d].abs());
                acc += (e / sc) * (e / sc);
            }
            err = (acc / N as f64).sqrt();
        }
        if err.is_finite() && err <= 1.0 {
            s = if last { s1 } else { s + h };
            y = y_new;
            k0 = k[6];
            guard(s, &y)?;
            track.s.push(s);
            track.y.push(y);
            track.dy.push(k0);
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(h_max);
        } else {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
            if h.abs() < 1e-14 * s.abs().max(span.abs()) {
                return Err(WorldlineError::StiffnessSuspected { at: s });
            }
        }
    }
    Ok(track)
}

fn hermite(s0: f64, s1: f64, y0: f64, y1: f64, d0: f64, d1: f64, s: f64) -> f64 {
    let h = s1 - s0;
    let u = (s - s0) / h;
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * y0
        + (u3 - 2.0 * u2 + u) * h * d0
        + (-2.0 * u3 + 3.0 * u2) * y1
        + (u3 - u2) * h * d1
}

impl<const N: usize> Track<N> {
    fn eval(&self, s: f64) -> [f64; N] {
        let last = self.s.len() - 1;
        let j = self.s.partition_point(|&v| v < s);
        if j <= last && self.s[j] == s {
            return self.y[j];
        }
        let j = j.clamp(1, last);
        let mut out = [0.0; N];
        for (d, o) in out.iter_mut().enumerate() {
            *o = hermite(
                self.s[j - 1],
                self.s[j],
                self.y[j - 1][d],
                self.y[j][d],
                self.dy[j - 1][d],
                self.dy[j][d],
                s,
            );
        }
        out
    }
}

/// Continuum geodesic `(t, tdot, x, xdot)` as a function of gamma.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub gamma_samples: Vec<f64>,
    pub t_samples: Vec<f64>,
    pub x_samples: Vec<f64>,
    pub tdot_samples: Vec<f64>,
    pub xdot_samples: Vec<f64>,
    track: Track<4>,
}

impl ReferenceTrajectory {
    /// `(t, tdot, x, xdot)` at `gamma` by cubic Hermite interpolation.
    pub fn eval(&self, gamma: f64) -> [f64; 4] {
        self.track.eval(gamma)
    }

    /// `(t, x)` on the given gamma nodes.
    pub fn sample(&self, grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
        grid.iter().map(|&g| {
            let y = self.eval(g);
            (y[0], y[2])
        }).unzip()
    }

    /// `g00(x) tdot` along the stored nodes.
    pub fn charge_profile(&self, cfg: &ProblemConfig) -> Vec<f64> {
        self.tdot_samples.iter().zip(&self.x_samples).map(|(td, x)| cfg.g00(*x) * td).collect()
    }

    pub fn len(&self) -> usize {
        self.gamma_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma_samples.is_empty()
    }
}

/// Largest accepted step as a fraction of the integration interval; keeps
/// the Hermite interpolant well below the tolerances being measured.
const STEP_FRACTION: f64 = 1.0 / 400.0;

pub fn solve_geodesic_ode(cfg: &ProblemConfig, tol: f64) -> Result<ReferenceTrajectory> {
    cfg.validate()?;
    check_tol(tol)?;
    let rhs = |s: f64, y: &[f64; 4]| -> Result<[f64; 4]> {
        let g = cfg.g00(y[2]);
        if g.is_nan() || g <= 0.0 {
            return Err(WorldlineError::StepFailure {
                at: s,
                reason: format!("g00 = {g} is not positive"),
            });
        }
        let dg = cfg.dg00(y[2]);
        Ok([y[1], -dg * y[3] / g * y[1], y[3], -0.5 * dg * y[1] * y[1]])
    };
    let span = cfg.gamma_f - cfg.gamma_i;
    let track = dopri5(
        rhs,
        cfg.gamma_i,
        [cfg.t_i, cfg.tdot_i, cfg.x_i, cfg.xdot_i],
        cfg.gamma_f,
        tol,
        span * STEP_FRACTION,
        |_, _| Ok(()),
    )?;
    Ok(ReferenceTrajectory {
        gamma_samples: track.s.clone(),
        t_samples: track.y.iter().map(|y| y[0]).collect(),
        tdot_samples: track.y.iter().map(|y| y[1]).collect(),
        x_samples: track.y.iter().map(|y| y[2]).collect(),
        xdot_samples: track.y.iter().map(|y| y[3]).collect(),
        track,
    })
}

/// `x(t)` in physical time.
#[derive(Debug, Clone)]
pub struct PhysicalTrajectory {
    pub t_samples: Vec<f64>,
    pub x_samples: Vec<f64>,
    pub v_samples: Vec<f64>,
    track: Track<2>,
}

impl PhysicalTrajectory {
    /// `(x, dx/dt)` at physical time `t`.
    pub fn eval(&self, t: f64) -> [f64; 2] {
        self.track.eval(t)
    }
}

fn solve_time_eom<F>(cfg: &ProblemConfig, tol: f64, t_final: f64, accel: F) -> Result<PhysicalTrajectory>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    cfg.validate()?;
    check_tol(tol)?;
    if t_final.is_nan() || t_final <= cfg.t_i {
        return Err(WorldlineError::InvalidConfig(format!(
            "final time {t_final} must exceed t_i = {}",
            cfg.t_i
        )));
    }
    let c = cfg.c;
    let track = dopri5(
        |_t, y: &[f64; 2]| Ok([y[1], accel(y[0], y[1])?]),
        cfg.t_i,
        [cfg.x_i, cfg.v_i()],
        t_final,
        tol,
        (t_final - cfg.t_i) * STEP_FRACTION,
        |t, y| {
            if y[1].abs() >= c * (1.0 - tol) {
                Err(WorldlineError::SuperluminalVelocity { at: t })
            } else {
                Ok(())
            }
        },
    )?;
    Ok(PhysicalTrajectory {
        t_samples: track.s.clone(),
        x_samples: track.y.iter().map(|y| y[0]).collect(),
        v_samples: track.y.iter().map(|y| y[1]).collect(),
        track,
    })
}

/// Conventional relativistic equation of motion
/// `x'' = -V'(x)/m (1 - x'^2/c^2)^(3/2)` from `t_i` to `t_final`.
pub fn solve_physical_eom(cfg: &ProblemConfig, tol: f64, t_final: f64) -> Result<PhysicalTrajectory> {
    let c2 = cfg.c * cfg.c;
    solve_time_eom(cfg, tol, t_final, |x, v| {
        let lorentz = 1.0 - v * v / c2;
        if lorentz <= 0.0 {
            return Err(WorldlineError::SuperluminalVelocity { at: f64::NAN });
        }
        Ok(-cfg.potential.dv(x) / cfg.m * lorentz.powf(1.5))
    })
}

/// Physical-time form of the geodesic equations,
/// `x'' = -V'(x)/m (1 - 2 x'^2 / g00(x))`.
pub fn solve_geodesic_time_eom(cfg: &ProblemConfig, tol: f64, t_final: f64) -> Result<PhysicalTrajectory> {
    solve_time_eom(cfg, tol, t_final, |x, v| {
        Ok(-cfg.potential.dv(x) / cfg.m * (1.0 - 2.0 * v * v / cfg.g00(x)))
    })
}

/// L2 distance in physical time between a geodesic reparametrized by its own
/// `t(gamma)` and a trajectory `x(t)`, by the trapezoidal rule over the
/// geodesic's nodes.
pub fn l2_against_geodesic(geo: &ReferenceTrajectory, phys: &PhysicalTrajectory) -> f64 {
    let d: Vec<f64> = geo
        .t_samples
        .iter()
        .zip(&geo.x_samples)
        .map(|(&t, &x)| x - phys.eval(t)[0])
        .collect();
    let mut acc = 0.0;
    for k in 1..d.len() {
        let dt = geo.t_samples[k] - geo.t_samples[k - 1];
        acc += 0.5 * dt * (d[k] * d[k] + d[k - 1] * d[k - 1]);
    }
    acc.sqrt()
}

/// Cross-check of the two oracles: geodesic solution versus the
/// relativistic equation of motion over the geodesic's time span.
pub fn oracle_cross_l2(cfg: &ProblemConfig, tol: f64) -> Result<f64> {
    let geo = solve_geodesic_ode(cfg, tol)?;
    let t_end = *geo.t_samples.last().unwrap_or(&cfg.t_i);
    let phys = solve_physical_eom(cfg, tol, t_end)?;
    Ok(l2_against_geodesic(&geo, &phys))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n_gamma: usize,
    pub dgamma: f64,
    pub tdot_i: f64,
    pub xdot_i: f64,
    pub eps_final_x: f64,
    pub eps_final_t: f64,
    pub eps_l2_x: f64,
    pub eps_l2_t: f64,
    pub t_final: f64,
    pub delta_e_final: f64,
    pub max_interior_delta_e: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub beta: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFits {
    pub beta_final_x: ExponentFit,
    pub beta_final_t: ExponentFit,
    pub beta_l2_x: ExponentFit,
    pub beta_l2_t: ExponentFit,
    pub min_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub order: Order,
    pub rows: Vec<ConvergenceRow>,
}

/// Least-squares fit of `log eps = beta log dgamma + c`. Two points give the
/// secant slope with zero residual.
pub fn fit_exponent(dgamma: &[f64], eps: &[f64]) -> Result<ExponentFit> {
    if dgamma.len() != eps.len() {
        return Err(WorldlineError::DimensionMismatch {
            expected: dgamma.len(),
            got: eps.len(),
        });
    }
    if dgamma.len() < 2 {
        return Err(WorldlineError::Fit(format!(
            "need at least 2 points, got {}",
            dgamma.len()
        )));
    }
    if dgamma.iter().chain(eps).any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(WorldlineError::Fit("all values must be positive and finite".into()));
    }
    let lx: Vec<f64> = dgamma.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = eps.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(WorldlineError::Fit("grid spacings must differ".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    let residual = (lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - beta * x - intercept).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(ExponentFit {
        beta,
        intercept,
        residual,
        points: lx.len(),
    })
}

impl ConvergenceTable {
    /// Fits every error measure over converged rows with `n_gamma >= min_n`.
    pub fn fit(&self, min_n: usize) -> Result<ExponentFits> {
        let rows: Vec<&ConvergenceRow> =
            self.rows.iter().filter(|r| r.converged && r.n_gamma >= min_n).collect();
        let dg: Vec<f64> = rows.iter().map(|r| r.dgamma).collect();
        let col = |f: fn(&ConvergenceRow) -> f64| -> Vec<f64> { rows.iter().map(|r| f(r)).collect() };
        Ok(ExponentFits {
            beta_final_x: fit_exponent(&dg, &col(|r| r.eps_final_x))?,
            beta_final_t: fit_exponent(&dg, &col(|r| r.eps_final_t))?,
            beta_l2_x: fit_exponent(&dg, &col(|r| r.eps_l2_x))?,
            beta_l2_t: fit_exponent(&dg, &col(|r| r.eps_l2_t))?,
            min_n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyMode {
    /// Sequential; each grid starts from the previous solution.
    WarmStart,
    /// Independent cold starts, run on the rayon pool.
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub solve: SolveOptions,
    pub oracle_tol: f64,
    pub mode: StudyMode,
    /// Per-row `tdot_i`; `xdot_i` is scaled along to keep `dx/dt` fixed.
    pub tdot_list: Option<Vec<f64>>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            solve: SolveOptions::default(),
            oracle_tol: 1e-12,
            mode: StudyMode::WarmStart,
            tdot_list: None,
        }
    }
}

fn row_config(template: &ProblemConfig, n: usize, order: Order, tdot: Option<f64>) -> ProblemConfig {
    let mut cfg = template.clone().with_n(n).with_order(order);
    if let Some(td) = tdot {
        cfg.xdot_i = template.v_i() * td;
        cfg.tdot_i = td;
    }
    cfg
}

fn make_row(cfg: &ProblemConfig, sol: &Solution, oracle_tol: f64) -> Result<ConvergenceRow> {
    let oracle = solve_geodesic_ode(cfg, oracle_tol)?;
    let (t_ref, x_ref) = oracle.sample(&cfg.gamma_grid());
    let h = cfg.operator()?.h_diag();
    let s = &sol.state;
    let ErrorNorms {
        eps_final_x,
        eps_final_t,
        eps_l2_x,
        eps_l2_t,
    } = error_norms(&s.t1, &s.x1, &t_ref, &x_ref, h.as_slice())?;
    let report = DiagnosticsReport::from_state(s, cfg)?;
    Ok(ConvergenceRow {
        n_gamma: cfg.n_gamma,
        dgamma: cfg.dgamma(),
        tdot_i: cfg.tdot_i,
        xdot_i: cfg.xdot_i,
        eps_final_x,
        eps_final_t,
        eps_l2_x,
        eps_l2_t,
        t_final: *s.t1.last().unwrap_or(&f64::NAN),
        delta_e_final: report.endpoint_delta_e(),
        max_interior_delta_e: report.max_interior_delta_e(),
        grad_norm: sol.grad_norm,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Solves `template` on every grid of `n_list` and measures the error
/// against the geodesic oracle sampled on each solver grid.
pub fn convergence_study(
    template: &ProblemConfig,
    n_list: &[usize],
    order: Order,
    opts: &StudyOptions,
) -> Result<ConvergenceTable> {
    if n_list.len() < 3 {
        return Err(WorldlineError::Fit(format!(
            "convergence study needs at least 3 grids, got {}",
            n_list.len()
        )));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(WorldlineError::InvalidConfig("n_list must be strictly ascending".into()));
    }
    if let Some(td) = &opts.tdot_list {
        if td.len() != n_list.len() {
            return Err(WorldlineError::DimensionMismatch {
                expected: n_list.len(),
                got: td.len(),
            });
        }
    }
    let cfgs: Vec<ProblemConfig> = n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| row_config(template, n, order, opts.tdot_list.as_ref().map(|v| v[k])))
        .collect();
    for cfg in &cfgs {
        cfg.validate()?;
    }
    let rows = match opts.mode {
        StudyMode::Parallel => cfgs
            .par_iter()
            .map(|cfg| {
                let sol = solve_report(cfg, &opts.solve)?;
                make_row(cfg, &sol, opts.oracle_tol)
            })
            .collect::<Result<Vec<_>>>()?,
        StudyMode::WarmStart => {
            let mut rows = Vec::with_capacity(cfgs.len());
            let mut prev: Option<Solution> = None;
            for cfg in &cfgs {
                let sol = match (&prev, &opts.tdot_list) {
                    (Some(p), None) if p.converged => continuation_report(cfg, &opts.solve, p)?,
                    _ => solve_report(cfg, &opts.solve)?,
                };
                rows.push(make_row(cfg, &sol, opts.oracle_tol)?);
                prev = Some(sol);
            }
            rows
        }
    };
    Ok(ConvergenceTable { order, rows })
}
