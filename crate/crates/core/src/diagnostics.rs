//! Noether charges, charge deviation, discrete geodesic residuals, the
//! `H_BVP` stability functional and error norms. Everything here uses the
//! classical operator `D` and acts on a single (physical-limit) branch.

use crate::action::StateVector;
use crate::config::{metric_g00, ProblemConfig};
use crate::error::{Result, WorldlineError};
use crate::sbp::SbpOperator;
use serde::Serialize;

fn check(t: &[f64], x: &[f64], cfg: &ProblemConfig) -> Result<SbpOperator> {
    for v in [t, x] {
        if v.len() != cfg.n_gamma {
            return Err(WorldlineError::DimensionMismatch {
                expected: cfg.n_gamma,
                got: v.len(),
            });
        }
    }
    cfg.operator()
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u * v).collect()
}

/// `(D t) * g00(x)`
pub fn noether_charge_t(t: &[f64], x: &[f64], cfg: &ProblemConfig) -> Result<Vec<f64>> {
    let op = check(t, x, cfg)?;
    Ok(mul(&op.apply(t)?, &metric_g00(x, cfg)))
}

/// Continuum charge fixed by the initial data, `tdot_i g00(x_i)`.
pub fn charge_continuum(cfg: &ProblemConfig) -> f64 {
    cfg.tdot_i * cfg.g00(cfg.x_i)
}

pub fn charge_deviation(t: &[f64], x: &[f64], cfg: &ProblemConfig) -> Result<Vec<f64>> {
    let q0 = charge_continuum(cfg);
    Ok(noether_charge_t(t, x, cfg)?.into_iter().map(|q| q - q0).collect())
}

/// `(D(g00 Dt), DDx + g00'/2 (Dt)^2)`
pub fn geodesic_residuals(t: &[f64], x: &[f64], cfg: &ProblemConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let op = check(t, x, cfg)?;
    let dt = op.apply(t)?;
    let dx = op.apply(x)?;
    let gt = op.apply(&mul(&metric_g00(x, cfg), &dt))?;
    let ddx = op.apply(&dx)?;
    let gx = (0..cfg.n_gamma)
        .map(|k| ddx[k] + 0.5 * cfg.dg00(x[k]) * dt[k] * dt[k])
        .collect();
    Ok((gt, gx))
}

/// Space-translation and boost charges of the free particle:
/// `Q_x = -(D x)` and `Q_eta = c^2 x (D t) - t (D x)`.
pub fn free_case_charges(t: &[f64], x: &[f64], cfg: &ProblemConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if !cfg.potential.is_free() {
        return Err(WorldlineError::NotFreePotential(cfg.potential.label().to_string()));
    }
    let op = check(t, x, cfg)?;
    let dt = op.apply(t)?;
    let dx = op.apply(x)?;
    let c2 = cfg.c * cfg.c;
    let qx = dx.iter().map(|v| -v).collect();
    let qeta = (0..cfg.n_gamma).map(|k| c2 * x[k] * dt[k] - t[k] * dx[k]).collect();
    Ok((qx, qeta))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HBvp {
    pub profile: Vec<f64>,
    /// `1^T H profile`
    pub total: f64,
    /// `g00(x_i) tdot_i (t[N] - t[0])`
    pub bound: f64,
}

pub fn h_bvp_profile(t: &[f64], x: &[f64], cfg: &ProblemConfig) -> Result<HBvp> {
    let op = check(t, x, cfg)?;
    let dt = op.apply(t)?;
    let dx = op.apply(x)?;
    let g = metric_g00(x, cfg);
    let profile: Vec<f64> = (0..cfg.n_gamma)
        .map(|k| 0.5 * (g[k] * dt[k] * dt[k] + dx[k] * dx[k]))
        .collect();
    let h = op.h_diag();
    let total = profile.iter().zip(h.iter()).map(|(p, w)| p * w).sum();
    let n = cfg.n_gamma;
    let bound = charge_continuum(cfg) * (t[n - 1] - t[0]);
    Ok(HBvp { profile, total, bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub eps_final_x: f64,
    pub eps_final_t: f64,
    pub eps_l2_x: f64,
    pub eps_l2_t: f64,
}

/// Endpoint and `H`-weighted L2 errors against a reference sampled on the
/// same grid. `h` is the quadrature diagonal.
pub fn error_norms(t: &[f64], x: &[f64], t_ref: &[f64], x_ref: &[f64], h: &[f64]) -> Result<ErrorNorms> {
    let n = h.len();
    for v in [t, x, t_ref, x_ref] {
        if v.len() != n {
            return Err(WorldlineError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    if n == 0 {
        return Err(WorldlineError::DimensionMismatch { expected: 1, got: 0 });
    }
    let l2 = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .zip(h)
            .map(|((u, v), w)| w * (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
    };
    Ok(ErrorNorms {
        eps_final_x: (x[n - 1] - x_ref[n - 1]).abs(),
        eps_final_t: (t[n - 1] - t_ref[n - 1]).abs(),
        eps_l2_x: l2(x, x_ref),
        eps_l2_t: l2(t, t_ref),
    })
}

/// Largest `|v_k|` over interior indices `1..=n-2`.
pub fn max_interior(v: &[f64]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    v[1..v.len() - 1].iter().fold(0.0, |m, a| m.max(a.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub gamma: Vec<f64>,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub time_mesh_velocity: Vec<f64>,
    pub q_t: Vec<f64>,
    pub delta_e: Vec<f64>,
    pub delta_g_t: Vec<f64>,
    pub delta_g_x: Vec<f64>,
    pub h_bvp: Vec<f64>,
    pub h_bvp_total: f64,
    pub h_bvp_bound: f64,
    pub q_x: Option<Vec<f64>>,
    pub q_boost: Option<Vec<f64>>,
    pub branch_gap_t: f64,
    pub branch_gap_x: f64,
    pub errors: Option<ErrorNorms>,
}

impl DiagnosticsReport {
    /// Evaluates every profile on the forward branch of `state`.
    pub fn from_state(state: &StateVector, cfg: &ProblemConfig) -> Result<Self> {
        let (t, x) = (&state.t1, &state.x1);
        let op = check(t, x, cfg)?;
        let q_t = noether_charge_t(t, x, cfg)?;
        let q0 = charge_continuum(cfg);
        let (delta_g_t, delta_g_x) = geodesic_residuals(t, x, cfg)?;
        let hb = h_bvp_profile(t, x, cfg)?;
        let (q_x, q_boost) = match free_case_charges(t, x, cfg) {
            Ok((a, b)) => (Some(a), Some(b)),
            Err(_) => (None, None),
        };
        let (branch_gap_t, branch_gap_x) = state.branch_gap();
        Ok(DiagnosticsReport {
            gamma: cfg.gamma_grid(),
            t: t.clone(),
            x: x.clone(),
            time_mesh_velocity: op.apply(t)?,
            delta_e: q_t.iter().map(|q| q - q0).collect(),
            q_t,
            delta_g_t,
            delta_g_x,
            h_bvp: hb.profile,
            h_bvp_total: hb.total,
            h_bvp_bound: hb.bound,
            q_x,
            q_boost,
            branch_gap_t,
            branch_gap_x,
            errors: None,
        })
    }

    pub fn with_errors(mut self, t_ref: &[f64], x_ref: &[f64], cfg: &ProblemConfig) -> Result<Self> {
        let h = cfg.operator()?.h_diag();
        self.errors = Some(error_norms(&self.t, &self.x, t_ref, x_ref, h.as_slice())?);
        Ok(self)
    }

    pub fn max_interior_delta_e(&self) -> f64 {
        max_interior(&self.delta_e)
    }

    pub fn endpoint_delta_e(&self) -> f64 {
        *self.delta_e.last().unwrap_or(&0.0)
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }
}
