//! Critical-point search for the discrete action.
//!
//! The stationarity system `grad E = 0` is solved by damped Newton: each step
//! solves `(Hess + mu I) dz = -grad E` with a symmetric-indefinite
//! factorization and backtracks on the merit `|grad E|^2`. When the direct
//! iteration stalls, a continuation in the potential strength is tried: the
//! free problem is solved exactly and the potential is switched on gradually.

use crate::action::{ActionModel, StateVector};
use crate::config::ProblemConfig;
use crate::error::{Result, WorldlineError};
use crate::linalg::BunchKaufman;
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub min_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            min_step: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Absolute threshold on `|grad E|_2`; `None` means `1e-12 (1 + |z|_inf)`.
    pub grad_tol: Option<f64>,
    pub max_iter: usize,
    pub lm_damping_init: f64,
    pub line_search: LineSearch,
    /// Fall back to potential-strength continuation if direct Newton fails.
    pub homotopy: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            grad_tol: None,
            max_iter: 200,
            lm_damping_init: 1e-8,
            line_search: LineSearch::default(),
            homotopy: true,
        }
    }
}

impl SolveOptions {
    pub fn tolerance_for(&self, z: &[f64]) -> f64 {
        self.grad_tol
            .unwrap_or_else(|| 1e-12 * (1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
    }

    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let ok = self.grad_tol.is_none_or(|t| t > 0.0)
            && self.max_iter > 0
            && self.lm_damping_init > 0.0
            && ls.shrink > 0.0
            && ls.shrink < 1.0
            && ls.sufficient_decrease > 0.0
            && ls.sufficient_decrease < 0.5
            && ls.min_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(WorldlineError::InvalidConfig(format!("invalid solver options: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub state: StateVector,
    pub grad_norm: f64,
    pub grad_tol: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the potential-strength continuation was needed.
    pub continuation: bool,
    /// `|grad E|^2` after every accepted step, starting with the initial value.
    pub merit_history: Vec<f64>,
}

const MU_MAX: f64 = 1e12;
const CONTINUATION_STAGE_ITER: usize = 30;
const CONTINUATION_MIN_STEP: f64 = 1e-4;

struct Outcome {
    z: Vec<f64>,
    grad_norm: f64,
    grad_tol: f64,
    iterations: usize,
    converged: bool,
    singular: bool,
    merit: Vec<f64>,
}

fn gradient_packed(model: &ActionModel, z: &[f64]) -> Result<Vec<f64>> {
    model.gradient(&StateVector::unpack(model.n(), z)?)
}

fn newton(model: &ActionModel, z0: Vec<f64>, opts: &SolveOptions, max_iter: usize) -> Result<Outcome> {
    let n = model.n();
    let ls = &opts.line_search;
    let mut z = z0;
    let mut g = gradient_packed(model, &z)?;
    let mut merit = g.iter().map(|v| v * v).sum::<f64>();
    let mut history = vec![merit];
    let mut mu = opts.lm_damping_init;
    let mut iterations = 0;
    let mut singular = false;

    loop {
        let tol = opts.tolerance_for(&z);
        let gn = merit.sqrt();
        if !gn.is_finite() {
            break;
        }
        if gn <= tol {
            return Ok(Outcome {
                z,
                grad_norm: gn,
                grad_tol: tol,
                iterations,
                converged: true,
                singular: false,
                merit: history,
            });
        }
        if iterations >= max_iter {
            break;
        }
        let hess = model.hessian(&StateVector::unpack(n, &z)?)?;
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut accepted = false;
        while mu <= MU_MAX {
            let mut damped: DMatrix<f64> = hess.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += mu;
            }
            let dz = match BunchKaufman::factor(&damped).and_then(|f| f.solve(&rhs)) {
                Ok(dz) => {
                    singular = false;
                    dz
                }
                Err(_) => {
                    singular = true;
                    mu *= 10.0;
                    continue;
                }
            };
            let mut step = 1.0;
            while step >= ls.min_step {
                let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + step * b).collect();
                if let Ok(gt) = gradient_packed(model, &trial) {
                    let mt = gt.iter().map(|v| v * v).sum::<f64>();
                    if mt.is_finite() && mt <= (1.0 - 2.0 * ls.sufficient_decrease * step) * merit {
                        z = trial;
                        g = gt;
                        merit = mt;
                        accepted = true;
                        break;
                    }
                }
                step *= ls.shrink;
            }
            if accepted {
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
        history.push(merit);
        iterations += 1;
        mu *= 0.1;
    }
    let tol = opts.tolerance_for(&z);
    Ok(Outcome {
        grad_norm: merit.sqrt(),
        grad_tol: tol,
        z,
        iterations,
        converged: false,
        singular,
        merit: history,
    })
}

/// Straight-line guess: `t = t_i + tdot_i (gamma - gamma_i)`, same for `x`,
/// identical branches, zero multipliers.
pub fn initial_guess(cfg: &ProblemConfig) -> Result<StateVector> {
    cfg.validate()?;
    let g = cfg.gamma_grid();
    let t: Vec<f64> = g.iter().map(|v| cfg.t_i + cfg.tdot_i * (v - cfg.gamma_i)).collect();
    let x: Vec<f64> = g.iter().map(|v| cfg.x_i + cfg.xdot_i * (v - cfg.gamma_i)).collect();
    Ok(StateVector {
        t1: t.clone(),
        t2: t,
        x1: x.clone(),
        x2: x,
        lambda: [0.0; 8],
    })
}

fn finish(model: &ActionModel, out: Outcome, continuation: bool) -> Result<Solution> {
    Ok(Solution {
        state: StateVector::unpack(model.n(), &out.z)?,
        grad_norm: out.grad_norm,
        grad_tol: out.grad_tol,
        iterations: out.iterations,
        converged: out.converged,
        continuation,
        merit_history: out.merit,
    })
}

fn continuation(model: &mut ActionModel, opts: &SolveOptions, start: &StateVector) -> Result<(Outcome, usize)> {
    let cfg = model.cfg.clone();
    let mut z = start.pack();
    // the free problem is solved exactly by the straight line once the end
    // multipliers carry the boundary flux
    let n = model.n();
    z[4 * n + 4] = -cfg.c * cfg.c * cfg.tdot_i;
    z[4 * n + 5] = cfg.xdot_i;
    let mut theta = 0.0;
    let mut dtheta = 0.25;
    let mut total = 0;
    model.strength = 0.0;
    let out = newton(model, z.clone(), opts, CONTINUATION_STAGE_ITER)?;
    total += out.iterations;
    if out.converged {
        z = out.z;
    }
    while theta < 1.0 && dtheta >= CONTINUATION_MIN_STEP {
        let next = (theta + dtheta).min(1.0);
        model.strength = next;
        let out = newton(model, z.clone(), opts, CONTINUATION_STAGE_ITER)?;
        total += out.iterations;
        if out.converged {
            theta = next;
            z = out.z;
            dtheta *= 1.5;
        } else {
            dtheta *= 0.5;
        }
    }
    model.strength = 1.0;
    let out = newton(model, z, opts, opts.max_iter)?;
    total += out.iterations;
    Ok((out, total))
}

/// Runs the solver and reports the final state whether or not it converged.
pub fn solve_report(cfg: &ProblemConfig, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    let mut model = ActionModel::new(cfg)?;
    let guess = initial_guess(cfg)?;
    let direct = newton(&model, guess.pack(), opts, opts.max_iter)?;
    if direct.converged || !opts.homotopy {
        if direct.singular && !direct.converged {
            return Err(WorldlineError::SingularSystem);
        }
        return finish(&model, direct, false);
    }
    let direct_iters = direct.iterations;
    let (out, iters) = continuation(&mut model, opts, &guess)?;
    let (best, used) = if out.converged || out.grad_norm < direct.grad_norm {
        let total = iters + direct_iters;
        (Outcome { iterations: total, ..out }, true)
    } else {
        (direct, false)
    };
    if best.singular && !best.converged {
        return Err(WorldlineError::SingularSystem);
    }
    finish(&model, best, used)
}

fn into_result(sol: Solution) -> Result<Solution> {
    if sol.converged {
        Ok(sol)
    } else {
        Err(WorldlineError::NonConvergence {
            iterations: sol.iterations,
            grad_norm: sol.grad_norm,
        })
    }
}

/// Finds the critical point; a run that does not reach `grad_tol` is an error.
pub fn solve(cfg: &ProblemConfig, opts: &SolveOptions) -> Result<Solution> {
    into_result(solve_report(cfg, opts)?)
}

fn interpolate(src_grid: &[f64], src: &[f64], dst_grid: &[f64]) -> Vec<f64> {
    let last = src_grid.len() - 1;
    dst_grid
        .iter()
        .map(|&g| {
            let j = src_grid.partition_point(|&s| s <= g).clamp(1, last);
            let (g0, g1) = (src_grid[j - 1], src_grid[j]);
            let w = (g - g0) / (g1 - g0);
            src[j - 1] + w * (src[j] - src[j - 1])
        })
        .collect()
}

/// Transfers `from` onto the grid of `cfg` by linear interpolation in gamma.
pub fn transfer_state(from: &StateVector, from_grid: &[f64], cfg: &ProblemConfig) -> Result<StateVector> {
    if from_grid.len() != from.n() || from.n() < 2 {
        return Err(WorldlineError::DimensionMismatch {
            expected: from.n(),
            got: from_grid.len(),
        });
    }
    let dst = cfg.gamma_grid();
    Ok(StateVector {
        t1: interpolate(from_grid, &from.t1, &dst),
        t2: interpolate(from_grid, &from.t2, &dst),
        x1: interpolate(from_grid, &from.x1, &dst),
        x2: interpolate(from_grid, &from.x2, &dst),
        lambda: from.lambda,
    })
}

/// Warm-started solve. The source grid is assumed to span the same gamma
/// interval as `cfg` with uniform spacing.
pub fn continuation_solve(cfg: &ProblemConfig, opts: &SolveOptions, from: &Solution) -> Result<Solution> {
    into_result(continuation_report(cfg, opts, from)?)
}

pub fn continuation_report(cfg: &ProblemConfig, opts: &SolveOptions, from: &Solution) -> Result<Solution> {
    opts.validate()?;
    let model = ActionModel::new(cfg)?;
    let src_n = from.state.n();
    let src_cfg = ProblemConfig {
        n_gamma: src_n,
        ..cfg.clone()
    };
    let guess = transfer_state(&from.state, &src_cfg.gamma_grid(), cfg)?;
    let out = newton(&model, guess.pack(), opts, opts.max_iter)?;
    if out.converged {
        return finish(&model, out, false);
    }
    solve_report(cfg, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::action_gradient;
    use crate::sbp::Order;

    fn norm2(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn guess_satisfies_constraints() {
        for cfg in [ProblemConfig::linear_example(), ProblemConfig::quartic_example().with_order(Order::Sbp42)] {
            let s = initial_guess(&cfg).unwrap();
            let m = ActionModel::new(&cfg).unwrap();
            assert!(m.constraints(&s).iter().all(|c| c.abs() < 1e-12));
        }
    }

    #[test]
    fn linear_guess_is_not_stationary() {
        let cfg = ProblemConfig::linear_example();
        let g = action_gradient(&initial_guess(&cfg).unwrap(), &cfg).unwrap();
        assert!(norm2(&g) > 1e-3);
    }

    #[test]
    fn free_solve_is_immediate() {
        for n in [8, 16, 33] {
            let cfg = ProblemConfig::free_example().with_n(n);
            let sol = solve(&cfg, &SolveOptions::default()).unwrap();
            assert!(sol.iterations <= 2);
            assert!(sol.grad_norm <= 1e-12);
            assert!(!sol.continuation);
        }
    }

    #[test]
    fn linear_solve_reaches_unit_time() {
        let sol = solve(&ProblemConfig::linear_example(), &SolveOptions::default()).unwrap();
        let t_end = *sol.state.t1.last().unwrap();
        assert!((t_end - 1.0).abs() < 0.01, "{t_end}");
        let (dt, dx) = sol.state.branch_gap();
        assert!(dt <= 1e-9 && dx <= 1e-9);
        assert!(sol.merit_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quartic_final_time() {
        let sol = solve(&ProblemConfig::quartic_example(), &SolveOptions::default()).unwrap();
        let t_end = *sol.state.t1.last().unwrap();
        assert!((t_end - 1.47).abs() <= 0.01, "{t_end}");
    }

    #[test]
    fn deterministic() {
        let cfg = ProblemConfig::quartic_example().with_n(20);
        let a = solve(&cfg, &SolveOptions::default()).unwrap();
        let b = solve(&cfg, &SolveOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warm_start_same_grid_is_immediate() {
        let cfg = ProblemConfig::linear_example();
        let sol = solve(&cfg, &SolveOptions::default()).unwrap();
        let again = continuation_solve(&cfg, &SolveOptions::default(), &sol).unwrap();
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn warm_start_refinement_saves_iterations() {
        let opts = SolveOptions::default();
        let coarse = solve(&ProblemConfig::quartic_example(), &opts).unwrap();
        let fine_cfg = ProblemConfig::quartic_example().with_n(64);
        let cold = solve(&fine_cfg, &opts).unwrap();
        let warm = continuation_solve(&fine_cfg, &opts, &coarse).unwrap();
        assert!(warm.iterations < cold.iterations, "{} vs {}", warm.iterations, cold.iterations);
    }

    #[test]
    fn warm_start_from_free_solution() {
        let opts = SolveOptions::default();
        let free = solve(&ProblemConfig::free_example(), &opts).unwrap();
        let sol = continuation_solve(&ProblemConfig::linear_example(), &opts, &free).unwrap();
        assert!(sol.converged);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let opts = SolveOptions {
            max_iter: 1,
            homotopy: false,
            ..SolveOptions::default()
        };
        let err = solve(&ProblemConfig::quartic_example(), &opts).unwrap_err();
        assert!(matches!(err, WorldlineError::NonConvergence { iterations: 1, .. }));
        let report = solve_report(&ProblemConfig::quartic_example(), &opts).unwrap();
        assert!(!report.converged);
    }

    #[test]
    fn rejects_bad_options() {
        let opts = SolveOptions {
            max_iter: 0,
            ..SolveOptions::default()
        };
        assert!(matches!(
            solve(&ProblemConfig::linear_example(), &opts),
            Err(WorldlineError::InvalidConfig(_))
        ));
        let mut cfg = ProblemConfig::linear_example();
        cfg.tdot_i = -1.0;
        assert!(matches!(solve(&cfg, &SolveOptions::default()), Err(WorldlineError::InvalidConfig(_))));
    }

    #[test]
    fn interpolation_is_exact_for_lines() {
        let src = [0.0, 0.5, 1.0];
        let out = interpolate(&src, &[1.0, 2.0, 3.0], &[0.0, 0.25, 0.8, 1.0]);
        assert_eq!(out, vec![1.0, 1.5, 2.6, 3.0]);
    }
}
