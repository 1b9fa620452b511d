//! Discrete doubled-contour action, its gradient and Hessian.
//!
//! Unknowns are packed as `z = [t1, t2, x1, x2, lambda_1..8]`. Bulk terms use
//! the regularized operators (initial-value penalty absorbed), the eight
//! multiplier terms use the classical operator rows.

use crate::config::ProblemConfig;
use crate::error::{Result, WorldlineError};
use crate::sbp::{regularize, SbpOperator};
use nalgebra::{DMatrix, DVector};

pub const N_MULTIPLIERS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub lambda: [f64; N_MULTIPLIERS],
}

impl StateVector {
    pub fn n(&self) -> usize {
        self.t1.len()
    }

    pub fn len_packed(n: usize) -> usize {
        4 * n + N_MULTIPLIERS
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(Self::len_packed(self.n()));
        z.extend_from_slice(&self.t1);
        z.extend_from_slice(&self.t2);
        z.extend_from_slice(&self.x1);
        z.extend_from_slice(&self.x2);
        z.extend_from_slice(&self.lambda);
        z
    }

    pub fn unpack(n: usize, z: &[f64]) -> Result<Self> {
        if z.len() != Self::len_packed(n) {
            return Err(WorldlineError::DimensionMismatch {
                expected: Self::len_packed(n),
                got: z.len(),
            });
        }
        let mut lambda = [0.0; N_MULTIPLIERS];
        lambda.copy_from_slice(&z[4 * n..]);
        Ok(StateVector {
            t1: z[..n].to_vec(),
            t2: z[n..2 * n].to_vec(),
            x1: z[2 * n..3 * n].to_vec(),
            x2: z[3 * n..4 * n].to_vec(),
            lambda,
        })
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        for v in [&self.t1, &self.t2, &self.x1, &self.x2] {
            if v.len() != n {
                return Err(WorldlineError::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// Largest branch mismatch `max(|t1 - t2|, |x1 - x2|)`.
    pub fn branch_gap(&self) -> (f64, f64) {
        let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        (gap(&self.t1, &self.t2), gap(&self.x1, &self.x2))
    }
}

/// Precomputed operators for a configuration.
///
/// `strength` scales the potential inside `g00`; it is 1 for the physical
/// problem and is lowered only by the solver's continuation fallback.
#[derive(Debug, Clone)]
pub struct ActionModel {
    pub cfg: ProblemConfig,
    pub op: SbpOperator,
    /// `D - sigma0 H^-1 E_0`, shared by both coordinates.
    pub a: DMatrix<f64>,
    pub shift_t: f64,
    pub shift_x: f64,
    pub h: Vec<f64>,
    pub strength: f64,
}

struct Branch {
    w: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    dg: Vec<f64>,
    d2g: Vec<f64>,
}

impl ActionModel {
    pub fn new(cfg: &ProblemConfig) -> Result<Self> {
        cfg.validate()?;
        let op = cfg.operator()?;
        let rt = regularize(&op, cfg.t_i);
        let rx = regularize(&op, cfg.x_i);
        Ok(ActionModel {
            cfg: cfg.clone(),
            a: rt.linear_block(),
            shift_t: rt.shift(),
            shift_x: rx.shift(),
            h: op.h_diag().as_slice().to_vec(),
            op,
            strength: 1.0,
        })
    }

    pub fn n(&self) -> usize {
        self.op.n
    }

    pub fn dim(&self) -> usize {
        StateVector::len_packed(self.n())
    }

    fn g(&self, x: f64) -> f64 {
        let c = self.cfg.c;
        c * c + self.strength * 2.0 * self.cfg.potential.v(x) / self.cfg.m
    }

    fn dg(&self, x: f64) -> f64 {
        self.strength * self.cfg.dg00(x)
    }

    fn d2g(&self, x: f64) -> f64 {
        self.strength * self.cfg.d2g00(x)
    }

    fn reg_apply(&self, v: &[f64], shift: f64) -> Vec<f64> {
        let mut out = self.a.clone() * DVector::from_column_slice(v);
        out[0] += shift;
        out.as_slice().to_vec()
    }

    fn a_t_apply(&self, v: &[f64]) -> Vec<f64> {
        (self.a.transpose() * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    fn branch(&self, t: &[f64], x: &[f64]) -> Branch {
        Branch {
            w: self.reg_apply(t, self.shift_t),
            u: self.reg_apply(x, self.shift_x),
            g: x.iter().map(|&v| self.g(v)).collect(),
            dg: x.iter().map(|&v| self.dg(v)).collect(),
            d2g: x.iter().map(|&v| self.d2g(v)).collect(),
        }
    }

    fn bulk(&self, b: &Branch) -> f64 {
        0.5 * (0..self.n())
            .map(|k| self.h[k] * (b.g[k] * b.w[k] * b.w[k] - b.u[k] * b.u[k]))
            .sum::<f64>()
    }

    /// The eight constraint residuals in multiplier order.
    pub fn constraints(&self, s: &StateVector) -> [f64; N_MULTIPLIERS] {
        let cfg = &self.cfg;
        let n = self.n();
        let op = &self.op;
        [
            s.t1[0] - cfg.t_i,
            op.first_row_dot(&s.t1) - cfg.tdot_i,
            s.x1[0] - cfg.x_i,
            op.first_row_dot(&s.x1) - cfg.xdot_i,
            s.t1[n - 1] - s.t2[n - 1],
            s.x1[n - 1] - s.x2[n - 1],
            op.last_row_dot(&s.t1) - op.last_row_dot(&s.t2),
            op.last_row_dot(&s.x1) - op.last_row_dot(&s.x2),
        ]
    }

    /// Rows of the constraint Jacobian, each of length `4n`.
    pub fn constraint_jacobian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut j = DMatrix::zeros(N_MULTIPLIERS, 4 * n);
        let (t1, t2, x1, x2) = (0, n, 2 * n, 3 * n);
        let first = self.op.d.row(0);
        let last = self.op.d.row(n - 1);
        j[(0, t1)] = 1.0;
        j[(2, x1)] = 1.0;
        j[(4, t1 + n - 1)] = 1.0;
        j[(4, t2 + n - 1)] = -1.0;
        j[(5, x1 + n - 1)] = 1.0;
        j[(5, x2 + n - 1)] = -1.0;
        for k in 0..n {
            j[(1, t1 + k)] = first[k];
            j[(3, x1 + k)] = first[k];
            j[(6, t1 + k)] = last[k];
            j[(6, t2 + k)] = -last[k];
            j[(7, x1 + k)] = last[k];
            j[(7, x2 + k)] = -last[k];
        }
        j
    }

    pub fn value(&self, s: &StateVector) -> Result<f64> {
        s.check_len(self.n())?;
        Ok(self.bulk_difference(s) + self.multiplier_term(s))
    }

    /// Forward minus backward bulk action, without multiplier terms.
    pub fn bulk_difference(&self, s: &StateVector) -> f64 {
        let b1 = self.branch(&s.t1, &s.x1);
        let b2 = self.branch(&s.t2, &s.x2);
        self.bulk(&b1) - self.bulk(&b2)
    }

    fn multiplier_term(&self, s: &StateVector) -> f64 {
        self.constraints(s).iter().zip(&s.lambda).map(|(c, l)| c * l).sum()
    }

    fn branch_gradient(&self, b: &Branch) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let hgw: Vec<f64> = (0..n).map(|k| self.h[k] * b.g[k] * b.w[k]).collect();
        let hu: Vec<f64> = (0..n).map(|k| self.h[k] * b.u[k]).collect();
        let gt = self.a_t_apply(&hgw);
        let mut gx = self.a_t_apply(&hu);
        for (k, v) in gx.iter_mut().enumerate() {
            *v = -*v + 0.5 * self.h[k] * b.dg[k] * b.w[k] * b.w[k];
        }
        (gt, gx)
    }

    pub fn gradient(&self, s: &StateVector) -> Result<Vec<f64>> {
        let n = self.n();
        s.check_len(n)?;
        let (gt1, gx1) = self.branch_gradient(&self.branch(&s.t1, &s.x1));
        let (gt2, gx2) = self.branch_gradient(&self.branch(&s.t2, &s.x2));
        let mut grad = Vec::with_capacity(self.dim());
        grad.extend_from_slice(&gt1);
        grad.extend(gt2.iter().map(|v| -v));
        grad.extend_from_slice(&gx1);
        grad.extend(gx2.iter().map(|v| -v));
        let jac = self.constraint_jacobian();
        let lam = DVector::from_column_slice(&s.lambda);
        let jt_l = jac.transpose() * lam;
        for (g, v) in grad.iter_mut().zip(jt_l.iter()) {
            *g += v;
        }
        grad.extend_from_slice(&self.constraints(s));
        Ok(grad)
    }

    fn branch_hessian(&self, b: &Branch) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.n();
        let scale_rows = |diag: &dyn Fn(usize) -> f64| {
            let mut m = self.a.clone();
            for k in 0..n {
                let s = diag(k);
                m.row_mut(k).scale_mut(s);
            }
            m
        };
        let at = self.a.transpose();
        let tt = &at * scale_rows(&|k| self.h[k] * b.g[k]);
        let mut tx = at.clone();
        for k in 0..n {
            tx.column_mut(k).scale_mut(self.h[k] * b.dg[k] * b.w[k]);
        }
        let mut xx = -(&at * scale_rows(&|k| self.h[k]));
        for k in 0..n {
            xx[(k, k)] += 0.5 * self.h[k] * b.d2g[k] * b.w[k] * b.w[k];
        }
        (tt, tx, xx)
    }

    pub fn hessian(&self, s: &StateVector) -> Result<DMatrix<f64>> {
        let n = self.n();
        s.check_len(n)?;
        let dim = self.dim();
        let mut hess = DMatrix::zeros(dim, dim);
        for (branch, sign, t_off, x_off) in [
            (self.branch(&s.t1, &s.x1), 1.0, 0, 2 * n),
            (self.branch(&s.t2, &s.x2), -1.0, n, 3 * n),
        ] {
            let (tt, tx, xx) = self.branch_hessian(&branch);
            hess.view_mut((t_off, t_off), (n, n)).copy_from(&(tt * sign));
            let tx = tx * sign;
            hess.view_mut((t_off, x_off), (n, n)).copy_from(&tx);
            hess.view_mut((x_off, t_off), (n, n)).copy_from(&tx.transpose());
            hess.view_mut((x_off, x_off), (n, n)).copy_from(&(xx * sign));
        }
        let jac = self.constraint_jacobian();
        hess.view_mut((4 * n, 0), (N_MULTIPLIERS, 4 * n)).copy_from(&jac);
        hess.view_mut((0, 4 * n), (4 * n, N_MULTIPLIERS)).copy_from(&jac.transpose());
        Ok(hess)
    }
}

pub fn action_value(s: &StateVector, cfg: &ProblemConfig) -> Result<f64> {
    ActionModel::new(cfg)?.value(s)
}

pub fn action_gradient(s: &StateVector, cfg: &ProblemConfig) -> Result<Vec<f64>> {
    ActionModel::new(cfg)?.gradient(s)
}

pub fn action_hessian(s: &StateVector, cfg: &ProblemConfig) -> Result<DMatrix<f64>> {
    ActionModel::new(cfg)?.hessian(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Potential;
    use crate::sbp::Order;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(cfg: &ProblemConfig) -> StateVector {
        let g = cfg.gamma_grid();
        let t: Vec<f64> = g.iter().map(|v| cfg.t_i + cfg.tdot_i * (v - cfg.gamma_i)).collect();
        let x: Vec<f64> = g.iter().map(|v| cfg.x_i + cfg.xdot_i * (v - cfg.gamma_i)).collect();
        StateVector {
            t1: t.clone(),
            t2: t,
            x1: x.clone(),
            x2: x,
            lambda: [0.0; 8],
        }
    }

    fn perturbed(cfg: &ProblemConfig, seed: u64, amp: f64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = line(cfg).pack();
        for v in z.iter_mut() {
            *v += amp * rng.random_range(-1.0..1.0);
        }
        StateVector::unpack(cfg.n_gamma, &z).unwrap()
    }

    #[test]
    fn pack_round_trip_and_errors() {
        let cfg = ProblemConfig::linear_example().with_n(5);
        let s = perturbed(&cfg, 3, 0.1);
        let z = s.pack();
        assert_eq!(z.len(), 28);
        assert_eq!(StateVector::unpack(5, &z).unwrap(), s);
        assert!(StateVector::unpack(5, &z[1..]).is_err());
        let m = ActionModel::new(&cfg).unwrap();
        let short = StateVector::unpack(4, &[0.0; 24]).unwrap();
        assert!(m.value(&short).is_err());
    }

    #[test]
    fn physical_limit_cancels_bulk() {
        for cfg in [ProblemConfig::free_example(), ProblemConfig::quartic_example()] {
            let mut s = perturbed(&cfg, 11, 0.05);
            s.t2 = s.t1.clone();
            s.x2 = s.x1.clone();
            s.lambda = [0.0; 8];
            assert_eq!(action_value(&s, &cfg).unwrap(), 0.0);
        }
        let cfg = ProblemConfig::free_example();
        assert_eq!(action_value(&line(&cfg), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn free_line_is_stationary_with_consistent_multipliers() {
        let cfg = ProblemConfig::free_example();
        let mut s = line(&cfg);
        let c2 = cfg.c * cfg.c;
        s.lambda[4] = -c2 * cfg.tdot_i;
        s.lambda[5] = cfg.xdot_i;
        let g = action_gradient(&s, &cfg).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-12), "{:?}", g);
    }

    #[test]
    fn lambda_block_is_constraint_residuals() {
        let cfg = ProblemConfig::quartic_example().with_n(10);
        let s = perturbed(&cfg, 5, 0.2);
        let m = ActionModel::new(&cfg).unwrap();
        let g = m.gradient(&s).unwrap();
        assert_eq!(&g[40..], &m.constraints(&s));
    }

    fn fd_gradient_check(cfg: &ProblemConfig, seed: u64) {
        let m = ActionModel::new(cfg).unwrap();
        let s = perturbed(cfg, seed, 0.1);
        let z = s.pack();
        let g = m.gradient(&s).unwrap();
        for k in 0..z.len() {
            let h = 1e-6 * z[k].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fp = m.value(&StateVector::unpack(cfg.n_gamma, &zp).unwrap()).unwrap();
            let fm = m.value(&StateVector::unpack(cfg.n_gamma, &zm).unwrap()).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_gradient_check(&ProblemConfig::linear_example().with_n(8), 1);
        fd_gradient_check(&ProblemConfig::quartic_example().with_n(8), 2);
        fd_gradient_check(&ProblemConfig::quartic_example().with_order(Order::Sbp42).with_n(10), 3);
    }

    #[test]
    fn hessian_symmetric_and_matches_gradient() {
        for cfg in [
            ProblemConfig::quartic_example().with_n(8),
            ProblemConfig::linear_example().with_order(Order::Sbp42).with_n(9),
        ] {
            let m = ActionModel::new(&cfg).unwrap();
            let s = perturbed(&cfg, 7, 0.1);
            let hs = m.hessian(&s).unwrap();
            assert!((&hs - hs.transpose()).amax() <= 1e-12);
            let z = s.pack();
            for k in 0..z.len() {
                let h = 1e-6 * z[k].abs().max(1.0);
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += h;
                zm[k] -= h;
                let gp = m.gradient(&StateVector::unpack(cfg.n_gamma, &zp).unwrap()).unwrap();
                let gm = m.gradient(&StateVector::unpack(cfg.n_gamma, &zm).unwrap()).unwrap();
                for r in 0..z.len() {
                    let fd = (gp[r] - gm[r]) / (2.0 * h);
                    assert!((fd - hs[(r, k)]).abs() <= 1e-5 * hs[(r, k)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn free_cross_blocks_vanish() {
        let cfg = ProblemConfig::free_example().with_n(6);
        let m = ActionModel::new(&cfg).unwrap();
        let hs = m.hessian(&perturbed(&cfg, 9, 0.3)).unwrap();
        assert_eq!(hs.view((0, 12), (12, 12)).amax(), 0.0);
        assert_eq!(hs.view((12, 0), (12, 12)).amax(), 0.0);
    }

    #[test]
    fn custom_potential_matches_builtin() {
        let mut cfg = ProblemConfig::quartic_example().with_n(8);
        let s = perturbed(&cfg, 4, 0.1);
        let reference = action_hessian(&s, &cfg).unwrap();
        cfg.potential = Potential::custom("q", |x: f64| 0.5 * x.powi(4), |x: f64| 2.0 * x.powi(3));
        let fallback = action_hessian(&s, &cfg).unwrap();
        assert!((reference - fallback).amax() < 1e-7);
    }

    proptest! {
        #[test]
        fn time_translation_invariance(shift in -5.0f64..5.0, seed in 0u64..1000, quartic in any::<bool>()) {
            let cfg = if quartic { ProblemConfig::quartic_example() } else { ProblemConfig::linear_example() }.with_n(12);
            let s = perturbed(&cfg, seed, 0.2);
            let v0 = action_value(&s, &cfg).unwrap();
            let mut shifted = s.clone();
            shifted.t1.iter_mut().for_each(|v| *v += shift);
            shifted.t2.iter_mut().for_each(|v| *v += shift);
            let mut cfg2 = cfg.clone();
            cfg2.t_i += shift;
            let v1 = action_value(&shifted, &cfg2).unwrap();
            prop_assert!((v1 - v0).abs() <= 1e-12 * v0.abs().max(1.0));
            // with the initial time held fixed only the first constraint moves
            let m = ActionModel::new(&cfg).unwrap();
            let dc = m.constraints(&shifted)[0] - m.constraints(&s)[0];
            prop_assert!((dc - shift).abs() <= 1e-12 * shift.abs().max(1.0));
        }

        #[test]
        fn space_translation_invariance_free(shift in -5.0f64..5.0, seed in 0u64..1000) {
            let cfg = ProblemConfig::free_example().with_n(12);
            let s = perturbed(&cfg, seed, 0.2);
            let v0 = action_value(&s, &cfg).unwrap();
            let mut shifted = s.clone();
            shifted.x1.iter_mut().for_each(|v| *v += shift);
            shifted.x2.iter_mut().for_each(|v| *v += shift);
            let mut cfg2 = cfg.clone();
            cfg2.x_i += shift;
            let v1 = action_value(&shifted, &cfg2).unwrap();
            prop_assert!((v1 - v0).abs() <= 1e-12 * v0.abs().max(1.0));
        }

        #[test]
        fn exchange_antisymmetry(seed in 0u64..1000) {
            let cfg = ProblemConfig::quartic_example().with_n(10);
            let m = ActionModel::new(&cfg).unwrap();
            let s = perturbed(&cfg, seed, 0.3);
            let swapped = StateVector { t1: s.t2.clone(), t2: s.t1.clone(), x1: s.x2.clone(), x2: s.x1.clone(), lambda: s.lambda };
            let a = m.bulk_difference(&s);
            let b = m.bulk_difference(&swapped);
            prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn pack_unpack_round_trip(z in proptest::collection::vec(-1e3f64..1e3, 4 * 9 + 8)) {
            let s = StateVector::unpack(9, &z).unwrap();
            prop_assert_eq!(s.pack(), z);
        }
    }
}
