//! Summation-by-parts first-derivative operators on a uniform world-line grid.
//!
//! Two diagonal-norm families are provided: the second-order trapezoidal
//! operator (`Sbp21`) and the fourth-order interior / second-order boundary
//! operator (`Sbp42`). Every operator satisfies `D = H^-1 Q` with
//! `Q + Q^T = diag(-1, 0, ..., 0, 1)`.
//!
//! [`regularize`] absorbs an initial-value penalty into the operator using
//! affine coordinates, which removes the spurious zero modes of `D^T` that
//! would otherwise pollute a variational solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Penalty weight of the absorbed initial-value term.
pub const SIGMA0: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SbpError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Operator family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Sbp21,
    Sbp42,
}

impl Order {
    /// Smallest grid on which the boundary closures do not overlap.
    pub fn min_points(self) -> usize {
        match self {
            Order::Sbp21 => 3,
            Order::Sbp42 => 9,
        }
    }

    /// Number of rows carrying the one-sided boundary closure at each end.
    pub fn closure_rows(self) -> usize {
        match self {
            Order::Sbp21 => 1,
            Order::Sbp42 => 4,
        }
    }

    pub fn build(self, n: usize, dgamma: f64) -> Result<SbpOperator, SbpError> {
        match self {
            Order::Sbp21 => build_sbp21(n, dgamma),
            Order::Sbp42 => build_sbp42(n, dgamma),
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::Sbp21 => "sbp21",
            Order::Sbp42 => "sbp42",
        })
    }
}

impl FromStr for Order {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sbp21" => Ok(Order::Sbp21),
            "sbp42" => Ok(Order::Sbp42),
            other => Err(format!("unknown operator order '{other}' (expected sbp21 or sbp42)")),
        }
    }
}

/// Classical SBP operator: differentiation matrix `d` and diagonal norm `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SbpOperator {
    pub order: Order,
    pub n: usize,
    pub dgamma: f64,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub interior_order: usize,
    pub boundary_order: usize,
}

/// Affine-extended operator with the initial-value penalty absorbed.
///
/// `dbar` acts on `(v_0, ..., v_{n-1}, 1)`; its last column carries the
/// shift `sigma0 * H^-1 E_0 g` with `g = (init_value, 0, ..., 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedOperator {
    pub n: usize,
    pub dbar: DMatrix<f64>,
    pub hbar: DMatrix<f64>,
    pub init_value: f64,
    pub sigma0: f64,
}

fn check_grid(n: usize, dgamma: f64, min: usize) -> Result<(), SbpError> {
    if n < min {
        return Err(SbpError::InvalidDimension(format!(
            "need at least {min} grid points, got {n}"
        )));
    }
    if !(dgamma > 0.0 && dgamma.is_finite()) {
        return Err(SbpError::InvalidDimension(format!(
            "grid spacing must be positive and finite, got {dgamma}"
        )));
    }
    Ok(())
}

/// Trapezoidal-norm operator: central differences inside, one-sided
/// first-order differences on the two boundary rows.
pub fn build_sbp21(n: usize, dgamma: f64) -> Result<SbpOperator, SbpError> {
    check_grid(n, dgamma, Order::Sbp21.min_points())?;
    let mut d = DMatrix::zeros(n, n);
    d[(0, 0)] = -1.0;
    d[(0, 1)] = 1.0;
    for k in 1..n - 1 {
        d[(k, k - 1)] = -0.5;
        d[(k, k + 1)] = 0.5;
    }
    d[(n - 1, n - 2)] = -1.0;
    d[(n - 1, n - 1)] = 1.0;
    d /= dgamma;

    let mut w = vec![1.0; n];
    w[0] = 0.5;
    w[n - 1] = 0.5;
    let h = DMatrix::from_diagonal(&DVector::from_iterator(n, w.into_iter().map(|v| v * dgamma)));

    Ok(SbpOperator {
        order: Order::Sbp21,
        n,
        dgamma,
        d,
        h,
        interior_order: 2,
        boundary_order: 1,
    })
}

#[rustfmt::skip]
const SBP42_NORM: [f64; 4] = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];

#[rustfmt::skip]
const SBP42_CLOSURE: [[f64; 6]; 4] = [
    [-24.0 / 17.0,  59.0 / 34.0, -4.0 / 17.0, -3.0 / 34.0,  0.0,          0.0],
    [-1.0 / 2.0,    0.0,          1.0 / 2.0,   0.0,          0.0,          0.0],
    [ 4.0 / 43.0,  -59.0 / 86.0,  0.0,         59.0 / 86.0, -4.0 / 43.0,   0.0],
    [ 3.0 / 98.0,   0.0,         -59.0 / 98.0, 0.0,          32.0 / 49.0, -4.0 / 49.0],
];

#[rustfmt::skip]
const SBP42_INTERIOR: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];

/// Diagonal-norm operator with fourth-order interior stencil and the
/// standard four-row second-order closure. The right closure is the
/// left one mirrored and negated, `D_right = -P D_left P`.
pub fn build_sbp42(n: usize, dgamma: f64) -> Result<SbpOperator, SbpError> {
    check_grid(n, dgamma, Order::Sbp42.min_points())?;
    let mut d = DMatrix::zeros(n, n);
    for (i, row) in SBP42_CLOSURE.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            d[(i, j)] = v;
            d[(n - 1 - i, n - 1 - j)] = -v;
        }
    }
    for k in 4..n - 4 {
        for (j, &v) in SBP42_INTERIOR.iter().enumerate() {
            d[(k, k + j - 2)] = v;
        }
    }
    d /= dgamma;

    let mut w = vec![1.0; n];
    for (i, &v) in SBP42_NORM.iter().enumerate() {
        w[i] = v;
        w[n - 1 - i] = v;
    }
    let h = DMatrix::from_diagonal(&DVector::from_iterator(n, w.into_iter().map(|v| v * dgamma)));

    Ok(SbpOperator {
        order: Order::Sbp42,
        n,
        dgamma,
        d,
        h,
        interior_order: 4,
        boundary_order: 2,
    })
}

impl SbpOperator {
    /// `Q = H D`.
    pub fn q(&self) -> DMatrix<f64> {
        &self.h * &self.d
    }

    /// Largest entry of `|Q + Q^T - (E_N - E_0)|`.
    pub fn sbp_defect(&self) -> f64 {
        let q = self.q();
        let mut s = &q + q.transpose();
        s[(0, 0)] += 1.0;
        s[(self.n - 1, self.n - 1)] -= 1.0;
        s.amax()
    }

    pub fn h_diag(&self) -> DVector<f64> {
        self.h.diagonal()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, SbpError> {
        apply(&self.d, v)
    }

    /// First row of `D` applied to `v`.
    pub fn first_row_dot(&self, v: &[f64]) -> f64 {
        self.d.row(0).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Last row of `D` applied to `v`.
    pub fn last_row_dot(&self, v: &[f64]) -> f64 {
        self.d.row(self.n - 1).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Absorb the SAT initial-value penalty into `op` for initial value `init_value`.
pub fn regularize(op: &SbpOperator, init_value: f64) -> RegularizedOperator {
    let n = op.n;
    let h0 = op.h[(0, 0)];
    let mut dbar = DMatrix::zeros(n + 1, n + 1);
    dbar.view_mut((0, 0), (n, n)).copy_from(&op.d);
    dbar[(0, 0)] -= SIGMA0 / h0;
    dbar[(0, n)] = SIGMA0 * init_value / h0;
    dbar[(n, n)] = 1.0;

    let mut hbar = DMatrix::zeros(n + 1, n + 1);
    hbar.view_mut((0, 0), (n, n)).copy_from(&op.h);

    RegularizedOperator {
        n,
        dbar,
        hbar,
        init_value,
        sigma0: SIGMA0,
    }
}

impl RegularizedOperator {
    /// The `n x n` linear block `D - sigma0 H^-1 E_0`.
    pub fn linear_block(&self) -> DMatrix<f64> {
        self.dbar.view((0, 0), (self.n, self.n)).into_owned()
    }

    /// Entry of the shift column in the first row.
    pub fn shift(&self) -> f64 {
        self.dbar[(0, self.n)]
    }

    /// Product with an affine vector of length `n + 1`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, SbpError> {
        apply(&self.dbar, v)
    }

    /// Applies `dbar` to `(v, 1)` and strips the trailing affine entry.
    pub fn apply_affine(&self, v: &[f64]) -> Result<Vec<f64>, SbpError> {
        if v.len() != self.n {
            return Err(SbpError::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        let mut ext = Vec::with_capacity(self.n + 1);
        ext.extend_from_slice(v);
        ext.push(1.0);
        let mut out = apply(&self.dbar, &ext)?;
        out.pop();
        Ok(out)
    }

    /// Ratio of smallest to largest singular value of `dbar`.
    pub fn singular_value_ratio(&self) -> f64 {
        let sv = self.dbar.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if max == 0.0 {
            0.0
        } else {
            min / max
        }
    }
}

/// Dense matrix-vector product with a dimension check.
pub fn apply(m: &DMatrix<f64>, v: &[f64]) -> Result<Vec<f64>, SbpError> {
    if m.ncols() != v.len() {
        return Err(SbpError::DimensionMismatch {
            expected: m.ncols(),
            got: v.len(),
        });
    }
    let out = m * DVector::from_column_slice(v);
    Ok(out.as_slice().to_vec())
}

/// Discrete inner product `u^T H v`.
pub fn inner_product(h: &DMatrix<f64>, u: &[f64], v: &[f64]) -> Result<f64, SbpError> {
    if h.nrows() != u.len() {
        return Err(SbpError::DimensionMismatch {
            expected: h.nrows(),
            got: u.len(),
        });
    }
    if h.ncols() != v.len() {
        return Err(SbpError::DimensionMismatch {
            expected: h.ncols(),
            got: v.len(),
        });
    }
    let hv = h * DVector::from_column_slice(v);
    Ok(u.iter().zip(hv.iter()).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, dg: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dg).collect()
    }

    #[test]
    fn sbp21_small_stencil() {
        let op = build_sbp21(3, 0.5).unwrap();
        #[rustfmt::skip]
        let d = DMatrix::from_row_slice(3, 3, &[
            -2.0, 2.0, 0.0,
            -1.0, 0.0, 1.0,
             0.0, -2.0, 2.0,
        ]);
        assert_eq!(op.d, d);
        assert_eq!(op.h, DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.5, 0.25])));
    }

    #[test]
    fn sbp21_annihilates_constants_and_differentiates_linears() {
        let op = build_sbp21(11, 0.1).unwrap();
        let c = op.apply(&[3.7; 11]).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-13));
        let lin = op.apply(&grid(11, 0.1)).unwrap();
        assert!(lin.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sbp42_first_row() {
        let op = build_sbp42(12, 1.0).unwrap();
        let expected = [-24.0 / 17.0, 59.0 / 34.0, -4.0 / 17.0, -3.0 / 34.0];
        for (j, e) in expected.iter().enumerate() {
            assert_eq!(op.d[(0, j)], *e);
        }
        for j in 4..12 {
            assert_eq!(op.d[(0, j)], 0.0);
        }
    }

    #[test]
    fn sbp42_cubic_exact_in_interior() {
        let n = 20;
        let dg = 0.05;
        let op = build_sbp42(n, dg).unwrap();
        let g = grid(n, dg);
        let cube: Vec<f64> = g.iter().map(|x| x * x * x).collect();
        let d = op.apply(&cube).unwrap();
        for k in 4..n - 4 {
            let exact = 3.0 * g[k] * g[k];
            assert!((d[k] - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn sbp_identity_holds() {
        for n in [8, 16, 32, 64, 128] {
            let op = build_sbp21(n, 1.0 / (n - 1) as f64).unwrap();
            assert!(op.sbp_defect() <= 1e-14, "sbp21 n={n}: {}", op.sbp_defect());
        }
        for n in [9, 16, 32, 64, 128] {
            let op = build_sbp42(n, 1.0 / (n - 1) as f64).unwrap();
            assert!(op.sbp_defect() <= 1e-14, "sbp42 n={n}: {}", op.sbp_defect());
        }
    }

    #[test]
    fn rejects_small_grids() {
        assert!(matches!(build_sbp21(2, 0.1), Err(SbpError::InvalidDimension(_))));
        assert!(matches!(build_sbp21(5, 0.0), Err(SbpError::InvalidDimension(_))));
        assert!(matches!(build_sbp21(5, -1.0), Err(SbpError::InvalidDimension(_))));
        assert!(matches!(build_sbp42(8, 0.1), Err(SbpError::InvalidDimension(_))));
    }

    #[test]
    fn regularized_first_row() {
        let op = build_sbp21(6, 1.0).unwrap();
        let r = regularize(&op, 0.0);
        let row: Vec<f64> = r.dbar.row(0).iter().copied().collect();
        assert_eq!(row, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let last: Vec<f64> = r.dbar.row(6).iter().copied().collect();
        assert_eq!(last, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(r.hbar.row(6).iter().all(|&v| v == 0.0));
        assert!(r.hbar.column(6).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn regularized_shift_column() {
        let dg = 0.25;
        let op = build_sbp21(5, dg).unwrap();
        let r = regularize(&op, 0.7);
        assert!((r.shift() - (-2.0 * 0.7 / dg)).abs() < 1e-15);
        for k in 1..5 {
            assert_eq!(r.dbar[(k, 5)], 0.0);
        }
        let op42 = build_sbp42(12, dg).unwrap();
        let r42 = regularize(&op42, 0.7);
        assert!((r42.shift() - (-0.7 * 48.0 / (17.0 * dg))).abs() < 1e-13);
    }

    #[test]
    fn regularized_constant_response() {
        let dg = 0.2;
        let op = build_sbp21(6, dg).unwrap();
        let r = regularize(&op, 0.3);
        let c = 1.1;
        let mut v = vec![c; 6];
        v.push(1.0);
        let out = r.apply(&v).unwrap();
        assert!((out[0] - 2.0 * (c - 0.3) / dg).abs() < 1e-12);
        assert!(out[1..6].iter().all(|v| v.abs() < 1e-12));
        assert_eq!(out[6], 1.0);
        let zero = r.apply_affine(&[0.3; 6]).unwrap();
        assert!(zero.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn regularized_is_nonsingular() {
        let op = build_sbp21(32, 1.0 / 31.0).unwrap();
        let r = regularize(&op, 0.0);
        assert!(r.singular_value_ratio() > 1e-10);
        // the classical operator has a zero mode
        let sv = op.d.clone().singular_values();
        assert!(sv.min() / sv.max() < 1e-12);
    }

    #[test]
    fn inner_products() {
        let op = build_sbp21(3, 0.5).unwrap();
        assert!((inner_product(&op.h, &[1.0; 3], &[1.0; 3]).unwrap() - 1.0).abs() < 1e-15);
        let g = grid(3, 0.5);
        assert!((inner_product(&op.h, &g, &g).unwrap() - 0.375).abs() < 1e-15);
        let r = regularize(&op, 0.0);
        let mut ge = g.clone();
        ge.push(1.0);
        assert!((inner_product(&r.hbar, &ge, &ge).unwrap() - 0.375).abs() < 1e-15);
        assert!(matches!(
            inner_product(&op.h, &[1.0; 2], &[1.0; 3]),
            Err(SbpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn apply_dimension_mismatch() {
        let op = build_sbp21(4, 1.0).unwrap();
        assert!(op.apply(&[1.0; 3]).is_err());
        let r = regularize(&op, 0.0);
        assert!(r.apply(&[1.0; 4]).is_err());
        assert_eq!(apply(&DMatrix::identity(2, 2), &[2.0, 3.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn order_parsing() {
        assert_eq!("SBP42".parse::<Order>().unwrap(), Order::Sbp42);
        assert!("sbp63".parse::<Order>().is_err());
        assert_eq!(Order::Sbp21.to_string(), "sbp21");
    }

    proptest! {
        #[test]
        fn summation_by_parts_mimics_integration_by_parts(
            seed in proptest::collection::vec(-1.0f64..1.0, 40),
            use42 in any::<bool>(),
        ) {
            let n = 20;
            let dg = 1.0 / 19.0;
            let op = if use42 { build_sbp42(n, dg).unwrap() } else { build_sbp21(n, dg).unwrap() };
            let u = &seed[..n];
            let v = &seed[n..];
            let du = op.apply(u).unwrap();
            let dv = op.apply(v).unwrap();
            let lhs = inner_product(&op.h, u, &dv).unwrap() + inner_product(&op.h, &du, v).unwrap();
            let rhs = u[n - 1] * v[n - 1] - u[0] * v[0];
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }
}
