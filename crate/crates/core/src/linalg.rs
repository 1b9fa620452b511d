//! Dense symmetric-indefinite `P A P^T = L D L^T` factorization with
//! Bunch-Kaufman partial pivoting (1x1 and 2x2 diagonal blocks).

use crate::error::{Result, WorldlineError};
use nalgebra::DMatrix;

const ALPHA: f64 = 0.640_388_203_202_208_5; // (1 + sqrt(17)) / 8

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot {
    One,
    Two,
}

#[derive(Debug, Clone)]
pub struct BunchKaufman {
    n: usize,
    /// Column-major; strictly lower part holds `L`, diagonal blocks hold `D`.
    a: Vec<f64>,
    blocks: Vec<(usize, Pivot)>,
    swaps: Vec<(usize, usize)>,
}

impl BunchKaufman {
    pub fn factor(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(WorldlineError::DimensionMismatch {
                expected: n,
                got: m.ncols(),
            });
        }
        let mut a: Vec<f64> = m.as_slice().to_vec();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(WorldlineError::SingularSystem);
        }
        let idx = |i: usize, j: usize| i + j * n;
        let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let tiny = f64::EPSILON * scale * n as f64;
        let mut blocks = Vec::new();
        let mut swaps = Vec::new();

        let swap_sym = |a: &mut Vec<f64>, k: usize, p: usize, q: usize| {
            if p == q {
                return;
            }
            for j in 0..n {
                a.swap(idx(p, j), idx(q, j));
            }
            for i in k..n {
                a.swap(idx(i, p), idx(i, q));
            }
        };

        let mut k = 0;
        while k < n {
            let absakk = a[idx(k, k)].abs();
            let (mut imax, mut colmax) = (k, 0.0f64);
            for i in k + 1..n {
                let v = a[idx(i, k)].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }
            if absakk.max(colmax) <= tiny {
                return Err(WorldlineError::SingularSystem);
            }
            let (kind, kp) = if absakk >= ALPHA * colmax {
                (Pivot::One, k)
            } else {
                let mut rowmax = 0.0f64;
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(a[idx(imax, j)].abs());
                    }
                }
                if absakk >= ALPHA * colmax * (colmax / rowmax) {
                    (Pivot::One, k)
                } else if a[idx(imax, imax)].abs() >= ALPHA * rowmax {
                    (Pivot::One, imax)
                } else {
                    (Pivot::Two, imax)
                }
            };

            match kind {
                Pivot::One => {
                    swap_sym(&mut a, k, k, kp);
                    swaps.push((k, kp));
                    let d = a[idx(k, k)];
                    if d.abs() <= tiny {
                        return Err(WorldlineError::SingularSystem);
                    }
                    let l: Vec<f64> = (k + 1..n).map(|i| a[idx(i, k)] / d).collect();
                    for j in k + 1..n {
                        let ajk = a[idx(j, k)];
                        if ajk == 0.0 {
                            continue;
                        }
                        for i in k + 1..n {
                            a[idx(i, j)] -= l[i - k - 1] * ajk;
                        }
                    }
                    for i in k + 1..n {
                        a[idx(i, k)] = l[i - k - 1];
                    }
                    blocks.push((k, Pivot::One));
                    k += 1;
                }
                Pivot::Two => {
                    swap_sym(&mut a, k, k + 1, kp);
                    swaps.push((k + 1, kp));
                    let d11 = a[idx(k, k)];
                    let d21 = a[idx(k + 1, k)];
                    let d22 = a[idx(k + 1, k + 1)];
                    let det = d11 * d22 - d21 * d21;
                    if det.abs() <= tiny * tiny || !det.is_finite() {
                        return Err(WorldlineError::SingularSystem);
                    }
                    let m = n - k - 2;
                    let mut l0 = vec![0.0; m];
                    let mut l1 = vec![0.0; m];
                    for i in k + 2..n {
                        let (b0, b1) = (a[idx(i, k)], a[idx(i, k + 1)]);
                        l0[i - k - 2] = (b0 * d22 - b1 * d21) / det;
                        l1[i - k - 2] = (b1 * d11 - b0 * d21) / det;
                    }
                    for j in k + 2..n {
                        let (c0, c1) = (a[idx(j, k)], a[idx(j, k + 1)]);
                        for i in k + 2..n {
                            a[idx(i, j)] -= l0[i - k - 2] * c0 + l1[i - k - 2] * c1;
                        }
                    }
                    for i in k + 2..n {
                        a[idx(i, k)] = l0[i - k - 2];
                        a[idx(i, k + 1)] = l1[i - k - 2];
                    }
                    blocks.push((k, Pivot::Two));
                    k += 2;
                }
            }
        }
        Ok(BunchKaufman { n, a, blocks, swaps })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(WorldlineError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let idx = |i: usize, j: usize| i + j * n;
        let a = &self.a;
        let mut x = b.to_vec();
        for &(p, q) in &self.swaps {
            x.swap(p, q);
        }
        // L y = P b
        for &(k, kind) in &self.blocks {
            let w = if kind == Pivot::One { 1 } else { 2 };
            for c in k..k + w {
                let xc = x[c];
                if xc != 0.0 {
                    for i in k + w..n {
                        x[i] -= a[idx(i, c)] * xc;
                    }
                }
            }
        }
        // D z = y
        for &(k, kind) in &self.blocks {
            match kind {
                Pivot::One => x[k] /= a[idx(k, k)],
                Pivot::Two => {
                    let (d11, d21, d22) = (a[idx(k, k)], a[idx(k + 1, k)], a[idx(k + 1, k + 1)]);
                    let det = d11 * d22 - d21 * d21;
                    let (y0, y1) = (x[k], x[k + 1]);
                    x[k] = (y0 * d22 - y1 * d21) / det;
                    x[k + 1] = (y1 * d11 - y0 * d21) / det;
                }
            }
        }
        // L^T w = z
        for &(k, kind) in self.blocks.iter().rev() {
            let w = if kind == Pivot::One { 1 } else { 2 };
            for c in k..k + w {
                let mut s = 0.0;
                for i in k + w..n {
                    s += a[idx(i, c)] * x[i];
                }
                x[c] -= s;
            }
        }
        for &(p, q) in self.swaps.iter().rev() {
            x.swap(p, q);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(WorldlineError::SingularSystem);
        }
        Ok(x)
    }

    /// Counts of (positive, negative) eigenvalues, read off the block diagonal.
    pub fn inertia(&self) -> (usize, usize) {
        let n = self.n;
        let idx = |i: usize, j: usize| i + j * n;
        let (mut pos, mut neg) = (0, 0);
        for &(k, kind) in &self.blocks {
            match kind {
                Pivot::One => {
                    if self.a[idx(k, k)] > 0.0 {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
                Pivot::Two => {
                    // a 2x2 pivot block always has one eigenvalue of each sign
                    pos += 1;
                    neg += 1;
                }
            }
        }
        (pos, neg)
    }
}

/// Solve the symmetric system `m x = b`.
pub fn solve_symmetric(m: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    BunchKaufman::factor(m)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    fn residual(m: &DMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
        (m * DVector::from_column_slice(x) - DVector::from_column_slice(b)).amax()
    }

    #[test]
    fn solves_random_indefinite() {
        for (n, seed) in [(1, 1), (2, 2), (5, 3), (40, 4), (101, 5)] {
            let m = random_symmetric(n, seed);
            let b: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
            let x = solve_symmetric(&m, &b).unwrap();
            let lu = m.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
            assert!(residual(&m, &x, &b) < 1e-10, "n={n}");
            assert!((DVector::from_column_slice(&x) - lu).amax() < 1e-8 * x.iter().fold(1.0f64, |s, v| s.max(v.abs())));
        }
    }

    #[test]
    fn zero_diagonal_needs_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let f = BunchKaufman::factor(&m).unwrap();
        assert_eq!(f.inertia(), (1, 1));
        let x = f.solve(&[4.0, 6.0]).unwrap();
        assert_eq!(x, vec![3.0, 2.0]);
    }

    #[test]
    fn saddle_point_system() {
        // [[I, J^T], [J, 0]] with J = [1 1 1]
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 1.0,
            0.0, 2.0, 0.0, 1.0,
            0.0, 0.0, 3.0, 1.0,
            1.0, 1.0, 1.0, 0.0,
        ]);
        let b = [1.0, 2.0, 3.0, 4.0];
        let f = BunchKaufman::factor(&m).unwrap();
        assert!(residual(&m, &f.solve(&b).unwrap(), &b) < 1e-14);
        assert_eq!(f.inertia(), (3, 1));
    }

    #[test]
    fn inertia_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0, -5.0]));
        assert_eq!(BunchKaufman::factor(&m).unwrap().inertia(), (2, 2));
    }

    #[test]
    fn detects_singular() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 3.0, 6.0, 9.0]);
        assert!(matches!(BunchKaufman::factor(&m), Err(WorldlineError::SingularSystem)));
        assert!(BunchKaufman::factor(&DMatrix::zeros(3, 3)).is_err());
        let mut nan = DMatrix::identity(2, 2);
        nan[(0, 1)] = f64::NAN;
        assert!(BunchKaufman::factor(&nan).is_err());
    }

    #[test]
    fn dimension_checks() {
        assert!(BunchKaufman::factor(&DMatrix::zeros(2, 3)).is_err());
        let f = BunchKaufman::factor(&DMatrix::identity(3, 3)).unwrap();
        assert!(f.solve(&[1.0, 2.0]).is_err());
        assert_eq!(f.dim(), 3);
    }
}
