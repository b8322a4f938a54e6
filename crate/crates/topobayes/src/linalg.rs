//! Direct solvers sized for desk-scale grids: tridiagonal elimination,
//! dense Cholesky for covariance Gram matrices, and a banded Cholesky for
//! the 2D five-point stencil.

use crate::error::{Error, Result};

/// Solve a tridiagonal system by Thomas elimination.
///
/// `lower[i]` couples row `i+1` to `i`, `upper[i]` couples row `i` to `i+1`.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 || lower.len() != n - 1 || upper.len() != n - 1 || rhs.len() != n {
        return Err(Error::DimensionMismatch("tridiagonal system shape".into()));
    }
    let mut c = vec![0.0; n - 1];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::Solver("zero pivot in tridiagonal solve".into()));
    }
    if n > 1 {
        c[0] = upper[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Solver(format!(
                "zero pivot at row {i} in tridiagonal solve"
            )));
        }
        if i < n - 1 {
            c[i] = upper[i] / pivot;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Dense lower-triangular Cholesky factor, stored row-major with the upper
/// part zeroed.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// Factor a symmetric matrix given row-major. Fails on a non-positive
    /// pivot, which signals that the matrix is not positive definite.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::DimensionMismatch("cholesky input shape".into()));
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                // dot of rows i and j over columns < j
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                for (x, y) in ri.iter().zip(rj) {
                    sum -= x * y;
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::Solver(format!(
                            "non-positive pivot {sum:.3e} at row {i}"
                        )));
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Row `i` of the factor (upper part is zero).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.l[i * self.n..(i + 1) * self.n]
    }

    /// `L z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.l[i * self.n..i * self.n + i + 1];
            out[i] = row.iter().zip(z).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Diagonal of `L L^T`.
    pub fn gram_diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.l[i * self.n..i * self.n + i + 1]
                    .iter()
                    .map(|v| v * v)
                    .sum()
            })
            .collect()
    }

    /// Entry `(i, j)` of `L L^T`.
    pub fn gram_entry(&self, i: usize, j: usize) -> f64 {
        let k = i.min(j) + 1;
        self.l[i * self.n..i * self.n + k]
            .iter()
            .zip(&self.l[j * self.n..j * self.n + k])
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Cholesky factorization of a symmetric positive-definite banded matrix,
/// band stored row-major as `band[i][k] = A[i, i - bw + k]`, `k = 0..=bw`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factor in place; `band` holds the lower band of the symmetric input.
    pub fn factor(mut band: Vec<f64>, n: usize, bw: usize) -> Result<Self> {
        let w = bw + 1;
        if band.len() != n * w {
            return Err(Error::DimensionMismatch("band storage shape".into()));
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // columns t < j shared by rows i and j, both within band
                let t0 = j.saturating_sub(bw).max(j0);
                let len = j - t0;
                let mut sum = band[i * w + (j + bw - i)];
                if len > 0 {
                    let oi = i * w + (t0 + bw - i);
                    let oj = j * w + (t0 + bw - j);
                    let (ri, rj) = (&band[oi..oi + len], &band[oj..oj + len]);
                    sum -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::Solver(format!(
                            "non-positive pivot {sum:.3e} at row {i} of banded factorization"
                        )));
                    }
                    band[i * w + bw] = sum.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = sum / band[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    /// Solve `A x = rhs` with the stored factor.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::DimensionMismatch("banded solve rhs shape".into()));
        }
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let off = i * w + (j0 + bw - i);
            let len = i - j0;
            let dot: f64 = self.band[off..off + len]
                .iter()
                .zip(&y[j0..i])
                .map(|(a, b)| a * b)
                .sum();
            y[i] = (y[i] - dot) / self.band[i * w + bw];
        }
        // back substitution with L^T, column-sweep form
        for i in (0..n).rev() {
            y[i] /= self.band[i * w + bw];
            let j0 = i.saturating_sub(bw);
            let off = i * w + (j0 + bw - i);
            let xi = y[i];
            for (j, lij) in (j0..i).zip(self.band[off..off + (i - j0)].iter()) {
                y[j] -= lij * xi;
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(a: &[f64], n: usize, rhs: &[f64]) -> Vec<f64> {
        // Gaussian elimination with partial pivoting, used as the oracle.
        let mut m = a.to_vec();
        let mut b = rhs.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
                .unwrap();
            if piv != col {
                for k in 0..n {
                    m.swap(col * n + k, piv * n + k);
                }
                b.swap(col, piv);
            }
            for row in col + 1..n {
                let f = m[row * n + col] / m[col * n + col];
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
        for row in (0..n).rev() {
            for k in row + 1..n {
                b[row] -= m[row * n + k] * b[k];
            }
            b[row] /= m[row * n + row];
        }
        b
    }

    #[test]
    fn tridiagonal_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 40] {
            let diag: Vec<f64> = (0..n).map(|_| 4.0 + rng.random::<f64>()).collect();
            let lower: Vec<f64> = (0..n.saturating_sub(1))
                .map(|_| -1.0 + 0.2 * rng.random::<f64>())
                .collect();
            let upper: Vec<f64> = (0..n.saturating_sub(1))
                .map(|_| -1.0 + 0.2 * rng.random::<f64>())
                .collect();
            let rhs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();

            let mut a = vec![0.0; n * n];
            for i in 0..n {
                a[i * n + i] = diag[i];
                if i + 1 < n {
                    a[(i + 1) * n + i] = lower[i];
                    a[i * n + i + 1] = upper[i];
                }
            }
            let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
            let y = dense_solve(&a, n, &rhs);
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tridiagonal_rejects_singular() {
        assert!(solve_tridiagonal(&[0.0], &[0.0, 1.0], &[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn dense_cholesky_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        // random SPD matrix B B^T + I
        let b: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
                a[i * n + j] = dot + if i == j { 1.0 } else { 0.0 };
            }
        }
        let ch = DenseCholesky::factor(&a, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((ch.gram_entry(i, j) - a[i * n + j]).abs() < 1e-9);
            }
        }
        let diag = ch.gram_diagonal();
        for i in 0..n {
            assert!((diag[i] - a[i * n + i]).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_cholesky_rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        assert!(DenseCholesky::factor(&a, 2).is_err());
    }

    #[test]
    fn banded_cholesky_solves_stencil() {
        // 2D Laplacian plus a positive diagonal on a 6x5 interior grid.
        let (nx, ny) = (6usize, 5usize);
        let n = nx * ny;
        let bw = nx;
        let w = bw + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

        let mut band = vec![0.0; n * w];
        let mut full = vec![0.0; n * n];
        for i in 0..n {
            let d = 4.0 + q[i];
            band[i * w + bw] = d;
            full[i * n + i] = d;
            if i % nx != 0 {
                band[i * w + bw - 1] = -1.0;
                full[i * n + i - 1] = -1.0;
                full[(i - 1) * n + i] = -1.0;
            }
            if i >= nx {
                band[i * w] = -1.0;
                full[i * n + i - nx] = -1.0;
                full[(i - nx) * n + i] = -1.0;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let ch = BandedCholesky::factor(band, n, bw).unwrap();
        let x = ch.solve(&rhs).unwrap();
        let y = dense_solve(&full, n, &rhs);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn banded_cholesky_rejects_indefinite() {
        // [[1, 2], [2, 1]] as a bandwidth-1 matrix
        let band = vec![0.0, 1.0, 2.0, 1.0];
        assert!(BandedCholesky::factor(band, 2, 1).is_err());
    }
}
