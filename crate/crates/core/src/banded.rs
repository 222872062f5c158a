//! Banded LU factorization with partial pivoting.
//!
//! The KKT saddle systems assembled by this crate are block-banded once the
//! primal slots and constraint rows are interleaved by timestep, so an O(n w^2)
//! band factorization keeps the Newton step linear in the planning horizon.
//! Storage follows the LAPACK GB convention: `kl` extra superdiagonals hold the
//! fill-in produced by row interchanges.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BandedError {
    #[error("singular factorization: zero pivot at column {col}")]
    Singular { col: usize },
}

/// Column-major band storage of an `n x n` matrix with `kl` subdiagonals and
/// `ku` superdiagonals. Entry `(i, j)` is stored whenever
/// `j - (ku + kl) <= i <= j + kl`; the top `kl` rows of each stored column are
/// workspace for pivoting fill.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    stride: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        let stride = 2 * kl + ku + 1;
        BandedMatrix { n, kl, ku, stride, data: vec![0.0; stride * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(i + self.ku + self.kl >= j && i <= j + self.kl, "({i},{j}) outside band");
        j * self.stride + (self.kl + self.ku + i - j)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i + self.ku + self.kl >= j && i <= j + self.kl {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// In-band LU factorization with partial pivoting (unblocked GBTF2 scheme).
    pub fn factor(mut self) -> Result<BandedLu, BandedError> {
        let n = self.n;
        let kl = self.kl;
        let kuw = self.ku + self.kl; // working upper bandwidth including fill
        let mut ipiv = vec![0usize; n];

        for j in 0..n {
            // Pivot search within the column's subdiagonal band.
            let last = (j + kl).min(n - 1);
            let mut piv = j;
            let mut piv_abs = self.data[self.idx(j, j)].abs();
            for i in (j + 1)..=last {
                let a = self.data[self.idx(i, j)].abs();
                if a > piv_abs {
                    piv_abs = a;
                    piv = i;
                }
            }
            ipiv[j] = piv;
            if piv_abs == 0.0 {
                return Err(BandedError::Singular { col: j });
            }
            // Swap rows j and piv across the stored columns they share.
            if piv != j {
                let jend = (j + kuw).min(n - 1);
                for col in j..=jend {
                    let a = self.idx(j, col);
                    let b = self.idx(piv, col);
                    self.data.swap(a, b);
                }
            }
            // Eliminate below the pivot.
            let pivot = self.data[self.idx(j, j)];
            for i in (j + 1)..=last {
                let li = self.idx(i, j);
                let m = self.data[li] / pivot;
                self.data[li] = m;
                if m != 0.0 {
                    let jend = (j + kuw).min(n - 1);
                    for col in (j + 1)..=jend {
                        let u = self.data[self.idx(j, col)];
                        if u != 0.0 {
                            let t = self.idx(i, col);
                            self.data[t] -= m * u;
                        }
                    }
                }
            }
        }
        Ok(BandedLu { mat: self, ipiv })
    }
}

/// Factored form produced by [`BandedMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandedLu {
    mat: BandedMatrix,
    ipiv: Vec<usize>,
}

impl BandedLu {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.mat.n;
        let kl = self.mat.kl;
        let kuw = self.mat.ku + self.mat.kl;
        assert_eq!(b.len(), n);
        // Forward: apply P and L.
        for j in 0..n {
            let piv = self.ipiv[j];
            if piv != j {
                b.swap(j, piv);
            }
            let bj = b[j];
            if bj != 0.0 {
                let last = (j + kl).min(n - 1);
                for i in (j + 1)..=last {
                    b[i] -= self.mat.data[self.mat.idx(i, j)] * bj;
                }
            }
        }
        // Backward: solve U x = y.
        for j in (0..n).rev() {
            let start = j.saturating_sub(kuw);
            b[j] /= self.mat.data[self.mat.idx(j, j)];
            let xj = b[j];
            if xj != 0.0 {
                for i in start..j {
                    b[i] -= self.mat.data[self.mat.idx(i, j)] * xj;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_banded(rng: &mut StdRng, n: usize, kl: usize, ku: usize) -> (BandedMatrix, DMatrix<f64>) {
        let mut band = BandedMatrix::zeros(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                if i + ku >= j && i <= j + kl {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    band.add(i, j, v);
                    dense[(i, j)] = v;
                }
            }
        }
        // Make it comfortably nonsingular.
        for i in 0..n {
            band.add(i, i, 3.0);
            dense[(i, i)] += 3.0;
        }
        (band, dense)
    }

    #[test]
    fn matches_dense_lu_on_random_bands() {
        let mut rng = StdRng::seed_from_u64(21);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 2), (10, 3, 0), (40, 7, 7), (120, 15, 11)] {
            for _ in 0..5 {
                let (band, dense) = random_banded(&mut rng, n, kl, ku);
                let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let lu = band.factor().expect("factor");
                let x = lu.solve(&b);
                let xd = dense
                    .clone()
                    .lu()
                    .solve(&DVector::from_column_slice(&b))
                    .expect("dense solve");
                for i in 0..n {
                    assert!((x[i] - xd[i]).abs() < 1e-10, "n={n} kl={kl} ku={ku} i={i}");
                }
            }
        }
    }

    #[test]
    fn handles_zero_diagonal_saddle_blocks() {
        // [ H A^T; A 0 ] with H = I needs pivoting to get past the zero block.
        let mut band = BandedMatrix::zeros(4, 3, 3);
        // H = I (2x2), A = [1 2; 0 1].
        band.add(0, 0, 1.0);
        band.add(1, 1, 1.0);
        band.add(2, 0, 1.0);
        band.add(2, 1, 2.0);
        band.add(3, 1, 1.0);
        band.add(0, 2, 1.0);
        band.add(1, 2, 2.0);
        band.add(1, 3, 1.0);
        let lu = band.factor().expect("saddle factor");
        let x = lu.solve(&[1.0, 0.0, 1.0, 2.0]);
        // Verify A x_primal = rhs rows.
        assert!((x[0] + 2.0 * x[1] - 1.0).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reports_singularity_with_pivot_column() {
        let mut band = BandedMatrix::zeros(3, 1, 1);
        band.add(0, 0, 1.0);
        band.add(0, 1, 1.0);
        // Column 2 is entirely zero.
        band.add(1, 1, 1.0);
        match band.factor() {
            Err(BandedError::Singular { col }) => assert_eq!(col, 2),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn residual_is_small_for_ill_scaled_systems() {
        let mut rng = StdRng::seed_from_u64(22);
        let n = 60;
        let (mut band, mut dense) = random_banded(&mut rng, n, 5, 5);
        // Scale some rows by widely varying factors.
        for i in 0..n {
            let s = 10f64.powi((i % 7) as i32 - 3);
            for j in 0..n {
                if i + 5 >= j && i <= j + 5 {
                    let v = dense[(i, j)];
                    band.add(i, j, v * (s - 1.0));
                    dense[(i, j)] = v * s;
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = band.factor().unwrap().solve(&b);
        let xv = DVector::from_column_slice(&x);
        let res = &dense * &xv - DVector::from_column_slice(&b);
        assert!(res.norm() / xv.norm().max(1.0) < 1e-11);
    }
}
