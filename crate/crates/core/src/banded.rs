//! Banded Cholesky factorization for the exact `H_A` variant and the
//! coarsest multigrid level.

use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;

/// `A = L Lᵀ` with `L` stored row-wise inside a band of half-width `bw`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i, i-bw ..= i]`; entries left of column 0 stay zero.
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Factorization("matrix is not square".into()));
        }
        let n = a.nrows();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Factorization(format!(
                            "non-positive pivot {s:e} at row {i}"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        check_len(self.n, x.len())?;
        let w = self.bw + 1;
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for k in lo..i {
                s -= self.band[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
        for i in (0..self.n).rev() {
            x[i] /= self.band[i * w + bw];
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                x[k] -= self.band[i * w + (k + bw - i)] * xi;
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;

    fn tridiag(n: usize) -> CsrMatrix {
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn solves_tridiagonal() {
        let a = tridiag(7);
        let f = BandCholesky::factor(&a).unwrap();
        assert_eq!(f.bandwidth(), 1);
        let b: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b).unwrap();
        let r = a.mul_vec(&x).unwrap();
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut t = TripletBuilder::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 0, 2.0);
        t.push(1, 1, 1.0);
        assert!(matches!(
            BandCholesky::factor(&t.build()),
            Err(Error::Factorization(_))
        ));
    }
}
