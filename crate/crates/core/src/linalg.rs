//! Small linear-algebra kernels: a banded LU with partial pivoting (the
//! workhorse behind every shifted solve) and a few vector helpers.

use nalgebra::ComplexField;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Banded square matrix stored row-wise with room for the fill-in produced
/// by partial pivoting (`kl` extra super-diagonals).
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T> BandMatrix<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![T::zero(); n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    /// Accumulates `v` into entry `(i, j)`, which must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if j + self.kl < i || j > i + self.ku {
            return T::zero();
        }
        self.data[self.idx(i, j)]
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).fold(T::zero(), |acc, j| acc + self.get(i, j) * x[j])
            })
            .collect()
    }

    /// LU factorization with row pivoting restricted to the band.
    pub fn factor(mut self) -> Result<BandLu<T>> {
        let n = self.n;
        let kl = self.kl;
        let reach = self.ku + self.kl;
        let mut pivots = vec![0usize; n];
        let scale = self
            .data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.modulus()))
            .max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].modulus();
            for i in k + 1..=last_row {
                let m = self.data[self.idx(i, k)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best <= scale * 1e-300 {
                return Err(Error::SolveFailure {
                    residual: f64::INFINITY,
                });
            }
            pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let diag = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / diag;
                self.data[ik] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..=last_col {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(BandLu {
            factors: self,
            pivots,
        })
    }
}

/// Factors produced by [`BandMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    factors: BandMatrix<T>,
    pivots: Vec<usize>,
}

impl<T> BandLu<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    pub fn dim(&self) -> usize {
        self.factors.n
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let f = &self.factors;
        let n = f.n;
        assert_eq!(b.len(), n, "right-hand side length");
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + f.kl).min(n - 1) {
                b[i] -= f.data[f.idx(i, k)] * bk;
            }
        }
        let reach = f.ku + f.kl;
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..=(i + reach).min(n - 1) {
                acc -= f.data[f.idx(i, j)] * b[j];
            }
            b[i] = acc / f.data[f.idx(i, i)];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm2_c(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖a − b‖₂ / ‖b‖₂`, falling back to the absolute difference when `b = 0`.
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm2(b);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix<Complex64>, DMatrix<Complex64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                band.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        (band, dense)
    }

    #[test]
    fn banded_lu_matches_dense_solve() {
        for (n, kl, ku, seed) in [(1, 0, 0, 1), (7, 1, 1, 2), (25, 5, 5, 3), (40, 3, 7, 4)] {
            let (band, dense) = random_band(n, kl, ku, seed);
            let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64 + 1.0, -0.5)).collect();
            let x = band.clone().factor().unwrap().solve(&b);
            let r = band.matvec(&x);
            let res: f64 = r.iter().zip(&b).map(|(a, c)| (a - c).norm_sqr()).sum::<f64>().sqrt();
            assert!(res < 1e-10 * norm2_c(&b), "n={n}: residual {res}");
            let xd = dense.lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
            for i in 0..n {
                assert!((x[i] - xd[i]).norm() < 1e-9 * (1.0 + xd[i].norm()));
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let mut m = BandMatrix::<f64>::zeros(2, 1, 1);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0);
        let x = m.factor().unwrap().solve(&[2.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = BandMatrix::<f64>::zeros(3, 1, 1);
        assert!(matches!(m.factor(), Err(Error::SolveFailure { .. })));
    }
}
