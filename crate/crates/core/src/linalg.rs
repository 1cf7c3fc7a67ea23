//! Dense symmetric solves for the small systems that appear in curve fitting.

use crate::scalar::Real;

/// Row-major square matrix.
#[derive(Clone, Debug)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn add_to(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.n + c] += v;
    }

    /// In-place Cholesky factorisation `A = L Lᵀ`.
    ///
    /// Returns `None` when a pivot falls below `rel_tol` times the largest
    /// diagonal entry, which is how rank deficiency shows up in normal equations.
    pub fn cholesky(mut self, rel_tol: T) -> Option<Cholesky<T>> {
        let n = self.n;
        let scale = (0..n)
            .map(|i| self.get(i, i).abs())
            .fold(T::zero(), T::max)
            .max(T::min_positive_value());
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                let l = self.data[j * n + k];
                d -= l * l;
            }
            if !(d > rel_tol * scale) {
                return None;
            }
            let d = d.sqrt();
            self.data[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= self.data[i * n + k] * self.data[j * n + k];
                }
                self.data[i * n + j] = s / d;
            }
        }
        Some(Cholesky { l: self })
    }
}

#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: SquareMatrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l.get(i, k) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l.get(k, i) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        y
    }
}
