//! Small fixed-size dense matrices for the stage-wise solver.
//!
//! Sizes are tiny (at most 7x7) so everything is stack allocated and
//! written out with plain loops.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::scalar::Scalar;

/// Row-major `R x C` matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat<T, const R: usize, const C: usize>(pub [[T; C]; R]);

/// Column vector.
pub type Vector<T, const N: usize> = Mat<T, N, 1>;

impl<T: Scalar, const R: usize, const C: usize> Default for Mat<T, R, C> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<T: Scalar, const R: usize, const C: usize> Mat<T, R, C> {
    pub fn zeros() -> Self {
        Mat([[T::zero(); C]; R])
    }

    pub fn transpose(&self) -> Mat<T, C, R> {
        let mut out = Mat::<T, C, R>::zeros();
        for i in 0..R {
            for j in 0..C {
                out.0[j][i] = self.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v = *v * s;
            }
        }
        out
    }

    /// Largest absolute entry.
    pub fn amax(&self) -> T {
        self.0.iter().flat_map(|r| r.iter()).fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flat_map(|r| r.iter()).all(|v| v.is_finite())
    }
}

impl<T: Scalar, const N: usize> Mat<T, N, N> {
    pub fn identity() -> Self {
        let mut out = Self::zeros();
        for i in 0..N {
            out.0[i][i] = T::one();
        }
        out
    }

    pub fn from_diagonal(d: &[T; N]) -> Self {
        let mut out = Self::zeros();
        for i in 0..N {
            out.0[i][i] = d[i];
        }
        out
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrize(&self) -> Self {
        let half = T::lit(0.5);
        let mut out = *self;
        for i in 0..N {
            for j in (i + 1)..N {
                let m = (self.0[i][j] + self.0[j][i]) * half;
                out.0[i][j] = m;
                out.0[j][i] = m;
            }
        }
        out
    }

    /// Cholesky factor `L` with `A = L L^T`, or `None` if `A` is not
    /// numerically positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        let mut l = Self::zeros();
        for j in 0..N {
            let mut d = self.0[j][j];
            for k in 0..j {
                d = d - l.0[j][k] * l.0[j][k];
            }
            if !(d > T::zero()) {
                return None;
            }
            let dj = d.sqrt();
            l.0[j][j] = dj;
            for i in (j + 1)..N {
                let mut s = self.0[i][j];
                for k in 0..j {
                    s = s - l.0[i][k] * l.0[j][k];
                }
                l.0[i][j] = s / dj;
            }
        }
        Some(l)
    }

    /// Checks positive semi-definiteness by attempting a Cholesky
    /// factorization of `A + tol * (1 + max|a_ii|) I`.
    pub fn is_psd(&self, tol: T) -> bool {
        let scale = (0..N).fold(T::zero(), |m, i| m.max(self.0[i][i].abs()));
        let shift = tol * (T::one() + scale);
        let mut shifted = self.symmetrize();
        for i in 0..N {
            shifted.0[i][i] = shifted.0[i][i] + shift;
        }
        shifted.cholesky().is_some()
    }
}

impl<T: Scalar, const N: usize> Vector<T, N> {
    pub fn from_array(a: [T; N]) -> Self {
        let mut out = Self::zeros();
        for i in 0..N {
            out.0[i][0] = a[i];
        }
        out
    }

    pub fn to_array(&self) -> [T; N] {
        let mut out = [T::zero(); N];
        for i in 0..N {
            out[i] = self.0[i][0];
        }
        out
    }

    pub fn dot(&self, other: &Self) -> T {
        (0..N).fold(T::zero(), |s, i| s + self.0[i][0] * other.0[i][0])
    }

    /// Outer product `self * other^T`.
    pub fn outer<const M: usize>(&self, other: &Vector<T, M>) -> Mat<T, N, M> {
        let mut out = Mat::<T, N, M>::zeros();
        for i in 0..N {
            for j in 0..M {
                out.0[i][j] = self.0[i][0] * other.0[j][0];
            }
        }
        out
    }
}

impl<T, const N: usize> Index<usize> for Vector<T, N> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i][0]
    }
}

impl<T, const N: usize> IndexMut<usize> for Vector<T, N> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i][0]
    }
}

impl<T: Scalar, const R: usize, const K: usize, const C: usize> Mul<Mat<T, K, C>> for Mat<T, R, K> {
    type Output = Mat<T, R, C>;
    fn mul(self, rhs: Mat<T, K, C>) -> Mat<T, R, C> {
        let mut out = Mat::<T, R, C>::zeros();
        for i in 0..R {
            for k in 0..K {
                let a = self.0[i][k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..C {
                    out.0[i][j] = out.0[i][j] + a * rhs.0[k][j];
                }
            }
        }
        out
    }
}

impl<T: Scalar, const R: usize, const C: usize> Add for Mat<T, R, C> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..R {
            for j in 0..C {
                out.0[i][j] = out.0[i][j] + rhs.0[i][j];
            }
        }
        out
    }
}

impl<T: Scalar, const R: usize, const C: usize> Sub for Mat<T, R, C> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..R {
            for j in 0..C {
                out.0[i][j] = out.0[i][j] - rhs.0[i][j];
            }
        }
        out
    }
}

impl<T: Scalar, const R: usize, const C: usize> Neg for Mat<T, R, C> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

/// Inverse of a symmetric positive definite 2x2 matrix.
pub fn inverse_spd2<T: Scalar>(m: &Mat<T, 2, 2>) -> Option<Mat<T, 2, 2>> {
    let a = m.0[0][0];
    let b = (m.0[0][1] + m.0[1][0]) * T::lit(0.5);
    let d = m.0[1][1];
    let det = a * d - b * b;
    if !(a > T::zero()) || !(det > T::zero()) {
        return None;
    }
    Some(Mat([[d / det, -b / det], [-b / det, a / det]]))
}
