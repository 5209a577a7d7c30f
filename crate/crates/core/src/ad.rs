//! Forward-mode automatic differentiation.
//!
//! Geometry, kinematics and classifier code is written once against the
//! [`Real`] trait and instantiated either with plain `f64` (values only) or
//! with [`Dual<N>`] to carry `N` directional derivatives alongside the value.
//! Branches (min/max selection, convergence tests, clamps) always compare the
//! primal values, so a dual evaluation follows exactly the same path as the
//! corresponding `f64` evaluation.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar type usable by the generic numeric code.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
{
    /// A constant (all derivatives zero).
    fn cst(v: f64) -> Self;

    /// The primal value.
    fn value(self) -> f64;

    /// Replace the value by `f` and scale every derivative by `df`.
    fn map(self, f: f64, df: f64) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn sqrt(self) -> Self {
        let s = self.value().sqrt();
        if s == 0.0 {
            self.map(0.0, 0.0)
        } else {
            self.map(s, 0.5 / s)
        }
    }

    fn sin(self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.map(s, c)
    }

    fn cos(self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.map(c, -s)
    }

    fn exp(self) -> Self {
        let e = self.value().exp();
        self.map(e, e)
    }

    fn ln(self) -> Self {
        let v = self.value();
        self.map(v.ln(), 1.0 / v)
    }

    /// Absolute value; the derivative at zero is taken from the positive side.
    fn abs(self) -> Self {
        if self.value() >= 0.0 {
            self
        } else {
            -self
        }
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid(self.value());
        self.map(s, s * (1.0 - s))
    }

    /// `ln σ(x)`, stable for large |x|.
    fn log_sigmoid(self) -> Self {
        let x = self.value();
        self.map(log_sigmoid(x), sigmoid(-x))
    }

    /// Larger of the two by value; ties keep `self`.
    fn max_v(self, other: Self) -> Self {
        if other.value() > self.value() {
            other
        } else {
            self
        }
    }

    /// Smaller of the two by value; ties keep `self`.
    fn min_v(self, other: Self) -> Self {
        if other.value() < self.value() {
            other
        } else {
            self
        }
    }
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x) = -softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn map(self, f: f64, _df: f64) -> Self {
        f
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    #[inline]
    fn log_sigmoid(self) -> Self {
        log_sigmoid(self)
    }
}

/// A dual number with `N` infinitesimal parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub const fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; N] }
    }

    /// The `i`-th seed variable with value `re`.
    pub fn variable(re: f64, i: usize) -> Self {
        let mut eps = [0.0; N];
        eps[i] = 1.0;
        Self { re, eps }
    }

    pub fn new(re: f64, eps: [f64; N]) -> Self {
        Self { re, eps }
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
    #[inline]
    fn map(self, f: f64, df: f64) -> Self {
        let mut eps = self.eps;
        for e in &mut eps {
            *e *= df;
        }
        Self { re: f, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for i in 0..N {
            self.eps[i] += rhs.eps[i];
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for i in 0..N {
            self.eps[i] -= rhs.eps[i];
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    // Product rule.
    #[allow(clippy::suspicious_arithmetic_impl)]
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let eps = std::array::from_fn(|i| self.eps[i] * rhs.re + self.re * rhs.eps[i]);
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let eps = std::array::from_fn(|i| (self.eps[i] - re * rhs.eps[i]) * inv);
        Self { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in &mut self.eps {
            *e = -*e;
        }
        self
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.re += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.re -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.re *= rhs;
        for e in &mut self.eps {
            *e *= rhs;
        }
        self
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

/// Column 3-vector over a [`Real`] scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct V3<T>(pub [T; 3]);

impl<T: Real> V3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self([x, y, z])
    }

    pub fn zeros() -> Self {
        Self([T::zero(); 3])
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Self([T::cst(v[0]), T::cst(v[1]), T::cst(v[2])])
    }

    pub fn values(&self) -> [f64; 3] {
        [self.0[0].value(), self.0[1].value(), self.0[2].value()]
    }

    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &Self) -> Self {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        Self([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn scale_f(&self, s: f64) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl<T: Real> Add for V3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> Sub for V3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

/// Row-major 3x3 matrix over a [`Real`] scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct M3<T>(pub [[T; 3]; 3]);

impl<T: Real> M3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn from_f64(m: [[f64; 3]; 3]) -> Self {
        Self(m.map(|r| r.map(T::cst)))
    }

    pub fn values(&self) -> [[f64; 3]; 3] {
        self.0.map(|r| r.map(|x| x.value()))
    }

    pub fn mul_v(&self, v: &V3<T>) -> V3<T> {
        let m = &self.0;
        V3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn tr_mul_v(&self, v: &V3<T>) -> V3<T> {
        let m = &self.0;
        V3([
            m[0][0] * v.0[0] + m[1][0] * v.0[1] + m[2][0] * v.0[2],
            m[0][1] * v.0[0] + m[1][1] * v.0[1] + m[2][1] * v.0[2],
            m[0][2] * v.0[0] + m[1][2] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn mul_m(&self, o: &Self) -> Self {
        let a = &self.0;
        let b = &o.0;
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                *c = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Self(out)
    }

    pub fn transpose(&self) -> Self {
        let a = &self.0;
        Self([
            [a[0][0], a[1][0], a[2][0]],
            [a[0][1], a[1][1], a[2][1]],
            [a[0][2], a[1][2], a[2][2]],
        ])
    }

    pub fn column(&self, j: usize) -> V3<T> {
        V3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }
}

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame<T> {
    pub rotation: M3<T>,
    pub translation: V3<T>,
}

impl<T: Real> Frame<T> {
    pub fn identity() -> Self {
        Self {
            rotation: M3::identity(),
            translation: V3::zeros(),
        }
    }

    pub fn compose(&self, o: &Self) -> Self {
        Self {
            rotation: self.rotation.mul_m(&o.rotation),
            translation: self.rotation.mul_v(&o.translation) + self.translation,
        }
    }

    pub fn apply(&self, p: &V3<T>) -> V3<T> {
        self.rotation.mul_v(p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let t = rt.mul_v(&self.translation);
        Self {
            rotation: rt,
            translation: V3([-t.0[0], -t.0[1], -t.0[2]]),
        }
    }
}

/// Intrinsic XYZ rotation `Rx(a) * Ry(b) * Rz(c)`.
pub fn euler_xyz_matrix<T: Real>(e: &V3<T>) -> M3<T> {
    let (sa, ca) = (e.0[0].sin(), e.0[0].cos());
    let (sb, cb) = (e.0[1].sin(), e.0[1].cos());
    let (sc, cc) = (e.0[2].sin(), e.0[2].cos());
    M3([
        [cb * cc, -(cb * sc), sb],
        [ca * sc + sa * sb * cc, ca * cc - sa * sb * sc, -(sa * cb)],
        [sa * sc - ca * sb * cc, sa * cc + ca * sb * sc, ca * cb],
    ])
}

/// Solve `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`. Returns `false` on an exactly singular pivot.
pub fn solve_in_place<T: Real>(a: &mut [T], b: &mut [T], n: usize) -> bool {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].value().abs() > a[piv * n + col].value().abs() {
                piv = r;
            }
        }
        if a[piv * n + col].value() == 0.0 {
            return false;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            for c in col..n {
                let v = a[col * n + c];
                a[r * n + c] -= f * v;
            }
            let bv = b[col];
            b[r] -= f * bv;
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a[col * n + c] * b[c];
        }
        b[col] = acc / a[col * n + col];
    }
    true
}

/// Determinant of a row-major `n x n` matrix by LU with partial pivoting.
pub fn determinant<T: Real>(mut a: Vec<T>, n: usize) -> T {
    let mut det = T::one();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].value().abs() > a[piv * n + col].value().abs() {
                piv = r;
            }
        }
        if a[piv * n + col].value() == 0.0 {
            return T::zero();
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            for c in col..n {
                let v = a[col * n + c];
                a[r * n + c] -= f * v;
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Dual::<2>::variable(3.0, 0);
        let y = Dual::<2>::variable(-2.0, 1);
        let f = x * y + x.sin() / y;
        assert!((f.re - (-6.0 + 3f64.sin() / -2.0)).abs() < 1e-15);
        assert!((f.eps[0] - (-2.0 + 3f64.cos() / -2.0)).abs() < 1e-15);
        assert!((f.eps[1] - (3.0 - 3f64.sin() / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        let x = Dual::<1>::variable(-800.0, 0);
        assert!((x.log_sigmoid().eps[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_at_zero_has_zero_derivative() {
        let x = Dual::<1>::variable(0.0, 0);
        assert_eq!(x.sqrt().eps[0], 0.0);
    }

    #[test]
    fn solve_and_determinant() {
        let a = vec![4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let mut m = a.clone();
        let mut b = vec![1.0, 2.0, 3.0];
        assert!(solve_in_place(&mut m, &mut b, 3));
        for r in 0..3 {
            let s: f64 = (0..3).map(|c| a[r * 3 + c] * b[c]).sum();
            assert!((s - [1.0, 2.0, 3.0][r]).abs() < 1e-12);
        }
        assert!((determinant(a, 3) - 18.0).abs() < 1e-12);
    }

    #[test]
    fn euler_matrix_is_rotation() {
        let m = euler_xyz_matrix(&V3::<f64>::from_f64([0.3, -0.7, 1.9]));
        let p = m.mul_m(&m.transpose());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p.0[i][j] - want).abs() < 1e-14);
            }
        }
    }
}
