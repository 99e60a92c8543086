//! Forward-mode automatic differentiation with fixed-width dual numbers.
//!
//! [`Scalar`] abstracts over `f64` and [`Dual`] so geometric kernels can be
//! written once and evaluated either plainly or with derivatives attached.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Numeric type the differentiable kernels are generic over.
///
/// Discrete decisions (comparisons, sorting) must use [`Scalar::value`].
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Branch on primal values; ties pick `self`.
    fn min(self, o: Self) -> Self {
        if o.value() < self.value() {
            o
        } else {
            self
        }
    }

    fn max(self, o: Self) -> Self {
        if o.value() > self.value() {
            o
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
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
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Value plus gradient with respect to `N` seeded inputs.
#[derive(Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub val: f64,
    pub grad: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub const fn constant(val: f64) -> Self {
        Self { val, grad: [0.0; N] }
    }

    /// Independent variable number `i` (gradient is the unit vector `e_i`).
    pub fn variable(val: f64, i: usize) -> Self {
        let mut grad = [0.0; N];
        grad[i] = 1.0;
        Self { val, grad }
    }

    /// Seed every entry of `vals` as its own independent variable.
    pub fn seed(vals: [f64; N]) -> [Self; N] {
        std::array::from_fn(|i| Self::variable(vals[i], i))
    }

    #[inline]
    fn chain(self, val: f64, d: f64) -> Self {
        Self {
            val,
            grad: self.grad.map(|g| g * d),
        }
    }
}

impl<const N: usize> fmt::Debug for Dual<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual({} ; {:?})", self.val, self.grad)
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut grad = self.grad;
        for (g, h) in grad.iter_mut().zip(o.grad) {
            *g += h;
        }
        Self {
            val: self.val + o.val,
            grad,
        }
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut grad = self.grad;
        for (g, h) in grad.iter_mut().zip(o.grad) {
            *g -= h;
        }
        Self {
            val: self.val - o.val,
            grad,
        }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut grad = [0.0; N];
        for (i, g) in grad.iter_mut().enumerate() {
            *g = self.val * o.grad[i] + o.val * self.grad[i];
        }
        Self {
            val: self.val * o.val,
            grad,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.val;
        let val = self.val * inv;
        let mut grad = [0.0; N];
        for (i, g) in grad.iter_mut().enumerate() {
            *g = (self.grad[i] - val * o.grad[i]) * inv;
        }
        Self { val, grad }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            val: -self.val,
            grad: self.grad.map(|g| -g),
        }
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Self {
            val: self.val + o,
            grad: self.grad,
        }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Self {
            val: self.val - o,
            grad: self.grad,
        }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.chain(self.val * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self.chain(self.val / o, 1.0 / o)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.val
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(s, c)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(c, -s)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let v = self.val.sqrt();
        self.chain(v, 0.5 / v)
    }
    #[inline]
    fn exp(self) -> Self {
        let v = self.val.exp();
        self.chain(v, v)
    }
    /// Derivative is `signum(val)`; undefined at exactly zero, where the
    /// positive branch is taken.
    #[inline]
    fn abs(self) -> Self {
        if self.val < 0.0 {
            -self
        } else {
            self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn central_diff(f: impl Fn([f64; 2]) -> f64, x: [f64; 2]) -> [f64; 2] {
        let h = 1e-6;
        std::array::from_fn(|i| {
            let mut up = x;
            let mut dn = x;
            up[i] += h;
            dn[i] -= h;
            (f(up) - f(dn)) / (2.0 * h)
        })
    }

    fn expr<S: Scalar>(a: S, b: S) -> S {
        let t = a * b + a.sin() * b.cos() - (a / (b * b + 1.0)).exp();
        t * (a * a + b * b + 0.5).sqrt() - b.abs() * 0.3
    }

    #[test]
    fn product_rule() {
        let [a, b] = Dual::<2>::seed([3.0, -2.0]);
        let c = a * b;
        assert_eq!(c.val, -6.0);
        assert_eq!(c.grad, [-2.0, 3.0]);
    }

    #[test]
    fn quotient_rule() {
        let [a, b] = Dual::<2>::seed([3.0, 2.0]);
        let c = a / b;
        assert!((c.grad[0] - 0.5).abs() < 1e-15);
        assert!((c.grad[1] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn min_max_follow_primal() {
        let [a, b] = Dual::<2>::seed([1.0, 2.0]);
        assert_eq!(a.min(b).grad, [1.0, 0.0]);
        assert_eq!(a.max(b).grad, [0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn matches_finite_differences(a in -3.0f64..3.0, b in 0.2f64..3.0) {
            let [da, db] = Dual::<2>::seed([a, b]);
            let d = expr(da, db);
            let fd = central_diff(|x| expr(x[0], x[1]), [a, b]);
            prop_assert!((d.val - expr(a, b)).abs() < 1e-12);
            for (i, (g, f)) in d.grad.iter().zip(fd).enumerate() {
                let scale = f.abs().max(1e-3);
                prop_assert!((g - f).abs() / scale < 1e-5, "component {}: dual {} vs fd {}", i, g, f);
            }
        }
    }
}
