//! Forward-mode dual numbers.
//!
//! `Dual<S, N>` carries a value and `N` tangent components over any scalar `S`
//! that itself implements [`Real`], so duals nest: `Dual<Dual<f64, 8>, 1>`
//! gives the derivative of a temperature-dependent property with respect to
//! temperature while still tracking eight outer tangents.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar arithmetic shared by `f64` and dual numbers.
pub trait Real:
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
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(value: f64) -> Self;
    /// Primal value, stripped of every tangent level.
    fn re(&self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }
}

impl Real for f64 {
    #[inline]
    fn cst(value: f64) -> Self {
        value
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

#[derive(Clone, Copy, PartialEq)]
pub struct Dual<S, const N: usize> {
    pub re: S,
    pub eps: [S; N],
}

impl<S: Real, const N: usize> Dual<S, N> {
    pub fn constant(re: S) -> Self {
        Self {
            re,
            eps: [S::cst(0.0); N],
        }
    }

    /// A variable seeded along tangent direction `dir`.
    pub fn variable(re: S, dir: usize) -> Self {
        let mut d = Self::constant(re);
        d.eps[dir] = S::cst(1.0);
        d
    }

    #[inline]
    fn chain(self, value: S, slope: S) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * slope;
        }
        Self { re: value, eps }
    }
}

impl<S: Real, const N: usize> fmt::Debug for Dual<S, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} + {:?}ε", self.re, self.eps)
    }
}

impl<S: Real, const N: usize> Add for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps) {
            *a += b;
        }
        self
    }
}

impl<S: Real, const N: usize> Sub for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps) {
            *a -= b;
        }
        self
    }
}

impl<S: Real, const N: usize> Mul for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (i, e) in eps.iter_mut().enumerate() {
            *e = *e * rhs.re + self.re * rhs.eps[i];
        }
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<S: Real, const N: usize> Div for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.re.recip();
        let q = self.re * inv;
        let mut eps = self.eps;
        for (i, e) in eps.iter_mut().enumerate() {
            *e = (*e - q * rhs.eps[i]) * inv;
        }
        Self { re: q, eps }
    }
}

impl<S: Real, const N: usize> Neg for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in self.eps.iter_mut() {
            *e = -*e;
        }
        self
    }
}

impl<S: Real, const N: usize> Add<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.re = self.re + rhs;
        self
    }
}

impl<S: Real, const N: usize> Sub<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.re = self.re - rhs;
        self
    }
}

impl<S: Real, const N: usize> Mul<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.re = self.re * rhs;
        for e in self.eps.iter_mut() {
            *e = *e * rhs;
        }
        self
    }
}

impl<S: Real, const N: usize> Div<f64> for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<S: Real, const N: usize> AddAssign for Dual<S, N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<S: Real, const N: usize> SubAssign for Dual<S, N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<S: Real, const N: usize> MulAssign for Dual<S, N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<S: Real, const N: usize> Real for Dual<S, N> {
    #[inline]
    fn cst(value: f64) -> Self {
        Self::constant(S::cst(value))
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re.re()
    }
    fn exp(self) -> Self {
        let v = self.re.exp();
        self.chain(v, v)
    }
    fn tanh(self) -> Self {
        let v = self.re.tanh();
        self.chain(v, S::cst(1.0) - v * v)
    }
    fn sqrt(self) -> Self {
        let v = self.re.sqrt();
        self.chain(v, (v * 2.0).recip())
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        let v = self.re.powi(n);
        let slope = self.re.powi(n - 1) * f64::from(n);
        self.chain(v, slope)
    }
}

/// Derivative of a scalar function at `x`, evaluated with a one-tangent dual.
pub fn derivative<F>(f: F, x: f64) -> (f64, f64)
where
    F: Fn(Dual<f64, 1>) -> Dual<f64, 1>,
{
    let y = f(Dual::variable(x, 0));
    (y.re, y.eps[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    type D1 = Dual<f64, 1>;
    type D2 = Dual<D1, 1>;

    #[test]
    fn product_and_quotient_rules() {
        let (v, d) = derivative(|x| x * x * x / (x + 1.0), 2.0);
        assert!((v - 8.0 / 3.0).abs() < 1e-14);
        // d/dx x^3/(x+1) = (3x^2(x+1) - x^3)/(x+1)^2
        assert!((d - (12.0 * 3.0 - 8.0) / 9.0).abs() < 1e-14);
    }

    #[test]
    fn transcendental_rules() {
        let (_, d) = derivative(|x| x.tanh(), 0.3);
        let t = 0.3f64.tanh();
        assert!((d - (1.0 - t * t)).abs() < 1e-15);
        let (_, d) = derivative(|x| x.exp().sqrt(), 0.7);
        assert!((d - 0.5 * (0.35f64).exp()).abs() < 1e-14);
        let (_, d) = derivative(|x| x.powi(4), 1.5);
        assert!((d - 4.0 * 1.5f64.powi(3)).abs() < 1e-13);
    }

    #[test]
    fn nested_duals_give_second_derivative() {
        // f(x) = tanh(x)^2; f'' = 2(1-t^2)^2 - 4 t^2 (1-t^2)
        let x = 0.4;
        let inner = D1::variable(x, 0);
        let xx = D2 {
            re: inner,
            eps: [D1::constant(1.0)],
        };
        let y = xx.tanh() * xx.tanh();
        let t = x.tanh();
        let s = 1.0 - t * t;
        assert!((y.eps[0].eps[0] - (2.0 * s * s - 4.0 * t * t * s)).abs() < 1e-14);
        assert!((y.eps[0].re - 2.0 * t * s).abs() < 1e-15);
    }
}
