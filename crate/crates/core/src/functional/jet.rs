//! Second-order forward-mode jets in two directions.
//!
//! A [`HyperDual`] carries `f`, `∂f/∂ε`, `∂f/∂η` and `∂²f/∂ε∂η` for a value
//! depending on two scalar perturbation parameters. Arithmetic truncates
//! `ε² = η² = 0`, so the mixed component is exact for rational functions.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub const ZERO: HyperDual = HyperDual::constant(0.0);
    pub const ONE: HyperDual = HyperDual::constant(1.0);

    pub const fn new(re: f64, e1: f64, e2: f64, e12: f64) -> Self {
        HyperDual { re, e1, e2, e12 }
    }

    pub const fn constant(re: f64) -> Self {
        HyperDual::new(re, 0.0, 0.0, 0.0)
    }

    /// `re + c1·ε + c2·η`.
    pub const fn linear(re: f64, c1: f64, c2: f64) -> Self {
        HyperDual::new(re, c1, c2, 0.0)
    }

    pub fn recip(self) -> Self {
        let inv = 1.0 / self.re;
        let inv2 = inv * inv;
        HyperDual {
            re: inv,
            e1: -self.e1 * inv2,
            e2: -self.e2 * inv2,
            e12: 2.0 * self.e1 * self.e2 * inv2 * inv - self.e12 * inv2,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        HyperDual::new(self.re + o.re, self.e1 + o.e1, self.e2 + o.e2, self.e12 + o.e12)
    }
}

impl AddAssign for HyperDual {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for HyperDual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        HyperDual::new(self.re - o.re, self.e1 - o.e1, self.e2 - o.e2, self.e12 - o.e12)
    }
}

impl Neg for HyperDual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        HyperDual::new(-self.re, -self.e1, -self.e2, -self.e12)
    }
}

impl Mul for HyperDual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        HyperDual {
            re: self.re * o.re,
            e1: self.re * o.e1 + self.e1 * o.re,
            e2: self.re * o.e2 + self.e2 * o.re,
            e12: self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        }
    }
}

impl MulAssign for HyperDual {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Mul<f64> for HyperDual {
    type Output = Self;
    #[inline]
    fn mul(self, s: f64) -> Self {
        HyperDual::new(self.re * s, self.e1 * s, self.e2 * s, self.e12 * s)
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(ε, η) = N/D with N = 1 + 2ε + 3η, D = 2 - ε + η.
    #[test]
    fn quotient_matches_hand_derivatives() {
        let n = HyperDual::linear(1.0, 2.0, 3.0);
        let d = HyperDual::linear(2.0, -1.0, 1.0);
        let f = n / d;
        assert!((f.re - 0.5).abs() < 1e-15);
        // f_ε = (N_ε D - N D_ε)/D² = (4 + 1)/4
        assert!((f.e1 - 1.25).abs() < 1e-15);
        // f_η = (3·2 - 1·1)/4
        assert!((f.e2 - 1.25).abs() < 1e-15);
        // f_εη = -(N_ε D_η + N_η D_ε)/D² + 2 N D_ε D_η / D³
        let expected = -(2.0 * 1.0 + 3.0 * -1.0) / 4.0 + 2.0 * 1.0 * -1.0 * 1.0 / 8.0;
        assert!((f.e12 - expected).abs() < 1e-15);
    }

    #[test]
    fn constants_reduce_to_real_arithmetic() {
        let a = HyperDual::constant(3.0);
        let b = HyperDual::constant(-1.5);
        let c = (a * b - a) / (b + HyperDual::ONE);
        assert_eq!(c, HyperDual::constant((3.0 * -1.5 - 3.0) / (-0.5)));
    }
}
