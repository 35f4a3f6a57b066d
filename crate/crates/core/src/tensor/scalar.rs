use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::kernels;

/// Element type of the engine. Everything is stored and trained in `f32`;
/// `f64` instantiations exist so gradient checks can run a high-precision
/// shadow of the exact same forward code.
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn from_usize(v: usize) -> Self;
    fn to_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn max_s(self, other: Self) -> Self;
    fn min_s(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// c[m*n] += a[m*k] * b[k*n], row-major.
    fn matmul_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize);
    /// c[m*n] += a[m*k] * b[n*k]^T, row-major.
    fn matmul_nt_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize);
    /// c[m*n] += a[k*m]^T * b[k*n], row-major.
    fn matmul_tn_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize);
}

macro_rules! impl_scalar_common {
    ($t:ty) => {
        const ZERO: Self = 0.0;
        const ONE: Self = 1.0;

        #[inline(always)]
        fn from_f32(v: f32) -> Self {
            v as $t
        }
        #[inline(always)]
        fn from_f64(v: f64) -> Self {
            v as $t
        }
        #[inline(always)]
        fn from_usize(v: usize) -> Self {
            v as $t
        }
        #[inline(always)]
        fn to_f64(self) -> f64 {
            self as f64
        }

        #[inline(always)]
        fn exp(self) -> Self {
            self.exp()
        }
        #[inline(always)]
        fn ln_1p(self) -> Self {
            self.ln_1p()
        }
        #[inline(always)]
        fn sqrt(self) -> Self {
            self.sqrt()
        }
        #[inline(always)]
        fn abs(self) -> Self {
            self.abs()
        }
        #[inline(always)]
        fn powi(self, n: i32) -> Self {
            self.powi(n)
        }
        #[inline(always)]
        fn max_s(self, other: Self) -> Self {
            if self >= other {
                self
            } else {
                other
            }
        }
        #[inline(always)]
        fn min_s(self, other: Self) -> Self {
            if self <= other {
                self
            } else {
                other
            }
        }
        #[inline(always)]
        fn is_finite(self) -> bool {
            <$t>::is_finite(self)
        }
    };
}

impl Scalar for f32 {
    impl_scalar_common!(f32);

    fn matmul_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize) {
        kernels::matmul_acc_f32(a, b, c, m, k, n);
    }
    fn matmul_nt_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize) {
        kernels::matmul_nt_acc_f32(a, b, c, m, k, n);
    }
    fn matmul_tn_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize) {
        kernels::matmul_tn_acc_f32(a, b, c, m, k, n);
    }
}

impl Scalar for f64 {
    impl_scalar_common!(f64);

    fn matmul_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize) {
        kernels::matmul_acc(a, b, c, m, k, n);
    }
    fn matmul_nt_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize) {
        kernels::matmul_nt_acc(a, b, c, m, k, n);
    }
    fn matmul_tn_acc(a: &[Self], b: &[Self], c: &mut [Self], m: usize, k: usize, n: usize) {
        kernels::matmul_tn_acc(a, b, c, m, k, n);
    }
}
