//! Row-major matrix kernels. These carry essentially all of the training
//! flops (dense products plus im2col'd convolutions), so the f32 entry
//! points dispatch to AVX2-compiled copies of the same loops when the CPU
//! supports it. Results are deterministic on a given machine: dispatch
//! depends only on CPU features, never on thread count.

use std::ops::{Add, AddAssign, Mul};

pub(crate) trait Elem:
    Copy + Add<Output = Self> + Mul<Output = Self> + AddAssign + Send + Sync
{
    const ZERO: Self;
}
impl Elem for f32 {
    const ZERO: Self = 0.0;
}
impl Elem for f64 {
    const ZERO: Self = 0.0;
}

/// c += a * b with a: m×k, b: k×n, c: m×n.
///
/// i-k-j loop order keeps the inner loop contiguous over both `b` and `c`;
/// rows are processed in blocks of four so each loaded `b` row feeds four
/// accumulator rows.
#[inline(always)]
fn matmul_acc_impl<T: Elem>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, rest) = rest.split_at_mut(n);
        let c3 = &mut rest[..n];
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        for p in 0..k {
            let (v0, v1, v2, v3) = (a0[p], a1[p], a2[p], a3[p]);
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for p in 0..k {
            let v = arow[p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += v * brow[j];
            }
        }
        i += 1;
    }
}

/// c += a * b^T with a: m×k, b: n×k, c: m×n. Inner loops are row dot
/// products; eight independent partial accumulators make the reduction
/// vectorizable without reassociating a single serial sum.
#[inline(always)]
fn matmul_nt_acc_impl<T: Elem>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let k8 = k - k % 8;
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut lanes = [T::ZERO; 8];
            for (ca, cb) in arow[..k8].chunks_exact(8).zip(brow[..k8].chunks_exact(8)) {
                lanes[0] += ca[0] * cb[0];
                lanes[1] += ca[1] * cb[1];
                lanes[2] += ca[2] * cb[2];
                lanes[3] += ca[3] * cb[3];
                lanes[4] += ca[4] * cb[4];
                lanes[5] += ca[5] * cb[5];
                lanes[6] += ca[6] * cb[6];
                lanes[7] += ca[7] * cb[7];
            }
            let mut acc = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
                + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
            for (&x, &y) in arow[k8..].iter().zip(&brow[k8..]) {
                acc += x * y;
            }
            crow[j] += acc;
        }
    }
}

/// c += a^T * b with a: k×m, b: k×n, c: m×n. Same traversal shape as
/// `matmul_acc_impl` with `a` read column-wise via its rows.
#[inline(always)]
fn matmul_tn_acc_impl<T: Elem>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let v = arow[i];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += v * brow[j];
            }
        }
    }
}

pub(crate) fn matmul_acc<T: Elem>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    matmul_acc_impl(a, b, c, m, k, n);
}
pub(crate) fn matmul_nt_acc<T: Elem>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    matmul_nt_acc_impl(a, b, c, m, k, n);
}
pub(crate) fn matmul_tn_acc<T: Elem>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    matmul_tn_acc_impl(a, b, c, m, k, n);
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::*;

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn matmul_acc_avx2(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
        matmul_acc_impl(a, b, c, m, k, n);
    }
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn matmul_nt_acc_avx2(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
        matmul_nt_acc_impl(a, b, c, m, k, n);
    }
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn matmul_tn_acc_avx2(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
        matmul_tn_acc_impl(a, b, c, m, k, n);
    }

    pub(super) fn have_avx2() -> bool {
        use std::sync::OnceLock;
        static AVX2: OnceLock<bool> = OnceLock::new();
        *AVX2.get_or_init(|| {
            std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        })
    }
}

pub(crate) fn matmul_acc_f32(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if x86::have_avx2() {
        // Safety: feature presence checked at runtime.
        unsafe { x86::matmul_acc_avx2(a, b, c, m, k, n) };
        return;
    }
    matmul_acc_impl(a, b, c, m, k, n);
}

pub(crate) fn matmul_nt_acc_f32(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if x86::have_avx2() {
        unsafe { x86::matmul_nt_acc_avx2(a, b, c, m, k, n) };
        return;
    }
    matmul_nt_acc_impl(a, b, c, m, k, n);
}

pub(crate) fn matmul_tn_acc_f32(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if x86::have_avx2() {
        unsafe { x86::matmul_tn_acc_avx2(a, b, c, m, k, n) };
        return;
    }
    matmul_tn_acc_impl(a, b, c, m, k, n);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn variants_agree_with_reference() {
        let (m, k, n) = (5, 7, 6);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.21).cos()).collect();
        let want = reference(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut c, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a * b^T where b is stored transposed (n×k).
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        matmul_nt_acc(&a, &bt, &mut c, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T * b where a is stored transposed (k×m).
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        matmul_tn_acc(&at, &b, &mut c, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_dispatch_matches_scalar_path() {
        let (m, k, n) = (9, 11, 13);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.13).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.29).cos()).collect();
        let mut c0 = vec![0.0f32; m * n];
        let mut c1 = vec![0.0f32; m * n];
        matmul_acc(&a, &b, &mut c0, m, k, n);
        matmul_acc_f32(&a, &b, &mut c1, m, k, n);
        for (x, y) in c0.iter().zip(&c1) {
            // FMA contraction may differ by an ulp or two.
            assert!((x - y).abs() <= 1e-4 * x.abs().max(1.0));
        }
    }
}
