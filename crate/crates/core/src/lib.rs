//! Desk-scale multi-label zero-shot tagging pipeline.
//!
//! The crate bundles a minimal tensor engine with reverse-mode automatic
//! differentiation, a small trainable backbone with multi-scale feature
//! fusion, grouped self-attention local enhancement, channel-attention
//! global enhancement, a static association graph over the group vectors,
//! a weighted pairwise ranking objective, retrieval metrics, a synthetic
//! zero-shot benchmark generator, and a training/evaluation harness.

pub mod backbone;
pub mod check;
pub mod config;
pub mod fusion;
pub mod gem;
pub mod gla;
pub mod harness;
pub mod init;
pub mod lid;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod synth;
pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use serde_json;
pub use tensor::{AdamState, PoolMode, PoolWindow, Scalar, Tape, Tensor, TensorId};

/// Test-support hooks for kernel throughput measurements.
#[doc(hidden)]
pub fn bench_matmul(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    <f32 as tensor::Scalar>::matmul_acc(a, b, c, m, k, n);
}

#[doc(hidden)]
pub fn bench_matmul_nt(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    <f32 as tensor::Scalar>::matmul_nt_acc(a, b, c, m, k, n);
}

#[doc(hidden)]
pub fn bench_matmul_tn(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    <f32 as tensor::Scalar>::matmul_tn_acc(a, b, c, m, k, n);
}

#[doc(hidden)]
pub fn have_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    false
}
