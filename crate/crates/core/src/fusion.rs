//! Multi-layer feature enhancement fusion. The high and low pyramid scales
//! are projected to the mid channel width with 1×1 convolutions, resampled
//! to the mid resolution (average-pool down, nearest-neighbour up), and
//! fused with the mid map by elementwise multiplication. The three terms
//! are concatenated in the fixed order (mid, mid⊙lo, mid⊙hi) and projected
//! to n·d_w channels.

use rand::Rng;

use crate::backbone::FeaturePyramid;
use crate::error::{Error, Result};
use crate::init::{he_uniform, zeros_param};
use crate::tensor::{PoolMode, PoolWindow, Scalar, Tape, Tensor, TensorId};

#[derive(Clone, Debug)]
struct Conv1x1 {
    w: Tensor,
    b: Tensor,
}

impl Conv1x1 {
    fn init(rng: &mut impl Rng, cin: usize, cout: usize) -> Self {
        Conv1x1 {
            w: he_uniform(rng, vec![cout, cin, 1, 1], cin),
            b: zeros_param(vec![cout]),
        }
    }

    /// Gating projections start open: bias 1 makes the multiplicative
    /// fusion a pass-through at initialization.
    fn init_open(rng: &mut impl Rng, cin: usize, cout: usize) -> Self {
        Conv1x1 {
            w: he_uniform(rng, vec![cout, cin, 1, 1], cin),
            b: Tensor::filled(vec![cout], 1.0).with_grad(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    proj_hi: Conv1x1,
    proj_lo: Conv1x1,
    /// Projection of the concatenated (mid, mid⊙lo, mid⊙hi) stack.
    out: Conv1x1,
    /// Projection of the raw mid map, used when fusion is ablated away.
    bypass: Conv1x1,
}

pub struct FusionIds {
    pub proj_hi: (TensorId, TensorId),
    pub proj_lo: (TensorId, TensorId),
    pub out: (TensorId, TensorId),
    pub bypass: (TensorId, TensorId),
}

impl FusionParams {
    pub fn init(rng: &mut impl Rng, channels: [usize; 3], fused_channels: usize) -> Self {
        let [c1, c2, c3] = channels;
        FusionParams {
            proj_hi: Conv1x1::init_open(rng, c1, c2),
            proj_lo: Conv1x1::init_open(rng, c3, c2),
            out: Conv1x1::init(rng, 3 * c2, fused_channels),
            bypass: Conv1x1::init(rng, c2, fused_channels),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("fusion.proj_hi.w".into(), &self.proj_hi.w),
            ("fusion.proj_hi.b".into(), &self.proj_hi.b),
            ("fusion.proj_lo.w".into(), &self.proj_lo.w),
            ("fusion.proj_lo.b".into(), &self.proj_lo.b),
            ("fusion.out.w".into(), &self.out.w),
            ("fusion.out.b".into(), &self.out.b),
            ("fusion.bypass.w".into(), &self.bypass.w),
            ("fusion.bypass.b".into(), &self.bypass.b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.proj_hi.w,
            &mut self.proj_hi.b,
            &mut self.proj_lo.w,
            &mut self.proj_lo.b,
            &mut self.out.w,
            &mut self.out.b,
            &mut self.bypass.w,
            &mut self.bypass.b,
        ]
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> FusionIds {
        let pair = |c: &Conv1x1, tape: &mut Tape<T>| (tape.leaf_cast(&c.w), tape.leaf_cast(&c.b));
        FusionIds {
            proj_hi: pair(&self.proj_hi, tape),
            proj_lo: pair(&self.proj_lo, tape),
            out: pair(&self.out, tape),
            bypass: pair(&self.bypass, tape),
        }
    }
}

/// Resample a C×H×W map to `target` spatial size. Ratios must be powers of
/// two; downsampling runs repeated 2×2 average pools, upsampling repeats
/// nearest neighbours.
fn resample_to<T: Scalar>(tape: &mut Tape<T>, mut x: TensorId, target: (usize, usize)) -> Result<TensorId> {
    loop {
        let s = tape.shape(x);
        let (h, w) = (s[1], s[2]);
        if (h, w) == target {
            return Ok(x);
        }
        let ratio_err = || {
            Error::Config(format!(
                "resample ratio from {h}x{w} to {}x{} is not a power of 2",
                target.0, target.1
            ))
        };
        if h > target.0 && w > target.1 {
            if h % 2 != 0 || w % 2 != 0 || h / 2 < target.0 || w / 2 < target.1 {
                return Err(ratio_err());
            }
            x = tape.spatial_pool(x, PoolMode::Avg, PoolWindow::Window { k: 2, stride: 2 })?;
        } else if h < target.0 && w < target.1 {
            if h * 2 > target.0 || w * 2 > target.1 {
                return Err(ratio_err());
            }
            x = tape.upsample_nearest2(x)?;
        } else {
            return Err(ratio_err());
        }
    }
}

/// Fuse one auxiliary scale into the mid-scale map: 1×1-project `b` to the
/// mid channel width, resample to the mid resolution, then gate `a`
/// elementwise.
pub fn fuse_pair<T: Scalar>(
    tape: &mut Tape<T>,
    a: TensorId,
    b: TensorId,
    proj: (TensorId, TensorId),
) -> Result<TensorId> {
    let target = {
        let s = tape.shape(a);
        (s[1], s[2])
    };
    let projected = tape.conv2d(b, proj.0, 1, 0)?;
    let biased = tape.add_channel_bias(projected, proj.1)?;
    let aligned = resample_to(tape, biased, target)?;
    tape.mul(a, aligned)
}

/// Full fusion: (mid, mid⊙lo, mid⊙hi) concatenated and projected to the
/// grouped channel width, with a leaky-relu on top.
pub fn fuse_all<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &FusionIds,
    p: &FeaturePyramid,
    slope: f64,
) -> Result<TensorId> {
    let with_lo = fuse_pair(tape, p.f_mid, p.f_lo, ids.proj_lo)?;
    let with_hi = fuse_pair(tape, p.f_mid, p.f_hi, ids.proj_hi)?;
    let cat = tape.concat_channels(&[p.f_mid, with_lo, with_hi])?;
    let out = tape.conv2d(cat, ids.out.0, 1, 0)?;
    let out = tape.add_channel_bias(out, ids.out.1)?;
    tape.leaky_relu(out, slope)
}

/// Fusion bypass: project the raw mid-scale map to the grouped width.
pub fn project_mid_only<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &FusionIds,
    f_mid: TensorId,
    slope: f64,
) -> Result<TensorId> {
    let out = tape.conv2d(f_mid, ids.bypass.0, 1, 0)?;
    let out = tape.add_channel_bias(out, ids.bypass.1)?;
    tape.leaky_relu(out, slope)
}
