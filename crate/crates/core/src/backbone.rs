//! Small trainable convolutional backbone emitting a three-scale feature
//! pyramid. Each stage is (conv 3×3, leaky-relu) ×2 followed by a 2×2
//! max-pool; the pyramid taps the pooled output of every stage, so a
//! 32×32 input yields 16/8/4 maps with spatial ratios 1 : 1/2 : 1/4.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{he_uniform, zeros_param};
use crate::tensor::{PoolMode, PoolWindow, Scalar, Tape, Tensor, TensorId};

/// Tape handles of the three backbone scales for one image.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub f_hi: TensorId,
    pub f_mid: TensorId,
    pub f_lo: TensorId,
}

#[derive(Clone, Debug)]
struct ConvLayer {
    w: Tensor,
    b: Tensor,
}

impl ConvLayer {
    fn init(rng: &mut impl Rng, cin: usize, cout: usize) -> Self {
        ConvLayer {
            w: he_uniform(rng, vec![cout, cin, 3, 3], cin * 9),
            b: zeros_param(vec![cout]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BackboneParams {
    stages: Vec<[ConvLayer; 2]>,
}

pub struct BackboneIds {
    pub stages: Vec<[(TensorId, TensorId); 2]>,
}

impl BackboneParams {
    pub fn init(rng: &mut impl Rng, channels: [usize; 3]) -> Self {
        let mut stages = Vec::with_capacity(3);
        let mut cin = 3;
        for &cout in &channels {
            stages.push([
                ConvLayer::init(rng, cin, cout),
                ConvLayer::init(rng, cout, cout),
            ]);
            cin = cout;
        }
        BackboneParams { stages }
    }

    /// Parameters in a stable order with their checkpoint names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (si, stage) in self.stages.iter().enumerate() {
            for (li, layer) in stage.iter().enumerate() {
                out.push((format!("backbone.s{}.conv{}.w", si + 1, li + 1), &layer.w));
                out.push((format!("backbone.s{}.conv{}.b", si + 1, li + 1), &layer.b));
            }
        }
        out
    }

    /// Mutable parameter references in the same order as [`Self::named`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            for layer in stage {
                out.push(&mut layer.w);
                out.push(&mut layer.b);
            }
        }
        out
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> BackboneIds {
        BackboneIds {
            stages: self
                .stages
                .iter()
                .map(|stage| {
                    [
                        (tape.leaf_cast(&stage[0].w), tape.leaf_cast(&stage[0].b)),
                        (tape.leaf_cast(&stage[1].w), tape.leaf_cast(&stage[1].b)),
                    ]
                })
                .collect(),
        }
    }
}

/// Run the backbone over a 3×S×S image (S divisible by 8) and tap the
/// pooled output of each stage.
pub fn forward_pyramid<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &BackboneIds,
    image: TensorId,
    slope: f64,
) -> Result<FeaturePyramid> {
    let shape = tape.shape(image).to_vec();
    if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] || shape[1] % 8 != 0 {
        return Err(Error::dimension(
            "forward_pyramid",
            format!("need 3×S×S input with S divisible by 8, got {shape:?}"),
        ));
    }
    let mut x = image;
    let mut taps = Vec::with_capacity(3);
    for stage in &ids.stages {
        for &(w, b) in stage {
            x = tape.conv2d(x, w, 1, 1)?;
            x = tape.add_channel_bias(x, b)?;
            x = tape.leaky_relu(x, slope)?;
        }
        x = tape.spatial_pool(x, PoolMode::Max, PoolWindow::Window { k: 2, stride: 2 })?;
        taps.push(x);
    }
    Ok(FeaturePyramid {
        f_hi: taps[0],
        f_mid: taps[1],
        f_lo: taps[2],
    })
}
