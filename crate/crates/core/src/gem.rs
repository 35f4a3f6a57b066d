//! Global enhancement. Per-channel average and max descriptors of the
//! deepest map feed a shared one-hidden-layer MLP; the summed outputs gate
//! the channels (through a sigmoid by default), and a 1×1 screening
//! convolution plus global max-pool compress the gated map into a single
//! d_w-dimensional global semantic vector.

use rand::Rng;

use crate::error::Result;
use crate::init::{he_uniform, zeros_param};
use crate::tensor::{PoolMode, PoolWindow, Scalar, Tape, Tensor, TensorId};

/// Tape handles for the spatially pooled channel statistics.
#[derive(Clone, Copy, Debug)]
pub struct ChannelDescriptor {
    pub avg: TensorId,
    pub max: TensorId,
}

#[derive(Clone, Debug)]
pub struct GemParams {
    mlp_w1: Tensor,
    mlp_b1: Tensor,
    mlp_w2: Tensor,
    mlp_b2: Tensor,
    screen_w: Tensor,
    screen_b: Tensor,
}

pub struct GemIds {
    pub mlp_w1: TensorId,
    pub mlp_b1: TensorId,
    pub mlp_w2: TensorId,
    pub mlp_b2: TensorId,
    pub screen_w: TensorId,
    pub screen_b: TensorId,
}

impl GemParams {
    pub fn init(rng: &mut impl Rng, c3: usize, d_w: usize) -> Self {
        let hidden = (c3 / 4).max(1);
        GemParams {
            mlp_w1: he_uniform(rng, vec![c3, hidden], c3),
            mlp_b1: zeros_param(vec![hidden]),
            mlp_w2: he_uniform(rng, vec![hidden, c3], hidden),
            mlp_b2: zeros_param(vec![c3]),
            screen_w: he_uniform(rng, vec![d_w, c3, 1, 1], c3),
            screen_b: zeros_param(vec![d_w]),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("gem.mlp.w1".into(), &self.mlp_w1),
            ("gem.mlp.b1".into(), &self.mlp_b1),
            ("gem.mlp.w2".into(), &self.mlp_w2),
            ("gem.mlp.b2".into(), &self.mlp_b2),
            ("gem.screen.w".into(), &self.screen_w),
            ("gem.screen.b".into(), &self.screen_b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.screen_w,
            &mut self.screen_b,
        ]
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> GemIds {
        GemIds {
            mlp_w1: tape.leaf_cast(&self.mlp_w1),
            mlp_b1: tape.leaf_cast(&self.mlp_b1),
            mlp_w2: tape.leaf_cast(&self.mlp_w2),
            mlp_b2: tape.leaf_cast(&self.mlp_b2),
            screen_w: tape.leaf_cast(&self.screen_w),
            screen_b: tape.leaf_cast(&self.screen_b),
        }
    }
}

/// Per-channel global average and max of the deep map.
pub fn channel_descriptor<T: Scalar>(tape: &mut Tape<T>, f_lo: TensorId) -> Result<ChannelDescriptor> {
    Ok(ChannelDescriptor {
        avg: tape.spatial_pool(f_lo, PoolMode::Avg, PoolWindow::Global)?,
        max: tape.spatial_pool(f_lo, PoolMode::Max, PoolWindow::Global)?,
    })
}

fn shared_mlp<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &GemIds,
    x: TensorId,
    slope: f64,
) -> Result<TensorId> {
    let c = tape.shape(x)[0];
    let row = tape.reshape(x, vec![1, c])?;
    let h = tape.matmul(row, ids.mlp_w1)?;
    let h = tape.add_row_bias(h, ids.mlp_b1)?;
    let h = tape.leaky_relu(h, slope)?;
    let o = tape.matmul(h, ids.mlp_w2)?;
    tape.add_row_bias(o, ids.mlp_b2)
}

/// Gate = sigmoid(MLP(avg) + MLP(max)) applied channel-wise to the map.
/// `gate_sigmoid = false` leaves the summed MLP outputs unsquashed.
pub fn channel_enhance<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &GemIds,
    d: &ChannelDescriptor,
    f_lo: TensorId,
    gate_sigmoid: bool,
    slope: f64,
) -> Result<TensorId> {
    let from_avg = shared_mlp(tape, ids, d.avg, slope)?;
    let from_max = shared_mlp(tape, ids, d.max, slope)?;
    let mut gate = tape.add(from_avg, from_max)?;
    if gate_sigmoid {
        gate = tape.sigmoid(gate);
    }
    let c = tape.shape(f_lo)[0];
    let gate = tape.reshape(gate, vec![c])?;
    tape.scale_channels(f_lo, gate)
}

/// Convolutional screening to d_w channels followed by a global spatial
/// max-pool.
pub fn global_semantic<T: Scalar>(tape: &mut Tape<T>, ids: &GemIds, enhanced: TensorId) -> Result<TensorId> {
    let screened = tape.conv2d(enhanced, ids.screen_w, 1, 0)?;
    let screened = tape.add_channel_bias(screened, ids.screen_b)?;
    tape.spatial_pool(screened, PoolMode::Max, PoolWindow::Global)
}

/// GEM bypass: screen and pool the raw deep map without any gating.
pub fn screen_only<T: Scalar>(tape: &mut Tape<T>, ids: &GemIds, f_lo: TensorId) -> Result<TensorId> {
    global_semantic(tape, ids, f_lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed_ids(tape: &mut Tape<f32>, c3: usize, d_w: usize) -> GemIds {
        let hidden = (c3 / 4).max(1);
        GemIds {
            mlp_w1: tape.leaf(Tensor::zeros(vec![c3, hidden])),
            mlp_b1: tape.leaf(Tensor::zeros(vec![hidden])),
            mlp_w2: tape.leaf(Tensor::zeros(vec![hidden, c3])),
            mlp_b2: tape.leaf(Tensor::zeros(vec![c3])),
            screen_w: tape.leaf(Tensor::zeros(vec![d_w, c3, 1, 1])),
            screen_b: tape.leaf(Tensor::zeros(vec![d_w])),
        }
    }

    #[test]
    fn descriptor_of_constant_map_has_equal_avg_and_max() {
        let mut tape: Tape<f32> = Tape::new();
        let f = tape.leaf(Tensor::filled(vec![3, 2, 2], 0.7));
        let d = channel_descriptor(&mut tape, f).unwrap();
        assert_eq!(tape.data(d.avg), &[0.7, 0.7, 0.7]);
        assert_eq!(tape.data(d.max), &[0.7, 0.7, 0.7]);
    }

    #[test]
    fn descriptor_example_values() {
        let mut tape: Tape<f32> = Tape::new();
        let f = tape.leaf(Tensor::new(vec![1, 2, 2], vec![0.0, 0.0, 0.0, 4.0]).unwrap());
        let d = channel_descriptor(&mut tape, f).unwrap();
        assert_eq!(tape.data(d.avg), &[1.0]);
        assert_eq!(tape.data(d.max), &[4.0]);
    }

    #[test]
    fn descriptor_max_dominates_avg_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape: Tape<f32> = Tape::new();
        let data: Vec<f32> = (0..48).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let f = tape.leaf(Tensor::new(vec![3, 4, 4], data).unwrap());
        let d = channel_descriptor(&mut tape, f).unwrap();
        for (a, m) in tape.data(d.avg).iter().zip(tape.data(d.max)) {
            assert!(m >= a);
        }
    }

    #[test]
    fn zero_mlp_means_half_gate() {
        let mut tape: Tape<f32> = Tape::new();
        let ids = zeroed_ids(&mut tape, 4, 2);
        let f = tape.leaf(Tensor::filled(vec![4, 2, 2], 2.0));
        let d = channel_descriptor(&mut tape, f).unwrap();
        let enhanced = channel_enhance(&mut tape, &ids, &d, f, true, 0.01).unwrap();
        for &v in tape.data(enhanced) {
            assert!((v - 1.0).abs() < 1e-6, "0.5 * 2.0 expected, got {v}");
        }
    }

    #[test]
    fn zero_map_stays_zero_whatever_the_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape: Tape<f32> = Tape::new();
        let params = GemParams::init(&mut rng, 4, 2);
        let ids = params.bind(&mut tape);
        let f = tape.leaf(Tensor::zeros(vec![4, 2, 2]));
        let d = channel_descriptor(&mut tape, f).unwrap();
        let enhanced = channel_enhance(&mut tape, &ids, &d, f, true, 0.01).unwrap();
        assert!(tape.data(enhanced).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_screen_weights_yield_its_bias() {
        let mut tape: Tape<f32> = Tape::new();
        let mut ids = zeroed_ids(&mut tape, 4, 2);
        ids.screen_b = tape.leaf(Tensor::new(vec![2], vec![0.25, -0.75]).unwrap());
        let f = tape.leaf(Tensor::filled(vec![4, 3, 3], 1.5));
        let gf = global_semantic(&mut tape, &ids, f).unwrap();
        assert_eq!(tape.data(gf), &[0.25, -0.75]);
    }

    #[test]
    fn one_by_one_map_pools_to_the_screened_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut tape: Tape<f32> = Tape::new();
        let params = GemParams::init(&mut rng, 4, 3);
        let ids = params.bind(&mut tape);
        let f = tape.leaf(Tensor::new(vec![4, 1, 1], vec![0.5, -0.5, 1.0, 0.0]).unwrap());
        let screened = tape.conv2d(f, ids.screen_w, 1, 0).unwrap();
        let screened = tape.add_channel_bias(screened, ids.screen_b).unwrap();
        let gf = global_semantic(&mut tape, &ids, f).unwrap();
        assert_eq!(tape.data(gf), tape.data(screened));
    }

    #[test]
    fn gate_values_live_in_the_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut tape: Tape<f32> = Tape::new();
        let params = GemParams::init(&mut rng, 8, 2);
        let ids = params.bind(&mut tape);
        let data: Vec<f32> = (0..72).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let f = tape.leaf(Tensor::new(vec![8, 3, 3], data).unwrap());
        let d = channel_descriptor(&mut tape, f).unwrap();
        let from_avg = shared_mlp(&mut tape, &ids, d.avg, 0.01).unwrap();
        let from_max = shared_mlp(&mut tape, &ids, d.max, 0.01).unwrap();
        let summed = tape.add(from_avg, from_max).unwrap();
        let gate = tape.sigmoid(summed);
        for &v in tape.data(gate) {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn spatial_permutation_leaves_gf_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut tape: Tape<f32> = Tape::new();
        let params = GemParams::init(&mut rng, 4, 2);
        let ids = params.bind(&mut tape);
        let data: Vec<f32> = (0..16).map(|v| (v as f32 * 0.37).sin()).collect();
        let run = |tape: &mut Tape<f32>, ids: &GemIds, d: Vec<f32>| {
            let f = tape.leaf(Tensor::new(vec![4, 2, 2], d).unwrap());
            let desc = channel_descriptor(tape, f).unwrap();
            let enhanced = channel_enhance(tape, ids, &desc, f, true, 0.01).unwrap();
            let gf = global_semantic(tape, ids, enhanced).unwrap();
            tape.data(gf).to_vec()
        };
        let base = run(&mut tape, &ids, data.clone());
        // permute the four spatial positions identically in every channel
        let perm = [2usize, 0, 3, 1];
        let mut permuted = data.clone();
        for c in 0..4 {
            for (i, &p) in perm.iter().enumerate() {
                permuted[c * 4 + i] = data[c * 4 + p];
            }
        }
        let shuffled = run(&mut tape, &ids, permuted);
        for (a, b) in base.iter().zip(&shuffled) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
