//! Global-local association graph. Every local vector is concatenated with
//! the global vector to form the n graph nodes; one static fully connected
//! layer mixes them through a fixed uniform row-stochastic affinity matrix
//! and a learnable state-update matrix: S = LReLU(A · V · W_s).

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::scaled_uniform;
use crate::tensor::{Scalar, Tape, Tensor, TensorId};

#[derive(Clone, Debug)]
pub struct GlaParams {
    w_s: Tensor,
    /// Learnable affinity variant; `None` uses the fixed uniform matrix.
    affinity: Option<Tensor>,
}

pub struct GlaIds {
    pub w_s: TensorId,
    pub affinity: TensorId,
}

impl GlaParams {
    pub fn init(rng: &mut impl Rng, d_w: usize, n_groups: usize, learnable_affinity: bool) -> Result<Self> {
        Ok(GlaParams {
            w_s: scaled_uniform(rng, vec![2 * d_w, d_w], 2 * d_w, 0.1),
            affinity: if learnable_affinity {
                Some(build_affinity(n_groups)?.with_grad())
            } else {
                None
            },
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("gla.w_s".to_string(), &self.w_s)];
        if let Some(a) = &self.affinity {
            out.push(("gla.affinity".to_string(), a));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_s];
        if let Some(a) = &mut self.affinity {
            out.push(a);
        }
        out
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, n_groups: usize) -> Result<GlaIds> {
        let w_s = tape.leaf_cast(&self.w_s);
        let affinity = match &self.affinity {
            Some(a) => tape.leaf_cast(a),
            None => tape.leaf_cast(&build_affinity(n_groups)?),
        };
        Ok(GlaIds { w_s, affinity })
    }
}

/// Uniform row-stochastic affinity with self-loops: every entry is 1/n.
pub fn build_affinity(n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Config("affinity matrix needs n >= 1 nodes".into()));
    }
    Ok(Tensor::filled(vec![n, n], 1.0 / n as f32))
}

/// One propagation step: V = [locals ; gf] per row, S = LReLU(A · V · W_s).
pub fn graph_forward<T: Scalar>(
    tape: &mut Tape<T>,
    locals: TensorId,
    gf: TensorId,
    ids: &GlaIds,
    slope: f64,
) -> Result<TensorId> {
    let ls = tape.shape(locals).to_vec();
    let gs = tape.shape(gf).to_vec();
    if ls.len() != 2 || gs != [ls[1]] {
        return Err(Error::dimension(
            "graph_forward",
            format!("locals {ls:?} with gf {gs:?}"),
        ));
    }
    let n = ls[0];
    let rep = tape.repeat_rows(gf, n)?;
    let v = tape.concat_cols(locals, rep)?;
    let mixed = tape.matmul(ids.affinity, v)?;
    let s = tape.matmul(mixed, ids.w_s)?;
    tape.leaky_relu(s, slope)
}

/// GLA bypass: no affinity mixing and no global vector; the global slot of
/// every node is zero-filled so W_s keeps its shape, S = LReLU([locals;0] · W_s).
pub fn no_graph_forward<T: Scalar>(
    tape: &mut Tape<T>,
    locals: TensorId,
    ids: &GlaIds,
    slope: f64,
) -> Result<TensorId> {
    let ls = tape.shape(locals).to_vec();
    let zeros = tape.leaf(Tensor::zeros(vec![ls[0], ls[1]]));
    let v = tape.concat_cols(locals, zeros)?;
    let s = tape.matmul(v, ids.w_s)?;
    tape.leaky_relu(s, slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affinity_examples() {
        assert_eq!(build_affinity(1).unwrap().data(), &[1.0]);
        assert_eq!(build_affinity(2).unwrap().data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(build_affinity(0).is_err());
        for n in 1..=64 {
            let a = build_affinity(n).unwrap();
            for row in a.data().chunks(n) {
                let sum: f32 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    fn ids_for(tape: &mut Tape<f32>, d_w: usize, n: usize, seed: u64) -> GlaIds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GlaParams::init(&mut rng, d_w, n, false).unwrap().bind(tape, n).unwrap()
    }

    #[test]
    fn single_node_graph_is_a_plain_projection() {
        let mut tape: Tape<f32> = Tape::new();
        let ids = ids_for(&mut tape, 2, 1, 3);
        let locals = tape.leaf(Tensor::new(vec![1, 2], vec![0.4, -0.6]).unwrap());
        let gf = tape.leaf(Tensor::new(vec![2], vec![1.0, 0.5]).unwrap());
        let s = graph_forward(&mut tape, locals, gf, &ids, 0.01).unwrap();

        let v = tape.leaf(Tensor::new(vec![1, 4], vec![0.4, -0.6, 1.0, 0.5]).unwrap());
        let direct = tape.matmul(v, ids.w_s).unwrap();
        let direct = tape.leaky_relu(direct, 0.01).unwrap();
        assert_eq!(tape.data(s), tape.data(direct));
    }

    #[test]
    fn identical_locals_produce_identical_rows() {
        let mut tape: Tape<f32> = Tape::new();
        let ids = ids_for(&mut tape, 3, 4, 5);
        let row = vec![0.2f32, -0.4, 0.9];
        let locals = tape.leaf(Tensor::new(vec![4, 3], row.repeat(4)).unwrap());
        let gf = tape.leaf(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let s = graph_forward(&mut tape, locals, gf, &ids, 0.01).unwrap();
        let out = tape.data(s);
        for r in 1..4 {
            assert_eq!(&out[..3], &out[r * 3..(r + 1) * 3]);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut tape: Tape<f32> = Tape::new();
        let ids = ids_for(&mut tape, 2, 2, 7);
        let locals = tape.leaf(Tensor::zeros(vec![2, 2]));
        let bad_gf = tape.leaf(Tensor::zeros(vec![3]));
        assert!(graph_forward(&mut tape, locals, bad_gf, &ids, 0.01).is_err());
    }

    #[test]
    fn zeroing_gf_changes_every_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape: Tape<f32> = Tape::new();
        let ids = ids_for(&mut tape, 2, 3, 11);
        let data: Vec<f32> = (0..6).map(|_| rand::Rng::random_range(&mut rng, 0.1..1.0)).collect();
        let locals = tape.leaf(Tensor::new(vec![3, 2], data).unwrap());
        let gf = tape.leaf(Tensor::new(vec![2], vec![0.8, -0.9]).unwrap());
        let zero_gf = tape.leaf(Tensor::zeros(vec![2]));
        let with = graph_forward(&mut tape, locals, gf, &ids, 0.01).unwrap();
        let without = graph_forward(&mut tape, locals, zero_gf, &ids, 0.01).unwrap();
        for r in 0..3 {
            let a = &tape.data(with)[r * 2..(r + 1) * 2];
            let b = &tape.data(without)[r * 2..(r + 1) * 2];
            assert_ne!(a, b, "row {r} ignored the global vector");
        }
    }

    #[test]
    fn bypass_keeps_shapes_and_drops_mixing() {
        let mut tape: Tape<f32> = Tape::new();
        let ids = ids_for(&mut tape, 2, 3, 13);
        let locals = tape.leaf(Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 2.0]).unwrap());
        let s = no_graph_forward(&mut tape, locals, &ids, 0.01).unwrap();
        assert_eq!(tape.shape(s), &[3, 2]);
        // distinct local rows must stay distinct without uniform mixing
        let out = tape.data(s);
        assert_ne!(&out[..2], &out[2..4]);
    }
}
