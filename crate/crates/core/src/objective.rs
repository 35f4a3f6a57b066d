//! Training objective. Group vectors are scored against class embeddings
//! by a max over groups of dot products; positive/negative score pairs
//! feed a normalized pairwise logistic ranking loss; a per-sample weight
//! grows with label diversity; a variance regularizer acts on the group
//! vectors; the batch loss mixes the two terms with λ.

use crate::config::RegMode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, TensorId};

/// All class word vectors with the seen/unseen partition.
#[derive(Clone, Debug)]
pub struct ClassEmbeddingTable {
    vectors: Tensor,
    seen: Vec<usize>,
    unseen: Vec<usize>,
}

impl ClassEmbeddingTable {
    pub fn new(vectors: Tensor, seen: Vec<usize>, unseen: Vec<usize>) -> Result<Self> {
        if vectors.rank() != 2 {
            return Err(Error::dimension(
                "class_table",
                format!("need |C|×d_w matrix, got {:?}", vectors.shape()),
            ));
        }
        let num = vectors.shape()[0];
        let d_w = vectors.shape()[1];
        for &id in seen.iter().chain(&unseen) {
            if id >= num {
                return Err(Error::Usage(format!("class id {id} outside table of {num}")));
            }
        }
        if seen.iter().any(|s| unseen.contains(s)) {
            return Err(Error::Usage("seen and unseen class sets overlap".into()));
        }
        for (c, row) in vectors.data().chunks(d_w).enumerate() {
            let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::Usage(format!("class {c} has degenerate embedding norm {norm}")));
            }
        }
        Ok(ClassEmbeddingTable { vectors, seen, unseen })
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn d_w(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn seen(&self) -> &[usize] {
        &self.seen
    }

    pub fn unseen(&self) -> &[usize] {
        &self.unseen
    }

    pub fn all_ids(&self) -> Vec<usize> {
        (0..self.num_classes()).collect()
    }

    /// Embedding rows for the given class ids, in their order.
    pub fn rows_for(&self, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::Usage("empty class id set".into()));
        }
        let d_w = self.d_w();
        let mut data = Vec::with_capacity(ids.len() * d_w);
        for &id in ids {
            if id >= self.num_classes() {
                return Err(Error::Usage(format!("class id {id} outside table")));
            }
            data.extend_from_slice(&self.vectors.data()[id * d_w..(id + 1) * d_w]);
        }
        Tensor::new(vec![ids.len(), d_w], data)
    }
}

/// Binary multi-label target over an ordered class id list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    bits: Vec<u8>,
}

impl LabelVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Usage("label vector entries must be 0 or 1".into()));
        }
        Ok(LabelVector { bits })
    }

    pub fn from_f32(row: &[f32]) -> Result<Self> {
        let bits = row
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(0u8)
                } else if v == 1.0 {
                    Ok(1u8)
                } else {
                    Err(Error::Usage(format!("label entry {v} is not binary")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(LabelVector { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn positives(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 1).then_some(i))
            .collect()
    }

    pub fn negatives(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 0).then_some(i))
            .collect()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Population variance of the 0/1 entries: p(1-p).
    pub fn variance(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        let p = self.count_ones() as f64 / self.bits.len() as f64;
        p * (1.0 - p)
    }
}

/// score(c) = max over groups m of dot(class vector c, s[m]).
pub fn class_scores<T: Scalar>(
    tape: &mut Tape<T>,
    s: TensorId,
    table: &ClassEmbeddingTable,
    ids: &[usize],
) -> Result<TensorId> {
    let ss = tape.shape(s).to_vec();
    if ss.len() != 2 || ss[1] != table.d_w() {
        return Err(Error::dimension(
            "class_scores",
            format!("group matrix {ss:?} against d_w {}", table.d_w()),
        ));
    }
    let rows = table.rows_for(ids)?;
    let vec_id = tape.leaf_cast(&rows);
    // per-group scores: n×|ids|, then max over groups
    let per_group = tape.matmul_nt(s, vec_id)?;
    tape.max_over_rows(per_group)
}

/// Ranking loss of one sample over the seen classes. Returns `None` when
/// the sample has no positive or no negative seen label and must be
/// skipped.
pub fn rank_loss<T: Scalar>(
    tape: &mut Tape<T>,
    s: TensorId,
    y: &LabelVector,
    table: &ClassEmbeddingTable,
) -> Result<Option<TensorId>> {
    if y.len() != table.seen().len() {
        return Err(Error::Usage(format!(
            "label vector covers {} classes, table has {} seen",
            y.len(),
            table.seen().len()
        )));
    }
    let pos = y.positives();
    let neg = y.negatives();
    if pos.is_empty() || neg.is_empty() {
        return Ok(None);
    }
    let scores = class_scores(tape, s, table, table.seen())?;
    Ok(Some(tape.rank_loss(scores, &pos, &neg)?))
}

/// ω = 1 + var(y): in [1, 1.25] for binary labels.
pub fn sample_weight(y: &LabelVector) -> f64 {
    1.0 + y.variance()
}

/// |Σ_m var(s[m])| where the variance runs over each group vector's
/// components; `AcrossGroups` instead measures per-component variance over
/// the groups.
pub fn reg_loss<T: Scalar>(tape: &mut Tape<T>, s: TensorId, mode: RegMode) -> Result<TensorId> {
    let spread = match mode {
        RegMode::WithinRows => tape.variance_rows(s)?,
        RegMode::AcrossGroups => {
            let st = tape.transpose(s)?;
            tape.variance_rows(st)?
        }
    };
    let total = tape.sum(spread);
    Ok(tape.abs(total))
}

/// Batch objective: (1/N) Σ_i ω_i (1−λ) rank_i + λ reg_i with skipped
/// samples excluded from N. Returns the loss id and the skip count.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    samples: &[(TensorId, LabelVector)],
    lambda: f64,
    table: &ClassEmbeddingTable,
    mode: RegMode,
) -> Result<(TensorId, usize)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Usage(format!("lambda must be in [0,1], got {lambda}")));
    }
    let mut acc: Option<TensorId> = None;
    let mut skipped = 0usize;
    for (s, y) in samples {
        let Some(rank) = rank_loss(tape, *s, y, table)? else {
            skipped += 1;
            continue;
        };
        let reg = reg_loss(tape, *s, mode)?;
        let weighted_rank = tape.mul_scalar(rank, sample_weight(y) * (1.0 - lambda));
        let weighted_reg = tape.mul_scalar(reg, lambda);
        let term = tape.add(weighted_rank, weighted_reg)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    let effective = samples.len() - skipped;
    match acc {
        None => Err(Error::Usage("empty effective batch in total_loss".into())),
        Some(a) => Ok((tape.mul_scalar(a, 1.0 / effective as f64), skipped)),
    }
}
