//! Retrieval metrics for multi-label evaluation: micro-averaged top-K
//! precision/recall/F1 over images and class-wise mean average precision
//! over label rankings. Tie-breaking is deterministic everywhere (lower
//! label id, lower image id).

use std::path::Path;

use crate::error::{Error, Result};

/// Scores and ground truth for a set of images over an ordered label list.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    /// Row-major N×L scores.
    pub scores: Vec<f32>,
    /// Label ids naming the L columns.
    pub label_ids: Vec<usize>,
    /// Row-major N×L binary ground truth.
    pub gt: Vec<u8>,
    pub n_images: usize,
}

impl ScoreMatrix {
    pub fn new(scores: Vec<f32>, label_ids: Vec<usize>, gt: Vec<u8>, n_images: usize) -> Result<Self> {
        let l = label_ids.len();
        if scores.len() != n_images * l || gt.len() != n_images * l {
            return Err(Error::dimension(
                "score_matrix",
                format!(
                    "{} images x {} labels, scores {}, gt {}",
                    n_images,
                    l,
                    scores.len(),
                    gt.len()
                ),
            ));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("score matrix contains non-finite values".into()));
        }
        if gt.iter().any(|&b| b > 1) {
            return Err(Error::Usage("ground truth must be binary".into()));
        }
        Ok(ScoreMatrix {
            scores,
            label_ids,
            gt,
            n_images,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.label_ids.len()
    }

    fn row(&self, i: usize) -> (&[f32], &[u8]) {
        let l = self.n_labels();
        (&self.scores[i * l..(i + 1) * l], &self.gt[i * l..(i + 1) * l])
    }

    fn column_of(&self, label_id: usize) -> Option<usize> {
        self.label_ids.iter().position(|&id| id == label_id)
    }
}

/// Micro-averaged top-K precision, recall and F1. Per image the K highest
/// scored labels are predicted (ties to the lower label id); images with
/// empty ground truth are excluded from both sums.
pub fn topk_prf(m: &ScoreMatrix, k: usize) -> Result<(f64, f64, f64)> {
    if k == 0 {
        return Err(Error::Usage("top-k needs k >= 1".into()));
    }
    if k > m.n_labels() {
        return Err(Error::Usage(format!(
            "top-{k} over only {} labels",
            m.n_labels()
        )));
    }
    let mut hits = 0usize;
    let mut gt_total = 0usize;
    let mut images = 0usize;
    for i in 0..m.n_images {
        let (scores, gt) = m.row(i);
        let gt_count = gt.iter().filter(|&&b| b == 1).count();
        if gt_count == 0 {
            continue;
        }
        images += 1;
        gt_total += gt_count;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("finite scores")
                .then(m.label_ids[a].cmp(&m.label_ids[b]))
        });
        hits += order[..k].iter().filter(|&&j| gt[j] == 1).count();
    }
    if images == 0 {
        return Err(Error::Usage("no image with ground truth labels".into()));
    }
    let precision = hits as f64 / (k * images) as f64;
    let recall = hits as f64 / gt_total as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Non-interpolated average precision of one class over an image ranking.
/// Images are sorted by descending score with ties to the lower image id.
/// Returns `None` when the class has no positive image.
pub fn average_precision(scores: &[f32], gt: &[u8]) -> Option<f64> {
    debug_assert_eq!(scores.len(), gt.len());
    let positives = gt.iter().filter(|&&b| b == 1).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut seen_pos = 0usize;
    let mut acc = 0.0;
    for (rank, &img) in order.iter().enumerate() {
        if gt[img] == 1 {
            seen_pos += 1;
            acc += seen_pos as f64 / (rank + 1) as f64;
        }
    }
    Some(acc / positives as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct MeanAp {
    pub map: f64,
    pub evaluated_classes: usize,
    /// Classes skipped for lack of any positive image.
    pub excluded_classes: usize,
}

/// Unweighted mean of per-class average precision over the given label
/// ids. Classes with no positive image are excluded and counted.
pub fn mean_ap(m: &ScoreMatrix, ids: &[usize]) -> Result<MeanAp> {
    if ids.is_empty() {
        return Err(Error::Usage("mean_ap over an empty id set".into()));
    }
    let l = m.n_labels();
    let mut acc = 0.0;
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for &id in ids {
        let col = m
            .column_of(id)
            .ok_or_else(|| Error::Usage(format!("label id {id} not in score matrix")))?;
        let scores: Vec<f32> = (0..m.n_images).map(|i| m.scores[i * l + col]).collect();
        let gt: Vec<u8> = (0..m.n_images).map(|i| m.gt[i * l + col]).collect();
        match average_precision(&scores, &gt) {
            Some(ap) => {
                acc += ap;
                evaluated += 1;
            }
            None => excluded += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::Usage("every class was excluded from mean_ap".into()));
    }
    Ok(MeanAp {
        map: acc / evaluated as f64,
        evaluated_classes: evaluated,
        excluded_classes: excluded,
    })
}

/// One metrics row of an evaluation report.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ReportRow {
    pub protocol: String,
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map: f64,
}

/// Write rows as CSV (`protocol,k,precision,recall,f1,map`) plus a JSON
/// mirror next to it.
pub fn write_report(csv_path: &Path, json_path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut csv = String::from("protocol,k,precision,recall,f1,map\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.protocol, r.k, r.precision, r.recall, r.f1, r.map
        ));
    }
    std::fs::write(csv_path, csv)?;
    let json = serde_json::to_string_pretty(rows).expect("rows serialize");
    std::fs::write(json_path, json)?;
    Ok(())
}
