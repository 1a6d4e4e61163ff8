//! Detection metrics: normalized anomaly scores, the exact pairwise AUC
//! estimator (ties count one half), its differentiable beta-soft relaxation,
//! the deterministic subsampled variant used as a training loss, and ROC
//! curves whose trapezoidal area matches the exact estimator.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};

/// Scores with ground-truth anomaly labels, flattened in lexicographic
/// `(flow, t1, t2)` order (or `(flow, t)` for matrices), so positions are
/// already sorted by index.
#[derive(Clone, Debug)]
pub struct LabeledScores {
    scores: Vec<f64>,
    truth: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if scores.len() != truth.len() {
            return Err(Error::dim("scores and truth must have equal length"));
        }
        Ok(Self { scores, truth })
    }

    /// Flattens tensors in lexicographic `(flow, t1, t2)` order; any nonzero
    /// truth entry marks an anomaly.
    pub fn from_tensor(scores: &Tensor3, truth: &Tensor3) -> Result<Self> {
        if scores.dims() != truth.dims() {
            return Err(Error::dim("scores and truth must share dims"));
        }
        let (f, t1, t2) = scores.dims();
        let mut s = Vec::with_capacity(f * t1 * t2);
        let mut l = Vec::with_capacity(f * t1 * t2);
        for i in 0..f {
            for j in 0..t1 {
                for k in 0..t2 {
                    s.push(scores.at(i, j, k));
                    l.push(truth.at(i, j, k) != 0.0);
                }
            }
        }
        Ok(Self { scores: s, truth: l })
    }

    /// Flattens matrices in lexicographic `(flow, t)` order.
    pub fn from_matrix(scores: &Matrix, truth: &Matrix) -> Result<Self> {
        if scores.rows() != truth.rows() || scores.cols() != truth.cols() {
            return Err(Error::dim("scores and truth must share dims"));
        }
        let mut s = Vec::with_capacity(scores.rows() * scores.cols());
        let mut l = Vec::with_capacity(s.capacity());
        for i in 0..scores.rows() {
            for t in 0..scores.cols() {
                s.push(scores.at(i, t));
                l.push(truth.at(i, t) != 0.0);
            }
        }
        Ok(Self { scores: s, truth: l })
    }

    pub fn n_pos(&self) -> usize {
        self.truth.iter().filter(|&&b| b).count()
    }

    pub fn n_neg(&self) -> usize {
        self.truth.len() - self.n_pos()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn truth(&self) -> &[bool] {
        &self.truth
    }

    fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (idx, &t) in self.truth.iter().enumerate() {
            if t {
                pos.push(idx);
            } else {
                neg.push(idx);
            }
        }
        (pos, neg)
    }

    fn check_classes(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let (pos, neg) = self.split();
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Metric(
                "AUC needs at least one positive and one negative".into(),
            ));
        }
        Ok((pos, neg))
    }
}

/// Normalized anomaly scores `|A| / max|A|`; an all-zero input stays zero
/// (downstream AUC then reads 0.5, the no-information value).
pub fn normalize_scores(a: &Tensor3) -> Tensor3 {
    let peak = a.max_abs();
    if peak == 0.0 {
        return Tensor3::zeros(a.dims());
    }
    a.map(|v| v.abs() / peak)
}

fn kahan_add(sum: &mut f64, comp: &mut f64, value: f64) {
    let y = value - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Exact pairwise AUC with the one-half tie convention, computed by sorting
/// with tie groups in `O(n log n)`.
pub fn auc(s: &LabeledScores) -> Result<f64> {
    let (pos, neg) = s.check_classes()?;
    let n1 = pos.len() as f64;
    let n0 = neg.len() as f64;
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_unstable_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    // Average ranks within tie groups (1-based ranks), summed over positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if s.truth[idx] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Logistic relaxation of the pairwise step function.
#[inline]
pub fn sigmoid(beta: f64, a: f64) -> f64 {
    1.0 / (1.0 + (-beta * a).exp())
}

/// Differentiable beta-soft AUC: the pairwise mean of `S_beta(s1 - s0)`.
pub fn soft_auc(s: &LabeledScores, beta: f64) -> Result<f64> {
    Ok(subsampled_soft_auc_counted(s, beta, 1)?.0)
}

/// Splits `indices` into `K` disjoint blocks of near-equal size: sorted,
/// then assigned round-robin.  Deterministic.
pub fn partition_indices(indices: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if k < 1 {
        return Err(Error::arg("partition count K must be at least 1"));
    }
    if k > indices.len() {
        return Err(Error::arg(format!(
            "partition count K={} exceeds the class size {}",
            k,
            indices.len()
        )));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut blocks = vec![Vec::with_capacity(indices.len() / k + 1); k];
    for (pos, idx) in sorted.into_iter().enumerate() {
        blocks[pos % k].push(idx);
    }
    Ok(blocks)
}

/// Subsampled beta-soft AUC over paired deterministic partitions of the two
/// classes; `K = 1` reproduces [`soft_auc`] exactly.  Also returns the
/// number of evaluated pairs.
pub fn subsampled_soft_auc_counted(s: &LabeledScores, beta: f64, k: usize) -> Result<(f64, usize)> {
    if !(beta > 0.0) {
        return Err(Error::arg("beta must be positive"));
    }
    let (pos, neg) = s.check_classes()?;
    let pos_blocks = partition_indices(&pos, k)?;
    let neg_blocks = partition_indices(&neg, k)?;
    let mut total = 0.0;
    let mut comp = 0.0;
    let mut pairs = 0usize;
    for (pb, nb) in pos_blocks.iter().zip(neg_blocks.iter()) {
        let mut block_sum = 0.0;
        let mut block_comp = 0.0;
        for &ip in pb {
            for &in0 in nb {
                kahan_add(
                    &mut block_sum,
                    &mut block_comp,
                    sigmoid(beta, s.scores[ip] - s.scores[in0]),
                );
            }
        }
        pairs += pb.len() * nb.len();
        kahan_add(
            &mut total,
            &mut comp,
            block_sum / (k as f64 * pb.len() as f64 * nb.len() as f64),
        );
    }
    Ok((total, pairs))
}

pub fn subsampled_soft_auc(s: &LabeledScores, beta: f64, k: usize) -> Result<f64> {
    Ok(subsampled_soft_auc_counted(s, beta, k)?.0)
}

/// ROC curve as a threshold sweep over the unique score values (plus the
/// `+inf` sentinel): a monotone staircase from `(0,0)` to `(1,1)` whose
/// trapezoidal area equals [`auc`].
pub fn roc_curve(s: &LabeledScores) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = s.check_classes()?;
    let (n1, n0) = (pos.len() as f64, neg.len() as f64);
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_unstable_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if s.truth[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n0, tp as f64 / n1));
        i = j + 1;
    }
    Ok(points)
}

/// Trapezoidal area under an ROC polyline.
pub fn roc_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    let mut comp = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        kahan_add(&mut area, &mut comp, (x1 - x0) * (y0 + y1) / 2.0);
    }
    area
}

/// Emits `pfa\tpd` rows.
pub fn write_roc_tsv(points: &[(f64, f64)], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "pfa\tpd")?;
    for (x, y) in points {
        writeln!(out, "{x}\t{y}")?;
    }
    Ok(())
}
