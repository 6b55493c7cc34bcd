//! Clustering accuracy, information scores, consistency ratio and spectral ranks.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{check_dim, invalid, Result};
use crate::linalg::singular_values;

/// Smallest denominator used by the consistency ratio.
pub const RHO_FLOOR: f64 = 1e-12;
/// Value reported for a class whose cross-class weight is not positive.
pub const RHO_CAP: f64 = 1e6;
/// Cumulative squared-singular-value share defining the numerical rank.
pub const DEFAULT_ENERGY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClusteringResult {
    pub acc_all: f64,
    /// 0 when no sample belongs to a known category.
    pub acc_old: f64,
    /// 0 when no sample belongs to a new category.
    pub acc_new: f64,
    pub nmi: f64,
    pub ari: f64,
    /// `(predicted cluster, true class)` pairs, sorted by cluster id.
    pub matching: Vec<(usize, usize)>,
}

/// Minimum-cost perfect assignment on a square matrix. Returns `col[row]`.
pub fn solve_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    const INF: i64 = i64::MAX / 4;
    // Potentials formulation, 1-based with a virtual column 0.
    let mut u = alloc::vec![0i64; n + 1];
    let mut v = alloc::vec![0i64; n + 1];
    let mut owner = alloc::vec![0usize; n + 1];
    let mut way = alloc::vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = alloc::vec![INF; n + 1];
        let mut used = alloc::vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = alloc::vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

fn distinct(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // Re-number in sorted order so results do not depend on sample order.
    ids.values_mut().enumerate().for_each(|(i, v)| *v = i);
    ids
}

struct Contingency {
    pred_ids: Vec<usize>,
    true_ids: Vec<usize>,
    table: Vec<Vec<u64>>,
    n: usize,
}

fn contingency(pred: &[usize], truth: &[usize]) -> Contingency {
    let p = distinct(pred);
    let t = distinct(truth);
    let mut table = alloc::vec![alloc::vec![0u64; t.len()]; p.len()];
    for (a, b) in pred.iter().zip(truth) {
        table[p[a]][t[b]] += 1;
    }
    Contingency {
        pred_ids: p.keys().copied().collect(),
        true_ids: t.keys().copied().collect(),
        table,
        n: pred.len(),
    }
}

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    check_dim("prediction count", truth.len(), pred.len())?;
    if pred.is_empty() {
        return Err(invalid!("clustering metrics need at least one sample"));
    }
    Ok(())
}

/// Maximum-agreement matching of predicted clusters to true classes, solved
/// once over all samples; old/new accuracies reuse it on the subsets whose
/// true class is known/new.
pub fn hungarian_acc(pred: &[usize], truth: &[usize], old_classes: &[usize]) -> Result<ClusteringResult> {
    check_pair(pred, truth)?;
    let ct = contingency(pred, truth);
    let size = ct.pred_ids.len().max(ct.true_ids.len());
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| match ct.table.get(i).and_then(|r| r.get(j)) {
                    Some(&c) => -(c as i64),
                    None => 0,
                })
                .collect()
        })
        .collect();
    let assignment = solve_assignment(&cost);
    let mut matching = Vec::new();
    let mut map = BTreeMap::new();
    for (i, &j) in assignment.iter().enumerate() {
        if i < ct.pred_ids.len() && j < ct.true_ids.len() {
            matching.push((ct.pred_ids[i], ct.true_ids[j]));
            map.insert(ct.pred_ids[i], ct.true_ids[j]);
        }
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (p, t) in pred.iter().zip(truth) {
        let group = usize::from(!old_classes.contains(t));
        totals[group] += 1;
        if map.get(p) == Some(t) {
            hits[group] += 1;
        }
    }
    let ratio = |h: usize, t: usize| if t == 0 { 0.0 } else { h as f64 / t as f64 };
    Ok(ClusteringResult {
        acc_all: ratio(hits[0] + hits[1], pred.len()),
        acc_old: ratio(hits[0], totals[0]),
        acc_new: ratio(hits[1], totals[1]),
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
        matching,
    })
}

fn label_entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ct = contingency(pred, truth);
    let n = ct.n as f64;
    let rows: Vec<u64> = ct.table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..ct.true_ids.len()).map(|j| ct.table.iter().map(|r| r[j]).sum()).collect();
    let h_pred = label_entropy(rows.iter().copied(), n);
    let h_true = label_entropy(cols.iter().copied(), n);
    if h_pred == 0.0 && h_true == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in ct.table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (0.5 * (h_pred + h_true))).clamp(0.0, 1.0))
}

fn pairs(c: u64) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ct = contingency(pred, truth);
    let index: f64 = ct.table.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = ct.table.iter().map(|r| pairs(r.iter().sum())).sum();
    let sum_cols: f64 = (0..ct.true_ids.len())
        .map(|j| pairs(ct.table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = pairs(ct.n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(if index == max_index { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRatio {
    pub rho: f64,
    /// `(class, ρ_ℓ)` in ascending class order.
    pub per_class: Vec<(usize, f64)>,
    /// Some class had a non-positive cross-class weight and was capped.
    pub capped: bool,
}

/// Within-class over cross-class similarity mass, averaged over the classes
/// present. Self-similarities count as within-class weight.
pub fn consistency_ratio(z: &DMatrix<f64>, truth: &[usize]) -> Result<ConsistencyRatio> {
    check_dim("label count", z.nrows(), truth.len())?;
    if truth.is_empty() {
        return Err(invalid!("consistency ratio needs at least one sample"));
    }
    let d = z.ncols();
    let mut sums: BTreeMap<usize, nalgebra::DVector<f64>> = BTreeMap::new();
    let mut total = nalgebra::DVector::zeros(d);
    for (i, &c) in truth.iter().enumerate() {
        let row = z.row(i).transpose();
        total += &row;
        *sums.entry(c).or_insert_with(|| nalgebra::DVector::zeros(d)) += row;
    }
    let mut capped = false;
    let per_class: Vec<(usize, f64)> = sums
        .iter()
        .map(|(&c, s)| {
            let within = s.dot(s);
            let cross = s.dot(&(&total - s));
            let r = if cross <= 0.0 {
                capped = true;
                RHO_CAP
            } else {
                (within / cross.max(RHO_FLOOR)).min(RHO_CAP)
            };
            (c, r)
        })
        .collect();
    let rho = per_class.iter().map(|(_, r)| r).sum::<f64>() / per_class.len() as f64;
    Ok(ConsistencyRatio { rho, per_class, capped })
}

pub fn consistency_rho(z: &DMatrix<f64>, truth: &[usize]) -> Result<f64> {
    consistency_ratio(z, truth).map(|r| r.rho)
}

/// Smallest `r` whose leading squared singular values hold at least
/// `energy` of the total. The zero matrix has rank 0.
pub fn numerical_rank_with(m: &DMatrix<f64>, energy: f64) -> usize {
    let sv = singular_values(m);
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return 0;
    }
    let mut cum = 0.0;
    for (r, s) in sv.iter().enumerate() {
        cum += s * s;
        if cum / total >= energy {
            return r + 1;
        }
    }
    sv.len()
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    numerical_rank_with(m, DEFAULT_ENERGY)
}

/// `exp` of the Shannon entropy of the normalized singular values.
pub fn effective_rank(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    let total: f64 = sv.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = sv
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankReport {
    /// Indexed by class id; classes without samples report 0.
    pub per_class_rank: Vec<usize>,
    pub effective_rank_per_class: Vec<f64>,
    /// `None` when no known class has samples.
    pub mean_rank_old: Option<f64>,
    /// `None` when no new class has samples.
    pub mean_rank_new: Option<f64>,
}

fn class_rows(z: &DMatrix<f64>, truth: &[usize], class: usize) -> DMatrix<f64> {
    let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == class).collect();
    z.select_rows(idx.iter())
}

/// Per-class numerical ranks and their means over known and new classes.
/// Classes are `0..=max(truth)`.
pub fn mean_group_ranks(z: &DMatrix<f64>, truth: &[usize], old_classes: &[usize]) -> Result<RankReport> {
    check_dim("label count", z.nrows(), truth.len())?;
    let k = truth.iter().max().map_or(0, |m| m + 1);
    let mut per_class_rank = Vec::with_capacity(k);
    let mut effective_rank_per_class = Vec::with_capacity(k);
    let mut groups = [(0.0, 0usize); 2];
    for c in 0..k {
        let rows = class_rows(z, truth, c);
        if rows.nrows() == 0 {
            per_class_rank.push(0);
            effective_rank_per_class.push(0.0);
            continue;
        }
        let r = numerical_rank(&rows);
        per_class_rank.push(r);
        effective_rank_per_class.push(effective_rank(&rows));
        let g = &mut groups[usize::from(!old_classes.contains(&c))];
        g.0 += r as f64;
        g.1 += 1;
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(RankReport {
        per_class_rank,
        effective_rank_per_class,
        mean_rank_old: mean(groups[0]),
        mean_rank_new: mean(groups[1]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_predictions() {
        let t = [0, 0, 1, 1, 2];
        let r = hungarian_acc(&t, &t, &[0]).unwrap();
        assert_eq!((r.acc_all, r.acc_old, r.acc_new), (1.0, 1.0, 1.0));
        assert_eq!(r.nmi, 1.0);
        assert_eq!(r.ari, 1.0);
    }

    #[test]
    fn extra_cluster_example() {
        let r = hungarian_acc(&[1, 1, 0, 2], &[0, 0, 1, 1], &[0, 1]).unwrap();
        assert_eq!(r.acc_all, 0.75);
    }

    #[test]
    fn crossed_partition_scores() {
        let truth = [0, 0, 1, 1];
        let pred = [0, 1, 0, 1];
        assert!(nmi(&pred, &truth).unwrap().abs() < 1e-15);
        assert!(ari(&pred, &truth).unwrap() < 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(hungarian_acc(&[0, 1], &[0], &[]).is_err());
    }

    #[test]
    fn rho_hand_example() {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, s, s]);
        let rho = consistency_rho(&z, &[0, 0, 1]).unwrap();
        assert!((rho - 5.0 / (2.0 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn rho_orthogonal_clusters_capped() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let r = consistency_ratio(&z, &[0, 1]).unwrap();
        assert!(r.capped);
        assert_eq!(r.rho, RHO_CAP);
    }

    #[test]
    fn rho_identical_embeddings() {
        let z = DMatrix::from_element(6, 3, 1.0 / 3f64.sqrt());
        let rho = consistency_rho(&z, &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&DMatrix::identity(10, 10)), 10);
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(alloc::vec![10.0, 0.1, 0.1]));
        assert_eq!(numerical_rank(&m), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(4, 3)), 0);
        assert_eq!(effective_rank(&DMatrix::zeros(4, 3)), 0.0);
        assert!((effective_rank(&DMatrix::identity(4, 4)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_new_group_is_absent() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let r = mean_group_ranks(&z, &[0, 0], &[0]).unwrap();
        assert_eq!(r.mean_rank_old, Some(1.0));
        assert_eq!(r.mean_rank_new, None);
    }
}
