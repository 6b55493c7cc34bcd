//! Coding-rate terms of the semi-supervised rate reduction objective and
//! their analytic gradients.
//!
//! Embeddings are stored one sample per row, so for a batch `Z ∈ R^{N×d}`
//! the coding rate is
//!
//! ```text
//! R(Z) = log det(I_d + d/(N ε²) · ZᵀZ) = log det(I_N + d/(N ε²) · ZZᵀ)
//! ```
//!
//! and every determinant is factored on the smaller of the two Gram sides.
//! Class memberships enter the compression term as `Zᵀ Diag(π_j) Z`, which is
//! evaluated as the Gram matrix of the rows `√π_ij · z_i`.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::embedding::PartitionWeights;
use crate::error::{check_dim, invalid, Result};
use crate::linalg::{all_finite, logdet_gram, logdet_gram_grad};

/// Distortion `ε` and embedding width `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RateConfig {
    pub epsilon: f64,
    pub embed_dim: usize,
}

impl RateConfig {
    pub fn new(epsilon: f64, embed_dim: usize) -> Result<Self> {
        let cfg = Self { epsilon, embed_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.embed_dim == 0 {
            return Err(invalid!("embed_dim must be at least 1"));
        }
        Ok(())
    }

    /// Scale `d / (n ε²)` applied to a Gram matrix over `n` samples.
    pub fn scale(&self, n: f64) -> f64 {
        self.embed_dim as f64 / (n * self.epsilon * self.epsilon)
    }
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            embed_dim: 16,
        }
    }
}

fn check_batch(z: &DMatrix<f64>, cfg: &RateConfig) -> Result<()> {
    cfg.validate()?;
    if z.nrows() == 0 {
        return Err(invalid!("empty embedding batch"));
    }
    check_dim("embedding width", cfg.embed_dim, z.ncols())?;
    if !all_finite(z) {
        return Err(invalid!("embedding batch contains non-finite entries"));
    }
    Ok(())
}

/// `R(Z)`: coding rate of the whole batch.
pub fn expansion_rate(z: &DMatrix<f64>, cfg: &RateConfig) -> Result<f64> {
    check_batch(z, cfg)?;
    logdet_gram(z, cfg.scale(z.nrows() as f64))
}

/// `∂R/∂Z`, same shape as `Z`.
pub fn expansion_rate_grad(z: &DMatrix<f64>, cfg: &RateConfig) -> Result<DMatrix<f64>> {
    check_batch(z, cfg)?;
    Ok(logdet_gram_grad(z, cfg.scale(z.nrows() as f64))?.1)
}

/// Rows with positive weight in class `j`, scaled by the square root of that weight.
fn weighted_rows(z: &DMatrix<f64>, p: &PartitionWeights, j: usize) -> (Vec<(usize, f64)>, DMatrix<f64>) {
    let members: Vec<(usize, f64)> = (0..p.num_samples())
        .filter_map(|i| {
            let w = p.membership()[(i, j)];
            (w > 0.0).then(|| (i, w.sqrt()))
        })
        .collect();
    let mut y = DMatrix::zeros(members.len(), z.ncols());
    for (r, &(i, s)) in members.iter().enumerate() {
        y.set_row(r, &(z.row(i) * s));
    }
    (members, y)
}

fn check_partition(z: &DMatrix<f64>, p: &PartitionWeights, total_n: usize, cfg: &RateConfig) -> Result<()> {
    check_batch(z, cfg)?;
    check_dim("membership rows", z.nrows(), p.num_samples())?;
    if total_n < z.nrows() {
        return Err(invalid!(
            "total_n {total_n} is smaller than the {} rows being compressed",
            z.nrows()
        ));
    }
    Ok(())
}

/// `Σ_j N_j/total_n · log det(I + d/(N_j ε²) Zᵀ Diag(π_j) Z)`.
///
/// Classes with no members contribute zero.
pub fn compression_rate(
    z: &DMatrix<f64>,
    p: &PartitionWeights,
    total_n: usize,
    cfg: &RateConfig,
) -> Result<f64> {
    check_partition(z, p, total_n, cfg)?;
    let mut total = 0.0;
    for (j, &n_j) in p.counts().iter().enumerate() {
        if n_j <= 0.0 {
            continue;
        }
        let (_, y) = weighted_rows(z, p, j);
        total += n_j / total_n as f64 * logdet_gram(&y, cfg.scale(n_j))?;
    }
    Ok(total)
}

/// Value and gradient of [`compression_rate`] with respect to `Z`.
pub fn compression_rate_value_grad(
    z: &DMatrix<f64>,
    p: &PartitionWeights,
    total_n: usize,
    cfg: &RateConfig,
) -> Result<(f64, DMatrix<f64>)> {
    check_partition(z, p, total_n, cfg)?;
    let mut total = 0.0;
    let mut grad = DMatrix::zeros(z.nrows(), z.ncols());
    for (j, &n_j) in p.counts().iter().enumerate() {
        if n_j <= 0.0 {
            continue;
        }
        let (members, y) = weighted_rows(z, p, j);
        let weight = n_j / total_n as f64;
        let (value, gy) = logdet_gram_grad(&y, cfg.scale(n_j))?;
        total += weight * value;
        for (r, &(i, s)) in members.iter().enumerate() {
            let mut row = grad.row_mut(i);
            row += gy.row(r) * (weight * s);
        }
    }
    Ok((total, grad))
}

pub fn compression_rate_grad(
    z: &DMatrix<f64>,
    p: &PartitionWeights,
    total_n: usize,
    cfg: &RateConfig,
) -> Result<DMatrix<f64>> {
    compression_rate_value_grad(z, p, total_n, cfg).map(|(_, g)| g)
}

/// Rows of a batch together with their class memberships.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedPartition {
    pub rows: Vec<usize>,
    pub weights: PartitionWeights,
}

impl IndexedPartition {
    pub fn new(rows: Vec<usize>, weights: PartitionWeights) -> Result<Self> {
        check_dim("indexed partition rows", rows.len(), weights.num_samples())?;
        Ok(Self { rows, weights })
    }

    /// Hard assignment of `rows[i]` to `labels[i]`.
    pub fn from_labels(rows: Vec<usize>, labels: &[usize], k: usize) -> Result<Self> {
        Self::new(rows, PartitionWeights::from_labels(labels, k)?)
    }

    pub fn empty(k: usize) -> Self {
        Self {
            rows: Vec::new(),
            weights: PartitionWeights::from_labels(&[], k).expect("empty partition is valid"),
        }
    }
}

/// The three rate terms that make up the objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ssr2Terms {
    pub expansion: f64,
    pub compression_sup: f64,
    pub compression_unsup: f64,
}

impl Ssr2Terms {
    /// `−R + R_c^s + R_c^u`.
    pub fn loss(&self) -> f64 {
        -self.expansion + self.compression_sup + self.compression_unsup
    }

    /// `−R + R_c^s`, the objective used before pseudo-labels are trusted.
    pub fn supervised_loss(&self) -> f64 {
        -self.expansion + self.compression_sup
    }
}

fn check_cover(n: usize, labeled: &IndexedPartition, unlabeled: &IndexedPartition) -> Result<()> {
    let mut seen = alloc::vec![false; n];
    for &r in labeled.rows.iter().chain(unlabeled.rows.iter()) {
        if r >= n {
            return Err(invalid!("row index {r} out of range for a batch of {n}"));
        }
        if seen[r] {
            return Err(invalid!("row {r} appears in both the labeled and unlabeled sets"));
        }
        seen[r] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(invalid!("row {missing} is neither labeled nor unlabeled"));
    }
    Ok(())
}

fn gather(z: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), z.ncols());
    for (r, &i) in rows.iter().enumerate() {
        out.set_row(r, &z.row(i));
    }
    out
}

fn scatter_add(target: &mut DMatrix<f64>, rows: &[usize], grad: &DMatrix<f64>) {
    for (r, &i) in rows.iter().enumerate() {
        let mut row = target.row_mut(i);
        row += grad.row(r);
    }
}

fn subset_rate(
    z: &DMatrix<f64>,
    part: &IndexedPartition,
    cfg: &RateConfig,
    with_grad: bool,
) -> Result<(f64, Option<DMatrix<f64>>)> {
    if part.rows.is_empty() {
        return Ok((0.0, None));
    }
    let sub = gather(z, &part.rows);
    if with_grad {
        let (v, g) = compression_rate_value_grad(&sub, &part.weights, z.nrows(), cfg)?;
        Ok((v, Some(g)))
    } else {
        Ok((compression_rate(&sub, &part.weights, z.nrows(), cfg)?, None))
    }
}

/// All three rate terms. Both compression terms are weighted by the full batch size.
pub fn ssr2_terms(
    z: &DMatrix<f64>,
    labeled: &IndexedPartition,
    unlabeled: &IndexedPartition,
    cfg: &RateConfig,
) -> Result<Ssr2Terms> {
    check_batch(z, cfg)?;
    check_cover(z.nrows(), labeled, unlabeled)?;
    Ok(Ssr2Terms {
        expansion: expansion_rate(z, cfg)?,
        compression_sup: subset_rate(z, labeled, cfg, false)?.0,
        compression_unsup: subset_rate(z, unlabeled, cfg, false)?.0,
    })
}

/// `−R(Z) + R_c^s(Z_s, Y*) + R_c^u(Z_u, Y)`.
pub fn ssr2_loss(
    z: &DMatrix<f64>,
    labeled: &IndexedPartition,
    unlabeled: &IndexedPartition,
    cfg: &RateConfig,
) -> Result<f64> {
    ssr2_terms(z, labeled, unlabeled, cfg).map(|t| t.loss())
}

/// Terms and gradient of the objective.
///
/// With `include_unsupervised == false` the unsupervised compression term is
/// neither evaluated nor differentiated (reported as zero), which gives the
/// warm-up objective `−R + R_c^s`.
pub fn ssr2_value_grad(
    z: &DMatrix<f64>,
    labeled: &IndexedPartition,
    unlabeled: &IndexedPartition,
    include_unsupervised: bool,
    cfg: &RateConfig,
) -> Result<(Ssr2Terms, DMatrix<f64>)> {
    check_batch(z, cfg)?;
    check_cover(z.nrows(), labeled, unlabeled)?;
    let (expansion, g_exp) = logdet_gram_grad(z, cfg.scale(z.nrows() as f64))?;
    let mut grad = -g_exp;
    let (compression_sup, g_sup) = subset_rate(z, labeled, cfg, true)?;
    if let Some(g) = g_sup {
        scatter_add(&mut grad, &labeled.rows, &g);
    }
    let mut compression_unsup = 0.0;
    if include_unsupervised {
        let (v, g_unsup) = subset_rate(z, unlabeled, cfg, true)?;
        compression_unsup = v;
        if let Some(g) = g_unsup {
            scatter_add(&mut grad, &unlabeled.rows, &g);
        }
    }
    Ok((
        Ssr2Terms {
            expansion,
            compression_sup,
            compression_unsup,
        },
        grad,
    ))
}
