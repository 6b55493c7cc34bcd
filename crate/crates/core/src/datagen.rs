//! Seeded synthetic two-modality datasets for category discovery.
//!
//! Every category owns an orthonormal basis of `subspace_dim` directions in
//! `ambient_dim` per modality, drawn independently for the image and text
//! modalities. A sample is `B_k c + σ n`: its coefficients are Gaussian with
//! the first one centred at `center_strength`, so each category has a nonzero
//! centroid along its leading basis direction. The text lexicon holds one
//! jittered copy of each category's text centroid direction plus random
//! distractor entries.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::normalize_rows;
use crate::error::{invalid, Result};
use crate::rng::{stream_rng, Stream};
use crate::rta::{Lexicon, LexiconEntry};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GenConfig {
    pub k_total: usize,
    pub k_old: usize,
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    pub noise_sigma: f64,
    pub per_class_sizes: Vec<usize>,
    /// Fraction of each known category that is labeled.
    pub labeled_fraction: f64,
    pub aug_noise: f64,
    pub aug_dropout: f64,
    pub seed: u64,
    /// Mean of the leading subspace coefficient.
    pub center_strength: f64,
    /// Standard deviation of image-modality subspace coefficients.
    pub coeff_std: f64,
    /// Standard deviation of text-modality subspace coefficients.
    pub text_coeff_std: f64,
    /// Gaussian jitter added to each true lexicon entry before normalization.
    pub lexicon_jitter: f64,
    /// Random entries appended to each lexicon list.
    pub lexicon_distractors: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            k_total: 10,
            k_old: 5,
            ambient_dim: 64,
            subspace_dim: 3,
            noise_sigma: 0.05,
            per_class_sizes: alloc::vec![200; 10],
            labeled_fraction: 0.5,
            aug_noise: 0.05,
            aug_dropout: 0.1,
            seed: 0,
            center_strength: 1.5,
            coeff_std: 0.6,
            text_coeff_std: 0.6,
            lexicon_jitter: 0.3,
            lexicon_distractors: 20,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_total == 0 {
            return Err(invalid!("k_total must be at least 1"));
        }
        if self.k_old > self.k_total {
            return Err(invalid!("k_old {} exceeds k_total {}", self.k_old, self.k_total));
        }
        if self.per_class_sizes.len() != self.k_total {
            return Err(invalid!(
                "{} class sizes given for {} categories",
                self.per_class_sizes.len(),
                self.k_total
            ));
        }
        if let Some(s) = self.per_class_sizes.iter().find(|&&s| s < 2) {
            return Err(invalid!("every category needs at least 2 samples, got {s}"));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(invalid!("labeled_fraction must lie in (0, 1], got {}", self.labeled_fraction));
        }
        if self.subspace_dim == 0 || self.subspace_dim > self.ambient_dim {
            return Err(invalid!(
                "subspace_dim {} must lie in 1..={}",
                self.subspace_dim,
                self.ambient_dim
            ));
        }
        if !(0.0..1.0).contains(&self.aug_dropout) {
            return Err(invalid!("aug_dropout must lie in [0, 1), got {}", self.aug_dropout));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("aug_noise", self.aug_noise),
            ("coeff_std", self.coeff_std),
            ("text_coeff_std", self.text_coeff_std),
            ("lexicon_jitter", self.lexicon_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid!("{name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.per_class_sizes.iter().sum()
    }
}

/// Which feature view of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

/// Generated samples with their split flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    /// One row per sample.
    pub raw_image: DMatrix<f64>,
    /// Text-side features of each sample; used as the frozen retrieval query.
    pub raw_text: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub is_labeled: Vec<bool>,
    /// Indexed by category.
    pub is_old_category: Vec<bool>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_categories(&self) -> usize {
        self.is_old_category.len()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_labeled[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_labeled[i]).collect()
    }

    pub fn old_classes(&self) -> Vec<usize> {
        (0..self.num_categories()).filter(|&c| self.is_old_category[c]).collect()
    }

    /// Ground truth where visible to training, `None` otherwise.
    pub fn visible_label(&self, i: usize) -> Option<usize> {
        self.is_labeled[i].then_some(self.labels[i])
    }

    pub fn features(&self, modality: Modality) -> &DMatrix<f64> {
        match modality {
            Modality::Image => &self.raw_image,
            Modality::Text => &self.raw_text,
        }
    }

    /// Checks the split invariants: labeled samples come from known
    /// categories and every category has unlabeled samples.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.raw_image.nrows() != n || self.raw_text.nrows() != n || self.is_labeled.len() != n {
            return Err(invalid!("dataset columns disagree on the sample count"));
        }
        let k = self.num_categories();
        let mut has_unlabeled = alloc::vec![false; k];
        for i in 0..n {
            let c = self.labels[i];
            if c >= k {
                return Err(invalid!("sample {i} has label {c} outside {k} categories"));
            }
            if self.is_labeled[i] && !self.is_old_category[c] {
                return Err(invalid!("sample {i} is labeled but its category {c} is new"));
            }
            if !self.is_labeled[i] {
                has_unlabeled[c] = true;
            }
        }
        if let Some(c) = has_unlabeled.iter().position(|&h| !h) {
            return Err(invalid!("category {c} has no unlabeled samples"));
        }
        Ok(())
    }
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random `rows × cols` matrix with orthonormal columns.
fn orthonormal_basis<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, rows, cols).qr().q()
}

fn draw_samples<R: Rng>(
    rng: &mut R,
    basis: &DMatrix<f64>,
    count: usize,
    cfg: &GenConfig,
    coeff_std: f64,
) -> DMatrix<f64> {
    let mut coeffs = gaussian_matrix(rng, count, basis.ncols()) * coeff_std;
    coeffs.column_mut(0).add_scalar_mut(cfg.center_strength);
    let noise = gaussian_matrix(rng, count, basis.nrows()) * cfg.noise_sigma;
    coeffs * basis.transpose() + noise
}

fn lexicon_list<R: Rng>(
    rng: &mut R,
    prefix: &str,
    centroids: &[DVector<f64>],
    cfg: &GenConfig,
) -> Vec<LexiconEntry> {
    let d = cfg.ambient_dim;
    let mut entries = Vec::with_capacity(centroids.len() + cfg.lexicon_distractors);
    for (k, c) in centroids.iter().enumerate() {
        let jitter = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * cfg.lexicon_jitter / (d as f64).sqrt());
        entries.push(LexiconEntry {
            id: format!("{prefix}_{k:03}"),
            vector: (c + jitter).normalize(),
        });
    }
    for j in 0..cfg.lexicon_distractors {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        entries.push(LexiconEntry {
            id: format!("{prefix}_x{j:03}"),
            vector: v.normalize(),
        });
    }
    entries
}

/// Generates a dataset and its matched lexicon. Deterministic in `cfg.seed`.
pub fn generate(cfg: &GenConfig) -> Result<(DatasetSplit, Lexicon)> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Datagen);
    let n = cfg.num_samples();
    let mut raw_image = DMatrix::zeros(n, cfg.ambient_dim);
    let mut raw_text = DMatrix::zeros(n, cfg.ambient_dim);
    let mut labels = Vec::with_capacity(n);
    let mut is_labeled = alloc::vec![false; n];
    let is_old_category: Vec<bool> = (0..cfg.k_total).map(|k| k < cfg.k_old).collect();
    let mut text_centroids = Vec::with_capacity(cfg.k_total);

    let mut start = 0;
    for (k, &size) in cfg.per_class_sizes.iter().enumerate() {
        let img_basis = orthonormal_basis(&mut rng, cfg.ambient_dim, cfg.subspace_dim);
        let txt_basis = orthonormal_basis(&mut rng, cfg.ambient_dim, cfg.subspace_dim);
        let img = draw_samples(&mut rng, &img_basis, size, cfg, cfg.coeff_std);
        let txt = draw_samples(&mut rng, &txt_basis, size, cfg, cfg.text_coeff_std);
        raw_image.rows_mut(start, size).copy_from(&img);
        raw_text.rows_mut(start, size).copy_from(&txt);
        labels.extend(core::iter::repeat_n(k, size));
        text_centroids.push(txt_basis.column(0).into_owned());

        if is_old_category[k] {
            let wanted = (cfg.labeled_fraction * size as f64).round() as usize;
            let count = wanted.clamp(1, size - 1);
            let mut idx: Vec<usize> = (start..start + size).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..count] {
                is_labeled[i] = true;
            }
        }
        start += size;
    }

    let tags = lexicon_list(&mut rng, "tag", &text_centroids, cfg);
    let attributes = lexicon_list(&mut rng, "attr", &text_centroids, cfg);
    let split = DatasetSplit {
        raw_image,
        raw_text,
        labels,
        is_labeled,
        is_old_category,
    };
    split.validate()?;
    Ok((split, Lexicon::new(tags, attributes)?))
}

/// Two independently corrupted copies of `base`: additive Gaussian noise with
/// standard deviation `noise`, then each coordinate zeroed with probability `dropout`.
pub fn augment_views<R: Rng>(base: &DVector<f64>, noise: f64, dropout: f64, rng: &mut R) -> [DVector<f64>; 2] {
    let mut view = || {
        DVector::from_fn(base.len(), |i, _| {
            let v = if noise > 0.0 {
                base[i] + noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                base[i]
            };
            if dropout > 0.0 && rng.random::<f64>() < dropout {
                0.0
            } else {
                v
            }
        })
    };
    let a = view();
    let b = view();
    [a, b]
}

/// Two augmented views of one sample's raw features.
pub fn augment<R: Rng>(
    split: &DatasetSplit,
    sample: usize,
    modality: Modality,
    cfg: &GenConfig,
    rng: &mut R,
) -> [DVector<f64>; 2] {
    let base = split.features(modality).row(sample).transpose();
    augment_views(&base, cfg.aug_noise, cfg.aug_dropout, rng)
}

/// Row-normalized copy of one modality's raw features.
pub fn unit_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    normalize_rows(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            k_total: 4,
            k_old: 2,
            per_class_sizes: alloc::vec![20; 4],
            ..GenConfig::default()
        }
    }

    #[test]
    fn split_counts() {
        let (split, _) = generate(&small()).unwrap();
        assert_eq!(split.labeled_indices().len(), 20);
        assert_eq!(split.unlabeled_indices().len(), 60);
        let mut seen = [false; 4];
        for i in split.unlabeled_indices() {
            seen[split.labels[i]] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn subspace_dim_above_ambient_rejected() {
        let cfg = GenConfig {
            subspace_dim: 65,
            ..GenConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn full_dropout_rejected() {
        let cfg = GenConfig {
            aug_dropout: 1.0,
            ..small()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn full_labeling_keeps_unlabeled_samples() {
        let cfg = GenConfig {
            labeled_fraction: 1.0,
            ..small()
        };
        let (split, _) = generate(&cfg).unwrap();
        assert_eq!(split.labeled_indices().len(), 38);
    }

    #[test]
    fn clean_augmentation_is_identity() {
        let base = DVector::from_vec(alloc::vec![0.3, -0.2, 1.0]);
        let mut rng = stream_rng(1, Stream::Augmentation);
        let [a, b] = augment_views(&base, 0.0, 0.0, &mut rng);
        assert_eq!(a, base);
        assert_eq!(b, base);
    }
}
