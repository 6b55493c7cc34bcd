//! Retrieval-based text aggregation.
//!
//! A query embedding retrieves its `c` most cosine-similar tags and, separately,
//! its `c` most similar attributes. The pseudo-text embedding is the weighted
//! sum `Σ_i σ_i (tag_i + attribute_i)`, normalized to unit length, where the
//! best match gets weight `1 − α` and the remaining `c − 1` share `α` equally.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Result};

/// One lexicon entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    pub id: String,
    pub vector: DVector<f64>,
}

/// Tag and attribute lexicons sharing one embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    tags: Vec<LexiconEntry>,
    attributes: Vec<LexiconEntry>,
    dim: usize,
}

fn check_list(name: &str, entries: &[LexiconEntry], dim: usize) -> Result<()> {
    if entries.is_empty() {
        return Err(invalid!("{name} list is empty"));
    }
    let mut ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(invalid!("duplicate {name} id {:?}", w[0]));
    }
    for e in entries {
        if e.vector.len() != dim {
            return Err(invalid!("{name} {:?} has width {}, expected {dim}", e.id, e.vector.len()));
        }
        if (e.vector.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid!("{name} {:?} is not unit-norm", e.id));
        }
    }
    Ok(())
}

impl Lexicon {
    pub fn new(tags: Vec<LexiconEntry>, attributes: Vec<LexiconEntry>) -> Result<Self> {
        let dim = tags.first().map(|e| e.vector.len()).unwrap_or(0);
        check_list("tag", &tags, dim)?;
        check_list("attribute", &attributes, dim)?;
        Ok(Self {
            tags,
            attributes,
            dim,
        })
    }

    pub fn tags(&self) -> &[LexiconEntry] {
        &self.tags
    }

    pub fn attributes(&self) -> &[LexiconEntry] {
        &self.attributes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Aggregation strength `α` and candidate count `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RtaConfig {
    pub alpha: f64,
    pub candidates: usize,
}

impl Default for RtaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            candidates: 4,
        }
    }
}

impl RtaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if self.candidates == 0 {
            return Err(invalid!("candidate count must be at least 1"));
        }
        Ok(())
    }
}

/// Rank weights `σ_1 = 1 − α`, `σ_i = α/(c − 1)`; a single candidate gets weight 1.
pub fn sigma_weights(cfg: &RtaConfig) -> Vec<f64> {
    let c = cfg.candidates;
    if c <= 1 {
        return alloc::vec![1.0; c];
    }
    let rest = cfg.alpha / (c - 1) as f64;
    core::iter::once(1.0 - cfg.alpha)
        .chain(core::iter::repeat_n(rest, c - 1))
        .collect()
}

/// Indices of the `c` entries most similar to `query`, best first; ties keep lexicon order.
pub fn top_candidates(query: &DVector<f64>, entries: &[LexiconEntry], c: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = entries.iter().enumerate().map(|(i, e)| (i, e.vector.dot(query))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(c).map(|(i, _)| i).collect()
}

/// Pseudo-text embedding of one unit-norm query.
pub fn aggregate_text(query: &DVector<f64>, lex: &Lexicon, cfg: &RtaConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    check_dim("rta query width", lex.dim, query.len())?;
    let c = cfg.candidates;
    if c > lex.tags.len().min(lex.attributes.len()) {
        return Err(invalid!(
            "{c} candidates requested from {} tags and {} attributes",
            lex.tags.len(),
            lex.attributes.len()
        ));
    }
    let sigma = sigma_weights(cfg);
    let tags = top_candidates(query, &lex.tags, c);
    let attrs = top_candidates(query, &lex.attributes, c);
    let mut out = DVector::zeros(lex.dim);
    for ((w, t), a) in sigma.iter().zip(tags).zip(attrs) {
        out += (&lex.tags[t].vector + &lex.attributes[a].vector) * *w;
    }
    let norm = out.norm();
    if norm == 0.0 {
        return Err(invalid!("aggregated text embedding vanished"));
    }
    Ok(out / norm)
}

/// [`aggregate_text`] for each row of `queries`.
pub fn aggregate_rows(queries: &DMatrix<f64>, lex: &Lexicon, cfg: &RtaConfig) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(queries.nrows(), lex.dim);
    for (i, row) in queries.row_iter().enumerate() {
        let q = row.transpose();
        out.set_row(i, &aggregate_text(&q, lex, cfg)?.transpose());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn e(i: usize, d: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    fn entries(vectors: &[DVector<f64>], prefix: &str) -> Vec<LexiconEntry> {
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| LexiconEntry {
                id: format!("{prefix}{i}"),
                vector: v.clone(),
            })
            .collect()
    }

    #[test]
    fn sigma_default_values() {
        let w = sigma_weights(&RtaConfig::default());
        assert_eq!(w.len(), 4);
        assert!((w[0] - 0.5).abs() < 1e-15);
        for &x in &w[1..] {
            assert!((x - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma_alpha_zero_is_top_one() {
        let w = sigma_weights(&RtaConfig {
            alpha: 0.0,
            candidates: 5,
        });
        assert_eq!(w, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sigma_single_candidate() {
        let w = sigma_weights(&RtaConfig {
            alpha: 0.5,
            candidates: 1,
        });
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn too_many_candidates_rejected() {
        let lex = Lexicon::new(entries(&[e(0, 2)], "t"), entries(&[e(0, 2), e(1, 2)], "a")).unwrap();
        let cfg = RtaConfig {
            alpha: 0.5,
            candidates: 2,
        };
        assert!(aggregate_text(&e(0, 2), &lex, &cfg).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut tags = entries(&[e(0, 2), e(1, 2)], "t");
        tags[1].id = tags[0].id.clone();
        assert!(Lexicon::new(tags, entries(&[e(0, 2)], "a")).is_err());
    }
}
