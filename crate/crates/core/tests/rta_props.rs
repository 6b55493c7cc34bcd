mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use ssr2gcd_core::rta::*;

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

fn lexicon(tags: &[DVector<f64>], attrs: &[DVector<f64>]) -> Lexicon {
    Lexicon::new(entries(tags, "t"), entries(attrs, "a")).unwrap()
}

fn close(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    (a - b).norm() < 1e-12
}

#[test]
fn sigma_examples() {
    let w = sigma_weights(&RtaConfig { alpha: 0.5, candidates: 4 });
    let want = [0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
    assert!(w.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    assert_eq!(sigma_weights(&RtaConfig { alpha: 0.0, candidates: 3 }), vec![1.0, 0.0, 0.0]);
    assert_eq!(sigma_weights(&RtaConfig { alpha: 0.5, candidates: 1 }), vec![1.0]);
}

#[test]
fn aggregate_examples() {
    let q = e(0, 2);
    let top1 = RtaConfig { alpha: 0.5, candidates: 1 };
    let lex = lexicon(&[e(0, 2), e(1, 2)], &[e(0, 2), e(1, 2)]);
    assert!(close(&aggregate_text(&q, &lex, &top1).unwrap(), &e(0, 2)));
    let swapped = lexicon(&[e(0, 2), e(1, 2)], &[e(1, 2), e(0, 2)]);
    assert!(close(&aggregate_text(&q, &swapped, &top1).unwrap(), &e(0, 2)));
    let two = RtaConfig { alpha: 0.5, candidates: 2 };
    let want = (e(0, 2) + e(1, 2)) / 2f64.sqrt();
    assert!(close(&aggregate_text(&q, &lex, &two).unwrap(), &want));
    let too_many = RtaConfig { alpha: 0.5, candidates: 3 };
    assert!(aggregate_text(&q, &lex, &too_many).is_err());
}

#[test]
fn lexicon_rejects_bad_entries() {
    assert!(Lexicon::new(vec![], entries(&[e(0, 2)], "a")).is_err());
    assert!(Lexicon::new(entries(&[e(0, 2) * 2.0], "t"), entries(&[e(0, 2)], "a")).is_err());
    let dup = vec![
        LexiconEntry { id: "x".into(), vector: e(0, 2) },
        LexiconEntry { id: "x".into(), vector: e(1, 2) },
    ];
    assert!(Lexicon::new(dup, entries(&[e(0, 2)], "a")).is_err());
}

fn random_lexicon(seed: u64, size: usize, d: usize) -> Lexicon {
    let mut r = rng(seed);
    let t: Vec<DVector<f64>> = random_unit(&mut r, size, d).row_iter().map(|x| x.transpose()).collect();
    let a: Vec<DVector<f64>> = random_unit(&mut r, size, d).row_iter().map(|x| x.transpose()).collect();
    lexicon(&t, &a)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_zero_reduces_to_top_one(seed in 0u64..10_000, size in 1usize..10, c in 1usize..10) {
        let c = c.min(size);
        let lex = random_lexicon(seed, size, 5);
        let q = random_unit(&mut rng(seed + 1), 1, 5).row(0).transpose();
        let got = aggregate_text(&q, &lex, &RtaConfig { alpha: 0.0, candidates: c }).unwrap();
        let t = top_candidates(&q, lex.tags(), 1)[0];
        let a = top_candidates(&q, lex.attributes(), 1)[0];
        let want = (&lex.tags()[t].vector + &lex.attributes()[a].vector).normalize();
        prop_assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn output_is_unit_norm(seed in 0u64..10_000, size in 2usize..10, alpha in 0.0f64..0.99) {
        let lex = random_lexicon(seed, size, 4);
        let q = random_unit(&mut rng(seed + 7), 1, 4).row(0).transpose();
        let out = aggregate_text(&q, &lex, &RtaConfig { alpha, candidates: 2 }).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_tag_is_similarity_argmax(seed in 0u64..10_000, size in 1usize..12) {
        let lex = random_lexicon(seed, size, 4);
        let q = random_unit(&mut rng(seed + 3), 1, 4).row(0).transpose();
        let best = top_candidates(&q, lex.tags(), 1)[0];
        let sims: Vec<f64> = lex.tags().iter().map(|t| t.vector.dot(&q)).collect();
        let argmax = (0..size).fold(0, |b, i| if sims[i] > sims[b] { i } else { b });
        prop_assert_eq!(best, argmax);
    }

    #[test]
    fn lexicon_order_does_not_matter(seed in 0u64..10_000, size in 3usize..10) {
        let lex = random_lexicon(seed, size, 4);
        let q = random_unit(&mut rng(seed + 5), 1, 4).row(0).transpose();
        let cfg = RtaConfig { alpha: 0.5, candidates: 3 };
        let mut tags = lex.tags().to_vec();
        let mut attrs = lex.attributes().to_vec();
        tags.reverse();
        attrs.rotate_left(1);
        let shuffled = Lexicon::new(tags, attrs).unwrap();
        let a = aggregate_text(&q, &lex, &cfg).unwrap();
        let b = aggregate_text(&q, &shuffled, &cfg).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }
}
