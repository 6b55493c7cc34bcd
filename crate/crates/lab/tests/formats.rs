use std::path::Path;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssr2gcd_core::datagen::{generate, GenConfig};
use ssr2gcd_core::model::{DualBranchModel, Parameters};
use ssr2gcd_core::trainer::MetricsRecord;
use ssr2gcd_lab::formats::*;
use ssr2gcd_lab::LabError;

fn small() -> GenConfig {
    GenConfig {
        k_total: 3,
        k_old: 2,
        ambient_dim: 6,
        subspace_dim: 2,
        per_class_sizes: vec![5, 4, 6],
        lexicon_distractors: 1,
        ..GenConfig::default()
    }
}

fn line_of(err: LabError) -> usize {
    match err {
        LabError::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let (split, _) = generate(&small()).unwrap();
    let text = dataset_to_string(&split);
    assert_eq!(parse_dataset(&text, Path::new("d")).unwrap(), split);
    assert!(text.starts_with("# ssr2gcd dataset v1\nsamples 15 image_dim 6 text_dim 6 categories 3\nold 0 1\n"));
}

#[test]
fn dataset_errors_name_the_line() {
    let (split, _) = generate(&small()).unwrap();
    let text = dataset_to_string(&split);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[5] = lines[5].replacen(' ', " x", 2);
    assert_eq!(line_of(parse_dataset(&lines.join("\n"), Path::new("d")).unwrap_err()), 6);
    let truncated: Vec<&str> = text.lines().take(10).collect();
    assert_eq!(line_of(parse_dataset(&truncated.join("\n"), Path::new("d")).unwrap_err()), 2);
    assert_eq!(line_of(parse_dataset("nope", Path::new("d")).unwrap_err()), 1);
}

#[test]
fn lexicon_round_trip() {
    let (_, lex) = generate(&small()).unwrap();
    let text = lexicon_to_string(&lex);
    assert!(text.starts_with("[tags]\ntag_000 "));
    let back = parse_lexicon(&text, Path::new("l")).unwrap();
    assert_eq!(back.tags(), lex.tags());
    assert_eq!(back.attributes(), lex.attributes());
}

#[test]
fn lexicon_errors() {
    let err = parse_lexicon("# comment\n\nt0 1 0\n", Path::new("l")).unwrap_err();
    assert_eq!(line_of(err), 3);
    let err = parse_lexicon("[tags]\nt0 1 zero\n[attributes]\na0 1 0\n", Path::new("l")).unwrap_err();
    assert_eq!(line_of(err), 2);
    assert!(parse_lexicon("[tags]\nt0 1 0\n[attributes]\na0 1 0\n", Path::new("l")).is_ok());
}

#[test]
fn checkpoint_round_trip() {
    let model = DualBranchModel::new(6, 5, 7, 3, 4, &mut ChaCha8Rng::seed_from_u64(1));
    let bytes = checkpoint_bytes(&model);
    assert_eq!(&bytes[..8], b"SSR2CKPT");
    let values: usize = model.tensors().iter().map(|(_, t)| t.len()).sum();
    assert_eq!(bytes.len(), 16 + 10 * 8 + values * 8);
    assert_eq!(parse_checkpoint(&bytes).unwrap(), model);

    assert!(parse_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(parse_checkpoint(&extra).is_err());
    let mut bad = bytes;
    bad[0] = b'X';
    assert!(matches!(parse_checkpoint(&bad), Err(LabError::Checkpoint(_))));
}

#[test]
fn metrics_csv_layout() {
    let r = MetricsRecord {
        epoch: 3,
        loss_total: -1.5,
        loss_rep: -2.0,
        loss_cls: 0.25,
        loss_coteach: 0.25,
        acc_all: 0.5,
        acc_old: 1.0,
        acc_new: 0.0,
        nmi: 0.125,
        ari: -0.0625,
        rho_img: 2.0,
        rho_txt: 1e6,
        rank_old: Some(2.5),
        rank_new: None,
    };
    let csv = metrics_csv(&[r]);
    assert_eq!(
        csv,
        format!("{METRICS_HEADER}\n3,-1.5,-2,0.25,0.25,0.5,1,0,0.125,-0.0625,2,1000000,2.5,\n")
    );
}

#[test]
fn labels_parse_and_report_bad_lines() {
    assert_eq!(parse_labels("1\n\n2\n0\n", Path::new("p")).unwrap(), vec![1, 2, 0]);
    assert_eq!(line_of(parse_labels("1\n-2\n", Path::new("p")).unwrap_err()), 2);
}

#[test]
fn ragged_matrix_rejected() {
    assert_eq!(line_of(parse_matrix("1 2\n3\n", Path::new("m")).unwrap_err()), 2);
}

proptest! {
    #[test]
    fn matrix_text_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(rows, cols, |_, _| {
            let bits: u64 = rand::Rng::random(&mut r);
            let v = f64::from_bits(bits);
            if v.is_finite() { v } else { 0.0 }
        });
        let back = parse_matrix(&matrix_to_string(&m), Path::new("m")).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn labels_round_trip(v in proptest::collection::vec(0usize..1000, 0..50)) {
        prop_assert_eq!(parse_labels(&labels_to_string(&v), Path::new("p")).unwrap(), v);
    }
}
