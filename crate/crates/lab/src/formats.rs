//! On-disk formats. Text formats print floats in shortest round-trip form, so
//! writing then reading gives back the same bits.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use ssr2gcd_core::datagen::DatasetSplit;
use ssr2gcd_core::model::{DualBranchModel, Parameters};
use ssr2gcd_core::rta::{Lexicon, LexiconEntry};
use ssr2gcd_core::trainer::MetricsRecord;

use crate::LabError;

pub const METRICS_HEADER: &str =
    "epoch,loss_total,loss_rep,loss_cls,loss_coteach,acc_all,acc_old,acc_new,nmi,ari,rho_img,rho_txt,rank_old,rank_new";

const DATASET_MAGIC: &str = "# ssr2gcd dataset v1";
const CHECKPOINT_MAGIC: &[u8; 8] = b"SSR2CKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), LabError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(contents).map_err(|e| LabError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, LabError> {
    std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> LabError {
    LabError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        let _ = write!(out, " {v}");
    }
}

fn parse_floats(path: &Path, line: usize, words: &[&str]) -> Result<Vec<f64>, LabError> {
    words
        .iter()
        .map(|w| w.parse::<f64>().map_err(|_| parse_err(path, line, format!("not a number: {w:?}"))))
        .collect()
}

/// Dataset text file.
///
/// ```text
/// # ssr2gcd dataset v1
/// samples 2000 image_dim 64 text_dim 64 categories 10
/// old 0 1 2 3 4
/// 3 1 <image values...> <text values...>
/// ```
///
/// Each sample row is `label labeled(0|1)` followed by the raw image then the raw text features.
pub fn dataset_to_string(split: &DatasetSplit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DATASET_MAGIC}");
    let _ = writeln!(
        out,
        "samples {} image_dim {} text_dim {} categories {}",
        split.len(),
        split.raw_image.ncols(),
        split.raw_text.ncols(),
        split.num_categories()
    );
    out.push_str("old");
    for c in split.old_classes() {
        let _ = write!(out, " {c}");
    }
    out.push('\n');
    for i in 0..split.len() {
        let _ = write!(out, "{} {}", split.labels[i], u8::from(split.is_labeled[i]));
        push_row(&mut out, split.raw_image.row(i).iter().copied());
        push_row(&mut out, split.raw_text.row(i).iter().copied());
        out.push('\n');
    }
    out
}

fn header_field(path: &Path, words: &[&str], key: &str, pos: usize) -> Result<usize, LabError> {
    match (words.get(pos), words.get(pos + 1)) {
        (Some(&k), Some(v)) if k == key => v.parse().map_err(|_| parse_err(path, 2, format!("bad value for {key}"))),
        _ => Err(parse_err(path, 2, format!("expected `{key} <n>`"))),
    }
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<DatasetSplit, LabError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(DATASET_MAGIC) {
        return Err(parse_err(path, 1, format!("expected `{DATASET_MAGIC}`")));
    }
    let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    let n = header_field(path, &header, "samples", 0)?;
    let di = header_field(path, &header, "image_dim", 2)?;
    let dt = header_field(path, &header, "text_dim", 4)?;
    let k = header_field(path, &header, "categories", 6)?;
    let old_line: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    if old_line.first() != Some(&"old") {
        return Err(parse_err(path, 3, "expected `old <ids...>`"));
    }
    let mut is_old_category = vec![false; k];
    for w in &old_line[1..] {
        let c: usize = w.parse().map_err(|_| parse_err(path, 3, format!("bad category id {w:?}")))?;
        *is_old_category
            .get_mut(c)
            .ok_or_else(|| parse_err(path, 3, format!("category {c} out of range")))? = true;
    }
    let mut raw_image = DMatrix::zeros(n, di);
    let mut raw_text = DMatrix::zeros(n, dt);
    let mut labels = Vec::with_capacity(n);
    let mut is_labeled = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let lineno = i + 4;
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        if labels.len() == n {
            return Err(parse_err(path, lineno, format!("more than {n} samples")));
        }
        if words.len() != 2 + di + dt {
            return Err(parse_err(path, lineno, format!("expected {} fields, found {}", 2 + di + dt, words.len())));
        }
        let label: usize = words[0].parse().map_err(|_| parse_err(path, lineno, "bad label"))?;
        let flag = match words[1] {
            "0" => false,
            "1" => true,
            _ => return Err(parse_err(path, lineno, "labeled flag must be 0 or 1")),
        };
        let values = parse_floats(path, lineno, &words[2..])?;
        let row = labels.len();
        raw_image.row_mut(row).iter_mut().zip(&values[..di]).for_each(|(d, s)| *d = *s);
        raw_text.row_mut(row).iter_mut().zip(&values[di..]).for_each(|(d, s)| *d = *s);
        labels.push(label);
        is_labeled.push(flag);
    }
    if labels.len() != n {
        return Err(parse_err(path, 2, format!("header promises {n} samples, found {}", labels.len())));
    }
    let split = DatasetSplit {
        raw_image,
        raw_text,
        labels,
        is_labeled,
        is_old_category,
    };
    split.validate()?;
    Ok(split)
}

pub fn read_dataset(path: &Path) -> Result<DatasetSplit, LabError> {
    parse_dataset(&read_text(path)?, path)
}

/// Lexicon text file: `[tags]` and `[attributes]` sections, one `id v1 .. vd`
/// row per entry. Blank lines and `#` comments are ignored.
pub fn lexicon_to_string(lex: &Lexicon) -> String {
    let mut out = String::new();
    for (name, entries) in [("tags", lex.tags()), ("attributes", lex.attributes())] {
        let _ = writeln!(out, "[{name}]");
        for e in entries {
            out.push_str(&e.id);
            push_row(&mut out, e.vector.iter().copied());
            out.push('\n');
        }
    }
    out
}

pub fn parse_lexicon(text: &str, path: &Path) -> Result<Lexicon, LabError> {
    let mut tags = Vec::new();
    let mut attributes = Vec::new();
    let mut section: Option<bool> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "[tags]" => section = Some(true),
            "[attributes]" => section = Some(false),
            _ => {
                let words: Vec<&str> = line.split_whitespace().collect();
                if words.len() < 2 {
                    return Err(parse_err(path, lineno, "entry needs an id and at least one value"));
                }
                let entry = LexiconEntry {
                    id: words[0].to_string(),
                    vector: DVector::from_vec(parse_floats(path, lineno, &words[1..])?),
                };
                match section {
                    Some(true) => tags.push(entry),
                    Some(false) => attributes.push(entry),
                    None => return Err(parse_err(path, lineno, "entry before any [tags] or [attributes] header")),
                }
            }
        }
    }
    Ok(Lexicon::new(tags, attributes)?)
}

pub fn read_lexicon(path: &Path) -> Result<Lexicon, LabError> {
    parse_lexicon(&read_text(path)?, path)
}

/// One integer label per line.
pub fn labels_to_string(labels: &[usize]) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<usize>, LabError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("not a label: {:?}", l.trim())))
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>, LabError> {
    parse_labels(&read_text(path)?, path)
}

/// Whitespace-separated matrix, one row per line.
pub fn matrix_to_string(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<DMatrix<f64>, LabError> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(words.len()),
            Some(c) if c != words.len() => {
                return Err(parse_err(path, i + 1, format!("expected {c} columns, found {}", words.len())))
            }
            _ => {}
        }
        values.extend(parse_floats(path, i + 1, &words)?);
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &values))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, LabError> {
    parse_matrix(&read_text(path)?, path)
}

/// Binary checkpoint.
///
/// Layout, all integers little-endian: 8-byte magic `SSR2CKPT`, `u32` version,
/// `u32` tensor count, then per tensor `u32` rows, `u32` cols and rows·cols
/// `f64` values in row-major order. Tensor order is image encoder (w1, b1, w2,
/// b2), text encoder, image head, text head.
pub fn checkpoint_bytes(model: &DualBranchModel) -> Vec<u8> {
    let tensors = model.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (_, t) in tensors {
        out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for r in 0..t.nrows() {
            for c in 0..t.ncols() {
                out.extend_from_slice(&t[(r, c)].to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        chunk.try_into().ok()
    }

    fn u32(&mut self) -> Option<usize> {
        self.take::<4>().map(|b| u32::from_le_bytes(b) as usize)
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<DualBranchModel, LabError> {
    let bad = |m: &str| LabError::Checkpoint(m.to_string());
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take::<8>().as_ref() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing magic"));
    }
    if cur.u32() != Some(CHECKPOINT_VERSION as usize) {
        return Err(bad("unsupported version"));
    }
    let count = cur.u32().ok_or_else(|| bad("truncated header"))?;
    if count != 10 {
        return Err(bad("expected 10 tensors"));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = cur.u32().ok_or_else(|| bad("truncated shape"))?;
        let cols = cur.u32().ok_or_else(|| bad("truncated shape"))?;
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f64::from_le_bytes(cur.take::<8>().ok_or_else(|| bad("truncated values"))?);
            }
        }
        tensors.push(m);
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let (img_in, hidden, embed) = (tensors[0].nrows(), tensors[0].ncols(), tensors[2].ncols());
    let txt_in = tensors[4].nrows();
    let d_cls = tensors[8].ncols();
    if [hidden, embed, d_cls].contains(&0) {
        return Err(bad("empty tensor"));
    }
    let mut model = DualBranchModel::new(img_in, txt_in, hidden, embed, d_cls, &mut ChaCha8Rng::seed_from_u64(0));
    for ((_, dst), src) in model.tensors_mut().into_iter().zip(tensors) {
        if dst.shape() != src.shape() {
            return Err(bad("inconsistent tensor shapes"));
        }
        *dst = src;
    }
    Ok(model)
}

/// Metrics CSV. `None` ranks are written as empty fields.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.loss_total,
            r.loss_rep,
            r.loss_cls,
            r.loss_coteach,
            r.acc_all,
            r.acc_old,
            r.acc_new,
            r.nmi,
            r.ari,
            r.rho_img,
            r.rho_txt,
            opt(r.rank_old),
            opt(r.rank_new)
        );
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}
