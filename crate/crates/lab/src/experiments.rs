//! Train, ablate, sweep and evaluate, plus the artifacts each one writes.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use ssr2gcd_core::datagen::{generate, DatasetSplit};
use ssr2gcd_core::eval::{consistency_ratio, hungarian_acc, mean_group_ranks, ClusteringResult, RankReport};
use ssr2gcd_core::rta::Lexicon;
use ssr2gcd_core::trainer::{run, MetricsRecord, RepLoss, RunOutput, TrainError};

use crate::config::RunConfig;
use crate::formats;
use crate::LabError;

/// Loads a dataset and lexicon from files when both are given, otherwise
/// generates them from `cfg.data`.
pub fn prepare(cfg: &RunConfig, files: Option<(&Path, &Path)>) -> Result<(DatasetSplit, Lexicon), LabError> {
    match files {
        Some((data, lex)) => Ok((formats::read_dataset(data)?, formats::read_lexicon(lex)?)),
        None => Ok(generate(&cfg.data)?),
    }
}

pub fn train(cfg: &RunConfig, split: &DatasetSplit, lex: &Lexicon) -> Result<RunOutput, LabError> {
    run(split, lex, &cfg.train).map_err(|e| match e {
        TrainError::Invalid(e) => LabError::Core(e),
        TrainError::Diverged {
            epoch,
            step,
            message,
            last_good,
        } => LabError::Diverged {
            epoch,
            step,
            message,
            last_good,
        },
    })
}

/// Final record of a run, or the untrained snapshot for a zero-epoch run.
pub fn final_record(out: &RunOutput) -> &MetricsRecord {
    out.records.last().unwrap_or(&out.initial)
}

#[derive(Debug, Serialize)]
pub struct TrainReport<'a> {
    pub config: &'a RunConfig,
    pub initial: &'a MetricsRecord,
    #[serde(rename = "final")]
    pub last: &'a MetricsRecord,
    pub clustering: &'a ClusteringResult,
    pub ranks_img: &'a RankReport,
}

/// Writes `metrics.csv`, `report.json`, `model.ckpt` and `predictions.txt` into `dir`.
pub fn write_train_outputs(dir: &Path, cfg: &RunConfig, out: &RunOutput) -> Result<(), LabError> {
    let report = TrainReport {
        config: cfg,
        initial: &out.initial,
        last: final_record(out),
        clustering: &out.final_eval.clustering,
        ranks_img: &out.final_eval.ranks_img,
    };
    formats::write_file(&dir.join("metrics.csv"), formats::metrics_csv(&out.records).as_bytes())?;
    formats::write_file(&dir.join("report.json"), formats::to_json(&report).as_bytes())?;
    formats::write_file(&dir.join("model.ckpt"), &formats::checkpoint_bytes(&out.model))?;
    formats::write_file(
        &dir.join("predictions.txt"),
        formats::labels_to_string(&out.final_eval.predictions).as_bytes(),
    )
}

/// One row of an ablation or sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub key: String,
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub nmi: f64,
    pub ari: f64,
    pub rho_img: f64,
    pub rho_txt: f64,
    pub rank_old: Option<f64>,
    pub rank_new: Option<f64>,
}

impl SummaryRow {
    fn new(key: String, r: &MetricsRecord) -> Self {
        Self {
            key,
            acc_all: r.acc_all,
            acc_old: r.acc_old,
            acc_new: r.acc_new,
            nmi: r.nmi,
            ari: r.ari,
            rho_img: r.rho_img,
            rho_txt: r.rho_txt,
            rank_old: r.rank_old,
            rank_new: r.rank_new,
        }
    }
}

pub fn summary_csv(key_name: &str, rows: &[SummaryRow]) -> String {
    let mut out = format!("{key_name},acc_all,acc_old,acc_new,nmi,ari,rho_img,rho_txt,rank_old,rank_new\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.key,
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

fn run_cells(cells: Vec<(String, RunConfig)>, split: &DatasetSplit, lex: &Lexicon) -> Result<Vec<SummaryRow>, LabError> {
    cells
        .into_par_iter()
        .map(|(key, cfg)| {
            let out = train(&cfg, split, lex)?;
            Ok(SummaryRow::new(key, final_record(&out)))
        })
        .collect()
}

/// Trains once per representation loss on the same data.
pub fn ablate(
    cfg: &RunConfig,
    losses: &[RepLoss],
    split: &DatasetSplit,
    lex: &Lexicon,
) -> Result<Vec<SummaryRow>, LabError> {
    let cells = losses
        .iter()
        .map(|&l| {
            let mut c = cfg.clone();
            c.train.rep_loss = l;
            (l.name().to_string(), c)
        })
        .collect();
    run_cells(cells, split, lex)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Epsilon,
    Alpha,
    Nu,
    Candidates,
    DCls,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::Alpha => "alpha",
            SweepParam::Nu => "nu",
            SweepParam::Candidates => "c",
            SweepParam::DCls => "d_cls",
        }
    }

    fn integral(self) -> bool {
        matches!(self, SweepParam::Candidates | SweepParam::DCls)
    }

    pub fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<(), LabError> {
        if self.integral() && (value.fract() != 0.0 || value < 0.0) {
            return Err(LabError::Usage(format!("{} takes nonnegative integers, got {value}", self.name())));
        }
        match self {
            SweepParam::Epsilon => cfg.train.rate_cfg.epsilon = value,
            SweepParam::Alpha => cfg.train.rta_cfg.alpha = value,
            SweepParam::Nu => cfg.train.loss_cfg.nu = value,
            SweepParam::Candidates => cfg.train.rta_cfg.candidates = value as usize,
            SweepParam::DCls => cfg.train.d_cls = Some(value as usize),
        }
        cfg.train.validate()?;
        Ok(())
    }
}

impl FromStr for SweepParam {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, LabError> {
        match s {
            "epsilon" | "eps" => Ok(SweepParam::Epsilon),
            "alpha" => Ok(SweepParam::Alpha),
            "nu" => Ok(SweepParam::Nu),
            "c" => Ok(SweepParam::Candidates),
            "d_cls" | "dcls" => Ok(SweepParam::DCls),
            _ => Err(LabError::Usage(format!(
                "unknown sweep parameter {s:?}; expected epsilon, alpha, nu, c or d_cls"
            ))),
        }
    }
}

/// Parses `a,b,c` or `start..end` with a step. Range endpoints are inclusive;
/// values are rounded to 12 decimals to drop accumulation noise.
pub fn parse_values(spec: &str, step: Option<f64>) -> Result<Vec<f64>, LabError> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| LabError::Usage(format!("not a number: {s:?}")))
    };
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        let step = step.ok_or_else(|| LabError::Usage("a range needs a step".into()))?;
        if step.is_nan() || step <= 0.0 || b < a {
            return Err(LabError::Usage(format!("empty range {spec} step {step}")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect())
    } else {
        if step.is_some() {
            return Err(LabError::Usage("step only applies to a range".into()));
        }
        spec.split(',').map(num).collect()
    }
}

pub fn sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
    split: &DatasetSplit,
    lex: &Lexicon,
) -> Result<Vec<SummaryRow>, LabError> {
    let cells = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            param.apply(&mut c, v)?;
            Ok((v.to_string(), c))
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    run_cells(cells, split, lex)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub rho: f64,
    /// `(class, ratio)` pairs.
    pub rho_per_class: Vec<(usize, f64)>,
    /// Some class had no positive cross-class mass and was capped.
    pub rho_capped: bool,
    pub ranks: RankReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub clustering: ClusteringResult,
    pub embeddings: Option<EmbeddingReport>,
}

/// Metrics for predictions against ground truth, and optionally the
/// consistency ratio and ranks of per-sample embeddings.
pub fn evaluate(
    pred: &[usize],
    truth: &[usize],
    old_classes: &[usize],
    embeddings: Option<&DMatrix<f64>>,
) -> Result<EvalReport, LabError> {
    let clustering = hungarian_acc(pred, truth, old_classes)?;
    let embeddings = match embeddings {
        None => None,
        Some(z) => {
            if z.nrows() != truth.len() {
                return Err(LabError::Usage(format!(
                    "{} embedding rows for {} labels",
                    z.nrows(),
                    truth.len()
                )));
            }
            let rho = consistency_ratio(z, truth)?;
            Some(EmbeddingReport {
                rho: rho.rho,
                rho_per_class: rho.per_class,
                rho_capped: rho.capped,
                ranks: mean_group_ranks(z, truth, old_classes)?,
            })
        }
    };
    Ok(EvalReport {
        samples: truth.len(),
        clustering,
        embeddings,
    })
}
