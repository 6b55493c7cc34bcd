//! Two-stage training loop with per-epoch evaluation.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{augment_views, unit_rows, DatasetSplit, Modality};
use crate::error::{invalid, Error, Result};
use crate::eval::{consistency_rho, hungarian_acc, mean_group_ranks, ClusteringResult, RankReport};
use crate::linalg::all_finite;
use crate::losses::{
    classifier_loss, cico_loss, clip_inter_loss, contrastive_loss, coteach_loss, rate_partitions, LossConfig,
    PredictionBatch, PrototypeSet,
};
use crate::model::{DualBranchModel, EncoderPass, OptimizerState, ParamGroup, Parameters, SgdConfig};
use crate::rate::{ssr2_value_grad, RateConfig};
use crate::rng::{stream_rng, Stream};
use crate::rta::{aggregate_rows, Lexicon, RtaConfig};

/// Representation loss used alongside the classifier losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub enum RepLoss {
    /// No representation loss; encoders stay at their random initialization.
    None,
    Clip,
    Con,
    #[default]
    Ssr2,
    /// `con + ν·clip`.
    ClipCon,
    /// `ssr2 + ν·clip`.
    ClipSsr2,
    Cico,
    /// `con + ν·cico`.
    CicoCon,
    /// `ssr2 + ν·cico`.
    CicoSsr2,
}

impl RepLoss {
    pub const ALL: [RepLoss; 9] = [
        RepLoss::None,
        RepLoss::Clip,
        RepLoss::Con,
        RepLoss::Ssr2,
        RepLoss::ClipCon,
        RepLoss::ClipSsr2,
        RepLoss::Cico,
        RepLoss::CicoCon,
        RepLoss::CicoSsr2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepLoss::None => "none",
            RepLoss::Clip => "clip",
            RepLoss::Con => "con",
            RepLoss::Ssr2 => "ssr2",
            RepLoss::ClipCon => "clip+con",
            RepLoss::ClipSsr2 => "clip+ssr2",
            RepLoss::Cico => "cico",
            RepLoss::CicoCon => "cico+con",
            RepLoss::CicoSsr2 => "cico+ssr2",
        }
    }

    fn uses_con(self) -> bool {
        matches!(self, RepLoss::Con | RepLoss::ClipCon | RepLoss::CicoCon)
    }

    fn uses_ssr2(self) -> bool {
        matches!(self, RepLoss::Ssr2 | RepLoss::ClipSsr2 | RepLoss::CicoSsr2)
    }

    /// Weight of the inter-modal contrastive term.
    fn clip_weight(self, nu: f64) -> f64 {
        match self {
            RepLoss::Clip => 1.0,
            RepLoss::ClipCon | RepLoss::ClipSsr2 => nu,
            _ => 0.0,
        }
    }

    /// Weight of the prototype consistency term.
    fn cico_weight(self, nu: f64) -> f64 {
        match self {
            RepLoss::Cico => 1.0,
            RepLoss::CicoCon | RepLoss::CicoSsr2 => nu,
            _ => 0.0,
        }
    }
}

impl fmt::Display for RepLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RepLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RepLoss::ALL
            .into_iter()
            .find(|l| l.name() == s.trim())
            .ok_or_else(|| invalid!("unknown representation loss `{s}`"))
    }
}

impl TryFrom<String> for RepLoss {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RepLoss> for String {
    fn from(l: RepLoss) -> String {
        l.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs_total: usize,
    pub epochs_warmup: usize,
    pub batch_size: usize,
    /// Share of each predicted class kept for co-teaching.
    pub coteach_fraction: f64,
    pub rep_loss: RepLoss,
    /// Classifier width; `None` means one output per category.
    pub d_cls: Option<usize>,
    pub hidden_dim: usize,
    /// Let classifier-loss gradients reach the encoders. Off by default, so
    /// embedding geometry is shaped by the representation loss alone.
    pub classifier_grad_to_encoder: bool,
    pub aug_noise: f64,
    pub aug_dropout: f64,
    pub loss_cfg: LossConfig,
    pub rate_cfg: RateConfig,
    pub rta_cfg: RtaConfig,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_total: 50,
            epochs_warmup: 10,
            batch_size: 128,
            coteach_fraction: 0.6,
            rep_loss: RepLoss::Ssr2,
            d_cls: None,
            hidden_dim: 128,
            classifier_grad_to_encoder: false,
            aug_noise: 0.05,
            aug_dropout: 0.1,
            loss_cfg: LossConfig::default(),
            rate_cfg: RateConfig::default(),
            rta_cfg: RtaConfig::default(),
            sgd: SgdConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_warmup > self.epochs_total {
            return Err(invalid!(
                "epochs_warmup {} exceeds epochs_total {}",
                self.epochs_warmup,
                self.epochs_total
            ));
        }
        if self.batch_size < 4 {
            return Err(invalid!("batch_size must be at least 4, got {}", self.batch_size));
        }
        if !(self.coteach_fraction > 0.0 && self.coteach_fraction <= 1.0) {
            return Err(invalid!("coteach_fraction must lie in (0, 1], got {}", self.coteach_fraction));
        }
        if self.d_cls == Some(0) {
            return Err(invalid!("d_cls must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(invalid!("hidden_dim must be at least 1"));
        }
        if !(self.aug_noise >= 0.0 && self.aug_noise.is_finite()) {
            return Err(invalid!("aug_noise must be nonnegative, got {}", self.aug_noise));
        }
        if !(0.0..1.0).contains(&self.aug_dropout) {
            return Err(invalid!("aug_dropout must lie in [0, 1), got {}", self.aug_dropout));
        }
        self.loss_cfg.validate()?;
        self.rate_cfg.validate()?;
        self.rta_cfg.validate()?;
        self.sgd.validate()
    }
}

/// Losses and metrics at the end of one epoch.
///
/// Loss fields are means over the epoch's batches (zero for the snapshot taken
/// before training). Accuracies, NMI and ARI are measured on the unlabeled
/// samples; consistency ratios and ranks on all samples.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_rep: f64,
    pub loss_cls: f64,
    pub loss_coteach: f64,
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

/// Clean (unaugmented) evaluation of a model on a whole split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub clustering: ClusteringResult,
    pub rho_img: f64,
    pub rho_txt: f64,
    pub ranks_img: RankReport,
    /// Fused prediction for every sample.
    pub predictions: Vec<usize>,
    /// Image-branch prediction for every sample.
    pub predictions_img: Vec<usize>,
    /// Text-branch prediction for every sample.
    pub predictions_txt: Vec<usize>,
    pub embeddings_img: DMatrix<f64>,
    pub embeddings_txt: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: DualBranchModel,
    /// Metrics of the untrained model.
    pub initial: MetricsRecord,
    /// One record per epoch.
    pub records: Vec<MetricsRecord>,
    pub final_eval: Evaluation,
}

#[derive(Debug, Clone)]
pub enum TrainError {
    Invalid(Error),
    /// A non-finite loss or gradient; holds the parameters before the failing step.
    Diverged {
        epoch: usize,
        step: usize,
        message: String,
        last_good: Box<DualBranchModel>,
    },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Invalid(e) => write!(f, "{e}"),
            TrainError::Diverged { epoch, step, message, .. } => {
                write!(f, "training diverged at epoch {epoch}, step {step}: {message}")
            }
        }
    }
}

impl core::error::Error for TrainError {}

impl From<Error> for TrainError {
    fn from(e: Error) -> Self {
        TrainError::Invalid(e)
    }
}

/// Keeps the top `⌈fraction·n_c⌉` rows of each predicted class by maximum
/// probability, ties to the lower row index. Returned in ascending order.
pub fn select_confident(preds: &PredictionBatch, fraction: f64) -> Vec<usize> {
    let labels = preds.argmax();
    let conf = preds.confidence();
    let mut by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); preds.num_classes()];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut out = Vec::new();
    for mut rows in by_class {
        rows.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
        let keep = ((fraction * rows.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        out.extend_from_slice(&rows[..keep.min(rows.len())]);
    }
    out.sort_unstable();
    out
}

/// Shuffled labeled and unlabeled pools, drawn down batch by batch.
#[derive(Debug, Clone)]
pub struct BatchPools {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

impl BatchPools {
    pub fn new<R: Rng>(split: &DatasetSplit, rng: &mut R) -> Self {
        let mut labeled = split.labeled_indices();
        let mut unlabeled = split.unlabeled_indices();
        labeled.shuffle(rng);
        unlabeled.shuffle(rng);
        Self { labeled, unlabeled }
    }

    pub fn remaining(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Half labeled, half unlabeled where both pools allow; otherwise filled
    /// from whichever pool is left. `None` once both pools are empty.
    pub fn next_batch(&mut self, batch_size: usize) -> Option<Vec<usize>> {
        if self.remaining() == 0 {
            return None;
        }
        let want_l = (batch_size / 2).min(self.labeled.len());
        let want_u = (batch_size - want_l).min(self.unlabeled.len());
        let want_l = (batch_size - want_u).min(self.labeled.len());
        let mut batch: Vec<usize> = self.labeled.split_off(self.labeled.len() - want_l);
        batch.extend(self.unlabeled.split_off(self.unlabeled.len() - want_u));
        batch.sort_unstable();
        Some(batch)
    }
}

/// One batch drawn from fresh pools.
pub fn compose_batch<R: Rng>(split: &DatasetSplit, batch_size: usize, rng: &mut R) -> Vec<usize> {
    BatchPools::new(split, rng).next_batch(batch_size).unwrap_or_default()
}

/// All batches of one epoch. A trailing batch too small to train on is merged
/// into the previous one.
pub fn epoch_batches<R: Rng>(split: &DatasetSplit, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut pools = BatchPools::new(split, rng);
    let mut out: Vec<Vec<usize>> = Vec::new();
    while let Some(b) = pools.next_batch(batch_size) {
        match out.last_mut() {
            Some(prev) if b.len() < 4 => {
                prev.extend(b);
                prev.sort_unstable();
            }
            _ => out.push(b),
        }
    }
    out
}

fn augmented_inputs(base: &DMatrix<f64>, rows: &[usize], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> [DMatrix<f64>; 2] {
    let d = base.ncols();
    let mut a = DMatrix::zeros(rows.len(), d);
    let mut b = DMatrix::zeros(rows.len(), d);
    for (r, &i) in rows.iter().enumerate() {
        let [va, vb] = augment_views(&base.row(i).transpose(), cfg.aug_noise, cfg.aug_dropout, rng);
        a.set_row(r, &va.transpose());
        b.set_row(r, &vb.transpose());
    }
    [a, b]
}

#[derive(Debug, Clone, Copy, Default)]
struct StepLosses {
    rep: f64,
    cls: f64,
    coteach: f64,
}

struct Run<'a> {
    split: &'a DatasetSplit,
    cfg: &'a TrainConfig,
    /// Retrieved text features, one row per sample.
    pseudo_text: DMatrix<f64>,
    old_classes: Vec<usize>,
    d_cls: usize,
}

impl Run<'_> {
    fn evaluate(&self, model: &DualBranchModel) -> Result<Evaluation> {
        let zi = model.encoder_img.forward_pass(self.split.features(Modality::Image))?.output;
        let zt = model.encoder_txt.forward_pass(&self.pseudo_text)?.output;
        let temp = self.cfg.loss_cfg.student_temp;
        let pi = PredictionBatch::from_scores(model.head_img.scores(&zi)?, temp);
        let pt = PredictionBatch::from_scores(model.head_txt.scores(&zt)?, temp);
        let fused = PredictionBatch::from_scores(&pi.probs + &pt.probs, 1.0);
        let predictions = fused.argmax();
        let unl = self.split.unlabeled_indices();
        let pred_u: Vec<usize> = unl.iter().map(|&i| predictions[i]).collect();
        let truth_u: Vec<usize> = unl.iter().map(|&i| self.split.labels[i]).collect();
        let clustering = hungarian_acc(&pred_u, &truth_u, &self.old_classes)?;
        let labels = &self.split.labels;
        Ok(Evaluation {
            clustering,
            rho_img: consistency_rho(&zi, labels)?,
            rho_txt: consistency_rho(&zt, labels)?,
            ranks_img: mean_group_ranks(&zi, labels, &self.old_classes)?,
            predictions,
            predictions_img: pi.argmax(),
            predictions_txt: pt.argmax(),
            embeddings_img: zi,
            embeddings_txt: zt,
        })
    }

    fn prototypes(&self, model: &DualBranchModel) -> Result<(PrototypeSet, PrototypeSet)> {
        let lab = self.split.labeled_indices();
        let labels: Vec<Option<usize>> = lab.iter().map(|&i| Some(self.split.labels[i])).collect();
        let k = self.split.num_categories();
        let xi = self.split.features(Modality::Image).select_rows(lab.iter());
        let xt = self.pseudo_text.select_rows(lab.iter());
        let zi = model.encoder_img.forward_pass(&xi)?.output;
        let zt = model.encoder_txt.forward_pass(&xt)?.output;
        Ok((
            PrototypeSet::from_labeled_means(&zi, &labels, k)?,
            PrototypeSet::from_labeled_means(&zt, &labels, k)?,
        ))
    }

    /// Loss values and parameter gradients for one batch.
    fn step(
        &self,
        model: &DualBranchModel,
        rows: &[usize],
        alignment: bool,
        protos: Option<&(PrototypeSet, PrototypeSet)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(StepLosses, DualBranchModel)> {
        let cfg = self.cfg;
        let lc = &cfg.loss_cfg;
        let mode = cfg.rep_loss;
        let labels: Vec<Option<usize>> = rows.iter().map(|&i| self.split.visible_label(i)).collect();
        let [xi1, xi2] = augmented_inputs(self.split.features(Modality::Image), rows, cfg, rng);
        let [xt1, xt2] = augmented_inputs(&self.pseudo_text, rows, cfg, rng);
        let passes: [EncoderPass; 4] = [
            model.encoder_img.forward_pass(&xi1)?,
            model.encoder_img.forward_pass(&xi2)?,
            model.encoder_txt.forward_pass(&xt1)?,
            model.encoder_txt.forward_pass(&xt2)?,
        ];
        let z: [&DMatrix<f64>; 4] = [&passes[0].output, &passes[1].output, &passes[2].output, &passes[3].output];
        let heads = [&model.head_img, &model.head_img, &model.head_txt, &model.head_txt];
        let mut scores = Vec::with_capacity(4);
        for (h, zz) in heads.iter().zip(z) {
            scores.push(h.scores(zz)?);
        }
        let mut gz: Vec<DMatrix<f64>> = z.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
        let mut losses = StepLosses::default();

        let w_clip = mode.clip_weight(lc.nu);
        if w_clip > 0.0 {
            let c = clip_inter_loss(z[0], z[2], lc.tau_c)?;
            losses.rep += w_clip * c.value;
            gz[0] += c.grad_a * w_clip;
            gz[2] += c.grad_b * w_clip;
        }
        let w_cico = mode.cico_weight(lc.nu);
        if w_cico > 0.0 {
            let (pi, pt) = protos.ok_or_else(|| invalid!("prototype loss without prototypes"))?;
            let c = cico_loss(z[0], z[2], pi, pt)?;
            losses.rep += w_cico * c.value;
            gz[0] += c.grad_a * w_cico;
            gz[2] += c.grad_b * w_cico;
        }
        if mode.uses_con() {
            for (a, b) in [(0, 1), (2, 3)] {
                let c = contrastive_loss(z[a], z[b], &labels, lc)?;
                losses.rep += c.value;
                gz[a] += c.grad_a;
                gz[b] += c.grad_b;
            }
        }
        if mode.uses_ssr2() {
            for a in [0, 2] {
                let (lab, unlab) = rate_partitions(&labels, &scores[a], lc.student_temp)?;
                let (terms, g) = ssr2_value_grad(z[a], &lab, &unlab, alignment, &cfg.rate_cfg)?;
                losses.rep += if alignment { terms.loss() } else { terms.supervised_loss() };
                gz[a] += g;
            }
        }

        let mut gs: Vec<DMatrix<f64>> = scores.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
        for (a, b) in [(0, 1), (2, 3)] {
            let (_, c) = classifier_loss(&scores[a], &scores[b], &labels, lc)?;
            losses.cls += c.value;
            gs[a] += c.grad_a;
            gs[b] += c.grad_b;
        }
        if alignment {
            let unl: Vec<usize> = (0..rows.len()).filter(|&r| labels[r].is_none()).collect();
            let pi = PredictionBatch::from_scores(scores[0].clone(), lc.student_temp);
            let pt = PredictionBatch::from_scores(scores[2].clone(), lc.student_temp);
            let pick = |p: &PredictionBatch| -> Vec<usize> {
                let sub = PredictionBatch::from_scores(p.scores.select_rows(unl.iter()), p.temperature);
                select_confident(&sub, cfg.coteach_fraction).into_iter().map(|r| unl[r]).collect()
            };
            let co = coteach_loss(&pi, &pt, &pick(&pi), &pick(&pt))?;
            losses.coteach = co.value;
            gs[0] += co.grad_a;
            gs[2] += co.grad_b;
        }
        let total = losses.rep + losses.cls + losses.coteach;
        if !total.is_finite() {
            return Err(Error::Numeric(alloc::format!("non-finite loss {total}")));
        }

        let mut grads = model.zeros_like();
        for v in 0..4 {
            let (dw, dz) = heads[v].backward(z[v], &gs[v]);
            let head = if v < 2 { &mut grads.head_img } else { &mut grads.head_txt };
            head.weights += dw;
            if cfg.classifier_grad_to_encoder {
                gz[v] += dz;
            }
        }
        for v in 0..4 {
            let (enc, slot) = if v < 2 {
                (&model.encoder_img, &mut grads.encoder_img)
            } else {
                (&model.encoder_txt, &mut grads.encoder_txt)
            };
            let g = enc.backward(&passes[v], &gz[v]);
            slot.w1 += g.w1;
            slot.b1 += g.b1;
            slot.w2 += g.w2;
            slot.b2 += g.b2;
        }
        Ok((losses, grads))
    }
}

fn record(epoch: usize, losses: StepLosses, eval: &Evaluation) -> MetricsRecord {
    let c = &eval.clustering;
    MetricsRecord {
        epoch,
        loss_total: losses.rep + losses.cls + losses.coteach,
        loss_rep: losses.rep,
        loss_cls: losses.cls,
        loss_coteach: losses.coteach,
        acc_all: c.acc_all,
        acc_old: c.acc_old,
        acc_new: c.acc_new,
        nmi: c.nmi,
        ari: c.ari,
        rho_img: eval.rho_img,
        rho_txt: eval.rho_txt,
        rank_old: eval.ranks_img.mean_rank_old,
        rank_new: eval.ranks_img.mean_rank_new,
    }
}

/// Retrieved text feature for every sample, queried with its normalized text view.
pub fn pseudo_text(split: &DatasetSplit, lex: &Lexicon, rta: &RtaConfig) -> Result<DMatrix<f64>> {
    aggregate_rows(&unit_rows(&split.raw_text), lex, rta)
}

/// Trains a fresh model. Epochs before `epochs_warmup` use the warm-up
/// objective, the rest the alignment objective. Deterministic in `cfg.seed`.
pub fn run(split: &DatasetSplit, lex: &Lexicon, cfg: &TrainConfig) -> core::result::Result<RunOutput, TrainError> {
    cfg.validate()?;
    split.validate()?;
    if split.is_empty() {
        return Err(invalid!("empty dataset").into());
    }
    let k = split.num_categories();
    let d_cls = cfg.d_cls.unwrap_or(k);
    let ctx = Run {
        split,
        cfg,
        pseudo_text: pseudo_text(split, lex, &cfg.rta_cfg)?,
        old_classes: split.old_classes(),
        d_cls,
    };
    let mut init_rng = stream_rng(cfg.seed, Stream::Init);
    let mut batch_rng = stream_rng(cfg.seed, Stream::Batching);
    let mut aug_rng = stream_rng(cfg.seed, Stream::Augmentation);
    let mut model = DualBranchModel::new(
        split.raw_image.ncols(),
        ctx.pseudo_text.ncols(),
        cfg.hidden_dim,
        cfg.rate_cfg.embed_dim,
        ctx.d_cls,
        &mut init_rng,
    );
    let mut opt = OptimizerState::new(cfg.sgd, cfg.epochs_total)?;
    let frozen: &[ParamGroup] = if cfg.rep_loss == RepLoss::None {
        &[ParamGroup::Encoder]
    } else {
        &[]
    };

    let initial = record(0, StepLosses::default(), &ctx.evaluate(&model)?);
    let mut records = Vec::with_capacity(cfg.epochs_total);
    let mut last_eval = None;
    for epoch in 0..cfg.epochs_total {
        let alignment = epoch >= cfg.epochs_warmup;
        let protos = if cfg.rep_loss.cico_weight(cfg.loss_cfg.nu) > 0.0 {
            Some(ctx.prototypes(&model)?)
        } else {
            None
        };
        let batches = epoch_batches(split, cfg.batch_size, &mut batch_rng);
        let mut sum = StepLosses::default();
        for (step, rows) in batches.iter().enumerate() {
            let diverged = |message: String, model: &DualBranchModel| TrainError::Diverged {
                epoch,
                step,
                message,
                last_good: Box::new(model.clone()),
            };
            let (losses, grads) = ctx
                .step(&model, rows, alignment, protos.as_ref(), &mut aug_rng)
                .map_err(|e| diverged(e.to_string(), &model))?;
            let before = model.clone();
            opt.step(&mut model, &grads, epoch, frozen)
                .map_err(|e| diverged(e.to_string(), &before))?;
            if !model.tensors().iter().all(|(_, t)| all_finite(t)) {
                return Err(diverged("non-finite parameters after update".to_string(), &before));
            }
            sum.rep += losses.rep;
            sum.cls += losses.cls;
            sum.coteach += losses.coteach;
        }
        let nb = batches.len().max(1) as f64;
        let mean = StepLosses {
            rep: sum.rep / nb,
            cls: sum.cls / nb,
            coteach: sum.coteach / nb,
        };
        let eval = ctx.evaluate(&model)?;
        if !all_finite(&eval.embeddings_img) || !all_finite(&eval.embeddings_txt) {
            return Err(TrainError::Diverged {
                epoch,
                step: batches.len(),
                message: "non-finite embeddings after epoch".to_string(),
                last_good: Box::new(model),
            });
        }
        records.push(record(epoch, mean, &eval));
        last_eval = Some(eval);
    }
    let final_eval = match last_eval {
        Some(e) => e,
        None => ctx.evaluate(&model)?,
    };
    Ok(RunOutput {
        model,
        initial,
        records,
        final_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};

    #[test]
    fn select_top_six_of_ten() {
        let conf: [f64; 10] = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
        // Two-class scores whose softmax max equals the wanted confidence.
        let scores = DMatrix::from_fn(10, 2, |i, j| if j == 0 { (conf[i] / (1.0 - conf[i])).ln() } else { 0.0 });
        let p = PredictionBatch::from_scores(scores, 1.0);
        assert_eq!(select_confident(&p, 1.0).len(), 10);
        let sel = select_confident(&p, 0.6);
        assert_eq!(sel.len(), 6);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let p = PredictionBatch::from_scores(DMatrix::from_element(4, 2, 0.0), 1.0);
        assert_eq!(select_confident(&p, 0.5), alloc::vec![0, 1]);
    }

    #[test]
    fn rep_loss_names_round_trip() {
        for l in RepLoss::ALL {
            assert_eq!(l.name().parse::<RepLoss>().unwrap(), l);
        }
        assert!("nope".parse::<RepLoss>().is_err());
    }

    #[test]
    fn batches_cover_each_sample_once() {
        let gen = GenConfig {
            k_total: 4,
            k_old: 2,
            per_class_sizes: alloc::vec![20; 4],
            ..GenConfig::default()
        };
        let (split, _) = generate(&gen).unwrap();
        let mut rng = stream_rng(0, Stream::Batching);
        let first = compose_batch(&split, 8, &mut rng);
        assert_eq!(first.iter().filter(|&&i| split.is_labeled[i]).count(), 4);
        let batches = epoch_batches(&split, 8, &mut rng);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..80).collect::<Vec<_>>());
    }

    #[test]
    fn warmup_only_run_completes() {
        let gen = GenConfig {
            k_total: 4,
            k_old: 2,
            per_class_sizes: alloc::vec![20; 4],
            ..GenConfig::default()
        };
        let (split, lex) = generate(&gen).unwrap();
        let cfg = TrainConfig {
            epochs_total: 2,
            epochs_warmup: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = run(&split, &lex, &cfg).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.records.iter().all(|r| r.loss_coteach == 0.0));
    }
}
