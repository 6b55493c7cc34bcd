//! Training losses over embeddings and classifier scores.
//!
//! Every loss returns its value together with gradients with respect to its
//! differentiable inputs. Teacher targets (sharpened predictions, co-teaching
//! pseudo-labels, prototypes) are constants of the step and receive no gradient.
//!
//! Sums over index sets are normalized to means over the same sets, so loss
//! magnitudes do not grow with the batch size.
//!
//! The inter-modal contrastive loss and both contrastive terms use a
//! denominator that skips the positive pair (`j ≠ i`). This differs from the
//! usual InfoNCE denominator and is deliberate.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{check_dim, invalid, Result};
use crate::rate::{ssr2_value_grad, IndexedPartition, RateConfig, Ssr2Terms};

/// Temperatures and weights of the training losses.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossConfig {
    /// Inter-modal contrastive temperature.
    pub tau_c: f64,
    /// Supervised contrastive temperature.
    pub tau_a: f64,
    /// Unsupervised contrastive temperature.
    pub tau_b: f64,
    /// Weight of the supervised contrastive term.
    pub lambda_con: f64,
    /// Self-distillation weight.
    pub gamma: f64,
    /// Mean-entropy regularizer weight.
    pub mu: f64,
    pub student_temp: f64,
    pub teacher_temp: f64,
    /// Weight of an inter-modal term added to an intra-modal one.
    pub nu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_c: 0.07,
            tau_a: 0.07,
            tau_b: 0.07,
            lambda_con: 0.35,
            gamma: 2.0,
            mu: 1.0,
            student_temp: 0.1,
            teacher_temp: 0.07,
            nu: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("tau_c", self.tau_c),
            ("tau_a", self.tau_a),
            ("tau_b", self.tau_b),
            ("student_temp", self.student_temp),
            ("teacher_temp", self.teacher_temp),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid!("{name} must be positive, got {t}"));
            }
        }
        if self.teacher_temp >= self.student_temp {
            return Err(invalid!(
                "teacher_temp {} must be below student_temp {}",
                self.teacher_temp,
                self.student_temp
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_con) {
            return Err(invalid!("lambda_con must lie in [0, 1], got {}", self.lambda_con));
        }
        for (name, w) in [("gamma", self.gamma), ("mu", self.mu), ("nu", self.nu)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid!("{name} must be nonnegative, got {w}"));
            }
        }
        Ok(())
    }
}

/// Loss value with gradients with respect to two inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub value: f64,
    pub grad_a: DMatrix<f64>,
    pub grad_b: DMatrix<f64>,
}

/// Row-softmax of `scores / temperature`, keeping the raw scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub scores: DMatrix<f64>,
    pub temperature: f64,
    pub probs: DMatrix<f64>,
}

impl PredictionBatch {
    pub fn from_scores(scores: DMatrix<f64>, temperature: f64) -> Self {
        let probs = softmax_rows(&scores, temperature);
        Self {
            scores,
            temperature,
            probs,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Per-row argmax, ties to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs.row_iter().map(|r| argmax(r.iter().copied())).collect()
    }

    /// Per-row maximum probability.
    pub fn confidence(&self) -> Vec<f64> {
        self.probs.row_iter().map(|r| r.max()).collect()
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax_rows(scores: &DMatrix<f64>, temperature: f64) -> DMatrix<f64> {
    let mut out = scores / temperature;
    for mut row in out.row_iter_mut() {
        let vals: alloc::vec::Vec<f64> = row.iter().copied().collect();
        let lse = logsumexp(vals.iter().copied());
        row.add_scalar_mut(-lse);
    }
    out
}

pub fn softmax_rows(scores: &DMatrix<f64>, temperature: f64) -> DMatrix<f64> {
    log_softmax_rows(scores, temperature).map(|v| v.exp())
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn check_pair(context: &'static str, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    check_dim(context, a.nrows(), b.nrows())?;
    check_dim(context, a.ncols(), b.ncols())
}

/// Softmax over `row[m] / tau` for `m ≠ i`, with the log-normalizer.
fn off_diagonal_softmax(row: impl Iterator<Item = f64> + Clone, i: usize, tau: f64) -> (f64, Vec<f64>) {
    let scaled = row.enumerate().filter(move |&(m, _)| m != i).map(move |(_, v)| v / tau);
    let lse = logsumexp(scaled.clone());
    (lse, scaled.map(|v| (v - lse).exp()).collect())
}

/// Inter-modal contrastive loss, image to text direction only:
///
/// `−1/N Σ_i log( exp(z_iᴵ·z_iᵀ/τ) / Σ_{j≠i} exp(z_iᴵ·z_jᵀ/τ) )`.
pub fn clip_inter_loss(zi: &DMatrix<f64>, zt: &DMatrix<f64>, tau: f64) -> Result<PairGrad> {
    check_pair("clip_inter_loss", zi, zt)?;
    let n = zi.nrows();
    if n < 2 {
        return Err(invalid!("inter-modal loss needs at least two pairs, got {n}"));
    }
    let sim = zi * zt.transpose();
    let mut g = DMatrix::zeros(n, n);
    let mut value = 0.0;
    let scale = 1.0 / (n as f64 * tau);
    for i in 0..n {
        let (lse, p) = off_diagonal_softmax(sim.row(i).iter().copied(), i, tau);
        value -= sim[(i, i)] / tau - lse;
        g[(i, i)] -= scale;
        let others = (0..n).filter(|&m| m != i);
        for (m, pm) in others.zip(p) {
            g[(i, m)] += scale * pm;
        }
    }
    Ok(PairGrad {
        value: value / n as f64,
        grad_a: &g * zt,
        grad_b: g.transpose() * zi,
    })
}

/// Supervised plus unsupervised contrastive loss between two augmented views.
///
/// `labels[i]` is `Some(class)` for labeled rows. The positives of a labeled
/// row are the *other* labeled rows with the same class; a labeled row with no
/// such partner is left out of the supervised average.
pub fn contrastive_loss(
    z: &DMatrix<f64>,
    zp: &DMatrix<f64>,
    labels: &[Option<usize>],
    cfg: &LossConfig,
) -> Result<PairGrad> {
    check_pair("contrastive_loss", z, zp)?;
    check_dim("contrastive_loss labels", z.nrows(), labels.len())?;
    let n = z.nrows();
    if n < 2 {
        return Err(invalid!("contrastive loss needs at least two samples, got {n}"));
    }
    let sim = z * zp.transpose();
    let mut g = DMatrix::zeros(n, n);

    let mut unsup = 0.0;
    let wu = (1.0 - cfg.lambda_con) / (n as f64 * cfg.tau_b);
    for i in 0..n {
        let (lse, p) = off_diagonal_softmax(sim.row(i).iter().copied(), i, cfg.tau_b);
        unsup -= sim[(i, i)] / cfg.tau_b - lse;
        g[(i, i)] -= wu;
        for (m, pm) in (0..n).filter(|&m| m != i).zip(p) {
            g[(i, m)] += wu * pm;
        }
    }
    unsup /= n as f64;

    let anchors: Vec<(usize, Vec<usize>)> = (0..n)
        .filter_map(|i| {
            let li = labels[i]?;
            let pos: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == Some(li)).collect();
            (!pos.is_empty()).then_some((i, pos))
        })
        .collect();
    let mut sup = 0.0;
    if !anchors.is_empty() {
        let ws = cfg.lambda_con / (anchors.len() as f64 * cfg.tau_a);
        for (i, pos) in &anchors {
            let i = *i;
            let (lse, p) = off_diagonal_softmax(sim.row(i).iter().copied(), i, cfg.tau_a);
            let inv = 1.0 / pos.len() as f64;
            for &j in pos {
                sup -= inv * (sim[(i, j)] / cfg.tau_a - lse);
                g[(i, j)] -= ws * inv;
            }
            for (m, pm) in (0..n).filter(|&m| m != i).zip(p) {
                g[(i, m)] += ws * pm;
            }
        }
        sup /= anchors.len() as f64;
    }

    Ok(PairGrad {
        value: cfg.lambda_con * sup + (1.0 - cfg.lambda_con) * unsup,
        grad_a: &g * zp,
        grad_b: g.transpose() * z,
    })
}

/// Components of the classifier loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassifierTerms {
    pub supervised_ce: f64,
    pub distillation_ce: f64,
    pub mean_entropy: f64,
}

/// Classifier loss for one branch.
///
/// `scores` and `scores_aug` are the raw head outputs of two views. The student
/// distribution is `softmax(scores / student_temp)`; the teacher target is
/// `softmax(scores_aug / teacher_temp)`, held fixed. The entropy term uses the
/// batch mean of both views at the student temperature.
///
/// Returns the value, its terms and gradients with respect to both score matrices.
pub fn classifier_loss(
    scores: &DMatrix<f64>,
    scores_aug: &DMatrix<f64>,
    labels: &[Option<usize>],
    cfg: &LossConfig,
) -> Result<(ClassifierTerms, PairGrad)> {
    check_pair("classifier_loss", scores, scores_aug)?;
    check_dim("classifier_loss labels", scores.nrows(), labels.len())?;
    let (n, k) = scores.shape();
    if n == 0 {
        return Err(invalid!("classifier loss on an empty batch"));
    }
    let ts = cfg.student_temp;
    let log_student = log_softmax_rows(scores, ts);
    let student = log_student.map(|v| v.exp());
    let student_aug = softmax_rows(scores_aug, ts);
    let teacher = softmax_rows(scores_aug, cfg.teacher_temp);

    let mut g1 = DMatrix::zeros(n, k);
    let mut g2 = DMatrix::zeros(n, k);

    let labeled: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|c| (i, c)))
        .collect();
    let mut supervised_ce = 0.0;
    for &(i, c) in &labeled {
        if c >= k {
            return Err(invalid!("label {c} out of range for {k} outputs"));
        }
        supervised_ce -= log_student[(i, c)];
        let w = 1.0 / (labeled.len() as f64 * ts);
        for m in 0..k {
            g1[(i, m)] += w * (student[(i, m)] - if m == c { 1.0 } else { 0.0 });
        }
    }
    if !labeled.is_empty() {
        supervised_ce /= labeled.len() as f64;
    }

    let mut distillation_ce = 0.0;
    let wd = cfg.gamma / (n as f64 * ts);
    for i in 0..n {
        for m in 0..k {
            distillation_ce -= teacher[(i, m)] * log_student[(i, m)];
            g1[(i, m)] += wd * (student[(i, m)] - teacher[(i, m)]);
        }
    }
    distillation_ce /= n as f64;

    let mean: Vec<f64> = (0..k)
        .map(|m| (student.column(m).sum() + student_aug.column(m).sum()) / (2 * n) as f64)
        .collect();
    let mean_entropy = entropy(&mean);
    if cfg.mu > 0.0 {
        // d(−μH)/dȳ_k = μ(ln ȳ_k + 1), and dȳ/dy_i = 1/(2N)
        let dmean: Vec<f64> = mean
            .iter()
            .map(|&p| cfg.mu * (p.max(f64::MIN_POSITIVE).ln() + 1.0) / (2 * n) as f64)
            .collect();
        for (probs, grad) in [(&student, &mut g1), (&student_aug, &mut g2)] {
            for i in 0..n {
                let dot: f64 = (0..k).map(|m| probs[(i, m)] * dmean[m]).sum();
                for m in 0..k {
                    grad[(i, m)] += probs[(i, m)] * (dmean[m] - dot) / ts;
                }
            }
        }
    }

    let terms = ClassifierTerms {
        supervised_ce,
        distillation_ce,
        mean_entropy,
    };
    let value = supervised_ce + cfg.gamma * distillation_ce - cfg.mu * mean_entropy;
    Ok((
        terms,
        PairGrad {
            value,
            grad_a: g1,
            grad_b: g2,
        },
    ))
}

/// Cross-entropy of each branch against the other's confident hard labels.
///
/// Rows in `sel_img` use the image branch's argmax as target for the text
/// branch and vice versa for `sel_txt`. Each direction is averaged over its
/// selection; an empty selection contributes zero. Gradients are with respect
/// to the raw scores of the supervised (student) side.
pub fn coteach_loss(
    img: &PredictionBatch,
    txt: &PredictionBatch,
    sel_img: &[usize],
    sel_txt: &[usize],
) -> Result<PairGrad> {
    check_pair("coteach_loss", &img.probs, &txt.probs)?;
    let (n, k) = img.probs.shape();
    for &i in sel_img.iter().chain(sel_txt) {
        if i >= n {
            return Err(invalid!("selected row {i} out of range for {n} predictions"));
        }
    }
    let mut grad_img = DMatrix::zeros(n, k);
    let mut grad_txt = DMatrix::zeros(n, k);
    let mut value = 0.0;
    let targets_img = img.argmax();
    let targets_txt = txt.argmax();
    let log_txt = log_softmax_rows(&txt.scores, txt.temperature);
    let log_img = log_softmax_rows(&img.scores, img.temperature);
    for (sel, targets, student, log_student, grad) in [
        (sel_img, &targets_img, txt, &log_txt, &mut grad_txt),
        (sel_txt, &targets_txt, img, &log_img, &mut grad_img),
    ] {
        if sel.is_empty() {
            continue;
        }
        let w = 1.0 / sel.len() as f64;
        let mut part = 0.0;
        for &i in sel {
            let c = targets[i];
            part -= log_student[(i, c)];
            for m in 0..k {
                let target = if m == c { 1.0 } else { 0.0 };
                grad[(i, m)] += w * (student.probs[(i, m)] - target) / student.temperature;
            }
        }
        value += w * part;
    }
    Ok(PairGrad {
        value,
        grad_a: grad_img,
        grad_b: grad_txt,
    })
}

/// Unit-norm class anchors of one modality, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    anchors: DMatrix<f64>,
}

impl PrototypeSet {
    pub fn new(anchors: DMatrix<f64>) -> Result<Self> {
        if anchors.nrows() == 0 {
            return Err(invalid!("prototype set needs at least one anchor"));
        }
        for (i, row) in anchors.row_iter().enumerate() {
            if (row.norm() - 1.0).abs() > 1e-9 {
                return Err(invalid!("prototype {i} is not unit-norm"));
            }
        }
        Ok(Self { anchors })
    }

    /// Normalized mean of the rows of `z` carrying each label in `0..k`.
    /// Classes without labeled rows are skipped.
    pub fn from_labeled_means(z: &DMatrix<f64>, labels: &[Option<usize>], k: usize) -> Result<Self> {
        check_dim("prototype labels", z.nrows(), labels.len())?;
        let mut sums = DMatrix::zeros(k, z.ncols());
        let mut seen = vec![false; k];
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = *l {
                if c >= k {
                    return Err(invalid!("label {c} out of range for {k} classes"));
                }
                let mut row = sums.row_mut(c);
                row += z.row(i);
                seen[c] = true;
            }
        }
        let rows: Vec<_> = (0..k)
            .filter(|&c| seen[c] && sums.row(c).norm() > 0.0)
            .map(|c| sums.row(c).normalize())
            .collect();
        if rows.is_empty() {
            return Err(invalid!("no labeled rows to build prototypes from"));
        }
        Self::new(DMatrix::from_rows(&rows))
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }
}

/// Symmetric KL between prototype-similarity distributions of the two modalities,
/// `1/(2N) Σ_i [KL(sᵀ_i ‖ sᴵ_i) + KL(sᴵ_i ‖ sᵀ_i)]` with `s_i = softmax(z_i · Aᵀ)`.
pub fn cico_loss(
    zi: &DMatrix<f64>,
    zt: &DMatrix<f64>,
    protos_img: &PrototypeSet,
    protos_txt: &PrototypeSet,
) -> Result<PairGrad> {
    check_dim("cico_loss batch", zi.nrows(), zt.nrows())?;
    check_dim("cico_loss image width", protos_img.anchors.ncols(), zi.ncols())?;
    check_dim("cico_loss text width", protos_txt.anchors.ncols(), zt.ncols())?;
    check_dim("cico_loss classes", protos_img.anchors.nrows(), protos_txt.anchors.nrows())?;
    let n = zi.nrows();
    if n == 0 {
        return Ok(PairGrad {
            value: 0.0,
            grad_a: DMatrix::zeros(0, zi.ncols()),
            grad_b: DMatrix::zeros(0, zt.ncols()),
        });
    }
    let log_p = log_softmax_rows(&(zi * protos_img.anchors.transpose()), 1.0);
    let log_q = log_softmax_rows(&(zt * protos_txt.anchors.transpose()), 1.0);
    let p = log_p.map(|v| v.exp());
    let q = log_q.map(|v| v.exp());
    let k = p.ncols();
    let w = 1.0 / (2 * n) as f64;
    let mut value = 0.0;
    let mut ga = DMatrix::zeros(n, k);
    let mut gb = DMatrix::zeros(n, k);
    for i in 0..n {
        let mut dp = vec![0.0; k];
        let mut dq = vec![0.0; k];
        for m in 0..k {
            let lr = log_p[(i, m)] - log_q[(i, m)];
            value += (p[(i, m)] - q[(i, m)]) * lr;
            dp[m] = lr + 1.0 - q[(i, m)] / p[(i, m)];
            dq[m] = -lr + 1.0 - p[(i, m)] / q[(i, m)];
        }
        let dot_p: f64 = (0..k).map(|m| p[(i, m)] * dp[m]).sum();
        let dot_q: f64 = (0..k).map(|m| q[(i, m)] * dq[m]).sum();
        for m in 0..k {
            ga[(i, m)] = w * p[(i, m)] * (dp[m] - dot_p);
            gb[(i, m)] = w * q[(i, m)] * (dq[m] - dot_q);
        }
    }
    Ok(PairGrad {
        value: w * value,
        grad_a: ga * &protos_img.anchors,
        grad_b: gb * &protos_txt.anchors,
    })
}

/// Training stage: pseudo-label terms are excluded during warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Warmup,
    Alignment,
}

/// One modality branch of a batch, as seen by the staged objectives.
#[derive(Debug, Clone, Copy)]
pub struct BranchBatch<'a> {
    /// Embeddings of the first view.
    pub z: &'a DMatrix<f64>,
    /// Raw head scores of the first view.
    pub scores: &'a DMatrix<f64>,
    /// Raw head scores of the second view.
    pub scores_aug: &'a DMatrix<f64>,
    /// Ground truth for labeled rows.
    pub labels: &'a [Option<usize>],
}

/// Gradients of a staged objective for one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrad {
    pub z: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    pub scores_aug: DMatrix<f64>,
}

/// Value breakdown of a staged objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveValue {
    pub rate_img: Ssr2Terms,
    pub rate_txt: Ssr2Terms,
    pub cls_img: f64,
    pub cls_txt: f64,
    pub coteach: f64,
}

impl ObjectiveValue {
    pub fn rate(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Warmup => self.rate_img.supervised_loss() + self.rate_txt.supervised_loss(),
            Stage::Alignment => self.rate_img.loss() + self.rate_txt.loss(),
        }
    }

    pub fn total(&self, stage: Stage) -> f64 {
        self.rate(stage) + self.cls_img + self.cls_txt + self.coteach
    }
}

/// Labeled rows with their classes, and unlabeled rows with the branch's own
/// hard pseudo-labels (argmax of its student prediction).
pub fn rate_partitions(
    labels: &[Option<usize>],
    scores: &DMatrix<f64>,
    student_temp: f64,
) -> Result<(IndexedPartition, IndexedPartition)> {
    let k = scores.ncols();
    let pseudo = PredictionBatch::from_scores(scores.clone(), student_temp).argmax();
    let (mut lrows, mut llab, mut urows, mut ulab) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => {
                lrows.push(i);
                llab.push(*c);
            }
            None => {
                urows.push(i);
                ulab.push(pseudo[i]);
            }
        }
    }
    let k_lab = llab.iter().map(|&c| c + 1).max().unwrap_or(0).max(k);
    Ok((
        IndexedPartition::from_labels(lrows, &llab, k_lab)?,
        IndexedPartition::from_labels(urows, &ulab, k)?,
    ))
}

/// Warm-up objective (`stage == Warmup`) or alignment objective (`Alignment`)
/// summed over both branches, with gradients.
///
/// The rate part of each branch is `−R + R_c^s`, plus `R_c^u` on the branch's
/// pseudo-labels during alignment. Co-teaching on the given selections is added
/// only during alignment.
pub fn staged_objective(
    stage: Stage,
    img: &BranchBatch<'_>,
    txt: &BranchBatch<'_>,
    sel_img: &[usize],
    sel_txt: &[usize],
    rate_cfg: &RateConfig,
    loss_cfg: &LossConfig,
) -> Result<(ObjectiveValue, BranchGrad, BranchGrad)> {
    let include_unsup = stage == Stage::Alignment;
    let mut out = ObjectiveValue::default();
    let mut grads = Vec::with_capacity(2);
    for (branch, rate_slot, cls_slot) in [
        (img, &mut out.rate_img, &mut out.cls_img),
        (txt, &mut out.rate_txt, &mut out.cls_txt),
    ] {
        let (lab, unlab) = rate_partitions(branch.labels, branch.scores, loss_cfg.student_temp)?;
        let (terms, gz) = ssr2_value_grad(branch.z, &lab, &unlab, include_unsup, rate_cfg)?;
        *rate_slot = terms;
        let (_, cls) = classifier_loss(branch.scores, branch.scores_aug, branch.labels, loss_cfg)?;
        *cls_slot = cls.value;
        grads.push(BranchGrad {
            z: gz,
            scores: cls.grad_a,
            scores_aug: cls.grad_b,
        });
    }
    let mut g_txt = grads.pop().expect("two branches");
    let mut g_img = grads.pop().expect("two branches");
    if stage == Stage::Alignment {
        let pi = PredictionBatch::from_scores(img.scores.clone(), loss_cfg.student_temp);
        let pt = PredictionBatch::from_scores(txt.scores.clone(), loss_cfg.student_temp);
        let co = coteach_loss(&pi, &pt, sel_img, sel_txt)?;
        out.coteach = co.value;
        g_img.scores += co.grad_a;
        g_txt.scores += co.grad_b;
    }
    Ok((out, g_img, g_txt))
}

/// Value of the warm-up objective.
pub fn warmup_objective(
    img: &BranchBatch<'_>,
    txt: &BranchBatch<'_>,
    rate_cfg: &RateConfig,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    staged_objective(Stage::Warmup, img, txt, &[], &[], rate_cfg, loss_cfg).map(|r| r.0.total(Stage::Warmup))
}

/// Value of the alignment objective.
pub fn alignment_objective(
    img: &BranchBatch<'_>,
    txt: &BranchBatch<'_>,
    sel_img: &[usize],
    sel_txt: &[usize],
    rate_cfg: &RateConfig,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    staged_objective(Stage::Alignment, img, txt, sel_img, sel_txt, rate_cfg, loss_cfg)
        .map(|r| r.0.total(Stage::Alignment))
}
