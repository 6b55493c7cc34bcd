//! Trainable encoders, classifier heads and the SGD optimizer.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::EmbeddingBatch;
use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::all_finite;
use crate::losses::PredictionBatch;

/// Optimizer parameter group; each group has its own base learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Classifier,
}

/// Anything exposing its trainable tensors in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<(ParamGroup, &DMatrix<f64>)>;
    fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut DMatrix<f64>)>;
}

/// One-hidden-layer perceptron `x ↦ normalize(tanh(x W₁ + b₁) W₂ + b₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub w1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    input: DMatrix<f64>,
    hidden: DMatrix<f64>,
    norms: Vec<f64>,
    /// Unit-norm output rows.
    pub output: DMatrix<f64>,
}

fn add_row_bias(m: &mut DMatrix<f64>, bias: &DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        row += bias;
    }
}

impl Encoder {
    /// Gaussian weights scaled by fan-in and small random hidden biases.
    pub fn new<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut gauss = |rows: usize, cols: usize, scale: f64| {
            DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
        };
        Self {
            w1: gauss(input, hidden, 1.0 / (input as f64).sqrt()),
            b1: gauss(1, hidden, 0.5),
            w2: gauss(hidden, output, 1.0 / (hidden as f64).sqrt()),
            b2: DMatrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn forward_pass(&self, x: &DMatrix<f64>) -> Result<EncoderPass> {
        check_dim("encoder input width", self.input_dim(), x.ncols())?;
        let mut pre = x * &self.w1;
        add_row_bias(&mut pre, &self.b1);
        let hidden = pre.map(|v| v.tanh());
        let mut out = &hidden * &self.w2;
        add_row_bias(&mut out, &self.b2);
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.row_iter_mut() {
            let norm = row.norm().max(f64::MIN_POSITIVE);
            row /= norm;
            norms.push(norm);
        }
        Ok(EncoderPass {
            input: x.clone(),
            hidden,
            norms,
            output: out,
        })
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<EmbeddingBatch> {
        let pass = self.forward_pass(x)?;
        let n = pass.output.nrows();
        EmbeddingBatch::new(pass.output, (0..n).collect())
    }

    /// Parameter gradients given `∂L/∂z` for the unit-norm outputs.
    ///
    /// The normalization Jacobian `(I − z zᵀ)/‖u‖` is applied exactly.
    pub fn backward(&self, pass: &EncoderPass, grad_out: &DMatrix<f64>) -> Encoder {
        let z = &pass.output;
        let mut du = grad_out.clone();
        for (i, mut row) in du.row_iter_mut().enumerate() {
            let zi = z.row(i);
            let radial = row.dot(&zi);
            row -= zi * radial;
            row /= pass.norms[i];
        }
        let dw2 = pass.hidden.transpose() * &du;
        let db2 = DMatrix::from_fn(1, du.ncols(), |_, j| du.column(j).sum());
        let mut dpre = du * self.w2.transpose();
        dpre.component_mul_assign(&pass.hidden.map(|h| 1.0 - h * h));
        let dw1 = pass.input.transpose() * &dpre;
        let db1 = DMatrix::from_fn(1, dpre.ncols(), |_, j| dpre.column(j).sum());
        Encoder {
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DMatrix::zeros(1, self.b1.ncols()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DMatrix::zeros(1, self.b2.ncols()),
        }
    }
}

/// Bias-free linear classifier over embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `embed_dim × d_cls`.
    pub weights: DMatrix<f64>,
}

impl ClassifierHead {
    pub fn new<R: Rng>(embed_dim: usize, d_cls: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (embed_dim as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(embed_dim, d_cls, |_, _| rng.sample::<f64, _>(StandardNormal) * scale),
        }
    }

    pub fn zeros(embed_dim: usize, d_cls: usize) -> Self {
        Self {
            weights: DMatrix::zeros(embed_dim, d_cls),
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn scores(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("classifier input width", self.weights.nrows(), z.ncols())?;
        Ok(z * &self.weights)
    }

    pub fn predict(&self, z: &EmbeddingBatch, temperature: f64) -> Result<PredictionBatch> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(invalid!("temperature must be positive, got {temperature}"));
        }
        Ok(PredictionBatch::from_scores(self.scores(z.vectors())?, temperature))
    }

    /// `(∂L/∂W, ∂L/∂z)` from `∂L/∂scores`.
    pub fn backward(&self, z: &DMatrix<f64>, grad_scores: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (z.transpose() * grad_scores, grad_scores * self.weights.transpose())
    }
}

/// Both encoders and both classifier heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBranchModel {
    pub encoder_img: Encoder,
    pub encoder_txt: Encoder,
    pub head_img: ClassifierHead,
    pub head_txt: ClassifierHead,
}

impl DualBranchModel {
    pub fn new<R: Rng>(
        img_dim: usize,
        txt_dim: usize,
        hidden: usize,
        embed_dim: usize,
        d_cls: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            encoder_img: Encoder::new(img_dim, hidden, embed_dim, rng),
            encoder_txt: Encoder::new(txt_dim, hidden, embed_dim, rng),
            head_img: ClassifierHead::new(embed_dim, d_cls, rng),
            head_txt: ClassifierHead::new(embed_dim, d_cls, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder_img: self.encoder_img.zeros_like(),
            encoder_txt: self.encoder_txt.zeros_like(),
            head_img: ClassifierHead::zeros(self.head_img.weights.nrows(), self.head_img.num_outputs()),
            head_txt: ClassifierHead::zeros(self.head_txt.weights.nrows(), self.head_txt.num_outputs()),
        }
    }
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<(ParamGroup, &DMatrix<f64>)> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .map(|t| (ParamGroup::Encoder, t))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut DMatrix<f64>)> {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
            .into_iter()
            .map(|t| (ParamGroup::Encoder, t))
            .collect()
    }
}

impl Parameters for DualBranchModel {
    fn tensors(&self) -> Vec<(ParamGroup, &DMatrix<f64>)> {
        let mut out = self.encoder_img.tensors();
        out.extend(self.encoder_txt.tensors());
        out.push((ParamGroup::Classifier, &self.head_img.weights));
        out.push((ParamGroup::Classifier, &self.head_txt.weights));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut DMatrix<f64>)> {
        let mut out = self.encoder_img.tensors_mut();
        out.extend(self.encoder_txt.tensors_mut());
        out.push((ParamGroup::Classifier, &mut self.head_img.weights));
        out.push((ParamGroup::Classifier, &mut self.head_txt.weights));
        out
    }
}

/// Cosine-annealed multiplier `½(1 + cos(π·epoch/total))`.
pub fn cosine_multiplier(epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return 1.0;
    }
    let t = epoch.min(total_epochs) as f64 / total_epochs as f64;
    0.5 * (1.0 + (core::f64::consts::PI * t).cos())
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_encoder: f64,
    pub lr_classifier: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_encoder: 0.001,
            lr_classifier: 0.1,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lr_encoder", self.lr_encoder),
            ("lr_classifier", self.lr_classifier),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid!("{name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn base_lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.lr_encoder,
            ParamGroup::Classifier => self.lr_classifier,
        }
    }
}

/// Momentum buffers plus schedule state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    pub total_epochs: usize,
    buffers: Vec<DMatrix<f64>>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, total_epochs: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            total_epochs,
            buffers: Vec::new(),
        })
    }

    pub fn learning_rate(&self, group: ParamGroup, epoch: usize) -> f64 {
        self.config.base_lr(group) * cosine_multiplier(epoch, self.total_epochs)
    }

    /// `v ← m·v + g + wd·p`, `p ← p − lr(epoch)·v`, tensor by tensor.
    ///
    /// Skips tensors whose group is in `frozen`. Rejects non-finite gradients
    /// before touching any parameter.
    pub fn step<P: Parameters>(
        &mut self,
        params: &mut P,
        grads: &P,
        epoch: usize,
        frozen: &[ParamGroup],
    ) -> Result<()> {
        let grads = grads.tensors();
        for (i, (_, g)) in grads.iter().enumerate() {
            if !all_finite(g) {
                return Err(Error::Numeric(alloc::format!("non-finite gradient in tensor {i}")));
            }
        }
        let mut tensors = params.tensors_mut();
        check_dim("gradient tensor count", tensors.len(), grads.len())?;
        if self.buffers.is_empty() {
            self.buffers = tensors.iter().map(|(_, t)| DMatrix::zeros(t.nrows(), t.ncols())).collect();
        }
        let SgdConfig {
            momentum,
            weight_decay,
            ..
        } = self.config;
        for (((group, p), (_, g)), v) in tensors.iter_mut().zip(grads.iter()).zip(self.buffers.iter_mut()) {
            if frozen.contains(group) {
                continue;
            }
            let lr = self.config.base_lr(*group) * cosine_multiplier(epoch, self.total_epochs);
            *v *= momentum;
            *v += *g;
            *v += &**p * weight_decay;
            **p -= &*v * lr;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    struct Single(DMatrix<f64>);

    impl Parameters for Single {
        fn tensors(&self) -> Vec<(ParamGroup, &DMatrix<f64>)> {
            alloc::vec![(ParamGroup::Classifier, &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut DMatrix<f64>)> {
            alloc::vec![(ParamGroup::Classifier, &mut self.0)]
        }
    }

    fn plain(lr: f64, momentum: f64) -> OptimizerState {
        OptimizerState::new(
            SgdConfig {
                momentum,
                weight_decay: 0.0,
                lr_encoder: lr,
                lr_classifier: lr,
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn unit_step_on_own_value_reaches_zero() {
        let p0 = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let mut p = Single(p0.clone());
        let mut opt = plain(1.0, 0.0);
        opt.step(&mut p, &Single(p0), 0, &[]).unwrap();
        assert_eq!(p.0, DMatrix::zeros(1, 3));
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_multiplier(0, 50), 1.0);
        assert!(cosine_multiplier(50, 50).abs() < 1e-15);
        assert!((cosine_multiplier(25, 50) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = Single(DMatrix::zeros(1, 1));
        let mut opt = plain(1.0, 0.0);
        let g = Single(DMatrix::from_element(1, 1, f64::INFINITY));
        assert!(opt.step(&mut p, &g, 0, &[]).is_err());
        assert_eq!(p.0[(0, 0)], 0.0);
    }

    #[test]
    fn zero_head_predicts_uniform() {
        let head = ClassifierHead::zeros(2, 4);
        let z = EmbeddingBatch::new(DMatrix::identity(2, 2), alloc::vec![0, 1]).unwrap();
        let p = head.predict(&z, 0.1).unwrap();
        assert!(p.probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn encoder_outputs_unit_rows() {
        let mut rng = stream_rng(3, Stream::Init);
        let enc = Encoder::new(5, 7, 3, &mut rng);
        let x = DMatrix::from_fn(6, 5, |i, j| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let z = enc.forward_pass(&x).unwrap().output;
        for row in z.row_iter() {
            assert!((row.norm() - 1.0).abs() < 1e-12);
        }
    }
}
