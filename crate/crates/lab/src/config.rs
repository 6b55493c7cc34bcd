//! Experiment configuration: a TOML file with one table per component, plus
//! command-line overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssr2gcd_core::datagen::GenConfig;
use ssr2gcd_core::trainer::{RepLoss, TrainConfig};

use crate::LabError;

/// Everything one run needs.
///
/// ```toml
/// seed = 0
/// out = "runs/demo"
///
/// [data]
/// k_total = 10
/// k_old = 5
///
/// [train]
/// rep_loss = "ssr2"
/// epochs_total = 50
///
/// [train.rate_cfg]
/// epsilon = 0.5
/// ```
///
/// `seed` drives every random stream. It overrides `data.seed` and `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: GenConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: GenConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub loss: Option<RepLoss>,
    pub nu: Option<f64>,
    pub epochs: Option<usize>,
    pub d_cls: Option<usize>,
}

impl RunConfig {
    /// Parses TOML text. `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| {
            let (line, col) = match e.span() {
                Some(span) => line_col(text, span.start),
                None => (1, 1),
            };
            LabError::Config {
                origin: origin.to_string(),
                line,
                col,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies overrides, propagates the seed and shared augmentation
    /// settings, then validates.
    pub fn finish(mut self, o: &Overrides) -> Result<Self, LabError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(l) = o.loss {
            self.train.rep_loss = l;
        }
        if let Some(nu) = o.nu {
            self.train.loss_cfg.nu = nu;
        }
        if let Some(e) = o.epochs {
            self.train.epochs_total = e;
            self.train.epochs_warmup = self.train.epochs_warmup.min(e);
        }
        if let Some(d) = o.d_cls {
            self.train.d_cls = Some(d);
        }
        self.data.seed = self.seed;
        self.train.seed = self.seed;
        self.train.aug_noise = self.data.aug_noise;
        self.train.aug_dropout = self.data.aug_dropout;
        self.data.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}
