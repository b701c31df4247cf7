//! LSTM forecasters trained from scratch.
//!
//! * [`lstm`]: the batched cell with exact backpropagation through time.
//! * [`Model`]: the single-shot (`ss`), feedback (`fd`) and two-layer
//!   (`ss2`) LSTM variants plus the persistence `baseline` and a single
//!   `dense` layer, all sharing one flat parameter vector.
//! * [`Optimizer`]: Adam, SGD with momentum and RMSprop.
//! * [`train`]: mini-batch training with early stopping.
//! * [`snapshot`]: the binary model file format.

pub mod lstm;
mod model;
mod optim;
pub mod snapshot;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView3, Zip};

pub use model::{Architecture, DropoutMasks, Model, ParamLayout, Tape, TensorSpec};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    batch_gradient, evaluate, fit_loop, train, EarlyStopping, EpochOutcome, EpochRecord, Evaluation, FitSummary,
    TrainedModel, GRADIENT_CHUNK,
};

use crate::dataset::{FeatureCombo, WindowSpec};
use crate::{Error, Result};

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// One LSTM layer, whole label block from the last hidden state.
    SingleShot,
    /// One LSTM layer decoding one step at a time on its own predictions.
    Feedback,
    /// Two stacked LSTM layers, otherwise like single-shot.
    TwoLayer,
    /// Repeats the last observed label values.
    Baseline,
    /// One dense layer over the flattened input window.
    Dense,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::SingleShot, Variant::Feedback, Variant::TwoLayer, Variant::Baseline, Variant::Dense];

    pub fn code(self) -> &'static str {
        match self {
            Variant::SingleShot => "ss",
            Variant::Feedback => "fd",
            Variant::TwoLayer => "ss2",
            Variant::Baseline => "baseline",
            Variant::Dense => "dense",
        }
    }

    pub fn is_lstm(self) -> bool {
        matches!(self, Variant::SingleShot | Variant::Feedback | Variant::TwoLayer)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.code() == s.trim())
            .ok_or_else(|| Error::param(format!("unknown model variant `{s}`")))
    }
}

/// Activation of the output layer. `Linear` is the default because the
/// targets are standardized and routinely negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum OutputActivation {
    #[default]
    Linear,
    Relu,
}

impl OutputActivation {
    pub fn code(self) -> &'static str {
        match self {
            OutputActivation::Linear => "linear",
            OutputActivation::Relu => "relu",
        }
    }
}

impl FromStr for OutputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(OutputActivation::Linear),
            "relu" => Ok(OutputActivation::Relu),
            other => Err(Error::param(format!("unknown output activation `{other}`"))),
        }
    }
}

/// Everything needed to build and train one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub combo: FeatureCombo,
    pub variant: Variant,
    pub window: WindowSpec,
    pub units: usize,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs before stopping; `0` disables
    /// early stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub output_activation: OutputActivation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            combo: FeatureCombo::Ss,
            variant: Variant::SingleShot,
            window: WindowSpec { input_width: 336, label_width: 168 },
            units: 32,
            dropout: 0.0,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 5,
            batch_size: 32,
            clip_norm: Some(5.0),
            output_activation: OutputActivation::Linear,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(Error::param("units must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::param("max_epochs and batch_size must be >= 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::param("clip_norm must be positive"));
            }
        }
        if self.window.input_width == 0 || self.window.label_width == 0 {
            return Err(Error::param("window widths must be >= 1"));
        }
        Ok(())
    }

    /// Dropout as an integer percentage, as used in configuration codes.
    pub fn dropout_percent(&self) -> u32 {
        (self.dropout * 100.0).round() as u32
    }

    /// Ordered `key=value` pairs; the inverse of [`ModelConfig::from_kv`].
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("combo", self.combo.code().to_string()),
            ("variant", self.variant.code().to_string()),
            ("window", self.window.to_string()),
            ("units", self.units.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("optimizer", self.optimizer.code().to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("clip_norm", self.clip_norm.map_or("none".into(), |c| format!("{c:?}"))),
            ("output_activation", self.output_activation.code().to_string()),
            ("seed", self.seed.to_string()),
        ];
        kv.drain(..).map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<ModelConfig> {
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::Snapshot(format!("missing key `{k}`")));
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Snapshot(format!("bad value `{v}` for `{key}`")))
        }
        let clip = get("clip_norm")?;
        let cfg = ModelConfig {
            combo: get("combo")?.parse()?,
            variant: get("variant")?.parse()?,
            window: get("window")?.parse()?,
            units: parse("units", get("units")?)?,
            dropout: parse("dropout", get("dropout")?)?,
            optimizer: get("optimizer")?.parse()?,
            learning_rate: parse("learning_rate", get("learning_rate")?)?,
            max_epochs: parse("max_epochs", get("max_epochs")?)?,
            patience: parse("patience", get("patience")?)?,
            batch_size: parse("batch_size", get("batch_size")?)?,
            clip_norm: if clip == "none" { None } else { Some(parse("clip_norm", clip)?) },
            output_activation: get("output_activation")?.parse()?,
            seed: parse("seed", get("seed")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mean squared error over every step and label feature, and mean absolute
/// error per feature. Shapes are `[batch, label_width, n_label]`.
pub fn loss_and_metrics(pred: ArrayView3<'_, f64>, label: ArrayView3<'_, f64>) -> Result<(f64, Vec<f64>)> {
    if pred.dim() != label.dim() {
        return Err(Error::ShapeMismatch { expected: format!("{:?}", label.dim()), actual: format!("{:?}", pred.dim()) });
    }
    let mut acc = LossSums::new(pred.dim().2);
    acc.add(pred, label);
    Ok(acc.finish())
}

/// Running sums behind [`loss_and_metrics`], mergeable across chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSums {
    pub sq: f64,
    pub abs: Vec<f64>,
    /// Number of (sequence, step) pairs.
    pub count: usize,
}

impl LossSums {
    pub fn new(n_label: usize) -> Self {
        LossSums { sq: 0.0, abs: vec![0.0; n_label], count: 0 }
    }

    pub fn add(&mut self, pred: ArrayView3<'_, f64>, label: ArrayView3<'_, f64>) {
        let nl = self.abs.len();
        Zip::indexed(pred).and(label).for_each(|(_, _, j), p, l| {
            let e = p - l;
            self.sq += e * e;
            self.abs[j] += e.abs();
        });
        self.count += pred.len() / nl.max(1);
    }

    pub fn merge(&mut self, other: &LossSums) {
        self.sq += other.sq;
        for (a, b) in self.abs.iter_mut().zip(&other.abs) {
            *a += b;
        }
        self.count += other.count;
    }

    pub fn finish(&self) -> (f64, Vec<f64>) {
        let n = self.count.max(1) as f64;
        let nl = self.abs.len().max(1) as f64;
        (self.sq / (n * nl), self.abs.iter().map(|a| a / n).collect())
    }
}
