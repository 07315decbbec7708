//! Small feed-forward regression networks mapping masked binary cubes to a
//! normalized contact angle: three fixed architectures, seeded Adam
//! training with exponential learning-rate decay, evaluation metrics and
//! weight serialization.
//!
//! All math runs in f64. Stored parameters are snapped to f32-representable
//! values before serialization so a save/load round trip reproduces forward
//! outputs bit for bit.

mod io;
mod layers;
mod train;

pub use io::{load_weights, save_weights};
pub use layers::{forward, loss_and_gradients, Mode};
pub use train::{train, EpochReport, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("unsupported architecture id {0}, expected 1..=3")]
    UnsupportedArch(u8),
    #[error("sub-sample radius {0} outside the supported range 2..=12")]
    UnsupportedRadius(usize),
    #[error("input width {actual} does not match the model's {expected}")]
    ShapeMismatch { actual: usize, expected: usize },
    #[error("parameter block holds {actual} values, model needs {expected}")]
    CountMismatch { actual: usize, expected: usize },
    #[error("weight file radius {actual} does not match required radius {expected}")]
    RadiusMismatch { actual: usize, expected: usize },
    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty dataset where samples are required")]
    EmptySet,
    #[error("invalid weight file: {0}")]
    Format(String),
    #[error("weight file checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Default dropout rate used when building architectures; training can
/// override it per run.
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layer {
    /// Fully connected affine map.
    Dense { inputs: usize, outputs: usize },
    /// 3x3x3 convolution, same padding, over a cubic grid.
    Conv3 { side: usize, in_channels: usize, out_channels: usize },
    /// 2x2x2 max pooling with floor semantics.
    MaxPool3 { side: usize, channels: usize },
    Relu,
    Sigmoid,
    /// Inverted dropout; identity outside training.
    Dropout { rate: f64 },
    /// Per-feature normalization with trainable scale and offset; batch
    /// statistics while training, running statistics at inference.
    FeatureNorm { features: usize },
}

impl Layer {
    /// Trainable parameter count.
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { inputs, outputs } => inputs * outputs + outputs,
            Layer::Conv3 { in_channels, out_channels, .. } => 27 * in_channels * out_channels + out_channels,
            Layer::FeatureNorm { features } => 2 * features,
            _ => 0,
        }
    }

    /// Non-trainable running statistics count.
    pub fn stat_count(&self) -> usize {
        match *self {
            Layer::FeatureNorm { features } => 2 * features,
            _ => 0,
        }
    }

    /// Output width given the input width this layer was built for.
    pub fn output_width(&self, input: usize) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv3 { side, out_channels, .. } => side * side * side * out_channels,
            Layer::MaxPool3 { side, channels } => {
                let half = side / 2;
                half * half * half * channels
            }
            _ => input,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv3 { .. } => "conv3",
            Layer::MaxPool3 { .. } => "maxpool3",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Dropout { .. } => "dropout",
            Layer::FeatureNorm { .. } => "featurenorm",
        }
    }
}

/// Architecture description: ordered layer stack plus the sub-sample radius
/// it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: u8,
    pub radius: usize,
    pub input_width: usize,
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    pub fn trainable_params(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn stat_params(&self) -> usize {
        self.layers.iter().map(Layer::stat_count).sum()
    }

    /// Width of every layer boundary, starting at the input.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = self.input_width;
        let mut out = vec![w];
        for layer in &self.layers {
            w = layer.output_width(w);
            out.push(w);
        }
        out
    }

    pub fn output_width(&self) -> usize {
        *self.widths().last().unwrap()
    }
}

/// Build one of the three architectures for sub-sample radius `r`.
pub fn build_arch(arch: u8, r: usize) -> Result<ModelSpec, NnError> {
    if !(2..=12).contains(&r) {
        return Err(NnError::UnsupportedRadius(r));
    }
    let side = 2 * r + 1;
    let s = side * side * side;
    let layers = match arch {
        1 => {
            // convolutional variant; the channel counts are a documented
            // approximation, its parameter totals are not contract values
            let mut v = vec![
                Layer::Conv3 { side, in_channels: 1, out_channels: 8 },
                Layer::Relu,
                Layer::MaxPool3 { side, channels: 8 },
                Layer::Dropout { rate: DEFAULT_DROPOUT },
            ];
            let side2 = side / 2;
            v.extend([
                Layer::Conv3 { side: side2, in_channels: 8, out_channels: 4 },
                Layer::Relu,
                Layer::MaxPool3 { side: side2, channels: 4 },
                Layer::Dropout { rate: DEFAULT_DROPOUT },
            ]);
            let side3 = side2 / 2;
            let flat = 4 * side3 * side3 * side3;
            v.extend([
                Layer::FeatureNorm { features: flat },
                Layer::Dense { inputs: flat, outputs: 16 },
                Layer::Relu,
                Layer::Dense { inputs: 16, outputs: 4 },
                Layer::Relu,
                Layer::Dense { inputs: 4, outputs: 1 },
                Layer::Sigmoid,
            ]);
            v
        }
        2 => vec![
            Layer::Dense { inputs: s, outputs: 128 },
            Layer::Relu,
            Layer::Dropout { rate: DEFAULT_DROPOUT },
            Layer::FeatureNorm { features: 128 },
            Layer::Dense { inputs: 128, outputs: 64 },
            Layer::Relu,
            Layer::Dropout { rate: DEFAULT_DROPOUT },
            Layer::FeatureNorm { features: 64 },
            Layer::Dense { inputs: 64, outputs: 32 },
            Layer::Relu,
            Layer::Dropout { rate: DEFAULT_DROPOUT },
            Layer::FeatureNorm { features: 32 },
            Layer::Dense { inputs: 32, outputs: 16 },
            Layer::Relu,
            Layer::Dense { inputs: 16, outputs: 4 },
            Layer::Relu,
            Layer::Dense { inputs: 4, outputs: 1 },
            Layer::Sigmoid,
        ],
        3 => vec![
            Layer::Dense { inputs: s, outputs: 64 },
            Layer::Relu,
            Layer::FeatureNorm { features: 64 },
            Layer::Dense { inputs: 64, outputs: 16 },
            Layer::Relu,
            Layer::Dense { inputs: 16, outputs: 4 },
            Layer::Relu,
            Layer::Dense { inputs: 4, outputs: 1 },
            Layer::Sigmoid,
        ],
        other => return Err(NnError::UnsupportedArch(other)),
    };
    Ok(ModelSpec { arch, radius: r, input_width: s, layers })
}

/// Trained parameters, flat in layer order, plus running statistics for
/// normalization layers. Every value is f32-representable.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub params: Vec<f64>,
    pub stats: Vec<f64>,
}

impl Weights {
    /// All-zero weights with identity normalization statistics.
    pub fn zeros(spec: &ModelSpec) -> Self {
        let mut w = Self { params: vec![0.0; spec.trainable_params()], stats: vec![0.0; spec.stat_params()] };
        // running variance entries start at 1
        let mut off = 0;
        for layer in &spec.layers {
            if let Layer::FeatureNorm { features } = layer {
                for v in &mut w.stats[off + features..off + 2 * features] {
                    *v = 1.0;
                }
                off += 2 * features;
            }
        }
        w
    }

    /// Seeded uniform fan-in-scaled initialization.
    pub fn random_init(spec: &ModelSpec, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(seed, &[0x1217]);
        let mut w = Self::zeros(spec);
        let mut off = 0;
        for layer in &spec.layers {
            match *layer {
                Layer::Dense { inputs, outputs } => {
                    let bound = 1.0 / (inputs as f64).sqrt();
                    for v in &mut w.params[off..off + inputs * outputs] {
                        *v = rng.gen_range(-bound..bound);
                    }
                    off += inputs * outputs + outputs; // biases stay 0
                }
                Layer::Conv3 { in_channels, out_channels, .. } => {
                    let fan_in = 27 * in_channels;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let nw = 27 * in_channels * out_channels;
                    for v in &mut w.params[off..off + nw] {
                        *v = rng.gen_range(-bound..bound);
                    }
                    off += nw + out_channels;
                }
                Layer::FeatureNorm { features } => {
                    for v in &mut w.params[off..off + features] {
                        *v = 1.0; // scale
                    }
                    off += 2 * features; // offsets stay 0
                }
                _ => {}
            }
        }
        w.snap_to_f32();
        w
    }

    /// Round every value to its nearest f32 so serialization is lossless.
    pub fn snap_to_f32(&mut self) {
        for v in self.params.iter_mut().chain(self.stats.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<(), NnError> {
        if self.params.len() != spec.trainable_params() {
            return Err(NnError::CountMismatch { actual: self.params.len(), expected: spec.trainable_params() });
        }
        if self.stats.len() != spec.stat_params() {
            return Err(NnError::CountMismatch { actual: self.stats.len(), expected: spec.stat_params() });
        }
        Ok(())
    }
}

/// Regression quality on a test set.
#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    /// Mean squared error on normalized targets.
    pub mse: f64,
    /// Mean absolute error in degrees (180 x normalized MAE).
    pub mae_deg: f64,
    /// Coefficient of determination; NaN when undefined.
    pub r2: f64,
    /// False when the targets had zero variance.
    pub r2_defined: bool,
}

/// Run the model over a test set and compute MSE, MAE (degrees) and R^2.
pub fn evaluate(spec: &ModelSpec, weights: &Weights, test: &[crate::synth::Sample]) -> Result<Metrics, NnError> {
    if test.is_empty() {
        return Err(NnError::EmptySet);
    }
    weights.validate(spec)?;
    let preds = predict_samples(spec, weights, test)?;
    let targets: Vec<f64> = test.iter().map(|s| s.target).collect();
    Ok(metrics_from(&preds, &targets))
}

/// Metrics for precomputed normalized predictions.
pub fn metrics_from(preds: &[f64], targets: &[f64]) -> Metrics {
    let n = preds.len() as f64;
    let mse = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let mae_deg = 180.0 * preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mean_t = targets.iter().sum::<f64>() / n;
    let ss_tot = targets.iter().map(|t| (t - mean_t) * (t - mean_t)).sum::<f64>();
    let ss_res = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
    if ss_tot > 0.0 {
        Metrics { mse, mae_deg, r2: 1.0 - ss_res / ss_tot, r2_defined: true }
    } else {
        Metrics { mse, mae_deg, r2: f64::NAN, r2_defined: false }
    }
}

/// Batched inference over samples; returns normalized angles.
pub fn predict_samples(spec: &ModelSpec, weights: &Weights, samples: &[crate::synth::Sample]) -> Result<Vec<f64>, NnError> {
    const BATCH: usize = 64;
    let width = spec.input_width;
    let mut out = Vec::with_capacity(samples.len());
    let mut buf = vec![0.0f64; BATCH * width];
    for chunk in samples.chunks(BATCH) {
        for (b, s) in chunk.iter().enumerate() {
            if s.input.len() != width {
                return Err(NnError::ShapeMismatch { actual: s.input.len(), expected: width });
            }
            for (dst, &src) in buf[b * width..(b + 1) * width].iter_mut().zip(&s.input) {
                *dst = src as f64;
            }
        }
        let preds = forward(spec, weights, &buf[..chunk.len() * width], chunk.len(), Mode::Infer)?;
        out.extend(preds);
    }
    Ok(out)
}
