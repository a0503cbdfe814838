//! Four small differentiable classifiers with exact analytic gradients.
//!
//! All models share one representation: a flat `f64` parameter vector plus a
//! named layout map, so the optimizer, the finite-difference oracle, and the
//! checkpoint format are model-agnostic. Gradients are hand-written
//! backpropagation and are checked against central differences in the tests.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SurveyTable;
use crate::rng::{derive_rng, Stream};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint schema version {found}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Classifier family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Multinomial logistic regression.
    Lr,
    /// Multi-output MLP.
    MoMlp,
    /// 1-D convolutional network over the factor sequence.
    Cnn1d,
    /// Jointly summed wide (linear) and deep (MLP) towers.
    WideDeep,
}

impl ModelKind {
    pub fn display_name(&self) -> &'static str {
        match self {
            ModelKind::Lr => "LR",
            ModelKind::MoMlp => "MoMLP",
            ModelKind::Cnn1d => "CNN1D",
            ModelKind::WideDeep => "WideDeep",
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}
fn default_channels() -> usize {
    16
}
fn default_kernel_width() -> usize {
    3
}
fn default_conv_layers() -> usize {
    3
}

/// Architecture hyperparameters. `hidden` applies to MoMLP and the WideDeep
/// deep tower; the `channels`/`kernel_width`/`conv_layers` trio applies to
/// CNN1D only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_kernel_width")]
    pub kernel_width: usize,
    #[serde(default = "default_conv_layers")]
    pub conv_layers: usize,
    #[serde(default)]
    pub init_seed: u64,
}

impl ClassifierSpec {
    pub fn new(kind: ModelKind, input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind,
            input_dim,
            num_classes,
            hidden: default_hidden(),
            channels: default_channels(),
            kernel_width: default_kernel_width(),
            conv_layers: default_conv_layers(),
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(ModelError::InvalidSpec(format!(
                "need input_dim >= 1 and num_classes >= 2, got {} and {}",
                self.input_dim, self.num_classes
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(ModelError::InvalidSpec("hidden widths must be positive".into()));
        }
        if self.kind == ModelKind::Cnn1d {
            if self.channels == 0 || self.conv_layers == 0 {
                return Err(ModelError::InvalidSpec(
                    "channels and conv_layers must be positive".into(),
                ));
            }
            if self.kernel_width == 0 || self.kernel_width > self.input_dim {
                return Err(ModelError::InvalidSpec(format!(
                    "kernel width {} must be in 1..={}",
                    self.kernel_width, self.input_dim
                )));
            }
        }
        Ok(())
    }
}

/// One named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseOff {
    w: usize,
    b: usize,
    input: usize,
    output: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvOff {
    w: usize,
    b: usize,
    in_ch: usize,
    out_ch: usize,
    k: usize,
}

#[derive(Debug, Clone)]
enum ArchOffsets {
    Lr { dense: DenseOff },
    Mlp { layers: Vec<DenseOff> },
    Cnn { convs: Vec<ConvOff>, out: DenseOff },
    WideDeep { wide: DenseOff, deep: Vec<DenseOff> },
}

/// Training provenance recorded on the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: usize,
    pub final_label_loss: f64,
    pub final_exp_loss: f64,
}

/// A built classifier: spec, flat parameters, and their layout map.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub spec: ClassifierSpec,
    params: Vec<f64>,
    layout: Vec<LayoutEntry>,
    offsets: ArchOffsets,
    pub training_log: TrainingLog,
}

/// Dense layer sequence `input -> hidden... -> output`, all with biases.
fn mlp_dims(input: usize, hidden: &[usize], output: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        dims.push((prev, h));
        prev = h;
    }
    dims.push((prev, output));
    dims
}

/// Layout entries plus the uniform fan-in/fan-out init bound for each.
fn layout_with_bounds(spec: &ClassifierSpec) -> Vec<(LayoutEntry, f64)> {
    let j = spec.input_dim;
    let c = spec.num_classes;
    let mut entries = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, shape: Vec<usize>, bound: f64, offset: &mut usize| {
        let len: usize = shape.iter().product();
        entries.push((
            LayoutEntry {
                name,
                offset: *offset,
                shape,
            },
            bound,
        ));
        *offset += len;
    };
    let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut push_dense = |prefix: &str, input: usize, output: usize, offset: &mut usize| {
        push(
            format!("{prefix}.w"),
            vec![output, input],
            xavier(input, output),
            offset,
        );
        push(format!("{prefix}.b"), vec![output], 0.0, offset);
    };
    match spec.kind {
        ModelKind::Lr => {
            push_dense("fc", j, c, &mut offset);
        }
        ModelKind::MoMlp => {
            for (l, (input, output)) in mlp_dims(j, &spec.hidden, c).into_iter().enumerate() {
                push_dense(&format!("fc{}", l + 1), input, output, &mut offset);
            }
        }
        ModelKind::Cnn1d => {
            for l in 0..spec.conv_layers {
                let in_ch = if l == 0 { 1 } else { spec.channels };
                let k = spec.kernel_width;
                push(
                    format!("conv{}.w", l + 1),
                    vec![spec.channels, in_ch, k],
                    xavier(in_ch * k, spec.channels * k),
                    &mut offset,
                );
                push(format!("conv{}.b", l + 1), vec![spec.channels], 0.0, &mut offset);
            }
            push_dense("out", spec.channels * j, c, &mut offset);
        }
        ModelKind::WideDeep => {
            push_dense("wide", j, c, &mut offset);
            for (l, (input, output)) in mlp_dims(j, &spec.hidden, c).into_iter().enumerate() {
                push_dense(&format!("deep.fc{}", l + 1), input, output, &mut offset);
            }
        }
    }
    entries
}

fn offsets_from_layout(spec: &ClassifierSpec, layout: &[LayoutEntry]) -> ArchOffsets {
    let find = |name: &str| -> usize {
        layout
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("layout entry {name} missing"))
            .offset
    };
    let dense = |prefix: &str, input: usize, output: usize| DenseOff {
        w: find(&format!("{prefix}.w")),
        b: find(&format!("{prefix}.b")),
        input,
        output,
    };
    let j = spec.input_dim;
    let c = spec.num_classes;
    match spec.kind {
        ModelKind::Lr => ArchOffsets::Lr {
            dense: dense("fc", j, c),
        },
        ModelKind::MoMlp => ArchOffsets::Mlp {
            layers: mlp_dims(j, &spec.hidden, c)
                .into_iter()
                .enumerate()
                .map(|(l, (input, output))| dense(&format!("fc{}", l + 1), input, output))
                .collect(),
        },
        ModelKind::Cnn1d => ArchOffsets::Cnn {
            convs: (0..spec.conv_layers)
                .map(|l| ConvOff {
                    w: find(&format!("conv{}.w", l + 1)),
                    b: find(&format!("conv{}.b", l + 1)),
                    in_ch: if l == 0 { 1 } else { spec.channels },
                    out_ch: spec.channels,
                    k: spec.kernel_width,
                })
                .collect(),
            out: dense("out", spec.channels * j, c),
        },
        ModelKind::WideDeep => ArchOffsets::WideDeep {
            wide: dense("wide", j, c),
            deep: mlp_dims(j, &spec.hidden, c)
                .into_iter()
                .enumerate()
                .map(|(l, (input, output))| dense(&format!("deep.fc{}", l + 1), input, output))
                .collect(),
        },
    }
}

/// Numerically stable softmax (max subtraction, normalized by the sum).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cached per-layer activations from a forward pass, consumed by `backward_into`.
#[derive(Debug, Clone)]
pub(crate) enum ForwardCache {
    Lr,
    Mlp {
        /// Input to each dense layer; `acts[0]` is the model input.
        acts: Vec<Vec<f64>>,
    },
    Cnn {
        /// Feature maps entering each conv (channel-major, length in_ch*J),
        /// plus the flattened map entering the output layer.
        maps: Vec<Vec<f64>>,
        flat: Vec<f64>,
    },
    WideDeep {
        deep_acts: Vec<Vec<f64>>,
    },
}

impl ModelState {
    /// Initialize parameters: weights uniform in ±sqrt(6/(fan_in+fan_out)),
    /// biases zero, deterministic in `spec.init_seed`.
    pub fn build(spec: ClassifierSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let entries = layout_with_bounds(&spec);
        let total: usize = entries.iter().map(|(e, _)| e.len()).sum();
        let mut params = vec![0.0; total];
        let mut rng = derive_rng(spec.init_seed, Stream::Init, 0);
        for (entry, bound) in &entries {
            if *bound > 0.0 {
                for p in &mut params[entry.offset..entry.offset + entry.len()] {
                    let u: f64 = rng.random();
                    *p = bound * (2.0 * u - 1.0);
                }
            }
        }
        let layout: Vec<LayoutEntry> = entries.into_iter().map(|(e, _)| e).collect();
        let offsets = offsets_from_layout(&spec, &layout);
        Ok(Self {
            spec,
            params,
            layout,
            offsets,
            training_log: TrainingLog::default(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    /// Copy of this model with a replacement parameter vector.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self, ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        let mut out = self.clone();
        out.params = params;
        Ok(out)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.spec.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
        Ok(())
    }

    /// Class logits for one input row.
    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        Ok(self.forward_cache(x).0)
    }

    /// Softmax class probabilities for one input row.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(softmax(&self.forward_logits(x)?))
    }

    /// 0-based argmax class (ties to the lower index).
    pub fn predict_class(&self, x: &[f64]) -> Result<usize, ModelError> {
        let logits = self.forward_logits(x)?;
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }

    fn dense_forward(&self, off: &DenseOff, input: &[f64], out: &mut [f64]) {
        let w = &self.params[off.w..off.w + off.output * off.input];
        let b = &self.params[off.b..off.b + off.output];
        for o in 0..off.output {
            let row = &w[o * off.input..(o + 1) * off.input];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            out[o] = acc;
        }
    }

    fn dense_backward(
        &self,
        off: &DenseOff,
        input: &[f64],
        dout: &[f64],
        grad: &mut [f64],
        dinput: Option<&mut [f64]>,
    ) {
        let gw = off.w;
        for o in 0..off.output {
            let d = dout[o];
            if d != 0.0 {
                let row = &mut grad[gw + o * off.input..gw + (o + 1) * off.input];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            grad[off.b + o] += d;
        }
        if let Some(dinput) = dinput {
            let w = &self.params[off.w..off.w + off.output * off.input];
            for di in dinput.iter_mut() {
                *di = 0.0;
            }
            for o in 0..off.output {
                let d = dout[o];
                if d != 0.0 {
                    let row = &w[o * off.input..(o + 1) * off.input];
                    for (di, wi) in dinput.iter_mut().zip(row) {
                        *di += d * wi;
                    }
                }
            }
        }
    }

    fn mlp_forward(&self, layers: &[DenseOff], x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        acts.push(x.to_vec());
        for (l, off) in layers.iter().enumerate() {
            let mut out = vec![0.0; off.output];
            self.dense_forward(off, &acts[l], &mut out);
            if l + 1 < layers.len() {
                for v in &mut out {
                    *v = v.max(0.0);
                }
                acts.push(out);
            } else {
                return (out, acts);
            }
        }
        unreachable!("mlp has at least one layer")
    }

    fn mlp_backward(
        &self,
        layers: &[DenseOff],
        acts: &[Vec<f64>],
        dlogits: &[f64],
        grad: &mut [f64],
    ) {
        let mut d = dlogits.to_vec();
        for l in (0..layers.len()).rev() {
            let off = &layers[l];
            if l > 0 {
                let mut dinput = vec![0.0; off.input];
                self.dense_backward(off, &acts[l], &d, grad, Some(&mut dinput));
                // ReLU mask from the cached post-activation values.
                for (di, a) in dinput.iter_mut().zip(&acts[l]) {
                    if *a <= 0.0 {
                        *di = 0.0;
                    }
                }
                d = dinput;
            } else {
                self.dense_backward(off, &acts[l], &d, grad, None);
            }
        }
    }

    fn conv_forward(&self, off: &ConvOff, input: &[f64], len: usize) -> Vec<f64> {
        let pad_left = (off.k - 1) / 2;
        let w = &self.params[off.w..off.w + off.out_ch * off.in_ch * off.k];
        let b = &self.params[off.b..off.b + off.out_ch];
        let mut out = vec![0.0; off.out_ch * len];
        for o in 0..off.out_ch {
            for t in 0..len {
                let mut acc = b[o];
                for i in 0..off.in_ch {
                    let wbase = (o * off.in_ch + i) * off.k;
                    for u in 0..off.k {
                        let s = t + u;
                        if s >= pad_left && s - pad_left < len {
                            acc += w[wbase + u] * input[i * len + (s - pad_left)];
                        }
                    }
                }
                out[o * len + t] = acc;
            }
        }
        out
    }

    fn conv_backward(
        &self,
        off: &ConvOff,
        input: &[f64],
        len: usize,
        dout: &[f64],
        grad: &mut [f64],
        dinput: Option<&mut [f64]>,
    ) {
        let pad_left = (off.k - 1) / 2;
        for o in 0..off.out_ch {
            for t in 0..len {
                let d = dout[o * len + t];
                if d == 0.0 {
                    continue;
                }
                grad[off.b + o] += d;
                for i in 0..off.in_ch {
                    let wbase = off.w + (o * off.in_ch + i) * off.k;
                    for u in 0..off.k {
                        let s = t + u;
                        if s >= pad_left && s - pad_left < len {
                            grad[wbase + u] += d * input[i * len + (s - pad_left)];
                        }
                    }
                }
            }
        }
        if let Some(dinput) = dinput {
            for di in dinput.iter_mut() {
                *di = 0.0;
            }
            let w = &self.params[off.w..off.w + off.out_ch * off.in_ch * off.k];
            for o in 0..off.out_ch {
                for t in 0..len {
                    let d = dout[o * len + t];
                    if d == 0.0 {
                        continue;
                    }
                    for i in 0..off.in_ch {
                        let wbase = (o * off.in_ch + i) * off.k;
                        for u in 0..off.k {
                            let s = t + u;
                            if s >= pad_left && s - pad_left < len {
                                dinput[i * len + (s - pad_left)] += d * w[wbase + u];
                            }
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn forward_cache(&self, x: &[f64]) -> (Vec<f64>, ForwardCache) {
        match &self.offsets {
            ArchOffsets::Lr { dense } => {
                let mut logits = vec![0.0; dense.output];
                self.dense_forward(dense, x, &mut logits);
                (logits, ForwardCache::Lr)
            }
            ArchOffsets::Mlp { layers } => {
                let (logits, acts) = self.mlp_forward(layers, x);
                (logits, ForwardCache::Mlp { acts })
            }
            ArchOffsets::Cnn { convs, out } => {
                let len = self.spec.input_dim;
                let mut maps: Vec<Vec<f64>> = Vec::with_capacity(convs.len());
                maps.push(x.to_vec());
                for (l, conv) in convs.iter().enumerate() {
                    let mut fm = self.conv_forward(conv, &maps[l], len);
                    for v in &mut fm {
                        *v = v.max(0.0);
                    }
                    maps.push(fm);
                }
                let flat = maps.last().expect("at least the input map").clone();
                let mut logits = vec![0.0; out.output];
                self.dense_forward(out, &flat, &mut logits);
                (logits, ForwardCache::Cnn { maps, flat })
            }
            ArchOffsets::WideDeep { wide, deep } => {
                let mut logits = vec![0.0; wide.output];
                self.dense_forward(wide, x, &mut logits);
                let (deep_logits, deep_acts) = self.mlp_forward(deep, x);
                for (l, d) in logits.iter_mut().zip(&deep_logits) {
                    *l += d;
                }
                (logits, ForwardCache::WideDeep { deep_acts })
            }
        }
    }

    /// Accumulate `d loss / d params` into `grad`, given `d loss / d logits`.
    pub(crate) fn backward_into(
        &self,
        x: &[f64],
        cache: &ForwardCache,
        dlogits: &[f64],
        grad: &mut [f64],
    ) {
        match (&self.offsets, cache) {
            (ArchOffsets::Lr { dense }, ForwardCache::Lr) => {
                self.dense_backward(dense, x, dlogits, grad, None);
            }
            (ArchOffsets::Mlp { layers }, ForwardCache::Mlp { acts }) => {
                self.mlp_backward(layers, acts, dlogits, grad);
            }
            (ArchOffsets::Cnn { convs, out }, ForwardCache::Cnn { maps, flat }) => {
                let len = self.spec.input_dim;
                let mut dflat = vec![0.0; flat.len()];
                self.dense_backward(out, flat, dlogits, grad, Some(&mut dflat));
                let mut d = dflat;
                for l in (0..convs.len()).rev() {
                    // ReLU mask on this conv's output.
                    for (di, a) in d.iter_mut().zip(&maps[l + 1]) {
                        if *a <= 0.0 {
                            *di = 0.0;
                        }
                    }
                    if l > 0 {
                        let mut dinput = vec![0.0; maps[l].len()];
                        self.conv_backward(&convs[l], &maps[l], len, &d, grad, Some(&mut dinput));
                        d = dinput;
                    } else {
                        self.conv_backward(&convs[l], &maps[l], len, &d, grad, None);
                    }
                }
            }
            (ArchOffsets::WideDeep { wide, deep }, ForwardCache::WideDeep { deep_acts }) => {
                self.dense_backward(wide, x, dlogits, grad, None);
                self.mlp_backward(deep, deep_acts, dlogits, grad);
            }
            _ => unreachable!("cache kind always matches the architecture"),
        }
    }

    /// Mean cross-entropy of the batch (probabilities clamped at 1e-12).
    pub fn label_loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        batch.validate(&self.spec)?;
        let mut loss = 0.0;
        for (row, &label) in batch.rows.iter().zip(&batch.labels) {
            let p = softmax(&self.forward_cache(row).0);
            loss -= p[label].max(1e-12).ln();
        }
        let loss = loss / batch.rows.len() as f64;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        Ok(loss)
    }

    /// Mean cross-entropy plus its analytic gradient in layout order.
    pub fn label_loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>), ModelError> {
        batch.validate(&self.spec)?;
        let n = batch.rows.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (row, &label) in batch.rows.iter().zip(&batch.labels) {
            let (logits, cache) = self.forward_cache(row);
            let p = softmax(&logits);
            loss -= p[label].max(1e-12).ln();
            let mut dlogits = p;
            dlogits[label] -= 1.0;
            for d in &mut dlogits {
                *d /= n;
            }
            self.backward_into(row, &cache, &dlogits, &mut grad);
        }
        let loss = loss / n;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteLoss);
        }
        Ok((loss, grad))
    }

    /// Compare the analytic label-loss gradient against central differences.
    pub fn grad_check(&self, batch: &Batch, h: f64, tol: f64) -> Result<GradCheckReport, ModelError> {
        if h <= 0.0 {
            return Err(ModelError::InvalidSpec("step h must be positive".into()));
        }
        let (_, analytic) = self.label_loss_and_grad(batch)?;
        let fd = central_difference(
            |params| {
                self.with_params(params.to_vec())
                    .and_then(|m| m.label_loss(batch))
                    .expect("loss evaluates on perturbed params")
            },
            self.params(),
            h,
        );
        let mut max_rel = 0.0;
        let mut worst = None;
        for (i, (a, f)) in analytic.iter().zip(&fd).enumerate() {
            let rel = relative_error(*a, *f);
            if rel > max_rel {
                max_rel = rel;
                worst = Some(i);
            }
        }
        Ok(GradCheckReport {
            max_rel_error: max_rel,
            worst_coordinate: worst,
            coordinates: analytic.len(),
            tol,
            passed: max_rel < tol,
        })
    }

    /// Serialize to the checkpoint format: JSON header plus the flat
    /// parameters as base64 little-endian f64.
    pub fn save_checkpoint(
        &self,
        path: impl AsRef<std::path::Path>,
        provenance: Option<serde_json::Value>,
    ) -> Result<(), ModelError> {
        let mut bytes = Vec::with_capacity(self.params.len() * 8);
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            seed: self.spec.init_seed,
            metrics: self.training_log.clone(),
            params_b64: BASE64.encode(&bytes),
            provenance,
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| ModelError::CorruptCheckpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| ModelError::CorruptCheckpoint(e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::SchemaVersionMismatch {
                found: file.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        file.spec.validate()?;
        let expected_layout: Vec<LayoutEntry> = layout_with_bounds(&file.spec)
            .into_iter()
            .map(|(e, _)| e)
            .collect();
        if expected_layout != file.layout {
            return Err(ModelError::CorruptCheckpoint(
                "layout does not match the spec".into(),
            ));
        }
        let bytes = BASE64
            .decode(file.params_b64.as_bytes())
            .map_err(|e| ModelError::CorruptCheckpoint(e.to_string()))?;
        if bytes.len() % 8 != 0 {
            return Err(ModelError::CorruptCheckpoint("parameter bytes truncated".into()));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let expected: usize = expected_layout.iter().map(|e| e.len()).sum();
        if params.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::CorruptCheckpoint("non-finite parameter".into()));
        }
        let offsets = offsets_from_layout(&file.spec, &expected_layout);
        Ok(Self {
            spec: file.spec,
            params,
            layout: expected_layout,
            offsets,
            training_log: file.metrics,
        })
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    spec: ClassifierSpec,
    layout: Vec<LayoutEntry>,
    seed: u64,
    metrics: TrainingLog,
    params_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// A borrowed minibatch; labels are 0-based class indices.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub rows: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn from_table(table: &'a SurveyTable, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| table.row(i)).collect(),
            labels: indices.iter().map(|&i| table.label0(i)).collect(),
        }
    }

    pub fn whole_table(table: &'a SurveyTable) -> Self {
        let all: Vec<usize> = (0..table.num_rows()).collect();
        Self::from_table(table, &all)
    }

    fn validate(&self, spec: &ClassifierSpec) -> Result<(), ModelError> {
        if self.rows.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if self.rows.len() != self.labels.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.rows.len(),
                got: self.labels.len(),
            });
        }
        for row in &self.rows {
            if row.len() != spec.input_dim {
                return Err(ModelError::DimensionMismatch {
                    expected: spec.input_dim,
                    got: row.len(),
                });
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= spec.num_classes) {
            return Err(ModelError::DimensionMismatch {
                expected: spec.num_classes,
                got: bad,
            });
        }
        Ok(())
    }
}

/// Central-difference gradient of an arbitrary scalar function of the
/// parameter vector. Verification harness; O(2·len) evaluations of `f`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut perturbed = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = perturbed[i];
        perturbed[i] = orig + h;
        let up = f(&perturbed);
        perturbed[i] = orig - h;
        let down = f(&perturbed);
        perturbed[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error with a small absolute floor so near-zero coordinates are
/// judged against finite-difference noise rather than blowing up the ratio.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Outcome of [`ModelState::grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}
