//! Two-hidden-layer real MLPs for multi-step channel prediction: one network
//! for the real parts, one for the imaginary parts.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fading::{generate_trace, DopplerRangeSpec, FadingSpec};

pub const HIDDEN: usize = 128;
const MAGIC: &str = "MLPCHPRED";
const VERSION: &str = "v1";

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    /// `min(max(a, 0), 1)`.
    #[default]
    Clipped,
    /// `a·u(a) + (a - 1)·u(a - 1)`: zero below 0, `a` on `[0, 1)`, `2a - 1` above.
    Literal,
    /// Used only to build plain affine maps in tests.
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Clipped => "clipped",
            Self::Literal => "literal",
            Self::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clipped" => Some(Self::Clipped),
            "literal" => Some(Self::Literal),
            "identity" => Some(Self::Identity),
            _ => None,
        }
    }

    /// Points where the derivative jumps.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Self::Clipped | Self::Literal => &[0.0, 1.0],
            Self::Identity => &[],
        }
    }
}

pub fn crelu(a: f64, act: Activation) -> f64 {
    match act {
        Activation::Clipped => a.clamp(0.0, 1.0),
        Activation::Literal => {
            if a < 0.0 {
                0.0
            } else if a < 1.0 {
                a
            } else {
                2.0 * a - 1.0
            }
        }
        Activation::Identity => a,
    }
}

/// Derivative, taking 0 at the kinks of the clipped form.
pub fn crelu_grad(a: f64, act: Activation) -> f64 {
    match act {
        Activation::Clipped => {
            if a > 0.0 && a < 1.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Literal => {
            if a <= 0.0 {
                0.0
            } else if a < 1.0 {
                1.0
            } else {
                2.0
            }
        }
        Activation::Identity => 1.0,
    }
}

/// Affine map applied to inputs (`(x + shift)/scale`) and inverted on outputs
/// (`scale·z - shift`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub shift: f64,
    pub scale: f64,
}

impl Normalization {
    pub const FADING: Self = Self { shift: 3.0, scale: 6.0 };
    pub const IDENTITY: Self = Self { shift: 0.0, scale: 1.0 };
}

impl Default for Normalization {
    fn default() -> Self {
        Self::FADING
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub norm: Normalization,
}

/// Per-layer gradients with the same shapes as the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            w: model.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: model.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|g| g.fill(0.0));
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
struct Workspace {
    /// `z[0]` is the normalized input, `z[l]` the output of layer `l`.
    z: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], activation: Activation, norm: Normalization, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!("invalid layer sizes {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|d| {
                let limit = (6.0 / (d[0] + d[1]) as f64).sqrt();
                let mut layer = Layer::zeros(d[0], d[1]);
                layer.w.iter_mut().for_each(|w| *w = rng.random_range(-limit..=limit));
                layer
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            norm,
        })
    }

    /// `[u, 128, 128, v]` predictor network.
    pub fn predictor(u: usize, v: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        Self::new(&[u, HIDDEN, HIDDEN, v], activation, Normalization::FADING, rng)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &[f64], ws: &mut Workspace) {
        let n = self.layers.len();
        ws.z.resize(n + 1, Vec::new());
        ws.pre.resize(n, Vec::new());
        ws.z[0].clear();
        ws.z[0].extend(x.iter().map(|v| (v + self.norm.shift) / self.norm.scale));
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.z.split_at_mut(l + 1);
            let input = &head[l];
            let pre = &mut ws.pre[l];
            pre.clear();
            pre.extend(
                layer
                    .w
                    .chunks_exact(layer.inputs)
                    .zip(&layer.b)
                    .map(|(row, b)| dot(row, input) + b),
            );
            let out = &mut tail[0];
            out.clear();
            if l + 1 == n {
                out.extend_from_slice(pre);
            } else {
                out.extend(pre.iter().map(|&a| crelu(a, self.activation)));
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut ws = Workspace::default();
        self.run(x, &mut ws);
        let (shift, scale) = (self.norm.shift, self.norm.scale);
        Ok(ws.z[self.layers.len()].iter().map(|z| scale * z - shift).collect())
    }

    /// Pre-activations of every hidden layer, for locating kinks.
    pub fn hidden_preactivations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut ws = Workspace::default();
        self.run(x, &mut ws);
        ws.pre.pop();
        Ok(ws.pre)
    }

    /// Adds the gradient of `½‖forward(x) - target‖²` into `grads` and
    /// returns that loss.
    fn accumulate(&self, x: &[f64], target: &[f64], ws: &mut Workspace, grads: &mut Gradients) -> f64 {
        self.run(x, ws);
        let n = self.layers.len();
        let (shift, scale) = (self.norm.shift, self.norm.scale);
        let mut loss = 0.0;
        ws.delta.clear();
        for (z, t) in ws.z[n].iter().zip(target) {
            let e = scale * z - shift - t;
            loss += 0.5 * e * e;
            ws.delta.push(e * scale);
        }
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let input = &ws.z[l];
            for (o, &d) in ws.delta.iter().enumerate() {
                // saturated units contribute nothing
                if d == 0.0 {
                    continue;
                }
                grads.b[l][o] += d;
                axpy(d, input, &mut grads.w[l][o * layer.inputs..(o + 1) * layer.inputs]);
            }
            if l == 0 {
                break;
            }
            ws.delta_prev.clear();
            ws.delta_prev.resize(layer.inputs, 0.0);
            for (o, &d) in ws.delta.iter().enumerate().filter(|(_, d)| **d != 0.0) {
                axpy(d, &layer.w[o * layer.inputs..(o + 1) * layer.inputs], &mut ws.delta_prev);
            }
            for (dp, &a) in ws.delta_prev.iter_mut().zip(&ws.pre[l - 1]) {
                *dp *= crelu_grad(a, self.activation);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
        loss
    }

    /// Exact gradient of `½‖forward(x) - target‖²`.
    pub fn backward(&self, x: &[f64], target: &[f64]) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        if target.len() != self.output_len() {
            return Err(Error::ShapeMismatch(format!(
                "target has {} entries, model outputs {}",
                target.len(),
                self.output_len()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate(x, target, &mut Workspace::default(), &mut grads);
        Ok((loss, grads))
    }

    /// Mean squared error per output entry over a dataset.
    pub fn mse(&self, data: &Dataset, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for &r in rows {
            let out = self.forward(data.input(r)).expect("dataset matches model");
            total += out.iter().zip(data.target(r)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        total / (rows.len() * data.v) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; `t` counts from 1.
pub fn adam_step(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    assert!(t >= 1, "adam step counter starts at 1");
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        // moments of units with zero gradient decay into subnormals, which
        // are orders of magnitude slower to process
        if m[i].abs() < f64::MIN_POSITIVE {
            m[i] = 0.0;
        }
        if v[i] < f64::MIN_POSITIVE {
            v[i] = 0.0;
        }
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        params[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Real,
    Imag,
}

/// Shape of the prediction problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictorDims {
    pub n_t: usize,
    pub n_r: usize,
    pub n_p: usize,
    pub n_x: usize,
}

impl PredictorDims {
    pub fn input_len(&self) -> usize {
        self.n_t * self.n_r * self.n_p
    }

    pub fn output_len(&self) -> usize {
        self.n_t * self.n_r * self.n_x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub rho_range: DopplerRangeSpec,
    /// K-factor of the training channels (0 for Rayleigh).
    pub k_factor: f64,
    pub activation: Activation,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            batch_size: 10,
            epochs: 200,
            adam: AdamConfig::default(),
            rho_range: DopplerRangeSpec { rho_min: 0.001, rho_max: 0.1 },
            k_factor: 0.0,
            activation: Activation::Clipped,
            val_fraction: 0.1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_samples == 0 {
            return Err(Error::InvalidParameter("batch_size and n_samples must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidParameter(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        DopplerRangeSpec::new(self.rho_range.rho_min, self.rho_range.rho_max)?;
        Ok(())
    }
}

/// Flat row-major samples for one of the two networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub u: usize,
    pub v: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub part: Part,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len() / self.u.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, row: usize) -> &[f64] {
        &self.inputs[row * self.u..(row + 1) * self.u]
    }

    pub fn target(&self, row: usize) -> &[f64] {
        &self.targets[row * self.v..(row + 1) * self.v]
    }

    /// Mean squared error of repeating the last observed value per antenna pair.
    pub fn hold_mse(&self, rows: &[usize], pairs: usize) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for &r in rows {
            let last = &self.input(r)[self.u - pairs..];
            for (i, t) in self.target(r).iter().enumerate() {
                let e = t - last[i % pairs];
                total += e * e;
            }
        }
        total / (rows.len() * self.v) as f64
    }
}

/// Real and imaginary datasets built from the same true-channel traces.
/// Each row draws its own Doppler rate uniformly from the configured range.
pub fn make_dataset_pair(cfg: &TrainConfig, dims: PredictorDims, seed: u64) -> Result<(Dataset, Dataset)> {
    let (u, v) = (dims.input_len(), dims.output_len());
    let len = dims.n_p + dims.n_x;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let empty = |part| Dataset {
        u,
        v,
        inputs: Vec::with_capacity(cfg.n_samples * u),
        targets: Vec::with_capacity(cfg.n_samples * v),
        part,
    };
    let (mut re, mut im) = (empty(Part::Real), empty(Part::Imag));
    for _ in 0..cfg.n_samples {
        let rho = cfg.rho_range.sample(&mut rng);
        let spec = if cfg.k_factor > 0.0 {
            FadingSpec::rician(rho, cfg.k_factor)
        } else {
            FadingSpec::rayleigh(rho)
        };
        let trace = generate_trace(&spec, dims.n_t, dims.n_r, len, rng.random())?;
        for k in 0..len {
            let (dst_re, dst_im) = if k < dims.n_p {
                (&mut re.inputs, &mut im.inputs)
            } else {
                (&mut re.targets, &mut im.targets)
            };
            for h in trace.stacked(k) {
                dst_re.push(h.re);
                dst_im.push(h.im);
            }
        }
    }
    Ok((re, im))
}

pub fn make_dataset(cfg: &TrainConfig, dims: PredictorDims, part: Part, seed: u64) -> Result<Dataset> {
    let (re, im) = make_dataset_pair(cfg, dims, seed)?;
    Ok(match part {
        Part::Real => re,
        Part::Imag => im,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean squared error per output entry after each epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub initial_train_loss: f64,
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
}

/// Mini-batch Adam on the mean of `½‖·‖²` per batch; deterministic given
/// `cfg.seed`.
pub fn train(model: &mut MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    if data.u != model.input_len() || data.v != model.output_len() {
        return Err(Error::ShapeMismatch(format!(
            "dataset is {}→{}, model is {}→{}",
            data.u,
            data.v,
            model.input_len(),
            model.output_len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows: Vec<usize> = (0..data.len()).collect();
    rows.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(data.len() - 1);
    let val_rows = rows[..n_val].to_vec();
    let mut train_rows = rows[n_val..].to_vec();

    let mut grads = Gradients::zeros_like(model);
    let mut m = Gradients::zeros_like(model);
    let mut v = Gradients::zeros_like(model);
    let mut ws = Workspace::default();
    let mut t = 0u64;
    let initial_train_loss = model.mse(data, &train_rows);
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        initial_train_loss,
        train_rows: Vec::new(),
        val_rows: val_rows.clone(),
    };
    for _ in 0..cfg.epochs {
        train_rows.shuffle(&mut rng);
        let mut epoch_sq = 0.0;
        for batch in train_rows.chunks(cfg.batch_size) {
            grads.clear();
            for &r in batch {
                epoch_sq += 2.0 * model.accumulate(data.input(r), data.target(r), &mut ws, &mut grads);
            }
            let inv = 1.0 / batch.len() as f64;
            t += 1;
            for (l, layer) in model.layers.iter_mut().enumerate() {
                grads.w[l].iter_mut().chain(grads.b[l].iter_mut()).for_each(|g| *g *= inv);
                adam_step(&mut layer.w, &grads.w[l], &mut m.w[l], &mut v.w[l], t, &cfg.adam);
                adam_step(&mut layer.b, &grads.b[l], &mut m.b[l], &mut v.b[l], t, &cfg.adam);
            }
        }
        // running loss during the epoch, as is customary
        report.train_loss.push(epoch_sq / (train_rows.len() * data.v) as f64);
        report.val_loss.push(model.mse(data, &val_rows));
    }
    report.train_rows = train_rows;
    report.train_rows.sort_unstable();
    Ok(report)
}

/// The real-part and imaginary-part networks used together.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPair {
    pub real: MlpModel,
    pub imag: MlpModel,
    pub dims: PredictorDims,
}

impl MlpPair {
    pub fn new(dims: PredictorDims, activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real = MlpModel::predictor(dims.input_len(), dims.output_len(), activation, &mut rng)?;
        let imag = MlpModel::predictor(dims.input_len(), dims.output_len(), activation, &mut rng)?;
        Ok(Self { real, imag, dims })
    }

    /// Generates the data and trains both networks (in parallel when rayon
    /// has spare threads). Results do not depend on the thread count.
    pub fn train(dims: PredictorDims, cfg: &TrainConfig) -> Result<(Self, TrainReport, TrainReport)> {
        cfg.validate()?;
        let mut pair = Self::new(dims, cfg.activation, cfg.seed)?;
        let (re, im) = make_dataset_pair(cfg, dims, cfg.seed.wrapping_add(1))?;
        let (real, imag) = (&mut pair.real, &mut pair.imag);
        let (rr, ri) = rayon::join(|| train(real, &re, cfg), || train(imag, &im, cfg));
        Ok((pair, rr?, ri?))
    }

    pub fn to_text(&self) -> String {
        let r = &self.real;
        let d = r.dims();
        let mut out = format!("{MAGIC} {VERSION}\n");
        let _ = writeln!(
            out,
            "dims {} activation {} norm {:.17e} {:.17e} geometry {} {} {} {}",
            d.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
            r.activation.name(),
            r.norm.shift,
            r.norm.scale,
            self.dims.n_t,
            self.dims.n_r,
            self.dims.n_p,
            self.dims.n_x,
        );
        for net in [&self.real, &self.imag] {
            for layer in &net.layers {
                for row in layer.w.chunks_exact(layer.inputs) {
                    push_row(&mut out, row);
                }
                push_row(&mut out, &layer.b);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().trim();
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(Error::BadMagic(header.to_string()));
        }
        match parts.next() {
            Some(VERSION) => {}
            other => return Err(Error::VersionMismatch(other.unwrap_or_default().to_string())),
        }
        let meta = lines.next().ok_or_else(|| corrupt("missing header line"))?;
        let tokens: Vec<&str> = meta.split_whitespace().collect();
        let find = |key: &str| {
            tokens
                .iter()
                .position(|t| *t == key)
                .ok_or_else(|| corrupt(&format!("missing {key:?} in header")))
        };
        let (i_dims, i_act, i_norm, i_geo) = (find("dims")?, find("activation")?, find("norm")?, find("geometry")?);
        let dims: Vec<usize> = tokens[i_dims + 1..i_act]
            .iter()
            .map(|t| t.parse().map_err(|_| corrupt("bad layer size")))
            .collect::<Result<_>>()?;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(corrupt("bad layer sizes"));
        }
        let activation = tokens
            .get(i_act + 1)
            .and_then(|s| Activation::parse(s))
            .ok_or_else(|| corrupt("bad activation"))?;
        let num = |i: usize| -> Result<f64> {
            tokens
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| corrupt("bad header number"))
        };
        let norm = Normalization {
            shift: num(i_norm + 1)?,
            scale: num(i_norm + 2)?,
        };
        let geo: Vec<usize> = (1..=4)
            .map(|k| tokens.get(i_geo + k).and_then(|s| s.parse().ok()).ok_or_else(|| corrupt("bad geometry")))
            .collect::<Result<_>>()?;
        let geometry = PredictorDims {
            n_t: geo[0],
            n_r: geo[1],
            n_p: geo[2],
            n_x: geo[3],
        };
        if geometry.input_len() != dims[0] || geometry.output_len() != *dims.last().unwrap() {
            return Err(corrupt("geometry does not match layer sizes"));
        }
        let mut read_net = || -> Result<MlpModel> {
            let mut layers = Vec::new();
            for d in dims.windows(2) {
                let mut layer = Layer::zeros(d[0], d[1]);
                for o in 0..d[1] {
                    read_row(lines.next(), &mut layer.w[o * d[0]..(o + 1) * d[0]])?;
                }
                read_row(lines.next(), &mut layer.b)?;
                layers.push(layer);
            }
            Ok(MlpModel {
                layers,
                activation,
                norm,
            })
        };
        let real = read_net()?;
        let imag = read_net()?;
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(corrupt("trailing data"));
        }
        Ok(Self {
            real,
            imag,
            dims: geometry,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptPayload(msg.to_string())
}

fn push_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

fn read_row(line: Option<&str>, dst: &mut [f64]) -> Result<()> {
    let line = line.ok_or_else(|| corrupt("file ends early"))?;
    let mut n = 0;
    for tok in line.split_whitespace() {
        let slot = dst.get_mut(n).ok_or_else(|| corrupt("row too long"))?;
        *slot = tok.parse().map_err(|_| corrupt(&format!("bad number {tok:?}")))?;
        n += 1;
    }
    if n != dst.len() {
        return Err(corrupt(&format!("row has {n} values, expected {}", dst.len())));
    }
    Ok(())
}
