//! RoCoF predictor: feature construction, a fully connected ReLU network
//! trained by backpropagation on MSE, and validation metrics.
//!
//! The feature vector of a commitment/dispatch snapshot is
//! `x = [u, omega, p]`: binary statuses, the one-hot disturbance vector
//! scaled by the largest online output, and the dispatch itself.
//!
//! Standardization is affine and folded into the first layer for export, so
//! downstream MILP encodings see a single linear layer over raw features.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum MlpError {
    Invalid(String),
    /// Training loss became non-finite at this epoch.
    Diverged { epoch: usize },
    Io(std::io::Error),
    Parse(String),
}

impl fmt::Display for MlpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MlpError::Invalid(m) => write!(f, "{m}"),
            MlpError::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            MlpError::Io(e) => write!(f, "dataset i/o error: {e}"),
            MlpError::Parse(m) => write!(f, "dataset parse error: {m}"),
        }
    }
}

impl std::error::Error for MlpError {}

impl From<std::io::Error> for MlpError {
    fn from(e: std::io::Error) -> Self {
        MlpError::Io(e)
    }
}

// ------------------------------------------------------------- features

/// `[u, omega, p]` blocks for one commitment/dispatch snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub u: Vec<f64>,
    pub omega: Vec<f64>,
    pub p: Vec<f64>,
}

impl FeatureVector {
    pub fn num_generators(&self) -> usize {
        self.u.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * self.u.len());
        x.extend_from_slice(&self.u);
        x.extend_from_slice(&self.omega);
        x.extend_from_slice(&self.p);
        x
    }
}

/// Builds the feature vector. The disturbance block is the largest online
/// output placed at its generator's index (ties to the lowest index).
pub fn build_features(commitment: &[bool], dispatch: &[f64]) -> Result<FeatureVector, MlpError> {
    if commitment.len() != dispatch.len() {
        return Err(MlpError::Invalid("commitment/dispatch length mismatch".into()));
    }
    for (g, (&on, &p)) in commitment.iter().zip(dispatch).enumerate() {
        if !on && p.abs() > 1e-9 {
            return Err(MlpError::Invalid(format!(
                "generator {g} is offline but dispatched {p} MW"
            )));
        }
        if p < -1e-9 {
            return Err(MlpError::Invalid(format!("generator {g} has negative dispatch {p}")));
        }
    }
    let ng = commitment.len();
    let mut omega = vec![0.0; ng];
    let mut argmax: Option<usize> = None;
    for g in 0..ng {
        if commitment[g] && argmax.map_or(true, |b| dispatch[g] > dispatch[b]) {
            argmax = Some(g);
        }
    }
    if let Some(b) = argmax {
        omega[b] = dispatch[b];
    }
    Ok(FeatureVector {
        u: commitment.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect(),
        omega,
        p: dispatch.to_vec(),
    })
}

// -------------------------------------------------------------- network

/// Per-feature affine standardization: `x_std = (x - offset) / scale`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(n: usize) -> Self {
        InputScaling { offset: vec![0.0; n], scale: vec![1.0; n] }
    }

    pub fn is_identity(&self) -> bool {
        self.offset.iter().all(|v| *v == 0.0) && self.scale.iter().all(|v| *v == 1.0)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| (v - o) / s)
            .collect()
    }
}

/// Weights and biases of the predictor. Hidden layers are ReLU, the output
/// head is linear and scalar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    /// `[input, hidden.., 1]`.
    pub layer_sizes: Vec<usize>,
    /// Per layer, row-major `[out][in]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_scaling: InputScaling,
}

impl MlpParams {
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_hidden_neurons(&self) -> usize {
        self.layer_sizes[1..self.layer_sizes.len() - 1].iter().sum()
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    fn check_input(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() != self.input_len() {
            return Err(MlpError::Invalid(format!(
                "input length {} does not match layer 0 size {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Folds the standardization into layer 1, leaving identity scaling.
    /// Forward passes on raw inputs are unchanged within rounding.
    pub fn fold_scaling(&self) -> MlpParams {
        if self.input_scaling.is_identity() {
            return self.clone();
        }
        let mut out = self.clone();
        let n_in = self.layer_sizes[0];
        let n_out = self.layer_sizes[1];
        let w = &self.weights[0];
        let mut new_w = vec![0.0; n_out * n_in];
        let mut new_b = self.biases[0].clone();
        for r in 0..n_out {
            for c in 0..n_in {
                let scaled = w[r * n_in + c] / self.input_scaling.scale[c];
                new_w[r * n_in + c] = scaled;
                new_b[r] -= scaled * self.input_scaling.offset[c];
            }
        }
        out.weights[0] = new_w;
        out.biases[0] = new_b;
        out.input_scaling = InputScaling::identity(n_in);
        out
    }

    /// Pre-activations of every layer (hidden layers and the output head),
    /// in network space (after standardization).
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, MlpError> {
        self.check_input(x)?;
        let mut acts = self.input_scaling.apply(x);
        let mut all = Vec::with_capacity(self.weights.len());
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let n_in = self.layer_sizes[layer];
            let n_out = self.layer_sizes[layer + 1];
            let mut z = vec![0.0; n_out];
            for r in 0..n_out {
                let row = &w[r * n_in..(r + 1) * n_in];
                z[r] = b[r] + row.iter().zip(&acts).map(|(a, v)| a * v).sum::<f64>();
            }
            all.push(z.clone());
            let last = layer + 1 == self.weights.len();
            acts = if last { z } else { z.into_iter().map(|v| v.max(0.0)).collect() };
        }
        Ok(all)
    }
}

/// Scalar prediction for one raw feature vector.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<f64, MlpError> {
    let acts = params.pre_activations(x)?;
    Ok(acts.last().expect("at least one layer")[0])
}

// -------------------------------------------------------------- dataset

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub variant: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// One raw feature row per sample, uniform length.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn push(&mut self, features: Vec<f64>, label: f64, provenance: Provenance) {
        self.features.push(features);
        self.labels.push(label);
        self.provenance.push(provenance);
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let flen = self.feature_len();
        if self.features.iter().any(|f| f.len() != flen) {
            return Err(MlpError::Invalid("non-uniform feature length".into()));
        }
        if let Some(l) = self.labels.iter().find(|l| **l <= 0.0 || !l.is_finite()) {
            return Err(MlpError::Invalid(format!("label {l} must be a positive magnitude")));
        }
        Ok(())
    }

    /// Columnar text: one row of features-then-label per sample, preceded by
    /// a provenance header in `#` comment lines.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), MlpError> {
        let ng = self.feature_len() / 3;
        let mut out = String::new();
        out.push_str("# rcuc dataset v1\n");
        out.push_str(&format!("# samples: {} generators: {ng}\n", self.len()));
        for (i, p) in self.provenance.iter().enumerate() {
            out.push_str(&format!("# provenance {i} {} {}\n", p.variant, p.seed));
        }
        let mut header: Vec<String> = Vec::new();
        for tag in ["u", "omega", "p"] {
            for g in 1..=ng {
                header.push(format!("{tag}{g}"));
            }
        }
        header.push("label".into());
        out.push_str(&header.join(","));
        out.push('\n');
        for (row, label) in self.features.iter().zip(&self.labels) {
            for v in row {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{label}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Dataset, MlpError> {
        let text = std::fs::read_to_string(path)?;
        let mut ds = Dataset::default();
        let mut provenance = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# provenance ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(MlpError::Parse(format!("bad provenance line: {line}")));
                }
                let seed = parts[2]
                    .parse()
                    .map_err(|_| MlpError::Parse(format!("bad provenance seed: {line}")))?;
                provenance.push(Provenance { variant: parts[1].to_string(), seed });
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if !saw_header {
                saw_header = true; // column names
                continue;
            }
            let mut values = Vec::new();
            for tok in line.split(',') {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| MlpError::Parse(format!("bad number {tok:?}")))?,
                );
            }
            let label = values.pop().ok_or_else(|| MlpError::Parse("empty row".into()))?;
            ds.features.push(values);
            ds.labels.push(label);
        }
        if provenance.len() == ds.features.len() {
            ds.provenance = provenance;
        } else {
            ds.provenance =
                vec![Provenance { variant: "unknown".into(), seed: 0 }; ds.features.len()];
        }
        ds.validate()?;
        Ok(ds)
    }
}

// ------------------------------------------------------------- training

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub split_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_layers: 3,
            hidden_width: 10,
            epochs: 400,
            learning_rate: 5e-3,
            batch_size: 32,
            seed: 1,
            split_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub median_abs_err: f64,
    pub mean_abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub metrics: Metrics,
    /// Full-batch training loss after each accepted epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Standard regression metrics. R^2 returns 0 by convention when the labels
/// are constant (SST = 0).
pub fn metrics(predictions: &[f64], labels: &[f64]) -> Result<Metrics, MlpError> {
    if predictions.len() != labels.len() {
        return Err(MlpError::Invalid("prediction/label length mismatch".into()));
    }
    if predictions.len() < 2 {
        return Err(MlpError::Invalid("need at least 2 points for metrics".into()));
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let sst: f64 = labels.iter().map(|l| (l - mean) * (l - mean)).sum();
    let sse: f64 = predictions.iter().zip(labels).map(|(p, l)| (p - l) * (p - l)).sum();
    let r2 = if sst <= 1e-12 { 0.0 } else { 1.0 - sse / sst };
    let mut abs_errs: Vec<f64> =
        predictions.iter().zip(labels).map(|(p, l)| (p - l).abs()).collect();
    abs_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = abs_errs.len() / 2;
    let median = if abs_errs.len() % 2 == 1 {
        abs_errs[mid]
    } else {
        0.5 * (abs_errs[mid - 1] + abs_errs[mid])
    };
    let mean_abs = abs_errs.iter().sum::<f64>() / n;
    Ok(Metrics { r2, median_abs_err: median, mean_abs_err: mean_abs })
}

/// Network state plus Adam moments; snapshotted for the epoch-retry rule.
#[derive(Clone)]
struct TrainState {
    params: MlpParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    mb: Vec<Vec<f64>>,
    vb: Vec<Vec<f64>>,
    step: u64,
    rng: ChaCha8Rng,
}

/// Trains by seeded minibatch gradient descent with per-parameter adaptive
/// steps on MSE. The learning rate halves and the epoch is retried whenever
/// the full-batch training loss increases, so the accepted loss sequence is
/// non-increasing by construction.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, MlpError> {
    dataset.validate()?;
    if dataset.len() < 50 {
        return Err(MlpError::Invalid(format!(
            "dataset has {} samples; need at least 50",
            dataset.len()
        )));
    }
    if !(config.split_fraction > 0.0 && config.split_fraction < 1.0) {
        return Err(MlpError::Invalid("split_fraction must lie in (0, 1)".into()));
    }

    // Seeded shuffle, then split.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((dataset.len() as f64) * config.split_fraction).round() as usize;
    let n_train = n_train.clamp(1, dataset.len() - 1);
    let (train_idx, val_idx) = order.split_at(n_train);

    // Standardization fitted on the training split only.
    let flen = dataset.feature_len();
    let mut offset = vec![0.0; flen];
    let mut scale = vec![0.0; flen];
    for &i in train_idx {
        for (k, v) in dataset.features[i].iter().enumerate() {
            offset[k] += v;
        }
    }
    for o in offset.iter_mut() {
        *o /= train_idx.len() as f64;
    }
    for &i in train_idx {
        for (k, v) in dataset.features[i].iter().enumerate() {
            scale[k] += (v - offset[k]) * (v - offset[k]);
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / train_idx.len() as f64).sqrt();
        if *s < 1e-9 {
            *s = 1.0;
        }
    }
    let scaling = InputScaling { offset, scale };

    // Glorot-uniform initialization.
    let mut layer_sizes = vec![flen];
    layer_sizes.extend(std::iter::repeat(config.hidden_width).take(config.hidden_layers));
    layer_sizes.push(1);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layer_sizes.len() - 1 {
        let (n_in, n_out) = (layer_sizes[l], layer_sizes[l + 1]);
        let r = (6.0 / (n_in + n_out) as f64).sqrt();
        let w: Vec<f64> = (0..n_in * n_out).map(|_| rng.gen_range(-r..r)).collect();
        weights.push(w);
        biases.push(vec![0.0; n_out]);
    }
    let params = MlpParams { layer_sizes, weights, biases, input_scaling: scaling };

    let shapes: Vec<(usize, usize)> = (0..params.weights.len())
        .map(|l| (params.layer_sizes[l + 1], params.layer_sizes[l]))
        .collect();
    let mut state = TrainState {
        m: shapes.iter().map(|(o, i)| vec![0.0; o * i]).collect(),
        v: shapes.iter().map(|(o, i)| vec![0.0; o * i]).collect(),
        mb: shapes.iter().map(|(o, _)| vec![0.0; *o]).collect(),
        vb: shapes.iter().map(|(o, _)| vec![0.0; *o]).collect(),
        step: 0,
        rng,
        params,
    };

    let loss_of = |p: &MlpParams, idx: &[usize]| -> f64 {
        let mut sse = 0.0;
        for &i in idx {
            let pred = forward_infallible(p, &dataset.features[i]);
            let d = pred - dataset.labels[i];
            sse += d * d;
        }
        sse / idx.len() as f64
    };

    let mut train_hist = vec![loss_of(&state.params, train_idx)];
    let mut val_hist = vec![loss_of(&state.params, val_idx)];

    // Effective rate = configured rate x decay schedule x retry penalty.
    // The schedule holds the full rate for 60% of the run, then anneals
    // geometrically to 5% so the minibatch noise floor shrinks at the tail.
    // The penalty halves whenever an epoch raises the full-batch loss and
    // creeps back on success, so the accepted loss sequence never increases.
    let mut penalty = 1.0f64;
    for epoch in 0..config.epochs {
        let progress = epoch as f64 / config.epochs.max(1) as f64;
        let decay = if progress < 0.6 {
            1.0
        } else {
            0.05f64.powf((progress - 0.6) / 0.4)
        };
        let prev_loss = *train_hist.last().expect("seeded");
        let mut accepted = false;
        for retry in 0..12 {
            let snapshot = state.clone();
            run_epoch(&mut state, dataset, train_idx, config.batch_size,
                      config.learning_rate * decay * penalty);
            let loss = loss_of(&state.params, train_idx);
            if loss.is_finite() && loss <= prev_loss {
                train_hist.push(loss);
                val_hist.push(loss_of(&state.params, val_idx));
                accepted = true;
                break;
            }
            let diverged = !loss.is_finite();
            // Roll back the parameters but let the shuffle stream advance,
            // and drop stale momentum after repeated failures; otherwise the
            // retry replays the same uphill direction at every scale.
            let rng = state.rng.clone();
            state = snapshot;
            state.rng = rng;
            if retry >= 1 {
                for m in state.m.iter_mut().chain(state.v.iter_mut()) {
                    m.iter_mut().for_each(|v| *v = 0.0);
                }
                for m in state.mb.iter_mut().chain(state.vb.iter_mut()) {
                    m.iter_mut().for_each(|v| *v = 0.0);
                }
                state.step = 0;
            }
            penalty *= 0.5;
            if diverged && penalty < 1e-12 {
                return Err(MlpError::Diverged { epoch });
            }
        }
        if accepted {
            penalty = (penalty * 1.1).min(1.0);
        } else {
            // Retries exhausted: keep the previous parameters (no-op epoch).
            train_hist.push(prev_loss);
            val_hist.push(*val_hist.last().expect("seeded"));
        }
    }

    let val_preds: Vec<f64> =
        val_idx.iter().map(|&i| forward_infallible(&state.params, &dataset.features[i])).collect();
    let val_labels: Vec<f64> = val_idx.iter().map(|&i| dataset.labels[i]).collect();
    let metrics = metrics(&val_preds, &val_labels)?;

    Ok(TrainOutcome { params: state.params, metrics, train_loss: train_hist, val_loss: val_hist })
}

fn forward_infallible(params: &MlpParams, x: &[f64]) -> f64 {
    forward(params, x).expect("dataset feature length matches network")
}

/// One pass of seeded minibatch Adam.
fn run_epoch(
    state: &mut TrainState,
    dataset: &Dataset,
    train_idx: &[usize],
    batch_size: usize,
    lr: f64,
) {
    let mut idx = train_idx.to_vec();
    for i in (1..idx.len()).rev() {
        let j = state.rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let nl = state.params.weights.len();

    for batch in idx.chunks(batch_size.max(1)) {
        // Accumulate gradients over the batch.
        let mut gw: Vec<Vec<f64>> = state.m.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut gb: Vec<Vec<f64>> = state.mb.iter().map(|v| vec![0.0; v.len()]).collect();
        for &i in batch {
            backprop(
                &state.params,
                &dataset.features[i],
                dataset.labels[i],
                batch.len(),
                &mut gw,
                &mut gb,
            );
        }
        state.step += 1;
        let bc1 = 1.0 - beta1.powi(state.step as i32);
        let bc2 = 1.0 - beta2.powi(state.step as i32);
        for l in 0..nl {
            for (k, g) in gw[l].iter().enumerate() {
                let m = &mut state.m[l][k];
                let v = &mut state.v[l][k];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                state.params.weights[l][k] -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
            for (k, g) in gb[l].iter().enumerate() {
                let m = &mut state.mb[l][k];
                let v = &mut state.vb[l][k];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                state.params.biases[l][k] -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
    }
}

/// Accumulates dMSE/dparams for one sample into `gw`/`gb`.
/// MSE over the batch: sum (pred - label)^2 / batch_len.
pub(crate) fn backprop(
    params: &MlpParams,
    x: &[f64],
    label: f64,
    batch_len: usize,
    gw: &mut [Vec<f64>],
    gb: &mut [Vec<f64>],
) {
    let nl = params.weights.len();
    // Forward, keeping post-activation values per layer.
    let x_std = params.input_scaling.apply(x);
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(nl + 1);
    acts.push(x_std);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(nl);
    for l in 0..nl {
        let n_in = params.layer_sizes[l];
        let n_out = params.layer_sizes[l + 1];
        let mut z = vec![0.0; n_out];
        for r in 0..n_out {
            let row = &params.weights[l][r * n_in..(r + 1) * n_in];
            z[r] = params.biases[l][r]
                + row.iter().zip(&acts[l]).map(|(a, v)| a * v).sum::<f64>();
        }
        pre.push(z.clone());
        if l + 1 == nl {
            acts.push(z);
        } else {
            acts.push(z.into_iter().map(|v| v.max(0.0)).collect());
        }
    }

    let pred = acts[nl][0];
    // dLoss/dz for the output layer.
    let mut delta = vec![2.0 * (pred - label) / batch_len as f64];
    for l in (0..nl).rev() {
        let n_in = params.layer_sizes[l];
        let n_out = params.layer_sizes[l + 1];
        for r in 0..n_out {
            gb[l][r] += delta[r];
            let grow = &mut gw[l][r * n_in..(r + 1) * n_in];
            for (g, v) in grow.iter_mut().zip(&acts[l]) {
                *g += delta[r] * v;
            }
        }
        if l == 0 {
            break;
        }
        let mut next = vec![0.0; n_in];
        for (c, nx) in next.iter_mut().enumerate() {
            let mut s = 0.0;
            for r in 0..n_out {
                s += delta[r] * params.weights[l][r * n_in + c];
            }
            // ReLU gate of the previous layer's pre-activation.
            *nx = if pre[l - 1][c] > 0.0 { s } else { 0.0 };
        }
        delta = next;
    }
}

// --------------------------------------------------------- weights file

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFile {
    pub layer_sizes: Vec<usize>,
    /// Row-major weight matrices, one per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_scaling: InputScaling,
    pub training_config: TrainConfig,
    pub dataset_rows: usize,
    pub validation: Metrics,
}

/// Writes folded parameters (identity scaling over raw features) plus the
/// training-config fingerprint.
pub fn write_weights(
    params: &MlpParams,
    config: &TrainConfig,
    dataset_rows: usize,
    validation: Metrics,
    path: impl AsRef<Path>,
) -> Result<(), MlpError> {
    let folded = params.fold_scaling();
    let file = WeightsFile {
        layer_sizes: folded.layer_sizes.clone(),
        weights: folded.weights.clone(),
        biases: folded.biases.clone(),
        input_scaling: folded.input_scaling.clone(),
        training_config: config.clone(),
        dataset_rows,
        validation,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| MlpError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<WeightsFile, MlpError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| MlpError::Parse(e.to_string()))
}

impl WeightsFile {
    pub fn params(&self) -> MlpParams {
        MlpParams {
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            input_scaling: self.input_scaling.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_follow_the_definition() {
        let fv = build_features(&[true, true, false], &[100.0, 200.0, 0.0]).unwrap();
        assert_eq!(fv.flat(), vec![1.0, 1.0, 0.0, 0.0, 200.0, 0.0, 100.0, 200.0, 0.0]);
    }

    #[test]
    fn features_all_offline_all_zero() {
        let fv = build_features(&[false, false], &[0.0, 0.0]).unwrap();
        assert_eq!(fv.flat(), vec![0.0; 6]);
    }

    #[test]
    fn features_tie_takes_lowest_index() {
        let fv = build_features(&[true, true, false], &[150.0, 150.0, 0.0]).unwrap();
        assert_eq!(fv.omega, vec![150.0, 0.0, 0.0]);
    }

    #[test]
    fn offline_dispatch_rejected() {
        assert!(build_features(&[false, true], &[5.0, 10.0]).is_err());
    }

    #[test]
    fn forward_zero_weights_returns_output_bias() {
        let p = MlpParams {
            layer_sizes: vec![4, 3, 1],
            weights: vec![vec![0.0; 12], vec![0.0; 3]],
            biases: vec![vec![0.0; 3], vec![0.3]],
            input_scaling: InputScaling::identity(4),
        };
        for x in [[0.0, 0.0, 0.0, 0.0], [1.0, -2.0, 3.0, 4.0]] {
            assert_eq!(forward(&p, &x).unwrap(), 0.3);
        }
    }

    #[test]
    fn forward_single_relu_neuron() {
        let p = MlpParams {
            layer_sizes: vec![2, 1, 1],
            weights: vec![vec![1.0, 1.0], vec![1.0]],
            biases: vec![vec![0.0], vec![0.0]],
            input_scaling: InputScaling::identity(2),
        };
        assert_eq!(forward(&p, &[-3.0, 1.0]).unwrap(), 0.0);
        assert_eq!(forward(&p, &[1.5, 0.5]).unwrap(), 2.0);
    }

    #[test]
    fn forward_dimension_mismatch_rejected() {
        let p = MlpParams {
            layer_sizes: vec![2, 1, 1],
            weights: vec![vec![1.0, 1.0], vec![1.0]],
            biases: vec![vec![0.0], vec![0.0]],
            input_scaling: InputScaling::identity(2),
        };
        assert!(forward(&p, &[1.0]).is_err());
    }

    /// Straight-line re-implementation used as an independent oracle.
    fn forward_reference(p: &MlpParams, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| (v - p.input_scaling.offset[i]) / p.input_scaling.scale[i])
            .collect();
        for l in 0..p.weights.len() {
            let n_in = p.layer_sizes[l];
            let n_out = p.layer_sizes[l + 1];
            let mut next = vec![0.0; n_out];
            for (r, nx) in next.iter_mut().enumerate() {
                let mut s = p.biases[l][r];
                for (c, av) in a.iter().enumerate() {
                    s += p.weights[l][r * n_in + c] * av;
                }
                *nx = s;
            }
            if l + 1 < p.weights.len() {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            a = next;
        }
        a[0]
    }

    fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize]) -> MlpParams {
        let weights: Vec<Vec<f64>> = (0..sizes.len() - 1)
            .map(|l| (0..sizes[l] * sizes[l + 1]).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let biases: Vec<Vec<f64>> = (0..sizes.len() - 1)
            .map(|l| (0..sizes[l + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        MlpParams {
            layer_sizes: sizes.to_vec(),
            weights,
            biases,
            input_scaling: InputScaling::identity(sizes[0]),
        }
    }

    #[test]
    fn forward_matches_independent_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_net(&mut rng, &[6, 10, 10, 10, 1]);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = forward(&p, &x).unwrap();
            let b = forward_reference(&p, &x);
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_fold_is_exact_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_net(&mut rng, &[5, 10, 10, 1]);
        p.input_scaling = InputScaling {
            offset: (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            scale: (0..5).map(|_| rng.gen_range(0.5..3.0)).collect(),
        };
        let folded = p.fold_scaling();
        assert!(folded.input_scaling.is_identity());
        for _ in 0..1000 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let a = forward(&p, &x).unwrap();
            let b = forward(&folded, &x).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn metrics_identity_and_mean_predictor() {
        let labels = [1.0, 2.0, 3.0, 4.0];
        let m = metrics(&labels, &labels).unwrap();
        assert_eq!(m.r2, 1.0);
        assert_eq!(m.mean_abs_err, 0.0);
        assert_eq!(m.median_abs_err, 0.0);

        let mean = [2.5; 4];
        let m = metrics(&mean, &labels).unwrap();
        assert!(m.r2.abs() < 1e-12);
    }

    #[test]
    fn metrics_hand_computed_example() {
        let m = metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((m.mean_abs_err - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.median_abs_err, 0.0);
        assert!((m.r2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn metrics_length_mismatch_rejected() {
        assert!(metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn synthetic_linear_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::default();
        for i in 0..n {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0)).collect();
            let label = 0.4 + 0.3 * x[0] + 0.2 * x[1] - 0.1 * x[2] + 0.05 * x[4] + 1.0;
            ds.push(x, label, Provenance { variant: "synthetic".into(), seed: i as u64 });
        }
        ds
    }

    #[test]
    fn train_recovers_linear_function() {
        let ds = synthetic_linear_dataset(400, 3);
        let config = TrainConfig {
            hidden_layers: 1,
            hidden_width: 8,
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 9,
            split_fraction: 0.8,
        };
        let out = train(&ds, &config).unwrap();
        assert!(out.metrics.r2 >= 0.999, "r2 = {}", out.metrics.r2);
    }

    #[test]
    fn train_constant_labels_degenerate_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ds = Dataset::default();
        for i in 0..120 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            ds.push(x, 0.7, Provenance { variant: "const".into(), seed: i });
        }
        let config = TrainConfig {
            hidden_layers: 1,
            hidden_width: 4,
            epochs: 500,
            learning_rate: 1e-2,
            batch_size: 16,
            seed: 2,
            split_fraction: 0.8,
        };
        let out = train(&ds, &config).unwrap();
        assert_eq!(out.metrics.r2, 0.0, "constant-label guard returns 0");
        assert!(out.metrics.mean_abs_err < 1e-2, "mean abs err {}", out.metrics.mean_abs_err);
        assert!(out.metrics.median_abs_err < 1e-2);
    }

    #[test]
    fn training_loss_non_increasing() {
        let ds = synthetic_linear_dataset(200, 8);
        let config = TrainConfig {
            hidden_layers: 2,
            hidden_width: 6,
            epochs: 60,
            learning_rate: 3e-2,
            batch_size: 16,
            seed: 5,
            split_fraction: 0.8,
        };
        let out = train(&ds, &config).unwrap();
        for w in out.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn train_is_deterministic_per_seed() {
        let ds = synthetic_linear_dataset(150, 2);
        let config = TrainConfig { epochs: 20, ..Default::default() };
        let a = train(&ds, &config).unwrap();
        let b = train(&ds, &config).unwrap();
        assert_eq!(a.params.weights, b.params.weights);
        assert_eq!(a.metrics.r2, b.metrics.r2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_net(&mut rng, &[4, 6, 5, 1]);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let label = 0.37;

        let mut gw: Vec<Vec<f64>> = p.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = p.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        backprop(&p, &x, label, 1, &mut gw, &mut gb);

        let loss = |p: &MlpParams| {
            let d = forward(p, &x).unwrap() - label;
            d * d
        };
        let h = 1e-5;
        for l in 0..p.weights.len() {
            for k in 0..p.weights[l].len() {
                let mut hi = p.clone();
                hi.weights[l][k] += h;
                let mut lo = p.clone();
                lo.weights[l][k] -= h;
                let fd = (loss(&hi) - loss(&lo)) / (2.0 * h);
                let g = gw[l][k];
                let denom = fd.abs().max(g.abs()).max(1e-8);
                assert!(
                    (fd - g).abs() / denom < 1e-4,
                    "layer {l} weight {k}: fd {fd} vs analytic {g}"
                );
            }
            for k in 0..p.biases[l].len() {
                let mut hi = p.clone();
                hi.biases[l][k] += h;
                let mut lo = p.clone();
                lo.biases[l][k] -= h;
                let fd = (loss(&hi) - loss(&lo)) / (2.0 * h);
                let g = gb[l][k];
                let denom = fd.abs().max(g.abs()).max(1e-8);
                assert!(
                    (fd - g).abs() / denom < 1e-4,
                    "layer {l} bias {k}: fd {fd} vs analytic {g}"
                );
            }
        }
    }

    #[test]
    fn zero_weight_net_output_bias_gradient() {
        // With all weights zero, dMSE/d(output bias) = 2 * mean(pred - label).
        let p = MlpParams {
            layer_sizes: vec![2, 3, 1],
            weights: vec![vec![0.0; 6], vec![0.0; 3]],
            biases: vec![vec![0.0; 3], vec![0.5]],
            input_scaling: InputScaling::identity(2),
        };
        let xs = [[1.0, 2.0], [0.0, -1.0]];
        let labels = [0.2, 0.9];
        let mut gw: Vec<Vec<f64>> = p.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = p.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        for (x, l) in xs.iter().zip(&labels) {
            backprop(&p, x, *l, xs.len(), &mut gw, &mut gb);
        }
        let preds: Vec<f64> = xs.iter().map(|x| forward(&p, x).unwrap()).collect();
        let expected =
            2.0 * preds.iter().zip(&labels).map(|(p, l)| p - l).sum::<f64>() / xs.len() as f64;
        assert!((gb[1][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn dataset_round_trips_with_provenance() {
        let dir = std::env::temp_dir().join("rcuc_mlp_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        let mut ds = Dataset::default();
        ds.push(
            vec![1.0, 0.0, 0.5, 0.0, 0.25, 0.125],
            0.75,
            Provenance { variant: "tscuc".into(), seed: 7 },
        );
        ds.push(
            vec![0.0, 1.0, 0.0, 0.5, 0.5, 0.0],
            1.5,
            Provenance { variant: "ercuc".into(), seed: 8 },
        );
        ds.write(&path).unwrap();
        let back = Dataset::read(&path).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.provenance, ds.provenance);
    }
}
