//! Two-head classifier over pre-extracted feature vectors.
//!
//! A shared affine layer with a rectifier feeds a category head and a
//! cluster head. The training objective is the λ-weighted sum of both
//! heads' cross-entropies, summed over the batch; parameters are fitted by
//! mini-batch gradient descent with a step-decay learning rate.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::Hierarchy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn uniform(input: usize, output: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let weight = Array2::from_shape_simple_fn((output, input), || rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// `x Wᵀ + b` for a batch of row vectors.
    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct AffineRepr {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Serialize for Affine {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AffineRepr {
            weight: self.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
            bias: self.bias.to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Affine {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = AffineRepr::deserialize(d)?;
        let rows = repr.weight.len();
        let cols = repr.weight.first().map_or(0, Vec::len);
        if repr.weight.iter().any(|r| r.len() != cols) || repr.bias.len() != rows {
            return Err(serde::de::Error::custom("ragged affine parameters"));
        }
        let flat: Vec<f64> = repr.weight.into_iter().flatten().collect();
        let weight = Array2::from_shape_vec((rows, cols), flat).map_err(serde::de::Error::custom)?;
        Ok(Affine {
            weight,
            bias: Array1::from(repr.bias),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedActivation {
    #[default]
    Relu,
    /// Purely affine sharing, for ablations.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskModel {
    pub shared: Affine,
    pub category_head: Affine,
    pub cluster_head: Affine,
    pub activation: SharedActivation,
}

/// Same shapes as the model.
pub type Gradients = MultiTaskModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
}

impl MultiTaskModel {
    /// He-uniform shared layer, Glorot-uniform heads, zero biases.
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        if dims.d == 0 || dims.h == 0 || dims.k == 0 || dims.m == 0 {
            return Err(Error::Shape(format!("all model dimensions must be positive, got {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = Affine::uniform(dims.d, dims.h, (6.0 / dims.d as f64).sqrt(), &mut rng);
        let head = |out: usize, rng: &mut ChaCha8Rng| {
            Affine::uniform(dims.h, out, (6.0 / (dims.h + out) as f64).sqrt(), rng)
        };
        let category_head = head(dims.k, &mut rng);
        let cluster_head = head(dims.m, &mut rng);
        Ok(Self {
            shared,
            category_head,
            cluster_head,
            activation: SharedActivation::Relu,
        })
    }

    /// Shared layer fixed to the identity map (`h = d`) with no rectifier.
    pub fn with_identity_shared(d: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        let mut model = Self::new(Dims { d, h: d, k, m }, seed)?;
        model.shared.weight = Array2::eye(d);
        model.activation = SharedActivation::Identity;
        Ok(model)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d: self.shared.inputs(),
            h: self.shared.outputs(),
            k: self.category_head.outputs(),
            m: self.cluster_head.outputs(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let dims = self.dims();
        Self {
            shared: Affine::zeros(dims.d, dims.h),
            category_head: Affine::zeros(dims.h, dims.k),
            cluster_head: Affine::zeros(dims.h, dims.m),
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if self.shared.bias.len() != dims.h
            || self.category_head.inputs() != dims.h
            || self.cluster_head.inputs() != dims.h
            || self.category_head.bias.len() != dims.k
            || self.cluster_head.bias.len() != dims.m
        {
            return Err(Error::Shape(format!("inconsistent model dimensions {dims:?}")));
        }
        if ![&self.shared, &self.category_head, &self.cluster_head].iter().all(|a| a.is_finite()) {
            return Err(Error::Numeric("model has non-finite parameters".into()));
        }
        Ok(())
    }

    fn layers(&self) -> [&Affine; 3] {
        [&self.shared, &self.category_head, &self.cluster_head]
    }

    fn layers_mut(&mut self) -> [&mut Affine; 3] {
        [&mut self.shared, &mut self.category_head, &mut self.cluster_head]
    }

    /// All parameters in a fixed order: shared W, b, category W, b, cluster W, b.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers()
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!("{} values for {total} parameters", flat.len())));
        }
        let mut it = flat.iter();
        for l in self.layers_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Folds `x ↦ (x - mean) / scale` into the shared layer, so the model
    /// can consume raw features after training on standardized ones.
    pub fn fold_input_standardization(&mut self, mean: &[f64], scale: &[f64]) -> Result<()> {
        let d = self.shared.inputs();
        if mean.len() != d || scale.len() != d || scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Shape("standardization must match the input dimension".into()));
        }
        for (j, mut col) in self.shared.weight.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|w| w / scale[j]);
        }
        let shift = self.shared.weight.dot(&Array1::from(mean.to_vec()));
        self.shared.bias -= &shift;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub category: usize,
    pub cluster: usize,
}

/// Loss weights for the category and cluster heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub category: f64,
    pub cluster: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            category: 1.0,
            cluster: 1.0,
        }
    }
}

impl TaskWeights {
    pub fn new(category: f64, cluster: f64) -> Self {
        Self { category, cluster }
    }

    fn validate(&self) -> Result<()> {
        if !(self.category >= 0.0 && self.cluster >= 0.0)
            || !(self.category.is_finite() && self.cluster.is_finite())
        {
            return Err(Error::Config("task weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

struct Forward {
    pre: Array2<f64>,
    hidden: Array2<f64>,
    category_logits: Array2<f64>,
    cluster_logits: Array2<f64>,
}

fn batch_matrix(model: &MultiTaskModel, batch: &[LabeledSample]) -> Result<Array2<f64>> {
    let dims = model.dims();
    if batch.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut x = Array2::zeros((batch.len(), dims.d));
    for (i, s) in batch.iter().enumerate() {
        if s.features.len() != dims.d {
            return Err(Error::Shape(format!(
                "sample {i} has {} features, model expects {}",
                s.features.len(),
                dims.d
            )));
        }
        if s.category >= dims.k || s.cluster >= dims.m {
            return Err(Error::Shape(format!(
                "sample {i} labels ({}, {}) out of range ({}, {})",
                s.category, s.cluster, dims.k, dims.m
            )));
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&s.features));
    }
    Ok(x)
}

fn forward(model: &MultiTaskModel, x: &Array2<f64>) -> Result<Forward> {
    let pre = model.shared.forward(x);
    let hidden = match model.activation {
        SharedActivation::Relu => pre.mapv(|v| v.max(0.0)),
        SharedActivation::Identity => pre.clone(),
    };
    let category_logits = model.category_head.forward(&hidden);
    let cluster_logits = model.cluster_head.forward(&hidden);
    for (name, logits) in [("category", &category_logits), ("cluster", &cluster_logits)] {
        if let Some((pos, v)) = logits.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite {name} logit {v} at sample {}, class {}",
                pos.0, pos.1
            )));
        }
    }
    Ok(Forward {
        pre,
        hidden,
        category_logits,
        cluster_logits,
    })
}

/// Row-wise log-softmax with the row maximum subtracted first.
fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn head_nll(log_probs: &Array2<f64>, labels: impl Iterator<Item = usize>) -> f64 {
    labels
        .enumerate()
        .map(|(i, y)| -log_probs[[i, y]])
        .sum()
}

/// `Σ_t λ_t Σ_i −log p(y_i^(t) | x_i)`.
pub fn multitask_loss(model: &MultiTaskModel, batch: &[LabeledSample], weights: TaskWeights) -> Result<f64> {
    weights.validate()?;
    let x = batch_matrix(model, batch)?;
    let f = forward(model, &x)?;
    let c = head_nll(&log_softmax(&f.category_logits), batch.iter().map(|s| s.category));
    let m = head_nll(&log_softmax(&f.cluster_logits), batch.iter().map(|s| s.cluster));
    Ok(weights.category * c + weights.cluster * m)
}

/// Analytic gradient of [`multitask_loss`] with respect to every parameter.
pub fn loss_gradient(model: &MultiTaskModel, batch: &[LabeledSample], weights: TaskWeights) -> Result<Gradients> {
    weights.validate()?;
    let x = batch_matrix(model, batch)?;
    let f = forward(model, &x)?;

    // dL/dlogits = λ (softmax - onehot)
    let head_delta = |logits: &Array2<f64>, labels: &mut dyn Iterator<Item = usize>, lambda: f64| {
        let mut delta = log_softmax(logits).mapv(f64::exp);
        for (i, y) in labels.enumerate() {
            delta[[i, y]] -= 1.0;
        }
        delta * lambda
    };
    let d_cat = head_delta(&f.category_logits, &mut batch.iter().map(|s| s.category), weights.category);
    let d_clu = head_delta(&f.cluster_logits, &mut batch.iter().map(|s| s.cluster), weights.cluster);

    let mut grads = model.zeros_like();
    grads.category_head.weight = d_cat.t().dot(&f.hidden);
    grads.category_head.bias = d_cat.sum_axis(Axis(0));
    grads.cluster_head.weight = d_clu.t().dot(&f.hidden);
    grads.cluster_head.bias = d_clu.sum_axis(Axis(0));

    let mut d_hidden = d_cat.dot(&model.category_head.weight) + d_clu.dot(&model.cluster_head.weight);
    if model.activation == SharedActivation::Relu {
        d_hidden.zip_mut_with(&f.pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
    }
    grads.shared.weight = d_hidden.t().dot(&x);
    grads.shared.bias = d_hidden.sum_axis(Axis(0));
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub category: usize,
    pub cluster: usize,
}

/// First index of the maximum.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn predict(model: &MultiTaskModel, features: &[f64]) -> Result<Prediction> {
    let d = model.dims().d;
    if features.len() != d {
        return Err(Error::Shape(format!("{} features, model expects {d}", features.len())));
    }
    let x = Array2::from_shape_vec((1, d), features.to_vec()).expect("shape checked");
    let f = forward(model, &x)?;
    Ok(Prediction {
        category: argmax(f.category_logits.row(0).iter().copied()),
        cluster: argmax(f.cluster_logits.row(0).iter().copied()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub weights: TaskWeights,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_interval` epochs (0.5 halves the rate).
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            weights: TaskWeights::default(),
            learning_rate: 0.5,
            decay_factor: 0.5,
            decay_interval: 10,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay factor must be in (0, 1]".into()));
        }
        if self.decay_interval == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, batch size and decay interval must be positive".into()));
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_interval) as i32)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MultiTaskModel,
    /// Mean per-sample training loss after each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch gradient descent on the mean batch loss under the step-decay
/// schedule. Shuffling is driven by `config.seed`.
pub fn train(model: MultiTaskModel, data: &[LabeledSample], config: &TrainingConfig) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::Degenerate("no training samples".into()));
    }
    // labels and shapes are checked once up front
    batch_matrix(&model, data)?;

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        let rate = config.rate_at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let grads = match loss_gradient(&model, &batch, config.weights) {
                Ok(g) => g,
                Err(Error::Numeric(_)) => return Err(Error::Training { epoch, trace }),
                Err(e) => return Err(e),
            };
            let step = rate / batch.len() as f64;
            for (p, g) in model.layers_mut().into_iter().zip(grads.layers()) {
                p.weight.scaled_add(-step, &g.weight);
                p.bias.scaled_add(-step, &g.bias);
            }
        }
        let loss = match multitask_loss(&model, data, config.weights) {
            Ok(l) => l / data.len() as f64,
            Err(Error::Numeric(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        trace.push(loss);
        if !loss.is_finite() {
            return Err(Error::Training { epoch, trace });
        }
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

/// Category → dense cluster index, following the hierarchy's cluster order.
pub fn derive_cluster_labels(hierarchy: &Hierarchy, categories: &[String]) -> Result<BTreeMap<String, usize>> {
    let of = hierarchy.cluster_of();
    categories
        .iter()
        .map(|c| {
            of.get(c.as_str())
                .map(|&ci| (c.clone(), ci))
                .ok_or_else(|| Error::Consistency(format!("category `{c}` is missing from the hierarchy")))
        })
        .collect()
}

/// Per-dimension mean and (population) scale of a sample set, scale floored
/// at 1e-12.
pub fn standardization(samples: &[LabeledSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = samples.first() else {
        return Err(Error::Degenerate("no samples".into()));
    };
    let d = first.features.len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for s in samples {
        for ((acc, v), m) in scale.iter_mut().zip(&s.features).zip(&mean) {
            *acc += (v - m).powi(2) / n;
        }
    }
    scale.iter_mut().for_each(|v| *v = v.sqrt().max(1e-12));
    Ok((mean, scale))
}

pub fn standardize(samples: &[LabeledSample], mean: &[f64], scale: &[f64]) -> Vec<LabeledSample> {
    samples
        .iter()
        .map(|s| LabeledSample {
            features: s
                .features
                .iter()
                .zip(mean.iter().zip(scale))
                .map(|(v, (m, c))| (v - m) / c)
                .collect(),
            ..s.clone()
        })
        .collect()
}

/// Per-label seeded split: each label contributes `round(n · fraction)` of
/// its samples to the test side, keeping at least one for training.
/// Returns sorted (train, test) indices.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction must be in [0, 1), got {test_fraction}")));
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_label.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_label {
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).min(idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Trains on standardized inputs and folds the standardization back into
/// the shared layer, so the returned model takes raw features.
pub fn fit(
    dims: Dims,
    identity_shared: bool,
    data: &[LabeledSample],
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    let (mean, scale) = standardization(data)?;
    let scaled = standardize(data, &mean, &scale);
    let model = if identity_shared {
        MultiTaskModel::with_identity_shared(dims.d, dims.k, dims.m, config.seed)?
    } else {
        MultiTaskModel::new(dims, config.seed)?
    };
    let mut out = train(model, &scaled, config)?;
    out.model.fold_input_standardization(&mean, &scale)?;
    Ok(out)
}

/// Serialized model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: Dims,
    pub w0: Affine,
    pub w1: Affine,
    pub w2: Affine,
    pub activation: SharedActivation,
    pub config: TrainingConfig,
    pub seed: u64,
    /// Category labels in head-1 output order.
    pub categories: Vec<String>,
}

impl Checkpoint {
    pub fn new(model: &MultiTaskModel, config: &TrainingConfig, categories: Vec<String>) -> Self {
        Self {
            dims: model.dims(),
            w0: model.shared.clone(),
            w1: model.category_head.clone(),
            w2: model.cluster_head.clone(),
            activation: model.activation,
            config: config.clone(),
            seed: config.seed,
            categories,
        }
    }

    pub fn model(&self) -> Result<MultiTaskModel> {
        let model = MultiTaskModel {
            shared: self.w0.clone(),
            category_head: self.w1.clone(),
            cluster_head: self.w2.clone(),
            activation: self.activation,
        };
        model.validate()?;
        if model.dims() != self.dims {
            return Err(Error::Shape("checkpoint dims disagree with its parameters".into()));
        }
        Ok(model)
    }
}
