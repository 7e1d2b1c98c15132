//! The bidirectional relation network: channel-pair rearrangement, a shared
//! 3D-CNN encoder applied to both support and query epochs, per-class
//! prototypes and a relation head that scores every (prototype, query) pair.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Condition, Direction, EpochSet};
use crate::rng::{derive_seed, seeded, tag_hash, ChaCha8Rng};
use crate::tensor::{Conv3dLayer, DenseLayer, Graph, LossKind, Sgd, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("epoch is empty")]
    EmptyEpoch,
    #[error("epochs are {actual:?} (channels, samples) but the model expects {expected:?}")]
    InputShape {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("class {class} has {available} epochs, {needed} needed")]
    InsufficientEpochs {
        class: Direction,
        available: usize,
        needed: usize,
    },
    #[error("no prototype features for a class")]
    EmptyPrototype,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(&'static str),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(&'static str),
    #[error("expected {expected} parameter values, got {actual}")]
    ParameterCount { expected: usize, actual: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = core::result::Result<T, ModelError>;

/// How an epoch becomes a channel × channel × time volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Cell `(i, j, t)` holds `x_i(t)·x_j(t)`.
    #[default]
    PairProduct,
    /// Cell `(i, j, t)` holds `x_j(t)`: every row of the grid repeats the epoch.
    Tiled,
}

/// Conv3D → ReLU → AvgPool3D, pool stride equal to its window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub padding: [usize; 3],
    pub pool: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub layout: Layout,
    /// Fixed averaging window along time applied to the rearranged volume,
    /// giving short-time channel-pair products.
    pub time_pool: usize,
    /// Divide each volume by its mean diagonal so epochs share a scale.
    pub normalize_input: bool,
    /// Z-score every input cell with statistics of the training inputs.
    pub standardize: bool,
    pub encoder: Vec<ConvBlock>,
    pub relation: Vec<ConvBlock>,
    pub hidden: usize,
}

impl Default for Architecture {
    /// For 24 channels × 750 samples: input (1, 24, 24, 10) after the time
    /// pool, features (8, 24, 24, 1), relation map (4, 12, 12, 1).
    fn default() -> Self {
        Self {
            layout: Layout::PairProduct,
            time_pool: 75,
            normalize_input: true,
            standardize: true,
            encoder: vec![
                ConvBlock {
                    out_channels: 4,
                    kernel: [1, 1, 3],
                    padding: [0, 0, 1],
                    pool: [1, 1, 2],
                },
                ConvBlock {
                    out_channels: 8,
                    kernel: [1, 1, 3],
                    padding: [0, 0, 1],
                    pool: [1, 1, 5],
                },
            ],
            relation: vec![ConvBlock {
                out_channels: 4,
                kernel: [1, 1, 1],
                padding: [0, 0, 0],
                pool: [2, 2, 1],
            }],
            hidden: 32,
        }
    }
}

impl Architecture {
    /// Full-resolution alternative with 3×3×7 valid convolutions. For 24
    /// channels × 750 samples: features (12, 4, 4, 45), relation map
    /// (8, 1, 1, 10).
    pub fn spatial_valid() -> Self {
        let block = |out_channels, kernel| ConvBlock {
            out_channels,
            kernel,
            padding: [0; 3],
            pool: [2, 2, 4],
        };
        Self {
            time_pool: 1,
            encoder: vec![block(6, [3, 3, 7]), block(12, [3, 3, 7])],
            relation: vec![block(8, [3, 3, 5])],
            hidden: 64,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub k_shot: usize,
    pub queries_per_class: usize,
    pub episodes_per_epoch: usize,
    pub n_training_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k_shot: 5,
            queries_per_class: 5,
            episodes_per_epoch: 80,
            n_training_epochs: 1,
            learning_rate: 0.05,
            momentum: 0.9,
            loss_kind: LossKind::CrossEntropy,
            seed: 7,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_shot == 0 {
            return Err(ModelError::InvalidHyperParams("k_shot must be at least 1"));
        }
        if self.queries_per_class == 0 {
            return Err(ModelError::InvalidHyperParams(
                "queries_per_class must be at least 1",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidHyperParams(
                "learning_rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ModelError::InvalidHyperParams(
                "momentum must lie in [0, 1)",
            ));
        }
        Ok(())
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes_per_epoch * self.n_training_epochs
    }
}

/// `(1, C, C, T)` with cell `(i, j, t) = x_i(t)·x_j(t)`.
pub fn rearrange_to_3d(epoch: &[Vec<f64>]) -> Result<Tensor> {
    rearrange(epoch, Layout::PairProduct)
}

pub fn rearrange(epoch: &[Vec<f64>], layout: Layout) -> Result<Tensor> {
    let (c, t) = epoch_dims(epoch)?;
    let mut data = vec![0.0; c * c * t];
    for i in 0..c {
        for j in 0..c {
            let cell = &mut data[(i * c + j) * t..(i * c + j + 1) * t];
            match layout {
                Layout::PairProduct => cell
                    .iter_mut()
                    .zip(epoch[i].iter().zip(&epoch[j]))
                    .for_each(|(o, (a, b))| *o = a * b),
                Layout::Tiled => cell.copy_from_slice(&epoch[j]),
            }
        }
    }
    Ok(Tensor::new(&[1, c, c, t], data)?)
}

fn epoch_dims(epoch: &[Vec<f64>]) -> Result<(usize, usize)> {
    let c = epoch.len();
    let t = epoch.first().map_or(0, Vec::len);
    if c == 0 || t == 0 {
        return Err(ModelError::EmptyEpoch);
    }
    if epoch.iter().any(|r| r.len() != t) {
        return Err(ModelError::EmptyEpoch);
    }
    Ok((c, t))
}

/// Extents after a valid conv (given padding) followed by a pool.
fn block_out(dims: [usize; 3], b: &ConvBlock) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let padded = dims[a] + 2 * b.padding[a];
        let conv = padded.checked_sub(b.kernel[a])? + 1;
        if b.pool[a] == 0 || conv < b.pool[a] {
            return None;
        }
        out[a] = (conv - b.pool[a]) / b.pool[a] + 1;
    }
    Some(out)
}

/// Shared encoder, relation head and their configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtrnModel {
    pub architecture: Architecture,
    pub hyper: HyperParams,
    pub n_channels: usize,
    pub n_samples: usize,
    pub encoder: Vec<Conv3dLayer>,
    pub relation: Vec<Conv3dLayer>,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
    /// Per-cell input statistics, set by [`train`] when the architecture
    /// standardises its input.
    pub input_stats: Option<InputStats>,
}

/// Mean and reciprocal standard deviation of every cell of the prepared input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl InputStats {
    /// Population statistics over equally shaped inputs. Constant cells get
    /// unit scale.
    pub fn fit(inputs: &[Tensor]) -> Result<Self> {
        let first = inputs.first().ok_or(ModelError::EmptyEpoch)?;
        let len = first.len();
        let n = inputs.len() as f64;
        let mut mean = vec![0.0; len];
        for t in inputs {
            for (m, v) in mean.iter_mut().zip(t.data()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; len];
        for t in inputs {
            for ((s, v), m) in var.iter_mut().zip(t.data()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv_std = var
            .iter()
            .map(|&v| if v > 0.0 { 1.0 / libm::sqrt(v) } else { 1.0 })
            .collect();
        Ok(Self { mean, inv_std })
    }

    pub fn apply(&self, t: &mut Tensor) -> Result<()> {
        if t.len() != self.mean.len() {
            return Err(ModelError::InvalidArchitecture(
                "input statistics do not match the input shape",
            ));
        }
        for ((v, m), k) in t.data_mut().iter_mut().zip(&self.mean).zip(&self.inv_std) {
            *v = (*v - m) * k;
        }
        Ok(())
    }
}

/// Per-class prototype features, in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub classes: Vec<Direction>,
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub truth: Direction,
    pub predicted: Direction,
    pub scores: Vec<f64>,
}

/// Epoch indices drawn for one episode. `support[k]` indexes the support
/// source set, `queries` index the MI set with their class positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodePlan {
    pub classes: Vec<Direction>,
    pub support_from_me: bool,
    pub support: Vec<Vec<usize>>,
    pub queries: Vec<(usize, usize)>,
}

/// An episode with every epoch passed through the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub plan: EpisodePlan,
    pub support: Vec<Vec<Tensor>>,
    pub queries: Vec<(Tensor, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

impl TrainingLog {
    /// Mean loss over the first and last `fraction` of episodes.
    pub fn head_tail_means(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.losses.len();
        let w = ((n as f64 * fraction) as usize).max(1);
        if n < 2 * w {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.losses[..w]), mean(&self.losses[n - w..])))
    }
}

impl BtrnModel {
    /// Builds a seeded, untrained model for epochs of `n_channels × n_samples`.
    pub fn new(
        architecture: Architecture,
        hyper: HyperParams,
        n_channels: usize,
        n_samples: usize,
    ) -> Result<Self> {
        hyper.validate()?;
        if architecture.encoder.is_empty() {
            return Err(ModelError::InvalidArchitecture(
                "encoder needs at least one block",
            ));
        }
        if architecture.time_pool == 0 || architecture.hidden == 0 {
            return Err(ModelError::InvalidArchitecture(
                "time_pool and hidden must be positive",
            ));
        }
        let mut rng = seeded(derive_seed(hyper.seed, &[tag_hash("init")]));
        let input = Self::input_dims(n_channels, n_samples, architecture.time_pool).ok_or(
            ModelError::InvalidArchitecture("time_pool exceeds epoch length"),
        )?;
        let mut dims = input;
        let mut ch = 1;
        let mut encoder = Vec::new();
        for b in &architecture.encoder {
            encoder.push(Conv3dLayer::init(
                ch,
                b.out_channels,
                b.kernel,
                [1; 3],
                b.padding,
                &mut rng,
            )?);
            dims = block_out(dims, b).ok_or(ModelError::InvalidArchitecture(
                "encoder shrinks an axis below 1",
            ))?;
            ch = b.out_channels;
        }
        ch *= 2;
        let mut relation = Vec::new();
        for b in &architecture.relation {
            relation.push(Conv3dLayer::init(
                ch,
                b.out_channels,
                b.kernel,
                [1; 3],
                b.padding,
                &mut rng,
            )?);
            dims = block_out(dims, b).ok_or(ModelError::InvalidArchitecture(
                "relation head shrinks an axis below 1",
            ))?;
            ch = b.out_channels;
        }
        let flat = ch * dims.iter().product::<usize>();
        let hidden = DenseLayer::init(flat, architecture.hidden, &mut rng)?;
        let output = DenseLayer::init(architecture.hidden, 1, &mut rng)?;
        Ok(Self {
            architecture,
            hyper,
            n_channels,
            n_samples,
            encoder,
            relation,
            hidden,
            output,
            input_stats: None,
        })
    }

    fn input_dims(c: usize, t: usize, pool: usize) -> Option<[usize; 3]> {
        (c > 0 && t >= pool).then(|| [c, c, t / pool])
    }

    /// Shape of one encoded feature map, `(channels, C', C', T')`.
    pub fn feature_shape(&self) -> [usize; 4] {
        let mut dims = [
            self.n_channels,
            self.n_channels,
            self.n_samples / self.architecture.time_pool,
        ];
        for b in &self.architecture.encoder {
            dims = block_out(dims, b).unwrap_or([0; 3]);
        }
        let ch = self
            .architecture
            .encoder
            .last()
            .map_or(0, |b| b.out_channels);
        [ch, dims[0], dims[1], dims[2]]
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for l in self.encoder.iter().chain(&self.relation) {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        for d in [&self.hidden, &self.output] {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for l in self.encoder.iter_mut().chain(self.relation.iter_mut()) {
            v.extend(l.params_mut());
        }
        v.extend(self.hidden.params_mut());
        v.extend(self.output.params_mut());
        v
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn load_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.n_parameters();
        if flat.len() != expected {
            return Err(ModelError::ParameterCount {
                expected,
                actual: flat.len(),
            });
        }
        let mut at = 0;
        for p in self.parameters_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    fn check_epoch(&self, epoch: &[Vec<f64>]) -> Result<()> {
        let actual = epoch_dims(epoch)?;
        if actual != (self.n_channels, self.n_samples) {
            return Err(ModelError::InputShape {
                expected: (self.n_channels, self.n_samples),
                actual,
            });
        }
        Ok(())
    }

    /// The encoder input for one epoch, `(1, 1, C, C, T / time_pool)`.
    /// Equals the rearranged volume average-pooled along time.
    pub fn prepare_input(&self, epoch: &[Vec<f64>]) -> Result<Tensor> {
        self.check_epoch(epoch)?;
        let (c, p) = (self.n_channels, self.architecture.time_pool);
        let t_out = self.n_samples / p;
        let mut data = vec![0.0; c * c * t_out];
        let scale = 1.0 / p as f64;
        for i in 0..c {
            for j in 0..c {
                let at = (i * c + j) * t_out;
                match self.architecture.layout {
                    Layout::PairProduct if j < i => {
                        let (done, rest) = data.split_at_mut(at);
                        let mirror = (j * c + i) * t_out;
                        rest[..t_out].copy_from_slice(&done[mirror..mirror + t_out]);
                    }
                    Layout::PairProduct => {
                        let (a, b) = (&epoch[i], &epoch[j]);
                        for k in 0..t_out {
                            let r = k * p..(k + 1) * p;
                            data[at + k] = dot(&a[r.clone()], &b[r]) * scale;
                        }
                    }
                    Layout::Tiled => {
                        for k in 0..t_out {
                            data[at + k] = epoch[j][k * p..(k + 1) * p].iter().sum::<f64>() * scale;
                        }
                    }
                }
            }
        }
        let mut t = Tensor::new(&[1, 1, c, c, t_out], data)?;
        if self.architecture.normalize_input {
            let scale = input_scale(&t, self.architecture.layout, c);
            t.data_mut().iter_mut().for_each(|v| *v /= scale);
        }
        if let Some(stats) = &self.input_stats {
            stats.apply(&mut t)?;
        }
        Ok(t)
    }

    fn bind_block(
        &self,
        g: &mut Graph,
        x: Var,
        layer: &Conv3dLayer,
        block: &ConvBlock,
        key: usize,
    ) -> Result<Var> {
        let w = g.param(key, &layer.weight);
        let b = g.param(key + 1, &layer.bias);
        let y = g.conv3d(x, w, b, layer.stride, layer.padding)?;
        let y = g.relu(y);
        Ok(g.avg_pool3d(y, block.pool, block.pool)?)
    }

    /// Encoder stack on a batch `(n, 1, C, C, T')`. Every call binds the same
    /// parameter keys, so all branches share one gradient.
    pub fn encoder_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, (layer, block)) in self
            .encoder
            .iter()
            .zip(&self.architecture.encoder)
            .enumerate()
        {
            h = self.bind_block(g, h, layer, block, 2 * i)?;
        }
        Ok(h)
    }

    /// Relation head on paired features `(n, 2·ch, …)` giving `(n, 1)` raw scores.
    pub fn relation_graph(&self, g: &mut Graph, pairs: Var) -> Result<Var> {
        let base = 2 * self.encoder.len();
        let mut h = pairs;
        for (i, (layer, block)) in self
            .relation
            .iter()
            .zip(&self.architecture.relation)
            .enumerate()
        {
            h = self.bind_block(g, h, layer, block, base + 2 * i)?;
        }
        let n = g.value(h).shape()[0];
        let flat = g.value(h).len() / n;
        let h = g.reshape(h, &[n, flat])?;
        let key = base + 2 * self.relation.len();
        let (w1, b1) = (
            g.param(key, &self.hidden.weight),
            g.param(key + 1, &self.hidden.bias),
        );
        let h = g.dense(h, w1, b1)?;
        let h = g.relu(h);
        let (w2, b2) = (
            g.param(key + 2, &self.output.weight),
            g.param(key + 3, &self.output.bias),
        );
        Ok(g.dense(h, w2, b2)?)
    }

    /// Softmax relation scores `(q, k)` for a batch of query features against
    /// `k` prototypes stacked as `(k, …)`.
    pub fn scores_graph(&self, g: &mut Graph, protos: Var, queries: Var) -> Result<Var> {
        let k = g.value(protos).shape()[0];
        let q = g.value(queries).shape()[0];
        let pairs = g.pair_concat(protos, queries)?;
        let raw = self.relation_graph(g, pairs)?;
        let raw = g.reshape(raw, &[q, k])?;
        Ok(g.softmax(raw)?)
    }

    fn encode_prepared(&self, inputs: &[&Tensor]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let x = g.input(stack(inputs)?);
        let f = self.encoder_graph(&mut g, x)?;
        let out = g.value(f);
        Ok(unstack(out))
    }

    /// Feature map of one rearranged `(1, C, C, T)` volume.
    pub fn encode(&self, input: &Tensor) -> Result<Tensor> {
        let s = input.shape();
        if s.len() != 4
            || s[0] != 1
            || s[1] != self.n_channels
            || s[2] != self.n_channels
            || s[3] != self.n_samples
        {
            return Err(ModelError::InputShape {
                expected: (self.n_channels, self.n_samples),
                actual: (
                    s.get(1).copied().unwrap_or(0),
                    s.get(3).copied().unwrap_or(0),
                ),
            });
        }
        let p = self.architecture.time_pool;
        let mut g = Graph::new();
        let x = g.input(input.clone().reshape(&[1, 1, s[1], s[2], s[3]])?);
        let x = g.avg_pool3d(x, [1, 1, p], [1, 1, p])?;
        let x = if self.architecture.normalize_input || self.input_stats.is_some() {
            let mut t = g.value(x).clone();
            if self.architecture.normalize_input {
                let scale = input_scale(&t, self.architecture.layout, self.n_channels);
                t.data_mut().iter_mut().for_each(|a| *a /= scale);
            }
            if let Some(stats) = &self.input_stats {
                stats.apply(&mut t)?;
            }
            g.input(t)
        } else {
            x
        };
        let f = self.encoder_graph(&mut g, x)?;
        Ok(unstack(g.value(f)).remove(0))
    }

    /// Rearranges and encodes an epoch.
    pub fn encode_epoch(&self, epoch: &[Vec<f64>]) -> Result<Tensor> {
        let x = self.prepare_input(epoch)?;
        Ok(self.encode_prepared(&[&x])?.remove(0))
    }

    /// Prototype-vs-query relation scores, one per prototype.
    pub fn relation_scores(&self, query: &Tensor, prototypes: &[Tensor]) -> Result<Tensor> {
        if prototypes.is_empty() {
            return Err(ModelError::EmptyPrototype);
        }
        let mut g = Graph::new();
        let p = g.input(stack(&prototypes.iter().collect::<Vec<_>>())?);
        let q = g.input(stack(&[query])?);
        let s = self.scores_graph(&mut g, p, q)?;
        let k = prototypes.len();
        Ok(Tensor::new(&[k], g.value(s).data().to_vec())?)
    }

    /// Mean feature over every epoch of each class in `classes`.
    pub fn prototypes(&self, set: &EpochSet, classes: &[Direction]) -> Result<Prototypes> {
        let mut features = Vec::with_capacity(classes.len());
        for &class in classes {
            let idx = set.indices_of(class);
            let encoded = idx
                .iter()
                .map(|&i| self.encode_epoch(&set.epochs[i].data))
                .collect::<Result<Vec<_>>>()?;
            features.push(prototype(&encoded)?);
        }
        Ok(Prototypes {
            classes: classes.to_vec(),
            features,
        })
    }

    /// Support set for prediction under `condition`: ME training epochs for
    /// Combined, MI training epochs for MiOnly.
    pub fn support_prototypes(
        &self,
        me_train: &EpochSet,
        mi_train: &EpochSet,
        condition: Condition,
    ) -> Result<Prototypes> {
        let classes = mi_train.class_order();
        match condition {
            Condition::Combined => self.prototypes(me_train, &classes),
            Condition::MiOnly => self.prototypes(mi_train, &classes),
        }
    }
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Scale used to normalise a prepared volume.
fn input_scale(v: &Tensor, layout: Layout, c: usize) -> f64 {
    let data = v.data();
    let t = data.len() / (c * c);
    let s = match layout {
        Layout::PairProduct => {
            (0..c)
                .map(|i| {
                    data[(i * c + i) * t..(i * c + i + 1) * t]
                        .iter()
                        .sum::<f64>()
                })
                .sum::<f64>()
                / (c * t) as f64
        }
        Layout::Tiled => libm::sqrt(data.iter().map(|a| a * a).sum::<f64>() / data.len() as f64),
    };
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Stacks equally shaped tensors along a new leading batch axis, dropping a
/// leading unit axis if present.
fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or(ModelError::EmptyPrototype)?;
    let inner: &[usize] = match first.shape() {
        [1, rest @ ..] if first.rank() == 5 => rest,
        s => s,
    };
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.len() != first.len() {
            return Err(TensorError::ShapeMismatch {
                axis: "stacked feature",
                expected: first.len(),
                actual: t.len(),
            }
            .into());
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(inner);
    Ok(Tensor::new(&shape, data)?)
}

fn unstack(t: &Tensor) -> Vec<Tensor> {
    let n = t.shape()[0];
    let inner = &t.shape()[1..];
    let len = t.len() / n;
    (0..n)
        .map(|i| Tensor::new(inner, t.data()[i * len..(i + 1) * len].to_vec()).expect("row shape"))
        .collect()
}

/// Elementwise mean of one class's features.
pub fn prototype(features: &[Tensor]) -> Result<Tensor> {
    let first = features.first().ok_or(ModelError::EmptyPrototype)?;
    let mut acc = vec![0.0; first.len()];
    for f in features {
        if f.shape() != first.shape() {
            return Err(TensorError::ShapeMismatch {
                axis: "prototype feature",
                expected: first.len(),
                actual: f.len(),
            }
            .into());
        }
        acc.iter_mut().zip(f.data()).for_each(|(a, v)| *a += v);
    }
    let n = features.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Tensor::new(first.shape(), acc)?)
}

/// Draws support and query indices. Combined takes support from ME epochs;
/// MiOnly takes support from MI epochs disjoint from that episode's queries.
pub fn sample_episode(
    me_train: &EpochSet,
    mi_train: &EpochSet,
    hp: &HyperParams,
    condition: Condition,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodePlan> {
    let classes = mi_train.class_order();
    let mut support = Vec::with_capacity(classes.len());
    let mut queries = Vec::new();
    for (k, &class) in classes.iter().enumerate() {
        let mut mi = mi_train.indices_of(class);
        match condition {
            Condition::Combined => {
                let mut me = me_train.indices_of(class);
                if me.len() < hp.k_shot {
                    return Err(ModelError::InsufficientEpochs {
                        class,
                        available: me.len(),
                        needed: hp.k_shot,
                    });
                }
                if mi.is_empty() {
                    return Err(ModelError::InsufficientEpochs {
                        class,
                        available: 0,
                        needed: 1,
                    });
                }
                me.shuffle(rng);
                mi.shuffle(rng);
                me.truncate(hp.k_shot);
                support.push(me);
                let nq = hp.queries_per_class.min(mi.len());
                queries.extend(mi[..nq].iter().map(|&i| (i, k)));
            }
            Condition::MiOnly => {
                if mi.len() < hp.k_shot + 1 {
                    return Err(ModelError::InsufficientEpochs {
                        class,
                        available: mi.len(),
                        needed: hp.k_shot + 1,
                    });
                }
                mi.shuffle(rng);
                let nq = hp.queries_per_class.min(mi.len() - hp.k_shot);
                support.push(mi[..hp.k_shot].to_vec());
                queries.extend(mi[hp.k_shot..hp.k_shot + nq].iter().map(|&i| (i, k)));
            }
        }
    }
    Ok(EpisodePlan {
        classes,
        support_from_me: condition == Condition::Combined,
        support,
        queries,
    })
}

/// Samples an episode and encodes all of its epochs.
pub fn build_episode(
    model: &BtrnModel,
    me_train: &EpochSet,
    mi_train: &EpochSet,
    hp: &HyperParams,
    condition: Condition,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let plan = sample_episode(me_train, mi_train, hp, condition, rng)?;
    let source = if plan.support_from_me {
        me_train
    } else {
        mi_train
    };
    let support = plan
        .support
        .iter()
        .map(|idx| {
            idx.iter()
                .map(|&i| model.encode_epoch(&source.epochs[i].data))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = plan
        .queries
        .iter()
        .map(|&(i, k)| Ok((model.encode_epoch(&mi_train.epochs[i].data)?, k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        plan,
        support,
        queries,
    })
}

/// Builds the graph for one episode from prepared inputs and returns the loss
/// node and the softmax score node.
pub fn episode_graph(
    model: &BtrnModel,
    g: &mut Graph,
    support_inputs: &[&Tensor],
    groups: &[Vec<usize>],
    query_inputs: &[&Tensor],
    labels: &[usize],
    loss_kind: LossKind,
) -> Result<(Var, Var)> {
    let s = g.input(stack(support_inputs)?);
    let fs = model.encoder_graph(g, s)?;
    let q = g.input(stack(query_inputs)?);
    let fq = model.encoder_graph(g, q)?;
    let protos = g.mean_groups(fs, groups)?;
    let scores = model.scores_graph(g, protos, fq)?;
    let loss = g.loss(loss_kind, scores, labels)?;
    Ok((loss, scores))
}

/// Episodic SGD. Returns the loss of every episode.
pub fn train(
    model: &mut BtrnModel,
    me_train: &EpochSet,
    mi_train: &EpochSet,
    hp: &HyperParams,
    condition: Condition,
) -> Result<TrainingLog> {
    hp.validate()?;
    model.hyper = hp.clone();
    let prepare = |set: &EpochSet, model: &BtrnModel| {
        set.epochs
            .iter()
            .map(|e| model.prepare_input(&e.data))
            .collect::<Result<Vec<_>>>()
    };
    model.input_stats = None;
    let mut mi_inputs = prepare(mi_train, model)?;
    let mut me_inputs = match condition {
        Condition::Combined => prepare(me_train, model)?,
        Condition::MiOnly => Vec::new(),
    };
    if model.architecture.standardize {
        let all: Vec<Tensor> = mi_inputs.iter().chain(&me_inputs).cloned().collect();
        let stats = InputStats::fit(&all)?;
        for t in mi_inputs.iter_mut().chain(me_inputs.iter_mut()) {
            stats.apply(t)?;
        }
        model.input_stats = Some(stats);
    }
    let mut rng = seeded(derive_seed(hp.seed, &[tag_hash("episodes")]));
    let mut opt = Sgd::new(hp.learning_rate, hp.momentum)?;
    let mut log = TrainingLog::default();
    for _ in 0..hp.n_episodes() {
        let plan = sample_episode(me_train, mi_train, hp, condition, &mut rng)?;
        let source = if plan.support_from_me {
            &me_inputs
        } else {
            &mi_inputs
        };
        let mut support = Vec::new();
        let mut groups = Vec::new();
        for idx in &plan.support {
            let start = support.len();
            support.extend(idx.iter().map(|&i| &source[i]));
            groups.push((start..support.len()).collect());
        }
        let queries: Vec<&Tensor> = plan.queries.iter().map(|&(i, _)| &mi_inputs[i]).collect();
        let labels: Vec<usize> = plan.queries.iter().map(|&(_, k)| k).collect();
        let mut g = Graph::new();
        let (loss, _) = episode_graph(
            model,
            &mut g,
            &support,
            &groups,
            &queries,
            &labels,
            hp.loss_kind,
        )?;
        log.losses.push(g.value(loss).data()[0]);
        g.backward(loss)?;
        let mut params = model.parameters_mut();
        g.write_param_grads(&mut params)?;
        opt.step(&mut params)?;
    }
    Ok(log)
}

/// Scores every test epoch against the prototypes; ties go to the lowest
/// class index.
pub fn predict(
    model: &BtrnModel,
    mi_test: &EpochSet,
    prototypes: &Prototypes,
) -> Result<Vec<Prediction>> {
    if mi_test.is_empty() {
        return Err(ModelError::EmptyTestSet);
    }
    if prototypes.features.is_empty() {
        return Err(ModelError::EmptyPrototype);
    }
    let protos_t = stack(&prototypes.features.iter().collect::<Vec<_>>())?;
    let mut out = Vec::with_capacity(mi_test.len());
    for e in &mi_test.epochs {
        let x = model.prepare_input(&e.data)?;
        let mut g = Graph::new();
        let xi = g.input(stack(&[&x])?);
        let fq = model.encoder_graph(&mut g, xi)?;
        let p = g.input(protos_t.clone());
        let s = model.scores_graph(&mut g, p, fq)?;
        let scores = g.value(s).data().to_vec();
        let best = crate::baselines::argmax(&scores);
        out.push(Prediction {
            truth: e.direction,
            predicted: prototypes.classes[best],
            scores,
        });
    }
    Ok(out)
}
