//! Training the FC similarity head: losses, backpropagation, a
//! central-difference gradient oracle, and plain mini-batch SGD.

mod loss;

pub use loss::{bce_loss, focal_loss, Loss, LossKind, DEFAULT_GAMMA, PROB_CLAMP};

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingStore;
use crate::error::{check_dims, Error, Result};
use crate::pairing::LabeledPair;
use crate::similarity::{combine, Activation, Combination, SimilarityHead, DEFAULT_HIDDEN};

/// Per-layer parameter gradients, shaped like the head.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(head: &SimilarityHead) -> Self {
        Self {
            layers: head
                .layers()
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Flattened in [`SimilarityHead::params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Loss of one combined input under the head.
pub fn sample_loss(head: &SimilarityHead, combined: &[f64], label: u8, loss: Loss) -> Result<f64> {
    Ok(loss.value(head.forward(combined)?, label))
}

/// Gradient of the single-sample loss with respect to every head parameter.
pub fn backward(
    head: &SimilarityHead,
    combined: &[f64],
    label: u8,
    loss: Loss,
) -> Result<Gradients> {
    Ok(backward_with_loss(head, combined, label, loss)?.0)
}

/// Like [`backward`], also returning the loss value from the same forward pass.
pub fn backward_with_loss(
    head: &SimilarityHead,
    combined: &[f64],
    label: u8,
    loss: Loss,
) -> Result<(Gradients, f64)> {
    check_dims(head.input_dim(), combined.len())?;
    let layers = head.layers();
    let pre = head.forward_trace(combined);
    let activations: Vec<Vec<f64>> = layers
        .iter()
        .zip(&pre)
        .map(|(l, z)| z.iter().map(|&v| l.activation.apply(v)).collect())
        .collect();

    let sim = activations.last().unwrap()[0];
    let value = loss.value(sim, label);

    let mut grads = Gradients::zeros_like(head);
    // output unit is a sigmoid: ds/dz = s(1 − s)
    let mut delta = vec![loss.dsim(sim, label) * sim * (1.0 - sim)];

    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let input: &[f64] = if li == 0 {
            combined
        } else {
            &activations[li - 1]
        };
        let g = &mut grads.layers[li];
        for (o, &d) in delta.iter().enumerate() {
            let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
            row.iter_mut().zip(input).for_each(|(w, x)| *w = d * x);
            g.bias[o] = d;
        }
        if li == 0 {
            break;
        }
        let below = &layers[li - 1];
        let mut next = vec![0.0; layer.inputs];
        for (o, &d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            next.iter_mut().zip(row).for_each(|(n, w)| *n += w * d);
        }
        for (n, &z) in next.iter_mut().zip(&pre[li - 1]) {
            *n *= match below.activation {
                Activation::Relu => {
                    if z > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Activation::Sigmoid => {
                    let s = crate::similarity::sigmoid(z);
                    s * (1.0 - s)
                }
            };
        }
        delta = next;
    }
    Ok((grads, value))
}

/// Default step for [`numerical_gradient`].
pub const DEFAULT_FD_EPSILON: f64 = 1e-5;

/// Central differences `(f(p + ε) − f(p − ε)) / 2ε`, one parameter at a time.
pub fn numerical_gradient<F>(mut f: F, params: &[f64], epsilon: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + epsilon;
            let plus = f(&p);
            p[i] = orig - epsilon;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * epsilon)
        })
        .collect()
}

/// `p ← p − lr·g`, element-wise.
pub fn sgd_step(params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    check_dims(params.len(), grads.len())?;
    params
        .iter_mut()
        .zip(grads)
        .for_each(|(p, g)| *p -= learning_rate * g);
    Ok(())
}

/// Applies one SGD step directly to a head's parameters.
pub fn apply_sgd(head: &mut SimilarityHead, grads: &Gradients, learning_rate: f64) -> Result<()> {
    let mut params = head.params();
    sgd_step(&mut params, &grads.flatten(), learning_rate)?;
    head.set_params(&params)
}

fn default_loss() -> LossKind {
    LossKind::Bce
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_lr() -> f64 {
    1e-2
}
fn default_epochs() -> usize {
    120
}
fn default_batch() -> usize {
    64
}
fn default_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_loss")]
    pub loss_kind: LossKind,
    /// Focal exponent; ignored for BCE.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: default_loss(),
            gamma: default_gamma(),
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            hidden: default_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> Loss {
        match self.loss_kind {
            LossKind::Bce => Loss::bce(),
            LossKind::Focal => Loss::focal(self.gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam("learning rate must be positive".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParam("gamma must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch size must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidParam("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
    #[serde(skip)]
    pub head: SimilarityHead,
    pub combination: Combination,
    pub config: TrainConfig,
    pub n_pairs: usize,
    pub n_positive: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Combined inputs and labels for every pair, in pair order.
pub fn prepare_inputs(
    store: &EmbeddingStore,
    pairs: &[LabeledPair],
    combination: Combination,
) -> Result<Vec<(Vec<f64>, u8)>> {
    pairs
        .iter()
        .map(|p| {
            let a = store.vector_f64(&p.image_a)?;
            let b = store.vector_f64(&p.image_b)?;
            Ok((combine(combination, &a, &b)?, p.label))
        })
        .collect()
}

/// Trains a freshly initialised head for `config.epochs` passes of shuffled
/// mini-batches. Deterministic for a fixed seed.
pub fn train(
    store: &EmbeddingStore,
    pairs: &[LabeledPair],
    combination: Combination,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Training("empty pair list".into()));
    }
    let started = Instant::now();
    let inputs = prepare_inputs(store, pairs, combination)?;
    let loss = config.loss();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = SimilarityHead::xavier(combination, store.dim(), &config.hidden, &mut rng);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = Gradients::zeros_like(&head);
            for &i in batch {
                let (x, label) = &inputs[i];
                let (g, value) = backward_with_loss(&head, x, *label, loss)?;
                acc.add_assign(&g);
                total += value;
            }
            acc.scale(1.0 / batch.len() as f64);
            apply_sgd(&mut head, &acc, config.learning_rate)?;
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("non-finite epoch loss {mean}")));
        }
        epoch_losses.push(mean);
    }

    Ok(TrainReport {
        epoch_losses,
        head,
        combination,
        config: config.clone(),
        n_pairs: pairs.len(),
        n_positive: pairs.iter().filter(|p| p.is_positive()).count(),
        elapsed: started.elapsed(),
    })
}

/// Fraction of pairs whose FC similarity lands on the correct side of 0.5.
pub fn pair_accuracy(
    head: &SimilarityHead,
    store: &EmbeddingStore,
    pairs: &[LabeledPair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Training("empty pair list".into()));
    }
    let inputs = prepare_inputs(store, pairs, head.combination())?;
    let mut correct = 0usize;
    for (x, label) in &inputs {
        let predicted = u8::from(head.forward(x)? >= 0.5);
        correct += usize::from(predicted == *label);
    }
    Ok(correct as f64 / inputs.len() as f64)
}

/// Mean loss of the head over the pairs.
pub fn mean_loss(
    head: &SimilarityHead,
    store: &EmbeddingStore,
    pairs: &[LabeledPair],
    loss: Loss,
) -> Result<f64> {
    let inputs = prepare_inputs(store, pairs, head.combination())?;
    let mut total = 0.0;
    for (x, label) in &inputs {
        total += sample_loss(head, x, *label, loss)?;
    }
    Ok(total / inputs.len().max(1) as f64)
}
