use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Combination;
use crate::error::{check_dims, Error, Result};

/// Hidden widths of the default head: input → 100 → 25 → 1.
pub const DEFAULT_HIDDEN: [usize; 2] = [100, 25];

/// Version tag written into head checkpoints.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer `a = act(W x + b)` with `W` stored row-major (outputs × inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Head(format!(
                "layer {inputs}→{outputs} has a zero width"
            )));
        }
        check_dims(inputs * outputs, weights.len())?;
        check_dims(outputs, bias.len())?;
        Ok(Self {
            inputs,
            outputs,
            activation,
            weights,
            bias,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform(−a, a) weights with `a = √(6 / (fan_in + fan_out))`, zero biases.
    pub fn xavier_uniform<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-a..a))
            .collect();
        Self {
            inputs,
            outputs,
            activation,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    /// Pre-activations `W x + b`.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fully-connected similarity network over a combined feature pair.
///
/// Invariants: consecutive layer widths chain, and the last layer maps to a
/// single sigmoid unit so the output lies in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityHead {
    combination: Combination,
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    combination: Combination,
    input_dim: usize,
    layers: Vec<Layer>,
}

impl SimilarityHead {
    pub fn new(combination: Combination, layers: Vec<Layer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::Head("head has no layers".into()))?;
        if last.outputs != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::Head(
                "final layer must have one output with sigmoid activation".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Head(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            check_dims(layer.inputs * layer.outputs, layer.weights.len())
                .and_then(|_| check_dims(layer.outputs, layer.bias.len()))
                .map_err(|e| Error::Head(format!("layer {i}: {e}")))?;
        }
        Ok(Self {
            combination,
            layers,
        })
    }

    fn widths(input_dim: usize, hidden: &[usize]) -> Vec<(usize, usize, Activation)> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == hidden.len() {
                    Activation::Sigmoid
                } else {
                    Activation::Relu
                };
                (w[0], w[1], act)
            })
            .collect()
    }

    /// Relu hidden layers of the given widths and a sigmoid output, all zero.
    pub fn zeros(combination: Combination, feature_dim: usize, hidden: &[usize]) -> Self {
        let layers = Self::widths(combination.output_dim(feature_dim), hidden)
            .into_iter()
            .map(|(i, o, a)| Layer::zeros(i, o, a))
            .collect();
        Self {
            combination,
            layers,
        }
    }

    /// Glorot-uniform initialised head.
    pub fn xavier<R: Rng + ?Sized>(
        combination: Combination,
        feature_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = Self::widths(combination.output_dim(feature_dim), hidden)
            .into_iter()
            .map(|(i, o, a)| Layer::xavier_uniform(i, o, a, rng))
            .collect();
        Self {
            combination,
            layers,
        }
    }

    pub fn combination(&self) -> Combination {
        self.combination
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    /// Feature dimension D expected on each side of a pair.
    pub fn feature_dim(&self) -> usize {
        self.input_dim() / self.combination.blocks()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dims(self.param_count(), params.len())?;
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// Applies the layer chain; result is strictly inside (0, 1) unless the
    /// final logit saturates f64.
    pub fn forward(&self, combined: &[f64]) -> Result<f64> {
        check_dims(self.input_dim(), combined.len())?;
        let mut a = combined.to_vec();
        for l in &self.layers {
            a = l
                .affine(&a)
                .into_iter()
                .map(|z| l.activation.apply(z))
                .collect();
        }
        Ok(a[0])
    }

    /// Pre-activations of every layer, in order. Used by backpropagation.
    pub(crate) fn forward_trace(&self, combined: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = combined.to_vec();
        for l in &self.layers {
            let z = l.affine(&a);
            a = z.iter().map(|&v| l.activation.apply(v)).collect();
            pre.push(z);
        }
        pre
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            combination: self.combination,
            input_dim: self.input_dim(),
            layers: self.layers.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Head(format!(
                "checkpoint version {} is not {CHECKPOINT_VERSION}",
                ck.version
            )));
        }
        let head = Self::new(ck.combination, ck.layers)?;
        check_dims(ck.input_dim, head.input_dim())?;
        if head.input_dim() % ck.combination.blocks() != 0 {
            return Err(Error::Head(format!(
                "input dim {} is not a multiple of {} for {}",
                head.input_dim(),
                ck.combination.blocks(),
                ck.combination
            )));
        }
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_outputs_half() {
        let head = SimilarityHead::zeros(Combination::Comb2, 4, &DEFAULT_HIDDEN);
        assert_eq!(head.input_dim(), 12);
        assert_eq!(head.forward(&[3.0; 12]).unwrap(), 0.5);
    }

    #[test]
    fn single_layer_hand_value() {
        let layer = Layer::new(2, 1, Activation::Sigmoid, vec![1.0, -1.0], vec![0.0]).unwrap();
        let head = SimilarityHead::new(Combination::Comb1, vec![layer]).unwrap();
        let s = head.forward(&[2.0, 1.0]).unwrap();
        assert!((s - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((s - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn forward_dimension_mismatch() {
        let head = SimilarityHead::zeros(Combination::Comb1, 4, &[3]);
        assert!(matches!(
            head.forward(&[0.0; 7]),
            Err(Error::DimensionMismatch {
                expected: 8,
                actual: 7
            })
        ));
    }

    #[test]
    fn invalid_chains_rejected() {
        let relu_out = Layer::zeros(2, 1, Activation::Relu);
        assert!(SimilarityHead::new(Combination::Comb1, vec![relu_out]).is_err());
        let a = Layer::zeros(2, 3, Activation::Relu);
        let b = Layer::zeros(4, 1, Activation::Sigmoid);
        assert!(SimilarityHead::new(Combination::Comb1, vec![a, b]).is_err());
        assert!(SimilarityHead::new(Combination::Comb1, vec![]).is_err());
    }

    #[test]
    fn output_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = SimilarityHead::xavier(Combination::Comb1, 4, &DEFAULT_HIDDEN, &mut rng);
        for i in 0..50 {
            let x: Vec<f64> = (0..8).map(|j| ((i * 7 + j) as f64).sin() * 3.0).collect();
            let s = head.forward(&x).unwrap();
            assert!(s > 0.0 && s < 1.0 && s.is_finite());
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = SimilarityHead::xavier(Combination::Comb1, 3, &[5, 2], &mut rng);
        let mut other = SimilarityHead::zeros(Combination::Comb1, 3, &[5, 2]);
        other.set_params(&head.params()).unwrap();
        assert_eq!(head, other);
        assert_eq!(head.param_count(), 6 * 5 + 5 + 5 * 2 + 2 + 2 + 1);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = SimilarityHead::xavier(Combination::Comb2, 4, &DEFAULT_HIDDEN, &mut rng);
        let back = SimilarityHead::from_json(&head.to_json().unwrap()).unwrap();
        assert_eq!(head, back);
        assert_eq!(back.combination(), Combination::Comb2);
        assert_eq!(back.feature_dim(), 4);
    }

    #[test]
    fn checkpoint_version_checked() {
        let head = SimilarityHead::zeros(Combination::Comb1, 1, &[]);
        let text = head
            .to_json()
            .unwrap()
            .replace("\"version\":1", "\"version\":7");
        assert!(SimilarityHead::from_json(&text).is_err());
    }
}
