use std::hash::{Hash, Hasher};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::MASK_SENTINEL;
use crate::error::{Error, Result};
use crate::{ClassId, LabelSet};

/// One fully connected layer, `y = x · weights + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape `(inputs, outputs)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weights: Array2::zeros((inputs, outputs)), bias: Array1::zeros(outputs) }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weights.nrows(), self.weights.ncols())
    }
}

/// Dense ReLU network whose output spans the global label universe `0..K`,
/// with a mask selecting the classes this model is responsible for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Dense>,
    active: Vec<bool>,
}

/// Gradients with the same layout as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    /// Input of each layer (post-ReLU for hidden layers).
    inputs: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

fn mask_from(labels: &LabelSet, num_classes: usize) -> Result<Vec<bool>> {
    if labels.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Shape(format!("active label {bad} outside 0..{num_classes}")));
    }
    Ok((0..num_classes).map(|c| labels.contains(&c)).collect())
}

impl Model {
    /// He-uniform initialized weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        active: &LabelSet,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(input_dim, hidden, num_classes, active)?;
        for layer in &mut model.layers {
            let bound = (6.0 / layer.weights.nrows() as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(model)
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], num_classes: usize, active: &LabelSet) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(input_dim).chain(hidden.iter().copied()).chain([num_classes]).collect();
        if dims.contains(&0) {
            return Err(Error::Shape(format!("layer dimensions must be positive, got {dims:?}")));
        }
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self { layers, active: mask_from(active, num_classes)? })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.active.len()
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.weights.ncols())).collect()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn active_labels(&self) -> LabelSet {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(c, _)| c).collect()
    }

    pub fn is_active(&self, class: ClassId) -> bool {
        self.active.get(class).copied().unwrap_or(false)
    }

    pub fn set_active_labels(&mut self, labels: &LabelSet) -> Result<()> {
        self.active = mask_from(labels, self.num_classes())?;
        Ok(())
    }

    /// Same layer widths and the same active mask.
    pub fn same_architecture(&self, other: &Model) -> bool {
        self.dims() == other.dims() && self.active == other.active
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Masked logits, `batch × K`. Inactive positions hold [`MASK_SENTINEL`].
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(batch)?.logits)
    }

    pub fn forward_cached(&self, batch: ArrayView2<f64>) -> Result<ForwardCache> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weights) + &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut x, z));
        }
        for mut row in x.rows_mut() {
            for (v, &a) in row.iter_mut().zip(&self.active) {
                if !a {
                    *v = MASK_SENTINEL;
                }
            }
        }
        Ok(ForwardCache { inputs, logits: x })
    }

    /// Backpropagates `grad_logits` (∂loss/∂logits, `batch × K`). Entries at
    /// inactive positions are ignored.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Gradients {
        let mut delta = grad_logits.clone();
        for mut row in delta.rows_mut() {
            for (v, &a) in row.iter_mut().zip(&self.active) {
                if !a {
                    *v = 0.0;
                }
            }
        }
        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads[i].weights = input.t().dot(&delta);
            grads[i].bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut upstream = delta.dot(&self.layers[i].weights.t());
                // ReLU derivative: the stored input is the post-activation value.
                ndarray::Zip::from(&mut upstream).and(input).for_each(|u, &a| {
                    if a <= 0.0 {
                        *u = 0.0;
                    }
                });
                delta = upstream;
            }
        }
        Gradients { layers: grads }
    }

    /// Parameters flattened layer by layer: weights row-major, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn load_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!("{} parameters for a model with {}", params.len(), self.param_count())));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    /// Hash of the exact parameter bits and mask.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.dims().hash(&mut h);
        self.active.hash(&mut h);
        for p in self.to_flat() {
            p.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            dims: self.dims(),
            active: self.active_labels().into_iter().collect(),
            params: self.to_flat(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!("unknown checkpoint format {:?}", ckpt.format)));
        }
        if ckpt.dims.len() < 2 {
            return Err(Error::Shape("checkpoint needs at least input and output dims".into()));
        }
        let n = ckpt.dims.len();
        let active: LabelSet = ckpt.active.iter().copied().collect();
        let mut model = Self::zeros(ckpt.dims[0], &ckpt.dims[1..n - 1], ckpt.dims[n - 1], &active)?;
        model.load_flat(&ckpt.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        Self::from_checkpoint(&ckpt)
    }
}

pub const CHECKPOINT_FORMAT: &str = "fedcdc-mlp-v1";

/// JSON checkpoint: layer widths, active class ids and the flat parameter
/// vector in [`Model::to_flat`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub dims: Vec<usize>,
    pub active: Vec<ClassId>,
    pub params: Vec<f64>,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}
