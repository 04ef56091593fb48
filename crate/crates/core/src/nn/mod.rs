//! Minimal dense neural-network engine.

mod adam;
mod loss;
mod model;
pub mod ops;

pub use adam::Adam;
pub use loss::cross_entropy;
pub use model::{Checkpoint, Dense, ForwardCache, Gradients, Model, CHECKPOINT_FORMAT};
pub use ops::{argmax_masked, entropy, kl_div, ln_clamped, softmax, MASK_SENTINEL, PROB_FLOOR};

use ndarray::ArrayView2;

/// One Adam step on the mean masked cross-entropy of `batch`. Returns the
/// loss measured before the step.
pub fn train_step(model: &mut Model, opt: &mut Adam, batch: ArrayView2<f64>, labels: &[usize]) -> crate::Result<f64> {
    if let Some(&bad) = labels.iter().find(|&&y| !model.is_active(y)) {
        return Err(crate::Error::LabelNotActive { label: bad });
    }
    let cache = model.forward_cached(batch)?;
    let (loss, grad) = cross_entropy(&cache.logits, labels, model.active_mask())?;
    let grads = model.backward(&cache, &grad);
    opt.step(model, &grads)?;
    Ok(loss)
}
