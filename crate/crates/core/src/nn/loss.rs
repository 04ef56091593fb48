use ndarray::Array2;

use super::ops::{ln_clamped, softmax_into};
use crate::error::{Error, Result};

/// Mean cross-entropy of masked softmax against integer labels, and its
/// gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize], active: &[bool]) -> Result<(f64, Array2<f64>)> {
    let (rows, k) = logits.dim();
    if labels.len() != rows || active.len() != k {
        return Err(Error::Shape(format!(
            "{} labels and a {}-mask for logits of shape {rows}x{k}",
            labels.len(),
            active.len()
        )));
    }
    if rows == 0 {
        return Err(Error::EmptyDataset("cross-entropy batch"));
    }
    let mut grad = Array2::zeros((rows, k));
    let mut total = 0.0;
    let scale = 1.0 / rows as f64;
    for ((logit_row, mut grad_row), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        if !active.get(y).copied().unwrap_or(false) {
            return Err(Error::LabelNotActive { label: y });
        }
        let row = logit_row.to_vec();
        let g = grad_row.as_slice_mut().expect("standard layout");
        softmax_into(&row, active, g)?;
        total -= ln_clamped(g[y]);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, grad))
}
