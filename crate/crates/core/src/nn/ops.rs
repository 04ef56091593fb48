//! Probability kernels over masked logit vectors.
//!
//! All logs are natural and clamp their argument at [`PROB_FLOOR`].

use crate::error::{Error, Result};

/// Stand-in for −∞ at inactive logit positions; finite so arithmetic on
/// masked rows never produces NaN.
pub const MASK_SENTINEL: f64 = -1e9;

pub const PROB_FLOOR: f64 = 1e-12;

#[inline]
pub fn ln_clamped(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Softmax over the positions where `active` is true; inactive positions
/// come out as exactly zero.
pub fn softmax(logits: &[f64], active: &[bool]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, active, &mut out)?;
    Ok(out)
}

pub(crate) fn softmax_into(logits: &[f64], active: &[bool], out: &mut [f64]) -> Result<()> {
    if logits.len() != active.len() || out.len() != logits.len() {
        return Err(Error::Shape(format!("softmax over {} logits with a mask of {}", logits.len(), active.len())));
    }
    let max = logits.iter().zip(active).filter(|(_, &a)| a).map(|(&z, _)| z).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyMask);
    }
    let mut total = 0.0;
    for ((o, &z), &a) in out.iter_mut().zip(logits).zip(active) {
        *o = if a { (z - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(())
}

/// Shannon entropy in nats, with 0·ln 0 = 0.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * ln_clamped(x)).sum::<f64>()
}

/// KL(p ‖ q) = Σ p ln(p / q) over the support of `p`.
pub fn kl_div(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (ln_clamped(a) - ln_clamped(b))).sum::<f64>().max(0.0)
}

/// Index of the largest entry among active positions, lowest index on ties.
pub fn argmax_masked(values: &[f64], active: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &a)) in values.iter().zip(active).enumerate() {
        if a && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}
