use super::model::{Dense, Gradients, Model};
use crate::error::{Error, Result};

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Dense>,
    second: Vec<Dense>,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(model: &Model, lr: f64) -> Self {
        let zeros = || model.layers().iter().map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros(), second: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `model` in place.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        let layers = model.layers_mut();
        if grads.layers.len() != layers.len()
            || grads
                .layers
                .iter()
                .zip(layers.iter())
                .any(|(g, l)| g.weights.dim() != l.weights.dim() || g.bias.dim() != l.bias.dim())
        {
            return Err(Error::Shape("gradient layout does not match the model".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in layers.iter_mut().zip(&grads.layers).zip(&mut self.first).zip(&mut self.second) {
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::LabelSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Model::new(3, &[4], 2, &LabelSet::from([0, 1]), &mut rng).unwrap()
    }

    fn filled(m: &Model, value: f64) -> Gradients {
        let mut g = Gradients { layers: m.layers().to_vec() };
        for l in &mut g.layers {
            l.weights.fill(value);
            l.bias.fill(value);
        }
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = model();
        let before = m.clone();
        let mut opt = Adam::new(&m, Adam::DEFAULT_LR);
        opt.step(&mut m, &filled(&before, 0.0)).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Step 1: m̂ = g and v̂ = g², so the update is lr·g/(|g| + ε).
        let mut m = model();
        let before = m.to_flat();
        let mut opt = Adam::new(&m, 1e-3);
        let g = 0.37;
        let grads = filled(&m, g);
        opt.step(&mut m, &grads).unwrap();
        let expected = 1e-3 * g / (g + 1e-8);
        for (a, b) in m.to_flat().iter().zip(&before) {
            assert!(((b - a) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let base = model();
        let grads = filled(&base, 0.5);
        let run = || {
            let mut m = base.clone();
            let mut opt = Adam::new(&m, 1e-3);
            opt.step(&mut m, &grads).unwrap();
            opt.step(&mut m, &grads).unwrap();
            (m, opt)
        };
        assert_eq!(run(), run());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let other = Model::new(3, &[5], 2, &LabelSet::from([0, 1]), &mut rng).unwrap();
        let mut m = base.clone();
        assert!(Adam::new(&base, 1e-3).step(&mut m, &filled(&other, 1.0)).is_err());
    }
}
