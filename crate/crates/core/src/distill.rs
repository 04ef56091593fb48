//! Ensemble distillation of frozen teachers into a student on unlabeled data.
//!
//! Per sample, each teacher's logits are restricted to the classes it shares
//! with the student and weighted by `exp(-H(softmax(z)))`, normalized over
//! teachers, so confident teachers dominate. The combined logit at a class is
//! the weighted mean over the teachers that cover that class. The student
//! minimizes `α·KL(P_S ‖ P_T) + (1 − α)·CE(P_S, argmax P_T)`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::UnlabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{argmax_masked, entropy, kl_div, ln_clamped, softmax, Adam, Model, MASK_SENTINEL};
use crate::{rng, LabelSet};

/// Frozen teachers plus the student's active label set.
#[derive(Debug, Clone)]
pub struct TeacherEnsemble<'a> {
    teachers: Vec<&'a Model>,
    target: Vec<bool>,
}

impl<'a> TeacherEnsemble<'a> {
    pub fn new(teachers: Vec<&'a Model>, target: &LabelSet) -> Result<Self> {
        let first = teachers.first().ok_or(Error::EmptyDataset("teacher ensemble"))?;
        let k = first.num_classes();
        if teachers.iter().any(|t| t.num_classes() != k) {
            return Err(Error::Architecture("teachers disagree on the label universe".into()));
        }
        if target.is_empty() {
            return Err(Error::EmptyMask);
        }
        let target: Vec<bool> = (0..k).map(|c| target.contains(&c)).collect();
        for (i, t) in teachers.iter().enumerate() {
            if !t.active_mask().iter().zip(&target).any(|(&a, &b)| a && b) {
                return Err(Error::Config(format!("teacher {i} shares no class with the student")));
            }
        }
        Ok(Self { teachers, target })
    }

    pub fn teachers(&self) -> &[&'a Model] {
        &self.teachers
    }

    pub fn target_mask(&self) -> &[bool] {
        &self.target
    }

    /// Each teacher's mask intersected with the student's.
    fn teacher_masks(&self) -> Vec<Vec<bool>> {
        self.teachers
            .iter()
            .map(|t| t.active_mask().iter().zip(&self.target).map(|(&a, &b)| a && b).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherWeighting {
    /// `exp(-entropy)` per sample.
    Entropy,
    /// Equal weights.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { alpha: 1.0, epochs: 10, batch_size: 32, lr: 1e-3 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("distillation needs a positive batch size and learning rate".into()));
        }
        Ok(())
    }
}

/// Entropy-based teacher weights for one sample. `masks[i]` selects the
/// classes teacher `i` contributes.
pub fn teacher_weights(logits: &[&[f64]], masks: &[&[bool]]) -> Result<Vec<f64>> {
    if logits.is_empty() || logits.len() != masks.len() {
        return Err(Error::Shape(format!("{} teacher logit rows with {} masks", logits.len(), masks.len())));
    }
    let entropies =
        logits.iter().zip(masks).map(|(z, m)| softmax(z, m).map(|p| entropy(&p))).collect::<Result<Vec<f64>>>()?;
    let floor = entropies.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = entropies.iter().map(|h| (floor - h).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted combination of teacher logits over the student's classes. Each
/// class averages only the teachers covering it, with their weights
/// renormalized; inactive student classes hold [`MASK_SENTINEL`].
pub fn ensemble_logits(logits: &[&[f64]], masks: &[&[bool]], weights: &[f64], student: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != weights.len() || masks.len() != weights.len() {
        return Err(Error::Shape("teacher logits, masks and weights differ in count".into()));
    }
    let mut out = vec![MASK_SENTINEL; student.len()];
    for (c, _) in student.iter().enumerate().filter(|(_, &a)| a) {
        let (mut num, mut den) = (0.0, 0.0);
        for ((z, m), &w) in logits.iter().zip(masks).zip(weights) {
            if m[c] {
                num += w * z[c];
                den += w;
            }
        }
        if den == 0.0 {
            return Err(Error::OrphanClass { class: c });
        }
        out[c] = num / den;
    }
    Ok(out)
}

fn combine(logits: &[&[f64]], masks: &[&[bool]], student: &[bool], weighting: TeacherWeighting) -> Result<Vec<f64>> {
    let weights = match weighting {
        TeacherWeighting::Entropy => teacher_weights(logits, masks)?,
        TeacherWeighting::Uniform => vec![1.0 / logits.len() as f64; logits.len()],
    };
    ensemble_logits(logits, masks, &weights, student)
}

/// Distillation loss for one sample: `α·KL(P_S ‖ P_T) + (1 − α)·CE` with
/// the pseudo-label `argmax P_T`. Teacher masks should already be
/// intersected with the student's.
pub fn distill_loss(
    student_logits: &[f64],
    student_mask: &[bool],
    teacher_logits: &[&[f64]],
    teacher_masks: &[&[bool]],
    alpha: f64,
) -> Result<f64> {
    let z_t = combine(teacher_logits, teacher_masks, student_mask, TeacherWeighting::Entropy)?;
    let p_t = softmax(&z_t, student_mask)?;
    let p_s = softmax(student_logits, student_mask)?;
    let pseudo = argmax_masked(&p_t, student_mask).ok_or(Error::EmptyMask)?;
    Ok(alpha * kl_div(&p_s, &p_t) + (1.0 - alpha) * -ln_clamped(p_s[pseudo]))
}

/// Teacher distributions and pseudo-labels for a fixed sample set.
#[derive(Debug, Clone)]
pub struct SoftTargets {
    pub probs: Array2<f64>,
    pub pseudo_labels: Vec<usize>,
}

impl SoftTargets {
    pub fn compute(
        ensemble: &TeacherEnsemble<'_>,
        inputs: ArrayView2<f64>,
        weighting: TeacherWeighting,
    ) -> Result<Self> {
        let masks = ensemble.teacher_masks();
        let mask_refs: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
        let outputs = ensemble.teachers.iter().map(|t| t.forward(inputs)).collect::<Result<Vec<_>>>()?;
        let n = inputs.nrows();
        let k = ensemble.target.len();
        let mut probs = Array2::zeros((n, k));
        let mut pseudo_labels = Vec::with_capacity(n);
        for r in 0..n {
            let rows: Vec<&[f64]> = outputs.iter().map(|o| o.row(r).to_slice().expect("standard layout")).collect();
            let z_t = combine(&rows, &mask_refs, &ensemble.target, weighting)?;
            let p = softmax(&z_t, &ensemble.target)?;
            pseudo_labels.push(argmax_masked(&p, &ensemble.target).ok_or(Error::EmptyMask)?);
            probs.row_mut(r).iter_mut().zip(p).for_each(|(d, s)| *d = s);
        }
        Ok(Self { probs, pseudo_labels })
    }

    fn select(&self, rows: &[usize]) -> Self {
        Self {
            probs: self.probs.select(Axis(0), rows),
            pseudo_labels: rows.iter().map(|&r| self.pseudo_labels[r]).collect(),
        }
    }
}

/// Mean distillation loss over a batch and its gradient with respect to the
/// student logits.
pub fn batch_loss(
    student_logits: &Array2<f64>,
    mask: &[bool],
    targets: &SoftTargets,
    alpha: f64,
) -> Result<(f64, Array2<f64>)> {
    let (n, k) = student_logits.dim();
    if targets.probs.dim() != (n, k) {
        return Err(Error::Shape("student logits and soft targets differ in shape".into()));
    }
    let scale = 1.0 / n.max(1) as f64;
    let mut grad = Array2::zeros((n, k));
    let mut total = 0.0;
    for r in 0..n {
        let p_s = softmax(student_logits.row(r).as_slice().expect("standard layout"), mask)?;
        let p_t = targets.probs.row(r);
        let p_t = p_t.as_slice().expect("standard layout");
        let y = targets.pseudo_labels[r];
        let kl = kl_div(&p_s, p_t);
        total += alpha * kl - (1.0 - alpha) * ln_clamped(p_s[y]);
        let mut g = grad.row_mut(r);
        for c in (0..k).filter(|&c| mask[c]) {
            // ∂KL(P_S‖P_T)/∂z_c = p_c (ln p_c − ln q_c − KL); ∂CE/∂z_c = p_c − [c = y].
            let soft = if p_s[c] > 0.0 { p_s[c] * (ln_clamped(p_s[c]) - ln_clamped(p_t[c]) - kl) } else { 0.0 };
            let hard = p_s[c] - if c == y { 1.0 } else { 0.0 };
            g[c] = scale * (alpha * soft + (1.0 - alpha) * hard);
        }
    }
    Ok((total * scale, grad))
}

/// Mean loss of `student` against precomputed targets, without training.
pub fn evaluate_loss(student: &Model, inputs: ArrayView2<f64>, targets: &SoftTargets, alpha: f64) -> Result<f64> {
    let logits = student.forward(inputs)?;
    Ok(batch_loss(&logits, student.active_mask(), targets, alpha)?.0)
}

#[derive(Debug, Clone)]
pub struct Distilled {
    pub model: Model,
    /// Loss over the whole public set before training.
    pub initial_loss: f64,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Distills `ensemble` into a copy of `student` for `cfg.epochs` shuffled
/// passes over `public`.
pub fn distill_train(
    student: &Model,
    ensemble: &TeacherEnsemble<'_>,
    public: &UnlabeledDataset,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<Distilled> {
    distill_with(student, ensemble, public, cfg, TeacherWeighting::Entropy, seed)
}

pub fn distill_with(
    student: &Model,
    ensemble: &TeacherEnsemble<'_>,
    public: &UnlabeledDataset,
    cfg: &DistillConfig,
    weighting: TeacherWeighting,
    seed: u64,
) -> Result<Distilled> {
    cfg.validate()?;
    if public.is_empty() {
        return Err(Error::EmptyDataset("public distillation set"));
    }
    if student.active_mask() != ensemble.target_mask() {
        return Err(Error::Config("ensemble target differs from the student's active labels".into()));
    }
    let inputs = public.features();
    let targets = SoftTargets::compute(ensemble, inputs.view(), weighting)?;
    let initial_loss = evaluate_loss(student, inputs.view(), &targets, cfg.alpha)?;

    let mut model = student.clone();
    let mut opt = Adam::new(&model, cfg.lr);
    let mut rng = rng::stream(seed, &[rng::tag::DISTILL]);
    let mut order: Vec<usize> = (0..public.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let t = targets.select(chunk);
            let cache = model.forward_cached(x.view())?;
            let (loss, grad) = batch_loss(&cache.logits, model.active_mask(), &t, cfg.alpha)?;
            let grads = model.backward(&cache, &grad);
            opt.step(&mut model, &grads)?;
            sum += loss;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    Ok(Distilled { model, initial_loss, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL2: [bool; 2] = [true, true];
    const ALL4: [bool; 4] = [true; 4];

    #[test]
    fn single_teacher_gets_all_weight() {
        assert_eq!(teacher_weights(&[&[0.3, -1.0]], &[&ALL2]).unwrap(), vec![1.0]);
    }

    #[test]
    fn identical_teachers_share_equally() {
        let z = [0.2, 1.5, -0.3, 0.0];
        let w = teacher_weights(&[&z, &z, &z], &[&ALL4, &ALL4, &ALL4]).unwrap();
        for wi in w {
            assert_abs_diff_eq!(wi, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn confident_teacher_dominates() {
        // Sharp logits give a numerically one-hot distribution (H ≈ 0);
        // equal logits give H = ln 4, so weights are 1/(1 + 1/4) and 1/5.
        let sharp = [1000.0, 0.0, 0.0, 0.0];
        let flat = [0.0; 4];
        let w = teacher_weights(&[&sharp, &flat], &[&ALL4, &ALL4]).unwrap();
        assert_abs_diff_eq!(w[0], 0.8, epsilon = 1e-9);
        assert_abs_diff_eq!(w[1], 0.2, epsilon = 1e-9);
    }

    #[test]
    fn weights_decrease_with_entropy() {
        let w = teacher_weights(&[&[2.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]], &[&ALL2, &ALL2, &ALL2]).unwrap();
        assert!(w[0] > w[1] && w[1] > w[2]);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ensemble_identity_and_mean() {
        let z1 = [1.0, -2.0];
        let z2 = [3.0, 4.0];
        assert_eq!(ensemble_logits(&[&z1], &[&ALL2], &[1.0], &ALL2).unwrap(), z1.to_vec());
        assert_eq!(ensemble_logits(&[&z1, &z2], &[&ALL2, &ALL2], &[0.5, 0.5], &ALL2).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn partial_overlap_renormalizes_per_class() {
        let a = [2.0, 4.0, MASK_SENTINEL];
        let b = [MASK_SENTINEL, 8.0, 6.0];
        let z =
            ensemble_logits(&[&a, &b], &[&[true, true, false], &[false, true, true]], &[0.5, 0.5], &[true; 3]).unwrap();
        assert_eq!(z, vec![2.0, 6.0, 6.0]);
    }

    #[test]
    fn uncovered_student_class_is_an_error() {
        let a = [1.0, 1.0, 0.0];
        let err = ensemble_logits(&[&a], &[&[true, true, false]], &[1.0], &[true; 3]).unwrap_err();
        assert!(matches!(err, Error::OrphanClass { class: 2 }));
    }

    #[test]
    fn loss_endpoints() {
        let z = [0.7, -0.4];
        assert_abs_diff_eq!(distill_loss(&z, &ALL2, &[&z], &[&ALL2], 1.0).unwrap(), 0.0, epsilon = 1e-12);

        // α = 0 leaves only the cross-entropy against the teacher's argmax.
        let student = [0.0, 3f64.ln()];
        let teacher = [2.0, 0.0];
        let ce = distill_loss(&student, &ALL2, &[&teacher], &[&ALL2], 0.0).unwrap();
        assert_abs_diff_eq!(ce, -(0.25f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_mixes_both_terms() {
        // P_S = (0.25, 0.75), P_T = (0.75, 0.25), pseudo-label 0.
        let student = [0.0, 3f64.ln()];
        let teacher = [3f64.ln(), 0.0];
        let kl = 0.25 * (0.25f64 / 0.75).ln() + 0.75 * (0.75f64 / 0.25).ln();
        let ce = -(0.25f64).ln();
        let got = distill_loss(&student, &ALL2, &[&teacher], &[&ALL2], 0.5).unwrap();
        assert_abs_diff_eq!(got, 0.5 * kl + 0.5 * ce, epsilon = 1e-12);
    }

    #[test]
    fn kl_orientation_is_student_first() {
        let student = [0.0, 3f64.ln()];
        let teacher = [0.0, 0.0];
        let forward = 0.25 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
        let reverse = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((forward - reverse).abs() > 1e-3);
        let got = distill_loss(&student, &ALL2, &[&teacher], &[&ALL2], 1.0).unwrap();
        assert_abs_diff_eq!(got, forward, epsilon = 1e-12);
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mask = [true, false, true, true];
        let logits =
            Array2::from_shape_fn((3, 4), |(_, c)| if mask[c] { rng.random_range(-2.0..2.0) } else { MASK_SENTINEL });
        let probs =
            Array2::from_shape_fn(
                (3, 4),
                |(r, c)| if mask[c] { [0.2, 0.0, 0.5, 0.3][c] + 0.01 * r as f64 } else { 0.0 },
            );
        let probs = &probs / &probs.sum_axis(Axis(1)).insert_axis(Axis(1));
        let targets = SoftTargets { probs, pseudo_labels: vec![2, 2, 0] };
        for alpha in [0.0, 0.3, 1.0] {
            let (_, grad) = batch_loss(&logits, &mask, &targets, alpha).unwrap();
            for r in 0..3 {
                for c in (0..4).filter(|&c| mask[c]) {
                    let h = 1e-6;
                    let mut up = logits.clone();
                    up[[r, c]] += h;
                    let mut down = logits.clone();
                    down[[r, c]] -= h;
                    let numeric = (batch_loss(&up, &mask, &targets, alpha).unwrap().0
                        - batch_loss(&down, &mask, &targets, alpha).unwrap().0)
                        / (2.0 * h);
                    assert_abs_diff_eq!(grad[[r, c]], numeric, epsilon = 1e-7);
                }
            }
        }
    }

    fn tiny_model(seed: u64, active: &[usize]) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::new(3, &[8], 4, &active.iter().copied().collect(), &mut rng).unwrap()
    }

    fn public(n: usize) -> UnlabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        UnlabeledDataset::new(Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn student_equal_to_teacher_is_a_fixed_point() {
        let teacher = tiny_model(1, &[0, 1, 2, 3]);
        let ensemble = TeacherEnsemble::new(vec![&teacher], &teacher.active_labels()).unwrap();
        let cfg = DistillConfig { epochs: 2, ..DistillConfig::default() };
        let out = distill_train(&teacher, &ensemble, &public(64), &cfg, 0).unwrap();
        assert!(out.initial_loss < 1e-12);
        assert!(out.epoch_losses.iter().all(|&l| l < 1e-9));
        let drift = out.model.to_flat().iter().zip(teacher.to_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn zero_epochs_returns_student() {
        let teacher = tiny_model(1, &[0, 1, 2, 3]);
        let student = tiny_model(2, &[0, 1, 2, 3]);
        let ensemble = TeacherEnsemble::new(vec![&teacher], &student.active_labels()).unwrap();
        let cfg = DistillConfig { epochs: 0, ..DistillConfig::default() };
        assert_eq!(distill_train(&student, &ensemble, &public(10), &cfg, 0).unwrap().model, student);
    }

    #[test]
    fn teachers_are_untouched_and_loss_drops() {
        let t1 = tiny_model(1, &[0, 1, 2]);
        let t2 = tiny_model(3, &[1, 2, 3]);
        let student = tiny_model(2, &[0, 1, 2, 3]);
        let before = (t1.fingerprint(), t2.fingerprint());
        let ensemble = TeacherEnsemble::new(vec![&t1, &t2], &student.active_labels()).unwrap();
        let out = distill_train(&student, &ensemble, &public(128), &DistillConfig::default(), 4).unwrap();
        assert_eq!(before, (t1.fingerprint(), t2.fingerprint()));
        assert!(out.epoch_losses.last().unwrap() < &out.initial_loss);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = tiny_model(1, &[0, 1]);
        assert!(TeacherEnsemble::new(vec![], &LabelSet::from([0])).is_err());
        assert!(TeacherEnsemble::new(vec![&t], &LabelSet::from([2, 3])).is_err());
        let ensemble = TeacherEnsemble::new(vec![&t], &t.active_labels()).unwrap();
        let empty = UnlabeledDataset::new(Array2::zeros((0, 3)));
        assert!(matches!(
            distill_train(&t, &ensemble, &empty, &DistillConfig::default(), 0),
            Err(Error::EmptyDataset(_))
        ));
        let bad = DistillConfig { alpha: 1.5, ..DistillConfig::default() };
        assert!(distill_train(&t, &ensemble, &public(4), &bad, 0).is_err());
    }

    #[test]
    fn weights_are_permutation_equivariant() {
        let a = [1.0, 0.0, -1.0];
        let b = [0.1, 0.2, 0.0];
        let c = [3.0, -3.0, 0.0];
        let m = [true; 3];
        let w = teacher_weights(&[&a, &b, &c], &[&m, &m, &m]).unwrap();
        let p = teacher_weights(&[&c, &a, &b], &[&m, &m, &m]).unwrap();
        assert_abs_diff_eq!(w[0], p[1], epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], p[2], epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], p[0], epsilon = 1e-15);
    }
}
