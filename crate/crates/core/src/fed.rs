//! Federated rounds: local training, FedAvg and FedDF aggregation, and
//! evaluation.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::distill::{distill_with, DistillConfig, TeacherEnsemble, TeacherWeighting};
use crate::error::{Error, Result};
use crate::market::DataOwner;
use crate::nn::{argmax_masked, train_step, Adam, Model};
use crate::{rng, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    FedAvg,
    FedDF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlRoundConfig {
    pub method: Aggregation,
    pub local_epochs: usize,
    /// Server-side distillation epochs (FedDF only).
    pub distill_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Soft/hard loss mix of the FedDF distillation step.
    pub alpha: f64,
}

impl Default for FlRoundConfig {
    fn default() -> Self {
        Self { method: Aggregation::FedAvg, local_epochs: 5, distill_epochs: 5, batch_size: 32, lr: 1e-3, alpha: 1.0 }
    }
}

impl FlRoundConfig {
    /// FedDF with longer local training.
    pub fn feddf() -> Self {
        Self { method: Aggregation::FedDF, local_epochs: 10, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        if self.method == Aggregation::FedDF && self.distill_epochs == 0 {
            return Err(Error::Config("FedDF needs distill_epochs >= 1".into()));
        }
        if self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        self.distill_config().validate()
    }

    fn distill_config(&self) -> DistillConfig {
        DistillConfig { alpha: self.alpha, epochs: self.distill_epochs, batch_size: self.batch_size, lr: self.lr }
    }
}

/// `epochs` shuffled minibatch passes of Adam over `shard`, starting from a
/// copy of `model` with fresh optimizer state.
pub fn local_train(
    model: &Model,
    shard: &LabeledDataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Model> {
    let mut local = model.clone();
    if shard.is_empty() {
        return Ok(local);
    }
    let mut opt = Adam::new(&local, lr);
    let mut rng = rng::stream(seed, &[rng::tag::LOCAL]);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let x = shard.features().select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&r| shard.labels()[r]).collect();
            train_step(&mut local, &mut opt, x.view(), &y)?;
        }
    }
    Ok(local)
}

/// Parameterwise mean of `locals`, weighted by shard size.
pub fn fedavg_aggregate(locals: &[(&Model, usize)]) -> Result<Model> {
    let (first, _) = *locals.first().ok_or(Error::EmptyDataset("models to aggregate"))?;
    if let Some((m, _)) = locals.iter().find(|(m, _)| !m.same_architecture(first)) {
        return Err(Error::Architecture(format!("cannot average {:?} with {:?}", m.dims(), first.dims())));
    }
    let total: usize = locals.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::EmptyDataset("all local shards"));
    }
    let mut out = first.clone();
    for (i, layer) in out.layers_mut().iter_mut().enumerate() {
        layer.weights.fill(0.0);
        layer.bias.fill(0.0);
        for (m, n) in locals {
            let w = *n as f64 / total as f64;
            layer.weights.scaled_add(w, &m.layers()[i].weights);
            layer.bias.scaled_add(w, &m.layers()[i].bias);
        }
    }
    Ok(out)
}

/// FedAvg followed by server-side distillation on `public` towards the
/// uniformly averaged logits of the local models.
pub fn feddf_round(
    locals: &[(&Model, usize)],
    public: &UnlabeledDataset,
    cfg: &FlRoundConfig,
    seed: u64,
) -> Result<Model> {
    if public.is_empty() {
        return Err(Error::EmptyDataset("FedDF public set"));
    }
    let student = fedavg_aggregate(locals)?;
    let teachers: Vec<&Model> = locals.iter().map(|(m, _)| *m).collect();
    let ensemble = TeacherEnsemble::new(teachers, &student.active_labels())?;
    let distilled = distill_with(
        &student,
        &ensemble,
        public,
        &cfg.distill_config(),
        TeacherWeighting::Uniform,
        rng::derive_seed(seed, &[rng::tag::FEDDF]),
    )?;
    Ok(distilled.model)
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub model: Model,
    /// No owner was recruited; the model was left unchanged.
    pub starved: bool,
}

/// One federated round: broadcast `model`, train locally on every owner in
/// parallel, aggregate. Owner shards are reduced to the model's active
/// classes. Each owner trains with its own stream derived from `seed`.
pub fn run_fl_round(
    model: &Model,
    owners: &[&DataOwner],
    cfg: &FlRoundConfig,
    public: Option<&UnlabeledDataset>,
    seed: u64,
) -> Result<RoundOutcome> {
    cfg.validate()?;
    if owners.is_empty() {
        log::info!("starvation: no owners recruited, model left unchanged");
        return Ok(RoundOutcome { model: model.clone(), starved: true });
    }
    let active = model.active_labels();
    let locals = owners
        .par_iter()
        .map(|o| {
            let shard =
                if o.labels.is_subset(&active) { o.shard.as_ref().clone() } else { o.shard.filter_labels(&active) };
            let trained = local_train(
                model,
                &shard,
                cfg.local_epochs,
                cfg.batch_size,
                cfg.lr,
                rng::derive_seed(seed, &[o.id as u64]),
            )?;
            Ok((trained, shard.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&Model, usize)> = locals.iter().map(|(m, n)| (m, *n)).collect();
    if refs.iter().all(|(_, n)| *n == 0) {
        log::info!("starvation: recruited owners hold no relevant samples");
        return Ok(RoundOutcome { model: model.clone(), starved: true });
    }
    let aggregated = match cfg.method {
        Aggregation::FedAvg => fedavg_aggregate(&refs)?,
        Aggregation::FedDF => {
            let public = public.ok_or(Error::EmptyDataset("FedDF public set"))?;
            feddf_round(&refs, public, cfg, seed)?
        }
    };
    Ok(RoundOutcome { model: aggregated, starved: false })
}

/// Fraction of `shard` whose label is the argmax over the `restrict_to`
/// classes (lowest class id on ties).
pub fn evaluate(model: &Model, shard: &LabeledDataset, restrict_to: &LabelSet) -> Result<f64> {
    if shard.is_empty() {
        return Err(Error::EmptyDataset("evaluation shard"));
    }
    if restrict_to.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&c) = restrict_to.iter().find(|&&c| !model.is_active(c)) {
        return Err(Error::LabelNotActive { label: c });
    }
    let mask: Vec<bool> = (0..model.num_classes()).map(|c| restrict_to.contains(&c)).collect();
    let logits = model.forward(shard.features().view())?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(shard.labels())
        .filter(|(row, &y)| argmax_masked(row.as_slice().expect("standard layout"), &mask) == Some(y))
        .count();
    Ok(correct as f64 / shard.len() as f64)
}
