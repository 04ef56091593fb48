//! Market entities, bid history and owner-to-consumer matching.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::{rng, LabelSet};

/// A device holding a labeled training shard.
#[derive(Debug, Clone)]
pub struct DataOwner {
    pub id: usize,
    pub shard: Arc<LabeledDataset>,
    pub labels: LabelSet,
}

impl DataOwner {
    pub fn new(id: usize, shard: Arc<LabeledDataset>) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::EmptyDataset("owner shard"));
        }
        let labels = shard.label_set();
        Ok(Self { id, shard, labels })
    }
}

/// A party training a model for the classes in `labels`.
///
/// Synthetic consumers stand in for alliances: they bid and train like real
/// ones but never join alliances and their bids are not kept in the history.
#[derive(Debug, Clone)]
pub struct DataConsumer {
    pub id: usize,
    pub labels: LabelSet,
    pub model: Model,
    /// Model trained on the owners outside this consumer's alliances.
    pub expert: Option<Model>,
    pub validation: Arc<LabeledDataset>,
    pub budget: f64,
    pub is_synthetic: bool,
}

impl DataConsumer {
    /// Bids 1.0 on every owner sharing at least one class with the task,
    /// except the owners in `excluded`.
    pub fn interest_bids(&self, owners: &[DataOwner], excluded: &[usize]) -> Vec<f64> {
        owners
            .iter()
            .map(|o| {
                let wanted = !o.labels.is_disjoint(&self.labels) && !excluded.contains(&o.id);
                if wanted {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Nonnegative bids, one row per consumer and one column per owner.
#[derive(Debug, Clone, PartialEq)]
pub struct BidMatrix(Array2<f64>);

impl BidMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(((i, o), v)) = entries.indexed_iter().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidBids(format!("bid of consumer {i} for owner {o} is {v}")));
        }
        Ok(Self(entries))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("bid rows of unequal length".into()));
        }
        let flat = rows.into_iter().flatten().collect();
        Self::new(Array2::from_shape_vec((m, n), flat).map_err(|e| Error::Shape(e.to_string()))?)
    }

    pub fn zeros(consumers: usize, owners: usize) -> Self {
        Self(Array2::zeros((consumers, owners)))
    }

    pub fn consumers(&self) -> usize {
        self.0.nrows()
    }

    pub fn owners(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, consumer: usize, owner: usize) -> f64 {
        self.0[[consumer, owner]]
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    /// The first `m` rows.
    pub fn head(&self, m: usize) -> BidMatrix {
        BidMatrix(self.0.slice(ndarray::s![..m, ..]).to_owned())
    }

    pub fn bidders(&self, owner: usize) -> Vec<usize> {
        (0..self.consumers()).filter(|&i| self.0[[i, owner]] > 0.0).collect()
    }
}

/// Ring buffer of the last `k` bid matrices of the real consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct BiddingHistory {
    window: Vec<BidMatrix>,
}

impl BiddingHistory {
    /// `k` zero matrices of shape `consumers × owners`.
    pub fn new(k: usize, consumers: usize, owners: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("bidding history span must be >= 1".into()));
        }
        Ok(Self { window: vec![BidMatrix::zeros(consumers, owners); k] })
    }

    pub fn span(&self) -> usize {
        self.window.len()
    }

    pub fn slot(&self, i: usize) -> &BidMatrix {
        &self.window[i]
    }

    /// Stores `bids` in slot `round mod k`.
    pub fn record_bids(&mut self, round: usize, bids: &BidMatrix) -> Result<()> {
        let shape = (self.window[0].consumers(), self.window[0].owners());
        if (bids.consumers(), bids.owners()) != shape {
            return Err(Error::Shape(format!(
                "bids are {}x{}, history holds {}x{}",
                bids.consumers(),
                bids.owners(),
                shape.0,
                shape.1
            )));
        }
        let k = self.span();
        self.window[round % k] = bids.clone();
        Ok(())
    }

    /// Elementwise maximum over the stored rounds.
    pub fn max_bid_matrix(&self) -> BidMatrix {
        let mut out = self.window[0].0.clone();
        for m in &self.window[1..] {
            ndarray::Zip::from(&mut out).and(&m.0).for_each(|a, &b| *a = a.max(b));
        }
        BidMatrix(out)
    }
}

/// Owner id → consumer id. Consumer ids past the real consumers denote
/// synthetic (alliance) consumers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pub assignment: BTreeMap<usize, usize>,
}

impl Matching {
    pub fn owners_of(&self, consumer: usize) -> Vec<usize> {
        self.assignment.iter().filter(|(_, &c)| c == consumer).map(|(&o, _)| o).collect()
    }

    pub fn consumer_of(&self, owner: usize) -> Option<usize> {
        self.assignment.get(&owner).copied()
    }
}

/// How the platform turns bids into a matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// Contested owners are split uniformly at random, `per_dc` per bidder.
    RandomPartition { per_dc: usize },
    /// Highest affordable bid wins each owner; winners pay their bid.
    FirstPrice,
}

impl Default for Mechanism {
    fn default() -> Self {
        Mechanism::RandomPartition { per_dc: 2 }
    }
}

/// Splits `contested` owners uniformly among `consumers`, exactly `per_dc`
/// each, and hands every uncontested owner to its single bidder.
pub fn match_random_partition(
    contested: &[usize],
    consumers: &[usize],
    per_dc: usize,
    uncontested: &BTreeMap<usize, usize>,
    seed: u64,
) -> Result<Matching> {
    if contested.len() != per_dc * consumers.len() {
        return Err(Error::Config(format!(
            "{} contested owners cannot be split into {} per consumer across {} consumers",
            contested.len(),
            per_dc,
            consumers.len()
        )));
    }
    let mut assignment = uncontested.clone();
    let mut pool = contested.to_vec();
    pool.sort_unstable();
    pool.shuffle(&mut rng::stream(seed, &[rng::tag::MATCHING]));
    for (chunk, &c) in pool.chunks(per_dc.max(1)).zip(consumers) {
        for &o in chunk {
            if assignment.insert(o, c).is_some() {
                return Err(Error::Config(format!("owner {o} is both contested and uncontested")));
            }
        }
    }
    Ok(Matching { assignment })
}

/// Greedy first-price matching over owners in index order. Each owner goes
/// to the highest positive bid its bidder can still pay (lowest consumer
/// index on ties); the winner's budget drops by the bid.
pub fn match_first_price(bids: &BidMatrix, budgets: &mut [f64]) -> Result<Matching> {
    if budgets.len() != bids.consumers() {
        return Err(Error::Shape(format!("{} budgets for {} bidders", budgets.len(), bids.consumers())));
    }
    let mut assignment = BTreeMap::new();
    for o in 0..bids.owners() {
        let mut winner: Option<(usize, f64)> = None;
        for (i, budget) in budgets.iter().enumerate() {
            let b = bids.get(i, o);
            if b > 0.0 && b <= *budget && winner.is_none_or(|(_, best)| b > best) {
                winner = Some((i, b));
            }
        }
        if let Some((i, b)) = winner {
            budgets[i] -= b;
            assignment.insert(o, i);
        }
    }
    Ok(Matching { assignment })
}
