use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::{rng, ClassId, LabelSet};

/// Sizes of the competitive-market partition.
///
/// Every consumer wants `n_c` classes, half of which are shared by all
/// consumers. Owners form `n_dc + 1` equally sized groups: group 0 holds the
/// shared classes and group `i + 1` holds the classes only consumer `i` wants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub n_dc: usize,
    pub n_do: usize,
    pub n_c: usize,
    pub samples_per_owner: usize,
    pub samples_per_validation: usize,
    pub samples_per_test: usize,
    pub public_samples: usize,
    /// Set by the simulator from the scenario seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            n_dc: 3,
            n_do: 24,
            n_c: 4,
            samples_per_owner: 1000,
            samples_per_validation: 2000,
            samples_per_test: 2000,
            public_samples: 5000,
            seed: 0,
        }
    }
}

/// One owner's training shard.
#[derive(Debug, Clone)]
pub struct OwnerShard {
    pub id: usize,
    pub group: usize,
    pub labels: LabelSet,
    pub data: LabeledDataset,
    /// Rows of the base dataset used by this shard.
    pub source_rows: Vec<usize>,
}

/// A consumer's task and its held-out shards.
#[derive(Debug, Clone)]
pub struct ConsumerShards {
    pub id: usize,
    pub labels: LabelSet,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    pub validation_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MarketPartition {
    pub shared_labels: LabelSet,
    /// Label set of each owner group; index 0 is the shared group.
    pub group_labels: Vec<LabelSet>,
    pub owners: Vec<OwnerShard>,
    pub consumers: Vec<ConsumerShards>,
    pub public: UnlabeledDataset,
    pub public_rows: Vec<usize>,
}

/// Splits `total` into `parts` near-equal counts, larger ones first.
fn split(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

impl PartitionSpec {
    pub fn half(&self) -> usize {
        self.n_c / 2
    }

    pub fn groups(&self) -> usize {
        self.n_dc + 1
    }

    pub fn owners_per_group(&self) -> usize {
        self.n_do / self.groups()
    }

    /// Number of distinct classes the partition touches besides the public pool.
    pub fn classes_needed(&self) -> usize {
        self.half() * self.groups()
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.n_dc < 1 {
            return Err(Error::Config("need at least one consumer".into()));
        }
        if self.n_c < 2 || !self.n_c.is_multiple_of(2) {
            return Err(Error::Config(format!("n_c must be even and >= 2, got {}", self.n_c)));
        }
        if self.n_do == 0 || !self.n_do.is_multiple_of(self.groups()) {
            return Err(Error::Config(format!(
                "n_do = {} is not divisible into {} owner groups",
                self.n_do,
                self.groups()
            )));
        }
        if self.classes_needed() > num_classes {
            return Err(Error::Config(format!(
                "{} consumers with n_c = {} need {} classes, dataset has {num_classes}",
                self.n_dc,
                self.n_c,
                self.classes_needed()
            )));
        }
        if self.samples_per_owner < self.half()
            || self.samples_per_validation < self.n_c
            || self.samples_per_test < self.n_c
        {
            return Err(Error::Config("every shard needs at least one sample per class".into()));
        }
        Ok(())
    }

    /// Shared labels and the label set of each owner group, drawn from a
    /// seeded permutation of the classes.
    pub fn group_labels(&self, num_classes: usize) -> Vec<LabelSet> {
        let mut classes: Vec<ClassId> = (0..num_classes).collect();
        classes.shuffle(&mut rng::stream(self.seed, &[rng::tag::PARTITION, 0]));
        classes.chunks(self.half()).take(self.groups()).map(|c| c.iter().copied().collect()).collect()
    }

    /// Samples of each class the partition consumes.
    pub fn demand_per_class(&self, num_classes: usize) -> Vec<usize> {
        let groups = self.group_labels(num_classes);
        let mut demand = vec![0; num_classes];
        for (g, labels) in groups.iter().enumerate() {
            let owners = self.owners_per_group();
            for (c, n) in labels.iter().zip(split(self.samples_per_owner, self.half())) {
                demand[*c] += owners * n;
            }
            let consumers: Vec<usize> = if g == 0 { (0..self.n_dc).collect() } else { vec![g - 1] };
            for i in consumers {
                let task = consumer_labels(&groups, i);
                for size in [self.samples_per_validation, self.samples_per_test] {
                    for (c, n) in task.iter().zip(split(size, self.n_c)) {
                        if labels.contains(c) {
                            demand[*c] += n;
                        }
                    }
                }
            }
        }
        for (c, n) in split(self.public_samples, num_classes).into_iter().enumerate() {
            demand[c] += n;
        }
        demand
    }
}

fn consumer_labels(groups: &[LabelSet], consumer: usize) -> LabelSet {
    groups[0].union(&groups[consumer + 1]).copied().collect()
}

/// Carves disjoint owner, validation, test and public shards out of `base`.
pub fn build_market_partition(spec: &PartitionSpec, base: &LabeledDataset) -> Result<MarketPartition> {
    let k = base.num_classes();
    spec.validate(k)?;
    let groups = spec.group_labels(k);

    let counts = base.class_counts();
    for (c, need) in spec.demand_per_class(k).into_iter().enumerate() {
        if need > counts[c] {
            return Err(Error::Config(format!("class {c} has {} samples, the partition needs {need}", counts[c])));
        }
    }

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (row, &y) in base.labels().iter().enumerate() {
        pools[y].push(row);
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        pool.shuffle(&mut rng::stream(spec.seed, &[rng::tag::PARTITION, 1, c as u64]));
    }
    let mut cursors = vec![0usize; k];
    let mut draw = |labels: &LabelSet, total: usize| -> Vec<usize> {
        let mut rows = Vec::with_capacity(total);
        for (c, n) in labels.iter().zip(split(total, labels.len())) {
            rows.extend_from_slice(&pools[*c][cursors[*c]..cursors[*c] + n]);
            cursors[*c] += n;
        }
        rows
    };

    let per_group = spec.owners_per_group();
    let owners = (0..spec.n_do)
        .map(|id| {
            let group = id / per_group;
            let labels = groups[group].clone();
            let source_rows = draw(&labels, spec.samples_per_owner);
            OwnerShard { id, group, data: base.subset(&source_rows), labels, source_rows }
        })
        .collect();

    let tasks: Vec<LabelSet> = (0..spec.n_dc).map(|i| consumer_labels(&groups, i)).collect();
    let validation_rows: Vec<Vec<usize>> = tasks.iter().map(|l| draw(l, spec.samples_per_validation)).collect();
    let test_rows: Vec<Vec<usize>> = tasks.iter().map(|l| draw(l, spec.samples_per_test)).collect();
    let consumers = tasks
        .into_iter()
        .zip(validation_rows)
        .zip(test_rows)
        .enumerate()
        .map(|(id, ((labels, validation_rows), test_rows))| ConsumerShards {
            id,
            labels,
            validation: base.subset(&validation_rows),
            test: base.subset(&test_rows),
            validation_rows,
            test_rows,
        })
        .collect();

    let all: LabelSet = (0..k).collect();
    let public_rows = draw(&all, spec.public_samples);
    let public = base.subset(&public_rows).strip_labels();

    Ok(MarketPartition {
        shared_labels: groups[0].clone(),
        group_labels: groups,
        owners,
        consumers,
        public,
        public_rows,
    })
}
