use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExpertInit, Scenario, ScenarioConfig};
use crate::alliance::{instantiate, Alliance, AllianceEngine, Architecture, BudgetLedger, ConsumerProfile};
use crate::dataset::{build_market_partition, LabeledDataset, MarketPartition, UnlabeledDataset};
use crate::distill::{distill_train, TeacherEnsemble};
use crate::error::Result;
use crate::fed::{evaluate, run_fl_round};
use crate::market::{
    match_first_price, match_random_partition, BidMatrix, BiddingHistory, DataConsumer, DataOwner, Mechanism,
};
use crate::nn::Model;
use crate::rng;

/// One consumer's state after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub dc_id: usize,
    pub val_acc: f64,
    /// Test accuracy of the best-validation snapshot so far.
    pub test_acc: f64,
    pub best_round: usize,
    pub recruited: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllianceRecord {
    pub uid: u64,
    /// Rounds completed when the alliance was created.
    pub round: usize,
    /// Id of the synthetic consumer standing in for the alliance.
    pub consumer_id: usize,
    pub participants: Vec<usize>,
    pub labels: Vec<usize>,
    pub output_labels: Vec<usize>,
    pub contested: Vec<usize>,
    pub value: u64,
    pub payments: BTreeMap<usize, f64>,
    pub budget: f64,
    pub effective_budgets: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllianceRoundRecord {
    pub round: usize,
    pub uid: u64,
    pub val_acc: f64,
    pub recruited: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub scenario: Scenario,
    pub seed: u64,
    pub rounds: usize,
    pub consumers: usize,
    /// Ordered by round, then consumer id.
    pub records: Vec<RoundRecord>,
    pub alliances: Vec<AllianceRecord>,
    pub alliance_rounds: Vec<AllianceRoundRecord>,
}

impl MetricsTrace {
    pub fn round(&self, round: usize) -> &[RoundRecord] {
        let start = (round - 1) * self.consumers;
        &self.records[start..start + self.consumers]
    }

    /// Mean best-snapshot test accuracy over consumers after `round`.
    pub fn mean_acc(&self, round: usize) -> f64 {
        let rows = self.round(round);
        rows.iter().map(|r| r.test_acc).sum::<f64>() / rows.len() as f64
    }

    pub fn final_records(&self) -> &[RoundRecord] {
        self.round(self.rounds)
    }

    pub fn final_mean_acc(&self) -> f64 {
        self.mean_acc(self.rounds)
    }
}

/// Loads data, partitions it and runs the configured scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsTrace> {
    cfg.validate()?;
    let spec = cfg.partition_spec();
    let base = cfg.data.load(&spec, cfg.seed, &cfg.base_dir)?;
    let partition = build_market_partition(&spec, &base)?;
    run_on_partition(cfg, &partition)
}

/// Runs the scenario on an existing partition.
pub fn run_on_partition(cfg: &ScenarioConfig, partition: &MarketPartition) -> Result<MetricsTrace> {
    cfg.validate()?;
    let mut sim = Simulation::new(cfg, partition)?;
    for round in 1..=cfg.rounds {
        sim.step(round)?;
    }
    Ok(sim.trace)
}

struct RealDc {
    dc: DataConsumer,
    test: LabeledDataset,
    best: Option<(f64, f64, usize)>,
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    arch: Architecture,
    owners: Vec<DataOwner>,
    real: Vec<RealDc>,
    alliances: Vec<Alliance>,
    public: &'a UnlabeledDataset,
    history: BiddingHistory,
    engine: AllianceEngine,
    ledger: BudgetLedger,
    /// Recruited owners, real consumers first, then alliances.
    recruited: Vec<Vec<usize>>,
    trace: MetricsTrace,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a ScenarioConfig, p: &'a MarketPartition) -> Result<Self> {
        let first = &p.owners.first().ok_or(crate::Error::EmptyDataset("owners"))?.data;
        let arch =
            Architecture { input_dim: first.dim(), hidden: cfg.model.hidden.clone(), num_classes: first.num_classes() };
        let owners =
            p.owners.iter().map(|o| DataOwner::new(o.id, Arc::new(o.data.clone()))).collect::<Result<Vec<_>>>()?;
        let real = p
            .consumers
            .iter()
            .map(|c| {
                let mut init = rng::stream(cfg.seed, &[rng::tag::INIT, c.id as u64]);
                let model = Model::new(arch.input_dim, &arch.hidden, arch.num_classes, &c.labels, &mut init)?;
                let dc = DataConsumer {
                    id: c.id,
                    labels: c.labels.clone(),
                    model,
                    expert: None,
                    validation: Arc::new(c.validation.clone()),
                    budget: cfg.market.budget,
                    is_synthetic: false,
                };
                Ok(RealDc { dc, test: c.test.clone(), best: None })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = real.len();
        Ok(Self {
            cfg,
            arch,
            history: BiddingHistory::new(cfg.history_span, m, owners.len())?,
            owners,
            ledger: BudgetLedger::new(real.iter().map(|r| (r.dc.id, r.dc.budget))),
            real,
            alliances: Vec::new(),
            public: &p.public,
            engine: AllianceEngine::new(cfg.alliance.thresholds()),
            recruited: vec![Vec::new(); m],
            trace: MetricsTrace {
                scenario: cfg.scenario,
                seed: cfg.seed,
                rounds: cfg.rounds,
                consumers: m,
                records: Vec::new(),
                alliances: Vec::new(),
                alliance_rounds: Vec::new(),
            },
        })
    }

    fn seed(&self, tags: &[u64]) -> u64 {
        rng::derive_seed(self.cfg.seed, tags)
    }

    fn step(&mut self, round: usize) -> Result<()> {
        let cfg = self.cfg;
        let completed = round - 1;
        let mut created = false;
        if cfg.scenario == Scenario::Fedcdc
            && completed >= cfg.alliance_start
            && (completed - cfg.alliance_start).is_multiple_of(cfg.matching_period)
        {
            created = self.create_alliances(completed)?;
        }
        let bids = self.bids();
        self.history.record_bids(completed, &bids.head(self.real.len()))?;
        if completed.is_multiple_of(cfg.matching_period) || created {
            self.recruited = self.matching(&bids, round)?;
        }
        self.train(round)?;
        self.merge(round)?;
        self.evaluate(round)
    }

    fn alliances_of(&self, consumer: usize) -> impl Iterator<Item = &Alliance> {
        self.alliances.iter().filter(move |a| a.candidate.participants.contains(&consumer))
    }

    fn bids(&self) -> BidMatrix {
        let mut rows: Vec<Vec<f64>> = self
            .real
            .iter()
            .map(|r| {
                let excluded: Vec<usize> =
                    self.alliances_of(r.dc.id).flat_map(|a| a.candidate.contested.iter().copied()).collect();
                r.dc.interest_bids(&self.owners, &excluded)
            })
            .collect();
        rows.extend(self.alliances.iter().map(|a| {
            self.owners.iter().map(|o| if a.candidate.contested.contains(&o.id) { 1.0 } else { 0.0 }).collect()
        }));
        BidMatrix::from_rows(rows).expect("interest bids are 0 or 1")
    }

    fn matching(&self, bids: &BidMatrix, round: usize) -> Result<Vec<Vec<usize>>> {
        let n = bids.consumers();
        let mut out = vec![Vec::new(); n];
        if self.cfg.scenario == Scenario::Unrestricted {
            for o in 0..bids.owners() {
                for i in bids.bidders(o) {
                    out[i].push(o);
                }
            }
            return Ok(out);
        }
        let assignment = match self.cfg.market.mechanism {
            Mechanism::RandomPartition { per_dc } => {
                let mut uncontested = BTreeMap::new();
                let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
                for o in 0..bids.owners() {
                    match bids.bidders(o).as_slice() {
                        [] => {}
                        [only] => {
                            uncontested.insert(o, *only);
                        }
                        many => groups.entry(many.to_vec()).or_default().push(o),
                    }
                }
                let mut assignment = uncontested;
                for (g, (bidders, owners)) in groups.iter().enumerate() {
                    let seed = self.seed(&[rng::tag::MATCHING, round as u64, g as u64]);
                    if owners.len() == per_dc * bidders.len() {
                        let m = match_random_partition(owners, bidders, per_dc, &BTreeMap::new(), seed)?;
                        assignment.extend(m.assignment);
                    } else {
                        log::warn!(
                            "{} owners contested by {bidders:?} do not split {per_dc} each; dealing them out in turn",
                            owners.len()
                        );
                        let mut pool = owners.clone();
                        pool.shuffle(&mut rng::stream(seed, &[]));
                        for (k, o) in pool.into_iter().enumerate() {
                            assignment.insert(o, bidders[k % bidders.len()]);
                        }
                    }
                }
                assignment
            }
            Mechanism::FirstPrice => {
                let mut budgets: Vec<f64> = self
                    .real
                    .iter()
                    .map(|r| r.dc.budget)
                    .chain(self.alliances.iter().map(|a| a.consumer.budget))
                    .collect();
                match_first_price(bids, &mut budgets)?.assignment
            }
        };
        for (o, i) in assignment {
            out[i].push(o);
        }
        Ok(out)
    }

    fn owner_refs(&self, consumer: usize) -> Vec<&DataOwner> {
        self.recruited[consumer].iter().map(|&o| &self.owners[o]).collect()
    }

    fn train(&mut self, round: usize) -> Result<()> {
        let cfg = self.cfg;
        let m = self.real.len();
        // Participants train an expert on their remaining owners; everyone
        // else trains their model directly.
        let starts: Vec<Model> = self
            .real
            .iter()
            .map(|r| {
                if self.alliances_of(r.dc.id).next().is_none() {
                    return r.dc.model.clone();
                }
                match (cfg.alliance.expert, &r.dc.expert) {
                    (ExpertInit::Persistent, Some(e)) => e.clone(),
                    _ => r.dc.model.clone(),
                }
            })
            .chain(self.alliances.iter().map(|a| a.consumer.model.clone()))
            .collect();
        let trained = starts
            .par_iter()
            .enumerate()
            .map(|(i, model)| {
                let seed = self.seed(&[rng::tag::LOCAL, round as u64, i as u64]);
                run_fl_round(model, &self.owner_refs(i), &cfg.fl, Some(self.public), seed).map(|o| o.model)
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, model) in trained.into_iter().enumerate() {
            if i >= m {
                self.alliances[i - m].consumer.model = model;
            } else if self.alliances_of(self.real[i].dc.id).next().is_some() {
                self.real[i].dc.expert = Some(model);
            } else {
                self.real[i].dc.model = model;
            }
        }
        Ok(())
    }

    /// Distills each participant's alliance models and expert into its model.
    fn merge(&mut self, round: usize) -> Result<()> {
        let merged = self
            .real
            .par_iter()
            .map(|r| {
                let Some(expert) = &r.dc.expert else { return Ok(None) };
                let mut teachers: Vec<&Model> = self.alliances_of(r.dc.id).map(|a| &a.consumer.model).collect();
                if teachers.is_empty() {
                    return Ok(None);
                }
                teachers.push(expert);
                let ensemble = TeacherEnsemble::new(teachers, &r.dc.labels)?;
                let seed = self.seed(&[rng::tag::DISTILL, round as u64, r.dc.id as u64]);
                Ok(Some(distill_train(&r.dc.model, &ensemble, self.public, &self.cfg.distill, seed)?.model))
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, m) in self.real.iter_mut().zip(merged) {
            if let Some(m) = m {
                r.dc.model = m;
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, round: usize) -> Result<()> {
        for (i, r) in self.real.iter_mut().enumerate() {
            let val = evaluate(&r.dc.model, &r.dc.validation, &r.dc.labels)?;
            if r.best.is_none_or(|(best, _, _)| val > best) {
                r.best = Some((val, evaluate(&r.dc.model, &r.test, &r.dc.labels)?, round));
            }
            let (_, test, best_round) = r.best.expect("set above");
            self.trace.records.push(RoundRecord {
                round,
                dc_id: r.dc.id,
                val_acc: val,
                test_acc: test,
                best_round,
                recruited: self.recruited[i].clone(),
            });
        }
        let m = self.real.len();
        for (k, a) in self.alliances.iter().enumerate() {
            let val_acc = if a.consumer.validation.is_empty() {
                0.0
            } else {
                evaluate(&a.consumer.model, &a.consumer.validation, &a.candidate.labels)?
            };
            self.trace.alliance_rounds.push(AllianceRoundRecord {
                round,
                uid: a.uid(),
                val_acc,
                recruited: self.recruited[m + k].clone(),
            });
        }
        Ok(())
    }

    fn create_alliances(&mut self, completed: usize) -> Result<bool> {
        let profiles: Vec<ConsumerProfile> = self.real.iter().map(|r| ConsumerProfile::from(&r.dc)).collect();
        let outcome = self.engine.create(&profiles, &self.history, self.cfg.alliance.policy.policy())?;
        log::info!(
            "round {completed}: {} candidates, {} accepted, {} selected",
            outcome.candidates.len(),
            outcome.offers.accepted.len(),
            outcome.selected.len()
        );
        let reals: Vec<DataConsumer> = self.real.iter().map(|r| r.dc.clone()).collect();
        let (next_id, seed) = (self.real.len() + self.alliances.len(), self.seed(&[rng::tag::ALLIANCE]));
        let created = instantiate(
            &outcome.selected,
            &reals,
            &mut self.ledger,
            self.cfg.alliance.budget_share,
            &self.arch,
            next_id,
            seed,
        )?;
        self.engine.register(&created);
        for a in &created {
            let participants: BTreeSet<usize> = a.candidate.participants.clone();
            self.trace.alliances.push(AllianceRecord {
                uid: a.uid(),
                round: completed,
                consumer_id: a.consumer.id,
                participants: participants.iter().copied().collect(),
                labels: a.candidate.labels.iter().copied().collect(),
                output_labels: a.output_labels().into_iter().collect(),
                contested: a.candidate.contested.iter().copied().collect(),
                value: a.value(),
                payments: a.payments.clone(),
                budget: a.budget(),
                effective_budgets: participants.iter().map(|&p| (p, self.ledger.effective_budget(p))).collect(),
            });
            for r in self.real.iter_mut().filter(|r| participants.contains(&r.dc.id)) {
                if r.dc.expert.is_none() {
                    r.dc.expert = Some(r.dc.model.clone());
                }
            }
        }
        let any = !created.is_empty();
        self.alliances.extend(created);
        self.recruited.resize(self.real.len() + self.alliances.len(), Vec::new());
        Ok(any)
    }
}
