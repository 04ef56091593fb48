//! Alliance detection and creation.
//!
//! Consumers that share at least `n_l_min` classes and have all bid on the
//! same `n_delta_min` owners within the history window are alliance
//! candidates. Each consumer sees the candidates it would join (without the
//! other members' identities), accepts some and flags pairs it does not want
//! to hold simultaneously. Among the unanimously accepted candidates the
//! platform picks the conflict-free set of maximum total value
//! `|participants| · |shared labels| · |contested owners|`, a maximum-weight
//! clique in the compatibility graph.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::market::{BiddingHistory, DataConsumer};
use crate::maxclique::{self, WeightedGraph};
use crate::nn::Model;
use crate::{rng, LabelSet};

pub const MAX_CONSUMERS: usize = 20;

pub type Uid = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub n_l_min: usize,
    pub n_delta_min: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { n_l_min: 2, n_delta_min: 2 }
    }
}

/// What alliance detection needs to know about a consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerProfile {
    pub id: usize,
    pub labels: LabelSet,
    pub is_synthetic: bool,
}

impl From<&DataConsumer> for ConsumerProfile {
    fn from(c: &DataConsumer) -> Self {
        Self { id: c.id, labels: c.labels.clone(), is_synthetic: c.is_synthetic }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllianceCandidate {
    pub uid: Uid,
    pub participants: BTreeSet<usize>,
    pub labels: LabelSet,
    pub contested: BTreeSet<usize>,
}

impl AllianceCandidate {
    fn key(&self) -> (BTreeSet<usize>, LabelSet) {
        (self.participants.clone(), self.labels.clone())
    }
}

/// `|participants| · |shared labels| · |contested owners|`.
pub fn candidate_value(c: &AllianceCandidate) -> u64 {
    (c.participants.len() * c.labels.len() * c.contested.len()) as u64
}

/// Hands out fresh candidate ids.
#[derive(Debug, Clone, Default)]
pub struct UidSource {
    next: Uid,
}

impl UidSource {
    pub fn fresh(&mut self) -> Uid {
        self.next += 1;
        self.next
    }
}

/// One candidate per subset of two or more real consumers whose shared
/// labels and commonly bid-on owners both reach the thresholds. Rows of
/// `history` are the consumers in slice order; subsets are produced in
/// increasing bitmask order.
pub fn enumerate_candidates(
    consumers: &[ConsumerProfile],
    history: &BiddingHistory,
    thresholds: Thresholds,
    uids: &mut UidSource,
) -> Result<Vec<AllianceCandidate>> {
    let m = consumers.len();
    if m > MAX_CONSUMERS {
        return Err(Error::GuardExceeded { what: "consumers for subset enumeration", got: m, limit: MAX_CONSUMERS });
    }
    if let Some(c) = consumers.iter().find(|c| c.is_synthetic) {
        return Err(Error::Config(format!("synthetic consumer {} cannot join alliances", c.id)));
    }
    let max_bids = history.max_bid_matrix();
    if max_bids.consumers() != m {
        return Err(Error::Shape(format!("history has {} consumer rows, {m} consumers given", max_bids.consumers())));
    }
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << m) {
        if mask.count_ones() < 2 {
            continue;
        }
        let members: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let labels = members[1..].iter().fold(consumers[members[0]].labels.clone(), |acc, &i| {
            acc.intersection(&consumers[i].labels).copied().collect()
        });
        if labels.len() < thresholds.n_l_min {
            continue;
        }
        let contested: BTreeSet<usize> = (0..max_bids.owners())
            .filter(|&o| members.iter().map(|&i| max_bids.get(i, o)).product::<f64>() != 0.0)
            .collect();
        if contested.len() < thresholds.n_delta_min {
            continue;
        }
        out.push(AllianceCandidate {
            uid: uids.fresh(),
            participants: members.iter().map(|&i| consumers[i].id).collect(),
            labels,
            contested,
        });
    }
    Ok(out)
}

/// Candidate metadata shown to a consumer: member count, not identities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonymizedOffer {
    pub uid: Uid,
    pub participant_count: usize,
    pub labels: LabelSet,
    pub contested: BTreeSet<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DcResponse {
    pub accepted: BTreeSet<Uid>,
    pub rejected_pairs: BTreeSet<(Uid, Uid)>,
}

/// A consumer's decision rule for alliance offers.
pub trait AcceptancePolicy: Sync {
    fn respond(&self, consumer: &ConsumerProfile, offers: &[AnonymizedOffer]) -> DcResponse;
}

/// Accepts every offer and never flags conflicts.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl AcceptancePolicy for AcceptAll {
    fn respond(&self, _: &ConsumerProfile, offers: &[AnonymizedOffer]) -> DcResponse {
        DcResponse { accepted: offers.iter().map(|o| o.uid).collect(), rejected_pairs: BTreeSet::new() }
    }
}

/// Accepts every offer; flags two offers as conflicting when their label
/// sets overlap in at least half of the smaller one.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelOverlapPolicy;

impl AcceptancePolicy for LabelOverlapPolicy {
    fn respond(&self, _: &ConsumerProfile, offers: &[AnonymizedOffer]) -> DcResponse {
        let mut rejected_pairs = BTreeSet::new();
        for (i, a) in offers.iter().enumerate() {
            for b in &offers[i + 1..] {
                let overlap = a.labels.intersection(&b.labels).count();
                let smaller = a.labels.len().min(b.labels.len());
                if 2 * overlap >= smaller {
                    rejected_pairs.insert(ordered(a.uid, b.uid));
                }
            }
        }
        DcResponse { accepted: offers.iter().map(|o| o.uid).collect(), rejected_pairs }
    }
}

fn ordered(a: Uid, b: Uid) -> (Uid, Uid) {
    (a.min(b), a.max(b))
}

#[derive(Debug, Clone, Default)]
pub struct OfferOutcome {
    pub accepted: Vec<AllianceCandidate>,
    pub conflicts: BTreeSet<(Uid, Uid)>,
    /// Consumers whose response referenced uids they were never offered.
    pub invalid_responses: Vec<usize>,
}

/// Sends each consumer its anonymized offers and gathers responses. A
/// candidate survives only if all its participants accept it. A response
/// that references an unknown uid is discarded as a whole, which counts as
/// accepting nothing.
pub fn offer_and_collect(
    candidates: &[AllianceCandidate],
    consumers: &[ConsumerProfile],
    policy: &dyn AcceptancePolicy,
) -> OfferOutcome {
    let mut approvals: BTreeMap<Uid, usize> = BTreeMap::new();
    let mut outcome = OfferOutcome::default();
    for consumer in consumers.iter().filter(|c| !c.is_synthetic) {
        let offers: Vec<AnonymizedOffer> = candidates
            .iter()
            .filter(|c| c.participants.contains(&consumer.id))
            .map(|c| AnonymizedOffer {
                uid: c.uid,
                participant_count: c.participants.len(),
                labels: c.labels.clone(),
                contested: c.contested.clone(),
            })
            .collect();
        let offered: BTreeSet<Uid> = offers.iter().map(|o| o.uid).collect();
        let response = policy.respond(consumer, &offers);
        let valid = response.accepted.is_subset(&offered)
            && response.rejected_pairs.iter().all(|(a, b)| offered.contains(a) && offered.contains(b));
        if !valid {
            log::warn!("consumer {} answered with uids it was not offered; response discarded", consumer.id);
            outcome.invalid_responses.push(consumer.id);
            continue;
        }
        for uid in response.accepted {
            *approvals.entry(uid).or_default() += 1;
        }
        outcome.conflicts.extend(response.rejected_pairs.into_iter().map(|(a, b)| ordered(a, b)));
    }
    outcome.accepted = candidates
        .iter()
        .filter(|c| approvals.get(&c.uid).copied().unwrap_or(0) == c.participants.len())
        .cloned()
        .collect();
    outcome
}

/// Compatibility graph of `accepted` (node weight = candidate value, edge =
/// not flagged as conflicting).
pub fn compatibility_graph(accepted: &[AllianceCandidate], conflicts: &BTreeSet<(Uid, Uid)>) -> WeightedGraph {
    let weights = accepted.iter().map(candidate_value).collect();
    let mut g = WeightedGraph::new(weights).expect("candidate values are >= 1");
    for (i, a) in accepted.iter().enumerate() {
        for (j, b) in accepted.iter().enumerate().skip(i + 1) {
            if !conflicts.contains(&ordered(a.uid, b.uid)) {
                g.add_edge(i, j).expect("indices in range");
            }
        }
    }
    g
}

/// Conflict-free subset of `accepted` with maximum total value.
pub fn select_alliances(accepted: &[AllianceCandidate], conflicts: &BTreeSet<(Uid, Uid)>) -> Vec<AllianceCandidate> {
    let g = compatibility_graph(accepted, conflicts);
    maxclique::solve(&g).nodes.into_iter().map(|i| accepted[i].clone()).collect()
}

/// Layer widths for freshly created models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

/// Budgets of the real consumers and what they have pledged to alliances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BudgetLedger {
    budgets: BTreeMap<usize, f64>,
    /// (alliance uid, consumer id) → payment.
    payments: BTreeMap<(Uid, usize), f64>,
}

impl BudgetLedger {
    pub fn new(budgets: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self { budgets: budgets.into_iter().collect(), payments: BTreeMap::new() }
    }

    pub fn budget(&self, consumer: usize) -> f64 {
        self.budgets.get(&consumer).copied().unwrap_or(0.0)
    }

    pub fn committed(&self, consumer: usize) -> f64 {
        self.payments.iter().filter(|((_, c), _)| *c == consumer).map(|(_, p)| p).sum()
    }

    pub fn available(&self, consumer: usize) -> f64 {
        self.budget(consumer) - self.committed(consumer)
    }

    pub fn payment(&self, uid: Uid, consumer: usize) -> Option<f64> {
        self.payments.get(&(uid, consumer)).copied()
    }

    /// Sum of all payments into the alliance.
    pub fn alliance_budget(&self, uid: Uid) -> f64 {
        self.payments.iter().filter(|((u, _), _)| *u == uid).map(|(_, p)| p).sum()
    }

    /// Own budget plus what the other members pay into the consumer's alliances.
    pub fn effective_budget(&self, consumer: usize) -> f64 {
        let joined: BTreeSet<Uid> = self.payments.keys().filter(|(_, c)| *c == consumer).map(|(u, _)| *u).collect();
        self.budget(consumer)
            + self
                .payments
                .iter()
                .filter(|((u, c), _)| joined.contains(u) && *c != consumer)
                .map(|(_, p)| p)
                .sum::<f64>()
    }

    fn pay(&mut self, uid: Uid, consumer: usize, amount: f64) {
        self.payments.insert((uid, consumer), amount);
    }
}

/// An instantiated alliance and its synthetic consumer.
#[derive(Debug, Clone)]
pub struct Alliance {
    pub candidate: AllianceCandidate,
    pub consumer: DataConsumer,
    pub payments: BTreeMap<usize, f64>,
}

impl Alliance {
    pub fn uid(&self) -> Uid {
        self.candidate.uid
    }

    pub fn value(&self) -> u64 {
        candidate_value(&self.candidate)
    }

    pub fn budget(&self) -> f64 {
        self.payments.values().sum()
    }

    /// Labels the alliance model outputs: the union of the participants' tasks.
    pub fn output_labels(&self) -> LabelSet {
        self.consumer.model.active_labels()
    }
}

/// Creates a synthetic consumer for each selected candidate. Every
/// participant pays `budget_share`; candidates some participant cannot
/// afford are skipped with a log line. The alliance model outputs the union
/// of the participants' classes; its validation set pools the participants'
/// validation samples of the shared classes.
pub fn instantiate(
    selected: &[AllianceCandidate],
    consumers: &[DataConsumer],
    ledger: &mut BudgetLedger,
    budget_share: f64,
    arch: &Architecture,
    next_consumer_id: usize,
    seed: u64,
) -> Result<Vec<Alliance>> {
    let mut out = Vec::new();
    for cand in selected {
        let members: Vec<&DataConsumer> = cand
            .participants
            .iter()
            .map(|&id| {
                consumers
                    .iter()
                    .find(|c| c.id == id && !c.is_synthetic)
                    .ok_or_else(|| Error::Config(format!("alliance {} names unknown consumer {id}", cand.uid)))
            })
            .collect::<Result<_>>()?;
        if let Some(poor) = members.iter().find(|c| ledger.available(c.id) < budget_share) {
            log::warn!(
                "alliance {} skipped: consumer {} has {} available, share is {budget_share}",
                cand.uid,
                poor.id,
                ledger.available(poor.id)
            );
            continue;
        }
        let outputs: LabelSet = members.iter().flat_map(|c| c.labels.iter().copied()).collect();
        let mut rng = rng::stream(seed, &[rng::tag::ALLIANCE, cand.uid]);
        let model = Model::new(arch.input_dim, &arch.hidden, arch.num_classes, &outputs, &mut rng)?;
        let parts: Vec<LabeledDataset> = members.iter().map(|c| c.validation.filter_labels(&cand.labels)).collect();
        let validation = LabeledDataset::concat(&parts.iter().collect::<Vec<_>>())?;

        let mut payments = BTreeMap::new();
        for c in &members {
            ledger.pay(cand.uid, c.id, budget_share);
            payments.insert(c.id, budget_share);
        }
        let consumer = DataConsumer {
            id: next_consumer_id + out.len(),
            labels: cand.labels.clone(),
            model,
            expert: None,
            validation: Arc::new(validation),
            budget: payments.values().sum(),
            is_synthetic: true,
        };
        out.push(Alliance { candidate: cand.clone(), consumer, payments });
    }
    Ok(out)
}

/// Runs detection, offering and selection, suppressing candidates that
/// duplicate an existing alliance's participants and labels.
#[derive(Debug, Clone, Default)]
pub struct AllianceEngine {
    pub thresholds: Thresholds,
    uids: UidSource,
    existing: BTreeSet<(BTreeSet<usize>, LabelSet)>,
}

#[derive(Debug, Clone, Default)]
pub struct CreationRound {
    pub candidates: Vec<AllianceCandidate>,
    pub offers: OfferOutcome,
    pub selected: Vec<AllianceCandidate>,
}

impl AllianceEngine {
    pub fn new(thresholds: Thresholds) -> Self {
        Self { thresholds, ..Self::default() }
    }

    pub fn create(
        &mut self,
        consumers: &[ConsumerProfile],
        history: &BiddingHistory,
        policy: &dyn AcceptancePolicy,
    ) -> Result<CreationRound> {
        let candidates: Vec<AllianceCandidate> =
            enumerate_candidates(consumers, history, self.thresholds, &mut self.uids)?
                .into_iter()
                .filter(|c| !self.existing.contains(&c.key()))
                .collect();
        let offers = offer_and_collect(&candidates, consumers, policy);
        let selected = select_alliances(&offers.accepted, &offers.conflicts);
        Ok(CreationRound { candidates, offers, selected })
    }

    /// Marks alliances as existing so they are not proposed again.
    pub fn register(&mut self, alliances: &[Alliance]) {
        self.existing.extend(alliances.iter().map(|a| a.candidate.key()));
    }
}
