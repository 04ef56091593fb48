//! Alliance creation on a partitioned market, and scenario variants.

use std::sync::Arc;

use fedcdc_core::alliance::{
    instantiate, AllianceEngine, Architecture, BudgetLedger, ConsumerProfile, LabelOverlapPolicy, Thresholds,
};
use fedcdc_core::dataset::{build_market_partition, gen_blobs, MarketPartition, PartitionSpec};
use fedcdc_core::distill::DistillConfig;
use fedcdc_core::fed::{Aggregation, FlRoundConfig};
use fedcdc_core::market::{BidMatrix, BiddingHistory, DataConsumer, DataOwner, Mechanism};
use fedcdc_core::nn::Model;
use fedcdc_core::sim::{run_scenario, DataSource, MarketConfig, ModelSpec, Scenario, ScenarioConfig};
use fedcdc_core::Error;

fn small_partition() -> PartitionSpec {
    PartitionSpec {
        samples_per_owner: 20,
        samples_per_validation: 20,
        samples_per_test: 20,
        public_samples: 40,
        seed: 4,
        ..PartitionSpec::default()
    }
}

fn market(spec: &PartitionSpec) -> MarketPartition {
    let per_class = spec.demand_per_class(10).into_iter().max().unwrap();
    build_market_partition(spec, &gen_blobs(10, 4, per_class, 1.0, 2).unwrap()).unwrap()
}

fn consumers(p: &MarketPartition, budget: f64) -> Vec<DataConsumer> {
    p.consumers
        .iter()
        .map(|c| DataConsumer {
            id: c.id,
            labels: c.labels.clone(),
            model: Model::zeros(4, &[4], 10, &c.labels).unwrap(),
            expert: None,
            validation: Arc::new(c.validation.clone()),
            budget,
            is_synthetic: false,
        })
        .collect()
}

#[test]
fn grand_alliance_from_partition_bids() {
    let p = market(&small_partition());
    let owners: Vec<DataOwner> =
        p.owners.iter().map(|o| DataOwner::new(o.id, Arc::new(o.data.clone())).unwrap()).collect();
    let dcs = consumers(&p, 50.0);
    let rows: Vec<Vec<f64>> = dcs.iter().map(|c| c.interest_bids(&owners, &[])).collect();
    let mut history = BiddingHistory::new(3, 3, 24).unwrap();
    history.record_bids(0, &BidMatrix::from_rows(rows).unwrap()).unwrap();

    let profiles: Vec<ConsumerProfile> = dcs.iter().map(ConsumerProfile::from).collect();
    let mut engine = AllianceEngine::new(Thresholds::default());
    let round = engine.create(&profiles, &history, &LabelOverlapPolicy).unwrap();
    assert_eq!(round.candidates.len(), 4);
    assert_eq!(round.selected.len(), 1);
    let chosen = &round.selected[0];
    assert_eq!(chosen.labels, p.shared_labels);
    let shared_owners: Vec<usize> = p.owners.iter().filter(|o| o.group == 0).map(|o| o.id).collect();
    assert_eq!(chosen.contested.iter().copied().collect::<Vec<_>>(), shared_owners);

    let mut ledger = BudgetLedger::new(dcs.iter().map(|c| (c.id, c.budget)));
    let arch = Architecture { input_dim: 4, hidden: vec![4], num_classes: 10 };
    let alliances = instantiate(&round.selected, &dcs, &mut ledger, 10.0, &arch, 3, 1).unwrap();
    assert_eq!(alliances.len(), 1);
    let a = &alliances[0];
    assert_eq!(a.budget(), 30.0);
    let union: fedcdc_core::LabelSet = dcs.iter().flat_map(|c| c.labels.iter().copied()).collect();
    assert_eq!(a.output_labels(), union);
    // Each participant's validation samples of the shared classes.
    assert_eq!(a.consumer.validation.len(), 3 * 10);
    for c in &dcs {
        assert_eq!(ledger.effective_budget(c.id) - ledger.budget(c.id), 20.0);
        assert_eq!(ledger.available(c.id), 40.0);
    }

    engine.register(&alliances);
    let again = engine.create(&profiles, &history, &LabelOverlapPolicy).unwrap();
    assert!(again.candidates.iter().all(|c| c.participants.len() == 2));

    let mut with_synthetic = profiles.clone();
    with_synthetic.push(ConsumerProfile::from(&a.consumer));
    assert!(engine.create(&with_synthetic, &history, &LabelOverlapPolicy).is_err());
}

fn tiny(scenario: Scenario) -> ScenarioConfig {
    ScenarioConfig {
        scenario,
        rounds: 8,
        alliance_start: 3,
        partition: small_partition(),
        model: ModelSpec { hidden: vec![8] },
        fl: FlRoundConfig { local_epochs: 1, ..FlRoundConfig::default() },
        distill: DistillConfig { epochs: 1, ..DistillConfig::default() },
        ..ScenarioConfig::default()
    }
}

#[test]
fn feddf_scenario_runs() {
    let mut cfg = tiny(Scenario::Fedcdc);
    cfg.fl =
        FlRoundConfig { method: Aggregation::FedDF, local_epochs: 1, distill_epochs: 1, ..FlRoundConfig::default() };
    let trace = run_scenario(&cfg).unwrap();
    assert_eq!(trace.alliances.len(), 1);
    assert!(trace.final_mean_acc() > 0.0);
}

#[test]
fn first_price_market_with_alliance_budgets() {
    let mut cfg = tiny(Scenario::Fedcdc);
    cfg.market = MarketConfig { mechanism: Mechanism::FirstPrice, budget: 100.0 };
    cfg.alliance.budget_share = 10.0;
    let trace = run_scenario(&cfg).unwrap();
    let a = &trace.alliances[0];
    assert_eq!(a.budget, 30.0);
    for p in &a.participants {
        assert_eq!(a.effective_budgets[p], 120.0);
    }
    // Owners go to the lowest-index bidder on equal bids.
    let first_round = trace.round(1);
    assert_eq!(first_round[0].recruited.len(), 12);
    assert_eq!(first_round[1].recruited.len(), 6);
    // The alliance can afford all six contested owners.
    let last = trace.alliance_rounds.last().unwrap();
    assert_eq!(last.recruited, a.contested);
}

#[test]
fn unaffordable_alliance_is_not_created() {
    let mut cfg = tiny(Scenario::Fedcdc);
    cfg.market = MarketConfig { mechanism: Mechanism::FirstPrice, budget: 5.0 };
    cfg.alliance.budget_share = 10.0;
    let trace = run_scenario(&cfg).unwrap();
    assert!(trace.alliances.is_empty());
}

fn idx_files(dir: &std::path::Path, per_class: usize) {
    let classes = 10;
    let n = classes * per_class;
    let (rows, cols) = (2, 2);
    let mut images = vec![0, 0, 8, 3];
    for d in [n, rows, cols] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        let class = (i % classes) as u8;
        images.extend([class * 25, 255 - class * 25, (class % 3) * 100, ((i / classes) % 7) as u8]);
        labels.push(class);
    }
    std::fs::write(dir.join("images.idx"), images).unwrap();
    std::fs::write(dir.join("labels.idx"), labels).unwrap();
}

#[test]
fn idx_source_resolves_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    idx_files(dir.path(), 120);
    let mut cfg = tiny(Scenario::Restricted);
    cfg.rounds = 2;
    cfg.data = DataSource::Idx { images: "images.idx".into(), labels: "labels.idx".into() };
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();

    let loaded = ScenarioConfig::from_file(&path).unwrap();
    let trace = run_scenario(&loaded).unwrap();
    assert_eq!(trace.records.len(), 6);

    let mut starved = loaded.clone();
    starved.partition.samples_per_owner = 200;
    match run_scenario(&starved) {
        Err(Error::Config(msg)) => assert!(msg.starts_with("class "), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn shipped_config_matches_builtin_default() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let mut cfg = ScenarioConfig::from_file(&path).unwrap();
    cfg.base_dir = Default::default();
    assert_eq!(cfg, ScenarioConfig::default());
}
