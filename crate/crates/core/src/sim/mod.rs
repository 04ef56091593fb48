//! Scenario configuration, the market round loop and metric output.
//!
//! Each round: consumers bid, real bids enter the history, owners are
//! re-matched every `matching_period` rounds, every consumer (real or
//! synthetic) runs one federated round on its recruited owners, and in the
//! FedCDC scenario each alliance participant distills its alliance models and
//! its expert back into its own model. Alliances are proposed after
//! `alliance_start` rounds and then every matching period.

mod compare;
mod config;
mod metrics;
mod runner;

pub use compare::{compare_scenarios, recovered_gap, ComparisonReport, SeedResult};
pub use config::{
    AllianceConfig, DataSource, ExpertInit, MarketConfig, ModelSpec, PolicyKind, Scenario, ScenarioConfig,
};
pub use metrics::{accuracy_csv, alliances_json, emit_metrics, summary_json, ConsumerSummary, Summary};
pub use runner::{run_on_partition, run_scenario, AllianceRecord, AllianceRoundRecord, MetricsTrace, RoundRecord};
