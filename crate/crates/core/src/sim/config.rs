use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alliance::{AcceptAll, AcceptancePolicy, LabelOverlapPolicy, Thresholds};
use crate::dataset::{gen_blobs, load_idx, LabeledDataset, PartitionSpec};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::fed::FlRoundConfig;
use crate::market::Mechanism;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Every consumer recruits every owner it wants, every round.
    Unrestricted,
    /// Contested owners are split among their bidders.
    Restricted,
    /// Restricted, plus alliances and distillation.
    Fedcdc,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Unrestricted, Scenario::Restricted, Scenario::Fedcdc];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Unrestricted => "unrestricted",
            Scenario::Restricted => "restricted",
            Scenario::Fedcdc => "fedcdc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs around random hypercube vertices; enough samples per
    /// class are generated for the partition.
    Blobs { classes: usize, dim: usize, spread: f64 },
    /// IDX image/label files, pixels scaled to [0, 1].
    Idx { images: PathBuf, labels: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs { classes: 10, dim: 16, spread: 1.2 }
    }
}

impl DataSource {
    /// Loads or generates the base dataset. Relative IDX paths resolve
    /// against `base_dir`.
    pub fn load(&self, spec: &PartitionSpec, seed: u64, base_dir: &Path) -> Result<LabeledDataset> {
        match self {
            DataSource::Blobs { classes, dim, spread } => {
                let per_class = spec.demand_per_class(*classes).into_iter().max().unwrap_or(0);
                gen_blobs(*classes, *dim, per_class, *spread, rng::derive_seed(seed, &[rng::tag::DATA]))
            }
            DataSource::Idx { images, labels } => load_idx(&base_dir.join(images), &base_dir.join(labels)),
        }
    }
}

/// How a consumer's expert model (trained on its non-alliance owners)
/// starts each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertInit {
    /// Copy of the consumer's merged model.
    FromGlobal,
    /// Keeps training its own parameters across rounds.
    Persistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    LabelOverlap,
    AcceptAll,
}

impl PolicyKind {
    pub fn policy(self) -> &'static dyn AcceptancePolicy {
        match self {
            PolicyKind::LabelOverlap => &LabelOverlapPolicy,
            PolicyKind::AcceptAll => &AcceptAll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllianceConfig {
    pub n_l_min: usize,
    pub n_delta_min: usize,
    /// Payment of each participant into a new alliance.
    pub budget_share: f64,
    pub policy: PolicyKind,
    pub expert: ExpertInit,
}

impl Default for AllianceConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            n_l_min: t.n_l_min,
            n_delta_min: t.n_delta_min,
            budget_share: 0.0,
            policy: PolicyKind::LabelOverlap,
            expert: ExpertInit::Persistent,
        }
    }
}

impl AllianceConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds { n_l_min: self.n_l_min, n_delta_min: self.n_delta_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub mechanism: Mechanism,
    /// Starting budget of every real consumer.
    pub budget: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self { mechanism: Mechanism::default(), budget: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { hidden: vec![64, 32] }
    }
}

/// Everything one simulation run needs. Loaded from TOML; every field has
/// a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub rounds: usize,
    /// Owners are re-matched every this many rounds.
    pub matching_period: usize,
    /// Alliances are first proposed after this many competitive rounds.
    pub alliance_start: usize,
    /// Rounds of bids kept for alliance detection.
    pub history_span: usize,
    pub data: DataSource,
    pub partition: PartitionSpec,
    pub model: ModelSpec,
    pub fl: FlRoundConfig,
    pub distill: DistillConfig,
    pub alliance: AllianceConfig,
    pub market: MarketConfig,
    /// Directory relative data paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Fedcdc,
            seed: 0,
            rounds: 50,
            matching_period: 5,
            alliance_start: 10,
            history_span: 5,
            data: DataSource::default(),
            partition: PartitionSpec {
                samples_per_owner: 200,
                samples_per_validation: 200,
                samples_per_test: 400,
                public_samples: 1000,
                ..PartitionSpec::default()
            },
            model: ModelSpec::default(),
            fl: FlRoundConfig::default(),
            distill: DistillConfig::default(),
            alliance: AllianceConfig::default(),
            market: MarketConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_scenario(&self, scenario: Scenario) -> Self {
        Self { scenario, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Partition spec with its seed derived from the scenario seed.
    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec { seed: rng::derive_seed(self.seed, &[rng::tag::PARTITION]), ..self.partition.clone() }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.matching_period == 0 || self.history_span == 0 {
            return Err(Error::Config("matching_period and history_span must be >= 1".into()));
        }
        if self.scenario == Scenario::Fedcdc && self.alliance_start >= self.rounds {
            return Err(Error::Config(format!(
                "alliance_start {} must be below rounds {}",
                self.alliance_start, self.rounds
            )));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if let DataSource::Blobs { classes, dim, spread } = self.data {
            if classes < 2 || dim == 0 || spread.is_nan() || spread <= 0.0 {
                return Err(Error::Config("blobs need classes >= 2, dim >= 1 and spread > 0".into()));
            }
            self.partition.validate(classes)?;
        }
        self.fl.validate()?;
        self.distill.validate()?;
        if self.alliance.budget_share.is_nan()
            || self.alliance.budget_share < 0.0
            || self.market.budget.is_nan()
            || self.market.budget < 0.0
        {
            return Err(Error::Config("budgets must be nonnegative".into()));
        }
        if self.scenario != Scenario::Unrestricted {
            if let Mechanism::RandomPartition { per_dc } = self.market.mechanism {
                let shared = self.partition.owners_per_group();
                if per_dc * self.partition.n_dc != shared {
                    return Err(Error::Config(format!(
                        "per_dc = {per_dc} does not split {shared} shared owners among {} consumers",
                        self.partition.n_dc
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig {
            scenario: Scenario::Restricted,
            market: MarketConfig { mechanism: Mechanism::FirstPrice, budget: 3.0 },
            data: DataSource::Idx { images: "a.idx".into(), labels: "b.idx".into() },
            ..ScenarioConfig::default()
        };
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = ScenarioConfig::from_toml_str(
            "scenario = \"restricted\"\nrounds = 3\n[fl]\nlocal_epochs = 1\n[market.mechanism]\nkind = \"random_partition\"\nper_dc = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario, Scenario::Restricted);
        assert_eq!(cfg.rounds, 3);
        assert_eq!(cfg.fl.local_epochs, 1);
        assert_eq!(cfg.fl.batch_size, 32);
        assert_eq!(cfg.partition.n_do, 24);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ScenarioConfig::from_toml_str("roundz = 3"), Err(Error::Config(_))));
        assert!(ScenarioConfig::from_toml_str("[fl]\nepochs = 3").is_err());
    }

    #[test]
    fn invalid_configs() {
        let base = ScenarioConfig::default();
        let cases = [
            ScenarioConfig { rounds: 0, ..base.clone() },
            ScenarioConfig { rounds: 10, alliance_start: 10, ..base.clone() },
            ScenarioConfig { matching_period: 0, ..base.clone() },
            ScenarioConfig { model: ModelSpec { hidden: vec![8, 0] }, ..base.clone() },
            ScenarioConfig { partition: PartitionSpec { n_c: 3, ..base.partition.clone() }, ..base.clone() },
            ScenarioConfig {
                market: MarketConfig { mechanism: Mechanism::RandomPartition { per_dc: 3 }, budget: 1.0 },
                ..base.clone()
            },
        ];
        for cfg in cases {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        // Restricted-only checks do not apply without contention.
        let free = ScenarioConfig {
            scenario: Scenario::Unrestricted,
            market: MarketConfig { mechanism: Mechanism::RandomPartition { per_dc: 3 }, budget: 1.0 },
            ..base
        };
        free.validate().unwrap();
    }

    #[test]
    fn partition_seed_follows_scenario_seed() {
        let a = ScenarioConfig::default();
        assert_eq!(a.partition_spec(), a.with_scenario(Scenario::Restricted).partition_spec());
        assert_ne!(a.partition_spec().seed, a.with_seed(1).partition_spec().seed);
    }
}
