use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{Scenario, ScenarioConfig};
use super::runner::run_scenario;
use crate::error::{Error, Result};

/// Share of the unrestricted/restricted accuracy gap that FedCDC recovers.
/// Undefined when the gap is zero.
pub fn recovered_gap(unrestricted: f64, restricted: f64, fedcdc: f64) -> Option<f64> {
    let gap = unrestricted - restricted;
    (gap.abs() > 1e-12).then(|| (fedcdc - restricted) / gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub unrestricted: f64,
    pub restricted: f64,
    pub fedcdc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub per_seed: Vec<SeedResult>,
    pub unrestricted: f64,
    pub restricted: f64,
    pub fedcdc: f64,
    pub recovered_gap: Option<f64>,
}

impl ComparisonReport {
    pub fn from_seeds(per_seed: Vec<SeedResult>) -> Self {
        let n = per_seed.len() as f64;
        let mean = |f: fn(&SeedResult) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        let (unrestricted, restricted, fedcdc) = (mean(|s| s.unrestricted), mean(|s| s.restricted), mean(|s| s.fedcdc));
        Self {
            recovered_gap: recovered_gap(unrestricted, restricted, fedcdc),
            per_seed,
            unrestricted,
            restricted,
            fedcdc,
        }
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8}  {:>12}  {:>10}  {:>8}", "seed", "unrestricted", "restricted", "fedcdc")?;
        for s in &self.per_seed {
            writeln!(
                f,
                "{:>8}  {:>12.2}  {:>10.2}  {:>8.2}",
                s.seed,
                100.0 * s.unrestricted,
                100.0 * s.restricted,
                100.0 * s.fedcdc
            )?;
        }
        writeln!(
            f,
            "{:>8}  {:>12.2}  {:>10.2}  {:>8.2}",
            "mean",
            100.0 * self.unrestricted,
            100.0 * self.restricted,
            100.0 * self.fedcdc
        )?;
        match self.recovered_gap {
            Some(r) => write!(f, "recovered gap: {r:.3}"),
            None => write!(f, "recovered gap: undefined (no gap between unrestricted and restricted)"),
        }
    }
}

/// Runs all three scenarios on each seed with otherwise identical
/// settings and averages the final mean accuracies.
pub fn compare_scenarios(base: &ScenarioConfig, seeds: &[u64]) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    for s in Scenario::ALL {
        base.with_scenario(s).validate()?;
    }
    let per_seed = seeds
        .iter()
        .map(|&seed| {
            let acc = |s: Scenario| -> Result<f64> {
                Ok(run_scenario(&base.with_scenario(s).with_seed(seed))?.final_mean_acc())
            };
            Ok(SeedResult {
                seed,
                unrestricted: acc(Scenario::Unrestricted)?,
                restricted: acc(Scenario::Restricted)?,
                fedcdc: acc(Scenario::Fedcdc)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport::from_seeds(per_seed))
}
