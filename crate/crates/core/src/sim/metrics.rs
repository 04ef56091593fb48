use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Scenario;
use super::runner::{AllianceRecord, MetricsTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerSummary {
    pub dc_id: usize,
    pub test_acc: f64,
    pub best_val_acc: f64,
    pub best_round: usize,
}

/// Final numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub seed: u64,
    pub rounds: usize,
    pub final_mean_acc: f64,
    pub consumers: Vec<ConsumerSummary>,
    pub alliances: usize,
    pub alliance_value: u64,
}

impl Summary {
    pub fn from_trace(trace: &MetricsTrace) -> Self {
        let consumers = trace
            .final_records()
            .iter()
            .map(|r| ConsumerSummary {
                dc_id: r.dc_id,
                test_acc: r.test_acc,
                best_val_acc: trace.round(r.best_round)[r.dc_id].val_acc,
                best_round: r.best_round,
            })
            .collect();
        Self {
            scenario: trace.scenario,
            seed: trace.seed,
            rounds: trace.rounds,
            final_mean_acc: trace.final_mean_acc(),
            consumers,
            alliances: trace.alliances.len(),
            alliance_value: trace.alliances.iter().map(|a| a.value).sum(),
        }
    }
}

/// `round,dc_id,val_acc,test_acc,mean_acc` with six decimals.
pub fn accuracy_csv(trace: &MetricsTrace) -> String {
    let mut out = String::from("round,dc_id,val_acc,test_acc,mean_acc\n");
    for round in 1..=trace.rounds {
        let mean = trace.mean_acc(round);
        for r in trace.round(round) {
            writeln!(out, "{},{},{:.6},{:.6},{:.6}", r.round, r.dc_id, r.val_acc, r.test_acc, mean)
                .expect("string write");
        }
    }
    out
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("metrics serialize");
    s.push('\n');
    s
}

pub fn alliances_json(alliances: &[AllianceRecord]) -> String {
    pretty(alliances)
}

pub fn summary_json(trace: &MetricsTrace) -> String {
    pretty(&Summary::from_trace(trace))
}

/// Writes `accuracy.csv`, `alliances.json` and `summary.json` into
/// `out_dir`, creating it if needed. Returns the written paths.
pub fn emit_metrics(trace: &MetricsTrace, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if trace.records.is_empty() {
        return Err(Error::EmptyDataset("metrics trace"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = [
        ("accuracy.csv", accuracy_csv(trace)),
        ("alliances.json", alliances_json(&trace.alliances)),
        ("summary.json", summary_json(trace)),
    ];
    files
        .into_iter()
        .map(|(name, body)| {
            let path = out_dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::runner::RoundRecord;
    use std::collections::BTreeMap;

    fn trace(rounds: usize, consumers: usize) -> MetricsTrace {
        let records = (1..=rounds)
            .flat_map(|round| {
                (0..consumers).map(move |dc_id| RoundRecord {
                    round,
                    dc_id,
                    val_acc: 0.5 + 0.1 * dc_id as f64,
                    test_acc: 0.25 * (dc_id + 1) as f64,
                    best_round: round,
                    recruited: vec![dc_id],
                })
            })
            .collect();
        MetricsTrace {
            scenario: Scenario::Restricted,
            seed: 1,
            rounds,
            consumers,
            records,
            alliances: Vec::new(),
            alliance_rounds: Vec::new(),
        }
    }

    #[test]
    fn csv_has_one_row_per_consumer_round() {
        let csv = accuracy_csv(&trace(1, 3));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "round,dc_id,val_acc,test_acc,mean_acc");
        assert_eq!(lines[1], "1,0,0.500000,0.250000,0.500000");
        assert_eq!(lines[3], "1,2,0.700000,0.750000,0.500000");
    }

    #[test]
    fn no_alliances_is_an_empty_list() {
        assert_eq!(alliances_json(&[]).trim(), "[]");
    }

    #[test]
    fn summary_values() {
        let s = Summary::from_trace(&trace(2, 2));
        assert_eq!(s.final_mean_acc, 0.375);
        assert_eq!(s.consumers[1].best_val_acc, 0.6);
        assert_eq!(s.alliances, 0);
    }

    #[test]
    fn emits_stable_files() {
        let mut t = trace(3, 3);
        t.alliances.push(AllianceRecord {
            uid: 4,
            round: 2,
            consumer_id: 3,
            participants: vec![0, 1, 2],
            labels: vec![0, 1],
            output_labels: (0..8).collect(),
            contested: (0..6).collect(),
            value: 36,
            payments: BTreeMap::from([(0, 0.0), (1, 0.0), (2, 0.0)]),
            budget: 0.0,
            effective_budgets: BTreeMap::new(),
        });
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = emit_metrics(&t, &a.path().join("nested")).unwrap();
        let pb = emit_metrics(&t, b.path()).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&pa[1]).unwrap()).unwrap();
        assert_eq!(json[0]["value"], 36);
    }

    #[test]
    fn empty_trace_and_bad_dir() {
        assert!(emit_metrics(&trace(0, 3), Path::new("/tmp")).is_err());
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(emit_metrics(&trace(1, 1), &f.path().join("x")), Err(Error::Io { .. })));
    }
}
