use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use fedcdc_core::maxclique::{self, WeightedGraph};
use fedcdc_core::sim::{compare_scenarios, emit_metrics, run_scenario, Scenario, ScenarioConfig, Summary};

#[derive(Debug, Parser)]
#[command(name = "fedcdc", version, about = "Federated-learning data market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write accuracy.csv, alliances.json and summary.json
    Run {
        /// Scenario TOML file, or `default` for the built-in configuration
        #[arg(long)]
        config: String,
        /// Overrides the seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario from the config
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<Scenario>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run unrestricted, restricted and fedcdc side by side
    Compare {
        #[arg(long)]
        config: String,
        /// Comma-separated seeds to average over; defaults to the config seed
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Solve maximum-weight clique on a DIMACS graph
    SolveMwc {
        #[arg(long)]
        graph: PathBuf,
    },
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| format!("unknown scenario `{s}` (expected unrestricted, restricted or fedcdc)"))
}

fn load_config(arg: &str) -> anyhow::Result<ScenarioConfig> {
    if arg == "default" {
        return Ok(ScenarioConfig::default());
    }
    ScenarioConfig::from_file(Path::new(arg)).with_context(|| format!("loading config {arg}"))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, seed, scenario, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(scenario) = scenario {
                cfg.scenario = scenario;
            }
            let trace = run_scenario(&cfg)?;
            emit_metrics(&trace, &out).with_context(|| format!("writing metrics to {}", out.display()))?;
            let summary = Summary::from_trace(&trace);
            println!(
                "{} seed {}: final mean accuracy {:.2}% over {} rounds, {} alliance(s)",
                cfg.scenario.name(),
                cfg.seed,
                100.0 * summary.final_mean_acc,
                summary.rounds,
                summary.alliances
            );
            for c in &summary.consumers {
                println!("  dc {}: test {:.2}% (best round {})", c.dc_id, 100.0 * c.test_acc, c.best_round);
            }
        }
        Command::Compare { config, seeds } => {
            let cfg = load_config(&config)?;
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            println!("{}", compare_scenarios(&cfg, &seeds)?);
        }
        Command::SolveMwc { graph } => {
            let text = std::fs::read_to_string(&graph).with_context(|| format!("reading {}", graph.display()))?;
            let g = WeightedGraph::from_dimacs(&text).with_context(|| format!("parsing {}", graph.display()))?;
            let clique = maxclique::solve(&g);
            println!("weight {}", clique.weight);
            let ids: Vec<String> = clique.nodes.iter().map(|v| (v + 1).to_string()).collect();
            println!("clique {}", ids.join(" "));
        }
    }
    Ok(())
}
