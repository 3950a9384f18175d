//! `simulate`: run every (policy, seed) cell of the experiment and persist
//! metrics, trajectories and loss ledgers.

use crate::output::{csv_f64, csv_opt_f64, ensure_dir, write_file, write_json};
use crate::{runtime_err, CliError, CommonArgs};
use dflsim_core::config::ExperimentConfig;
use dflsim_core::fltrainer::{run_experiment, ExperimentResult, PruningPolicy};
use dflsim_core::routing::Scheme;
use rayon::prelude::*;
use serde_json::json;
use std::path::Path;

pub const METRICS_SCHEMA: &str = "dflsim/metrics-v1";
pub const METRICS_HEADER: &str =
    "round,scheme,policy,client,c_m,r_m,payload_bits,t_m,delivered,loss,acc";
pub const LEDGER_SCHEMA: &str = "dflsim/loss-ledger-v1";

pub fn metrics_csv(result: &ExperimentResult) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {METRICS_SCHEMA}\n"));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    let scheme = result.scheme.name();
    let policy = result.policy.name();
    for round in &result.rounds {
        for c in &round.clients {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                round.round,
                scheme,
                policy,
                c.client,
                csv_f64(c.tree_cost),
                csv_f64(c.retention),
                c.payload_bits,
                csv_f64(c.latency_s),
                c.delivered,
                csv_f64(c.loss),
                csv_opt_f64(c.accuracy),
            ));
        }
    }
    out
}

pub fn ledger_csv(result: &ExperimentResult) -> Option<String> {
    let ledger = result.delivery.as_ref()?;
    let n = ledger.retained.len();
    let mut out = String::new();
    out.push_str(&format!("# {LEDGER_SCHEMA}\n"));
    out.push_str("sender,receiver,lost_elements\n");
    for m in 0..n {
        for x in 0..n {
            if x != m {
                out.push_str(&format!("{},{},{}\n", m, x, ledger.lost[m][x]));
            }
        }
    }
    Some(out)
}

fn series_json(result: &ExperimentResult) -> serde_json::Value {
    let rounds = &result.rounds;
    json!({
        "mean_loss": rounds.iter().map(|r| r.mean_loss).collect::<Vec<_>>(),
        "mean_accuracy": rounds.iter().map(|r| r.mean_accuracy).collect::<Vec<_>>(),
        "accuracy_spread": rounds.iter().map(|r| r.accuracy_spread).collect::<Vec<_>>(),
        "bias_norm_sum": rounds.iter().map(|r| r.bias_norm_sum).collect::<Vec<_>>(),
        "jain_delivered": rounds.iter().map(|r| r.jain_delivered).collect::<Vec<_>>(),
        "coeff_norm_max_dev": rounds.iter().map(|r| r.coeff_norm_max_dev).collect::<Vec<_>>(),
    })
}

pub fn run_summary_entry(
    result: &ExperimentResult,
    metrics_file: &str,
    trajectory_file: Option<&str>,
    ledger_file: Option<&str>,
) -> serde_json::Value {
    let last = result.rounds.last();
    json!({
        "seed": result.seed,
        "scheme": result.scheme.name(),
        "policy": result.policy.name(),
        "metrics_file": metrics_file,
        "trajectory_file": trajectory_file,
        "loss_ledger_file": ledger_file,
        "topology": {
            "n": result.topology.node_count(),
            "seed": result.topology.seed(),
            "edges": result.topology.edges().len(),
            "repaired": result.topology.repaired(),
        },
        "tree_costs": result.tree_costs,
        "retention": result.retention,
        "payload_bits": result.payload_bits,
        "latency_s": result.latency_s,
        "on_time": result.on_time,
        "infeasible_plans": result.infeasible_plans,
        "final": last.map(|r| json!({
            "mean_loss": r.mean_loss,
            "mean_accuracy": r.mean_accuracy,
            "accuracy_spread": r.accuracy_spread,
            "bias_norm_sum": r.bias_norm_sum,
            "jain_delivered": r.jain_delivered,
        })),
        "series": series_json(result),
    })
}

pub struct RunCell {
    pub policy: PruningPolicy,
    pub seed: u64,
}

pub fn expand_cells(cfg: &ExperimentConfig, policies: &[PruningPolicy]) -> Vec<RunCell> {
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        for &policy in policies {
            cells.push(RunCell { policy, seed });
        }
    }
    cells
}

pub fn run(common: &CommonArgs) -> Result<(), CliError> {
    let cfg = common.load_config()?;
    let policies = common.policies(&cfg)?;
    let scheme = cfg.routing.scheme;
    let out = common.out_dir();
    ensure_dir(&out)?;
    let cells = expand_cells(&cfg, &policies);

    // Seeds run in parallel; each worker owns its files. The summary is
    // assembled afterwards in cell order.
    let results: Vec<Result<serde_json::Value, CliError>> = cells
        .par_iter()
        .map(|cell| run_cell(&cfg, scheme, cell, &out))
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }

    let summary = json!({
        "schema": "dflsim/summary-v1",
        "config": cfg.to_json_value(),
        "runs": runs,
    });
    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    println!("wrote {} ({} runs)", path.display(), cells.len());
    Ok(())
}

fn run_cell(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    cell: &RunCell,
    out: &Path,
) -> Result<serde_json::Value, CliError> {
    let result = run_experiment(cfg, scheme, cell.policy, cell.seed)?;
    let tag = format!("{}_s{}", cell.policy.name(), cell.seed);

    let metrics_name = format!("metrics_{tag}.csv");
    write_file(&out.join(&metrics_name), &metrics_csv(&result))?;

    let trajectory_name = if let Some(traj) = &result.trajectory {
        let name = format!("trajectory_{tag}.json");
        let value = serde_json::to_value(traj).map_err(runtime_err)?;
        write_json(&out.join(&name), &value)?;
        Some(name)
    } else {
        None
    };

    let ledger_name = if let Some(text) = ledger_csv(&result) {
        let name = format!("loss_ledger_{tag}.csv");
        write_file(&out.join(&name), &text)?;
        Some(name)
    } else {
        None
    };

    Ok(run_summary_entry(
        &result,
        &metrics_name,
        trajectory_name.as_deref(),
        ledger_name.as_deref(),
    ))
}
