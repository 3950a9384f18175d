//! `route`: per-root routing report across all schemes, with optional
//! parameter sweeps.

use crate::output::{csv_f64, ensure_dir, write_file, write_json};
use crate::{config_err, CliError, CommonArgs};
use dflsim_core::config::{ExperimentConfig, TaskBlock};
use dflsim_core::linkschedule::{optimal_retention, tdma_schedule, total_latency};
use dflsim_core::netgen::{generate_rgg, Topology};
use dflsim_core::pruner::ModelSpec;
use dflsim_core::routing::{p_clt, tree_cost, Scheme};
use serde_json::json;
use std::path::Path;

fn task_param_count(cfg: &ExperimentConfig) -> Result<u64, CliError> {
    let layers = match &cfg.task {
        TaskBlock::RidgeRegression { layers, .. } => layers,
        TaskBlock::SoftmaxMlp { layers, .. } => layers,
    };
    Ok(ModelSpec::new(layers.clone())?.total_params() as u64)
}

pub fn run(
    common: &CommonArgs,
    topology_file: Option<&Path>,
    sweep_theta: bool,
    sweep_iterations: bool,
) -> Result<(), CliError> {
    let cfg = common.load_config()?;
    let topo = match topology_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(config_err)?;
            Topology::from_json_str(&text)?
        }
        None => {
            let radio = cfg.radio.to_params()?;
            let seed = cfg.topology.seed.unwrap_or(cfg.seeds[0]);
            generate_rgg(cfg.topology.n, cfg.topology.density, cfg.topology.area_km, &radio, seed)?
        }
    };
    let n = topo.node_count();
    let k_params = task_param_count(&cfg)?;
    let bpp = cfg.budget.bits_per_param;
    let t_max = cfg.budget.t_max_s;
    let base = cfg.routing.to_routing_config();
    let full_bits = k_params as f64 * bpp as f64;

    let mut roots = Vec::new();
    if n > 1 {
        for root in 0..n {
            let mut schemes = serde_json::Map::new();
            for scheme in Scheme::ALL {
                let tree = scheme.build_tree(&topo, root, &base)?;
                let cost = tree_cost(&tree, &topo);
                let r = optimal_retention(cost, k_params, bpp, t_max)?;
                let payload = (r.r_star * k_params as f64).floor() as u64 * bpp as u64;
                schemes.insert(
                    scheme.name().to_string(),
                    json!({
                        "cost_s_per_bit": cost,
                        "r_star": r.r_star,
                        "feasible": r.feasible,
                        "t_full_s": full_bits * cost,
                        "t_star_s": total_latency(&tree, &topo, payload),
                    }),
                );
            }
            let primary = cfg.routing.scheme.build_tree(&topo, root, &base)?;
            roots.push(json!({
                "root": root,
                "schemes": serde_json::Value::Object(schemes),
                "primary_scheme": cfg.routing.scheme.name(),
                "primary_tree": primary.to_json(&topo),
            }));
        }
    }

    let theta_sweep = if sweep_theta && n > 1 {
        let mut rows = Vec::new();
        for step in 1..=9u32 {
            let theta = step as f64 / 10.0;
            let mut sweep_cfg = base.clone();
            sweep_cfg.theta = theta;
            let mut total_cost = 0.0;
            for root in 0..n {
                total_cost += tree_cost(&p_clt(&topo, root, &sweep_cfg)?.tree, &topo);
            }
            let mean_cost = total_cost / n as f64;
            rows.push(json!({
                "theta": theta,
                "mean_cost_s_per_bit": mean_cost,
                "mean_full_model_time_s": full_bits * mean_cost,
            }));
        }
        serde_json::Value::Array(rows)
    } else {
        serde_json::Value::Null
    };

    let iteration_sweep = if sweep_iterations && n > 1 {
        let mut rows = Vec::new();
        for iters in 0..=5u32 {
            let mut sweep_cfg = base.clone();
            sweep_cfg.iterations = iters;
            let mut costs = Vec::with_capacity(n);
            for root in 0..n {
                costs.push(tree_cost(&p_clt(&topo, root, &sweep_cfg)?.tree, &topo));
            }
            let mean = costs.iter().sum::<f64>() / n as f64;
            rows.push(json!({
                "iterations": iters,
                "mean_cost_s_per_bit": mean,
                "per_root_cost": costs,
            }));
        }
        serde_json::Value::Array(rows)
    } else {
        serde_json::Value::Null
    };

    let report = json!({
        "schema": "dflsim/route-report-v1",
        "config": cfg.to_json_value(),
        "topology": {
            "n": n,
            "seed": topo.seed(),
            "edges": topo.edges().len(),
            "repaired": topo.repaired(),
        },
        "roots": roots,
        "theta_sweep": theta_sweep,
        "iteration_sweep": iteration_sweep,
    });

    let out = common.out_dir();
    ensure_dir(&out)?;
    let path = out.join("route_report.json");
    write_json(&path, &report)?;

    // TDMA schedule dump and the per-client latency report for the
    // configured scheme.
    let budget = cfg.budget.to_budget()?;
    let schedule = tdma_schedule(&topo);
    write_json(&out.join("schedule.json"), &schedule.to_json(&topo, &budget))?;

    let mut latency_csv = String::from("# dflsim/latency-report-v1\nclient,c_m,r_star,t_m,feasible\n");
    if n > 1 {
        for root in 0..n {
            let tree = cfg.routing.scheme.build_tree(&topo, root, &base)?;
            let cost = tree_cost(&tree, &topo);
            let r = optimal_retention(cost, k_params, bpp, t_max)?;
            let payload = (r.r_star * k_params as f64).floor() as u64 * bpp as u64;
            latency_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                root,
                csv_f64(cost),
                csv_f64(r.r_star),
                csv_f64(total_latency(&tree, &topo, payload)),
                r.feasible,
            ));
        }
    }
    write_file(&out.join("latency_report.csv"), &latency_csv)?;

    println!("wrote {}", path.display());
    Ok(())
}
