//! `gen-topology`: write the topology JSON document.

use crate::output::{ensure_dir, write_file};
use crate::{CliError, CommonArgs};
use dflsim_core::netgen::generate_rgg;

pub fn run(common: &CommonArgs) -> Result<(), CliError> {
    let cfg = common.load_config()?;
    let radio = cfg.radio.to_params()?;
    let seed = cfg.topology.seed.unwrap_or(cfg.seeds[0]);
    let topo = generate_rgg(
        cfg.topology.n,
        cfg.topology.density,
        cfg.topology.area_km,
        &radio,
        seed,
    )?;
    let out = common.out_dir();
    ensure_dir(&out)?;
    let path = out.join("topology.json");
    write_file(&path, &(topo.to_json_string() + "\n"))?;
    println!(
        "wrote {} nodes={} edges={} repaired={}",
        path.display(),
        topo.node_count(),
        topo.edges().len(),
        topo.repaired()
    );
    Ok(())
}
