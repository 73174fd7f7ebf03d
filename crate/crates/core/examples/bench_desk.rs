//! Quick wall-clock probe of desk-scale runs (not part of the test suite).
use risfair_core::channel::{sample_channels, sample_topology};
use risfair_core::experiment::*;
use risfair_core::model::{CovSet, FeasibilitySet, Signaling};
use risfair_core::solver::*;
use std::time::Instant;

fn main() {
    for n_bs in [1usize, 4] {
        let mut config = desk_scale_config();
        config.bs_antennas = n_bs;
        config.feasibility_set = FeasibilitySet::I;
        config.signaling = Signaling::Igs;
        let topo = sample_topology(&config, 1);
        let ch = sample_channels(&topo, &config, 1);
        let covs = CovSet::isotropic(&config);
        let theta = random_unit_theta(&config, 1);
        let opts = AoOptions { max_outer: 25, ..Default::default() };
        let t = Instant::now();
        let out = mwrm_ao(&covs, &theta, &ch, &config, &BarrierSolver::default(), &opts).unwrap();
        println!(
            "desk IR_IN N_BS={n_bs}: {:.2}s, obj={:.4}, iters={}, term={}",
            t.elapsed().as_secs_f64(),
            out.trace.final_objective(),
            out.trace.rows.iter().map(|r| r.iter).max().unwrap(),
            out.trace.termination
        );
    }
}
