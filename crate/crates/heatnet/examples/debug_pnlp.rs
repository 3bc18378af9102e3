//! Scratch diagnostics for solver behavior on small circular cases.

use heatnet::casegen::{gen_circular, CircularCaseSpec};
use heatnet::costing::{total_cost, CostMode};
use heatnet::design::uniform_design;
use heatnet::pnlp::{optimize_pnlp, PnlpConfig};
use heatnet::sim::{solve_state, SimConfig};
use heatnet::Network;
use std::time::Instant;

fn main() {
    let segments: u32 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let case = gen_circular(&CircularCaseSpec { segments, ..Default::default() });
    let network = Network::from_case_file(case).unwrap();
    println!(
        "case s={segments}: {} pairs, {} consumers, demand {:.0} kW",
        network.n_pipe_pairs(),
        network.consumers.len(),
        network.total_demand() / 1e3
    );

    let design = uniform_design(&network, 0.2).unwrap();
    let t = Instant::now();
    let state = solve_state(&network, &design, &SimConfig::default()).unwrap();
    println!(
        "uniform solve: converged={} iters={} residual={:.2e} in {:.1} ms",
        state.converged,
        state.iterations,
        state.residual_norm,
        t.elapsed().as_secs_f64() * 1e3
    );
    let cost = total_cost(&design, &state, &network, CostMode::Raw).unwrap();
    println!(
        "uniform raw cost: total {:.0} (pipe {:.0}, heat-cap {:.0}, heat-op {:.0}/yr, pump {:.0}/yr)",
        cost.total_npv, cost.pipe_capex, cost.heat_capex, cost.heat_opex_annualized, cost.pump_opex_annualized
    );

    let t = Instant::now();
    let result = optimize_pnlp(&network, &PnlpConfig::default(), None).unwrap();
    println!(
        "pnlp: cost {:.0} converged={} outer={} inner-evals={} in {:.2} s",
        result.cost.total_npv,
        result.converged,
        result.outer_iterations,
        result.history.len(),
        t.elapsed().as_secs_f64()
    );
    let kept = result.design.diameters.iter().filter(|&&d| d > 0.0).count();
    println!(
        "kept {kept}/{} pairs; diameters: {:?}",
        network.n_pipe_pairs(),
        result
            .design
            .diameters
            .iter()
            .map(|d| (d * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
}
