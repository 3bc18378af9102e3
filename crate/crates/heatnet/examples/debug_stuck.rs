//! Scratch diagnostics: which residual rows refuse to converge.

use heatnet::casegen::{gen_circular, CircularCaseSpec};
use heatnet::design::uniform_design;
use heatnet::sim::{debug_stuck_rows, SimConfig};
use heatnet::Network;

fn main() {
    let segments: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let case = gen_circular(&CircularCaseSpec { segments, ..Default::default() });
    let network = Network::from_case_file(case).unwrap();
    let design = uniform_design(&network, 0.2).unwrap();
    let cfg = SimConfig { demand_continuation: false, max_iter: 60, ..SimConfig::default() };
    debug_stuck_rows(&network, &design, &cfg);
}
