//! Scratch diagnostics: finite-difference check of the assembled Jacobian,
//! including states with reversed flows.

use heatnet::casegen::{gen_circular, CircularCaseSpec};
use heatnet::design::uniform_design;
use heatnet::sim::debug_fd_jacobian;
use heatnet::Network;

fn main() {
    let segments: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let case = gen_circular(&CircularCaseSpec { segments, ..Default::default() });
    let network = Network::from_case_file(case).unwrap();
    let design = uniform_design(&network, 0.15).unwrap();
    let worst = debug_fd_jacobian(&network, &design, 7);
    println!("worst relative Jacobian mismatch: {worst:.3e}");
}
