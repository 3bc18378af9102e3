//! Scratch diagnostics: Newton robustness on perturbed designs at size.

use heatnet::casegen::{gen_circular, CircularCaseSpec};
use heatnet::design::uniform_design;
use heatnet::sim::{solve_state, SimConfig};
use heatnet::Network;
use std::time::Instant;

fn main() {
    let segments: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let case = gen_circular(&CircularCaseSpec { segments, ..Default::default() });
    let network = Network::from_case_file(case).unwrap();
    let cfg = SimConfig { demand_continuation: false, max_iter: 60, ..SimConfig::default() };

    // A deterministic pseudo-random diameter pattern spanning the box.
    let mut seed = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64
    };

    for trial in 0..8 {
        let mut design = uniform_design(&network, 0.2).unwrap();
        for d in design.diameters.iter_mut() {
            let u = next();
            *d = match trial {
                0 => 0.2,
                1 => 0.05 + 0.1 * u,
                2 => 0.02 + 0.05 * u,
                3 => 0.005 + 0.3 * u,
                _ => 1e-4 + (0.4 - 1e-4) * u * u,
            };
        }
        let t = Instant::now();
        let result = solve_state(&network, &design, &cfg);
        let ms = t.elapsed().as_secs_f64() * 1e3;
        match result {
            Ok(r) => println!(
                "trial {trial}: converged={} iters={} residual={:.2e} ({ms:.0} ms)",
                r.converged, r.iterations, r.residual_norm
            ),
            Err(e) => println!("trial {trial}: error {e} ({ms:.0} ms)"),
        }
    }
}
