//! Steady-state thermo-hydraulic simulation.
//!
//! `solve_state` assembles the nodal mass/energy balances, pipe momentum and
//! energy equations, consumer valve closures and producer injections into one
//! nonlinear system and drives it to `tol` with a damped Newton iteration
//! (Armijo backtracking, sparse LU). Pressures are referenced per component
//! and shifted afterwards so the critical consumer keeps the standard heat
//! exchanger differential; pump costs read these shifted pressures.

pub mod adjoint;
pub mod physics;
pub(crate) mod system;

use crate::design::{DesignVector, StateVector};
use crate::error::{HeatNetError, Result};
use crate::network::Network;
use crate::sim::system::{assemble, pressure_shifts, ShiftPlan, SimLayout, SimOptions};
use faer::prelude::Solve;
use faer::sparse::SparseColMat;

type SparseLu = faer::sparse::linalg::solvers::Lu<usize, f64>;

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    /// Convergence tolerance on the scaled residual (inf-norm).
    pub tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// Retry a failed solve by ramping consumer demand up in stages.
    pub demand_continuation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { tol: 1e-10, max_iter: 200, max_backtracks: 30, demand_continuation: true }
    }
}

/// Outcome of a state solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub state: StateVector,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// A converged solve plus everything the adjoint needs: the raw unknown
/// vector, the factorized Jacobian at the solution and the pressure shifts.
pub(crate) struct Solved {
    pub result: SimResult,
    pub layout: SimLayout,
    pub x: Vec<f64>,
    pub lu: Option<SparseLu>,
    pub shifts: Vec<ShiftPlan>,
}

impl Solved {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart { signature: self.layout.signature(), x: self.x.clone() }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    pub signature: u64,
    pub x: Vec<f64>,
}

/// Solve the network state for a design. Newton non-convergence yields
/// `converged = false`; structural problems (isolated consumers, invalid
/// designs) are hard errors.
pub fn solve_state(network: &Network, design: &DesignVector, config: &SimConfig) -> Result<SimResult> {
    solve_system(network, design, config, &SimOptions::standard(), None).map(|s| s.result)
}

pub(crate) fn solve_system(
    network: &Network,
    design: &DesignVector,
    config: &SimConfig,
    options: &SimOptions,
    warm: Option<&WarmStart>,
) -> Result<Solved> {
    let layout = SimLayout::build(network, design)?;
    let signature = layout.signature();

    // A warm start from a distant state can stall Newton; give it a short
    // budget and fall back to a block-preconditioned fresh start.
    let cold_start = |options: &SimOptions, config: &SimConfig| -> Result<NewtonOutcome> {
        let mut x0 = initial_guess(network, &layout, design, options)?;
        let reached = block_precondition(network, &layout, design, options, &mut x0, config)?;
        if reached <= config.tol {
            // Alternation converged outright; factorize once for the adjoint.
            let done = SimConfig { max_iter: 0, ..*config };
            return newton(network, &layout, design, options, &done, x0);
        }
        newton(network, &layout, design, options, config, x0)
    };
    let mut attempt = match warm {
        Some(w) if w.signature == signature && w.x.len() == layout.n_unknowns() => {
            let quick = SimConfig { max_iter: config.max_iter.min(20), ..*config };
            let warm_try = newton(network, &layout, design, options, &quick, w.x.clone())?;
            if warm_try.converged {
                warm_try
            } else {
                cold_start(options, config)?
            }
        }
        _ => cold_start(options, config)?,
    };
    if !attempt.converged && config.demand_continuation {
        // Ramp demand up in stages from a preconditioned fresh start.
        let mut opts = options.clone();
        opts.demand_scale = 0.25 * options.demand_scale;
        let mut x = initial_guess(network, &layout, design, &opts)?;
        block_precondition(network, &layout, design, &opts, &mut x, config)?;
        for stage in [0.25, 0.5, 0.75, 1.0] {
            opts.demand_scale = options.demand_scale * stage;
            let stage_attempt = newton(network, &layout, design, &opts, config, x.clone())?;
            if !stage_attempt.converged {
                break;
            }
            x = stage_attempt.x.clone();
            if stage == 1.0 {
                attempt = stage_attempt;
            }
        }
    }

    let shifts = if attempt.converged {
        pressure_shifts(network, &layout, &attempt.x)
    } else {
        Vec::new()
    };
    let state = extract_state(network, &layout, &attempt.x, &shifts);
    Ok(Solved {
        result: SimResult {
            state,
            converged: attempt.converged,
            iterations: attempt.iterations,
            residual_norm: attempt.residual_norm,
        },
        layout,
        x: attempt.x,
        lu: attempt.lu,
        shifts,
    })
}

struct NewtonOutcome {
    x: Vec<f64>,
    converged: bool,
    iterations: usize,
    residual_norm: f64,
    lu: Option<SparseLu>,
}

/// Damped Newton on a square subsystem: the given rows, with unknowns at the
/// given columns, everything else frozen. Updates `x` in place and returns
/// the final sub-residual norm.
fn sub_newton(
    network: &Network,
    layout: &SimLayout,
    design: &DesignVector,
    options: &SimOptions,
    x: &mut Vec<f64>,
    rows: &[usize],
    cols: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    debug_assert_eq!(rows.len(), cols.len());
    let m = rows.len();
    let mut row_of = vec![usize::MAX; layout.n_unknowns()];
    for (k, &r) in rows.iter().enumerate() {
        row_of[r] = k;
    }
    let mut col_of = vec![usize::MAX; layout.n_unknowns()];
    for (k, &c) in cols.iter().enumerate() {
        col_of[c] = k;
    }
    let mut norm = f64::INFINITY;
    for _ in 0..max_iter {
        let asm = assemble(network, layout, design, options, x, true)?;
        let r_sub: Vec<f64> = rows.iter().map(|&r| asm.residual[r]).collect();
        norm = linf(&r_sub);
        if !norm.is_finite() || norm <= tol {
            break;
        }
        let trips: Vec<faer::sparse::Triplet<usize, usize, f64>> = asm
            .triplets
            .iter()
            .filter(|t| row_of[t.row] != usize::MAX && col_of[t.col] != usize::MAX)
            .map(|t| faer::sparse::Triplet::new(row_of[t.row], col_of[t.col], t.val))
            .collect();
        let Ok(jac) = SparseColMat::try_new_from_triplets(m, m, &trips) else { break };
        let Ok(lu) = jac.sp_lu() else { break };
        let rhs = faer::Mat::from_fn(m, 1, |i, _| -r_sub[i]);
        let delta = lu.solve(&rhs);

        let merit0 = l2(&r_sub);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let mut trial = x.clone();
            for (k, &c) in cols.iter().enumerate() {
                trial[c] += alpha * delta[(k, 0)];
            }
            if let Ok(asm_t) = assemble(network, layout, design, options, &trial, false) {
                let merit = l2(&rows.iter().map(|&r| asm_t.residual[r]).collect::<Vec<_>>());
                if merit.is_finite() && merit <= (1.0 - 1e-4 * alpha) * merit0 {
                    *x = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(norm)
}

/// Block alternation between the hydraulic subsystem (flows and pressures,
/// temperatures frozen) and the thermal subsystem (temperatures, flows
/// frozen). Cuts the stiff coupling between trickle flows and their exit
/// temperatures that stalls a monolithic Newton started far from the
/// solution.
fn block_precondition(
    network: &Network,
    layout: &SimLayout,
    design: &DesignVector,
    options: &SimOptions,
    x: &mut Vec<f64>,
    config: &SimConfig,
) -> Result<f64> {
    let hyd_rows: Vec<usize> = (0..layout.n_e + layout.n_n).collect();
    let hyd_cols = hyd_rows.clone();
    let th_rows: Vec<usize> = (layout.n_e + layout.n_n..2 * (layout.n_e + layout.n_n)).collect();
    let th_cols = th_rows.clone();
    let mut last = f64::INFINITY;
    let mut stall_count = 0;
    for _round in 0..40 {
        sub_newton(network, layout, design, options, x, &hyd_rows, &hyd_cols, 1e-12, 12)?;
        sub_newton(network, layout, design, options, x, &th_rows, &th_cols, 1e-12, 12)?;
        let asm = assemble(network, layout, design, options, x, false)?;
        let full = linf(&asm.residual);
        if !full.is_finite() {
            return Ok(f64::INFINITY);
        }
        if full <= config.tol {
            return Ok(full); // alternation alone closed the system
        }
        if full > 0.9 * last {
            stall_count += 1;
            if stall_count >= 2 {
                return Ok(full);
            }
        } else {
            stall_count = 0;
        }
        last = full;
    }
    let asm = assemble(network, layout, design, options, x, false)?;
    Ok(linf(&asm.residual))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, a| m.max(a.abs()))
}

fn newton(
    network: &Network,
    layout: &SimLayout,
    design: &DesignVector,
    options: &SimOptions,
    config: &SimConfig,
    mut x: Vec<f64>,
) -> Result<NewtonOutcome> {
    let n = layout.n_unknowns();
    let mut residual_norm = f64::INFINITY;
    for it in 0..=config.max_iter {
        let asm = assemble(network, layout, design, options, &x, true)?;
        residual_norm = linf(&asm.residual);
        if !residual_norm.is_finite() {
            return Ok(NewtonOutcome { x, converged: false, iterations: it, residual_norm, lu: None });
        }
        let jac = SparseColMat::try_new_from_triplets(n, n, &asm.triplets)
            .map_err(|_| HeatNetError::Indeterminate("jacobian assembly".into()))?;
        if residual_norm <= config.tol {
            let lu = jac.sp_lu().ok();
            return Ok(NewtonOutcome { x, converged: true, iterations: it, residual_norm, lu });
        }
        if it == config.max_iter {
            break;
        }
        let lu = match jac.sp_lu() {
            Ok(lu) => lu,
            Err(_) => {
                return Ok(NewtonOutcome {
                    x,
                    converged: false,
                    iterations: it,
                    residual_norm,
                    lu: None,
                })
            }
        };
        let rhs = faer::Mat::from_fn(n, 1, |i, _| -asm.residual[i]);
        let delta = lu.solve(&rhs);

        let merit0 = l2(&asm.residual);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..config.max_backtracks {
            let trial: Vec<f64> = (0..n).map(|i| x[i] + alpha * delta[(i, 0)]).collect();
            if let Ok(asm_t) = assemble(network, layout, design, options, &trial, false) {
                let merit = l2(&asm_t.residual);
                if merit.is_finite() && merit <= (1.0 - 1e-4 * alpha) * merit0 {
                    x = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(NewtonOutcome { x, converged: false, iterations: it + 1, residual_norm, lu: None });
        }
    }
    Ok(NewtonOutcome { x, converged: false, iterations: config.max_iter, residual_norm, lu: None })
}

/// Initial state: flows and pressures from a linearized hydraulic solve with
/// consumers drawing their nominal flow, temperatures from per-side constants.
fn initial_guess(
    network: &Network,
    layout: &SimLayout,
    design: &DesignVector,
    options: &SimOptions,
) -> Result<Vec<f64>> {
    use crate::sim::system::EdgeClass;
    use faer::sparse::Triplet;

    let p = &network.params;
    let n_qp = layout.n_e + layout.n_n;
    let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::new();
    let mut rhs = vec![0.0; n_qp];
    let mut pin_queue: Vec<usize> = (0..layout.n_press).collect();
    pin_queue.reverse();

    let q_ref = layout.q_scale;
    for slot in 0..layout.n_e {
        let row = slot;
        match layout.class[slot] {
            EdgeClass::Pipe { .. } => {
                let (tn, hn) = layout.edge_ends(network, slot);
                let r_lin = physics::pipe_drop_smooth(q_ref, layout.diam[slot], layout.length[slot], p)
                    .value
                    / q_ref;
                trips.push(Triplet::new(row, layout.n_e + tn, 1.0 / layout.p_scale));
                trips.push(Triplet::new(row, layout.n_e + hn, -1.0 / layout.p_scale));
                trips.push(Triplet::new(row, slot, -r_lin / layout.p_scale));
            }
            EdgeClass::HeatingSystem => {
                let e = layout.active_edges[slot];
                let spec = &network.consumers[&network.edges[e].id];
                let q_nom = spec.demand * options.demand_scale / (p.rho * p.c_p * 30.0);
                trips.push(Triplet::new(row, slot, 1.0 / layout.q_scale));
                rhs[row] = q_nom / layout.q_scale;
            }
            EdgeClass::ProducerArc { producer, slack } => {
                if slack {
                    let pin = layout.pin_node[pin_queue.pop().unwrap()];
                    trips.push(Triplet::new(row, layout.n_e + pin, 1.0 / layout.p_scale));
                } else {
                    trips.push(Triplet::new(row, slot, 1.0 / layout.q_scale));
                    rhs[row] = design.inflows[producer] / layout.q_scale;
                }
            }
        }
    }
    for node in 0..layout.n_n {
        let row = layout.n_e + node;
        if layout.drop_node.contains(&node) {
            let pin = layout.pin_node[pin_queue.pop().unwrap()];
            trips.push(Triplet::new(row, layout.n_e + pin, 1.0 / layout.p_scale));
        }
    }
    for slot in 0..layout.n_e {
        let (tn, hn) = layout.edge_ends(network, slot);
        if !layout.drop_node.contains(&hn) {
            trips.push(Triplet::new(layout.n_e + hn, slot, 1.0 / layout.q_scale));
        }
        if !layout.drop_node.contains(&tn) {
            trips.push(Triplet::new(layout.n_e + tn, slot, -1.0 / layout.q_scale));
        }
    }

    let mat = SparseColMat::try_new_from_triplets(n_qp, n_qp, &trips)
        .map_err(|_| HeatNetError::Indeterminate("linear init assembly".into()))?;
    let lu = mat.sp_lu().map_err(|_| HeatNetError::SingularJacobian)?;
    let b = faer::Mat::from_fn(n_qp, 1, |i, _| rhs[i]);
    let sol = lu.solve(&b);

    let th_house_max = network
        .consumers
        .values()
        .map(|c| c.theta_house)
        .fold(0.0f64, f64::max);
    let th_feed = 0.95 * layout.th_scale;
    let th_ret = (th_house_max + 8.0).max(th_feed - 28.0);

    let mut x = vec![0.0; layout.n_unknowns()];
    for slot in 0..layout.n_e {
        x[layout.iq(slot)] = sol[(slot, 0)];
    }
    for node in 0..layout.n_n {
        x[layout.ip(node)] = sol[(layout.n_e + node, 0)];
        let kind = network.nodes[layout.active_nodes[node]].kind;
        x[layout.ith(node)] = if kind.is_feed_side() { th_feed } else { th_ret };
    }
    for slot in 0..layout.n_e {
        use crate::sim::system::EdgeClass;
        let e = layout.active_edges[slot];
        x[layout.itx(slot)] = match layout.class[slot] {
            EdgeClass::Pipe { .. } => {
                let (tn, _) = layout.edge_ends(network, slot);
                x[layout.ith(tn)]
            }
            EdgeClass::HeatingSystem => th_ret,
            EdgeClass::ProducerArc { .. } => {
                network.producers[&network.edges[e].id].injection_temp
            }
        };
    }
    Ok(x)
}

/// Test support: solve and report the worst residual rows when stuck.
pub fn debug_stuck_rows(network: &Network, design: &DesignVector, config: &SimConfig) {
    let layout = SimLayout::build(network, design).expect("layout");
    let options = SimOptions::standard();
    let x0 = initial_guess(network, &layout, design, &options).expect("init");
    let outcome = newton(network, &layout, design, &options, config, x0).expect("newton");
    println!(
        "newton: converged={} iters={} residual={:.3e}",
        outcome.converged, outcome.iterations, outcome.residual_norm
    );
    if outcome.converged {
        return;
    }
    let asm = assemble(network, &layout, design, &options, &outcome.x, false).expect("assemble");
    let mut rows: Vec<(usize, f64)> =
        asm.residual.iter().enumerate().map(|(i, r)| (i, r.abs())).collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1));
    for &(row, mag) in rows.iter().take(8) {
        let (block, idx) = if row < layout.n_e {
            ("edge-char", row)
        } else if row < layout.n_e + layout.n_n {
            ("mass/pin", row - layout.n_e)
        } else if row < layout.n_e + 2 * layout.n_n {
            ("mixing", row - layout.n_e - layout.n_n)
        } else {
            ("exit", row - layout.n_e - 2 * layout.n_n)
        };
        let extra = if block == "edge-char" || block == "exit" {
            let e = layout.active_edges[idx];
            let q = outcome.x[layout.iq(idx)];
            format!(
                "edge id {} kind {:?} q={q:.3e} tx={:.2}",
                network.edges[e].id,
                network.edges[e].kind,
                outcome.x[layout.itx(idx)]
            )
        } else {
            let ni = layout.active_nodes[idx];
            format!(
                "node id {} kind {:?} p={:.3e} th={:.2}",
                network.nodes[ni].id,
                network.nodes[ni].kind,
                outcome.x[layout.ip(idx)],
                outcome.x[layout.ith(idx)]
            )
        };
        println!("  |r|={mag:.3e} {block}[{idx}] {extra}");
    }
}

/// Test support: worst relative mismatch between the analytic Jacobian and
/// central finite differences of the residual, over pseudo-random states
/// that include reversed flows.
pub fn debug_fd_jacobian(network: &Network, design: &DesignVector, trials: u32) -> f64 {
    let layout = SimLayout::build(network, design).expect("layout");
    let options = SimOptions::standard();
    let n = layout.n_unknowns();
    let mut seed = 0x243f6a8885a308d3u64;
    let mut next = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut x = vec![0.0; n];
        for slot in 0..layout.n_e {
            // Signed flows of healthy magnitude: the clamped upwind
            // sensitivities near stagnation are intentionally inexact.
            let sign = if next() < 0.45 { -1.0 } else { 1.0 };
            x[layout.iq(slot)] = sign * (5e-5 + 6e-3 * next());
        }
        for node in 0..layout.n_n {
            x[layout.ip(node)] = 2e4 * (next() - 0.5);
            x[layout.ith(node)] = 15.0 + 45.0 * next();
        }
        for slot in 0..layout.n_e {
            x[layout.itx(slot)] = 12.0 + 45.0 * next();
        }
        let asm = assemble(network, &layout, design, &options, &x, true).expect("assemble");
        let mut dense = vec![vec![0.0; n]; n];
        for t in &asm.triplets {
            dense[t.row][t.col] += t.val;
        }
        for col in 0..n {
            let h = 1e-7 * x[col].abs().max(1e-4);
            let mut xp = x.clone();
            xp[col] += h;
            let mut xm = x.clone();
            xm[col] -= h;
            let rp = assemble(network, &layout, design, &options, &xp, false).unwrap().residual;
            let rm = assemble(network, &layout, design, &options, &xm, false).unwrap().residual;
            for row in 0..n {
                let fd = (rp[row] - rm[row]) / (2.0 * h);
                let an = dense[row][col];
                let scale = an.abs().max(fd.abs()).max(1e-6);
                let rel = (an - fd).abs() / scale;
                if rel > worst && (an.abs() > 1e-9 || fd.abs() > 1e-9) {
                    worst = rel;
                    let block_of = |i: usize| {
                        if i < layout.n_e {
                            format!("edge-char[{i}]")
                        } else if i < layout.n_e + layout.n_n {
                            format!("mass/pin[{}]", i - layout.n_e)
                        } else if i < layout.n_e + 2 * layout.n_n {
                            format!("mixing[{}]", i - layout.n_e - layout.n_n)
                        } else {
                            format!("exit[{}]", i - layout.n_e - 2 * layout.n_n)
                        }
                    };
                    let var_of = |i: usize| {
                        if i < layout.n_e {
                            format!("q[{i}]")
                        } else if i < layout.n_e + layout.n_n {
                            format!("p[{}]", i - layout.n_e)
                        } else if i < layout.n_e + 2 * layout.n_n {
                            format!("th[{}]", i - layout.n_e - layout.n_n)
                        } else {
                            format!("tx[{}]", i - layout.n_e - 2 * layout.n_n)
                        }
                    };
                    eprintln!(
                        "mismatch {:.3e} at row {} ({}), col {} ({}): analytic {an:.6e} vs fd {fd:.6e}",
                        rel,
                        row,
                        block_of(row),
                        col,
                        var_of(col)
                    );
                }
            }
        }
    }
    worst
}

fn extract_state(
    network: &Network,
    layout: &SimLayout,
    x: &[f64],
    shifts: &[ShiftPlan],
) -> StateVector {
    let mut state = StateVector::zeros(network);
    for (slot, &e) in layout.active_edges.iter().enumerate() {
        state.flow[e] = x[layout.iq(slot)];
        state.theta_exit[e] = x[layout.itx(slot)];
    }
    let mut shift_of_node = vec![0.0; layout.n_n];
    for plan in shifts {
        for &n in &plan.nodes {
            shift_of_node[n] = plan.shift;
        }
    }
    for (slot, &ni) in layout.active_nodes.iter().enumerate() {
        state.pressure[ni] = x[layout.ip(slot)] + shift_of_node[slot];
        state.theta_node[ni] = x[layout.ith(slot)];
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::uniform_design;
    use crate::network::testutil::{toy_network, toy_network_with};

    #[test]
    fn toy_network_converges_and_meets_demand() {
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.1).unwrap();
        let result = solve_state(&net, &design, &SimConfig::default()).unwrap();
        assert!(result.converged, "residual {}", result.residual_norm);
        // Heating-system edge is index 2: delivered heat equals demand.
        let q = result.state.flow[2];
        let th_f = result.state.theta_node[2];
        let tx = result.state.theta_exit[2];
        let delivered = net.params.rho * net.params.c_p * q * (th_f - tx);
        assert!(
            (delivered - 15_000.0).abs() / 15_000.0 < 1e-6,
            "delivered = {delivered}"
        );
    }

    #[test]
    fn toy_state_matches_bisection_oracle() {
        // Independent oracle: the loop has a single flow q. The feed-node
        // temperature follows from the feed pipe decay at flow q, the radiator
        // return temperature from a bisection on the radiator characteristic,
        // and q itself from a bisection on the heater energy balance.
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.1).unwrap();
        let p = net.params;
        let demand = 15_000.0;
        let theta_house = 10.0;
        let (xi, n_exp, big_theta) = (200.0, 1.2, 60.0);

        let theta_feed_at = |q: f64| {
            crate::sim::physics::pipe_outlet_temperature(big_theta, q, 0.1, 100.0, &p).unwrap()
        };
        // Radiator return temperature delivering exactly `demand` at feed t_f.
        let theta_ret_at = |t_f: f64| {
            let (mut lo, mut hi) = (theta_house + 1e-9, t_f - 1e-9);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let lm = crate::sim::physics::lmtd_chen(t_f - theta_house, mid - theta_house).unwrap();
                if xi * lm.powf(n_exp) > demand {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let (mut qlo, mut qhi) = (1e-6, 1.0);
        for _ in 0..200 {
            let q = 0.5 * (qlo + qhi);
            let t_f = theta_feed_at(q);
            let t_r = theta_ret_at(t_f);
            let implied = demand / (p.rho * p.c_p * (t_f - t_r));
            if implied > q {
                qlo = q;
            } else {
                qhi = q;
            }
        }
        let q_oracle = 0.5 * (qlo + qhi);
        let tf_oracle = theta_feed_at(q_oracle);
        let tr_oracle = theta_ret_at(tf_oracle);

        let result = solve_state(&net, &design, &SimConfig::default()).unwrap();
        assert!(result.converged);
        let q_sim = result.state.flow[2];
        let tf_sim = result.state.theta_node[2];
        let tr_sim = result.state.theta_exit[2];
        assert!((q_sim - q_oracle).abs() / q_oracle < 1e-6, "q {q_sim} vs {q_oracle}");
        assert!((tf_sim - tf_oracle).abs() / tf_oracle < 1e-6, "tf {tf_sim} vs {tf_oracle}");
        assert!((tr_sim - tr_oracle).abs() / tr_oracle < 1e-6, "tr {tr_sim} vs {tr_oracle}");
        // Pressure closure: the single consumer is critical, so its
        // differential equals the target.
        let dp_hs = result.state.pressure[2] - result.state.pressure[3];
        assert!((dp_hs - system::HS_DP_TARGET).abs() < 1e-6 * system::HS_DP_TARGET);
    }

    #[test]
    fn zero_demand_network_idles() {
        let net = toy_network(0.0, 100.0);
        let design = uniform_design(&net, 0.1).unwrap();
        let result = solve_state(&net, &design, &SimConfig::default()).unwrap();
        assert!(result.converged);
        assert!(result.state.flow[2].abs() < 1e-8, "hs flow {}", result.state.flow[2]);
        let q = result.state.flow[2];
        let delivered =
            net.params.rho * net.params.c_p * q * (result.state.theta_node[2] - result.state.theta_exit[2]);
        assert!(delivered.abs() < 1.0, "delivered = {delivered}");
    }

    #[test]
    fn removed_pipe_isolates_consumer() {
        let net = toy_network(15_000.0, 100.0);
        let mut design = uniform_design(&net, 0.1).unwrap();
        design.diameters[0] = 0.0;
        let err = solve_state(&net, &design, &SimConfig::default()).unwrap_err();
        assert!(matches!(err, HeatNetError::IsolatedConsumer(ids) if ids == vec![2]));
    }

    #[test]
    fn second_law_along_pipes_and_radiators() {
        let net = toy_network_with(20_000.0, 300.0, 200.0, 1.2, 60.0);
        let design = uniform_design(&net, 0.08).unwrap();
        let result = solve_state(&net, &design, &SimConfig::default()).unwrap();
        assert!(result.converged);
        // Feed pipe: exit no hotter than the producer injection.
        assert!(result.state.theta_exit[0] <= 60.0 + 1e-9);
        // Radiator: return strictly below feed.
        assert!(result.state.theta_exit[2] < result.state.theta_node[2]);
    }
}
