//! Relaxed, penalized NLP topology optimizer.
//!
//! Diameters stay continuous; the fixed installation cost re-enters through
//! a sigmoid whose slope grows along a continuation schedule, driving the
//! design near-discrete. Demand satisfaction is handled by an augmented
//! Lagrangian on the delivered-heat shortfall; gradients come from the
//! discrete adjoint of the state system. After each continuation stage the
//! design is thresholded into a discrete topology, re-simulated at the raw
//! catalogue cost, and kept if it beats the incumbent.

use crate::costing::{
    total_cost_model, CostBreakdown, CostMode, CostModel,
};
use crate::design::{uniform_design, DesignVector};
use crate::error::{HeatNetError, Result};
use crate::lbfgsb::{minimize, LbfgsbConfig};
use crate::network::Network;
use crate::sim::adjoint::{adjoint_for_solved, CostFunctional, DesignGradient, StateGradient};
use crate::sim::physics::D_EPS;
use crate::sim::system::{EdgeClass, SimOptions};
use crate::sim::{solve_system, SimConfig, SimResult, Solved, WarmStart};
use std::cell::RefCell;

#[derive(Debug, Clone)]
pub struct PnlpConfig {
    /// Uniform starting diameter when no initial design is given.
    pub d_init: f64,
    /// Sigmoid slope continuation, strictly increasing, 1/m.
    pub k_schedule: Vec<f64>,
    /// Augmented-Lagrangian rounds per continuation stage.
    pub max_outer: usize,
    /// Quasi-Newton iterations per round.
    pub max_inner: usize,
    /// Projected-gradient tolerance of the inner solver.
    pub tol_opt: f64,
    /// Lower diameter bound of the relaxation.
    pub d_lower: f64,
    /// Producer inflow upper bound as a multiple of the nominal total flow.
    pub gamma_upper_factor: f64,
    /// Initial constraint penalty weight; 0 picks it from the initial cost.
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    /// Relative delivered-heat shortfall accepted as feasible.
    pub demand_tolerance: f64,
    pub sim: SimConfig,
}

impl Default for PnlpConfig {
    fn default() -> Self {
        PnlpConfig {
            d_init: 0.2,
            k_schedule: vec![50.0, 100.0, 200.0, 400.0],
            max_outer: 3,
            max_inner: 120,
            tol_opt: 1e-6,
            d_lower: D_EPS,
            gamma_upper_factor: 2.0,
            penalty_initial: 0.0,
            penalty_growth: 10.0,
            demand_tolerance: 1e-4,
            sim: SimConfig::default(),
        }
    }
}

impl PnlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.k_schedule.windows(2).all(|w| w[1] > w[0]) || self.k_schedule.is_empty() {
            return Err(HeatNetError::InvalidParam {
                name: "k_schedule",
                reason: "must be nonempty and strictly increasing".into(),
            });
        }
        if !(self.tol_opt > 0.0) || !(self.demand_tolerance > 0.0) {
            return Err(HeatNetError::InvalidParam {
                name: "tol_opt/demand_tolerance",
                reason: "tolerances must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Optimization outcome shared by both optimizers.
#[derive(Debug, Clone)]
pub struct OptResult {
    pub design: DesignVector,
    pub cost: CostBreakdown,
    pub converged: bool,
    pub outer_iterations: usize,
    /// (cumulative inner iteration, objective value).
    pub history: Vec<(usize, f64)>,
}

/// Threshold a relaxed design into a discrete topology: pairs below `d_min`
/// are removed (both mirrors), pairs at or above it are kept unchanged.
/// Errors if removal disconnects a consumer with positive demand.
pub fn threshold_topology(
    network: &Network,
    design: &DesignVector,
    d_min: f64,
) -> Result<DesignVector> {
    let mut out = design.clone();
    for d in out.diameters.iter_mut() {
        if *d < d_min {
            *d = 0.0;
        }
    }
    // Connectivity check on the thresholded topology.
    match crate::sim::system::SimLayout::build(network, &out) {
        Ok(_) => Ok(out),
        Err(HeatNetError::IsolatedConsumer(ids)) => Err(HeatNetError::ThresholdDisconnects(ids)),
        Err(e) => Err(e),
    }
}

/// Feed-side adjacency over pipe pairs: node index -> (pair slot, neighbor).
fn feed_adjacency(network: &Network) -> Vec<Vec<(usize, usize)>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); network.nodes.len()];
    for (slot, &(f, _)) in network.pipe_pairs.iter().enumerate() {
        let e = &network.edges[f];
        let a = network.node_index(e.tail).unwrap();
        let b = network.node_index(e.head).unwrap();
        adj[a].push((slot, b));
        adj[b].push((slot, a));
    }
    adj
}

fn producer_feed_nodes(network: &Network) -> Vec<usize> {
    network
        .producer_arcs
        .iter()
        .map(|&arc| network.node_index(network.edges[arc].head).unwrap())
        .collect()
}

fn demand_feed_nodes(network: &Network) -> Vec<usize> {
    demand_positive_hs(network)
        .iter()
        .map(|&e| network.node_index(network.edges[e].tail).unwrap())
        .collect()
}

/// Pipe pairs whose removal would disconnect a demand-positive consumer from
/// every producer. These can never leave the topology, so the optimizer
/// holds them at the catalogue minimum instead of letting them dip below it.
pub(crate) fn mandatory_pairs(network: &Network) -> Vec<bool> {
    let adj = feed_adjacency(network);
    let sources = producer_feed_nodes(network);
    let targets = demand_feed_nodes(network);
    let n_pairs = network.n_pipe_pairs();
    (0..n_pairs)
        .map(|skip| {
            let mut seen = vec![false; network.nodes.len()];
            let mut stack = sources.clone();
            for &s in &sources {
                seen[s] = true;
            }
            while let Some(v) = stack.pop() {
                for &(slot, w) in &adj[v] {
                    if slot != skip && !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            targets.iter().any(|&t| !seen[t])
        })
        .collect()
}

/// Threshold with a deterministic connectivity repair: any consumer cut off
/// by the threshold is reconnected along its widest relaxed path, with the
/// restored pairs clamped up to the catalogue minimum.
fn threshold_with_repair(
    network: &Network,
    relaxed: &DesignVector,
    d_min: f64,
) -> Result<DesignVector> {
    match threshold_topology(network, relaxed, d_min) {
        Ok(out) => return Ok(out),
        Err(HeatNetError::ThresholdDisconnects(_)) => {}
        Err(e) => return Err(e),
    }
    let mut out = relaxed.clone();
    for d in out.diameters.iter_mut() {
        if *d < d_min {
            *d = 0.0;
        }
    }
    let adj = feed_adjacency(network);
    let sources = producer_feed_nodes(network);
    for &target in &demand_feed_nodes(network) {
        // Connected set under the current (partially repaired) topology.
        let mut seen = vec![false; network.nodes.len()];
        let mut stack = sources.clone();
        for &s in &sources {
            seen[s] = true;
        }
        while let Some(v) = stack.pop() {
            for &(slot, w) in &adj[v] {
                if out.diameters[slot] > 0.0 && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if seen[target] {
            continue;
        }
        // Bottleneck-widest path from the connected set to the target over
        // the relaxed diameters.
        let n = network.nodes.len();
        let mut width = vec![f64::NEG_INFINITY; n];
        let mut via: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut done = vec![false; n];
        for (v, &s) in seen.iter().enumerate() {
            if s {
                width[v] = f64::INFINITY;
            }
        }
        loop {
            let mut best: Option<usize> = None;
            for v in 0..n {
                if !done[v] && width[v] > f64::NEG_INFINITY {
                    let better = match best {
                        None => true,
                        Some(b) => width[v] > width[b] || (width[v] == width[b] && v < b),
                    };
                    if better {
                        best = Some(v);
                    }
                }
            }
            let Some(v) = best else { break };
            done[v] = true;
            if v == target {
                break;
            }
            for &(slot, w) in &adj[v] {
                let cand = width[v].min(relaxed.diameters[slot].max(1e-12));
                if cand > width[w] {
                    width[w] = cand;
                    via[w] = Some((slot, v));
                }
            }
        }
        if width[target] == f64::NEG_INFINITY {
            return Err(HeatNetError::ThresholdDisconnects(vec![network.nodes[target].id]));
        }
        let mut v = target;
        while let Some((slot, prev)) = via[v] {
            out.diameters[slot] = relaxed.diameters[slot].max(d_min);
            v = prev;
            if width[v] == f64::INFINITY && seen[v] {
                break;
            }
        }
    }
    match crate::sim::system::SimLayout::build(network, &out) {
        Ok(_) => Ok(out),
        Err(HeatNetError::IsolatedConsumer(ids)) => Err(HeatNetError::ThresholdDisconnects(ids)),
        Err(e) => Err(e),
    }
}

/// Delivered heat per demand-positive consumer, aligned with `demand_hs`.
pub(crate) fn delivered_heat(network: &Network, state: &SimResult, hs_edges: &[usize]) -> Vec<f64> {
    hs_edges
        .iter()
        .map(|&e| {
            let edge = &network.edges[e];
            let tail = network.node_index(edge.tail).unwrap();
            let q = state.state.flow[e];
            network.params.rho
                * network.params.c_p
                * q
                * (state.state.theta_node[tail] - state.state.theta_exit[e])
        })
        .collect()
}

pub(crate) fn demand_positive_hs(network: &Network) -> Vec<usize> {
    network
        .hs_edges
        .iter()
        .copied()
        .filter(|&e| network.consumers[&network.edges[e].id].demand > 0.0)
        .collect()
}

/// Augmented-Lagrangian wrapper around a cost mode: demand shortfall and
/// slack-producer nonnegativity as inequality terms.
pub(crate) struct AugmentedCost<'a> {
    pub mode: CostMode,
    pub model: CostModel,
    pub hs_edges: &'a [usize],
    pub lambda: &'a [f64],
    pub lambda_slack: &'a [f64],
    pub mu: f64,
}

impl AugmentedCost<'_> {
    fn base(
        &self,
        network: &Network,
        design: &DesignVector,
        solved: &Solved,
    ) -> (f64, StateGradient, DesignGradient) {
        let g = crate::costing::total_cost_state_gradients(
            design,
            &solved.result,
            network,
            self.mode,
            &self.model,
        );
        let breakdown = total_cost_model(design, &solved.result, network, self.mode, &self.model)
            .expect("cost of converged state");
        (
            breakdown.total_npv,
            StateGradient {
                d_flow: g.d_flow,
                d_pressure: g.d_pressure,
                d_theta_node: g.d_theta_node,
                d_theta_exit: vec![0.0; network.edges.len()],
            },
            DesignGradient {
                d_diameter: g.d_diameter,
                d_inflow: vec![0.0; network.n_producers()],
            },
        )
    }
}

/// Add the augmented-Lagrangian terms (demand shortfall per consumer plus
/// slack-arc nonnegativity) to a functional value and state gradient.
pub(crate) fn add_al_terms(
    network: &Network,
    solved: &Solved,
    hs_edges: &[usize],
    lambda: &[f64],
    lambda_slack: &[f64],
    mu: f64,
    value: &mut f64,
    sg: &mut StateGradient,
) {
    let p = &network.params;
    let state = &solved.result;

    for (ci, &e) in hs_edges.iter().enumerate() {
        let edge = &network.edges[e];
        let demand = network.consumers[&edge.id].demand;
        let tail = network.node_index(edge.tail).unwrap();
        let q = state.state.flow[e];
        let spread = state.state.theta_node[tail] - state.state.theta_exit[e];
        let delivered = p.rho * p.c_p * q * spread;
        let g = (demand - delivered) / demand;
        let t = lambda[ci] + mu * g;
        if t > 0.0 {
            *value += (t * t - lambda[ci] * lambda[ci]) / (2.0 * mu);
            let dpsi_d_delivered = -t / demand;
            sg.d_flow[e] += dpsi_d_delivered * p.rho * p.c_p * spread;
            sg.d_theta_node[tail] += dpsi_d_delivered * p.rho * p.c_p * q;
            sg.d_theta_exit[e] -= dpsi_d_delivered * p.rho * p.c_p * q;
        } else {
            *value -= lambda[ci] * lambda[ci] / (2.0 * mu);
        }
    }

    // Slack producer arcs must not run backwards.
    let layout = &solved.layout;
    for (slot, &e) in layout.active_edges.iter().enumerate() {
        if let EdgeClass::ProducerArc { producer, slack: true } = layout.class[slot] {
            let q = state.state.flow[e];
            let g = -q / layout.q_scale;
            let t = lambda_slack[producer] + mu * g;
            if t > 0.0 {
                *value += (t * t - lambda_slack[producer].powi(2)) / (2.0 * mu);
                sg.d_flow[e] -= t / layout.q_scale;
            } else {
                *value -= lambda_slack[producer].powi(2) / (2.0 * mu);
            }
        }
    }
}

impl CostFunctional for AugmentedCost<'_> {
    fn eval(
        &self,
        network: &Network,
        design: &DesignVector,
        solved: &Solved,
    ) -> (f64, StateGradient, DesignGradient) {
        let (mut value, mut sg, dg) = self.base(network, design, solved);
        add_al_terms(
            network,
            solved,
            self.hs_edges,
            self.lambda,
            self.lambda_slack,
            self.mu,
            &mut value,
            &mut sg,
        );
        (value, sg, dg)
    }
}

struct Scaling {
    n_pairs: usize,
    d_max: f64,
    gamma_ref: f64,
}

impl Scaling {
    fn to_design(&self, x: &[f64]) -> DesignVector {
        DesignVector {
            diameters: x[..self.n_pairs].iter().map(|v| v * self.d_max).collect(),
            inflows: x[self.n_pairs..].iter().map(|v| v * self.gamma_ref).collect(),
        }
    }
    fn from_design(&self, design: &DesignVector) -> Vec<f64> {
        design
            .diameters
            .iter()
            .map(|d| d / self.d_max)
            .chain(design.inflows.iter().map(|g| g / self.gamma_ref))
            .collect()
    }
    fn scale_gradient(&self, g: &DesignGradient) -> Vec<f64> {
        g.d_diameter
            .iter()
            .map(|v| v * self.d_max)
            .chain(g.d_inflow.iter().map(|v| v * self.gamma_ref))
            .collect()
    }
}

/// Run the penalized continuation from a uniform (or given) start.
pub fn optimize_pnlp(
    network: &Network,
    config: &PnlpConfig,
    init: Option<&DesignVector>,
) -> Result<OptResult> {
    config.validate()?;
    let model = CostModel::default();
    let d_min = model.d_min;

    let base = match init {
        Some(d) => {
            d.validate(network)?;
            d.clone()
        }
        None => uniform_design(network, config.d_init)?,
    };

    let scaling = Scaling {
        n_pairs: network.n_pipe_pairs(),
        d_max: network.params.d_max,
        gamma_ref: network.nominal_flow().max(1e-9),
    };
    // Bridges to live consumers can never be removed; hold them at the
    // catalogue minimum so thresholding keeps them installable.
    let mandatory = mandatory_pairs(network);
    let lower: Vec<f64> = (0..scaling.n_pairs)
        .map(|slot| {
            if mandatory[slot] {
                d_min / scaling.d_max
            } else {
                config.d_lower / scaling.d_max
            }
        })
        .chain(std::iter::repeat(0.0).take(network.n_producers()))
        .collect();
    let upper: Vec<f64> = std::iter::repeat(1.0)
        .take(scaling.n_pairs)
        .chain(std::iter::repeat(config.gamma_upper_factor).take(network.n_producers()))
        .collect();
    let mut x = scaling.from_design(&base);
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }

    let hs_edges = demand_positive_hs(network);
    let mut lambda = vec![0.0; hs_edges.len()];
    let mut lambda_slack = vec![0.0; network.n_producers()];

    // Penalty weight from the raw cost of the starting design.
    let start_design = scaling.to_design(&x);
    let warm: RefCell<Option<WarmStart>> = RefCell::new(None);
    let start_solved = solve_system(network, &start_design, &config.sim, &SimOptions::standard(), None)?;
    if !start_solved.result.converged {
        return Err(HeatNetError::NewtonFailed {
            iterations: start_solved.result.iterations,
            residual: start_solved.result.residual_norm,
        });
    }
    let start_cost =
        total_cost_model(&start_design, &start_solved.result, network, CostMode::Raw, &model)?;
    let mut mu = if config.penalty_initial > 0.0 {
        config.penalty_initial
    } else {
        (0.02 * start_cost.total_npv.abs()).max(1e4)
    };
    warm.replace(Some(start_solved.warm_start()));

    let mut history: Vec<(usize, f64)> = Vec::new();
    let mut global_iter = 0usize;
    let mut outer_iterations = 0usize;
    let mut last_inner_converged = false;
    let mut incumbent: Option<(DesignVector, CostBreakdown, bool)> = None;

    // Inner evaluations fail fast: no demand continuation, capped iterations.
    let inner_sim = SimConfig {
        demand_continuation: true,
        max_iter: config.sim.max_iter.min(60),
        ..config.sim
    };

    for &k in &config.k_schedule {
        for _round in 0..config.max_outer {
            outer_iterations += 1;
            let objective = |xhat: &[f64], want_grad: bool| -> Option<(f64, Option<Vec<f64>>)> {
                let design = scaling.to_design(xhat);
                let prev = warm.borrow().clone();
                let trial_sim = if want_grad {
                    inner_sim
                } else {
                    // Backtracked trials fail fast.
                    SimConfig { max_iter: 25, ..inner_sim }
                };
                let solved =
                    solve_system(network, &design, &trial_sim, &SimOptions::standard(), prev.as_ref())
                        .ok()?;
                if !solved.result.converged {
                    return None;
                }
                let functional = AugmentedCost {
                    mode: CostMode::Penalized { k },
                    model,
                    hs_edges: &hs_edges,
                    lambda: &lambda,
                    lambda_slack: &lambda_slack,
                    mu,
                };
                if want_grad {
                    // Keep the warm start anchored at gradient-bearing
                    // (accepted) points so wild trials cannot poison it.
                    warm.replace(Some(solved.warm_start()));
                    let (value, grad) =
                        adjoint_for_solved(network, &design, &solved, &functional).ok()?;
                    Some((value, Some(scaling.scale_gradient(&grad))))
                } else {
                    let (value, _, _) = functional.eval(network, &design, &solved);
                    Some((value, None))
                }
            };
            let inner_cfg = LbfgsbConfig {
                max_iter: config.max_inner,
                tol_grad: config.tol_opt,
                tol_grad_abs: config.tol_opt * start_cost.total_npv.abs().max(1.0),
                ..LbfgsbConfig::default()
            };
            let out = minimize(objective, &x, &lower, &upper, &inner_cfg);
            for v in &out.history {
                global_iter += 1;
                history.push((global_iter, *v));
            }
            x = out.x;
            last_inner_converged = out.converged;

            // Multiplier update at the round's final design.
            let design = scaling.to_design(&x);
            let prev = warm.borrow().clone();
            let solved =
                solve_system(network, &design, &config.sim, &SimOptions::standard(), prev.as_ref())?;
            if !solved.result.converged {
                break;
            }
            warm.replace(Some(solved.warm_start()));
            let delivered = delivered_heat(network, &solved.result, &hs_edges);
            let mut max_violation = 0.0f64;
            for (ci, &e) in hs_edges.iter().enumerate() {
                let demand = network.consumers[&network.edges[e].id].demand;
                let g = (demand - delivered[ci]) / demand;
                max_violation = max_violation.max(g);
                lambda[ci] = (lambda[ci] + mu * g).max(0.0);
            }
            for (slot, &e) in solved.layout.active_edges.iter().enumerate() {
                if let EdgeClass::ProducerArc { producer, slack: true } = solved.layout.class[slot] {
                    let g = -solved.result.state.flow[e] / solved.layout.q_scale;
                    lambda_slack[producer] = (lambda_slack[producer] + mu * g).max(0.0);
                }
            }
            if max_violation <= config.demand_tolerance {
                break;
            }
            mu *= config.penalty_growth;
        }

        // Stage candidate: threshold, re-simulate raw, track incumbent.
        let staged = scaling.to_design(&x);
        if let Ok(candidate) = threshold_with_repair(network, &staged, d_min) {
            if let Ok(resim) =
                solve_system(network, &candidate, &config.sim, &SimOptions::standard(), None)
            {
                if resim.result.converged {
                    let cost =
                        total_cost_model(&candidate, &resim.result, network, CostMode::Raw, &model)?;
                    let feasible = {
                        let delivered = delivered_heat(network, &resim.result, &hs_edges);
                        hs_edges.iter().enumerate().all(|(ci, &e)| {
                            let demand = network.consumers[&network.edges[e].id].demand;
                            delivered[ci] >= demand * (1.0 - config.demand_tolerance)
                        })
                    };
                    let better = match &incumbent {
                        None => true,
                        Some((inc_design, inc_cost, inc_feasible)) => {
                            if feasible != *inc_feasible {
                                feasible
                            } else if (cost.total_npv - inc_cost.total_npv).abs()
                                <= 1e-12 * inc_cost.total_npv.abs()
                            {
                                // Tie: prefer the shorter installed network.
                                installed_length(network, &candidate)
                                    < installed_length(network, inc_design)
                            } else {
                                cost.total_npv < inc_cost.total_npv
                            }
                        }
                    };
                    if better {
                        incumbent = Some((candidate, cost, feasible));
                    }
                }
            }
        }
    }

    let (design, cost, feasible) = match incumbent {
        Some(tuple) => tuple,
        None => {
            // No stage produced a valid discrete design; report the relaxed
            // endpoint at raw cost without thresholding.
            let design = scaling.to_design(&x);
            let resim = solve_system(network, &design, &config.sim, &SimOptions::standard(), None)?;
            let cost = total_cost_model(&design, &resim.result, network, CostMode::Raw, &model)?;
            (design, cost, false)
        }
    };

    Ok(OptResult {
        design,
        cost,
        converged: last_inner_converged && feasible,
        outer_iterations,
        history,
    })
}

pub(crate) fn installed_length(network: &Network, design: &DesignVector) -> f64 {
    network
        .pipe_pairs
        .iter()
        .enumerate()
        .filter(|(slot, _)| design.diameters[*slot] > 0.0)
        .map(|(_, &(f, _))| network.edges[f].length.unwrap())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costing::D_MIN_CATALOGUE;
    use crate::network::testutil::toy_network;

    #[test]
    fn threshold_removes_below_and_keeps_at_threshold() {
        let net = toy_network(0.0, 100.0); // zero demand: removal cannot isolate
        let mut design = uniform_design(&net, 0.1).unwrap();
        design.diameters[0] = D_MIN_CATALOGUE - 1e-9;
        let out = threshold_topology(&net, &design, D_MIN_CATALOGUE).unwrap();
        assert_eq!(out.diameters[0], 0.0);

        design.diameters[0] = D_MIN_CATALOGUE;
        let kept = threshold_topology(&net, &design, D_MIN_CATALOGUE).unwrap();
        assert_eq!(kept.diameters[0], D_MIN_CATALOGUE);
    }

    #[test]
    fn threshold_reports_disconnected_consumer() {
        let net = toy_network(15_000.0, 100.0);
        let mut design = uniform_design(&net, 0.1).unwrap();
        design.diameters[0] = 0.01; // below catalogue minimum
        let err = threshold_topology(&net, &design, D_MIN_CATALOGUE).unwrap_err();
        assert!(matches!(err, HeatNetError::ThresholdDisconnects(ids) if ids == vec![2]));
    }

    #[test]
    fn toy_optimum_matches_brute_force_sweep() {
        // One design variable (the single pipe pair): sweep the raw total
        // cost of the simulated network over a diameter grid and compare the
        // optimizer's answer. The load is sized so the optimum diameter sits
        // well inside the catalogue range.
        use crate::network::testutil::toy_network_with;
        let net = toy_network_with(200_000.0, 100.0, 3000.0, 1.2, 60.0);
        let cfg = PnlpConfig { max_inner: 200, ..PnlpConfig::default() };
        let result = optimize_pnlp(&net, &cfg, None).unwrap();
        assert!(result.converged, "pNLP did not converge");

        let mut best = (f64::INFINITY, 0.0);
        let mut d = 0.01f64;
        while d <= 0.3 {
            let mut design = uniform_design(&net, 0.1).unwrap();
            design.diameters[0] = d;
            let state = crate::sim::solve_state(&net, &design, &SimConfig::default()).unwrap();
            if state.converged {
                let cost = crate::costing::total_cost(&design, &state, &net, CostMode::Raw)
                    .unwrap()
                    .total_npv;
                if cost < best.0 {
                    best = (cost, d);
                }
            }
            d += 1e-4;
        }
        let d_opt = result.design.diameters[0];
        assert!(
            (d_opt - best.1).abs() <= 2.0 * 1e-4,
            "pNLP d = {d_opt}, sweep d = {} (cost {} vs {})",
            best.1,
            result.cost.total_npv,
            best.0
        );
    }

    #[test]
    fn zero_demand_collapses_topology() {
        let net = toy_network(0.0, 100.0);
        let result = optimize_pnlp(&net, &PnlpConfig::default(), None).unwrap();
        assert_eq!(result.design.diameters[0], 0.0, "pipe should be removed");
        assert!(result.cost.total_npv < 1.0, "cost = {}", result.cost.total_npv);
    }
}
