//! Combinatorial topology optimizer: binary pipe-existence variables with
//! big-M couplings and facilitation constraints, a staged initialization
//! (length-minimizing tree, linearized-radiator sizing, full nonlinear
//! sizing) and best-first branch-and-bound over the binaries with NLP
//! relaxations at each node.

use crate::costing::{
    heat_capex, heat_opex, npv_factors_with, pump_opex, total_cost_model, CostMode, CostModel,
};
use crate::design::DesignVector;
use crate::error::{HeatNetError, Result};
use crate::lbfgsb::{minimize, LbfgsbConfig};
use crate::network::Network;
use crate::pnlp::{
    add_al_terms, delivered_heat, demand_positive_hs, installed_length, mandatory_pairs, OptResult,
};
use crate::sim::adjoint::{adjoint_for_solved, CostFunctional, DesignGradient, StateGradient};
use crate::sim::physics::D_EPS;
use crate::sim::system::SimOptions;
use crate::sim::{solve_system, SimConfig, SimResult, Solved, WarmStart};
use std::cell::RefCell;
use std::collections::{BinaryHeap, BTreeSet};
use std::time::Instant;

/// Existence status of a pipe pair inside a branch-and-bound node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiStatus {
    Fixed0,
    Fixed1,
    Relaxed,
}

/// Minimum velocity imposed on installed pipes, m/s.
pub const V_MIN: f64 = 0.01;

/// Big-M constant: ten times the mass flow that would carry the total demand
/// over a 10 K spread, in kg/s.
pub fn default_big_m(network: &Network) -> f64 {
    let p = &network.params;
    let volumetric = 10.0 * network.total_demand() / (p.rho * p.c_p * 10.0);
    volumetric * p.rho
}

/// Two-sided big-M coupling of the velocity definition to the existence
/// variable of one pipe edge:
/// m - M(1-phi) <= v rho pi d^2/4 <= m + M(1-phi).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigMConstraint {
    pub edge: u32,
    pub big_m: f64,
}

impl BigMConstraint {
    /// Slacks (lower, upper) given mass flow m (kg/s), velocity v (m/s),
    /// diameter d (m) and existence phi in [0, 1]. Feasible iff both are
    /// nonnegative.
    pub fn slacks(&self, m: f64, v: f64, d: f64, phi: f64, rho: f64) -> (f64, f64) {
        let area_flow = v * rho * std::f64::consts::PI * d * d / 4.0;
        let relax = self.big_m * (1.0 - phi);
        (area_flow - (m - relax), (m + relax) - area_flow)
    }
}

/// Feed/return twins must be installed together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MirrorCoupling {
    pub feed_edge: u32,
    pub return_edge: u32,
}

impl MirrorCoupling {
    pub fn feasible(&self, phi_feed: f64, phi_return: f64) -> bool {
        (phi_feed - phi_return).abs() <= 1e-9
    }
}

/// The big-M coupled formulation over a network's pipe set.
#[derive(Debug, Clone)]
pub struct MinlpFormulation {
    pub big_m: f64,
    pub couplings: Vec<BigMConstraint>,
    pub mirrors: Vec<MirrorCoupling>,
}

/// Emit the per-pipe big-M rows and the mirror couplings.
pub fn assemble_bigm_constraints(network: &Network, big_m: f64) -> Result<MinlpFormulation> {
    if !(big_m > 0.0) {
        return Err(HeatNetError::InvalidParam {
            name: "big_m",
            reason: format!("must be positive, got {big_m}"),
        });
    }
    let couplings = network
        .pipe_edges
        .iter()
        .map(|&i| BigMConstraint { edge: network.edges[i].id, big_m })
        .collect();
    let mirrors = network
        .pipe_pairs
        .iter()
        .map(|&(f, r)| MirrorCoupling {
            feed_edge: network.edges[f].id,
            return_edge: network.edges[r].id,
        })
        .collect();
    Ok(MinlpFormulation { big_m, couplings, mirrors })
}

/// Auxiliary convergence-facilitation bounds. They are chosen to be inactive
/// at the returned optimum; `facilitation_report` verifies that.
#[derive(Debug, Clone, PartialEq)]
pub enum FacilitationConstraint {
    /// |v| <= 3.5 m/s.
    VelocityCap { edge: u32, limit: f64 },
    /// |v| <= 18.438 d + 0.2186 m/s.
    VelocityDiameterCap { edge: u32 },
    /// |v| >= v_min phi.
    VelocityFloor { edge: u32, v_min: f64 },
    /// |p_i - p_j| <= 200 Pa per meter of pipe.
    PressureDropCap { edge: u32, pa_per_m: f64 },
    /// Installed capacity at most 1.5x the total demand.
    CapacityCap { factor: f64 },
    /// Heat exchangers keep at least 2 kPa differential.
    ExchangerDifferential { edge: u32, min_pa: f64 },
    /// Radiator exit no hotter than its feed.
    RadiatorTemperatureOrder { edge: u32 },
}

pub fn assemble_facilitation_constraints(network: &Network) -> Vec<FacilitationConstraint> {
    let mut out = Vec::new();
    for &i in &network.pipe_edges {
        let id = network.edges[i].id;
        out.push(FacilitationConstraint::VelocityCap { edge: id, limit: 3.5 });
        out.push(FacilitationConstraint::VelocityDiameterCap { edge: id });
        out.push(FacilitationConstraint::VelocityFloor { edge: id, v_min: V_MIN });
        out.push(FacilitationConstraint::PressureDropCap { edge: id, pa_per_m: 200.0 });
    }
    out.push(FacilitationConstraint::CapacityCap { factor: 1.5 });
    for &i in &network.hs_edges {
        let id = network.edges[i].id;
        out.push(FacilitationConstraint::ExchangerDifferential { edge: id, min_pa: 2000.0 });
        out.push(FacilitationConstraint::RadiatorTemperatureOrder { edge: id });
    }
    out
}

#[derive(Debug, Clone)]
pub struct FacilitationSlack {
    pub description: String,
    /// Slack scaled by the bound's own magnitude; negative means violated.
    pub slack: f64,
    pub active: bool,
}

/// Evaluate every facilitation constraint on a solved design. Constraints on
/// removed pipes are skipped.
pub fn facilitation_report(
    network: &Network,
    design: &DesignVector,
    state: &SimResult,
) -> Vec<FacilitationSlack> {
    const ACTIVE_TOL: f64 = 1e-6;
    let p = &network.params;
    let mut out = Vec::new();
    let mut push = |description: String, slack: f64| {
        out.push(FacilitationSlack { description, slack, active: slack <= ACTIVE_TOL });
    };
    for constraint in assemble_facilitation_constraints(network) {
        match constraint {
            FacilitationConstraint::VelocityCap { edge, limit } => {
                let i = network.edge_index(edge).unwrap();
                let d = design.diameter_of_edge(network, i);
                if d <= 0.0 {
                    continue;
                }
                let v = state.state.flow[i].abs() / (std::f64::consts::PI * d * d / 4.0);
                push(format!("velocity cap pipe {edge}"), (limit - v) / limit);
            }
            FacilitationConstraint::VelocityDiameterCap { edge } => {
                let i = network.edge_index(edge).unwrap();
                let d = design.diameter_of_edge(network, i);
                if d <= 0.0 {
                    continue;
                }
                let v = state.state.flow[i].abs() / (std::f64::consts::PI * d * d / 4.0);
                let cap = 18.438 * d + 0.2186;
                push(format!("diameter velocity cap pipe {edge}"), (cap - v) / cap);
            }
            FacilitationConstraint::VelocityFloor { edge, v_min } => {
                let i = network.edge_index(edge).unwrap();
                let d = design.diameter_of_edge(network, i);
                if d <= 0.0 {
                    continue;
                }
                let v = state.state.flow[i].abs() / (std::f64::consts::PI * d * d / 4.0);
                push(format!("velocity floor pipe {edge}"), (v - v_min) / 3.5);
            }
            FacilitationConstraint::PressureDropCap { edge, pa_per_m } => {
                let i = network.edge_index(edge).unwrap();
                let d = design.diameter_of_edge(network, i);
                if d <= 0.0 {
                    continue;
                }
                let e = &network.edges[i];
                let cap = pa_per_m * e.length.unwrap();
                let tail = network.node_index(e.tail).unwrap();
                let head = network.node_index(e.head).unwrap();
                let dp = (state.state.pressure[tail] - state.state.pressure[head]).abs();
                push(format!("pressure drop cap pipe {edge}"), (cap - dp) / cap);
            }
            FacilitationConstraint::CapacityCap { factor } => {
                let installed: f64 = network
                    .producer_arcs
                    .iter()
                    .map(|&arc| {
                        let e = &network.edges[arc];
                        let ret = network.node_index(e.tail).unwrap();
                        let spec = &network.producers[&e.id];
                        let dtheta = spec.injection_temp - state.state.theta_node[ret];
                        (p.rho * p.c_p * state.state.flow[arc] * dtheta).max(0.0)
                    })
                    .sum();
                let cap = factor * network.total_demand();
                if cap > 0.0 {
                    push("capacity cap".to_string(), (cap - installed) / cap);
                }
            }
            FacilitationConstraint::ExchangerDifferential { edge, min_pa } => {
                let i = network.edge_index(edge).unwrap();
                if network.consumers[&edge].demand <= 0.0 {
                    continue;
                }
                let e = &network.edges[i];
                let tail = network.node_index(e.tail).unwrap();
                let head = network.node_index(e.head).unwrap();
                let dp = state.state.pressure[tail] - state.state.pressure[head];
                push(format!("exchanger differential hs {edge}"), (dp - min_pa) / min_pa);
            }
            FacilitationConstraint::RadiatorTemperatureOrder { edge } => {
                let i = network.edge_index(edge).unwrap();
                if network.consumers[&edge].demand <= 0.0 {
                    continue;
                }
                let e = &network.edges[i];
                let tail = network.node_index(e.tail).unwrap();
                let th_scale = network
                    .producers
                    .values()
                    .map(|s| s.injection_temp)
                    .fold(1.0f64, f64::max);
                let slack = (state.state.theta_node[tail] - state.state.theta_exit[i]) / th_scale;
                push(format!("radiator temperature order hs {edge}"), slack);
            }
        }
    }
    out
}

/// Length-minimizing initial topology: a tree grown from the first-listed
/// producer by repeated shortest paths, connecting every demand-positive
/// consumer into a single network.
pub fn mip_init(network: &Network) -> Result<Vec<bool>> {
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); network.nodes.len()];
    for (slot, &(f, _)) in network.pipe_pairs.iter().enumerate() {
        let e = &network.edges[f];
        let a = network.node_index(e.tail).unwrap();
        let b = network.node_index(e.head).unwrap();
        let len = e.length.unwrap();
        adj[a].push((slot, b, len));
        adj[b].push((slot, a, len));
    }
    let root_arc = network
        .producer_arcs
        .iter()
        .copied()
        .min_by_key(|&i| network.edges[i].id)
        .ok_or_else(|| HeatNetError::InfeasibleTopology("network has no producers".into()))?;
    let root = network.node_index(network.edges[root_arc].head).unwrap();

    let mut terminals: BTreeSet<usize> = demand_positive_hs(network)
        .iter()
        .map(|&e| network.node_index(network.edges[e].tail).unwrap())
        .collect();
    let mut chosen = vec![false; network.n_pipe_pairs()];
    let mut in_tree = vec![false; network.nodes.len()];
    in_tree[root] = true;
    terminals.remove(&root);

    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other
                .0
                .total_cmp(&self.0)
                .then_with(|| other.1.cmp(&self.1))
        }
    }
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    while !terminals.is_empty() {
        // Multi-source Dijkstra from the current tree.
        let n = network.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        for (v, &t) in in_tree.iter().enumerate() {
            if t {
                dist[v] = 0.0;
                heap.push(Item(0.0, v));
            }
        }
        while let Some(Item(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(slot, w, len) in &adj[v] {
                let nd = d + len;
                if nd < dist[w] {
                    dist[w] = nd;
                    via[w] = Some((slot, v));
                    heap.push(Item(nd, w));
                }
            }
        }
        let next = terminals
            .iter()
            .copied()
            .filter(|&t| dist[t].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        let Some(target) = next else {
            let unreachable: Vec<u32> = demand_positive_hs(network)
                .iter()
                .filter(|&&e| {
                    let t = network.node_index(network.edges[e].tail).unwrap();
                    terminals.contains(&t)
                })
                .map(|&e| network.edges[e].id)
                .collect();
            return Err(HeatNetError::IsolatedConsumer(unreachable));
        };
        let mut v = target;
        while !in_tree[v] {
            let (slot, prev) = via[v].expect("path back to tree");
            chosen[slot] = true;
            in_tree[v] = true;
            terminals.remove(&v);
            v = prev;
        }
        terminals.remove(&target);
    }
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpStage {
    /// Radiator characteristic linearized (exponent forced to 1).
    Linearized,
    /// Full nonlinear model.
    Full,
}

#[derive(Debug, Clone)]
pub struct FminlpConfig {
    pub max_nodes: usize,
    /// Wall-clock budget for branch-and-bound, seconds.
    pub time_budget: f64,
    pub nlp_max_inner: usize,
    pub nlp_max_outer: usize,
    pub tol_opt: f64,
    /// Relative optimality gap below which nodes are pruned.
    pub gap_tol: f64,
    pub d_lower: f64,
    pub gamma_upper_factor: f64,
    pub demand_tolerance: f64,
    pub sim: SimConfig,
}

impl Default for FminlpConfig {
    fn default() -> Self {
        FminlpConfig {
            max_nodes: 400,
            time_budget: 600.0,
            nlp_max_inner: 60,
            nlp_max_outer: 2,
            tol_opt: 1e-6,
            gap_tol: 5e-4,
            d_lower: D_EPS,
            gamma_upper_factor: 2.0,
            demand_tolerance: 1e-4,
            sim: SimConfig::default(),
        }
    }
}

/// Result of one combinatorial optimization run.
#[derive(Debug, Clone)]
pub struct MinlpRunReport {
    pub result: OptResult,
    /// Installed pipe pairs of the incumbent.
    pub phi: Vec<bool>,
    pub stage_costs: Vec<(String, f64)>,
    pub node_count: usize,
    /// Relative gap between incumbent and best open relaxation bound, when
    /// the search stopped on a budget. Bounds are local (nonconvex NLPs), so
    /// this is a heuristic indicator, not a certificate.
    pub gap: Option<f64>,
    pub warnings: Vec<String>,
}

struct SubScaling {
    pairs: Vec<usize>,
    d_max: f64,
    gamma_ref: f64,
    n_pairs_total: usize,
}

impl SubScaling {
    fn to_design(&self, x: &[f64]) -> DesignVector {
        let mut diameters = vec![0.0; self.n_pairs_total];
        for (k, &slot) in self.pairs.iter().enumerate() {
            diameters[slot] = x[k] * self.d_max;
        }
        let inflows = x[self.pairs.len()..].iter().map(|v| v * self.gamma_ref).collect();
        DesignVector { diameters, inflows }
    }
    fn from_design(&self, design: &DesignVector) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|&slot| design.diameters[slot] / self.d_max)
            .chain(design.inflows.iter().map(|g| g / self.gamma_ref))
            .collect()
    }
    fn scale_gradient(&self, g: &DesignGradient) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|&slot| g.d_diameter[slot] * self.d_max)
            .chain(g.d_inflow.iter().map(|v| v * self.gamma_ref))
            .collect()
    }
}

/// Sizing objective of a branch-and-bound node: catalogue pipe cost on
/// installed pipes, fixed cost relaxed linearly (p0 d / d_max) on undecided
/// ones, plus the state-dependent heat and pump cost and the augmented
/// Lagrangian terms.
struct SizingCost<'a> {
    status: &'a [PhiStatus],
    model: CostModel,
    hs_edges: &'a [usize],
    lambda: &'a [f64],
    lambda_slack: &'a [f64],
    mu: f64,
}

impl SizingCost<'_> {
    fn pipe_cost_and_grad(&self, network: &Network, design: &DesignVector) -> (f64, Vec<f64>) {
        let p = &network.params;
        let mut total = 0.0;
        let mut grad = vec![0.0; network.n_pipe_pairs()];
        for (slot, &(f, r)) in network.pipe_pairs.iter().enumerate() {
            let len = network.edges[f].length.unwrap() + network.edges[r].length.unwrap();
            let d = design.diameters[slot];
            match self.status[slot] {
                PhiStatus::Fixed0 => {}
                PhiStatus::Fixed1 => {
                    total += (p.pipe_cost_linear * d + p.pipe_cost_fixed) * len;
                    grad[slot] = p.pipe_cost_linear * len;
                }
                PhiStatus::Relaxed => {
                    let phi = d / p.d_max;
                    total += (p.pipe_cost_linear * d + p.pipe_cost_fixed * phi) * len;
                    grad[slot] = (p.pipe_cost_linear + p.pipe_cost_fixed / p.d_max) * len;
                }
            }
        }
        (total, grad)
    }
}

impl CostFunctional for SizingCost<'_> {
    fn eval(
        &self,
        network: &Network,
        design: &DesignVector,
        solved: &Solved,
    ) -> (f64, StateGradient, DesignGradient) {
        let p = &network.params;
        let (f_cap, f_op) =
            npv_factors_with(p.horizon_years, p.discount_rate, p.inflation_rate, self.model.fop_form);
        let (pipe, pipe_grad) = self.pipe_cost_and_grad(network, design);
        let hc = heat_capex(&solved.result, network);
        let ho = heat_opex(&solved.result, network);
        let (po, _) = pump_opex(&solved.result, network);
        let mut value = f_cap * (pipe + hc) + f_op * (ho + po);

        let g = crate::costing::total_cost_state_gradients(
            design,
            &solved.result,
            network,
            CostMode::Raw,
            &self.model,
        );
        let mut sg = StateGradient {
            d_flow: g.d_flow,
            d_pressure: g.d_pressure,
            d_theta_node: g.d_theta_node,
            d_theta_exit: vec![0.0; network.edges.len()],
        };
        let dg = DesignGradient {
            d_diameter: pipe_grad.iter().map(|v| f_cap * v).collect(),
            d_inflow: vec![0.0; network.n_producers()],
        };
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

struct SizingOutcome {
    design: DesignVector,
    /// Node objective (relaxed fixed cost, no AL terms) at the final design.
    bound: f64,
    converged: bool,
    feasible: bool,
    max_violation: f64,
}

/// Size the continuous variables of a node: diameters of non-removed pairs
/// plus producer inflows, with demand handled by an augmented Lagrangian.
fn solve_sizing(
    network: &Network,
    status: &[PhiStatus],
    linear_radiator: bool,
    init: Option<&DesignVector>,
    mandatory: &[bool],
    cfg: &FminlpConfig,
) -> Result<SizingOutcome> {
    let model = CostModel::default();
    let d_min = model.d_min;
    let scaling = SubScaling {
        pairs: (0..network.n_pipe_pairs())
            .filter(|&s| status[s] != PhiStatus::Fixed0)
            .collect(),
        d_max: network.params.d_max,
        gamma_ref: network.nominal_flow().max(1e-9),
        n_pairs_total: network.n_pipe_pairs(),
    };
    let n_vars = scaling.pairs.len() + network.n_producers();
    let lower: Vec<f64> = scaling
        .pairs
        .iter()
        .map(|&slot| {
            if status[slot] == PhiStatus::Fixed1 || mandatory[slot] {
                d_min / scaling.d_max
            } else {
                cfg.d_lower / scaling.d_max
            }
        })
        .chain(std::iter::repeat(0.0).take(network.n_producers()))
        .collect();
    let upper: Vec<f64> = std::iter::repeat(1.0)
        .take(scaling.pairs.len())
        .chain(std::iter::repeat(cfg.gamma_upper_factor).take(network.n_producers()))
        .collect();

    let share = network.nominal_flow() / network.n_producers().max(1) as f64;
    let mut x: Vec<f64> = match init {
        Some(d) => scaling.from_design(d),
        None => {
            let mut base = DesignVector {
                diameters: vec![0.1; network.n_pipe_pairs()],
                inflows: vec![share; network.n_producers()],
            };
            for (slot, st) in status.iter().enumerate() {
                if *st == PhiStatus::Fixed0 {
                    base.diameters[slot] = 0.0;
                }
            }
            scaling.from_design(&base)
        }
    };
    for i in 0..n_vars {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }

    let options = SimOptions { linear_radiator, demand_scale: 1.0 };
    let hs_edges = demand_positive_hs(network);
    let mut lambda = vec![0.0; hs_edges.len()];
    let mut lambda_slack = vec![0.0; network.n_producers()];
    let warm: RefCell<Option<WarmStart>> = RefCell::new(None);

    // Penalty scale from the starting objective.
    let start = scaling.to_design(&x);
    let start_solved = solve_system(network, &start, &cfg.sim, &options, None)?;
    if !start_solved.result.converged {
        return Ok(SizingOutcome {
            design: start,
            bound: f64::INFINITY,
            converged: false,
            feasible: false,
            max_violation: f64::INFINITY,
        });
    }
    let probe = SizingCost {
        status,
        model,
        hs_edges: &hs_edges,
        lambda: &lambda,
        lambda_slack: &lambda_slack,
        mu: 1.0,
    };
    let (j0, _, _) = probe.eval(network, &start, &start_solved);
    let mut mu = (0.02 * j0.abs()).max(1e4);
    warm.replace(Some(start_solved.warm_start()));

    let mut converged = false;
    let mut max_violation = f64::INFINITY;
    let inner_sim = SimConfig {
        demand_continuation: true,
        max_iter: cfg.sim.max_iter.min(60),
        ..cfg.sim
    };
    for _round in 0..cfg.nlp_max_outer.max(1) {
        let objective = |xhat: &[f64], want_grad: bool| -> Option<(f64, Option<Vec<f64>>)> {
            let design = scaling.to_design(xhat);
            let prev = warm.borrow().clone();
            let trial_sim = if want_grad {
                inner_sim
            } else {
                SimConfig { max_iter: 25, ..inner_sim }
            };
            let solved = solve_system(network, &design, &trial_sim, &options, prev.as_ref()).ok()?;
            if !solved.result.converged {
                return None;
            }
            let functional = SizingCost {
                status,
                model,
                hs_edges: &hs_edges,
                lambda: &lambda,
                lambda_slack: &lambda_slack,
                mu,
            };
            if want_grad {
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
            max_iter: cfg.nlp_max_inner,
            tol_grad: cfg.tol_opt,
            tol_grad_abs: cfg.tol_opt * j0.abs().max(1.0),
            ..LbfgsbConfig::default()
        };
        let out = minimize(objective, &x, &lower, &upper, &inner_cfg);
        x = out.x;
        converged = out.converged;

        let design = scaling.to_design(&x);
        let prev = warm.borrow().clone();
        let solved = solve_system(network, &design, &cfg.sim, &options, prev.as_ref())?;
        if !solved.result.converged {
            break;
        }
        warm.replace(Some(solved.warm_start()));
        let delivered = delivered_heat(network, &solved.result, &hs_edges);
        max_violation = 0.0;
        for (ci, &e) in hs_edges.iter().enumerate() {
            let demand = network.consumers[&network.edges[e].id].demand;
            let g = (demand - delivered[ci]) / demand;
            max_violation = max_violation.max(g);
            lambda[ci] = (lambda[ci] + mu * g).max(0.0);
        }
        use crate::sim::system::EdgeClass;
        for (slot, &e) in solved.layout.active_edges.iter().enumerate() {
            if let EdgeClass::ProducerArc { producer, slack: true } = solved.layout.class[slot] {
                let g = -solved.result.state.flow[e] / solved.layout.q_scale;
                lambda_slack[producer] = (lambda_slack[producer] + mu * g).max(0.0);
            }
        }
        if max_violation <= cfg.demand_tolerance {
            break;
        }
        mu *= 10.0;
    }

    // Bound: objective without the AL terms at the final point.
    let design = scaling.to_design(&x);
    let solved = solve_system(network, &design, &cfg.sim, &options, warm.borrow().as_ref())?;
    let bound = if solved.result.converged {
        let probe = SizingCost {
            status,
            model,
            hs_edges: &hs_edges,
            lambda: &vec![0.0; hs_edges.len()],
            lambda_slack: &vec![0.0; network.n_producers()],
            mu: 1.0,
        };
        let (value, _, _) = probe.eval(network, &design, &solved);
        value
    } else {
        f64::INFINITY
    };
    Ok(SizingOutcome {
        design,
        bound,
        converged,
        feasible: max_violation <= cfg.demand_tolerance,
        max_violation,
    })
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub design: DesignVector,
    pub cost: f64,
    pub converged: bool,
}

/// One stage of the initialization pipeline: size the continuous variables
/// on a fixed topology.
pub fn nlp_stage(
    network: &Network,
    phi: &[bool],
    stage: NlpStage,
    warm: Option<&DesignVector>,
    cfg: &FminlpConfig,
) -> Result<StageOutcome> {
    let status: Vec<PhiStatus> = phi
        .iter()
        .map(|&k| if k { PhiStatus::Fixed1 } else { PhiStatus::Fixed0 })
        .collect();
    let mandatory = vec![false; network.n_pipe_pairs()];
    let outcome = solve_sizing(
        network,
        &status,
        stage == NlpStage::Linearized,
        warm,
        &mandatory,
        cfg,
    )?;
    if !outcome.bound.is_finite() {
        return Err(HeatNetError::InfeasibleTopology(format!(
            "stage sizing failed (max violation {:.3e})",
            outcome.max_violation
        )));
    }
    Ok(StageOutcome { design: outcome.design, cost: outcome.bound, converged: outcome.converged })
}

/// Does the superstructure minus the `Fixed0` pairs still connect every
/// demand-positive consumer to a producer on the feed side?
fn topology_serves_demand(network: &Network, status: &[PhiStatus]) -> bool {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); network.nodes.len()];
    for (slot, &(f, _)) in network.pipe_pairs.iter().enumerate() {
        if status[slot] == PhiStatus::Fixed0 {
            continue;
        }
        let e = &network.edges[f];
        let a = network.node_index(e.tail).unwrap();
        let b = network.node_index(e.head).unwrap();
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; network.nodes.len()];
    let mut stack: Vec<usize> = network
        .producer_arcs
        .iter()
        .map(|&arc| network.node_index(network.edges[arc].head).unwrap())
        .collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    demand_positive_hs(network)
        .iter()
        .all(|&e| seen[network.node_index(network.edges[e].tail).unwrap()])
}

struct Incumbent {
    phi: Vec<bool>,
    design: DesignVector,
    cost: crate::costing::CostBreakdown,
}

/// Evaluate a discrete candidate topology: resimulate at raw cost, check
/// demand, and polish with a full sizing if it beats the incumbent.
#[allow(clippy::too_many_arguments)]
fn try_incumbent(
    network: &Network,
    cfg: &FminlpConfig,
    phi: &[bool],
    seed_design: &DesignVector,
    mandatory: &[bool],
    incumbent: &mut Option<Incumbent>,
    history: &mut Vec<(usize, f64)>,
    node_idx: usize,
) {
    let model = CostModel::default();
    let mut candidate = seed_design.clone();
    for (slot, d) in candidate.diameters.iter_mut().enumerate() {
        if !phi[slot] {
            *d = 0.0;
        } else if *d < model.d_min {
            *d = model.d_min;
        }
    }
    let Ok(resim) = solve_system(network, &candidate, &cfg.sim, &SimOptions::standard(), None)
    else {
        return;
    };
    if !resim.result.converged {
        return;
    }
    let hs_edges = demand_positive_hs(network);
    let delivered = delivered_heat(network, &resim.result, &hs_edges);
    let feasible = hs_edges.iter().enumerate().all(|(ci, &e)| {
        let demand = network.consumers[&network.edges[e].id].demand;
        delivered[ci] >= demand * (1.0 - cfg.demand_tolerance)
    });
    if !feasible {
        return;
    }
    let Ok(quick) = total_cost_model(&candidate, &resim.result, network, CostMode::Raw, &model)
    else {
        return;
    };
    let current_best = incumbent.as_ref().map(|i| i.cost.total_npv).unwrap_or(f64::INFINITY);
    if quick.total_npv >= current_best * (1.0 + 2.0 * cfg.gap_tol) {
        return;
    }
    // Polish: full sizing on the fixed topology.
    let status: Vec<PhiStatus> = phi
        .iter()
        .map(|&k| if k { PhiStatus::Fixed1 } else { PhiStatus::Fixed0 })
        .collect();
    let polished = solve_sizing(network, &status, false, Some(&candidate), mandatory, cfg)
        .ok()
        .filter(|o| o.feasible)
        .map(|o| o.design)
        .unwrap_or(candidate);
    let Ok(final_sim) = solve_system(network, &polished, &cfg.sim, &SimOptions::standard(), None)
    else {
        return;
    };
    if !final_sim.result.converged {
        return;
    }
    let delivered = delivered_heat(network, &final_sim.result, &hs_edges);
    let feasible = hs_edges.iter().enumerate().all(|(ci, &e)| {
        let demand = network.consumers[&network.edges[e].id].demand;
        delivered[ci] >= demand * (1.0 - cfg.demand_tolerance)
    });
    if !feasible {
        return;
    }
    let Ok(cost) = total_cost_model(&polished, &final_sim.result, network, CostMode::Raw, &model)
    else {
        return;
    };
    let better = match incumbent.as_ref() {
        None => true,
        Some(inc) => {
            if (cost.total_npv - inc.cost.total_npv).abs() <= 1e-12 * inc.cost.total_npv.abs() {
                installed_length(network, &polished) < installed_length(network, &inc.design)
            } else {
                cost.total_npv < inc.cost.total_npv
            }
        }
    };
    if better {
        history.push((node_idx, cost.total_npv));
        *incumbent = Some(Incumbent { phi: phi.to_vec(), design: polished, cost });
    }
}

struct BnbNode {
    bound: f64,
    id: usize,
    status: Vec<PhiStatus>,
    design: DesignVector,
}

impl PartialEq for BnbNode {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for BnbNode {}
impl Ord for BnbNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Min-heap on (bound, id) through BinaryHeap's max ordering.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}
impl PartialOrd for BnbNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Staged initialization followed by best-first branch-and-bound on the
/// pipe existence variables.
pub fn optimize_fminlp(network: &Network, cfg: &FminlpConfig) -> Result<MinlpRunReport> {
    let start_time = Instant::now();
    let mandatory = mandatory_pairs(network);
    let mut stage_costs = Vec::new();
    let mut history: Vec<(usize, f64)> = Vec::new();

    // Stage pipeline: MIP tree, linearized sizing, full sizing.
    let phi0 = mip_init(network)?;
    let tree_length: f64 = network
        .pipe_pairs
        .iter()
        .enumerate()
        .filter(|(slot, _)| phi0[*slot])
        .map(|(_, &(f, _))| network.edges[f].length.unwrap())
        .sum();
    stage_costs.push(("mip-tree-length-m".to_string(), tree_length));

    let stage1 = nlp_stage(network, &phi0, NlpStage::Linearized, None, cfg)?;
    stage_costs.push(("nlp1".to_string(), stage1.cost));
    let stage2 = nlp_stage(network, &phi0, NlpStage::Full, Some(&stage1.design), cfg)?;
    stage_costs.push(("nlp2".to_string(), stage2.cost));

    let mut incumbent: Option<Incumbent> = None;
    try_incumbent(network, cfg, &phi0, &stage2.design, &mandatory, &mut incumbent, &mut history, 0);
    if incumbent.is_none() {
        return Err(HeatNetError::InfeasibleTopology(
            "stage pipeline produced no feasible design".into(),
        ));
    }

    // Branch and bound over the binaries, warm-started from the pipeline.
    let model = CostModel::default();
    let d_min = model.d_min;
    let mut node_count = 0usize;
    let mut next_id = 0usize;
    let mut heap: BinaryHeap<BnbNode> = BinaryHeap::new();
    let mut best_open_bound: Option<f64> = None;
    let mut exhausted = true;

    if cfg.max_nodes > 0 {
        let root_status = vec![PhiStatus::Relaxed; network.n_pipe_pairs()];
        let root_init = {
            let mut d = stage2.design.clone();
            for (slot, v) in d.diameters.iter_mut().enumerate() {
                if !phi0[slot] {
                    *v = 0.5 * d_min;
                }
            }
            d
        };
        let root = solve_sizing(network, &root_status, false, Some(&root_init), &mandatory, cfg)?;
        node_count += 1;
        if !root.bound.is_finite() {
            return Err(HeatNetError::InfeasibleTopology("root relaxation infeasible".into()));
        }
        heap.push(BnbNode { bound: root.bound, id: next_id, status: root_status, design: root.design });
        next_id += 1;

        while let Some(node) = heap.pop() {
            let inc_cost = incumbent.as_ref().map(|i| i.cost.total_npv).unwrap_or(f64::INFINITY);
            if node.bound >= inc_cost * (1.0 - cfg.gap_tol) {
                continue; // pruned by bound
            }
            if node_count >= cfg.max_nodes || start_time.elapsed().as_secs_f64() > cfg.time_budget {
                best_open_bound = Some(best_open_bound.map_or(node.bound, |b: f64| b.min(node.bound)));
                exhausted = false;
                break;
            }

            // Candidate topology from the node's relaxation.
            let phi_round: Vec<bool> = (0..network.n_pipe_pairs())
                .map(|slot| match node.status[slot] {
                    PhiStatus::Fixed0 => false,
                    PhiStatus::Fixed1 => true,
                    PhiStatus::Relaxed => node.design.diameters[slot] >= d_min,
                })
                .collect();
            try_incumbent(
                network,
                cfg,
                &phi_round,
                &node.design,
                &mandatory,
                &mut incumbent,
                &mut history,
                node_count,
            );

            // Most fractional undecided pair.
            let branch = (0..network.n_pipe_pairs())
                .filter(|&slot| node.status[slot] == PhiStatus::Relaxed && !mandatory[slot])
                .map(|slot| {
                    let phi_hat = (node.design.diameters[slot] / d_min).clamp(0.0, 1.0);
                    (slot, phi_hat.min(1.0 - phi_hat))
                })
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let Some((branch_slot, frac)) = branch else {
                continue; // fully decided
            };
            if frac < 0.02 {
                continue; // integral within tolerance; incumbent attempt done
            }

            for fix_one in [false, true] {
                let mut status = node.status.clone();
                status[branch_slot] = if fix_one { PhiStatus::Fixed1 } else { PhiStatus::Fixed0 };
                if !fix_one && !topology_serves_demand(network, &status) {
                    continue;
                }
                let mut init = node.design.clone();
                if fix_one {
                    init.diameters[branch_slot] = init.diameters[branch_slot].max(d_min);
                } else {
                    init.diameters[branch_slot] = 0.0;
                }
                let Ok(child) = solve_sizing(network, &status, false, Some(&init), &mandatory, cfg)
                else {
                    continue;
                };
                node_count += 1;
                if !child.bound.is_finite() || !child.feasible {
                    continue; // infeasible branch
                }
                let inc_cost =
                    incumbent.as_ref().map(|i| i.cost.total_npv).unwrap_or(f64::INFINITY);
                if child.bound >= inc_cost * (1.0 - cfg.gap_tol) {
                    continue;
                }
                heap.push(BnbNode { bound: child.bound, id: next_id, status, design: child.design });
                next_id += 1;
            }
        }
        if exhausted {
            best_open_bound = None;
        } else {
            for node in heap.iter() {
                best_open_bound =
                    Some(best_open_bound.map_or(node.bound, |b: f64| b.min(node.bound)));
            }
        }
    }

    let inc = incumbent.expect("incumbent established by stage pipeline");
    stage_costs.push(("bnb-incumbent".to_string(), inc.cost.total_npv));
    let gap = best_open_bound.map(|b| ((inc.cost.total_npv - b) / inc.cost.total_npv).max(0.0));

    // Facilitation check on the returned optimum.
    let final_sim = solve_system(network, &inc.design, &cfg.sim, &SimOptions::standard(), None)?;
    let mut warnings = Vec::new();
    for slack in facilitation_report(network, &inc.design, &final_sim.result) {
        if slack.active {
            warnings.push(format!(
                "facilitation constraint active at optimum: {} (slack {:.3e})",
                slack.description, slack.slack
            ));
        }
    }

    Ok(MinlpRunReport {
        result: OptResult {
            design: inc.design,
            cost: inc.cost,
            converged: exhausted,
            outer_iterations: node_count,
            history,
        },
        phi: inc.phi,
        stage_costs,
        node_count,
        gap,
        warnings,
    })
}

/// Exhaustive enumeration over all pipe-pair subsets, each sized by the full
/// NLP. Tractable only for small superstructures; the oracle for the
/// branch-and-bound.
pub fn enumerate_optimum(network: &Network, cfg: &FminlpConfig) -> Result<(Vec<bool>, f64)> {
    let n = network.n_pipe_pairs();
    if n > 16 {
        return Err(HeatNetError::InvalidParam {
            name: "n_pipe_pairs",
            reason: format!("enumeration limited to 16 pairs, got {n}"),
        });
    }
    let model = CostModel::default();
    let mut best: Option<(Vec<bool>, f64)> = None;
    for mask in 0u32..(1 << n) {
        let phi: Vec<bool> = (0..n).map(|k| mask & (1 << k) != 0).collect();
        let status: Vec<PhiStatus> = phi
            .iter()
            .map(|&k| if k { PhiStatus::Fixed1 } else { PhiStatus::Fixed0 })
            .collect();
        if !topology_serves_demand(network, &status) {
            continue;
        }
        let mandatory = vec![false; n];
        let Ok(outcome) = solve_sizing(network, &status, false, None, &mandatory, cfg) else {
            continue;
        };
        if !outcome.feasible || !outcome.bound.is_finite() {
            continue;
        }
        let Ok(resim) =
            solve_system(network, &outcome.design, &cfg.sim, &SimOptions::standard(), None)
        else {
            continue;
        };
        if !resim.result.converged {
            continue;
        }
        let Ok(cost) =
            total_cost_model(&outcome.design, &resim.result, network, CostMode::Raw, &model)
        else {
            continue;
        };
        if best.as_ref().map_or(true, |(_, c)| cost.total_npv < *c) {
            best = Some((phi, cost.total_npv));
        }
    }
    best.ok_or_else(|| HeatNetError::InfeasibleTopology("no feasible topology".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::testutil::toy_network;

    #[test]
    fn big_m_tight_when_phi_one() {
        let net = toy_network(15_000.0, 100.0);
        let form = assemble_bigm_constraints(&net, default_big_m(&net)).unwrap();
        assert_eq!(form.couplings.len(), 2);
        assert_eq!(form.mirrors.len(), 1);
        let rho = net.params.rho;
        let (q, d) = (5e-4, 0.05);
        let v = q / (std::f64::consts::PI * d * d / 4.0);
        let m = rho * q;
        let (lo, hi) = form.couplings[0].slacks(m, v, d, 1.0, rho);
        assert!(lo.abs() < 1e-9 && hi.abs() < 1e-9, "tight bounds expected: {lo}, {hi}");
    }

    #[test]
    fn big_m_relaxed_when_phi_zero() {
        let net = toy_network(15_000.0, 100.0);
        let m_max = default_big_m(&net) / 10.0;
        let form = assemble_bigm_constraints(&net, 10.0 * m_max).unwrap();
        let (lo, hi) = form.couplings[0].slacks(m_max, 0.0, 0.05, 0.0, net.params.rho);
        assert!((lo - (10.0 * m_max - m_max)).abs() < 1e-9, "lower slack {lo}");
        assert!((hi - (10.0 * m_max + m_max)).abs() < 1e-9, "upper slack {hi}");
    }

    #[test]
    fn mirror_coupling_rejects_unequal_phi() {
        let c = MirrorCoupling { feed_edge: 0, return_edge: 1 };
        assert!(c.feasible(1.0, 1.0));
        assert!(!c.feasible(1.0, 0.0));
    }

    #[test]
    fn velocity_cap_at_dn100_matches_scalar_oracle() {
        // 18.438 * 0.1 + 0.2186 = 2.0624 m/s, tighter than the 3.5 cap.
        let cap: f64 = 18.438 * 0.1 + 0.2186;
        assert!((cap - 2.0624).abs() < 1e-9);
        assert_eq!(cap.min(3.5), cap);
    }

    #[test]
    fn capacity_cap_is_factor_1_5() {
        let net = toy_network(15_000.0, 100.0);
        let constraints = assemble_facilitation_constraints(&net);
        let cap = constraints
            .iter()
            .find_map(|c| match c {
                FacilitationConstraint::CapacityCap { factor } => Some(*factor),
                _ => None,
            })
            .unwrap();
        assert_eq!(cap, 1.5);
        // 300 kW of demand caps installed capacity at 450 kW.
        assert_eq!(cap * 300.0, 450.0);
    }

    #[test]
    fn mip_init_picks_shorter_route() {
        // Two candidate routes to one consumer: 100 m and 150 m.
        let net = two_route_toy(100.0, 150.0);
        let phi = mip_init(&net).unwrap();
        assert!(phi[0], "short route selected");
        assert!(!phi[1], "long route skipped");
    }

    pub(super) fn two_route_toy(len_a: f64, len_b: f64) -> Network {
        use crate::network::*;
        use std::collections::BTreeMap;
        let nodes = vec![
            Node { id: 0, kind: NodeKind::ProducerFeed, position: (0.0, 0.0) },
            Node { id: 1, kind: NodeKind::ProducerReturn, position: (0.0, 0.0) },
            Node { id: 2, kind: NodeKind::ConsumerFeed, position: (100.0, 0.0) },
            Node { id: 3, kind: NodeKind::ConsumerReturn, position: (100.0, 0.0) },
        ];
        let edges = vec![
            Edge { id: 0, tail: 0, head: 2, kind: EdgeKind::PipeFeed, length: Some(len_a), mirror: Some(1) },
            Edge { id: 1, tail: 3, head: 1, kind: EdgeKind::PipeReturn, length: Some(len_a), mirror: Some(0) },
            Edge { id: 2, tail: 0, head: 2, kind: EdgeKind::PipeFeed, length: Some(len_b), mirror: Some(3) },
            Edge { id: 3, tail: 3, head: 1, kind: EdgeKind::PipeReturn, length: Some(len_b), mirror: Some(2) },
            Edge { id: 4, tail: 2, head: 3, kind: EdgeKind::HeatingSystem, length: None, mirror: None },
            Edge { id: 5, tail: 1, head: 0, kind: EdgeKind::ProducerArcFeed, length: None, mirror: None },
        ];
        let mut consumers = BTreeMap::new();
        consumers.insert(
            4,
            ConsumerSpec { demand: 200_000.0, heater_coef: 3000.0, heater_exp: 1.2, theta_house: 10.0 },
        );
        let mut producers = BTreeMap::new();
        producers.insert(
            5,
            ProducerSpec {
                injection_temp: 60.0,
                heat_capacity_price: 800.0,
                heat_unit_price: 0.06,
                electricity_price: 0.11,
            },
        );
        build_network("two-route".into(), nodes, edges, consumers, producers, GlobalParams::default())
            .unwrap()
    }
}
