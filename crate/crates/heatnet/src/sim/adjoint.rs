//! Discrete adjoint gradients of scalar cost functionals.
//!
//! With the converged residual system R(u, x) = 0 and a functional J(u, x),
//! the gradient is dJ/du = dJ/du|_x + lambda^T dR/du where the adjoint
//! variables solve (dR/dx)^T lambda = -(dJ/dx)^T. One extra transposed
//! sparse solve per gradient, reusing the Newton factorization.

use crate::costing::{total_cost_model, total_cost_state_gradients, CostMode, CostModel};
use crate::design::DesignVector;
use crate::error::{HeatNetError, Result};
use crate::network::Network;
use crate::sim::system::design_jacobian;
use crate::sim::system::SimOptions;
use crate::sim::{solve_system, SimConfig, Solved};
use faer::prelude::Solve;

/// Gradient of a scalar functional with respect to the design variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignGradient {
    pub d_diameter: Vec<f64>,
    pub d_inflow: Vec<f64>,
}

/// Gradient of a functional with respect to the solved state, indexed by
/// network edges/nodes. Pressure derivatives are taken with respect to the
/// shifted (reported) pressures.
#[derive(Debug, Clone)]
pub(crate) struct StateGradient {
    pub d_flow: Vec<f64>,
    pub d_pressure: Vec<f64>,
    pub d_theta_node: Vec<f64>,
    pub d_theta_exit: Vec<f64>,
}

impl StateGradient {
    pub fn zeros(network: &Network) -> StateGradient {
        StateGradient {
            d_flow: vec![0.0; network.edges.len()],
            d_pressure: vec![0.0; network.nodes.len()],
            d_theta_node: vec![0.0; network.nodes.len()],
            d_theta_exit: vec![0.0; network.edges.len()],
        }
    }
}

/// A differentiable scalar functional of (design, state).
pub(crate) trait CostFunctional {
    fn eval(
        &self,
        network: &Network,
        design: &DesignVector,
        solved: &Solved,
    ) -> (f64, StateGradient, DesignGradient);
}

/// Built-in objectives for the public gradient entry point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    TotalCost { mode: CostMode },
    /// Design-independent functional; gradient is identically zero.
    Constant(f64),
}

pub(crate) struct TotalCostFunctional {
    pub mode: CostMode,
    pub model: CostModel,
}

impl CostFunctional for TotalCostFunctional {
    fn eval(
        &self,
        network: &Network,
        design: &DesignVector,
        solved: &Solved,
    ) -> (f64, StateGradient, DesignGradient) {
        let result = &solved.result;
        let breakdown = total_cost_model(design, result, network, self.mode, &self.model)
            .expect("cost of a converged state");
        let g = total_cost_state_gradients(design, result, network, self.mode, &self.model);
        let sg = StateGradient {
            d_flow: g.d_flow,
            d_pressure: g.d_pressure,
            d_theta_node: g.d_theta_node,
            d_theta_exit: vec![0.0; network.edges.len()],
        };
        let dg = DesignGradient {
            d_diameter: g.d_diameter,
            d_inflow: vec![0.0; network.n_producers()],
        };
        (breakdown.total_npv, sg, dg)
    }
}

struct ConstantFunctional(f64);

impl CostFunctional for ConstantFunctional {
    fn eval(
        &self,
        network: &Network,
        _design: &DesignVector,
        _solved: &Solved,
    ) -> (f64, StateGradient, DesignGradient) {
        (
            self.0,
            StateGradient::zeros(network),
            DesignGradient {
                d_diameter: vec![0.0; network.n_pipe_pairs()],
                d_inflow: vec![0.0; network.n_producers()],
            },
        )
    }
}

/// Adjoint gradient of `objective` at `design`. Solves the state first;
/// errors if the state solve does not converge.
pub fn adjoint_gradient(
    network: &Network,
    design: &DesignVector,
    objective: Objective,
    config: &SimConfig,
) -> Result<DesignGradient> {
    let solved = solve_system(network, design, config, &SimOptions::standard(), None)?;
    if !solved.result.converged {
        return Err(HeatNetError::NewtonFailed {
            iterations: solved.result.iterations,
            residual: solved.result.residual_norm,
        });
    }
    match objective {
        Objective::TotalCost { mode } => adjoint_for_solved(
            network,
            design,
            &solved,
            &TotalCostFunctional { mode, model: CostModel::default() },
        )
        .map(|(_, g)| g),
        Objective::Constant(c) => adjoint_for_solved(network, design, &solved, &ConstantFunctional(c))
            .map(|(_, g)| g),
    }
}

/// Adjoint gradient for an already-solved state.
pub(crate) fn adjoint_for_solved(
    network: &Network,
    design: &DesignVector,
    solved: &Solved,
    functional: &dyn CostFunctional,
) -> Result<(f64, DesignGradient)> {
    let layout = &solved.layout;
    let lu = solved.lu.as_ref().ok_or(HeatNetError::AdjointFactorization)?;
    let (value, sg, mut dg) = functional.eval(network, design, solved);

    // Chain rule through the feed-side pressure shift: the shift of a
    // component moves with (minus) the raw pressures of its critical
    // consumer's feed/return nodes.
    let mut d_pressure_raw: Vec<f64> = vec![0.0; layout.n_n];
    for (slot, &ni) in layout.active_nodes.iter().enumerate() {
        d_pressure_raw[slot] = sg.d_pressure[ni];
    }
    for plan in &solved.shifts {
        let Some(critical) = plan.critical_hs else { continue };
        let total: f64 = plan
            .nodes
            .iter()
            .map(|&n| sg.d_pressure[layout.active_nodes[n]])
            .sum();
        if total == 0.0 {
            continue;
        }
        let (cf, cr) = layout.edge_ends(network, critical);
        d_pressure_raw[cf] -= total;
        d_pressure_raw[cr] += total;
    }

    let n = layout.n_unknowns();
    let mut rhs = vec![0.0; n];
    for (slot, &e) in layout.active_edges.iter().enumerate() {
        rhs[layout.iq(slot)] = -sg.d_flow[e];
        rhs[layout.itx(slot)] = -sg.d_theta_exit[e];
    }
    for (slot, &ni) in layout.active_nodes.iter().enumerate() {
        rhs[layout.ip(slot)] = -d_pressure_raw[slot];
        rhs[layout.ith(slot)] = -sg.d_theta_node[ni];
    }
    let b = faer::Mat::from_fn(n, 1, |i, _| rhs[i]);
    let lambda = lu.solve_transpose(&b);
    if (0..n).any(|i| !lambda[(i, 0)].is_finite()) {
        return Err(HeatNetError::AdjointFactorization);
    }

    for trip in design_jacobian(network, layout, design, &solved.x) {
        let col = trip.col;
        let add = lambda[(trip.row, 0)] * trip.val;
        if col < network.n_pipe_pairs() {
            dg.d_diameter[col] += add;
        } else {
            dg.d_inflow[col - network.n_pipe_pairs()] += add;
        }
    }
    Ok((value, dg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::uniform_design;
    use crate::network::testutil::toy_network;
    use crate::sim::solve_state;

    fn total_cost_of(network: &Network, design: &DesignVector) -> f64 {
        let cfg = SimConfig { tol: 1e-12, ..SimConfig::default() };
        let state = solve_state(network, design, &cfg).unwrap();
        assert!(state.converged);
        crate::costing::total_cost(design, &state, network, CostMode::Raw)
            .unwrap()
            .total_npv
    }

    #[test]
    fn toy_diameter_gradient_matches_central_difference() {
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.1).unwrap();
        let cfg = SimConfig { tol: 1e-12, ..SimConfig::default() };
        let grad = adjoint_gradient(&net, &design, Objective::TotalCost { mode: CostMode::Raw }, &cfg)
            .unwrap();

        let h = 1e-6;
        let mut dp = design.clone();
        dp.diameters[0] += h;
        let mut dm = design.clone();
        dm.diameters[0] -= h;
        let fd = (total_cost_of(&net, &dp) - total_cost_of(&net, &dm)) / (2.0 * h);
        let rel = (grad.d_diameter[0] - fd).abs() / fd.abs().max(1.0);
        assert!(rel < 1e-5, "adjoint {} vs fd {fd} (rel {rel})", grad.d_diameter[0]);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.1).unwrap();
        let grad =
            adjoint_gradient(&net, &design, Objective::Constant(42.0), &SimConfig::default()).unwrap();
        assert!(grad.d_diameter.iter().all(|&g| g == 0.0));
        assert!(grad.d_inflow.iter().all(|&g| g == 0.0));
    }
}
