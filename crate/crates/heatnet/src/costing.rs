//! Net-present-value cost of a network design: pipe and heat-plant capital
//! expenditure plus annual heat and pumping cost, NPV-weighted over the
//! investment horizon. Also hosts the sigmoid fixed-cost relaxation used by
//! the penalized optimizer.

use crate::design::DesignVector;
use crate::error::Result;
use crate::network::{GlobalParams, Network};
use crate::sim::physics::{pos_smooth, Q_EPS};
use crate::sim::SimResult;
use serde::{Deserialize, Serialize};

/// Smallest catalogue diameter: pipes thinner than this are not real, m.
pub const D_MIN_CATALOGUE: f64 = 0.02;
/// Final sigmoid slope of the default penalization continuation, 1/m.
pub const K_SIGMOID_FINAL: f64 = 400.0;

/// How the fixed pipe cost p0 is charged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostMode {
    /// Catalogue cost: p0 charged to every installed pipe (d > 0).
    Raw,
    /// Penalized cost: p0 weighted by a sigmoid step of slope k at d_min.
    Penalized { k: f64 },
}

/// The sigmoid as printed in the source formulation is nonpositive and
/// vanishes for large d; the corrected form reproduces the fixed cost on
/// installed pipes. Both are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmoidForm {
    #[default]
    Corrected,
    Printed,
}

/// Operating-cost NPV factor form. `Printed` compounds discount and
/// inflation in the same direction; `DiscountRatio` discounts inflated
/// cash flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FopForm {
    #[default]
    Printed,
    DiscountRatio,
}

#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    pub sigmoid_form: SigmoidForm,
    pub fop_form: FopForm,
    pub d_min: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            sigmoid_form: SigmoidForm::Corrected,
            fop_form: FopForm::Printed,
            d_min: D_MIN_CATALOGUE,
        }
    }
}

/// Cost components in EUR (capex) and EUR/year (opex), with the NPV factors
/// and the combined totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub pipe_capex: f64,
    pub heat_capex: f64,
    pub heat_opex_annualized: f64,
    pub pump_opex_annualized: f64,
    pub f_cap: f64,
    pub f_op: f64,
    pub total_npv: f64,
    pub total_annualized: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// NPV factors for capital and operating cost over `a` years.
pub fn npv_factors(a: f64, e_a: f64, e_i: f64) -> (f64, f64) {
    npv_factors_with(a, e_a, e_i, FopForm::Printed)
}

pub fn npv_factors_with(a: f64, e_a: f64, e_i: f64, form: FopForm) -> (f64, f64) {
    let f_cap = (1.0 + e_a).powf(a);
    let f_op = match form {
        FopForm::Printed => {
            let x = (1.0 + e_a) * (1.0 + e_i);
            if (x - 1.0).abs() < 1e-12 {
                a
            } else {
                (1.0 - x.powf(a)) / (1.0 - x)
            }
        }
        FopForm::DiscountRatio => {
            let r = (1.0 + e_i) / (1.0 + e_a);
            if (r - 1.0).abs() < 1e-12 {
                a
            } else {
                r * (1.0 - r.powf(a)) / (1.0 - r)
            }
        }
    };
    (f_cap, f_op)
}

/// Sigmoid-weighted fixed installation cost per meter: ~0 below d_min,
/// ~p0 above it, p0/2 at d_min.
pub fn sigmoid_fixed_cost(d: f64, k: f64, d_min: f64, p0: f64) -> f64 {
    sigmoid_fixed_cost_with(d, k, d_min, p0, SigmoidForm::Corrected)
}

pub fn sigmoid_fixed_cost_with(d: f64, k: f64, d_min: f64, p0: f64, form: SigmoidForm) -> f64 {
    let s = 1.0 / (1.0 + (-k * (d - d_min)).exp());
    match form {
        SigmoidForm::Corrected => p0 * s,
        SigmoidForm::Printed => p0 * (s - 1.0),
    }
}

fn sigmoid_fixed_cost_grad(d: f64, k: f64, d_min: f64, p0: f64) -> f64 {
    let e = (-k * (d - d_min)).exp();
    let s = 1.0 / (1.0 + e);
    p0 * k * e * s * s
}

/// Pipe investment cost of a design, EUR.
pub fn pipe_capex(design: &DesignVector, network: &Network, mode: CostMode) -> f64 {
    pipe_capex_model(design, network, mode, &CostModel::default())
}

pub fn pipe_capex_model(
    design: &DesignVector,
    network: &Network,
    mode: CostMode,
    model: &CostModel,
) -> f64 {
    let p = &network.params;
    let mut total = 0.0;
    for (slot, &(f, r)) in network.pipe_pairs.iter().enumerate() {
        let d = design.diameters[slot];
        let len = network.edges[f].length.unwrap() + network.edges[r].length.unwrap();
        total += pair_capex(d, len, p, mode, model);
    }
    total
}

fn pair_capex(d: f64, len: f64, p: &GlobalParams, mode: CostMode, model: &CostModel) -> f64 {
    match mode {
        CostMode::Raw => {
            if d > 0.0 {
                (p.pipe_cost_linear * d + p.pipe_cost_fixed) * len
            } else {
                0.0
            }
        }
        CostMode::Penalized { k } => {
            let fixed = sigmoid_fixed_cost_with(d, k, model.d_min, p.pipe_cost_fixed, model.sigmoid_form);
            (p.pipe_cost_linear * d + fixed) * len
        }
    }
}

/// d(pipe_capex)/d(diameter) per pipe pair.
pub(crate) fn pipe_capex_diameter_grad(
    design: &DesignVector,
    network: &Network,
    mode: CostMode,
    model: &CostModel,
) -> Vec<f64> {
    let p = &network.params;
    network
        .pipe_pairs
        .iter()
        .enumerate()
        .map(|(slot, &(f, r))| {
            let d = design.diameters[slot];
            let len = network.edges[f].length.unwrap() + network.edges[r].length.unwrap();
            match mode {
                CostMode::Raw => {
                    if d > 0.0 {
                        p.pipe_cost_linear * len
                    } else {
                        0.0
                    }
                }
                CostMode::Penalized { k } => {
                    (p.pipe_cost_linear + sigmoid_fixed_cost_grad(d, k, model.d_min, p.pipe_cost_fixed))
                        * len
                }
            }
        })
        .collect()
}

const HOURS_PER_YEAR: f64 = 8760.0;
const W_PER_KW: f64 = 1000.0;

/// Per-producer injected heat q * dtheta with a smooth positive clamp, plus
/// derivatives wrt arc flow and return-node temperature.
fn producer_heat_terms(state: &SimResult, network: &Network) -> Vec<ProducerHeat> {
    let mut out = Vec::with_capacity(network.producer_arcs.len());
    for &arc in &network.producer_arcs {
        let edge = &network.edges[arc];
        let spec = &network.producers[&edge.id];
        let ret_node = network.node_index(edge.tail).unwrap();
        let q = state.state.flow[arc];
        let dtheta = spec.injection_temp - state.state.theta_node[ret_node];
        let (hx, dhx) = pos_smooth(q * dtheta, Q_EPS);
        out.push(ProducerHeat {
            arc,
            ret_node,
            heat_w: network.params.rho * network.params.c_p * hx,
            d_q: network.params.rho * network.params.c_p * dhx * dtheta,
            d_theta_ret: -network.params.rho * network.params.c_p * dhx * q,
        });
    }
    out
}

struct ProducerHeat {
    arc: usize,
    ret_node: usize,
    /// rho c_p max(q dtheta, 0), W
    heat_w: f64,
    d_q: f64,
    d_theta_ret: f64,
}

/// Heat production capacity cost, EUR.
pub fn heat_capex(state: &SimResult, network: &Network) -> f64 {
    let p = &network.params;
    producer_heat_terms(state, network)
        .iter()
        .map(|t| {
            let spec = &network.producers[&network.edges[t.arc].id];
            spec.heat_capacity_price * t.heat_w / W_PER_KW
        })
        .sum::<f64>()
        / (p.capacity_factor * p.producer_efficiency)
}

/// Annual heat purchase cost, EUR/year.
pub fn heat_opex(state: &SimResult, network: &Network) -> f64 {
    let p = &network.params;
    producer_heat_terms(state, network)
        .iter()
        .map(|t| {
            let spec = &network.producers[&network.edges[t.arc].id];
            spec.heat_unit_price * t.heat_w / W_PER_KW
        })
        .sum::<f64>()
        * HOURS_PER_YEAR
        / p.producer_efficiency
}

/// Annual pumping cost at the production sites, EUR/year.
///
/// Negative lifts are clamped to zero cost; a warning is recorded for each.
pub fn pump_opex(state: &SimResult, network: &Network) -> (f64, Vec<String>) {
    let p = &network.params;
    let mut warnings = Vec::new();
    let mut total = 0.0;
    for &arc in &network.producer_arcs {
        let edge = &network.edges[arc];
        let feed_node = network.node_index(edge.head).unwrap();
        let ret_node = network.node_index(edge.tail).unwrap();
        let lift = state.state.pressure[feed_node] - state.state.pressure[ret_node];
        if lift < 0.0 {
            warnings.push(format!(
                "negative pump lift {lift:.1} Pa at producer arc {}; treated as zero",
                edge.id
            ));
        }
        let (lift_pos, _) = pos_smooth(lift, 1.0);
        let (q_pos, _) = pos_smooth(state.state.flow[arc], Q_EPS);
        let spec = &network.producers[&edge.id];
        total += spec.electricity_price * lift_pos * q_pos / W_PER_KW;
    }
    (total * HOURS_PER_YEAR / p.pump_efficiency, warnings)
}

/// Combine the four components into the NPV total.
pub fn total_cost(
    design: &DesignVector,
    state: &SimResult,
    network: &Network,
    mode: CostMode,
) -> Result<CostBreakdown> {
    total_cost_model(design, state, network, mode, &CostModel::default())
}

pub fn total_cost_model(
    design: &DesignVector,
    state: &SimResult,
    network: &Network,
    mode: CostMode,
    model: &CostModel,
) -> Result<CostBreakdown> {
    let p = &network.params;
    let (f_cap, f_op) = npv_factors_with(p.horizon_years, p.discount_rate, p.inflation_rate, model.fop_form);
    let pipe = pipe_capex_model(design, network, mode, model);
    let heat_cap = heat_capex(state, network);
    let heat_op = heat_opex(state, network);
    let (pump_op, warnings) = pump_opex(state, network);
    let total_npv = f_cap * (pipe + heat_cap) + f_op * (heat_op + pump_op);
    let total_annualized = if p.horizon_years > 0.0 {
        total_npv / p.horizon_years
    } else {
        total_npv
    };
    Ok(CostBreakdown {
        pipe_capex: pipe,
        heat_capex: heat_cap,
        heat_opex_annualized: heat_op,
        pump_opex_annualized: pump_op,
        f_cap,
        f_op,
        total_npv,
        total_annualized,
        warnings,
    })
}

/// Gradient of the NPV total with respect to the solved state (flows,
/// pressures, node temperatures) and the design diameters. Used by the
/// adjoint; the demand-constraint terms of the optimizer are layered on
/// separately.
pub(crate) struct CostGradients {
    pub d_flow: Vec<f64>,
    pub d_pressure: Vec<f64>,
    pub d_theta_node: Vec<f64>,
    pub d_diameter: Vec<f64>,
}

pub(crate) fn total_cost_state_gradients(
    design: &DesignVector,
    state: &SimResult,
    network: &Network,
    mode: CostMode,
    model: &CostModel,
) -> CostGradients {
    let p = &network.params;
    let (f_cap, f_op) = npv_factors_with(p.horizon_years, p.discount_rate, p.inflation_rate, model.fop_form);
    let mut d_flow = vec![0.0; network.edges.len()];
    let mut d_pressure = vec![0.0; network.nodes.len()];
    let mut d_theta_node = vec![0.0; network.nodes.len()];

    let cap_coef = 1.0 / (W_PER_KW * p.capacity_factor * p.producer_efficiency);
    let op_coef = HOURS_PER_YEAR / (W_PER_KW * p.producer_efficiency);
    for t in producer_heat_terms(state, network) {
        let spec = &network.producers[&network.edges[t.arc].id];
        let w = f_cap * spec.heat_capacity_price * cap_coef + f_op * spec.heat_unit_price * op_coef;
        d_flow[t.arc] += w * t.d_q;
        d_theta_node[t.ret_node] += w * t.d_theta_ret;
    }

    let pump_coef = f_op * HOURS_PER_YEAR / (W_PER_KW * p.pump_efficiency);
    for &arc in &network.producer_arcs {
        let edge = &network.edges[arc];
        let feed_node = network.node_index(edge.head).unwrap();
        let ret_node = network.node_index(edge.tail).unwrap();
        let lift = state.state.pressure[feed_node] - state.state.pressure[ret_node];
        let (lift_pos, dlift) = pos_smooth(lift, 1.0);
        let (q_pos, dq) = pos_smooth(state.state.flow[arc], Q_EPS);
        let spec = &network.producers[&edge.id];
        let c = pump_coef * spec.electricity_price;
        d_pressure[feed_node] += c * dlift * q_pos;
        d_pressure[ret_node] -= c * dlift * q_pos;
        d_flow[arc] += c * lift_pos * dq;
    }

    let d_diameter = pipe_capex_diameter_grad(design, network, mode, model)
        .into_iter()
        .map(|g| f_cap * g)
        .collect();

    CostGradients { d_flow, d_pressure, d_theta_node, d_diameter }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::uniform_design;
    use crate::design::StateVector;
    use crate::network::testutil::toy_network;
    use proptest::prelude::*;

    fn fake_state(network: &Network) -> SimResult {
        SimResult {
            state: StateVector::zeros(network),
            converged: true,
            iterations: 0,
            residual_norm: 0.0,
        }
    }

    #[test]
    fn npv_factors_match_arithmetic_oracle() {
        // (1.04)^30 = 3.2434; (1 - 1.0816^30)/(1 - 1.0816) = 116.661.
        let (f_cap, f_op) = npv_factors(30.0, 0.04, 0.04);
        assert!((f_cap - 3.2434).abs() / 3.2434 < 1e-3, "f_cap = {f_cap}");
        assert!((f_op - 116.66).abs() / 116.66 < 1e-3, "f_op = {f_op}");
    }

    #[test]
    fn npv_factors_empty_horizon() {
        let (f_cap, f_op) = npv_factors(0.0, 0.04, 0.04);
        assert_eq!(f_cap, 1.0);
        assert!(f_op.abs() < 1e-12);
    }

    #[test]
    fn npv_factors_zero_rates_limit() {
        let (f_cap, f_op) = npv_factors(30.0, 0.0, 0.0);
        assert_eq!(f_cap, 1.0);
        assert!((f_op - 30.0).abs() < 1e-9);
    }

    #[test]
    fn pipe_capex_matches_scalar_oracle() {
        // Single pair of 100 m at d = 0.1: one direction costs
        // (1976.3 * 0.1 + 301.4) * 100 = 49 903 EUR.
        let net = toy_network(15_000.0, 100.0);
        let mut design = uniform_design(&net, 0.1).unwrap();
        let capex = pipe_capex(&design, &net, CostMode::Raw);
        // Both directions of the pair are charged.
        assert!((capex - 2.0 * 49_903.0).abs() < 1e-6, "capex = {capex}");
        design.diameters[0] = 0.0;
        assert_eq!(pipe_capex(&design, &net, CostMode::Raw), 0.0);
    }

    #[test]
    fn pipe_capex_zero_design_penalized_is_tiny() {
        let net = toy_network(15_000.0, 100.0);
        let mut design = uniform_design(&net, 0.1).unwrap();
        design.diameters[0] = 0.0;
        let capex = pipe_capex(&design, &net, CostMode::Penalized { k: K_SIGMOID_FINAL });
        let raw_if_present = 2.0 * 49_903.0;
        assert!(capex < 1e-3 * raw_if_present, "capex = {capex}");
    }

    #[test]
    fn pipe_capex_linear_in_length() {
        let short = toy_network(15_000.0, 100.0);
        let long = toy_network(15_000.0, 200.0);
        let d_short = uniform_design(&short, 0.1).unwrap();
        let d_long = uniform_design(&long, 0.1).unwrap();
        let a = pipe_capex(&d_short, &short, CostMode::Raw);
        let b = pipe_capex(&d_long, &long, CostMode::Raw);
        assert!((b - 2.0 * a).abs() < 1e-9 * b);
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let p0 = 301.4;
        let k = 400.0;
        let d_min = 0.02;
        assert!((sigmoid_fixed_cost(d_min, k, d_min, p0) - p0 / 2.0).abs() < 1e-12);
        let hi = sigmoid_fixed_cost(d_min + 10.0 / k, k, d_min, p0);
        assert!((hi - p0).abs() < 1e-4 * p0, "hi = {hi}");
        // k d_min >= 10 saturates the low side to ~0.
        let lo = sigmoid_fixed_cost(0.0, 500.0, d_min, p0);
        assert!(lo < 1e-4 * p0 + 1e-9, "lo = {lo}");
    }

    #[test]
    fn printed_sigmoid_variant_is_nonpositive() {
        let v = sigmoid_fixed_cost_with(0.1, 400.0, 0.02, 301.4, SigmoidForm::Printed);
        assert!(v <= 0.0);
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn heat_capex_matches_scalar_oracle() {
        // 100 kW at 800 EUR/kW, F = 0.33, eta = 0.9 -> 269 360 EUR.
        let net = toy_network(15_000.0, 100.0);
        let mut state = fake_state(&net);
        // Arc is edge index 3; pick q, dtheta so rho c_p q dtheta = 100 kW.
        let dtheta = 30.0;
        let q = 100_000.0 / (net.params.rho * net.params.c_p * dtheta);
        state.state.flow[3] = q;
        state.state.theta_node[1] = 60.0 - dtheta; // theta at return node
        let capex = heat_capex(&state, &net);
        assert!((capex - 269_360.0).abs() / 269_360.0 < 1e-3, "capex = {capex}");
        // Zero flow contributes nothing.
        state.state.flow[3] = 0.0;
        assert!(heat_capex(&state, &net) < 1.0);
    }

    #[test]
    fn heat_opex_matches_scalar_oracle() {
        // 100 kW year-round at 0.06 EUR/kWh / 0.9 = 58 400 EUR/yr.
        let net = toy_network(15_000.0, 100.0);
        let mut state = fake_state(&net);
        let dtheta = 30.0;
        state.state.flow[3] = 100_000.0 / (net.params.rho * net.params.c_p * dtheta);
        state.state.theta_node[1] = 60.0 - dtheta;
        let opex = heat_opex(&state, &net);
        assert!((opex - 58_400.0).abs() / 58_400.0 < 1e-3, "opex = {opex}");
    }

    #[test]
    fn pump_opex_matches_scalar_oracle() {
        // Lift 1e5 Pa at 0.01 m^3/s = 1 kW hydraulic -> 0.11*8760/0.7 = 1376.6 EUR/yr.
        let net = toy_network(15_000.0, 100.0);
        let mut state = fake_state(&net);
        state.state.flow[3] = 0.01;
        state.state.pressure[0] = 1.0e5; // feed node
        state.state.pressure[1] = 0.0; // return node
        let (opex, warnings) = pump_opex(&state, &net);
        assert!(warnings.is_empty());
        assert!((opex - 1376.6).abs() / 1376.6 < 1e-3, "opex = {opex}");
        state.state.flow[3] = 0.0;
        let (zero, _) = pump_opex(&state, &net);
        // Smoothing floor leaves at most Q_EPS/2 of phantom flow.
        assert!(zero < 1e-3, "zero-flow pump cost {zero}");
    }

    #[test]
    fn negative_lift_clamped_with_warning() {
        let net = toy_network(15_000.0, 100.0);
        let mut state = fake_state(&net);
        state.state.flow[3] = 0.01;
        state.state.pressure[0] = -5000.0;
        let (opex, warnings) = pump_opex(&state, &net);
        assert_eq!(warnings.len(), 1);
        assert!(opex < 1e-3);
    }

    #[test]
    fn total_cost_zero_network_is_zero() {
        let net = toy_network(0.0, 100.0);
        let mut design = uniform_design(&net, 0.1).unwrap();
        design.diameters[0] = 0.0;
        let state = fake_state(&net);
        let cost = total_cost(&design, &state, &net, CostMode::Raw).unwrap();
        assert!(cost.total_npv.abs() < 1.0, "total = {}", cost.total_npv);
    }

    #[test]
    fn raw_and_penalized_differ_only_in_fixed_term() {
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.1).unwrap();
        let state = fake_state(&net);
        let raw = total_cost(&design, &state, &net, CostMode::Raw).unwrap();
        let pen =
            total_cost(&design, &state, &net, CostMode::Penalized { k: K_SIGMOID_FINAL }).unwrap();
        assert_eq!(raw.heat_capex, pen.heat_capex);
        assert_eq!(raw.heat_opex_annualized, pen.heat_opex_annualized);
        assert_eq!(raw.pump_opex_annualized, pen.pump_opex_annualized);
        // At d = 0.1 >> d_min the sigmoid has saturated: fixed costs agree closely.
        assert!((raw.pipe_capex - pen.pipe_capex).abs() / raw.pipe_capex < 1e-3);
    }

    proptest! {
        #[test]
        fn sigmoid_monotone_and_bounded(
            d1 in 0.0f64..0.4, d2 in 0.0f64..0.4, k in 10.0f64..1000.0,
        ) {
            let p0 = 301.4;
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a = sigmoid_fixed_cost(lo, k, 0.02, p0);
            let b = sigmoid_fixed_cost(hi, k, 0.02, p0);
            prop_assert!(a <= b + 1e-12);
            prop_assert!(a >= 0.0 && b <= p0);
        }

        #[test]
        fn total_npv_reconstruction(
            q in 0.0f64..0.05, lift in 0.0f64..2e5, d in 0.02f64..0.4,
        ) {
            let net = toy_network(15_000.0, 100.0);
            let mut design = uniform_design(&net, 0.1).unwrap();
            design.diameters[0] = d;
            let mut state = fake_state(&net);
            state.state.flow[3] = q;
            state.state.pressure[0] = lift;
            state.state.theta_node[1] = 25.0;
            let cost = total_cost(&design, &state, &net, CostMode::Raw).unwrap();
            let rebuilt = cost.f_cap * (cost.pipe_capex + cost.heat_capex)
                + cost.f_op * (cost.heat_opex_annualized + cost.pump_opex_annualized);
            prop_assert!((cost.total_npv - rebuilt).abs() <= 1e-9 * rebuilt.abs().max(1.0));
        }
    }
}
