//! Assembly of the steady-state residual system and its analytic Jacobian.
//!
//! Unknown layout: x = [q per active edge, p per active node, theta per
//! active node, theta_exit per active edge]. Row layout mirrors it: one
//! characteristic equation per edge (momentum, valve closure or producer
//! inflow), one mass balance per node, one mixing equation per node, one
//! exit-temperature equation per edge. One mass balance per connected flow
//! component is redundant and its row slot, together with the slot of each
//! slack producer arc, carries a pressure reference pin instead.

use crate::design::DesignVector;
use crate::error::{HeatNetError, Result};
use crate::network::{Network, NodeKind};
use crate::sim::physics::{
    abs_eps, pipe_decay_smooth, pipe_drop_smooth, valve_target_heat_raw, D_EPS,
};
use faer::sparse::Triplet;

/// Differential pressure guaranteed across the critical consumer's heat
/// exchanger: the 2 kPa exchanger bound plus a 1% valve-authority margin.
pub const HS_DP_TARGET: f64 = 2000.0 * 1.01;

/// Cap on upwind-switch sensitivities in the Jacobian. The smoothed
/// directional weights have curvature of order 1/Q_EPS at stagnation points;
/// their pointwise derivatives are useless at Newton step scales and stall
/// the line search. Residuals stay exact; only these Jacobian entries are
/// clamped. Healthy flows (|q| well above Q_EPS) are far below the cap.
const UPWIND_SENS_CAP: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum EdgeClass {
    Pipe { pair: usize },
    HeatingSystem,
    ProducerArc { producer: usize, slack: bool },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SimOptions {
    pub linear_radiator: bool,
    pub demand_scale: f64,
}

impl SimOptions {
    pub fn standard() -> SimOptions {
        SimOptions { linear_radiator: false, demand_scale: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SimLayout {
    /// Network edge indices in the solve, in network order.
    pub active_edges: Vec<usize>,
    pub active_nodes: Vec<usize>,
    /// network edge index -> active slot.
    pub edge_slot: Vec<Option<usize>>,
    pub node_slot: Vec<Option<usize>>,
    pub class: Vec<EdgeClass>,
    /// Effective diameter per edge slot (0 for non-pipes).
    pub diam: Vec<f64>,
    /// Nonzero when the design diameter sits below the evaluation floor.
    pub diam_floored: Vec<bool>,
    pub length: Vec<f64>,
    pub press_comp: Vec<usize>,
    pub n_press: usize,
    /// Per flow component: node slot whose mass balance is dropped.
    pub drop_node: Vec<usize>,
    /// Per pressure component: node slot pinned to zero.
    pub pin_node: Vec<usize>,
    /// Per pressure component: heating-system edge slots (demand > 0) whose
    /// feed node lies in the component. Drives the pump-head shift.
    pub hs_by_press_comp: Vec<Vec<usize>>,
    pub q_scale: f64,
    pub p_scale: f64,
    pub th_scale: f64,
    pub n_e: usize,
    pub n_n: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

impl SimLayout {
    pub fn n_unknowns(&self) -> usize {
        2 * self.n_e + 2 * self.n_n
    }
    pub fn iq(&self, e: usize) -> usize {
        e
    }
    pub fn ip(&self, n: usize) -> usize {
        self.n_e + n
    }
    pub fn ith(&self, n: usize) -> usize {
        self.n_e + self.n_n + n
    }
    pub fn itx(&self, e: usize) -> usize {
        self.n_e + 2 * self.n_n + e
    }

    /// A fingerprint of the active topology, used to decide whether a warm
    /// start from a previous solve is layout-compatible.
    pub fn signature(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &e in &self.active_edges {
            h = (h ^ e as u64).wrapping_mul(0x100000001b3);
        }
        h
    }

    pub fn build(network: &Network, design: &DesignVector) -> Result<SimLayout> {
        design.validate(network)?;
        if network.producer_arcs.is_empty() {
            return Err(HeatNetError::InfeasibleTopology("network has no producers".into()));
        }

        let mut class_by_edge: Vec<Option<EdgeClass>> = vec![None; network.edges.len()];
        for (slot_pair, &(f, r)) in network.pipe_pairs.iter().enumerate() {
            if design.diameters[slot_pair] > 0.0 {
                class_by_edge[f] = Some(EdgeClass::Pipe { pair: slot_pair });
                class_by_edge[r] = Some(EdgeClass::Pipe { pair: slot_pair });
            }
        }
        for &i in &network.hs_edges {
            class_by_edge[i] = Some(EdgeClass::HeatingSystem);
        }
        for (p, &i) in network.producer_arcs.iter().enumerate() {
            class_by_edge[i] = Some(EdgeClass::ProducerArc { producer: p, slack: false });
        }

        // Components without a producer carry no flow: error out if they hold
        // live demand, otherwise drop them from the solve entirely.
        {
            let mut uf = UnionFind::new(network.nodes.len());
            for (i, c) in class_by_edge.iter().enumerate() {
                if c.is_some() {
                    let e = &network.edges[i];
                    uf.union(
                        network.node_index(e.tail).unwrap(),
                        network.node_index(e.head).unwrap(),
                    );
                }
            }
            let mut powered = vec![false; network.nodes.len()];
            for &arc in &network.producer_arcs {
                let root = uf.find(network.node_index(network.edges[arc].tail).unwrap());
                powered[root] = true;
            }
            let mut dead_consumers = Vec::new();
            for &hs in &network.hs_edges {
                let e = &network.edges[hs];
                let root = uf.find(network.node_index(e.tail).unwrap());
                if !powered[root] && network.consumers[&e.id].demand > 0.0 {
                    dead_consumers.push(e.id);
                }
            }
            if !dead_consumers.is_empty() {
                return Err(HeatNetError::IsolatedConsumer(dead_consumers));
            }
            for (i, c) in class_by_edge.iter_mut().enumerate() {
                if c.is_some() {
                    let e = &network.edges[i];
                    let root = uf.find(network.node_index(e.tail).unwrap());
                    if !powered[root] {
                        *c = None;
                    }
                }
            }
        }

        let mut active_edges = Vec::new();
        for (i, c) in class_by_edge.iter().enumerate() {
            if c.is_some() {
                active_edges.push(i);
            }
        }

        let mut node_slot = vec![None; network.nodes.len()];
        let mut active_nodes = Vec::new();
        for &e in &active_edges {
            for id in [network.edges[e].tail, network.edges[e].head] {
                let ni = network.node_index(id).unwrap();
                if node_slot[ni].is_none() {
                    node_slot[ni] = Some(usize::MAX); // provisional
                    active_nodes.push(ni);
                }
            }
        }
        active_nodes.sort_unstable();
        for (slot, &ni) in active_nodes.iter().enumerate() {
            node_slot[ni] = Some(slot);
        }

        let n_n = active_nodes.len();
        let n_e = active_edges.len();
        let mut edge_slot = vec![None; network.edges.len()];
        for (slot, &e) in active_edges.iter().enumerate() {
            edge_slot[e] = Some(slot);
        }

        let ends = |e: usize| -> (usize, usize) {
            let edge = &network.edges[e];
            (
                node_slot[network.node_index(edge.tail).unwrap()].unwrap(),
                node_slot[network.node_index(edge.head).unwrap()].unwrap(),
            )
        };

        // Flow components over every active edge; pressure components over
        // pipes only (other active nodes are singletons).
        let mut flow_uf = UnionFind::new(n_n);
        let mut press_uf = UnionFind::new(n_n);
        let mut class = Vec::with_capacity(n_e);
        let mut diam = Vec::with_capacity(n_e);
        let mut diam_floored = Vec::with_capacity(n_e);
        let mut length = Vec::with_capacity(n_e);
        for &e in &active_edges {
            let c = class_by_edge[e].unwrap();
            class.push(c);
            let (t, h) = ends(e);
            flow_uf.union(t, h);
            match c {
                EdgeClass::Pipe { pair } => {
                    press_uf.union(t, h);
                    let d = design.diameters[pair];
                    diam_floored.push(d < D_EPS);
                    diam.push(d.max(D_EPS));
                    length.push(network.edges[e].length.unwrap());
                }
                _ => {
                    diam.push(0.0);
                    diam_floored.push(false);
                    length.push(0.0);
                }
            }
        }

        let mut flow_comp = vec![0usize; n_n];
        let mut flow_roots = Vec::new();
        for n in 0..n_n {
            let r = flow_uf.find(n);
            let idx = match flow_roots.iter().position(|&x| x == r) {
                Some(i) => i,
                None => {
                    flow_roots.push(r);
                    flow_roots.len() - 1
                }
            };
            flow_comp[n] = idx;
        }
        let n_flow = flow_roots.len();

        let mut press_comp = vec![0usize; n_n];
        let mut press_roots = Vec::new();
        for n in 0..n_n {
            let r = press_uf.find(n);
            let idx = match press_roots.iter().position(|&x| x == r) {
                Some(i) => i,
                None => {
                    press_roots.push(r);
                    press_roots.len() - 1
                }
            };
            press_comp[n] = idx;
        }
        let n_press = press_roots.len();

        // Reachability: every consumer's feed node must share a pressure
        // component with a producer feed node, and its return node with a
        // producer return node.
        let mut feed_ok = vec![false; n_press];
        let mut ret_ok = vec![false; n_press];
        for &arc in &network.producer_arcs {
            let (t, h) = ends(arc);
            ret_ok[press_comp[t]] = true;
            feed_ok[press_comp[h]] = true;
        }
        let mut isolated = Vec::new();
        for &e in &network.hs_edges {
            let spec = &network.consumers[&network.edges[e].id];
            if spec.demand <= 0.0 {
                continue;
            }
            let (t, h) = ends(e);
            if !feed_ok[press_comp[t]] || !ret_ok[press_comp[h]] {
                isolated.push(network.edges[e].id);
            }
        }
        if !isolated.is_empty() {
            return Err(HeatNetError::IsolatedConsumer(isolated));
        }

        // Slack producer per flow component: lowest arc edge id.
        let mut slack_arc: Vec<Option<usize>> = vec![None; n_flow];
        for (slot, &e) in active_edges.iter().enumerate() {
            if matches!(class[slot], EdgeClass::ProducerArc { .. }) {
                let (t, _) = ends(e);
                let comp = flow_comp[t];
                let better = match slack_arc[comp] {
                    None => true,
                    Some(prev) => network.edges[active_edges[prev]].id > network.edges[e].id,
                };
                if better {
                    slack_arc[comp] = Some(slot);
                }
            }
        }
        for (slot, &e) in active_edges.iter().enumerate() {
            if let EdgeClass::ProducerArc { producer, .. } = class[slot] {
                let (t, _) = ends(e);
                let slack = slack_arc[flow_comp[t]] == Some(slot);
                class[slot] = EdgeClass::ProducerArc { producer, slack };
            }
        }

        // Dropped mass balance: head of the slack arc, else lowest node.
        let mut drop_node = vec![usize::MAX; n_flow];
        for comp in 0..n_flow {
            drop_node[comp] = match slack_arc[comp] {
                Some(slot) => ends(active_edges[slot]).1,
                None => (0..n_n).find(|&n| flow_comp[n] == comp).unwrap(),
            };
        }

        // Pressure pins: producer return preferred, then producer feed, then
        // the lowest node id in the component.
        let mut pin_node = vec![usize::MAX; n_press];
        for comp in 0..n_press {
            let mut best: Option<(u8, u32, usize)> = None;
            for n in 0..n_n {
                if press_comp[n] != comp {
                    continue;
                }
                let node = &network.nodes[active_nodes[n]];
                let rank = match node.kind {
                    NodeKind::ProducerReturn => 0u8,
                    NodeKind::ProducerFeed => 1,
                    _ => 2,
                };
                let key = (rank, node.id, n);
                if best.map_or(true, |b| (key.0, key.1) < (b.0, b.1)) {
                    best = Some(key);
                }
            }
            pin_node[comp] = best.unwrap().2;
        }

        let n_slack = slack_arc.iter().filter(|s| s.is_some()).count();
        if n_press != n_flow + n_slack {
            return Err(HeatNetError::Indeterminate(format!(
                "{n_press} pressure components vs {n_flow} flow components + {n_slack} slack arcs"
            )));
        }

        let mut hs_by_press_comp = vec![Vec::new(); n_press];
        for (slot, &e) in active_edges.iter().enumerate() {
            if matches!(class[slot], EdgeClass::HeatingSystem) {
                let spec = &network.consumers[&network.edges[e].id];
                if spec.demand > 0.0 {
                    let (t, _) = ends(e);
                    hs_by_press_comp[press_comp[t]].push(slot);
                }
            }
        }

        let th_scale = network
            .producers
            .values()
            .map(|p| p.injection_temp)
            .fold(1.0_f64, f64::max);

        Ok(SimLayout {
            active_edges,
            active_nodes,
            edge_slot,
            node_slot,
            class,
            diam,
            diam_floored,
            length,
            press_comp,
            n_press,
            drop_node,
            pin_node,
            hs_by_press_comp,
            q_scale: network.nominal_flow().max(1e-6),
            p_scale: 1e4,
            th_scale,
            n_e,
            n_n,
        })
    }

    pub fn edge_ends(&self, network: &Network, slot: usize) -> (usize, usize) {
        let edge = &network.edges[self.active_edges[slot]];
        (
            self.node_slot[network.node_index(edge.tail).unwrap()].unwrap(),
            self.node_slot[network.node_index(edge.head).unwrap()].unwrap(),
        )
    }
}

/// Smoothed directed parts of an edge flow: (into-head weight, into-tail
/// weight, their q-derivatives, |q| smooth, its derivative).
#[inline]
fn directed_weights(q: f64) -> (f64, f64, f64, f64, f64, f64) {
    let (aq, daq) = abs_eps(q);
    let w_head = 0.5 * (aq + q);
    let w_tail = 0.5 * (aq - q);
    (w_head, w_tail, 0.5 * (daq + 1.0), 0.5 * (daq - 1.0), aq, daq)
}

pub(crate) struct Assembled {
    pub residual: Vec<f64>,
    pub triplets: Vec<Triplet<usize, usize, f64>>,
}

/// Evaluate residuals and (optionally) the Jacobian at `x`.
pub(crate) fn assemble(
    network: &Network,
    layout: &SimLayout,
    design: &DesignVector,
    options: &SimOptions,
    x: &[f64],
    want_jacobian: bool,
) -> Result<Assembled> {
    let p = &network.params;
    let n = layout.n_unknowns();
    let mut r = vec![0.0; n];
    let mut t: Vec<Triplet<usize, usize, f64>> = Vec::new();
    let push = |t: &mut Vec<Triplet<usize, usize, f64>>, row: usize, col: usize, val: f64| {
        if want_jacobian && val != 0.0 {
            t.push(Triplet::new(row, col, val));
        }
    };

    // Pin row slots, consumed in deterministic order: slack arcs in edge
    // order, then dropped mass balances in node order.
    let mut pin_queue: Vec<usize> = (0..layout.n_press).collect();
    pin_queue.reverse(); // pop() yields 0, 1, 2, ...

    let _ = design; // diameters are baked into layout.diam

    // Edge characteristic rows.
    for slot in 0..layout.n_e {
        let row = slot;
        let e = layout.active_edges[slot];
        let edge = &network.edges[e];
        let (tn, hn) = layout.edge_ends(network, slot);
        let q = x[layout.iq(slot)];
        match layout.class[slot] {
            EdgeClass::Pipe { .. } => {
                let drop = pipe_drop_smooth(q, layout.diam[slot], layout.length[slot], p);
                r[row] = (x[layout.ip(tn)] - x[layout.ip(hn)] - drop.value) / layout.p_scale;
                push(&mut t, row, layout.ip(tn), 1.0 / layout.p_scale);
                push(&mut t, row, layout.ip(hn), -1.0 / layout.p_scale);
                push(&mut t, row, layout.iq(slot), -drop.d_q / layout.p_scale);
            }
            EdgeClass::HeatingSystem => {
                let spec = &network.consumers[&edge.id];
                let demand = spec.demand * options.demand_scale;
                let exponent = if options.linear_radiator { 1.0 } else { spec.heater_exp };
                let th_f = x[layout.ith(tn)];
                let tx = x[layout.itx(slot)];
                let (q_t, dq_t) = valve_target_heat_raw(
                    th_f,
                    demand,
                    spec.heater_coef,
                    exponent,
                    spec.theta_house,
                );
                let scale = demand.max(100.0);
                r[row] = (p.rho * p.c_p * q * (th_f - tx) - q_t) / scale;
                push(&mut t, row, layout.iq(slot), p.rho * p.c_p * (th_f - tx) / scale);
                push(&mut t, row, layout.ith(tn), (p.rho * p.c_p * q - dq_t) / scale);
                push(&mut t, row, layout.itx(slot), -p.rho * p.c_p * q / scale);
            }
            EdgeClass::ProducerArc { producer, slack } => {
                if slack {
                    let pin = layout.pin_node[pin_queue.pop().expect("pin queue exhausted")];
                    r[row] = x[layout.ip(pin)] / layout.p_scale;
                    push(&mut t, row, layout.ip(pin), 1.0 / layout.p_scale);
                } else {
                    r[row] = (q - design.inflows[producer]) / layout.q_scale;
                    push(&mut t, row, layout.iq(slot), 1.0 / layout.q_scale);
                }
            }
        }
    }

    // Mass balances (or pins at dropped slots).
    let dropped: Vec<usize> = layout.drop_node.clone();
    for node in 0..layout.n_n {
        let row = layout.n_e + node;
        if dropped.contains(&node) {
            let pin = layout.pin_node[pin_queue.pop().expect("pin queue exhausted")];
            r[row] = x[layout.ip(pin)] / layout.p_scale;
            push(&mut t, row, layout.ip(pin), 1.0 / layout.p_scale);
        }
        // Accumulation happens edge-wise below for non-dropped rows.
    }
    if !pin_queue.is_empty() {
        return Err(HeatNetError::Indeterminate("unassigned pressure pins".into()));
    }
    for slot in 0..layout.n_e {
        let (tn, hn) = layout.edge_ends(network, slot);
        let q = x[layout.iq(slot)];
        if !dropped.contains(&hn) {
            let row = layout.n_e + hn;
            r[row] += q / layout.q_scale;
            push(&mut t, row, layout.iq(slot), 1.0 / layout.q_scale);
        }
        if !dropped.contains(&tn) {
            let row = layout.n_e + tn;
            r[row] -= q / layout.q_scale;
            push(&mut t, row, layout.iq(slot), -1.0 / layout.q_scale);
        }
    }

    // Mixing rows: theta_n = sum(w theta_exit)/sum(w) over inflows.
    {
        struct MixTerm {
            edge: usize,
            w: f64,
            dw: f64,
        }
        let mut terms: Vec<Vec<MixTerm>> = (0..layout.n_n).map(|_| Vec::new()).collect();
        for slot in 0..layout.n_e {
            let (tn, hn) = layout.edge_ends(network, slot);
            let q = x[layout.iq(slot)];
            let (w_head, w_tail, dw_head, dw_tail, _, _) = directed_weights(q);
            terms[hn].push(MixTerm { edge: slot, w: w_head, dw: dw_head });
            terms[tn].push(MixTerm { edge: slot, w: w_tail, dw: dw_tail });
        }
        for node in 0..layout.n_n {
            let row = layout.n_e + layout.n_n + node;
            let list = &terms[node];
            let w_sum: f64 = list.iter().map(|m| m.w).sum();
            let s_sum: f64 = list.iter().map(|m| m.w * x[layout.itx(m.edge)]).sum();
            let mix = s_sum / w_sum;
            r[row] = (x[layout.ith(node)] - mix) / layout.th_scale;
            push(&mut t, row, layout.ith(node), 1.0 / layout.th_scale);
            for m in list {
                let tx = x[layout.itx(m.edge)];
                push(&mut t, row, layout.itx(m.edge), -(m.w / w_sum) / layout.th_scale);
                let sens = ((tx - mix) / w_sum).clamp(-UPWIND_SENS_CAP, UPWIND_SENS_CAP);
                push(&mut t, row, layout.iq(m.edge), -(m.dw * sens) / layout.th_scale);
            }
        }
    }

    // Exit-temperature rows.
    for slot in 0..layout.n_e {
        let row = layout.n_e + 2 * layout.n_n + slot;
        let e = layout.active_edges[slot];
        let edge = &network.edges[e];
        let (tn, hn) = layout.edge_ends(network, slot);
        let q = x[layout.iq(slot)];
        let tx = x[layout.itx(slot)];
        match layout.class[slot] {
            EdgeClass::Pipe { .. } => {
                let (w_head, w_tail, dw_head, dw_tail, aq, daq) = directed_weights(q);
                let th_t = x[layout.ith(tn)];
                let th_h = x[layout.ith(hn)];
                // Upwind-blended inlet temperature.
                let blend = (w_head * th_t + w_tail * th_h) / aq;
                let dblend_dq = (((dw_head * th_t + dw_tail * th_h) * aq
                    - (w_head * th_t + w_tail * th_h) * daq)
                    / (aq * aq))
                    .clamp(-UPWIND_SENS_CAP, UPWIND_SENS_CAP);
                let decay = pipe_decay_smooth(q, layout.diam[slot], layout.length[slot], p)?;
                r[row] = (tx - blend * decay.value) / layout.th_scale;
                push(&mut t, row, layout.itx(slot), 1.0 / layout.th_scale);
                push(&mut t, row, layout.ith(tn), -(w_head / aq) * decay.value / layout.th_scale);
                push(&mut t, row, layout.ith(hn), -(w_tail / aq) * decay.value / layout.th_scale);
                push(
                    &mut t,
                    row,
                    layout.iq(slot),
                    -(dblend_dq * decay.value + blend * decay.d_q) / layout.th_scale,
                );
            }
            EdgeClass::HeatingSystem => {
                let spec = &network.consumers[&edge.id];
                let demand = spec.demand * options.demand_scale;
                let exponent = if options.linear_radiator { 1.0 } else { spec.heater_exp };
                let th_f = x[layout.ith(tn)];
                let (q_t, dq_t) = valve_target_heat_raw(
                    th_f,
                    demand,
                    spec.heater_coef,
                    exponent,
                    spec.theta_house,
                );
                let scale = demand.max(100.0);
                let (lm, dlm_da, dlm_db) =
                    crate::sim::physics::lmtd_smooth(th_f - spec.theta_house, tx - spec.theta_house);
                let pow = lm.powf(exponent - 1.0);
                let heat = spec.heater_coef * pow * lm;
                let dheat = spec.heater_coef * exponent * pow;
                r[row] = (heat - q_t) / scale;
                push(&mut t, row, layout.ith(tn), (dheat * dlm_da - dq_t) / scale);
                push(&mut t, row, layout.itx(slot), dheat * dlm_db / scale);
            }
            EdgeClass::ProducerArc { producer, .. } => {
                let arc_edge = network.producer_arcs[producer];
                let spec = &network.producers[&network.edges[arc_edge].id];
                r[row] = (tx - spec.injection_temp) / layout.th_scale;
                push(&mut t, row, layout.itx(slot), 1.0 / layout.th_scale);
            }
        }
    }

    Ok(Assembled { residual: r, triplets: t })
}

/// Partial derivatives of the scaled residuals with respect to the design
/// variables, as triplets (row, design column). Columns: pipe-pair diameters
/// first, producer inflows after.
pub(crate) fn design_jacobian(
    network: &Network,
    layout: &SimLayout,
    _design: &DesignVector,
    x: &[f64],
) -> Vec<Triplet<usize, usize, f64>> {
    let p = &network.params;
    let n_pairs = network.n_pipe_pairs();
    let mut t = Vec::new();
    for slot in 0..layout.n_e {
        let q = x[layout.iq(slot)];
        match layout.class[slot] {
            EdgeClass::Pipe { pair } => {
                if layout.diam_floored[slot] {
                    continue; // clamped at the evaluation floor: no sensitivity
                }
                let drop = pipe_drop_smooth(q, layout.diam[slot], layout.length[slot], p);
                t.push(Triplet::new(slot, pair, -drop.d_d / layout.p_scale));
                let (tn, hn) = layout.edge_ends(network, slot);
                let (w_head, w_tail, _, _, aq, _) = directed_weights(q);
                let blend = (w_head * x[layout.ith(tn)] + w_tail * x[layout.ith(hn)]) / aq;
                let decay =
                    pipe_decay_smooth(q, layout.diam[slot], layout.length[slot], p).expect("diam validated");
                let row = layout.n_e + 2 * layout.n_n + slot;
                t.push(Triplet::new(row, pair, -blend * decay.d_d / layout.th_scale));
            }
            EdgeClass::ProducerArc { producer, slack } => {
                if !slack {
                    t.push(Triplet::new(slot, n_pairs + producer, -1.0 / layout.q_scale));
                }
            }
            EdgeClass::HeatingSystem => {}
        }
    }
    t
}

#[derive(Debug, Clone)]
pub(crate) struct ShiftPlan {
    /// Pressure offset added to every node of the component.
    pub shift: f64,
    /// Active node slots of the component.
    pub nodes: Vec<usize>,
    /// Heating-system slot that realizes the minimum differential.
    pub critical_hs: Option<usize>,
}

/// Feed-side pressure offsets: after the raw solve (reference pins at zero),
/// each pressure component containing demand-positive consumer feed nodes is
/// shifted so the tightest consumer sees `HS_DP_TARGET` across its heat
/// exchanger.
pub(crate) fn pressure_shifts(
    network: &Network,
    layout: &SimLayout,
    x: &[f64],
) -> Vec<ShiftPlan> {
    let mut plans = Vec::with_capacity(layout.n_press);
    for comp in 0..layout.n_press {
        let nodes: Vec<usize> = (0..layout.n_n).filter(|&n| layout.press_comp[n] == comp).collect();
        let hs_list = &layout.hs_by_press_comp[comp];
        if hs_list.is_empty() {
            plans.push(ShiftPlan { shift: 0.0, nodes, critical_hs: None });
            continue;
        }
        let mut min_dp = f64::INFINITY;
        let mut critical = hs_list[0];
        for &slot in hs_list {
            let (tn, hn) = layout.edge_ends(network, slot);
            let dp = x[layout.ip(tn)] - x[layout.ip(hn)];
            if dp < min_dp {
                min_dp = dp;
                critical = slot;
            }
        }
        plans.push(ShiftPlan {
            shift: HS_DP_TARGET - min_dp,
            nodes,
            critical_hs: Some(critical),
        });
    }
    plans
}
