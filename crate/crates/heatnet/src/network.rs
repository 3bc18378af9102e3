//! Network superstructure: the directed graph of candidate pipe routes,
//! heating systems and producer arcs, plus the global physical and economic
//! parameters.
//!
//! A district heating network is modeled as two mirrored node layers. Feed
//! nodes carry hot water from producers to consumers, return nodes carry the
//! cooled water back. Every candidate pipe exists as a feed/return pair of
//! equal length (`mirror` links the twins). A consumer is a feed/return node
//! pair joined by a `HeatingSystem` edge (the radiator plus its control
//! valve). A producer is a feed/return node pair joined by one
//! `ProducerArcFeed` edge running from the return node to the feed node; the
//! plant reheats the water along this arc and injects it at its fixed supply
//! temperature. `ProducerArcReturn` edges are accepted for completeness but
//! are modeled as closed stubs (they carry no flow).

use crate::error::{HeatNetError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const CASE_SCHEMA: &str = "heatnet-case/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    ProducerFeed,
    ProducerReturn,
    ConsumerFeed,
    ConsumerReturn,
    JunctionFeed,
    JunctionReturn,
}

impl NodeKind {
    pub fn is_feed_side(self) -> bool {
        matches!(
            self,
            NodeKind::ProducerFeed | NodeKind::ConsumerFeed | NodeKind::JunctionFeed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    PipeFeed,
    PipeReturn,
    HeatingSystem,
    ProducerArcFeed,
    ProducerArcReturn,
}

impl EdgeKind {
    pub fn is_pipe(self) -> bool {
        matches!(self, EdgeKind::PipeFeed | EdgeKind::PipeReturn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: u32,
    pub kind: NodeKind,
    /// Position in meters, shared by the feed/return twin (same trench).
    pub position: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: u32,
    pub tail: u32,
    pub head: u32,
    pub kind: EdgeKind,
    /// Trench length in meters; pipes only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    /// Id of the return twin (pipes only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mirror: Option<u32>,
}

/// Heating-system parameters of one consumer, keyed by its heating-system edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumerSpec {
    /// Heat demand, W.
    pub demand: f64,
    /// Radiator coefficient ξ, W/K^n.
    pub heater_coef: f64,
    /// Radiator exponent n.
    pub heater_exp: f64,
    /// Inside temperature above ambient, K.
    pub theta_house: f64,
}

/// Producer parameters, keyed by its producer-arc-feed edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProducerSpec {
    /// Injection temperature above ambient, K.
    pub injection_temp: f64,
    /// Heat capacity price, EUR/kW.
    pub heat_capacity_price: f64,
    /// Heat unit price, EUR/kWh.
    pub heat_unit_price: f64,
    /// Electricity price for pumping, EUR/kWh.
    pub electricity_price: f64,
}

/// Global physical and economic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    /// Water density, kg/m^3.
    pub rho: f64,
    /// Water specific heat, J/(kg K).
    pub c_p: f64,
    /// Dynamic viscosity, Pa s.
    pub mu_visc: f64,
    /// Ambient temperature, degrees C. Temperatures elsewhere are K above this.
    pub t_ambient: f64,
    /// Insulation conductivity, W/(m K).
    pub lambda_insul: f64,
    /// Ground conductivity, W/(m K).
    pub lambda_ground: f64,
    /// Insulation ratio (outer/inner diameter), dimensionless, > 1.
    pub insul_ratio: f64,
    /// Burial depth, m.
    pub pipe_depth: f64,
    /// Investment horizon, years.
    pub horizon_years: f64,
    /// Discount rate per year.
    pub discount_rate: f64,
    /// Energy inflation rate per year.
    pub inflation_rate: f64,
    /// Pipe cost slope p1, EUR/m^2.
    pub pipe_cost_linear: f64,
    /// Pipe cost intercept p0, EUR/m.
    pub pipe_cost_fixed: f64,
    /// Capacity factor F.
    pub capacity_factor: f64,
    /// Producer efficiency.
    pub producer_efficiency: f64,
    /// Pump efficiency.
    pub pump_efficiency: f64,
    /// Upper bound on pipe diameters, m.
    pub d_max: f64,
}

impl Default for GlobalParams {
    fn default() -> Self {
        GlobalParams {
            rho: 975.0,
            c_p: 4190.0,
            mu_visc: 4.0e-4,
            t_ambient: 10.0,
            lambda_insul: 0.03,
            lambda_ground: 1.4,
            insul_ratio: 1.4,
            pipe_depth: 0.4,
            horizon_years: 30.0,
            discount_rate: 0.04,
            inflation_rate: 0.04,
            pipe_cost_linear: 1976.3,
            pipe_cost_fixed: 301.4,
            capacity_factor: 0.33,
            producer_efficiency: 0.9,
            pump_efficiency: 0.7,
            d_max: 0.4,
        }
    }
}

impl GlobalParams {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, f64); 14] = [
            ("rho", self.rho),
            ("c_p", self.c_p),
            ("mu_visc", self.mu_visc),
            ("lambda_insul", self.lambda_insul),
            ("lambda_ground", self.lambda_ground),
            ("pipe_depth", self.pipe_depth),
            ("pipe_cost_linear", self.pipe_cost_linear),
            ("pipe_cost_fixed", self.pipe_cost_fixed),
            ("capacity_factor", self.capacity_factor),
            ("producer_efficiency", self.producer_efficiency),
            ("pump_efficiency", self.pump_efficiency),
            ("d_max", self.d_max),
            ("insul_ratio", self.insul_ratio),
            ("horizon_years", self.horizon_years.max(f64::MIN_POSITIVE)),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(HeatNetError::InvalidParam {
                    name,
                    reason: format!("must be strictly positive, got {v}"),
                });
            }
        }
        if self.insul_ratio <= 1.0 {
            return Err(HeatNetError::InvalidParam {
                name: "insul_ratio",
                reason: format!("must exceed 1, got {}", self.insul_ratio),
            });
        }
        if self.horizon_years < 0.0 || self.discount_rate < 0.0 || self.inflation_rate < 0.0 {
            return Err(HeatNetError::InvalidParam {
                name: "horizon_years/discount_rate/inflation_rate",
                reason: "must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

/// Serializable case file: the on-disk form of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub schema: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub name: Option<String>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub consumers: BTreeMap<u32, ConsumerSpec>,
    pub producers: BTreeMap<u32, ProducerSpec>,
    pub params: GlobalParams,
}

impl CaseFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<CaseFile> {
        let case: CaseFile = serde_json::from_str(text)?;
        if case.schema != CASE_SCHEMA {
            return Err(HeatNetError::InvalidParam {
                name: "schema",
                reason: format!("expected {CASE_SCHEMA}, got {}", case.schema),
            });
        }
        Ok(case)
    }

    pub fn load(path: &std::path::Path) -> Result<CaseFile> {
        CaseFile::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Validated, immutable superstructure with index maps for each edge set.
///
/// Construction checks id uniqueness, endpoint existence, mirror pairing
/// of feed/return pipes, and heating-system endpoints. After construction
/// the network is immutable and safe to share across concurrent solves.
#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub consumers: BTreeMap<u32, ConsumerSpec>,
    pub producers: BTreeMap<u32, ProducerSpec>,
    pub params: GlobalParams,

    node_pos: BTreeMap<u32, usize>,
    edge_pos: BTreeMap<u32, usize>,
    /// Indices of all pipe edges (feed and return).
    pub pipe_edges: Vec<usize>,
    /// Indices of heating-system edges.
    pub hs_edges: Vec<usize>,
    /// Indices of producer-arc-feed edges.
    pub producer_arcs: Vec<usize>,
    /// Indices of producer-arc-return stubs.
    pub producer_return_arcs: Vec<usize>,
    /// Mirror pipe pairs as (feed index, return index); one design diameter per pair.
    pub pipe_pairs: Vec<(usize, usize)>,
    /// For every pipe edge index, the pair slot it belongs to.
    pub pair_of_pipe: BTreeMap<usize, usize>,
}

impl Network {
    pub fn node_index(&self, id: u32) -> Option<usize> {
        self.node_pos.get(&id).copied()
    }

    pub fn edge_index(&self, id: u32) -> Option<usize> {
        self.edge_pos.get(&id).copied()
    }

    pub fn n_pipe_pairs(&self) -> usize {
        self.pipe_pairs.len()
    }

    pub fn n_producers(&self) -> usize {
        self.producer_arcs.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.consumers.values().map(|c| c.demand).sum()
    }

    /// Nominal total volumetric flow: total demand delivered over a 30 K spread.
    pub fn nominal_flow(&self) -> f64 {
        const NOMINAL_SPREAD: f64 = 30.0;
        self.total_demand() / (self.params.rho * self.params.c_p * NOMINAL_SPREAD)
    }

    pub fn to_case_file(&self) -> CaseFile {
        CaseFile {
            schema: CASE_SCHEMA.to_string(),
            name: Some(self.name.clone()),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            consumers: self.consumers.clone(),
            producers: self.producers.clone(),
            params: self.params,
        }
    }

    pub fn from_case_file(case: CaseFile) -> Result<Network> {
        build_network(
            case.name.unwrap_or_default(),
            case.nodes,
            case.edges,
            case.consumers,
            case.producers,
            case.params,
        )
    }
}

/// Build and validate a network superstructure.
pub fn build_network(
    name: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    consumers: BTreeMap<u32, ConsumerSpec>,
    producers: BTreeMap<u32, ProducerSpec>,
    params: GlobalParams,
) -> Result<Network> {
    params.validate()?;

    let mut node_pos = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if node_pos.insert(n.id, i).is_some() {
            return Err(HeatNetError::DuplicateId { kind: "node", id: n.id });
        }
        if !n.position.0.is_finite() || !n.position.1.is_finite() {
            return Err(HeatNetError::InvalidNode {
                node: n.id,
                reason: "non-finite position".into(),
            });
        }
    }
    let mut edge_pos = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        if edge_pos.insert(e.id, i).is_some() {
            return Err(HeatNetError::DuplicateId { kind: "edge", id: e.id });
        }
    }

    let mut pipe_edges = Vec::new();
    let mut hs_edges = Vec::new();
    let mut producer_arcs = Vec::new();
    let mut producer_return_arcs = Vec::new();

    for (i, e) in edges.iter().enumerate() {
        for endpoint in [e.tail, e.head] {
            if !node_pos.contains_key(&endpoint) {
                return Err(HeatNetError::DanglingNode { edge: e.id, node: endpoint });
            }
        }
        if e.tail == e.head {
            return Err(HeatNetError::InvalidEdge {
                edge: e.id,
                reason: "self loop".into(),
            });
        }
        let tail = &nodes[node_pos[&e.tail]];
        let head = &nodes[node_pos[&e.head]];
        match e.kind {
            EdgeKind::PipeFeed | EdgeKind::PipeReturn => {
                let len = e.length.ok_or_else(|| HeatNetError::InvalidEdge {
                    edge: e.id,
                    reason: "pipe without length".into(),
                })?;
                if !(len > 0.0) {
                    return Err(HeatNetError::InvalidEdge {
                        edge: e.id,
                        reason: format!("pipe length must be positive, got {len}"),
                    });
                }
                let feed_side = e.kind == EdgeKind::PipeFeed;
                if tail.kind.is_feed_side() != feed_side || head.kind.is_feed_side() != feed_side {
                    return Err(HeatNetError::InvalidEdge {
                        edge: e.id,
                        reason: "pipe connects nodes on the wrong side".into(),
                    });
                }
                pipe_edges.push(i);
            }
            EdgeKind::HeatingSystem => {
                if tail.kind != NodeKind::ConsumerFeed || head.kind != NodeKind::ConsumerReturn {
                    return Err(HeatNetError::HeatingSystemEndpoints { edge: e.id });
                }
                hs_edges.push(i);
            }
            EdgeKind::ProducerArcFeed => {
                if tail.kind != NodeKind::ProducerReturn || head.kind != NodeKind::ProducerFeed {
                    return Err(HeatNetError::InvalidEdge {
                        edge: e.id,
                        reason: "producer arc must run from producer-return to producer-feed".into(),
                    });
                }
                producer_arcs.push(i);
            }
            EdgeKind::ProducerArcReturn => {
                producer_return_arcs.push(i);
            }
        }
    }

    // Mirror pairing: every feed pipe names a return twin of equal length,
    // and the twin points back.
    let mut pipe_pairs = Vec::new();
    let mut pair_of_pipe = BTreeMap::new();
    for &i in &pipe_edges {
        let e = &edges[i];
        if e.kind != EdgeKind::PipeFeed {
            continue;
        }
        let mirror_id = e.mirror.ok_or(HeatNetError::MissingMirror { edge: e.id })?;
        let j = *edge_pos
            .get(&mirror_id)
            .ok_or(HeatNetError::MissingMirror { edge: e.id })?;
        let m = &edges[j];
        if m.kind != EdgeKind::PipeReturn {
            return Err(HeatNetError::MirrorMismatch {
                edge: e.id,
                reason: format!("mirror {} is not a return pipe", m.id),
            });
        }
        if m.mirror != Some(e.id) {
            return Err(HeatNetError::MirrorMismatch {
                edge: e.id,
                reason: format!("mirror {} does not point back", m.id),
            });
        }
        let (le, lm) = (e.length.unwrap(), m.length.unwrap());
        if (le - lm).abs() > 1e-9 * le.max(lm) {
            return Err(HeatNetError::MirrorMismatch {
                edge: e.id,
                reason: format!("lengths differ: {le} vs {lm}"),
            });
        }
        let slot = pipe_pairs.len();
        pipe_pairs.push((i, j));
        pair_of_pipe.insert(i, slot);
        pair_of_pipe.insert(j, slot);
    }
    // Every return pipe must have been claimed by exactly one feed pipe.
    for &i in &pipe_edges {
        let e = &edges[i];
        if e.kind == EdgeKind::PipeReturn && !pair_of_pipe.contains_key(&i) {
            return Err(HeatNetError::MissingMirror { edge: e.id });
        }
    }

    for id in consumers.keys() {
        let idx = edge_pos
            .get(id)
            .copied()
            .ok_or(HeatNetError::MissingSpec { kind: "consumer", edge: *id })?;
        if edges[idx].kind != EdgeKind::HeatingSystem {
            return Err(HeatNetError::InvalidEdge {
                edge: *id,
                reason: "consumer spec must key a heating-system edge".into(),
            });
        }
    }
    for &i in &hs_edges {
        let id = edges[i].id;
        let spec = consumers
            .get(&id)
            .ok_or(HeatNetError::MissingSpec { kind: "consumer", edge: id })?;
        if !(spec.demand >= 0.0) || !(spec.heater_coef > 0.0) || !(spec.heater_exp >= 1.0) {
            return Err(HeatNetError::InvalidEdge {
                edge: id,
                reason: format!(
                    "consumer spec out of range (demand {}, xi {}, n {})",
                    spec.demand, spec.heater_coef, spec.heater_exp
                ),
            });
        }
    }
    for &i in &producer_arcs {
        let id = edges[i].id;
        let spec = producers
            .get(&id)
            .ok_or(HeatNetError::MissingSpec { kind: "producer", edge: id })?;
        if !(spec.injection_temp > 0.0)
            || spec.heat_capacity_price < 0.0
            || spec.heat_unit_price < 0.0
            || spec.electricity_price < 0.0
        {
            return Err(HeatNetError::InvalidEdge {
                edge: id,
                reason: "producer spec out of range".into(),
            });
        }
    }

    Ok(Network {
        name,
        nodes,
        edges,
        consumers,
        producers,
        params,
        node_pos,
        edge_pos,
        pipe_edges,
        hs_edges,
        producer_arcs,
        producer_return_arcs,
        pipe_pairs,
        pair_of_pipe,
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Minimal valid network: one producer, one consumer, one pipe pair.
    ///
    /// Node ids: 0 producer-feed, 1 producer-return, 2 consumer-feed,
    /// 3 consumer-return. Edge ids: 0 feed pipe, 1 return pipe, 2 heating
    /// system, 3 producer arc.
    pub fn toy_network(demand: f64, length: f64) -> Network {
        toy_network_with(demand, length, 200.0, 1.2, 60.0)
    }

    pub fn toy_network_with(
        demand: f64,
        length: f64,
        heater_coef: f64,
        heater_exp: f64,
        injection_temp: f64,
    ) -> Network {
        let nodes = vec![
            Node { id: 0, kind: NodeKind::ProducerFeed, position: (0.0, 0.0) },
            Node { id: 1, kind: NodeKind::ProducerReturn, position: (0.0, 0.0) },
            Node { id: 2, kind: NodeKind::ConsumerFeed, position: (length, 0.0) },
            Node { id: 3, kind: NodeKind::ConsumerReturn, position: (length, 0.0) },
        ];
        let edges = vec![
            Edge { id: 0, tail: 0, head: 2, kind: EdgeKind::PipeFeed, length: Some(length), mirror: Some(1) },
            Edge { id: 1, tail: 3, head: 1, kind: EdgeKind::PipeReturn, length: Some(length), mirror: Some(0) },
            Edge { id: 2, tail: 2, head: 3, kind: EdgeKind::HeatingSystem, length: None, mirror: None },
            Edge { id: 3, tail: 1, head: 0, kind: EdgeKind::ProducerArcFeed, length: None, mirror: None },
        ];
        let mut consumers = BTreeMap::new();
        consumers.insert(
            2,
            ConsumerSpec { demand, heater_coef, heater_exp, theta_house: 10.0 },
        );
        let mut producers = BTreeMap::new();
        producers.insert(
            3,
            ProducerSpec {
                injection_temp,
                heat_capacity_price: 800.0,
                heat_unit_price: 0.06,
                electricity_price: 0.11,
            },
        );
        build_network("toy".into(), nodes, edges, consumers, producers, GlobalParams::default())
            .expect("toy network is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_network_builds_with_expected_sets() {
        let net = testutil::toy_network(15_000.0, 100.0);
        assert_eq!(net.pipe_edges.len(), 2);
        assert_eq!(net.hs_edges.len(), 1);
        assert_eq!(net.producer_arcs.len(), 1);
        assert_eq!(net.pipe_pairs.len(), 1);
    }

    #[test]
    fn dangling_node_rejected() {
        let net = testutil::toy_network(15_000.0, 100.0);
        let mut edges = net.edges.clone();
        edges[0].head = 99;
        let err = build_network(
            "bad".into(),
            net.nodes.clone(),
            edges,
            net.consumers.clone(),
            net.producers.clone(),
            net.params,
        )
        .unwrap_err();
        assert!(matches!(err, HeatNetError::DanglingNode { node: 99, .. }));
    }

    #[test]
    fn missing_mirror_rejected() {
        let net = testutil::toy_network(15_000.0, 100.0);
        let mut edges = net.edges.clone();
        edges[0].mirror = None;
        let err = build_network(
            "bad".into(),
            net.nodes.clone(),
            edges,
            net.consumers.clone(),
            net.producers.clone(),
            net.params,
        )
        .unwrap_err();
        assert!(matches!(err, HeatNetError::MissingMirror { edge: 0 }));
    }

    #[test]
    fn unequal_mirror_lengths_rejected() {
        let net = testutil::toy_network(15_000.0, 100.0);
        let mut edges = net.edges.clone();
        edges[1].length = Some(120.0);
        let err = build_network(
            "bad".into(),
            net.nodes.clone(),
            edges,
            net.consumers.clone(),
            net.producers.clone(),
            net.params,
        )
        .unwrap_err();
        assert!(matches!(err, HeatNetError::MirrorMismatch { .. }));
    }

    #[test]
    fn heating_system_must_join_consumer_pair() {
        let net = testutil::toy_network(15_000.0, 100.0);
        let mut edges = net.edges.clone();
        edges[2].tail = 0; // producer feed instead of consumer feed
        let err = build_network(
            "bad".into(),
            net.nodes.clone(),
            edges,
            net.consumers.clone(),
            net.producers.clone(),
            net.params,
        )
        .unwrap_err();
        assert!(matches!(err, HeatNetError::HeatingSystemEndpoints { edge: 2 }));
    }

    #[test]
    fn case_file_round_trip_identical() {
        let net = testutil::toy_network(15_000.0, 100.0);
        let case = net.to_case_file();
        let json = case.to_json().unwrap();
        let back = CaseFile::from_json(&json).unwrap();
        assert_eq!(case, back);
        // Re-serialization is byte-identical.
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn edge_set_partition_is_exhaustive() {
        let net = testutil::toy_network(15_000.0, 100.0);
        let counted = net.pipe_edges.len()
            + net.hs_edges.len()
            + net.producer_arcs.len()
            + net.producer_return_arcs.len();
        assert_eq!(counted, net.edges.len());
    }
}
