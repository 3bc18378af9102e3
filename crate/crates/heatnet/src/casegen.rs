//! Deterministic benchmark case generators.
//!
//! Both families share one circular superstructure: four base junctions
//! around a center on spokes and a ring, plus angular segments added to the
//! outside. Every segment contributes one junction, two houses and exactly
//! five candidate pipe pairs (one radial, two house stubs, two ring arcs),
//! so the candidate-connection count follows n(s) = 5s + 13 with the eight
//! base pairs included. The single-producer family puts the plant at the
//! center; the two-producer family puts a high-temperature plant on the left
//! periphery, a low-temperature one on the right, and gives the top-right
//! quadrant modern low-temperature heating systems.

use crate::error::{HeatNetError, Result};
use crate::network::{
    CaseFile, ConsumerSpec, Edge, EdgeKind, GlobalParams, Node, NodeKind, ProducerSpec,
    CASE_SCHEMA,
};
use std::collections::BTreeMap;

pub const SECTORS_PER_RING: u32 = 12;

#[derive(Debug, Clone)]
pub struct CircularCaseSpec {
    /// Number of added segments s; candidate pipe pairs = 5s + 13.
    pub segments: u32,
    pub producer: ProducerSpec,
    pub house_demand: f64,
    pub house_heater_coef: f64,
    pub house_heater_exp: f64,
    pub base_radius: f64,
    pub first_ring_radius: f64,
    pub ring_spacing: f64,
    pub params: GlobalParams,
}

impl Default for CircularCaseSpec {
    fn default() -> Self {
        CircularCaseSpec {
            segments: 0,
            // 70 C injection over a 10 C ambient.
            producer: ProducerSpec {
                injection_temp: 60.0,
                heat_capacity_price: 800.0,
                heat_unit_price: 0.06,
                electricity_price: 0.11,
            },
            house_demand: 15_000.0,
            house_heater_coef: 200.0,
            house_heater_exp: 1.2,
            base_radius: 50.0,
            first_ring_radius: 80.0,
            ring_spacing: 30.0,
            params: GlobalParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoProducerCaseSpec {
    /// Size selector: 1, 2 or 3 for n = 138, 298, 618 candidate pairs.
    pub size: u32,
    /// Left producer: high temperature, expensive heat.
    pub high: ProducerSpec,
    /// Right producer: low temperature, cheap heat.
    pub low: ProducerSpec,
    pub house_demand: f64,
    pub old_heater_coef: f64,
    pub modern_heater_coef: f64,
    pub house_heater_exp: f64,
    pub base_radius: f64,
    pub first_ring_radius: f64,
    pub ring_spacing: f64,
    pub params: GlobalParams,
}

impl Default for TwoProducerCaseSpec {
    fn default() -> Self {
        TwoProducerCaseSpec {
            size: 1,
            high: ProducerSpec {
                injection_temp: 60.0, // 70 C
                heat_capacity_price: 800.0,
                heat_unit_price: 0.08,
                electricity_price: 0.11,
            },
            low: ProducerSpec {
                injection_temp: 45.0, // 55 C
                heat_capacity_price: 0.0,
                heat_unit_price: 0.04,
                electricity_price: 0.11,
            },
            house_demand: 15_000.0,
            old_heater_coef: 200.0,
            modern_heater_coef: 500.0,
            house_heater_exp: 1.2,
            base_radius: 50.0,
            first_ring_radius: 80.0,
            ring_spacing: 30.0,
            params: GlobalParams::default(),
        }
    }
}

/// Segment count realizing each two-producer case size (n = 138, 298, 618).
pub fn two_producer_segments(size: u32) -> Result<u32> {
    match size {
        1 => Ok(25),
        2 => Ok(57),
        3 => Ok(121),
        other => Err(HeatNetError::UnsupportedSize(other)),
    }
}

/// Candidate pipe-pair count of the circular family.
pub fn candidate_pipe_count(segments: u32) -> u32 {
    5 * segments + 13
}

enum Placement {
    Center(ProducerSpec),
    LeftRight { high: ProducerSpec, low: ProducerSpec },
}

struct Builder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    consumers: BTreeMap<u32, ConsumerSpec>,
    producers: BTreeMap<u32, ProducerSpec>,
    next_node: u32,
    next_edge: u32,
}

impl Builder {
    fn new() -> Builder {
        Builder {
            nodes: Vec::new(),
            edges: Vec::new(),
            consumers: BTreeMap::new(),
            producers: BTreeMap::new(),
            next_node: 0,
            next_edge: 0,
        }
    }

    /// Emit a feed/return node pair at one position; returns (feed, return).
    fn node_pair(&mut self, kind_feed: NodeKind, kind_ret: NodeKind, position: (f64, f64)) -> (u32, u32) {
        let f = self.next_node;
        let r = self.next_node + 1;
        self.next_node += 2;
        self.nodes.push(Node { id: f, kind: kind_feed, position });
        self.nodes.push(Node { id: r, kind: kind_ret, position });
        (f, r)
    }

    /// Emit a mirrored pipe pair between two node pairs.
    fn pipe_pair(&mut self, a: (u32, u32), b: (u32, u32)) {
        let pa = self.position_of(a.0);
        let pb = self.position_of(b.0);
        let length = ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
        let feed = self.next_edge;
        let ret = self.next_edge + 1;
        self.next_edge += 2;
        self.edges.push(Edge {
            id: feed,
            tail: a.0,
            head: b.0,
            kind: EdgeKind::PipeFeed,
            length: Some(length),
            mirror: Some(ret),
        });
        self.edges.push(Edge {
            id: ret,
            tail: b.1,
            head: a.1,
            kind: EdgeKind::PipeReturn,
            length: Some(length),
            mirror: Some(feed),
        });
    }

    fn heating_system(&mut self, pair: (u32, u32), spec: ConsumerSpec) {
        let id = self.next_edge;
        self.next_edge += 1;
        self.edges.push(Edge {
            id,
            tail: pair.0,
            head: pair.1,
            kind: EdgeKind::HeatingSystem,
            length: None,
            mirror: None,
        });
        self.consumers.insert(id, spec);
    }

    fn producer_arc(&mut self, pair: (u32, u32), spec: ProducerSpec) {
        let id = self.next_edge;
        self.next_edge += 1;
        self.edges.push(Edge {
            id,
            tail: pair.1,
            head: pair.0,
            kind: EdgeKind::ProducerArcFeed,
            length: None,
            mirror: None,
        });
        self.producers.insert(id, spec);
    }

    fn position_of(&self, node: u32) -> (f64, f64) {
        self.nodes[node as usize].position
    }
}

fn polar(radius: f64, angle_deg: f64) -> (f64, f64) {
    let a = angle_deg.to_radians();
    let snap = |v: f64| if v.abs() < 1e-9 { 0.0 } else { v };
    (snap(radius * a.cos()), snap(radius * a.sin()))
}

#[allow(clippy::too_many_arguments)]
fn build_circular(
    name: String,
    segments: u32,
    placement: Placement,
    house_spec: impl Fn((f64, f64)) -> ConsumerSpec,
    base_radius: f64,
    first_ring_radius: f64,
    ring_spacing: f64,
    params: GlobalParams,
) -> CaseFile {
    let mut b = Builder::new();

    // Producer node ids are decided up front so kinds come out right.
    let n_segments = segments + 1; // segment 0 is part of the base case
    let full_rings = n_segments / SECTORS_PER_RING;
    let (left_seg, right_seg) = if full_rings >= 1 {
        let ring = full_rings - 1;
        (
            Some(ring * SECTORS_PER_RING + 6), // sector at 180 degrees
            Some(ring * SECTORS_PER_RING),     // sector at 0 degrees
        )
    } else {
        (None, None)
    };

    let center_is_producer = matches!(placement, Placement::Center(_));
    let center = b.node_pair(
        if center_is_producer { NodeKind::ProducerFeed } else { NodeKind::JunctionFeed },
        if center_is_producer { NodeKind::ProducerReturn } else { NodeKind::JunctionReturn },
        (0.0, 0.0),
    );

    let mut base_junctions = Vec::new();
    for i in 0..4 {
        let pos = polar(base_radius, 90.0 * i as f64);
        // Small cases without a complete outer ring host the peripheral
        // producers on the base ring instead.
        let is_left = !center_is_producer && left_seg.is_none() && i == 2;
        let is_right = !center_is_producer && right_seg.is_none() && i == 0;
        let kinds = if is_left || is_right {
            (NodeKind::ProducerFeed, NodeKind::ProducerReturn)
        } else {
            (NodeKind::JunctionFeed, NodeKind::JunctionReturn)
        };
        base_junctions.push(b.node_pair(kinds.0, kinds.1, pos));
    }

    struct Segment {
        junction: (u32, u32),
        house_a: (u32, u32),
        house_b: (u32, u32),
    }
    let mut segs: Vec<Segment> = Vec::new();
    for j in 0..n_segments {
        let ring = j / SECTORS_PER_RING;
        let sector = j % SECTORS_PER_RING;
        let radius = first_ring_radius + ring_spacing * ring as f64;
        let angle = 30.0 * sector as f64;
        let home_of_producer = Some(j) == left_seg || Some(j) == right_seg;
        let kinds = if home_of_producer {
            (NodeKind::ProducerFeed, NodeKind::ProducerReturn)
        } else {
            (NodeKind::JunctionFeed, NodeKind::JunctionReturn)
        };
        let junction = b.node_pair(kinds.0, kinds.1, polar(radius, angle));
        let house_a = b.node_pair(
            NodeKind::ConsumerFeed,
            NodeKind::ConsumerReturn,
            polar(radius, angle + 10.0),
        );
        let house_b = b.node_pair(
            NodeKind::ConsumerFeed,
            NodeKind::ConsumerReturn,
            polar(radius, angle - 10.0),
        );
        segs.push(Segment { junction, house_a, house_b });
    }

    // Base pipes: four spokes and the base ring.
    for i in 0..4 {
        b.pipe_pair(center, base_junctions[i]);
    }
    for i in 0..4 {
        b.pipe_pair(base_junctions[i], base_junctions[(i + 1) % 4]);
    }

    // Segment pipes: radial, two stubs, two arcs.
    for j in 0..n_segments as usize {
        let ring = j as u32 / SECTORS_PER_RING;
        let sector = j as u32 % SECTORS_PER_RING;
        let parent = if ring == 0 {
            let bj = ((sector as f64 * 30.0 + 45.0) / 90.0).floor() as usize % 4;
            base_junctions[bj]
        } else {
            segs[j - SECTORS_PER_RING as usize].junction
        };
        b.pipe_pair(segs[j].junction, parent);
        b.pipe_pair(segs[j].junction, segs[j].house_a);
        b.pipe_pair(segs[j].junction, segs[j].house_b);
        b.pipe_pair(segs[j].house_a, segs[j].house_b);
        if j == 0 {
            b.pipe_pair(segs[0].house_b, base_junctions[3]);
        } else {
            b.pipe_pair(segs[j].house_b, segs[j - 1].house_a);
        }
    }

    // Heating systems.
    for seg in &segs {
        for pair in [seg.house_a, seg.house_b] {
            let pos = b.position_of(pair.0);
            b.heating_system(pair, house_spec(pos));
        }
    }

    // Producer arcs.
    match placement {
        Placement::Center(spec) => b.producer_arc(center, spec),
        Placement::LeftRight { high, low } => {
            let left_pair = match left_seg {
                Some(j) => segs[j as usize].junction,
                None => base_junctions[2],
            };
            let right_pair = match right_seg {
                Some(j) => segs[j as usize].junction,
                None => base_junctions[0],
            };
            b.producer_arc(left_pair, high);
            b.producer_arc(right_pair, low);
        }
    }

    CaseFile {
        schema: CASE_SCHEMA.to_string(),
        name: Some(name),
        nodes: b.nodes,
        edges: b.edges,
        consumers: b.consumers,
        producers: b.producers,
        params,
    }
}

/// Single-producer circular case with `spec.segments` added segments.
pub fn gen_circular(spec: &CircularCaseSpec) -> CaseFile {
    let house = ConsumerSpec {
        demand: spec.house_demand,
        heater_coef: spec.house_heater_coef,
        heater_exp: spec.house_heater_exp,
        theta_house: 10.0,
    };
    build_circular(
        format!("circular-s{}", spec.segments),
        spec.segments,
        Placement::Center(spec.producer),
        move |_| house,
        spec.base_radius,
        spec.first_ring_radius,
        spec.ring_spacing,
        spec.params,
    )
}

/// Two-producer case: high-temperature plant on the left periphery, cheap
/// low-temperature plant on the right, modern houses in the top-right
/// quadrant only.
pub fn gen_two_producer(spec: &TwoProducerCaseSpec) -> Result<CaseFile> {
    let segments = two_producer_segments(spec.size)?;
    let demand = spec.house_demand;
    let exp = spec.house_heater_exp;
    let (old_coef, modern_coef) = (spec.old_heater_coef, spec.modern_heater_coef);
    let case = build_circular(
        format!("two-producer-n{}", candidate_pipe_count(segments)),
        segments,
        Placement::LeftRight { high: spec.high, low: spec.low },
        move |(x, y)| ConsumerSpec {
            demand,
            heater_coef: if x > 0.0 && y > 0.0 { modern_coef } else { old_coef },
            heater_exp: exp,
            theta_house: 10.0,
        },
        spec.base_radius,
        spec.first_ring_radius,
        spec.ring_spacing,
        spec.params,
    );
    Ok(case)
}

/// Is a consumer a modern (low-temperature) house in the two-producer case?
pub fn is_modern_house(case: &CaseFile, hs_edge_id: u32) -> bool {
    let spec = &case.consumers[&hs_edge_id];
    // Modern houses carry the larger heater coefficient.
    let max_coef = case.consumers.values().map(|c| c.heater_coef).fold(0.0f64, f64::max);
    let min_coef = case.consumers.values().map(|c| c.heater_coef).fold(f64::INFINITY, f64::min);
    max_coef > min_coef && spec.heater_coef == max_coef
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;

    #[test]
    fn candidate_count_follows_linear_law() {
        for s in [0u32, 1, 5, 10, 37, 90, 121, 190] {
            let case = gen_circular(&CircularCaseSpec { segments: s, ..Default::default() });
            let pairs = case
                .edges
                .iter()
                .filter(|e| e.kind == EdgeKind::PipeFeed)
                .count() as u32;
            assert_eq!(pairs, candidate_pipe_count(s), "s = {s}");
            assert_eq!(pairs, 5 * s + 13);
        }
    }

    #[test]
    fn every_size_up_to_190_matches_the_law() {
        for s in 0..=190u32 {
            let case = gen_circular(&CircularCaseSpec { segments: s, ..Default::default() });
            let pairs = case.edges.iter().filter(|e| e.kind == EdgeKind::PipeFeed).count() as u32;
            assert_eq!(pairs, 5 * s + 13, "s = {s}");
        }
    }

    #[test]
    fn generated_cases_validate_and_round_trip() {
        for s in [0u32, 3, 10] {
            let case = gen_circular(&CircularCaseSpec { segments: s, ..Default::default() });
            let json = case.to_json().unwrap();
            let back = CaseFile::from_json(&json).unwrap();
            assert_eq!(case, back);
            let net = Network::from_case_file(back).unwrap();
            assert_eq!(net.n_pipe_pairs() as u32, 5 * s + 13);
            assert_eq!(net.n_producers(), 1);
            assert_eq!(net.consumers.len(), 2 * (s as usize + 1));
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let a = gen_circular(&CircularCaseSpec { segments: 7, ..Default::default() })
            .to_json()
            .unwrap();
        let b = gen_circular(&CircularCaseSpec { segments: 7, ..Default::default() })
            .to_json()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_producer_sizes_hit_paper_counts() {
        for (size, n) in [(1u32, 138u32), (2, 298), (3, 618)] {
            let case = gen_two_producer(&TwoProducerCaseSpec { size, ..Default::default() }).unwrap();
            let pairs = case.edges.iter().filter(|e| e.kind == EdgeKind::PipeFeed).count() as u32;
            assert_eq!(pairs, n, "size = {size}");
            assert_eq!(case.producers.len(), 2);
            let net = Network::from_case_file(case).unwrap();
            assert_eq!(net.n_producers(), 2);
        }
        assert!(gen_two_producer(&TwoProducerCaseSpec { size: 4, ..Default::default() }).is_err());
    }

    #[test]
    fn modern_houses_only_in_top_right_quadrant() {
        let case = gen_two_producer(&TwoProducerCaseSpec { size: 1, ..Default::default() }).unwrap();
        let net = Network::from_case_file(case.clone()).unwrap();
        let mut saw_modern = false;
        let mut saw_old = false;
        for (&id, spec) in &case.consumers {
            let idx = net.edge_index(id).unwrap();
            let feed = net.node_index(net.edges[idx].tail).unwrap();
            let (x, y) = net.nodes[feed].position;
            if spec.heater_coef == 500.0 {
                saw_modern = true;
                assert!(x > 0.0 && y > 0.0, "modern house outside top-right at ({x}, {y})");
            } else {
                saw_old = true;
                assert!(!(x > 0.0 && y > 0.0), "old house inside top-right at ({x}, {y})");
            }
        }
        assert!(saw_modern && saw_old);
    }

    #[test]
    fn producers_sit_left_and_right() {
        let case = gen_two_producer(&TwoProducerCaseSpec { size: 1, ..Default::default() }).unwrap();
        let net = Network::from_case_file(case).unwrap();
        // Arc order follows edge ids: high producer first (left), low second.
        let mut arcs = net.producer_arcs.clone();
        arcs.sort_by_key(|&i| net.edges[i].id);
        let left_feed = net.node_index(net.edges[arcs[0]].head).unwrap();
        let right_feed = net.node_index(net.edges[arcs[1]].head).unwrap();
        assert!(net.nodes[left_feed].position.0 < 0.0);
        assert!(net.nodes[right_feed].position.0 > 0.0);
        assert_eq!(net.producers[&net.edges[arcs[0]].id].injection_temp, 60.0);
        assert_eq!(net.producers[&net.edges[arcs[1]].id].injection_temp, 45.0);
    }

    #[test]
    fn radiator_feed_temperature_thresholds_separate_house_classes() {
        // Invert the radiator characteristic at its saturation limit: the
        // minimum feasible feed temperature for demand Q is
        // theta_house + (Q / (0.9 xi))^(1/n). A 52 C feed must satisfy a
        // modern house; an old house must need at least ~60 C.
        let q = 15_000.0;
        let threshold = |coef: f64| {
            let mut lo = 10.0f64;
            let mut hi = 80.0f64;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let qmax = 0.9 * coef * (mid - 10.0).powf(1.2);
                if qmax >= q {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi) + 10.0 // back to absolute degrees C at T_inf = 10
        };
        let modern = threshold(500.0);
        let old = threshold(200.0);
        assert!(modern < 52.0, "modern threshold {modern} C");
        assert!((59.0..61.5).contains(&old), "old threshold {old} C");
    }
}
