fn main() {
    use heatnet::design::uniform_design;
    // toy_network is test-only; rebuild the same 4-node loop inline.
    use heatnet::network::*;
    use std::collections::BTreeMap;
    let nodes = vec![
        Node { id: 0, kind: NodeKind::ProducerFeed, position: (0.0, 0.0) },
        Node { id: 1, kind: NodeKind::ProducerReturn, position: (0.0, 0.0) },
        Node { id: 2, kind: NodeKind::ConsumerFeed, position: (100.0, 0.0) },
        Node { id: 3, kind: NodeKind::ConsumerReturn, position: (100.0, 0.0) },
    ];
    let edges = vec![
        Edge { id: 0, tail: 0, head: 2, kind: EdgeKind::PipeFeed, length: Some(100.0), mirror: Some(1) },
        Edge { id: 1, tail: 3, head: 1, kind: EdgeKind::PipeReturn, length: Some(100.0), mirror: Some(0) },
        Edge { id: 2, tail: 2, head: 3, kind: EdgeKind::HeatingSystem, length: None, mirror: None },
        Edge { id: 3, tail: 1, head: 0, kind: EdgeKind::ProducerArcFeed, length: None, mirror: None },
    ];
    let mut consumers = BTreeMap::new();
    consumers.insert(2, ConsumerSpec { demand: 15000.0, heater_coef: 200.0, heater_exp: 1.2, theta_house: 10.0 });
    let mut producers = BTreeMap::new();
    producers.insert(3, ProducerSpec { injection_temp: 60.0, heat_capacity_price: 800.0, heat_unit_price: 0.06, electricity_price: 0.11 });
    let net = build_network("toy".into(), nodes, edges, consumers, producers, GlobalParams::default()).unwrap();
    let design = uniform_design(&net, 0.15).unwrap();
    let worst = heatnet::sim::debug_fd_jacobian(&net, &design, 10);
    println!("toy worst: {worst:.3e}");
}
