//! Design and state vectors.

use crate::error::{HeatNetError, Result};
use crate::network::Network;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DESIGN_SCHEMA: &str = "heatnet-design/1";

/// Design variables: one diameter per pipe pair (mirrored feed/return pipes
/// share a trench and a diameter) and one volumetric inflow per producer.
///
/// `diameters[k]` belongs to `network.pipe_pairs[k]`; a value of exactly zero
/// means the pair is removed from the topology. `inflows[i]` belongs to
/// `network.producer_arcs[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVector {
    pub diameters: Vec<f64>,
    pub inflows: Vec<f64>,
}

impl DesignVector {
    pub fn validate(&self, network: &Network) -> Result<()> {
        if self.diameters.len() != network.n_pipe_pairs()
            || self.inflows.len() != network.n_producers()
        {
            return Err(HeatNetError::DesignMismatch(format!(
                "expected {} diameters and {} inflows, got {} and {}",
                network.n_pipe_pairs(),
                network.n_producers(),
                self.diameters.len(),
                self.inflows.len()
            )));
        }
        for &d in &self.diameters {
            if !d.is_finite() || d < 0.0 || d > network.params.d_max {
                return Err(HeatNetError::DiameterBounds { value: d, max: network.params.d_max });
            }
        }
        for &g in &self.inflows {
            if !g.is_finite() || g < 0.0 {
                return Err(HeatNetError::DesignMismatch(format!(
                    "producer inflow must be nonnegative, got {g}"
                )));
            }
        }
        Ok(())
    }

    /// Diameter seen by a pipe edge (by edge index), 0.0 for removed pairs.
    pub fn diameter_of_edge(&self, network: &Network, edge_idx: usize) -> f64 {
        network
            .pair_of_pipe
            .get(&edge_idx)
            .map(|&slot| self.diameters[slot])
            .unwrap_or(0.0)
    }

    pub fn to_file(&self, network: &Network) -> DesignFile {
        let mut diameters = BTreeMap::new();
        for (slot, &(f, r)) in network.pipe_pairs.iter().enumerate() {
            diameters.insert(network.edges[f].id, self.diameters[slot]);
            diameters.insert(network.edges[r].id, self.diameters[slot]);
        }
        let mut inflows = BTreeMap::new();
        for (i, &arc) in network.producer_arcs.iter().enumerate() {
            inflows.insert(network.edges[arc].id, self.inflows[i]);
        }
        DesignFile { schema: DESIGN_SCHEMA.to_string(), diameters, inflows }
    }
}

/// On-disk design: per-edge diameters (mirrors must agree) and per-arc inflows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub schema: String,
    pub diameters: BTreeMap<u32, f64>,
    pub inflows: BTreeMap<u32, f64>,
}

impl DesignFile {
    pub fn to_design(&self, network: &Network) -> Result<DesignVector> {
        if self.schema != DESIGN_SCHEMA {
            return Err(HeatNetError::InvalidParam {
                name: "schema",
                reason: format!("expected {DESIGN_SCHEMA}, got {}", self.schema),
            });
        }
        let mut diameters = Vec::with_capacity(network.n_pipe_pairs());
        for &(f, r) in &network.pipe_pairs {
            let (fid, rid) = (network.edges[f].id, network.edges[r].id);
            let df = *self.diameters.get(&fid).ok_or(HeatNetError::DesignMismatch(format!(
                "missing diameter for pipe edge {fid}"
            )))?;
            let dr = self.diameters.get(&rid).copied().unwrap_or(df);
            if (df - dr).abs() > 1e-12 * df.abs().max(1.0) {
                return Err(HeatNetError::DesignMismatch(format!(
                    "mirrored pipes {fid}/{rid} carry different diameters"
                )));
            }
            diameters.push(df);
        }
        let mut inflows = Vec::with_capacity(network.n_producers());
        for &arc in &network.producer_arcs {
            let id = network.edges[arc].id;
            inflows.push(self.inflows.get(&id).copied().unwrap_or(0.0));
        }
        let design = DesignVector { diameters, inflows };
        design.validate(network)?;
        Ok(design)
    }

    pub fn load(path: &std::path::Path) -> Result<DesignFile> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Uniform starting design: every pipe pair at diameter `d0`, producer
/// inflows set to the nominal total flow split equally across producers.
pub fn uniform_design(network: &Network, d0: f64) -> Result<DesignVector> {
    if !(d0 > 0.0) || d0 > network.params.d_max {
        return Err(HeatNetError::DiameterBounds { value: d0, max: network.params.d_max });
    }
    let n_prod = network.n_producers().max(1);
    let share = network.nominal_flow() / n_prod as f64;
    Ok(DesignVector {
        diameters: vec![d0; network.n_pipe_pairs()],
        inflows: vec![share; network.n_producers()],
    })
}

/// Physical state of a solved network.
///
/// Entries are aligned with `network.edges` / `network.nodes`; removed or
/// pruned elements hold zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    /// Volumetric flow per edge, m^3/s (positive along tail -> head).
    pub flow: Vec<f64>,
    /// Gauge pressure per node, Pa.
    pub pressure: Vec<f64>,
    /// Temperature above ambient per node, K.
    pub theta_node: Vec<f64>,
    /// Exit temperature above ambient per edge, K.
    pub theta_exit: Vec<f64>,
}

impl StateVector {
    pub fn zeros(network: &Network) -> StateVector {
        StateVector {
            flow: vec![0.0; network.edges.len()],
            pressure: vec![0.0; network.nodes.len()],
            theta_node: vec![0.0; network.nodes.len()],
            theta_exit: vec![0.0; network.edges.len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::testutil::toy_network;

    #[test]
    fn uniform_design_sets_all_diameters() {
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.05).unwrap();
        assert!(design.diameters.iter().all(|&d| d == 0.05));
    }

    #[test]
    fn uniform_design_splits_nominal_flow_equally() {
        // Two-producer variant is exercised in the simulator tests; here the
        // single producer carries the whole nominal flow.
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.05).unwrap();
        let expected = 15_000.0 / (975.0 * 4190.0 * 30.0);
        assert!((design.inflows[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn uniform_design_rejects_out_of_bounds() {
        let net = toy_network(15_000.0, 100.0);
        assert!(uniform_design(&net, -0.1).is_err());
        assert!(uniform_design(&net, 0.0).is_err());
        assert!(uniform_design(&net, 0.5).is_err());
    }

    #[test]
    fn design_file_round_trip() {
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.08).unwrap();
        let file = design.to_file(&net);
        let back = file.to_design(&net).unwrap();
        assert_eq!(design, back);
    }
}
