//! Synthetic desk-scale grids: a jittered street lattice with radial circuits
//! grown outward from substations.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{CircuitDocument, CircuitId, GridDocument, NodeId, NodeKind, RoadNodeId};
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub circuits: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    /// Lattice side length in road nodes.
    pub lattice: usize,
    /// Travel minutes per lattice edge before jitter.
    pub block_minutes: f64,
    pub min_customers: u32,
    pub max_customers: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            circuits: 10,
            min_segments: 6,
            max_segments: 10,
            lattice: 12,
            block_minutes: 4.0,
            min_customers: 20,
            max_customers: 250,
        }
    }
}

pub fn synth_grid(params: &SynthParams, seed: u64) -> GridDocument {
    let mut rng = seeds::rng(seed);
    let side = params.lattice.max(2);
    let idx = |x: usize, y: usize| (y * side + x) as u32;
    let mut road_nodes = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            road_nodes.push((RoadNodeId(idx(x, y)), x as f64, y as f64));
        }
    }
    let mut road_edges = Vec::new();
    for y in 0..side {
        for x in 0..side {
            let jitter = |r: &mut rand_chacha::ChaCha8Rng| (params.block_minutes * r.gen_range(0.75..1.5)).round().max(1.0);
            if x + 1 < side {
                road_edges.push((RoadNodeId(idx(x, y)), RoadNodeId(idx(x + 1, y)), jitter(&mut rng)));
            }
            if y + 1 < side {
                road_edges.push((RoadNodeId(idx(x, y)), RoadNodeId(idx(x, y + 1)), jitter(&mut rng)));
            }
        }
    }
    let depot = RoadNodeId(idx(side / 2, side / 2));

    let neighbours = |p: (usize, usize)| {
        let (x, y) = (p.0 as i64, p.1 as i64);
        [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
            .into_iter()
            .filter(|&(a, b)| a >= 0 && b >= 0 && (a as usize) < side && (b as usize) < side)
            .map(|(a, b)| (a as usize, b as usize))
            .collect::<Vec<_>>()
    };

    let mut circuits = Vec::with_capacity(params.circuits);
    let mut next_id = 1u32;
    for c in 0..params.circuits {
        let mut nodes = Vec::new();
        let sub_at = (rng.gen_range(0..side), rng.gen_range(0..side));
        let sub = NodeId(next_id);
        next_id += 1;
        nodes.push((sub, NodeKind::Substation, 0, None, RoadNodeId(idx(sub_at.0, sub_at.1))));
        let segments = rng.gen_range(params.min_segments..=params.max_segments.max(params.min_segments));
        // (device id, position) of every segment head; the substation heads the first
        let mut heads = vec![(sub, sub_at)];
        for _ in 1..segments {
            let &(parent, at) = heads.choose(&mut rng).expect("substation head");
            let mut pos = at;
            for _ in 0..rng.gen_range(1..=2) {
                pos = *neighbours(pos).choose(&mut rng).expect("lattice has neighbours");
            }
            let dev = NodeId(next_id);
            next_id += 1;
            nodes.push((dev, NodeKind::ProtectiveDevice, 0, Some(parent), RoadNodeId(idx(pos.0, pos.1))));
            heads.push((dev, pos));
        }
        for &(head, at) in &heads {
            for _ in 0..rng.gen_range(1..=2) {
                let pos = *neighbours(at).choose(&mut rng).expect("lattice has neighbours");
                let customers = rng.gen_range(params.min_customers..=params.max_customers);
                nodes.push((
                    NodeId(next_id),
                    NodeKind::Transformer,
                    customers,
                    Some(head),
                    RoadNodeId(idx(pos.0, pos.1)),
                ));
                next_id += 1;
            }
        }
        circuits.push(CircuitDocument {
            id: CircuitId(c as u32),
            nodes,
        });
    }
    GridDocument {
        schema: 1,
        depot: Some(depot),
        road_nodes,
        road_edges,
        circuits,
    }
}
