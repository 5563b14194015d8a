use std::collections::HashMap;
use std::path::PathBuf;

use gridstorm::grid::{build_topology, CircuitDocument, GridDocument};
use gridstorm::{CircuitId, GridTopology, NodeId, NodeKind, RoadNodeId, SegmentId};

fn example_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/example_grid.json")
}

fn example() -> (GridTopology, GridDocument) {
    let path = example_path();
    let doc: GridDocument = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    (GridTopology::load(&path).unwrap(), doc)
}

/// Parent and kind of every node, straight from the document.
fn tree(doc: &GridDocument) -> HashMap<NodeId, (Option<NodeId>, NodeKind, CircuitId)> {
    doc.circuits
        .iter()
        .flat_map(|c| c.nodes.iter().map(move |n| (n.0, (n.3, n.1, c.id))))
        .collect()
}

fn walk_to_device(tree: &HashMap<NodeId, (Option<NodeId>, NodeKind, CircuitId)>, mut n: NodeId) -> NodeId {
    loop {
        let (parent, kind, _) = tree[&n];
        if matches!(kind, NodeKind::Substation | NodeKind::ProtectiveDevice) {
            return n;
        }
        n = parent.unwrap();
    }
}

#[test]
fn example_segment_count_matches_hand_count() {
    // circuit 0: substation {2}, device 3 {3,4,5}, device 6 {6,7}
    // circuit 1: device 11 {11,12}, device 13 {13,14}; the substation feeds no line itself
    // circuit 2: substation {21}, device 22 {22,23,27}, device 24 {24}, device 25 {25,26}
    let (g, _) = example();
    assert_eq!(g.num_segments(), 9);
    let per: Vec<usize> = g.circuits().iter().map(|c| c.segments.len()).collect();
    assert_eq!(per, vec![3, 2, 4]);
    let devices: Vec<u32> = g.segments().iter().map(|s| s.device.0).collect();
    assert_eq!(devices, vec![1, 3, 6, 11, 13, 20, 22, 24, 25]);
    let customers: Vec<u32> = g.segments().iter().map(|s| s.customers).collect();
    assert_eq!(customers, vec![10, 20, 5, 8, 6, 4, 3, 0, 9]);
    assert_eq!(g.total_customers(), 65);
}

#[test]
fn upstream_device_matches_parent_walk() {
    let (g, doc) = example();
    let t = tree(&doc);
    for (&n, &(_, _, c)) in &t {
        assert_eq!(g.upstream_device(c, n), Some(walk_to_device(&t, n)), "node {n}");
    }
    // deepest leaf: transformer 26 sits under devices 25, 24 and 22
    assert_eq!(g.upstream_device(CircuitId(2), NodeId(26)), Some(NodeId(25)));
}

#[test]
fn closure_matches_device_ancestry() {
    let (g, doc) = example();
    let t = tree(&doc);
    let is_under = |mut n: NodeId, top: NodeId| loop {
        if n == top {
            return true;
        }
        match t[&n].0 {
            Some(p) => n = p,
            None => return false,
        }
    };
    for s in g.segments() {
        let mut want: Vec<SegmentId> = g
            .segments()
            .iter()
            .filter(|o| o.circuit == s.circuit && is_under(o.device, s.device))
            .map(|o| o.id)
            .collect();
        want.sort();
        let mut got = g.outage_closure(s.id).to_vec();
        got.sort();
        assert_eq!(got, want, "segment {}", s.id);
        for &o in &got {
            assert!(g.outage_sources(o).contains(&s.id));
        }
    }
    let deep = g.segments().iter().find(|s| s.device == NodeId(25)).unwrap();
    let sources: Vec<u32> = g.outage_sources(deep.id).iter().map(|&k| g.segment(k).device.0).collect();
    assert_eq!(sources, vec![25, 24, 22, 20]);
}

#[test]
fn lines_partition_each_circuit() {
    let (g, _) = example();
    for c in g.circuits() {
        let mut from_segments: Vec<NodeId> = c.segment_ids().flat_map(|s| g.segment(s).lines.clone()).collect();
        from_segments.sort();
        let mut lines = c.lines.clone();
        lines.sort();
        assert_eq!(from_segments, lines);
    }
}

fn five_node_doc() -> GridDocument {
    let road_nodes = (0..5).map(|i| (RoadNodeId(i), i as f64, 0.0)).collect();
    let road_edges = vec![
        (RoadNodeId(0), RoadNodeId(1), 7.0),
        (RoadNodeId(0), RoadNodeId(2), 2.0),
        (RoadNodeId(2), RoadNodeId(1), 3.0),
        (RoadNodeId(1), RoadNodeId(3), 4.0),
        (RoadNodeId(2), RoadNodeId(3), 9.0),
        (RoadNodeId(3), RoadNodeId(4), 1.0),
        (RoadNodeId(2), RoadNodeId(4), 12.0),
        (RoadNodeId(0), RoadNodeId(4), 15.0),
        (RoadNodeId(1), RoadNodeId(3), 6.0),
    ];
    GridDocument {
        schema: 1,
        depot: None,
        road_nodes,
        road_edges,
        circuits: vec![CircuitDocument {
            id: CircuitId(0),
            nodes: vec![
                (NodeId(1), NodeKind::Substation, 0, None, RoadNodeId(0)),
                (NodeId(2), NodeKind::Transformer, 1, Some(NodeId(1)), RoadNodeId(4)),
            ],
        }],
    }
}

/// Minimum over every simple path, by depth-first enumeration.
fn all_paths_min(w: &[[f64; 5]; 5], at: usize, to: usize, seen: &mut [bool; 5], acc: f64) -> f64 {
    if at == to {
        return acc;
    }
    let mut best = f64::INFINITY;
    for next in 0..5 {
        if !seen[next] && w[at][next].is_finite() {
            seen[next] = true;
            best = best.min(all_paths_min(w, next, to, seen, acc + w[at][next]));
            seen[next] = false;
        }
    }
    best
}

#[test]
fn shortest_travel_matches_path_enumeration() {
    let doc = five_node_doc();
    let g = build_topology(&doc).unwrap();
    let mut w = [[f64::INFINITY; 5]; 5];
    for &(a, b, m) in &doc.road_edges {
        let (a, b) = (a.0 as usize, b.0 as usize);
        w[a][b] = w[a][b].min(m);
        w[b][a] = w[b][a].min(m);
    }
    for a in 0..5 {
        for b in 0..5 {
            let mut seen = [false; 5];
            seen[a] = true;
            let want = all_paths_min(&w, a, b, &mut seen, 0.0);
            let got = g.shortest_travel(RoadNodeId(a as u32), RoadNodeId(b as u32)).unwrap();
            assert_eq!(got, want, "{a} -> {b}");
        }
    }
    // parallel arcs 1-3 collapse to the cheaper one
    assert_eq!(g.shortest_travel(RoadNodeId(1), RoadNodeId(3)), Some(4.0));
    assert_eq!(g.shortest_travel(RoadNodeId(0), RoadNodeId(4)), Some(10.0));
}
