//! Radial grid topology over a road network.
//!
//! A grid document lists road nodes (with planar coordinates), weighted road
//! edges and one or more circuits. Each circuit is a tree of poles rooted at a
//! substation. Lines are implicit: every non-root node `i` is fed by line `i`
//! from its parent. Lines that share the same first upstream protective device
//! are aggregated into a [`Segment`], the unit the belief and the truck work on.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRID_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoadNodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircuitId(pub u32);

/// Dense segment index, contiguous per circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RoadNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CircuitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Substation,
    ProtectiveDevice,
    Transformer,
    Junction,
}

impl NodeKind {
    pub fn is_device(self) -> bool {
        matches!(self, NodeKind::Substation | NodeKind::ProtectiveDevice)
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("unsupported grid schema version {0} (expected {GRID_SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("malformed grid document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("reading grid file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("duplicate road node {0}")]
    DuplicateRoadNode(RoadNodeId),
    #[error("road edge ({0}, {1}) references an unknown road node")]
    UnknownRoadNode(RoadNodeId, RoadNodeId),
    #[error("road edge ({0}, {1}) has non-positive travel time {2}")]
    NonPositiveTravel(RoadNodeId, RoadNodeId, f64),
    #[error("road graph is disconnected: node {0} unreachable from depot")]
    DisconnectedRoads(RoadNodeId),
    #[error("depot {0} is not a road node")]
    UnknownDepot(RoadNodeId),
    #[error("grid has no road nodes")]
    NoRoadNodes,
    #[error("duplicate grid node {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate circuit {0}")]
    DuplicateCircuit(CircuitId),
    #[error("circuit {0} has no nodes")]
    EmptyCircuit(CircuitId),
    #[error("circuit {circuit}: node {node} has no parent but is not the single substation root")]
    BadRoot { circuit: CircuitId, node: NodeId },
    #[error("circuit {0} has no substation root")]
    MissingRoot(CircuitId),
    #[error("circuit {circuit}: orphan node {node} (parent {parent} not in circuit)")]
    Orphan {
        circuit: CircuitId,
        node: NodeId,
        parent: NodeId,
    },
    #[error("circuit {circuit}: cycle detected through node {node}")]
    Cycle { circuit: CircuitId, node: NodeId },
    #[error("node {node}: only transformers may carry customers ({customers} given)")]
    CustomersOnNonTransformer { node: NodeId, customers: u32 },
    #[error("node {node} maps to unknown road node {road}")]
    PoleOffRoad { node: NodeId, road: RoadNodeId },
}

/// On-disk grid description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDocument {
    pub schema: u32,
    /// Truck start location; defaults to the first road node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depot: Option<RoadNodeId>,
    /// `[id, x, y]`
    pub road_nodes: Vec<(RoadNodeId, f64, f64)>,
    /// `[i, j, minutes]`
    pub road_edges: Vec<(RoadNodeId, RoadNodeId, f64)>,
    pub circuits: Vec<CircuitDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircuitDocument {
    pub id: CircuitId,
    /// `[id, kind, customers, parent, road_node]`
    pub nodes: Vec<(NodeId, NodeKind, u32, Option<NodeId>, RoadNodeId)>,
}

#[derive(Debug, Clone)]
pub struct GridNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub customers: u32,
    pub parent: Option<NodeId>,
    pub road_node: RoadNodeId,
}

#[derive(Debug, Clone)]
pub struct Circuit {
    pub id: CircuitId,
    pub nodes: Vec<GridNode>,
    /// Line `i` feeds node `i`; one per non-root node.
    pub lines: Vec<NodeId>,
    pub protective_devices: Vec<NodeId>,
    pub substation: NodeId,
    /// Segment ids of this circuit, contiguous.
    pub segments: std::ops::Range<usize>,
    local: HashMap<NodeId, usize>,
    device_of: Vec<NodeId>,
}

impl Circuit {
    pub fn node(&self, id: NodeId) -> Option<&GridNode> {
        self.local.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.local.contains_key(&id)
    }

    pub fn segment_ids(&self) -> impl Iterator<Item = SegmentId> + '_ {
        self.segments.clone().map(SegmentId)
    }

    pub fn total_customers(&self) -> u64 {
        self.nodes.iter().map(|n| n.customers as u64).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub id: SegmentId,
    /// Index into [`GridTopology::circuits`].
    pub circuit: usize,
    pub device: NodeId,
    pub lines: Vec<NodeId>,
    pub customers: u32,
    pub road_node: RoadNodeId,
    pub parent: Option<SegmentId>,
    pub children: Vec<SegmentId>,
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub struct GridTopology {
    circuits: Vec<Circuit>,
    segments: Vec<Segment>,
    closure: Vec<Vec<SegmentId>>,
    sources: Vec<Vec<SegmentId>>,
    road_ids: Vec<RoadNodeId>,
    road_xy: Vec<(f64, f64)>,
    road_index: HashMap<RoadNodeId, usize>,
    road_edges: Vec<(RoadNodeId, RoadNodeId, f64)>,
    travel: Vec<f64>,
    depot: usize,
    segment_road: Vec<usize>,
    node_circuit: HashMap<NodeId, usize>,
}

/// Parses and validates a grid document.
pub fn build_topology(doc: &GridDocument) -> Result<GridTopology, GridError> {
    GridTopology::from_document(doc)
}

impl GridTopology {
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let doc: GridDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_document(doc: &GridDocument) -> Result<Self, GridError> {
        if doc.schema != GRID_SCHEMA_VERSION {
            return Err(GridError::UnsupportedSchema(doc.schema));
        }
        if doc.road_nodes.is_empty() {
            return Err(GridError::NoRoadNodes);
        }

        let mut road_index = HashMap::new();
        let mut road_ids = Vec::with_capacity(doc.road_nodes.len());
        let mut road_xy = Vec::with_capacity(doc.road_nodes.len());
        for &(id, x, y) in &doc.road_nodes {
            if road_index.insert(id, road_ids.len()).is_some() {
                return Err(GridError::DuplicateRoadNode(id));
            }
            road_ids.push(id);
            road_xy.push((x, y));
        }

        // Parallel arcs collapse to their minimum weight.
        let mut edge_min: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(a, b, minutes) in &doc.road_edges {
            let (Some(&ia), Some(&ib)) = (road_index.get(&a), road_index.get(&b)) else {
                return Err(GridError::UnknownRoadNode(a, b));
            };
            if !(minutes > 0.0) || !minutes.is_finite() {
                return Err(GridError::NonPositiveTravel(a, b, minutes));
            }
            let key = (ia.min(ib), ia.max(ib));
            let w = edge_min.entry(key).or_insert(minutes);
            *w = w.min(minutes);
        }

        let depot = match doc.depot {
            Some(d) => *road_index.get(&d).ok_or(GridError::UnknownDepot(d))?,
            None => 0,
        };

        let n = road_ids.len();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (&(a, b), &w) in &edge_min {
            if a != b {
                adj[a].push((b, w));
                adj[b].push((a, w));
            }
        }
        let mut travel = vec![f64::INFINITY; n * n];
        for src in 0..n {
            dijkstra(&adj, src, &mut travel[src * n..(src + 1) * n]);
        }
        if let Some(unreached) = (0..n).find(|&j| !travel[depot * n + j].is_finite()) {
            return Err(GridError::DisconnectedRoads(road_ids[unreached]));
        }

        let mut node_circuit = HashMap::new();
        let mut seen_circuits = HashSet::new();
        let mut circuits = Vec::with_capacity(doc.circuits.len());
        let mut segments: Vec<Segment> = Vec::new();
        for (ci, cdoc) in doc.circuits.iter().enumerate() {
            if !seen_circuits.insert(cdoc.id) {
                return Err(GridError::DuplicateCircuit(cdoc.id));
            }
            for &(id, ..) in &cdoc.nodes {
                if node_circuit.insert(id, ci).is_some() {
                    return Err(GridError::DuplicateNode(id));
                }
            }
            let circuit = build_circuit(cdoc, ci, &road_index, &mut segments)?;
            circuits.push(circuit);
        }

        let (closure, sources) = closures(&segments);
        let segment_road = segments.iter().map(|s| road_index[&s.road_node]).collect();
        let road_edges = edge_min
            .iter()
            .map(|(&(a, b), &w)| (road_ids[a], road_ids[b], w))
            .collect();

        Ok(Self {
            circuits,
            segments,
            closure,
            sources,
            road_ids,
            road_xy,
            road_index,
            road_edges,
            travel,
            depot,
            segment_road,
            node_circuit,
        })
    }

    pub fn circuits(&self) -> &[Circuit] {
        &self.circuits
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: SegmentId) -> &Segment {
        &self.segments[id.0]
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn circuit_by_id(&self, id: CircuitId) -> Option<&Circuit> {
        self.circuits.iter().find(|c| c.id == id)
    }

    pub fn circuit_of_node(&self, node: NodeId) -> Option<&Circuit> {
        self.node_circuit.get(&node).map(|&c| &self.circuits[c])
    }

    /// First upstream protective device of `node` (the node itself if it is a device).
    pub fn upstream_device(&self, circuit: CircuitId, node: NodeId) -> Option<NodeId> {
        let c = self.circuit_by_id(circuit)?;
        c.local.get(&node).map(|&i| c.device_of[i])
    }

    /// Segment that line `node` belongs to. `None` for circuit roots (no feeding line).
    pub fn segment_of_line(&self, node: NodeId) -> Option<SegmentId> {
        let c = self.circuit_of_node(node)?;
        let i = *c.local.get(&node)?;
        c.nodes[i].parent?;
        let device = c.device_of[i];
        c.segment_ids().find(|&s| self.segments[s.0].device == device)
    }

    /// Segments that lose power when `seg`'s device trips: `seg` plus every
    /// segment strictly downstream of it, in preorder.
    pub fn outage_closure(&self, seg: SegmentId) -> &[SegmentId] {
        &self.closure[seg.0]
    }

    /// Segments whose fault puts `seg` in outage (`seg` and its ancestors).
    pub fn outage_sources(&self, seg: SegmentId) -> &[SegmentId] {
        &self.sources[seg.0]
    }

    pub fn road_nodes(&self) -> &[RoadNodeId] {
        &self.road_ids
    }

    pub fn road_edges(&self) -> &[(RoadNodeId, RoadNodeId, f64)] {
        &self.road_edges
    }

    pub fn road_index(&self, id: RoadNodeId) -> Option<usize> {
        self.road_index.get(&id).copied()
    }

    pub fn road_position(&self, idx: usize) -> (f64, f64) {
        self.road_xy[idx]
    }

    pub fn depot(&self) -> usize {
        self.depot
    }

    pub fn segment_road(&self, seg: SegmentId) -> usize {
        self.segment_road[seg.0]
    }

    /// Shortest travel minutes between two road nodes, by id.
    pub fn shortest_travel(&self, a: RoadNodeId, b: RoadNodeId) -> Option<f64> {
        Some(self.travel_between(self.road_index(a)?, self.road_index(b)?))
    }

    /// Shortest travel minutes between two dense road indices.
    #[inline]
    pub fn travel_between(&self, a: usize, b: usize) -> f64 {
        self.travel[a * self.road_ids.len() + b]
    }

    pub fn total_customers(&self) -> u64 {
        self.segments.iter().map(|s| s.customers as u64).sum()
    }
}

fn build_circuit(
    cdoc: &CircuitDocument,
    ci: usize,
    road_index: &HashMap<RoadNodeId, usize>,
    segments: &mut Vec<Segment>,
) -> Result<Circuit, GridError> {
    let cid = cdoc.id;
    if cdoc.nodes.is_empty() {
        return Err(GridError::EmptyCircuit(cid));
    }
    let nodes: Vec<GridNode> = cdoc
        .nodes
        .iter()
        .map(|&(id, kind, customers, parent, road_node)| GridNode {
            id,
            kind,
            customers,
            parent,
            road_node,
        })
        .collect();
    let local: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();

    let mut root = None;
    for n in &nodes {
        if !road_index.contains_key(&n.road_node) {
            return Err(GridError::PoleOffRoad {
                node: n.id,
                road: n.road_node,
            });
        }
        if n.customers > 0 && n.kind != NodeKind::Transformer {
            return Err(GridError::CustomersOnNonTransformer {
                node: n.id,
                customers: n.customers,
            });
        }
        match n.parent {
            None => {
                if n.kind != NodeKind::Substation || root.is_some() {
                    return Err(GridError::BadRoot {
                        circuit: cid,
                        node: n.id,
                    });
                }
                root = Some(n.id);
            }
            Some(p) => {
                if !local.contains_key(&p) {
                    return Err(GridError::Orphan {
                        circuit: cid,
                        node: n.id,
                        parent: p,
                    });
                }
                if n.kind == NodeKind::Substation {
                    return Err(GridError::BadRoot {
                        circuit: cid,
                        node: n.id,
                    });
                }
            }
        }
    }
    let root = root.ok_or(GridError::MissingRoot(cid))?;

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        if let Some(p) = n.parent {
            children[local[&p]].push(i);
        }
    }
    for ch in &mut children {
        ch.sort_by_key(|&i| nodes[i].id);
    }

    // Preorder from the root; anything not reached sits on a parent cycle.
    let mut order = Vec::with_capacity(nodes.len());
    let mut stack = vec![local[&root]];
    while let Some(i) = stack.pop() {
        order.push(i);
        stack.extend(children[i].iter().rev());
    }
    if order.len() != nodes.len() {
        let reached: HashSet<usize> = order.iter().copied().collect();
        let bad = (0..nodes.len()).find(|i| !reached.contains(i)).unwrap();
        return Err(GridError::Cycle {
            circuit: cid,
            node: nodes[bad].id,
        });
    }

    let mut device_of = vec![root; nodes.len()];
    for &i in &order {
        let n = &nodes[i];
        device_of[i] = if n.kind.is_device() {
            n.id
        } else {
            device_of[local[&n.parent.unwrap()]]
        };
    }

    // Segments are created in device preorder so parents precede children and
    // every closure is a contiguous id range.
    let owners: HashSet<NodeId> = order
        .iter()
        .filter(|&&i| nodes[i].parent.is_some())
        .map(|&i| device_of[i])
        .collect();
    let first = segments.len();
    let mut seg_of_device: HashMap<NodeId, SegmentId> = HashMap::new();
    for &i in &order {
        let n = &nodes[i];
        if !n.kind.is_device() || !owners.contains(&n.id) {
            continue;
        }
        let mut parent = None;
        let mut p = n.parent;
        while let Some(pid) = p {
            let pd = device_of[local[&pid]];
            if let Some(&ps) = seg_of_device.get(&pd) {
                parent = Some(ps);
                break;
            }
            p = nodes[local[&pd]].parent;
        }
        let id = SegmentId(segments.len());
        let depth = parent.map_or(0, |ps: SegmentId| segments[ps.0].depth + 1);
        segments.push(Segment {
            id,
            circuit: ci,
            device: n.id,
            lines: Vec::new(),
            customers: 0,
            road_node: n.road_node,
            parent,
            children: Vec::new(),
            depth,
        });
        if let Some(ps) = parent {
            segments[ps.0].children.push(id);
        }
        seg_of_device.insert(n.id, id);
    }
    let mut lines = Vec::new();
    for &i in &order {
        let n = &nodes[i];
        if n.parent.is_none() {
            continue;
        }
        lines.push(n.id);
        let seg = &mut segments[seg_of_device[&device_of[i]].0];
        seg.lines.push(n.id);
        seg.customers += n.customers;
    }

    let protective_devices = order
        .iter()
        .filter(|&&i| nodes[i].kind.is_device())
        .map(|&i| nodes[i].id)
        .collect();

    Ok(Circuit {
        id: cid,
        nodes,
        lines,
        protective_devices,
        substation: root,
        segments: first..segments.len(),
        local,
        device_of,
    })
}

fn closures(segments: &[Segment]) -> (Vec<Vec<SegmentId>>, Vec<Vec<SegmentId>>) {
    let mut closure = Vec::with_capacity(segments.len());
    for s in segments {
        let mut out = Vec::new();
        let mut stack = vec![s.id];
        while let Some(x) = stack.pop() {
            out.push(x);
            stack.extend(segments[x.0].children.iter().rev());
        }
        closure.push(out);
    }
    let mut sources = Vec::with_capacity(segments.len());
    for s in segments {
        let mut up = vec![s.id];
        let mut p = s.parent;
        while let Some(x) = p {
            up.push(x);
            p = segments[x.0].parent;
        }
        sources.push(up);
    }
    (closure, sources)
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], src: usize, dist: &mut [f64]) {
    dist[src] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Frontier(0.0, src));
    while let Some(Frontier(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Frontier(nd, v));
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::chain_doc;
    use super::NodeKind::*;
    use super::*;

    #[test]
    fn smallest_grid_has_one_segment() {
        let doc = chain_doc(vec![vec![(1, Substation, 0, None), (2, Transformer, 10, Some(1))]]);
        let g = build_topology(&doc).unwrap();
        assert_eq!(g.circuits().len(), 1);
        assert_eq!(g.num_segments(), 1);
        assert_eq!(g.segment(SegmentId(0)).customers, 10);
        assert_eq!(g.segment(SegmentId(0)).device, NodeId(1));
    }

    #[test]
    fn device_chain_partitions_lines() {
        let doc = chain_doc(vec![vec![
            (1, Substation, 0, None),
            (2, ProtectiveDevice, 0, Some(1)),
            (3, ProtectiveDevice, 0, Some(2)),
            (4, Transformer, 5, Some(2)),
            (5, Transformer, 7, Some(3)),
        ]]);
        let g = build_topology(&doc).unwrap();
        assert_eq!(g.num_segments(), 2);
        let mut all: Vec<NodeId> = g.segments().iter().flat_map(|s| s.lines.clone()).collect();
        all.sort();
        let mut lines = g.circuits()[0].lines.clone();
        lines.sort();
        assert_eq!(all, lines);
        assert_eq!(g.segment(SegmentId(0)).device, NodeId(2));
        assert_eq!(g.segment(SegmentId(0)).customers, 5);
        assert_eq!(g.segment(SegmentId(1)).customers, 7);
        assert_eq!(g.segment(SegmentId(1)).parent, Some(SegmentId(0)));
        assert_eq!(g.outage_closure(SegmentId(0)), &[SegmentId(0), SegmentId(1)]);
        assert_eq!(g.outage_closure(SegmentId(1)), &[SegmentId(1)]);
        assert_eq!(g.outage_sources(SegmentId(1)), &[SegmentId(1), SegmentId(0)]);
    }

    #[test]
    fn upstream_device_rules() {
        let doc = chain_doc(vec![vec![
            (1, Substation, 0, None),
            (2, Transformer, 3, Some(1)),
            (3, ProtectiveDevice, 0, Some(1)),
            (4, Junction, 0, Some(3)),
            (5, Transformer, 4, Some(4)),
        ]]);
        let g = build_topology(&doc).unwrap();
        let c = CircuitId(0);
        assert_eq!(g.upstream_device(c, NodeId(3)), Some(NodeId(3)));
        assert_eq!(g.upstream_device(c, NodeId(2)), Some(NodeId(1)));
        assert_eq!(g.upstream_device(c, NodeId(5)), Some(NodeId(3)));
        assert_eq!(g.upstream_device(c, NodeId(9)), None);
        assert_eq!(g.segment_of_line(NodeId(1)), None);
    }

    #[test]
    fn root_segment_closure_covers_circuit() {
        let doc = chain_doc(vec![vec![
            (1, Substation, 0, None),
            (2, Transformer, 3, Some(1)),
            (3, ProtectiveDevice, 0, Some(1)),
            (4, Transformer, 4, Some(3)),
            (5, ProtectiveDevice, 0, Some(1)),
            (6, Transformer, 1, Some(5)),
        ]]);
        let g = build_topology(&doc).unwrap();
        assert_eq!(g.num_segments(), 3);
        let root = SegmentId(0);
        assert_eq!(g.segment(root).device, NodeId(1));
        assert_eq!(g.outage_closure(root).len(), 3);
        for s in g.segments() {
            if s.children.is_empty() {
                assert_eq!(g.outage_closure(s.id), &[s.id]);
            }
        }
    }

    #[test]
    fn validation_errors_name_the_offender() {
        let orphan = chain_doc(vec![vec![(1, Substation, 0, None), (2, Transformer, 1, Some(7))]]);
        assert!(matches!(
            build_topology(&orphan),
            Err(GridError::Orphan { node: NodeId(2), parent: NodeId(7), .. })
        ));

        let cycle = chain_doc(vec![vec![
            (1, Substation, 0, None),
            (2, Junction, 0, Some(3)),
            (3, Junction, 0, Some(2)),
        ]]);
        assert!(matches!(build_topology(&cycle), Err(GridError::Cycle { .. })));

        let mut bad_edge = chain_doc(vec![vec![(1, Substation, 0, None), (2, Transformer, 1, Some(1))]]);
        bad_edge.road_edges[0].2 = 0.0;
        assert!(matches!(
            build_topology(&bad_edge),
            Err(GridError::NonPositiveTravel(RoadNodeId(0), RoadNodeId(1), _))
        ));

        let mut split = chain_doc(vec![vec![(1, Substation, 0, None), (2, Transformer, 1, Some(1))]]);
        split.road_edges.clear();
        assert!(matches!(
            build_topology(&split),
            Err(GridError::DisconnectedRoads(RoadNodeId(1)))
        ));

        let customers = chain_doc(vec![vec![(1, Substation, 0, None), (2, Junction, 4, Some(1))]]);
        assert!(matches!(
            build_topology(&customers),
            Err(GridError::CustomersOnNonTransformer { node: NodeId(2), .. })
        ));

        let mut version = chain_doc(vec![vec![(1, Substation, 0, None)]]);
        version.schema = 2;
        assert!(matches!(build_topology(&version), Err(GridError::UnsupportedSchema(2))));
    }

    #[test]
    fn parallel_arcs_collapse_to_minimum() {
        let mut doc = chain_doc(vec![vec![(1, Substation, 0, None), (2, Transformer, 1, Some(1))]]);
        doc.road_edges.push((RoadNodeId(1), RoadNodeId(0), 0.25));
        let g = build_topology(&doc).unwrap();
        assert_eq!(g.shortest_travel(RoadNodeId(0), RoadNodeId(1)), Some(0.25));
        assert_eq!(g.shortest_travel(RoadNodeId(1), RoadNodeId(1)), Some(0.0));
    }

    #[test]
    fn document_round_trips_through_json() {
        let doc = chain_doc(vec![vec![(1, Substation, 0, None), (2, Transformer, 10, Some(1))]]);
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"transformer\""));
        let g = GridTopology::from_json(&text).unwrap();
        assert_eq!(g.total_customers(), 10);
    }
}
