//! Metric graphs, points on them, the path metric, and the
//! decomposition/remapping combinatorics used by the gluing construction.
//!
//! A metric graph has a finite vertex set, internal edges of finite positive
//! length connecting two distinct vertices, and external edges (rays) of
//! infinite length attached to a single vertex. Points inside an edge are
//! addressed by the offset from the edge's initial vertex; edge endpoints are
//! always represented as `Vertex` points so equality is unambiguous.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a vertex within one [`MetricGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId(pub u32);

/// Index of an edge within one [`MetricGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub u32);

/// Identity of an auxiliary isolated point.
///
/// Aux points live outside every graph: per-vertex fake cemeteries are keyed
/// by the vertex *name* (names survive decomposition into subgraphs, indices
/// do not), and there is one shared global point used by the final
/// construction stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuxKey {
    VertexCemetery(String),
    Global,
}

impl fmt::Display for AuxKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuxKey::VertexCemetery(v) => write!(f, "box:{v}"),
            AuxKey::Global => write!(f, "box"),
        }
    }
}

/// A position in the extended state space: a vertex, a point strictly inside
/// an edge, the cemetery, or an isolated auxiliary point.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphPoint {
    Vertex(VertexId),
    EdgePoint { edge: EdgeId, x: f64 },
    Cemetery,
    Aux(AuxKey),
}

impl GraphPoint {
    pub fn is_aux(&self) -> bool {
        matches!(self, GraphPoint::Aux(_))
    }

    /// Total order used to keep jump-measure atoms canonically sorted.
    pub fn canonical_cmp(&self, other: &GraphPoint) -> Ordering {
        fn rank(p: &GraphPoint) -> u8 {
            match p {
                GraphPoint::Vertex(_) => 0,
                GraphPoint::EdgePoint { .. } => 1,
                GraphPoint::Cemetery => 2,
                GraphPoint::Aux(_) => 3,
            }
        }
        match (self, other) {
            (GraphPoint::Vertex(a), GraphPoint::Vertex(b)) => a.cmp(b),
            (GraphPoint::EdgePoint { edge: e, x }, GraphPoint::EdgePoint { edge: f, x: y }) => {
                e.cmp(f).then(x.total_cmp(y))
            }
            (GraphPoint::Cemetery, GraphPoint::Cemetery) => Ordering::Equal,
            (GraphPoint::Aux(a), GraphPoint::Aux(b)) => a.cmp(b),
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub name: String,
    /// Initial vertex (the edge coordinate is the offset from here).
    pub from: VertexId,
    /// Terminal vertex; `None` for external edges.
    pub to: Option<VertexId>,
    /// Finite positive length for internal edges, `f64::INFINITY` otherwise.
    pub length: f64,
}

impl Edge {
    pub fn is_external(&self) -> bool {
        self.to.is_none()
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("graph is invalid: {0}")]
    Invalid(ValidationReport),
    #[error("coordinate {x} outside the open interval (0, {len}) of edge `{edge}`")]
    CoordinateOutOfRange { edge: String, x: f64, len: f64 },
    #[error("both partition cells must be non-empty")]
    EmptyPartitionCell,
    #[error("point lies in the excrescent shadow region of edge `{0}`")]
    ExcrescentShadow(String),
    #[error("point does not belong to the requested subgraph")]
    OutsideSubgraph,
}

/// Plain-data description of a metric graph, as read from and written to the
/// configuration document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDescription {
    pub vertices: Vec<String>,
    #[serde(default)]
    pub internal_edges: Vec<InternalEdgeDescription>,
    #[serde(default)]
    pub external_edges: Vec<ExternalEdgeDescription>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalEdgeDescription {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEdgeDescription {
    pub id: String,
    pub from: String,
}

/// One structural defect found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    EmptyVertexSet,
    DuplicateId { id: String },
    Loop { edge: String },
    DanglingEndpoint { edge: String, vertex: String },
    NonPositiveLength { edge: String, length: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyVertexSet => write!(f, "empty vertex set"),
            Violation::DuplicateId { id } => write!(f, "duplicate id `{id}`"),
            Violation::Loop { edge } => write!(f, "loop: edge `{edge}` has equal endpoints"),
            Violation::DanglingEndpoint { edge, vertex } => {
                write!(f, "edge `{edge}` references undeclared vertex `{vertex}`")
            }
            Violation::NonPositiveLength { edge, length } => {
                write!(f, "edge `{edge}` has non-positive length {length}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            write!(f, "{}", msgs.join("; "))
        }
    }
}

/// Checks a graph description against the structural invariants: non-empty
/// vertex set, unique ids, declared endpoints, no loops, positive lengths.
pub fn validate_graph(desc: &GraphDescription) -> ValidationReport {
    let mut violations = Vec::new();
    if desc.vertices.is_empty() {
        violations.push(Violation::EmptyVertexSet);
    }
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for v in &desc.vertices {
        if seen.insert(v, ()).is_some() {
            violations.push(Violation::DuplicateId { id: v.clone() });
        }
    }
    let declared: HashMap<&str, ()> = desc.vertices.iter().map(|v| (v.as_str(), ())).collect();
    let mut edge_ids: HashMap<&str, ()> = HashMap::new();
    let check_endpoint = |edge: &str, vertex: &str, out: &mut Vec<Violation>| {
        if !declared.contains_key(vertex) {
            out.push(Violation::DanglingEndpoint {
                edge: edge.to_string(),
                vertex: vertex.to_string(),
            });
        }
    };
    for e in &desc.internal_edges {
        if edge_ids.insert(&e.id, ()).is_some() || declared.contains_key(e.id.as_str()) {
            violations.push(Violation::DuplicateId { id: e.id.clone() });
        }
        check_endpoint(&e.id, &e.from, &mut violations);
        check_endpoint(&e.id, &e.to, &mut violations);
        if e.from == e.to {
            violations.push(Violation::Loop { edge: e.id.clone() });
        }
        if !(e.length > 0.0) || !e.length.is_finite() {
            violations.push(Violation::NonPositiveLength {
                edge: e.id.clone(),
                length: e.length,
            });
        }
    }
    for e in &desc.external_edges {
        if edge_ids.insert(&e.id, ()).is_some() || declared.contains_key(e.id.as_str()) {
            violations.push(Violation::DuplicateId { id: e.id.clone() });
        }
        check_endpoint(&e.id, &e.from, &mut violations);
    }
    ValidationReport { violations }
}

/// A finite metric graph. Immutable after construction and safe to share
/// across concurrently running path workers.
#[derive(Debug, Clone)]
pub struct MetricGraph {
    vertices: Vec<String>,
    vertex_index: HashMap<String, VertexId>,
    edges: Vec<Edge>,
    edge_index: HashMap<String, EdgeId>,
    incident: Vec<Vec<EdgeId>>,
}

impl MetricGraph {
    /// Builds a graph from its description, rejecting invalid input.
    pub fn from_description(desc: &GraphDescription) -> Result<MetricGraph, GraphError> {
        let report = validate_graph(desc);
        if !report.is_ok() {
            return Err(GraphError::Invalid(report));
        }
        let vertices = desc.vertices.clone();
        let vertex_index: HashMap<String, VertexId> = vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), VertexId(i as u32)))
            .collect();
        let mut edges = Vec::new();
        for e in &desc.internal_edges {
            edges.push(Edge {
                name: e.id.clone(),
                from: vertex_index[&e.from],
                to: Some(vertex_index[&e.to]),
                length: e.length,
            });
        }
        for e in &desc.external_edges {
            edges.push(Edge {
                name: e.id.clone(),
                from: vertex_index[&e.from],
                to: None,
                length: f64::INFINITY,
            });
        }
        Ok(Self::assemble(vertices, vertex_index, edges))
    }

    fn assemble(
        vertices: Vec<String>,
        vertex_index: HashMap<String, VertexId>,
        edges: Vec<Edge>,
    ) -> MetricGraph {
        let edge_index: HashMap<String, EdgeId> = edges
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), EdgeId(i as u32)))
            .collect();
        let mut incident = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            incident[e.from.0 as usize].push(EdgeId(i as u32));
            if let Some(to) = e.to {
                incident[to.0 as usize].push(EdgeId(i as u32));
            }
        }
        MetricGraph {
            vertices,
            vertex_index,
            edges,
            edge_index,
            incident,
        }
    }

    pub fn description(&self) -> GraphDescription {
        GraphDescription {
            vertices: self.vertices.clone(),
            internal_edges: self
                .edges
                .iter()
                .filter(|e| !e.is_external())
                .map(|e| InternalEdgeDescription {
                    id: e.name.clone(),
                    from: self.vertices[e.from.0 as usize].clone(),
                    to: self.vertices[e.to.unwrap().0 as usize].clone(),
                    length: e.length,
                })
                .collect(),
            external_edges: self
                .edges
                .iter()
                .filter(|e| e.is_external())
                .map(|e| ExternalEdgeDescription {
                    id: e.name.clone(),
                    from: self.vertices[e.from.0 as usize].clone(),
                })
                .collect(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_ids(&self) -> impl Iterator<Item = VertexId> {
        (0..self.vertices.len() as u32).map(VertexId)
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.edges.len() as u32).map(EdgeId)
    }

    pub fn vertex_name(&self, v: VertexId) -> &str {
        &self.vertices[v.0 as usize]
    }

    pub fn vertex(&self, name: &str) -> Result<VertexId, GraphError> {
        self.vertex_index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownVertex(name.to_string()))
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0 as usize]
    }

    pub fn edge_by_name(&self, name: &str) -> Result<EdgeId, GraphError> {
        self.edge_index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownEdge(name.to_string()))
    }

    pub fn incident_edges(&self, v: VertexId) -> &[EdgeId] {
        &self.incident[v.0 as usize]
    }

    /// Shortest incident edge length at `v` (may be infinite if only external
    /// edges are attached).
    pub fn min_incident_length(&self, v: VertexId) -> f64 {
        self.incident[v.0 as usize]
            .iter()
            .map(|&e| self.edge(e).length)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(f64::INFINITY, f64::min)
    }

    /// Builds a canonical point on an edge, mapping the endpoints to their
    /// vertices and rejecting coordinates outside `[0, R]`.
    pub fn point_on_edge(&self, edge: EdgeId, x: f64) -> Result<GraphPoint, GraphError> {
        let e = self.edge(edge);
        if x == 0.0 {
            return Ok(GraphPoint::Vertex(e.from));
        }
        if x == e.length {
            // only reachable for internal edges (x finite)
            return Ok(GraphPoint::Vertex(e.to.unwrap()));
        }
        if x > 0.0 && x < e.length {
            Ok(GraphPoint::EdgePoint { edge, x })
        } else {
            Err(GraphError::CoordinateOutOfRange {
                edge: e.name.clone(),
                x,
                len: e.length,
            })
        }
    }

    /// Checks that a point is structurally valid for this graph.
    pub fn contains_point(&self, p: &GraphPoint) -> bool {
        match p {
            GraphPoint::Vertex(v) => (v.0 as usize) < self.vertices.len(),
            GraphPoint::EdgePoint { edge, x } => {
                (edge.0 as usize) < self.edges.len()
                    && *x > 0.0
                    && *x < self.edge(*edge).length
            }
            GraphPoint::Cemetery | GraphPoint::Aux(_) => true,
        }
    }

    /// Shortest-path distance between two points. Distinct connected
    /// components, the cemetery and aux points are at distance infinity from
    /// everything but themselves.
    pub fn distance(&self, a: &GraphPoint, b: &GraphPoint) -> f64 {
        if a == b {
            return 0.0;
        }
        if matches!(a, GraphPoint::Cemetery | GraphPoint::Aux(_))
            || matches!(b, GraphPoint::Cemetery | GraphPoint::Aux(_))
        {
            return f64::INFINITY;
        }
        // Direct same-edge route, if any.
        let mut best = match (a, b) {
            (GraphPoint::EdgePoint { edge: e, x }, GraphPoint::EdgePoint { edge: f, x: y })
                if e == f =>
            {
                (x - y).abs()
            }
            _ => f64::INFINITY,
        };
        // Dijkstra over vertices, seeded with the partial-edge offsets of `a`.
        let dist = self.vertex_distances(a);
        match b {
            GraphPoint::Vertex(w) => best = best.min(dist[w.0 as usize]),
            GraphPoint::EdgePoint { edge, x } => {
                let e = self.edge(*edge);
                best = best.min(dist[e.from.0 as usize] + x);
                if let Some(to) = e.to {
                    best = best.min(dist[to.0 as usize] + (e.length - x));
                }
            }
            _ => unreachable!(),
        }
        best
    }

    /// Distances from a point to every vertex (Dijkstra over internal edges).
    fn vertex_distances(&self, a: &GraphPoint) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.vertices.len()];
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
        let push = |dist: &mut Vec<f64>, heap: &mut BinaryHeap<HeapEntry>, v: VertexId, d: f64| {
            if d < dist[v.0 as usize] {
                dist[v.0 as usize] = d;
                heap.push(HeapEntry { d, v });
            }
        };
        match a {
            GraphPoint::Vertex(v) => push(&mut dist, &mut heap, *v, 0.0),
            GraphPoint::EdgePoint { edge, x } => {
                let e = self.edge(*edge);
                push(&mut dist, &mut heap, e.from, *x);
                if let Some(to) = e.to {
                    push(&mut dist, &mut heap, to, e.length - x);
                }
            }
            _ => return dist,
        }
        while let Some(HeapEntry { d, v }) = heap.pop() {
            if d > dist[v.0 as usize] {
                continue;
            }
            for &eid in self.incident_edges(v) {
                let e = self.edge(eid);
                if let Some(to) = e.to {
                    let other = if to == v { e.from } else { to };
                    push(&mut dist, &mut heap, other, d + e.length);
                }
            }
        }
        dist
    }

    pub fn format_point(&self, p: &GraphPoint) -> String {
        match p {
            GraphPoint::Vertex(v) => self.vertex_name(*v).to_string(),
            GraphPoint::EdgePoint { edge, x } => format!("({}, {x})", self.edge(*edge).name),
            GraphPoint::Cemetery => "cemetery".to_string(),
            GraphPoint::Aux(k) => k.to_string(),
        }
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    d: f64,
    v: VertexId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance
        other.d.total_cmp(&self.d).then(other.v.cmp(&self.v))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One of the two sides of a vertex partition, following the paper's
/// `j = -1, +1` convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Neg,
    Pos,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Neg, Side::Pos];

    pub fn idx(self) -> usize {
        match self {
            Side::Neg => 0,
            Side::Pos => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Neg => Side::Pos,
            Side::Pos => Side::Neg,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Side::Neg => "-1",
            Side::Pos => "+1",
        }
    }
}

/// How an edge of a subgraph relates to its parent graph.
#[derive(Debug, Clone)]
pub enum ParentEdge {
    /// The edge was carried over unchanged.
    Kept(EdgeId),
    /// A shadow edge replacing a crossing internal edge of the parent.
    Shadow {
        parent: EdgeId,
        /// True when the crossing edge's initial vertex lies on the *other*
        /// side, so the shadow coordinate runs opposite to the parent one.
        reversed: bool,
        /// Shadow length: the parent edge's length.
        cut: f64,
    },
}

/// One side of a decomposition: the subgraph together with the id maps
/// relating it to the parent graph.
#[derive(Debug, Clone)]
pub struct SidePart {
    pub graph: MetricGraph,
    vertex_to_parent: Vec<VertexId>,
    vertex_from_parent: HashMap<VertexId, VertexId>,
    pub edge_to_parent: Vec<ParentEdge>,
    edge_from_parent: HashMap<EdgeId, EdgeId>,
    /// Parent crossing edge id -> shadow edge id in this subgraph.
    pub shadow_by_parent: HashMap<EdgeId, EdgeId>,
}

/// A crossing edge `i` of the partition together with the side `j` owning its
/// initial vertex (`i` belongs to `I_s^j`).
#[derive(Debug, Clone, Copy)]
pub struct CrossingEdge {
    pub parent_edge: EdgeId,
    pub side: Side,
}

/// The result of splitting a metric graph along a vertex partition: the two
/// subgraphs with shadow edges, plus the bookkeeping needed to map points and
/// boundary data back and forth.
#[derive(Debug, Clone)]
pub struct SubgraphDecomposition {
    parts: [SidePart; 2],
    crossing: Vec<CrossingEdge>,
    vertex_side: Vec<Side>,
}

impl SubgraphDecomposition {
    pub fn part(&self, side: Side) -> &SidePart {
        &self.parts[side.idx()]
    }

    pub fn graph(&self, side: Side) -> &MetricGraph {
        &self.parts[side.idx()].graph
    }

    pub fn crossing_edges(&self) -> &[CrossingEdge] {
        &self.crossing
    }

    pub fn vertex_side(&self, v: VertexId) -> Side {
        self.vertex_side[v.0 as usize]
    }

    pub fn vertex_to_parent(&self, side: Side, v: VertexId) -> VertexId {
        self.parts[side.idx()].vertex_to_parent[v.0 as usize]
    }

    pub fn vertex_from_parent(&self, side: Side, v: VertexId) -> Option<VertexId> {
        self.parts[side.idx()].vertex_from_parent.get(&v).copied()
    }

    pub fn edge_from_parent(&self, side: Side, e: EdgeId) -> Option<EdgeId> {
        self.parts[side.idx()].edge_from_parent.get(&e).copied()
    }

    /// The vertex at which the companion process is revived when the side-`j`
    /// process dies on crossing edge `i`: the far endpoint of `i` as seen from
    /// side `j`.
    pub fn transfer_vertex(&self, parent_edge: EdgeId, dying_side: Side, parent: &MetricGraph) -> VertexId {
        let cross = self
            .crossing
            .iter()
            .find(|c| c.parent_edge == parent_edge)
            .expect("transfer_vertex called with a non-crossing edge");
        let e = parent.edge(parent_edge);
        if cross.side == dying_side {
            e.to.unwrap()
        } else {
            e.from
        }
    }

    /// Maps a point of the truncated subgraph (shadow coordinates below the
    /// cut) to the corresponding point of the parent graph.
    pub fn psi_point(&self, side: Side, p: &GraphPoint) -> Result<GraphPoint, GraphError> {
        let part = &self.parts[side.idx()];
        match p {
            GraphPoint::Vertex(v) => Ok(GraphPoint::Vertex(part.vertex_to_parent[v.0 as usize])),
            GraphPoint::EdgePoint { edge, x } => match &part.edge_to_parent[edge.0 as usize] {
                ParentEdge::Kept(pe) => Ok(GraphPoint::EdgePoint { edge: *pe, x: *x }),
                ParentEdge::Shadow {
                    parent,
                    reversed,
                    cut,
                } => {
                    if *x >= *cut {
                        return Err(GraphError::ExcrescentShadow(
                            part.graph.edge(*edge).name.clone(),
                        ));
                    }
                    let y = if *reversed { cut - x } else { *x };
                    Ok(GraphPoint::EdgePoint { edge: *parent, x: y })
                }
            },
            GraphPoint::Cemetery => Ok(GraphPoint::Cemetery),
            GraphPoint::Aux(k) => Ok(GraphPoint::Aux(k.clone())),
        }
    }

    /// Inverse of [`psi_point`]: maps a point of `G^j` into the subgraph.
    pub fn phi_point(&self, side: Side, p: &GraphPoint, parent: &MetricGraph) -> Result<GraphPoint, GraphError> {
        let part = &self.parts[side.idx()];
        match p {
            GraphPoint::Vertex(v) => part
                .vertex_from_parent
                .get(v)
                .map(|w| GraphPoint::Vertex(*w))
                .ok_or(GraphError::OutsideSubgraph),
            GraphPoint::EdgePoint { edge, x } => {
                if let Some(child) = part.edge_from_parent.get(edge) {
                    return Ok(GraphPoint::EdgePoint { edge: *child, x: *x });
                }
                if let Some(shadow) = part.shadow_by_parent.get(edge) {
                    let cross = self
                        .crossing
                        .iter()
                        .find(|c| c.parent_edge == *edge)
                        .unwrap();
                    let len = parent.edge(*edge).length;
                    let y = if cross.side == side { *x } else { len - x };
                    return Ok(GraphPoint::EdgePoint { edge: *shadow, x: y });
                }
                Err(GraphError::OutsideSubgraph)
            }
            GraphPoint::Cemetery => Ok(GraphPoint::Cemetery),
            GraphPoint::Aux(k) => Ok(GraphPoint::Aux(k.clone())),
        }
    }
}

/// Splits a graph along a vertex partition. `pos_cell` lists the vertices of
/// the `+1` side; the remainder forms the `-1` side. Crossing internal edges
/// are replaced by a fresh external shadow edge on each side, with the shadow
/// length recorded for the later removal of the excrescent parts.
pub fn decompose(graph: &MetricGraph, pos_cell: &[VertexId]) -> Result<SubgraphDecomposition, GraphError> {
    let mut vertex_side = vec![Side::Neg; graph.vertex_count()];
    for v in pos_cell {
        vertex_side[v.0 as usize] = Side::Pos;
    }
    let n_pos = vertex_side.iter().filter(|s| **s == Side::Pos).count();
    if n_pos == 0 || n_pos == graph.vertex_count() {
        return Err(GraphError::EmptyPartitionCell);
    }

    let mut crossing = Vec::new();
    let mut builders: [SideBuilder; 2] = [SideBuilder::default(), SideBuilder::default()];

    for side in Side::BOTH {
        let b = &mut builders[side.idx()];
        for v in graph.vertex_ids() {
            if vertex_side[v.0 as usize] == side {
                let child = VertexId(b.vertices.len() as u32);
                b.vertices.push(graph.vertex_name(v).to_string());
                b.vertex_to_parent.push(v);
                b.vertex_from_parent.insert(v, child);
            }
        }
    }

    for eid in graph.edge_ids() {
        let e = graph.edge(eid);
        let from_side = vertex_side[e.from.0 as usize];
        match e.to {
            None => {
                // External edges follow their initial vertex.
                builders[from_side.idx()].push_kept(graph, eid);
            }
            Some(to) => {
                let to_side = vertex_side[to.0 as usize];
                if from_side == to_side {
                    builders[from_side.idx()].push_kept(graph, eid);
                } else {
                    // Crossing edge: one shadow edge per side, attached at the
                    // side's own endpoint of the parent edge.
                    crossing.push(CrossingEdge {
                        parent_edge: eid,
                        side: from_side,
                    });
                    for side in Side::BOTH {
                        let anchor = if side == from_side { e.from } else { to };
                        let reversed = side != from_side;
                        builders[side.idx()].push_shadow(graph, eid, side, anchor, reversed);
                    }
                }
            }
        }
    }

    let parts = builders.map(SideBuilder::finish);
    Ok(SubgraphDecomposition {
        parts,
        crossing,
        vertex_side,
    })
}

#[derive(Default)]
struct SideBuilder {
    vertices: Vec<String>,
    vertex_to_parent: Vec<VertexId>,
    vertex_from_parent: HashMap<VertexId, VertexId>,
    edges: Vec<Edge>,
    edge_to_parent: Vec<ParentEdge>,
    edge_from_parent: HashMap<EdgeId, EdgeId>,
    shadow_by_parent: HashMap<EdgeId, EdgeId>,
    names: HashMap<String, ()>,
}

impl SideBuilder {
    fn push_kept(&mut self, graph: &MetricGraph, eid: EdgeId) {
        let e = graph.edge(eid);
        let child = EdgeId(self.edges.len() as u32);
        self.names.insert(e.name.clone(), ());
        self.edges.push(Edge {
            name: e.name.clone(),
            from: self.vertex_from_parent[&e.from],
            to: e.to.map(|t| self.vertex_from_parent[&t]),
            length: e.length,
        });
        self.edge_to_parent.push(ParentEdge::Kept(eid));
        self.edge_from_parent.insert(eid, child);
    }

    fn push_shadow(
        &mut self,
        graph: &MetricGraph,
        parent: EdgeId,
        side: Side,
        anchor: VertexId,
        reversed: bool,
    ) {
        let e = graph.edge(parent);
        let mut name = format!("{}#{}", e.name, side.label());
        while self.names.contains_key(&name) || graph.edge_index.contains_key(&name) {
            name.push('#');
        }
        self.names.insert(name.clone(), ());
        let child = EdgeId(self.edges.len() as u32);
        self.edges.push(Edge {
            name,
            from: self.vertex_from_parent[&anchor],
            to: None,
            length: f64::INFINITY,
        });
        self.edge_to_parent.push(ParentEdge::Shadow {
            parent,
            reversed,
            cut: e.length,
        });
        self.shadow_by_parent.insert(parent, child);
    }

    fn finish(self) -> SidePart {
        let vertex_index = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), VertexId(i as u32)))
            .collect();
        SidePart {
            graph: MetricGraph::assemble(self.vertices, vertex_index, self.edges),
            vertex_to_parent: self.vertex_to_parent,
            vertex_from_parent: self.vertex_from_parent,
            edge_to_parent: self.edge_to_parent,
            edge_from_parent: self.edge_from_parent,
            shadow_by_parent: self.shadow_by_parent,
        }
    }
}
