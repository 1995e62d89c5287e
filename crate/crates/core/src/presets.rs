//! Bundled example systems: a three-edge star and the six-vertex
//! two-triangle graph used throughout the test harness and shipped as CLI
//! fixtures. Boundary weights are normalized through [`crate::fw::normalize`]
//! at construction.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::config::{assignment_to_docs, Backend, ConfigDoc, RunDoc};
use crate::fw::{normalize, FwAssignment, FwData, JumpMeasure};
use crate::graph::{
    ExternalEdgeDescription, GraphDescription, GraphPoint, InternalEdgeDescription, MetricGraph,
};

/// One-vertex star with three external edges and pure reflection weights
/// (0.5, 0.3, 0.2).
pub fn walsh_star() -> (Arc<MetricGraph>, Arc<FwAssignment<f64>>) {
    let graph = Arc::new(
        MetricGraph::from_description(&GraphDescription {
            vertices: vec!["v".into()],
            internal_edges: vec![],
            external_edges: ["a", "b", "c"]
                .iter()
                .map(|n| ExternalEdgeDescription {
                    id: (*n).into(),
                    from: "v".into(),
                })
                .collect(),
        })
        .unwrap(),
    );
    let ids: Vec<_> = ["a", "b", "c"]
        .iter()
        .map(|n| graph.edge_by_name(n).unwrap())
        .collect();
    let fw = Arc::new(
        FwAssignment::new(
            &graph,
            vec![FwData::new(
                0.0,
                [(ids[0], 0.5), (ids[1], 0.3), (ids[2], 0.2)],
                0.0,
                JumpMeasure::empty(),
            )],
        )
        .unwrap(),
    );
    (graph, fw)
}

/// The six-vertex two-triangle graph: a 3-cycle {v1,v2,v3}, a multigraph
/// block {v4,v5,v6} (three parallel edges v4-v5 plus v4-v6), four edges
/// crossing between the blocks with mixed orientations, and external edges.
pub fn two_triangle_graph() -> Arc<MetricGraph> {
    Arc::new(
        MetricGraph::from_description(&two_triangle_description()).unwrap(),
    )
}

pub fn two_triangle_description() -> GraphDescription {
    GraphDescription {
        vertices: (1..=6).map(|k| format!("v{k}")).collect(),
        internal_edges: vec![
            ("i1", "v1", "v2", 1.0),
            ("i2", "v2", "v3", 1.2),
            ("i3", "v3", "v1", 0.9),
            ("i4", "v1", "v6", 1.5),
            ("i5", "v6", "v1", 1.4),
            ("i6", "v3", "v6", 1.6),
            ("i7", "v4", "v3", 1.2),
            ("i8", "v4", "v5", 1.1),
            ("i9", "v4", "v5", 0.8),
            ("i10", "v4", "v5", 1.3),
            ("i11", "v4", "v6", 1.0),
        ]
        .into_iter()
        .map(|(id, f, t, l)| InternalEdgeDescription {
            id: id.into(),
            from: f.into(),
            to: t.into(),
            length: l,
        })
        .collect(),
        external_edges: vec![
            ("e1", "v1"),
            ("e2", "v2"),
            ("e3", "v2"),
            ("e4", "v4"),
            ("e5", "v4"),
            ("e6", "v5"),
            ("e7", "v5"),
            ("e8", "v6"),
        ]
        .into_iter()
        .map(|(id, f)| ExternalEdgeDescription {
            id: id.into(),
            from: f.into(),
        })
        .collect(),
    }
}

/// Generic boundary data on the two-triangle graph: reflection everywhere,
/// some killing and stickiness, one local jump atom at v3, and two
/// cross-block atoms (v3 onto edge i8, v6 onto vertex v2).
pub fn two_triangle_assignment(graph: &Arc<MetricGraph>) -> Arc<FwAssignment<f64>> {
    let e = |name: &str| graph.edge_by_name(name).unwrap();
    let raw: Vec<FwData<f64>> = vec![
        FwData::new(
            0.1,
            [
                (e("e1"), 0.3),
                (e("i1"), 0.25),
                (e("i3"), 0.25),
                (e("i4"), 0.2),
                (e("i5"), 0.2),
            ],
            0.1,
            JumpMeasure::empty(),
        ),
        FwData::new(
            0.0,
            [
                (e("e2"), 0.3),
                (e("e3"), 0.3),
                (e("i1"), 0.3),
                (e("i2"), 0.3),
            ],
            0.0,
            JumpMeasure::empty(),
        ),
        FwData::new(
            0.0,
            [
                (e("i2"), 0.25),
                (e("i3"), 0.25),
                (e("i6"), 0.25),
                (e("i7"), 0.25),
            ],
            0.05,
            JumpMeasure::from_atoms([
                // Local atom inside the split ball at v3.
                (
                    GraphPoint::EdgePoint {
                        edge: e("i3"),
                        x: 0.1,
                    },
                    0.1,
                ),
                // Cross-block atom onto the parallel-edge bundle.
                (
                    GraphPoint::EdgePoint {
                        edge: e("i8"),
                        x: 0.6,
                    },
                    0.15,
                ),
            ]),
        ),
        FwData::new(
            0.0,
            [
                (e("e4"), 0.25),
                (e("e5"), 0.25),
                (e("i7"), 0.2),
                (e("i8"), 0.1),
                (e("i9"), 0.1),
                (e("i10"), 0.1),
                (e("i11"), 0.2),
            ],
            0.0,
            JumpMeasure::empty(),
        ),
        FwData::new(
            0.05,
            [
                (e("e6"), 0.3),
                (e("e7"), 0.3),
                (e("i8"), 0.2),
                (e("i9"), 0.2),
                (e("i10"), 0.2),
            ],
            0.2,
            JumpMeasure::empty(),
        ),
        FwData::new(
            0.0,
            [
                (e("e8"), 0.3),
                (e("i4"), 0.2),
                (e("i5"), 0.2),
                (e("i6"), 0.2),
                (e("i11"), 0.2),
            ],
            0.0,
            JumpMeasure::from_atoms([(
                GraphPoint::Vertex(graph.vertex("v2").unwrap()),
                0.1,
            )]),
        ),
    ];
    let data = raw
        .into_iter()
        .enumerate()
        .map(|(i, d)| normalize(&d, graph, crate::graph::VertexId(i as u32)).unwrap().0)
        .collect();
    Arc::new(FwAssignment::new(graph, data).unwrap())
}

/// The two-triangle system as a configuration document.
pub fn two_triangle_config() -> ConfigDoc {
    let graph = two_triangle_graph();
    let fw = two_triangle_assignment(&graph);
    ConfigDoc {
        graph: two_triangle_description(),
        boundary: assignment_to_docs(&graph, &fw),
        run: RunDoc {
            seed: Some(1),
            paths: Some(100),
            epsilon: Some(0.05),
            horizon: Some(5.0),
            alpha: vec![0.5, 1.0, 2.0],
            delta: BTreeMap::new(),
            backend: Some(Backend::Direct),
            out: None,
        },
    }
}

/// The three-edge star as a configuration document.
pub fn walsh_star_config() -> ConfigDoc {
    let (graph, fw) = walsh_star();
    ConfigDoc {
        graph: graph.description(),
        boundary: assignment_to_docs(&graph, &fw),
        run: RunDoc {
            seed: Some(1),
            paths: Some(100),
            epsilon: Some(0.05),
            horizon: Some(5.0),
            alpha: vec![0.5, 1.0, 2.0],
            delta: BTreeMap::new(),
            backend: Some(Backend::Direct),
            out: None,
        },
    }
}
