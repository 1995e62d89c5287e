//! The experiment configuration document: one self-contained JSON file
//! holding the graph, the per-vertex boundary data and the run parameters.
//! Documents round-trip losslessly through serde.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fw::{validate_data, FwAssignment, FwData, FwError, JumpMeasure, TraceStage, Weight};
use crate::graph::{
    validate_graph, GraphDescription, GraphError, GraphPoint, MetricGraph, Side,
    SubgraphDecomposition,
};
use crate::pipeline::default_delta;
use crate::sampler::SimError;

pub const DEFAULT_DELTA_FACTOR: f64 = 0.45;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("graph is invalid: {0}")]
    InvalidGraph(crate::graph::ValidationReport),
    #[error("boundary data missing for vertex `{0}`")]
    MissingBoundary(String),
    #[error("boundary data given for unknown vertex `{0}`")]
    UnknownBoundaryVertex(String),
    #[error("vertex `{vertex}`: {source}")]
    Boundary { vertex: String, source: FwError },
    #[error("jump atom must name exactly one of `edge` (with `x`) or `vertex`")]
    MalformedAtom,
    #[error("run parameter `{name}` must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("run parameter `seed` is required (no wall-clock seeding)")]
    MissingSeed,
    #[error("unknown backend `{0}` (expected direct, pipeline or both)")]
    UnknownBackend(String),
    #[error("delta override for unknown vertex `{0}`")]
    UnknownDeltaVertex(String),
    #[error("delta at `{vertex}` must stay below the incident edge length {bound}, got {value}")]
    DeltaOutOfRange {
        vertex: String,
        value: f64,
        bound: f64,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One jump atom in the document: either an edge point (`edge` + `x`) or a
/// vertex target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpAtomDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex: Option<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryDoc {
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: BTreeMap<String, f64>,
    #[serde(default)]
    pub p3: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p4: Vec<JumpAtomDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Direct,
    Pipeline,
    Both,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Backend, ConfigError> {
        match s {
            "direct" => Ok(Backend::Direct),
            "pipeline" => Ok(Backend::Pipeline),
            "both" => Ok(Backend::Both),
            other => Err(ConfigError::UnknownBackend(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::Direct => "direct",
            Backend::Pipeline => "pipeline",
            Backend::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub delta: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<Backend>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// The whole configuration document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub graph: GraphDescription,
    #[serde(default)]
    pub boundary: BTreeMap<String, BoundaryDoc>,
    #[serde(default)]
    pub run: RunDoc,
}

impl ConfigDoc {
    pub fn from_json(text: &str) -> Result<ConfigDoc, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }
}

/// Fully resolved run parameters after applying command-line overrides.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub seed: u64,
    pub paths: usize,
    pub epsilon: f64,
    pub horizon: f64,
    pub alpha: Vec<f64>,
    pub backend: Backend,
    /// Per-vertex split radius (defaults plus overrides), indexed by vertex.
    pub delta: Vec<f64>,
}

/// A parsed, validated configuration: the graph, the boundary assignment and
/// the resolved run parameters.
#[derive(Debug)]
pub struct BuiltConfig {
    pub graph: Arc<MetricGraph>,
    pub fw: Arc<FwAssignment<f64>>,
    pub params: RunParams,
}

pub fn atom_to_point(graph: &MetricGraph, atom: &JumpAtomDoc) -> Result<GraphPoint, ConfigError> {
    match (&atom.edge, atom.x, &atom.vertex) {
        (Some(edge), Some(x), None) => {
            let e = graph.edge_by_name(edge)?;
            Ok(graph.point_on_edge(e, x)?)
        }
        (None, None, Some(vertex)) => Ok(GraphPoint::Vertex(graph.vertex(vertex)?)),
        _ => Err(ConfigError::MalformedAtom),
    }
}

pub fn point_to_atom(graph: &MetricGraph, p: &GraphPoint, weight: f64) -> JumpAtomDoc {
    match p {
        GraphPoint::Vertex(v) => JumpAtomDoc {
            edge: None,
            x: None,
            vertex: Some(graph.vertex_name(*v).to_string()),
            weight,
        },
        GraphPoint::EdgePoint { edge, x } => JumpAtomDoc {
            edge: Some(graph.edge(*edge).name.clone()),
            x: Some(*x),
            vertex: None,
            weight,
        },
        // Auxiliary points never appear in user documents.
        other => panic!("cannot serialize point {other:?} into a config atom"),
    }
}

/// Builds the boundary assignment from the document, validating structure,
/// normalization and the supported regime per vertex.
pub fn build_assignment(
    graph: &MetricGraph,
    boundary: &BTreeMap<String, BoundaryDoc>,
) -> Result<FwAssignment<f64>, ConfigError> {
    for name in boundary.keys() {
        graph
            .vertex(name)
            .map_err(|_| ConfigError::UnknownBoundaryVertex(name.clone()))?;
    }
    let mut data = Vec::with_capacity(graph.vertex_count());
    for v in graph.vertex_ids() {
        let name = graph.vertex_name(v);
        let doc = boundary
            .get(name)
            .ok_or_else(|| ConfigError::MissingBoundary(name.to_string()))?;
        let mut p2 = BTreeMap::new();
        for (edge, w) in &doc.p2 {
            p2.insert(graph.edge_by_name(edge)?, *w);
        }
        let mut p4 = JumpMeasure::empty();
        for atom in &doc.p4 {
            p4.insert(atom_to_point(graph, atom)?, atom.weight);
        }
        let d = FwData {
            p1: doc.p1,
            p2,
            p3: doc.p3,
            p4,
        };
        validate_data(graph, v, &d).map_err(|source| ConfigError::Boundary {
            vertex: name.to_string(),
            source,
        })?;
        data.push(d);
    }
    Ok(FwAssignment::new(graph, data).expect("one datum per vertex"))
}

/// Serializes an assignment back into document form.
pub fn assignment_to_docs(
    graph: &MetricGraph,
    fw: &FwAssignment<f64>,
) -> BTreeMap<String, BoundaryDoc> {
    fw.iter()
        .map(|(v, d)| {
            (
                graph.vertex_name(v).to_string(),
                BoundaryDoc {
                    p1: d.p1,
                    p2: d
                        .p2
                        .iter()
                        .map(|(e, w)| (graph.edge(*e).name.clone(), *w))
                        .collect(),
                    p3: d.p3,
                    p4: d
                        .p4
                        .atoms()
                        .iter()
                        .map(|a| point_to_atom(graph, &a.target, a.weight))
                        .collect(),
                },
            )
        })
        .collect()
}

/// Command-line overrides applied on top of the document's run section.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub epsilon: Option<f64>,
    pub horizon: Option<f64>,
    pub backend: Option<Backend>,
}

/// Parses and validates a document, resolving run parameters and the
/// per-vertex delta values (defaults scaled from incident edge lengths, then
/// per-vertex overrides).
pub fn build_config(doc: &ConfigDoc, overrides: &Overrides) -> Result<BuiltConfig, ConfigError> {
    let report = validate_graph(&doc.graph);
    if !report.is_ok() {
        return Err(ConfigError::InvalidGraph(report));
    }
    let graph = Arc::new(MetricGraph::from_description(&doc.graph)?);
    let fw = Arc::new(build_assignment(&graph, &doc.boundary)?);

    let seed = overrides
        .seed
        .or(doc.run.seed)
        .ok_or(ConfigError::MissingSeed)?;
    let paths = overrides.paths.or(doc.run.paths).unwrap_or(100);
    let epsilon = overrides.epsilon.or(doc.run.epsilon).unwrap_or_else(|| {
        let bound = graph.min_edge_length();
        if bound.is_finite() {
            0.1 * bound
        } else {
            0.05
        }
    });
    let horizon = overrides.horizon.or(doc.run.horizon).unwrap_or(10.0);
    let backend = overrides
        .backend
        .or(doc.run.backend)
        .unwrap_or(Backend::Direct);
    for (name, value) in [("epsilon", epsilon), ("horizon", horizon)] {
        if value < 0.0 || (name == "epsilon" && value == 0.0) || !value.is_finite() {
            return Err(ConfigError::NonPositiveParameter { name, value });
        }
    }

    let mut delta = default_delta(&graph, DEFAULT_DELTA_FACTOR);
    for (name, value) in &doc.run.delta {
        let v = graph
            .vertex(name)
            .map_err(|_| ConfigError::UnknownDeltaVertex(name.clone()))?;
        let bound = graph.min_incident_length(v);
        if !(*value > 0.0) || *value >= bound {
            return Err(ConfigError::DeltaOutOfRange {
                vertex: name.clone(),
                value: *value,
                bound,
            });
        }
        delta[v.0 as usize] = *value;
    }

    let alpha = if doc.run.alpha.is_empty() {
        vec![0.5, 1.0, 2.0]
    } else {
        doc.run.alpha.clone()
    };

    Ok(BuiltConfig {
        graph,
        fw,
        params: RunParams {
            seed,
            paths,
            epsilon,
            horizon,
            alpha,
            backend,
            delta,
        },
    })
}

/// JSON rendering of a staged boundary-data trace. Exact-rational weights
/// are rendered as `"p/q"` strings, floats as numbers.
pub fn trace_to_json<W: Weight + std::fmt::Display>(
    graph: &MetricGraph,
    stages: &[TraceStage<W>],
    exact: bool,
) -> serde_json::Value {
    use serde_json::{json, Map, Value};
    let weight = |w: &W| -> Value {
        if exact {
            Value::String(format!("{w}"))
        } else {
            json!(w.to_f64())
        }
    };
    let stage_values: Vec<Value> = stages
        .iter()
        .map(|stage| {
            let mut vertices = Map::new();
            for (v, d) in stage.assignment.iter() {
                let p2: Map<String, Value> = d
                    .p2
                    .iter()
                    .map(|(e, w)| (graph.edge(*e).name.clone(), weight(w)))
                    .collect();
                let p4: Vec<Value> = d
                    .p4
                    .atoms()
                    .iter()
                    .map(|a| {
                        json!({
                            "target": graph.format_point(&a.target),
                            "weight": weight(&a.weight),
                        })
                    })
                    .collect();
                vertices.insert(
                    graph.vertex_name(v).to_string(),
                    json!({
                        "p1": weight(&d.p1),
                        "p2": p2,
                        "p3": weight(&d.p3),
                        "p4": p4,
                    }),
                );
            }
            let mut obj = Map::new();
            obj.insert("stage".into(), json!(stage.label.as_str()));
            obj.insert("data".into(), Value::Object(vertices));
            if let Some(c0) = &stage.c0 {
                let map: Map<String, Value> = graph
                    .vertex_ids()
                    .map(|v| (graph.vertex_name(v).to_string(), json!(c0[v.0 as usize])))
                    .collect();
                obj.insert("c0".into(), Value::Object(map));
            }
            Value::Object(obj)
        })
        .collect();
    json!({ "stages": stage_values })
}

/// JSON rendering of a decomposition: per side the subgraph description,
/// shadow-edge provenance, and the crossing-edge classification.
pub fn decomposition_to_json(
    graph: &MetricGraph,
    dec: &SubgraphDecomposition,
) -> serde_json::Value {
    use serde_json::{json, Value};
    let crossing: Vec<Value> = dec
        .crossing_edges()
        .iter()
        .map(|c| {
            json!({
                "edge": graph.edge(c.parent_edge).name,
                "initial_side": c.side.label(),
                "shadow_length": graph.edge(c.parent_edge).length,
            })
        })
        .collect();
    let sides: Vec<Value> = Side::BOTH
        .iter()
        .map(|&side| {
            let part = dec.part(side);
            let shadows: Vec<Value> = dec
                .crossing_edges()
                .iter()
                .map(|c| {
                    let shadow = part.shadow_by_parent[&c.parent_edge];
                    json!({
                        "id": part.graph.edge(shadow).name,
                        "replaces": graph.edge(c.parent_edge).name,
                        "reversed": c.side != side,
                    })
                })
                .collect();
            json!({
                "side": side.label(),
                "graph": part.graph.description(),
                "shadow_edges": shadows,
            })
        })
        .collect();
    json!({
        "crossing_edges": crossing,
        "subgraphs": sides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_doc() -> ConfigDoc {
        ConfigDoc::from_json(
            r#"{
            "graph": {
                "vertices": ["a", "b"],
                "internal_edges": [{"id": "i", "from": "a", "to": "b", "length": 1.0}],
                "external_edges": [{"id": "ea", "from": "a"}, {"id": "eb", "from": "b"}]
            },
            "boundary": {
                "a": {"p2": {"ea": 0.5, "i": 0.5}},
                "b": {"p2": {"eb": 0.4, "i": 0.4}, "p3": 0.2}
            },
            "run": {"seed": 7, "paths": 10, "epsilon": 0.05, "horizon": 2.0}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_round_trip() {
        let doc = sample_doc();
        let text = doc.to_json();
        let doc2 = ConfigDoc::from_json(&text).unwrap();
        assert_eq!(doc, doc2);
        // And again, byte-for-byte.
        assert_eq!(text, doc2.to_json());
    }

    #[test]
    fn build_and_reserialize_assignment() {
        let doc = sample_doc();
        let built = build_config(&doc, &Overrides::default()).unwrap();
        assert_eq!(built.params.seed, 7);
        assert_eq!(built.params.backend, Backend::Direct);
        let docs = assignment_to_docs(&built.graph, &built.fw);
        assert_eq!(docs, doc.boundary);
    }

    #[test]
    fn missing_seed_rejected() {
        let mut doc = sample_doc();
        doc.run.seed = None;
        assert!(matches!(
            build_config(&doc, &Overrides::default()),
            Err(ConfigError::MissingSeed)
        ));
        // But an override supplies it.
        let with_seed = Overrides {
            seed: Some(3),
            ..Default::default()
        };
        assert!(build_config(&doc, &with_seed).is_ok());
    }

    #[test]
    fn pure_jump_vertex_rejected_with_message() {
        let doc = ConfigDoc::from_json(
            r#"{
            "graph": {
                "vertices": ["a", "b"],
                "internal_edges": [{"id": "i", "from": "a", "to": "b", "length": 1.0}],
                "external_edges": []
            },
            "boundary": {
                "a": {"p4": [{"edge": "i", "x": 0.5, "weight": 2.5414940825367984}]},
                "b": {"p1": 1.0}
            },
            "run": {"seed": 1}
        }"#,
        )
        .unwrap();
        let err = build_config(&doc, &Overrides::default()).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("pure-jump"), "got: {message}");
    }

    #[test]
    fn normalization_violation_reports_sum() {
        let mut doc = sample_doc();
        doc.boundary.get_mut("a").unwrap().p2.insert("ea".into(), 0.6);
        let err = build_config(&doc, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("1.1"), "got: {err}");
    }

    #[test]
    fn atom_forms_parse_and_roundtrip() {
        let doc = ConfigDoc::from_json(
            r#"{
            "graph": {
                "vertices": ["a", "b"],
                "internal_edges": [{"id": "i", "from": "a", "to": "b", "length": 2.0}],
                "external_edges": [{"id": "ea", "from": "a"}, {"id": "eb", "from": "b"}]
            },
            "boundary": {
                "a": {"p2": {"ea": 0.3, "i": 0.3}, "p4": [
                    {"edge": "i", "x": 1.5, "weight": 0.2},
                    {"vertex": "b", "weight": 0.3}
                ]},
                "b": {"p2": {"eb": 0.5, "i": 0.5}}
            },
            "run": {"seed": 1}
        }"#,
        );
        // The weights above do not normalize exactly; fix vertex a by
        // computing the normalized version through the library.
        let doc = doc.unwrap();
        let graph = MetricGraph::from_description(&doc.graph).unwrap();
        let mut p2 = BTreeMap::new();
        for (e, w) in &doc.boundary["a"].p2 {
            p2.insert(graph.edge_by_name(e).unwrap(), *w);
        }
        let mut p4 = JumpMeasure::empty();
        for atom in &doc.boundary["a"].p4 {
            p4.insert(atom_to_point(&graph, atom).unwrap(), atom.weight);
        }
        let raw = FwData {
            p1: 0.0,
            p2,
            p3: 0.0,
            p4,
        };
        let va = graph.vertex("a").unwrap();
        let (normalized, c0) = crate::fw::normalize(&raw, &graph, va).unwrap();
        assert!(c0 > 0.0);
        // Round trip through the document representation.
        let fw = FwAssignment::new(
            &graph,
            vec![
                normalized.clone(),
                {
                    let mut p2 = BTreeMap::new();
                    p2.insert(graph.edge_by_name("eb").unwrap(), 0.5);
                    p2.insert(graph.edge_by_name("i").unwrap(), 0.5);
                    FwData {
                        p1: 0.0,
                        p2,
                        p3: 0.0,
                        p4: JumpMeasure::empty(),
                    }
                },
            ],
        )
        .unwrap();
        let docs = assignment_to_docs(&graph, &fw);
        let rebuilt = build_assignment(&graph, &docs).unwrap();
        assert_eq!(&rebuilt, &fw);
    }

    #[test]
    fn malformed_atom_rejected() {
        let graph = MetricGraph::from_description(&GraphDescription {
            vertices: vec!["a".into()],
            internal_edges: vec![],
            external_edges: vec![crate::graph::ExternalEdgeDescription {
                id: "e".into(),
                from: "a".into(),
            }],
        })
        .unwrap();
        let atom = JumpAtomDoc {
            edge: Some("e".into()),
            x: None,
            vertex: None,
            weight: 1.0,
        };
        assert!(matches!(
            atom_to_point(&graph, &atom),
            Err(ConfigError::MalformedAtom)
        ));
    }
}
