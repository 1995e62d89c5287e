//! The construction pipeline: trajectory-level transformations that assemble
//! the target process from local star solutions.
//!
//! The chain mirrors the staged boundary-data sequence in [`crate::fw`]:
//! per-vertex jump measures are restricted to local balls with the far mass
//! folded into an extended killing weight, killing is converted into jumps
//! onto per-vertex fake cemeteries, the graph is peeled down to star graphs
//! and reassembled by alternating the side processes via transfer kernels,
//! and finally the fake-cemetery occupation is converted back into genuine
//! killing and global jumps by a kill / revive / kill sandwich.

use std::collections::HashMap;
use std::sync::Arc;

use crate::fw::{
    pipeline_trace, restrict_assignment, split_local, FwAssignment, FwData, JumpMeasure, PointSet,
    TraceStage,
};
use crate::graph::{
    decompose, AuxKey, EdgeId, GraphError, GraphPoint, MetricGraph, Side, SubgraphDecomposition,
    VertexId,
};
use crate::sampler::{DirectGenerator, EventKind, SimError, StopFn, TrajEvent, Trajectory};
use crate::stream::RandomStream;

/// A recipe producing trajectories on a fixed state space (a graph plus any
/// auxiliary points). Implementations are immutable; path execution is a
/// pure function of `(start, horizon, stream)`.
///
/// The `stop` predicate lets estimators truncate a path at its first event
/// satisfying a spatial condition (first exit from a ball, arrival at an
/// endpoint) without simulating the remainder up to the horizon.
pub trait ProcessGenerator: Send + Sync {
    fn graph(&self) -> &Arc<MetricGraph>;

    fn run_stopped(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
        stop: Option<&StopFn>,
    ) -> Result<Trajectory, SimError>;

    fn run(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
    ) -> Result<Trajectory, SimError> {
        self.run_stopped(start, horizon, stream, None)
    }
}

impl ProcessGenerator for DirectGenerator {
    fn graph(&self) -> &Arc<MetricGraph> {
        DirectGenerator::graph(self)
    }

    fn run_stopped(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
        stop: Option<&StopFn>,
    ) -> Result<Trajectory, SimError> {
        DirectGenerator::run_stopped(self, start, horizon, stream, stop)
    }
}

/// Killing on an absorbing point set: the trajectory is truncated at its
/// first entry into the set, replaced by a kill event at the pre-entry
/// location. Entry into the (isolated) set happens only through jumps, so
/// the pre-entry location is the previous event's position.
pub struct KilledOnSet {
    inner: Arc<dyn ProcessGenerator>,
    set: PointSet,
}

pub fn kill_on_set(inner: Arc<dyn ProcessGenerator>, set: PointSet) -> KilledOnSet {
    KilledOnSet { inner, set }
}

impl KilledOnSet {
    fn transform(&self, traj: Trajectory) -> Trajectory {
        let Some(idx) = traj
            .events
            .iter()
            .position(|e| self.set.contains(&e.position))
        else {
            return traj;
        };
        debug_assert!(idx > 0, "start inside F is handled before running");
        let mut events: Vec<TrajEvent> = traj.events[..idx].to_vec();
        events.push(TrajEvent {
            t: traj.events[idx].t,
            position: traj.events[idx - 1].position.clone(),
            kind: EventKind::Kill,
        });
        Trajectory { events }
    }
}

impl ProcessGenerator for KilledOnSet {
    fn graph(&self) -> &Arc<MetricGraph> {
        self.inner.graph()
    }

    fn run_stopped(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
        stop: Option<&StopFn>,
    ) -> Result<Trajectory, SimError> {
        if self.set.contains(start) {
            // The killing map sends the whole absorbing set to the cemetery.
            return Ok(Trajectory {
                events: vec![
                    TrajEvent {
                        t: 0.0,
                        position: start.clone(),
                        kind: EventKind::Start,
                    },
                    TrajEvent {
                        t: 0.0,
                        position: GraphPoint::Cemetery,
                        kind: EventKind::Kill,
                    },
                ],
            });
        }
        // The inner run may stop either on the caller's condition or on
        // entry into the absorbing set; the transform turns the latter into
        // a kill event.
        let combined = |p: &GraphPoint| self.set.contains(p) || stop.is_some_and(|f| f(p));
        let traj = self
            .inner
            .run_stopped(start, horizon, stream, Some(&combined))?;
        Ok(self.transform(traj))
    }
}

/// Converts kill events at mapped vertices into jumps onto per-vertex
/// auxiliary absorbing points, which are then occupied until the horizon.
/// The resulting process has infinite lifetime.
pub struct FakeCemeteryAttached {
    inner: Arc<dyn ProcessGenerator>,
    targets: HashMap<VertexId, AuxKey>,
}

pub fn attach_fake_cemetery(
    inner: Arc<dyn ProcessGenerator>,
    targets: HashMap<VertexId, AuxKey>,
) -> FakeCemeteryAttached {
    FakeCemeteryAttached { inner, targets }
}

impl ProcessGenerator for FakeCemeteryAttached {
    fn graph(&self) -> &Arc<MetricGraph> {
        self.inner.graph()
    }

    fn run_stopped(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
        stop: Option<&StopFn>,
    ) -> Result<Trajectory, SimError> {
        let mut traj = self.inner.run_stopped(start, horizon, stream, stop)?;
        if !traj.is_killed() {
            return Ok(traj);
        }
        let kill = traj.events.pop().unwrap();
        let GraphPoint::Vertex(v) = kill.position else {
            return Err(SimError::InvalidStart(format!(
                "kill event away from any mapped vertex: {}",
                self.inner.graph().format_point(&kill.position)
            )));
        };
        let Some(aux) = self.targets.get(&v) else {
            return Err(SimError::InvalidStart(format!(
                "kill at vertex `{}` which has no fake cemetery attached",
                self.inner.graph().vertex_name(v)
            )));
        };
        let aux_point = GraphPoint::Aux(aux.clone());
        traj.events.push(TrajEvent {
            t: kill.t,
            position: aux_point.clone(),
            kind: EventKind::Jump,
        });
        if !stop.is_some_and(|f| f(&aux_point)) {
            traj.events.push(TrajEvent {
                t: horizon.max(kill.t),
                position: aux_point,
                kind: EventKind::Horizon,
            });
        }
        Ok(traj)
    }
}

/// Instant revival: whenever the underlying process dies at a vertex with a
/// kernel attached, a revival target is drawn and an independent copy of the
/// process is started there, repeating up to the horizon.
///
/// Copy `k` runs on the child stream `2k`, its revival draw on `2k + 1`, so
/// the concatenated copies are independent and the whole path remains a
/// function of the incoming stream.
pub struct RevivedWithKernel {
    inner: Arc<dyn ProcessGenerator>,
    kernels: HashMap<VertexId, JumpMeasure<f64>>,
    max_revivals: usize,
}

pub fn revive_with_kernel(
    inner: Arc<dyn ProcessGenerator>,
    kernels: HashMap<VertexId, JumpMeasure<f64>>,
) -> Result<RevivedWithKernel, SimError> {
    for (v, kappa) in &kernels {
        let mass: f64 = kappa.total_mass();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidStart(format!(
                "revival kernel at vertex {v:?} has mass {mass}, expected 1"
            )));
        }
    }
    Ok(RevivedWithKernel {
        inner,
        kernels,
        max_revivals: 1_000_000,
    })
}

impl ProcessGenerator for RevivedWithKernel {
    fn graph(&self) -> &Arc<MetricGraph> {
        self.inner.graph()
    }

    fn run_stopped(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
        stop: Option<&StopFn>,
    ) -> Result<Trajectory, SimError> {
        let mut events: Vec<TrajEvent> = Vec::new();
        let mut t_offset = 0.0;
        let mut current = start.clone();
        for copy in 0..self.max_revivals as u64 {
            let mut copy_stream = stream.child(2 * copy);
            let mut traj =
                self.inner
                    .run_stopped(&current, horizon - t_offset, &mut copy_stream, stop)?;
            let kill = if traj.is_killed() {
                traj.events.pop()
            } else {
                None
            };
            let skip = usize::from(copy > 0); // drop the repeated start event
            events.extend(traj.events.into_iter().skip(skip).map(|mut e| {
                e.t += t_offset;
                e
            }));
            match kill {
                None => return Ok(Trajectory { events }),
                Some(kill) => {
                    let GraphPoint::Vertex(v) = kill.position else {
                        return Err(SimError::InvalidStart(format!(
                            "revival undefined: kill away from vertices at {}",
                            self.inner.graph().format_point(&kill.position)
                        )));
                    };
                    let Some(kappa) = self.kernels.get(&v) else {
                        return Err(SimError::InvalidStart(format!(
                            "revival kernel undefined at kill site `{}`",
                            self.inner.graph().vertex_name(v)
                        )));
                    };
                    let mut kernel_stream = stream.child(2 * copy + 1);
                    let cumulative: Vec<f64> = kappa
                        .atoms()
                        .iter()
                        .scan(0.0, |acc, a| {
                            *acc += a.weight;
                            Some(*acc)
                        })
                        .collect();
                    let pick = kernel_stream.categorical_cumulative(&cumulative);
                    let target = kappa.atoms()[pick].target.clone();
                    let t_kill = kill.t + t_offset;
                    events.push(TrajEvent {
                        t: t_kill,
                        position: target.clone(),
                        kind: EventKind::Revival,
                    });
                    if stop.is_some_and(|f| f(&target)) {
                        return Ok(Trajectory { events });
                    }
                    t_offset = t_kill;
                    current = target;
                }
            }
        }
        Err(SimError::EventBudgetExceeded(self.max_revivals))
    }
}

/// The alternating-copies process pasting two side processes together.
///
/// Side processes must kill themselves exactly at the excrescent shadow cuts
/// (the [`DirectGenerator`] barrier mechanism); a side death at its own cut
/// revives the companion side at the far endpoint of the crossing edge.
/// Kills at inherited (outer) cuts are mapped through the point map and
/// propagated to the caller.
pub struct GluedGenerator {
    parent: Arc<MetricGraph>,
    dec: Arc<SubgraphDecomposition>,
    sides: [Arc<dyn ProcessGenerator>; 2],
    /// Per side: child shadow-edge id -> (parent crossing edge, cut value).
    own_cuts: [HashMap<EdgeId, (EdgeId, f64)>; 2],
    max_alternations: usize,
}

pub fn decompose_and_glue(
    parent: Arc<MetricGraph>,
    dec: Arc<SubgraphDecomposition>,
    sides: [Arc<dyn ProcessGenerator>; 2],
) -> GluedGenerator {
    let own_cuts = [Side::Neg, Side::Pos].map(|side| {
        dec.crossing_edges()
            .iter()
            .map(|c| {
                let shadow = dec.part(side).shadow_by_parent[&c.parent_edge];
                (shadow, (c.parent_edge, parent.edge(c.parent_edge).length))
            })
            .collect()
    });
    GluedGenerator {
        parent,
        dec,
        sides,
        own_cuts,
        max_alternations: 1_000_000,
    }
}

impl GluedGenerator {
    fn initial_side(&self, start: &GraphPoint) -> Result<Side, SimError> {
        match start {
            GraphPoint::Vertex(v) => Ok(self.dec.vertex_side(*v)),
            GraphPoint::EdgePoint { edge, .. } => {
                if let Some(c) = self
                    .dec
                    .crossing_edges()
                    .iter()
                    .find(|c| c.parent_edge == *edge)
                {
                    // On a mutual edge both sides carry the same law; start
                    // the side owning the initial vertex.
                    Ok(c.side)
                } else if self.dec.edge_from_parent(Side::Neg, *edge).is_some() {
                    Ok(Side::Neg)
                } else {
                    Ok(Side::Pos)
                }
            }
            _ => Err(SimError::InvalidStart(self.parent.format_point(start))),
        }
    }

    fn map_event(
        &self,
        side: Side,
        mut e: TrajEvent,
        t_offset: f64,
    ) -> Result<TrajEvent, SimError> {
        e.position = self
            .dec
            .psi_point(side, &e.position)
            .map_err(shadow_violation)?;
        e.t += t_offset;
        Ok(e)
    }
}

fn shadow_violation(err: GraphError) -> SimError {
    match err {
        GraphError::ExcrescentShadow(edge) => SimError::ShadowJumpViolation { edge, x: f64::NAN },
        other => SimError::Graph(other),
    }
}

impl ProcessGenerator for GluedGenerator {
    fn graph(&self) -> &Arc<MetricGraph> {
        &self.parent
    }

    fn run_stopped(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
        stop: Option<&StopFn>,
    ) -> Result<Trajectory, SimError> {
        if start.is_aux() {
            // Auxiliary points are absorbing regardless of the side split.
            return Ok(Trajectory {
                events: vec![
                    TrajEvent {
                        t: 0.0,
                        position: start.clone(),
                        kind: EventKind::Start,
                    },
                    TrajEvent {
                        t: horizon,
                        position: start.clone(),
                        kind: EventKind::Horizon,
                    },
                ],
            });
        }
        let mut side = self.initial_side(start)?;
        let mut pos = start.clone();
        let mut t_offset = 0.0;
        let mut events: Vec<TrajEvent> = Vec::new();
        for alternation in 0..self.max_alternations as u64 {
            let child_start = self
                .dec
                .phi_point(side, &pos, &self.parent)
                .map_err(SimError::Graph)?;
            let mut child_stream = stream.child(alternation);
            // The side process runs in subgraph coordinates, so the caller's
            // stop condition is evaluated through the point map. Points it
            // cannot map (the excrescent cut itself) never trigger a stop;
            // they are handled by the kill logic below.
            let mapped_stop = stop.map(|f| {
                move |p: &GraphPoint| self.dec.psi_point(side, p).map_or(false, |q| f(&q))
            });
            let child_stop: Option<&StopFn> = match &mapped_stop {
                Some(f) => Some(f),
                None => None,
            };
            let mut child = self.sides[side.idx()].run_stopped(
                &child_start,
                horizon - t_offset,
                &mut child_stream,
                child_stop,
            )?;
            let kill = if child.is_killed() {
                child.events.pop()
            } else {
                None
            };
            let skip = usize::from(alternation > 0);
            for e in child.events.into_iter().skip(skip) {
                events.push(self.map_event(side, e, t_offset)?);
            }
            let Some(kill) = kill else {
                return Ok(Trajectory { events });
            };
            // A kill at this side's own shadow cut triggers the transfer to
            // the companion side; any other kill propagates up.
            let own = match &kill.position {
                GraphPoint::EdgePoint { edge, x } => {
                    self.own_cuts[side.idx()].get(edge).map(|(parent_edge, cut)| {
                        debug_assert_eq!(*x, *cut, "shadow kill away from the cut");
                        *parent_edge
                    })
                }
                _ => None,
            };
            match own {
                Some(parent_edge) => {
                    let target = self.dec.transfer_vertex(parent_edge, side, &self.parent);
                    let t_kill = kill.t + t_offset;
                    let target_point = GraphPoint::Vertex(target);
                    events.push(TrajEvent {
                        t: t_kill,
                        position: target_point.clone(),
                        kind: EventKind::Revival,
                    });
                    if stop.is_some_and(|f| f(&target_point)) {
                        return Ok(Trajectory { events });
                    }
                    pos = target_point;
                    side = side.other();
                    t_offset = t_kill;
                }
                None => {
                    events.push(self.map_event(side, kill, t_offset)?);
                    return Ok(Trajectory { events });
                }
            }
        }
        Err(SimError::EventBudgetExceeded(self.max_alternations))
    }
}

/// Default split radius per vertex: a safety factor below the shortest
/// incident edge length (vertices with only external edges get 1).
pub fn default_delta(graph: &MetricGraph, factor: f64) -> Vec<f64> {
    graph
        .vertex_ids()
        .map(|v| {
            let min_len = graph.min_incident_length(v);
            if min_len.is_finite() {
                factor * min_len
            } else {
                1.0
            }
        })
        .collect()
}

/// The fully assembled construction, together with its audit trace.
pub struct PaperPipeline {
    generator: Arc<dyn ProcessGenerator>,
    trace: Vec<TraceStage<f64>>,
}

impl PaperPipeline {
    pub fn trace(&self) -> &[TraceStage<f64>] {
        &self.trace
    }
}

impl ProcessGenerator for PaperPipeline {
    fn graph(&self) -> &Arc<MetricGraph> {
        self.generator.graph()
    }

    fn run_stopped(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
        stop: Option<&StopFn>,
    ) -> Result<Trajectory, SimError> {
        self.generator.run_stopped(start, horizon, stream, stop)
    }
}

/// Builds the literal construction for a target assignment:
///
/// 1. split each vertex's jumps at radius `delta[v]`, folding the far mass
///    and the killing weight into a jump onto the vertex's fake cemetery;
/// 2. peel the graph down to star graphs (last vertex first), simulate each
///    star directly with the local data, and glue the levels back together
///    through the shadow-edge cuts and transfer kernels;
/// 3. kill on the fake cemeteries, revive with the global kernels
///    `(p1 ε_global + p4_far)/q1`, and kill on the global point.
pub fn construct_paper_pipeline(
    graph: Arc<MetricGraph>,
    fw: Arc<FwAssignment<f64>>,
    delta: &[f64],
    eps: f64,
) -> Result<PaperPipeline, SimError> {
    fw.validate(&graph)?;
    let min_delta = delta.iter().copied().fold(f64::INFINITY, f64::min);
    if eps > 0.5 * min_delta {
        return Err(SimError::EpsilonTooLarge {
            eps,
            bound: 0.5 * min_delta,
            reason: "epsilon must be well below the smallest split radius",
        });
    }

    // Per-vertex split: local star data (with the fake-cemetery atom) and
    // the global revival kernels.
    let mut local_data = Vec::with_capacity(graph.vertex_count());
    let mut kernels: HashMap<VertexId, JumpMeasure<f64>> = HashMap::new();
    for (v, d) in fw.iter() {
        let split = split_local(d, &graph, v, delta[v.0 as usize])?;
        let mut p4 = split.q4_local.clone();
        if split.q1 > 0.0 {
            p4.insert(
                GraphPoint::Aux(AuxKey::VertexCemetery(graph.vertex_name(v).to_string())),
                split.q1,
            );
            let mut kappa = split.p4_far.scaled(&(1.0 / split.q1));
            if d.p1 > 0.0 {
                kappa.insert(GraphPoint::Aux(AuxKey::Global), d.p1 / split.q1);
            }
            kernels.insert(v, kappa);
        }
        let unnormalized = FwData {
            p1: 0.0,
            p2: d.p2.clone(),
            p3: d.p3,
            p4,
        };
        let sum = crate::fw::normalization_sum(&graph, v, &unnormalized);
        local_data.push(unnormalized.map_weights(|w| w / sum));
    }
    let star_assignment = Arc::new(FwAssignment::new(&graph, local_data)?);

    let glued = build_recursive(graph.clone(), star_assignment, eps, HashMap::new())?;
    let killed = kill_on_set(glued, PointSet::vertex_cemeteries(&graph));
    let revived = revive_with_kernel(Arc::new(killed), kernels)?;
    let final_gen = kill_on_set(Arc::new(revived), PointSet::global_cemetery());

    let trace = pipeline_trace(&graph, &fw, delta)?;
    Ok(PaperPipeline {
        generator: Arc::new(final_gen),
        trace,
    })
}

/// Recursive one-vertex peeling: a star graph is simulated directly, larger
/// graphs are split at their last vertex and the side processes glued.
fn build_recursive(
    graph: Arc<MetricGraph>,
    fw: Arc<FwAssignment<f64>>,
    eps: f64,
    barriers: HashMap<EdgeId, f64>,
) -> Result<Arc<dyn ProcessGenerator>, SimError> {
    if graph.vertex_count() == 1 {
        return Ok(Arc::new(DirectGenerator::with_barriers(
            graph.clone(),
            fw,
            eps,
            barriers,
        )?));
    }
    let last = VertexId(graph.vertex_count() as u32 - 1);
    let dec = Arc::new(decompose(&graph, &[last])?);
    let mut sides: Vec<Arc<dyn ProcessGenerator>> = Vec::with_capacity(2);
    for side in Side::BOTH {
        let sub_graph = Arc::new(dec.graph(side).clone());
        let sub_fw = Arc::new(restrict_assignment(&dec, &graph, &fw, side)?);
        let mut sub_barriers: HashMap<EdgeId, f64> = HashMap::new();
        // Inherited cuts follow their (external, kept) edges down.
        for (&edge, &cut) in &barriers {
            if let Some(child) = dec.edge_from_parent(side, edge) {
                sub_barriers.insert(child, cut);
            }
        }
        // New cuts at the shadow lengths of this level's crossing edges.
        for c in dec.crossing_edges() {
            let shadow = dec.part(side).shadow_by_parent[&c.parent_edge];
            sub_barriers.insert(shadow, graph.edge(c.parent_edge).length);
        }
        sides.push(build_recursive(sub_graph, sub_fw, eps, sub_barriers)?);
    }
    let pos = sides.pop().unwrap();
    let neg = sides.pop().unwrap();
    Ok(Arc::new(decompose_and_glue(graph, dec, [neg, pos])))
}
