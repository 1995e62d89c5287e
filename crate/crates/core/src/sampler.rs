//! The direct simulation backend: exact interval-exit sampling inside edges
//! combined with an epsilon-shell resolution of every vertex visit.
//!
//! A visit to a vertex is resolved in one shot: a categorical draw with
//! unnormalized weights `{p2^l} ∪ {ε p1 -> kill} ∪ {ε w_k -> jump to g_k}`
//! picks the outcome, and the elapsed time is the exit time of a Brownian
//! motion from the ε-ball plus an exponential holding time of mean
//! `ε p3 / Σp2`. To first order in ε this reproduces the boundary condition:
//! kill and jump probabilities scale like `ε p1/Σp2` and `ε w_k/Σp2`, edge
//! frequencies converge to `p2^l/Σp2`, and the mean visit duration is
//! `ε² + ε p3/Σp2`.
//!
//! Vertices without reflection weights are handled separately: with
//! stickiness they become exponential hold-and-jump states, without it they
//! are instant killers (pure absorption) — the genuinely jump-driven regime
//! would require an infinite jump measure and is rejected.

use std::collections::HashMap;
use std::io::Write as IoWrite;
use std::sync::Arc;

use thiserror::Error;

use crate::fw::{validate_data, FwAssignment, FwData, FwError};
use crate::graph::{EdgeId, GraphError, GraphPoint, MetricGraph, VertexId};
use crate::interval::{
    sample_ball_exit_time, sample_interval_exit, sample_one_sided_passage, ExitSide,
};
use crate::stream::RandomStream;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("pure-jump vertex `{vertex}` unsupported (no reflection or stickiness to carry jumps)")]
    PureJumpVertex { vertex: String },
    #[error("vertex `{vertex}` has no boundary mass at all")]
    DegenerateVertex { vertex: String },
    #[error("epsilon {eps} too large: must be below {bound} ({reason})")]
    EpsilonTooLarge {
        eps: f64,
        bound: f64,
        reason: &'static str,
    },
    #[error("start point is not a point of the state space: {0}")]
    InvalidStart(String),
    #[error("event budget of {0} exceeded (suspected trap or misconfiguration)")]
    EventBudgetExceeded(usize),
    #[error("jump onto the excrescent shadow region of edge `{edge}` at {x}")]
    ShadowJumpViolation { edge: String, x: f64 },
    #[error("barrier on edge `{edge}` is invalid: {reason}")]
    InvalidBarrier { edge: String, reason: &'static str },
    #[error(transparent)]
    Fw(#[from] FwError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Start,
    EdgeExit,
    VertexResolution,
    Hold,
    Jump,
    Revival,
    Kill,
    Horizon,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::EdgeExit => "edge_exit",
            EventKind::VertexResolution => "vertex_resolution",
            EventKind::Hold => "hold",
            EventKind::Jump => "jump",
            EventKind::Revival => "revival",
            EventKind::Kill => "kill",
            EventKind::Horizon => "horizon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajEvent {
    pub t: f64,
    pub position: GraphPoint,
    pub kind: EventKind,
}

/// Time-stamped event log of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub events: Vec<TrajEvent>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajEvent {
        self.events.last().expect("trajectory is never empty")
    }

    pub fn is_killed(&self) -> bool {
        self.last().kind == EventKind::Kill
    }

    /// Kill time, if the path was killed before the horizon.
    pub fn lifetime(&self) -> Option<f64> {
        if self.is_killed() {
            Some(self.last().t)
        } else {
            None
        }
    }

    pub fn count_kind(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Structural invariants: starts with a start event, times are
    /// non-decreasing, and kill/horizon events are terminal.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.events.is_empty() || self.events[0].kind != EventKind::Start {
            return Err("first event must be `start`".into());
        }
        for w in self.events.windows(2) {
            if w[1].t < w[0].t {
                return Err(format!("times decrease: {} -> {}", w[0].t, w[1].t));
            }
            if matches!(w[0].kind, EventKind::Kill | EventKind::Horizon) {
                return Err(format!("event after terminal {:?}", w[0].kind));
            }
        }
        Ok(())
    }

    /// Line-oriented CSV: `t,kind,location_kind,id,coordinate`.
    pub fn write_csv(&self, graph: &MetricGraph, out: &mut impl IoWrite) -> std::io::Result<()> {
        writeln!(out, "t,kind,location_kind,id,coordinate")?;
        for e in &self.events {
            let (loc, id, coord) = match &e.position {
                GraphPoint::Vertex(v) => {
                    ("vertex", graph.vertex_name(*v).to_string(), String::new())
                }
                GraphPoint::EdgePoint { edge, x } => {
                    ("edge", graph.edge(*edge).name.clone(), format!("{x}"))
                }
                GraphPoint::Cemetery => ("cemetery", String::new(), String::new()),
                GraphPoint::Aux(k) => ("aux", k.to_string(), String::new()),
            };
            writeln!(out, "{},{},{},{},{}", e.t, e.kind.as_str(), loc, id, coord)?;
        }
        Ok(())
    }
}

/// Early-stop predicate on positions, used by estimators that only need a
/// path prefix (first exit from a ball, first arrival at an endpoint). The
/// start position is never tested; the triggering event is kept as the last
/// event of the truncated trajectory.
pub type StopFn<'a> = dyn Fn(&GraphPoint) -> bool + Sync + 'a;

/// Result of one epsilon-shell vertex visit.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexOutcome {
    pub resolution: VertexResolution,
    /// Holding plus excursion time spent at the vertex; infinite for traps.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VertexResolution {
    /// Exit onto an edge, placed at distance epsilon from the vertex.
    Edge { edge: EdgeId, placement: GraphPoint },
    Kill,
    Jump(GraphPoint),
    /// Absorbing vertex: occupied until the horizon.
    Trap,
}

#[derive(Debug, Clone)]
enum PlannedOutcome {
    Edge { edge: EdgeId, placement: GraphPoint },
    Kill,
    Jump(GraphPoint),
}

impl PlannedOutcome {
    fn to_resolution(&self) -> VertexResolution {
        match self {
            PlannedOutcome::Edge { edge, placement } => VertexResolution::Edge {
                edge: *edge,
                placement: placement.clone(),
            },
            PlannedOutcome::Kill => VertexResolution::Kill,
            PlannedOutcome::Jump(g) => VertexResolution::Jump(g.clone()),
        }
    }
}

/// Precomputed resolution scheme for one vertex at a fixed epsilon.
#[derive(Debug, Clone)]
pub(crate) struct VertexPlan {
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    /// Reflecting vertex: categorical shell exit plus optional holding.
    Shell {
        cumulative: Vec<f64>,
        outcomes: Vec<PlannedOutcome>,
        hold_mean: f64,
        eps: f64,
    },
    /// No reflection: exponential hold (instant when sticky weight is zero),
    /// then kill or jump.
    HoldJump {
        mean_hold: f64,
        cumulative: Vec<f64>,
        outcomes: Vec<PlannedOutcome>,
    },
    Trap,
}

impl VertexPlan {
    pub(crate) fn build(
        d: &FwData<f64>,
        graph: &MetricGraph,
        v: VertexId,
        eps: f64,
    ) -> Result<VertexPlan, SimError> {
        let min_len = graph.min_incident_length(v);
        if eps >= min_len {
            return Err(SimError::EpsilonTooLarge {
                eps,
                bound: min_len,
                reason: "epsilon must be below every incident edge length",
            });
        }
        let p2_total = d.p2_total();
        let jump_total = d.p4.total_mass();
        if p2_total > 0.0 {
            let mut cumulative = Vec::new();
            let mut outcomes = Vec::new();
            let mut acc = 0.0;
            for (&edge, &w) in &d.p2 {
                if w == 0.0 {
                    continue;
                }
                let e = graph.edge(edge);
                let x = if e.from == v { eps } else { e.length - eps };
                acc += w;
                cumulative.push(acc);
                outcomes.push(PlannedOutcome::Edge {
                    edge,
                    placement: GraphPoint::EdgePoint { edge, x },
                });
            }
            if d.p1 > 0.0 {
                acc += eps * d.p1;
                cumulative.push(acc);
                outcomes.push(PlannedOutcome::Kill);
            }
            for a in d.p4.atoms() {
                acc += eps * a.weight;
                cumulative.push(acc);
                outcomes.push(PlannedOutcome::Jump(a.target.clone()));
            }
            let hold_mean = if d.p3 > 0.0 { eps * d.p3 / p2_total } else { 0.0 };
            Ok(VertexPlan {
                kind: PlanKind::Shell {
                    cumulative,
                    outcomes,
                    hold_mean,
                    eps,
                },
            })
        } else {
            let rate_mass = d.p1 + jump_total;
            if rate_mass == 0.0 {
                return if d.p3 > 0.0 {
                    Ok(VertexPlan { kind: PlanKind::Trap })
                } else {
                    Err(SimError::DegenerateVertex {
                        vertex: graph.vertex_name(v).to_string(),
                    })
                };
            }
            // Jumps to graph points need stickiness (or reflection) to carry
            // them at a finite rate; the aux-point form produced by the
            // killing conversion resolves instantly like pure killing does.
            if d.p3 == 0.0 && d.p4.atoms().iter().any(|a| !a.target.is_aux()) {
                return Err(SimError::PureJumpVertex {
                    vertex: graph.vertex_name(v).to_string(),
                });
            }
            let mut cumulative = Vec::new();
            let mut outcomes = Vec::new();
            let mut acc = 0.0;
            if d.p1 > 0.0 {
                acc += d.p1;
                cumulative.push(acc);
                outcomes.push(PlannedOutcome::Kill);
            }
            for a in d.p4.atoms() {
                acc += a.weight;
                cumulative.push(acc);
                outcomes.push(PlannedOutcome::Jump(a.target.clone()));
            }
            Ok(VertexPlan {
                kind: PlanKind::HoldJump {
                    mean_hold: d.p3 / rate_mass,
                    cumulative,
                    outcomes,
                },
            })
        }
    }

    fn resolve(&self, stream: &mut RandomStream) -> VertexOutcome {
        match &self.kind {
            PlanKind::Shell {
                cumulative,
                outcomes,
                hold_mean,
                eps,
            } => {
                let pick = stream.categorical_cumulative(cumulative);
                let excursion = sample_ball_exit_time(*eps, stream);
                let hold = stream.exponential(*hold_mean);
                VertexOutcome {
                    resolution: outcomes[pick].to_resolution(),
                    duration: excursion + hold,
                }
            }
            PlanKind::HoldJump {
                mean_hold,
                cumulative,
                outcomes,
            } => {
                let hold = stream.exponential(*mean_hold);
                let pick = stream.categorical_cumulative(cumulative);
                VertexOutcome {
                    resolution: outcomes[pick].to_resolution(),
                    duration: hold,
                }
            }
            PlanKind::Trap => VertexOutcome {
                resolution: VertexResolution::Trap,
                duration: f64::INFINITY,
            },
        }
    }

    fn emits_hold_event(&self) -> bool {
        matches!(&self.kind, PlanKind::HoldJump { mean_hold, .. } if *mean_hold > 0.0)
    }
}

/// One epsilon-shell vertex visit, standalone form.
pub fn vertex_resolution(
    d: &FwData<f64>,
    graph: &MetricGraph,
    v: VertexId,
    eps: f64,
    stream: &mut RandomStream,
) -> Result<VertexOutcome, SimError> {
    Ok(VertexPlan::build(d, graph, v, eps)?.resolve(stream))
}

const DEFAULT_EVENT_BUDGET: usize = 20_000_000;

/// The direct backend: a reusable path generator for a graph, a boundary
/// assignment and a fixed epsilon. Optional barriers declare absorbing cut
/// points on external edges; diffusion reaching a cut ends the path with a
/// kill event there (used by the gluing construction to remove the excrescent
/// shadow parts).
#[derive(Debug, Clone)]
pub struct DirectGenerator {
    graph: Arc<MetricGraph>,
    fw: Arc<FwAssignment<f64>>,
    eps: f64,
    barriers: HashMap<EdgeId, f64>,
    plans: Vec<VertexPlan>,
    max_events: usize,
}

impl DirectGenerator {
    pub fn new(
        graph: Arc<MetricGraph>,
        fw: Arc<FwAssignment<f64>>,
        eps: f64,
    ) -> Result<DirectGenerator, SimError> {
        Self::with_barriers(graph, fw, eps, HashMap::new())
    }

    pub fn with_barriers(
        graph: Arc<MetricGraph>,
        fw: Arc<FwAssignment<f64>>,
        eps: f64,
        barriers: HashMap<EdgeId, f64>,
    ) -> Result<DirectGenerator, SimError> {
        let half_min = graph.min_edge_length() / 2.0;
        if !(eps > 0.0) || eps >= half_min {
            return Err(SimError::EpsilonTooLarge {
                eps,
                bound: half_min,
                reason: "epsilon must be below half of every edge length",
            });
        }
        for (v, d) in fw.iter() {
            validate_data(&graph, v, d)?;
        }
        for (&edge, &cut) in &barriers {
            let e = graph.edge(edge);
            if !e.is_external() {
                return Err(SimError::InvalidBarrier {
                    edge: e.name.clone(),
                    reason: "barriers are only supported on external edges",
                });
            }
            if !(cut > 0.0) || !cut.is_finite() {
                return Err(SimError::InvalidBarrier {
                    edge: e.name.clone(),
                    reason: "cut must be positive and finite",
                });
            }
            if cut <= eps {
                return Err(SimError::EpsilonTooLarge {
                    eps,
                    bound: cut,
                    reason: "epsilon must be below every barrier cut",
                });
            }
        }
        // Jump atoms must not land on or beyond a barrier cut.
        for (_, d) in fw.iter() {
            for a in d.p4.atoms() {
                if let GraphPoint::EdgePoint { edge, x } = &a.target {
                    if let Some(&cut) = barriers.get(edge) {
                        if *x >= cut {
                            return Err(SimError::ShadowJumpViolation {
                                edge: graph.edge(*edge).name.clone(),
                                x: *x,
                            });
                        }
                    }
                }
            }
        }
        let plans = graph
            .vertex_ids()
            .map(|v| VertexPlan::build(fw.get(v), &graph, v, eps))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DirectGenerator {
            graph,
            fw,
            eps,
            barriers,
            plans,
            max_events: DEFAULT_EVENT_BUDGET,
        })
    }

    pub fn graph(&self) -> &Arc<MetricGraph> {
        &self.graph
    }

    pub fn fw(&self) -> &Arc<FwAssignment<f64>> {
        &self.fw
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn run(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
    ) -> Result<Trajectory, SimError> {
        self.run_stopped(start, horizon, stream, None)
    }

    pub fn run_stopped(
        &self,
        start: &GraphPoint,
        horizon: f64,
        stream: &mut RandomStream,
        stop: Option<&StopFn>,
    ) -> Result<Trajectory, SimError> {
        if !self.graph.contains_point(start) || matches!(start, GraphPoint::Cemetery) {
            return Err(SimError::InvalidStart(self.graph.format_point(start)));
        }
        if let GraphPoint::EdgePoint { edge, x } = start {
            if let Some(&cut) = self.barriers.get(edge) {
                if *x >= cut {
                    return Err(SimError::ShadowJumpViolation {
                        edge: self.graph.edge(*edge).name.clone(),
                        x: *x,
                    });
                }
            }
        }
        let mut events = vec![TrajEvent {
            t: 0.0,
            position: start.clone(),
            kind: EventKind::Start,
        }];
        if horizon <= 0.0 {
            events.push(TrajEvent {
                t: 0.0,
                position: start.clone(),
                kind: EventKind::Horizon,
            });
            return Ok(Trajectory { events });
        }
        let mut t = 0.0;
        let mut pos = start.clone();
        loop {
            if events.len() >= self.max_events {
                return Err(SimError::EventBudgetExceeded(self.max_events));
            }
            match pos.clone() {
                GraphPoint::Aux(_) | GraphPoint::Cemetery => {
                    events.push(TrajEvent {
                        t: horizon.max(t),
                        position: pos,
                        kind: EventKind::Horizon,
                    });
                    break;
                }
                GraphPoint::Vertex(v) => {
                    let plan = &self.plans[v.0 as usize];
                    let outcome = plan.resolve(stream);
                    if outcome.duration.is_infinite() {
                        events.push(TrajEvent {
                            t: horizon.max(t),
                            position: pos,
                            kind: EventKind::Horizon,
                        });
                        break;
                    }
                    let t_next = t + outcome.duration;
                    if t_next >= horizon {
                        events.push(TrajEvent {
                            t: t_next,
                            position: pos,
                            kind: EventKind::Horizon,
                        });
                        break;
                    }
                    if plan.emits_hold_event() {
                        events.push(TrajEvent {
                            t: t_next,
                            position: pos.clone(),
                            kind: EventKind::Hold,
                        });
                    }
                    t = t_next;
                    match outcome.resolution {
                        VertexResolution::Edge { placement, .. } => {
                            events.push(TrajEvent {
                                t,
                                position: placement.clone(),
                                kind: EventKind::VertexResolution,
                            });
                            if stop.is_some_and(|f| f(&placement)) {
                                break;
                            }
                            pos = placement;
                        }
                        VertexResolution::Kill => {
                            events.push(TrajEvent {
                                t,
                                position: pos,
                                kind: EventKind::Kill,
                            });
                            break;
                        }
                        VertexResolution::Jump(target) => {
                            if let GraphPoint::EdgePoint { edge, x } = &target {
                                if let Some(&cut) = self.barriers.get(edge) {
                                    if *x >= cut {
                                        return Err(SimError::ShadowJumpViolation {
                                            edge: self.graph.edge(*edge).name.clone(),
                                            x: *x,
                                        });
                                    }
                                }
                            }
                            events.push(TrajEvent {
                                t,
                                position: target.clone(),
                                kind: EventKind::Jump,
                            });
                            if stop.is_some_and(|f| f(&target)) {
                                break;
                            }
                            pos = target;
                        }
                        VertexResolution::Trap => unreachable!("handled via infinite duration"),
                    }
                }
                GraphPoint::EdgePoint { edge, x } => {
                    let e = self.graph.edge(edge);
                    let barrier = self.barriers.get(&edge).copied();
                    let (t_next, arrival, is_kill) = match (e.to, barrier) {
                        (Some(to), None) => {
                            let (side, dt) = sample_interval_exit(x, e.length, stream);
                            let target = match side {
                                ExitSide::Lower => GraphPoint::Vertex(e.from),
                                ExitSide::Upper => GraphPoint::Vertex(to),
                            };
                            (t + dt, target, false)
                        }
                        (None, Some(cut)) => {
                            let (side, dt) = sample_interval_exit(x, cut, stream);
                            match side {
                                ExitSide::Lower => (t + dt, GraphPoint::Vertex(e.from), false),
                                ExitSide::Upper => {
                                    (t + dt, GraphPoint::EdgePoint { edge, x: cut }, true)
                                }
                            }
                        }
                        (None, None) => {
                            let dt = sample_one_sided_passage(x, stream);
                            (t + dt, GraphPoint::Vertex(e.from), false)
                        }
                        (Some(_), Some(_)) => {
                            return Err(SimError::InvalidBarrier {
                                edge: e.name.clone(),
                                reason: "barriers are only supported on external edges",
                            })
                        }
                    };
                    if t_next >= horizon {
                        events.push(TrajEvent {
                            t: t_next,
                            position: pos,
                            kind: EventKind::Horizon,
                        });
                        break;
                    }
                    t = t_next;
                    if is_kill {
                        events.push(TrajEvent {
                            t,
                            position: arrival,
                            kind: EventKind::Kill,
                        });
                        break;
                    }
                    events.push(TrajEvent {
                        t,
                        position: arrival.clone(),
                        kind: EventKind::EdgeExit,
                    });
                    if stop.is_some_and(|f| f(&arrival)) {
                        break;
                    }
                    pos = arrival;
                }
            }
        }
        Ok(Trajectory { events })
    }
}

/// One-call form of the direct backend.
pub fn simulate_direct(
    graph: &Arc<MetricGraph>,
    fw: &Arc<FwAssignment<f64>>,
    start: &GraphPoint,
    horizon: f64,
    eps: f64,
    stream: &mut RandomStream,
) -> Result<Trajectory, SimError> {
    DirectGenerator::new(graph.clone(), fw.clone(), eps)?.run(start, horizon, stream)
}
