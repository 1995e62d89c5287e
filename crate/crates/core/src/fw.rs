//! Exact symbolic representation and transformation of Feller-Wentzell
//! boundary data.
//!
//! Per-vertex data consists of a killing weight `p1`, edge-wise reflection
//! weights `p2`, a stickiness weight `p3` and a finite atomic jump measure
//! `p4`. The construction pipeline shuffles mass between these components:
//! restricting jumps to a local ball, converting killing into jumps onto
//! auxiliary points and back, and pushing measures through the subgraph
//! remapping. All transformations are linear in the weights, so they are
//! implemented generically over the weight scalar: `f64` for simulation, and
//! arbitrary-precision rationals when stage-by-stage bookkeeping has to close
//! exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Sub};

use num_rational::BigRational;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::graph::{
    decompose, AuxKey, EdgeId, GraphError, GraphPoint, MetricGraph, Side, SubgraphDecomposition,
    VertexId,
};

/// Tolerance for the floating-point normalization invariant.
pub const NORM_TOL: f64 = 1e-12;

/// Weight scalar for boundary data: plain `f64` or exact rationals.
pub trait Weight:
    Clone
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    /// Exact conversion from an f64 weight (every finite f64 is rational).
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Weight for f64 {
    fn zero() -> f64 {
        0.0
    }
    fn one() -> f64 {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Weight for BigRational {
    fn zero() -> BigRational {
        num_traits::Zero::zero()
    }
    fn one() -> BigRational {
        num_traits::One::one()
    }
    fn is_zero(&self) -> bool {
        num_traits::Zero::is_zero(self)
    }
    fn from_f64(x: f64) -> BigRational {
        BigRational::from_float(x).expect("finite weight")
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Error)]
pub enum FwError {
    #[error("degenerate data: all boundary weights vanish")]
    DegenerateData,
    #[error("pure-jump vertex unsupported: reflection and stickiness vanish but jumps remain")]
    PureJumpUnsupported,
    #[error("normalization violated: weights sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("negative weight {value} in component {component}")]
    NegativeWeight { component: &'static str, value: f64 },
    #[error("jump atom sits at its owning vertex")]
    AtomAtOwner,
    #[error("jump atom with non-positive weight")]
    NonPositiveAtom,
    #[error("p2 refers to edge `{edge}` which is not incident to vertex `{vertex}`")]
    NonIncidentEdge { vertex: String, edge: String },
    #[error("delta {delta} is not smaller than the incident edge length {len} at `{vertex}`")]
    DeltaTooLarge { vertex: String, delta: f64, len: f64 },
    #[error("revival kernel must have total mass 1, found {mass}")]
    KernelNotProbability { mass: f64 },
    #[error("gluing requires killing-free data, but `{vertex}` has p1 = {p1}")]
    KillingInGlueInput { vertex: String, p1: f64 },
    #[error("assignment has {got} vertices, graph has {expected}")]
    AssignmentSizeMismatch { got: usize, expected: usize },
    #[error("pipeline stage `{stage}` failed at vertex `{vertex}`: {message}")]
    Stage {
        stage: &'static str,
        vertex: String,
        message: String,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A finite set of points, matched exactly. Used for absorbing sets: the
/// auxiliary cemeteries and jump-atom targets.
#[derive(Debug, Clone, Default)]
pub struct PointSet {
    points: Vec<GraphPoint>,
}

impl PointSet {
    pub fn new(points: Vec<GraphPoint>) -> PointSet {
        PointSet { points }
    }

    /// The set of all per-vertex fake cemeteries of a graph.
    pub fn vertex_cemeteries(graph: &MetricGraph) -> PointSet {
        PointSet {
            points: graph
                .vertex_ids()
                .map(|v| GraphPoint::Aux(AuxKey::VertexCemetery(graph.vertex_name(v).to_string())))
                .collect(),
        }
    }

    pub fn global_cemetery() -> PointSet {
        PointSet {
            points: vec![GraphPoint::Aux(AuxKey::Global)],
        }
    }

    pub fn contains(&self, p: &GraphPoint) -> bool {
        self.points.iter().any(|q| q == p)
    }

    pub fn points(&self) -> &[GraphPoint] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpAtom<W> {
    pub target: GraphPoint,
    pub weight: W,
}

/// A finite atomic measure on the extended state space. Atoms are kept
/// sorted by a canonical target order and merged on equal targets, so two
/// measures are equal iff they are structurally equal.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasure<W = f64> {
    atoms: Vec<JumpAtom<W>>,
}

impl<W: Weight> Default for JumpMeasure<W> {
    fn default() -> Self {
        JumpMeasure { atoms: Vec::new() }
    }
}

impl<W: Weight> JumpMeasure<W> {
    pub fn empty() -> JumpMeasure<W> {
        JumpMeasure::default()
    }

    pub fn dirac(target: GraphPoint) -> JumpMeasure<W> {
        let mut m = JumpMeasure::empty();
        m.insert(target, W::one());
        m
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = (GraphPoint, W)>) -> JumpMeasure<W> {
        let mut m = JumpMeasure::empty();
        for (target, w) in atoms {
            m.insert(target, w);
        }
        m
    }

    /// Adds mass at a target, merging with an existing atom if present.
    /// Zero-weight insertions are dropped.
    pub fn insert(&mut self, target: GraphPoint, weight: W) {
        if weight.is_zero() {
            return;
        }
        match self
            .atoms
            .binary_search_by(|a| a.target.canonical_cmp(&target))
        {
            Ok(i) => {
                let merged = self.atoms[i].weight.clone() + weight;
                self.atoms[i].weight = merged;
            }
            Err(i) => self.atoms.insert(i, JumpAtom { target, weight }),
        }
    }

    pub fn atoms(&self) -> &[JumpAtom<W>] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> W {
        self.atoms
            .iter()
            .fold(W::zero(), |acc, a| acc + a.weight.clone())
    }

    pub fn mass_on(&self, set: &PointSet) -> W {
        self.atoms
            .iter()
            .filter(|a| set.contains(&a.target))
            .fold(W::zero(), |acc, a| acc + a.weight.clone())
    }

    /// Splits the measure by a predicate on targets: (matching, rest).
    pub fn partition(&self, mut pred: impl FnMut(&GraphPoint) -> bool) -> (JumpMeasure<W>, JumpMeasure<W>) {
        let mut yes = JumpMeasure::empty();
        let mut no = JumpMeasure::empty();
        for a in &self.atoms {
            if pred(&a.target) {
                yes.insert(a.target.clone(), a.weight.clone());
            } else {
                no.insert(a.target.clone(), a.weight.clone());
            }
        }
        (yes, no)
    }

    pub fn scaled(&self, c: &W) -> JumpMeasure<W> {
        JumpMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|a| JumpAtom {
                    target: a.target.clone(),
                    weight: a.weight.clone() * c.clone(),
                })
                .collect(),
        }
    }

    pub fn merged(&self, other: &JumpMeasure<W>) -> JumpMeasure<W> {
        let mut out = self.clone();
        for a in &other.atoms {
            out.insert(a.target.clone(), a.weight.clone());
        }
        out
    }

    /// Pushes every atom through a point map.
    pub fn map_targets(
        &self,
        mut f: impl FnMut(&GraphPoint) -> Result<GraphPoint, GraphError>,
    ) -> Result<JumpMeasure<W>, GraphError> {
        let mut out = JumpMeasure::empty();
        for a in &self.atoms {
            out.insert(f(&a.target)?, a.weight.clone());
        }
        Ok(out)
    }
}

/// Feller-Wentzell boundary data at one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FwData<W = f64> {
    pub p1: W,
    pub p2: BTreeMap<EdgeId, W>,
    pub p3: W,
    pub p4: JumpMeasure<W>,
}

impl<W: Weight> Default for FwData<W> {
    fn default() -> Self {
        FwData {
            p1: W::zero(),
            p2: BTreeMap::new(),
            p3: W::zero(),
            p4: JumpMeasure::empty(),
        }
    }
}

impl<W: Weight> FwData<W> {
    pub fn p2_total(&self) -> W {
        self.p2
            .values()
            .fold(W::zero(), |acc, w| acc + w.clone())
    }

    pub fn map_weights<V: Weight>(&self, f: impl Fn(&W) -> V) -> FwData<V> {
        FwData {
            p1: f(&self.p1),
            p2: self.p2.iter().map(|(k, w)| (*k, f(w))).collect(),
            p3: f(&self.p3),
            p4: JumpMeasure {
                atoms: self
                    .p4
                    .atoms
                    .iter()
                    .map(|a| JumpAtom {
                        target: a.target.clone(),
                        weight: f(&a.weight),
                    })
                    .collect(),
            },
        }
    }
}

impl FwData<f64> {
    /// Convenience constructor used heavily in tests and fixtures.
    pub fn new(
        p1: f64,
        p2: impl IntoIterator<Item = (EdgeId, f64)>,
        p3: f64,
        p4: JumpMeasure<f64>,
    ) -> FwData<f64> {
        FwData {
            p1,
            p2: p2.into_iter().filter(|(_, w)| *w != 0.0).collect(),
            p3,
            p4,
        }
    }
}

/// The normalization integrand mass of a jump measure as seen from `v`:
/// `∫ (1 - e^{-d(v, g)}) dμ(g)` (aux targets count with full weight).
pub fn jump_normalization_mass<W: Weight>(
    graph: &MetricGraph,
    v: VertexId,
    measure: &JumpMeasure<W>,
) -> f64 {
    let from = GraphPoint::Vertex(v);
    measure
        .atoms()
        .iter()
        .map(|a| {
            let d = graph.distance(&from, &a.target);
            let factor = if d.is_infinite() { 1.0 } else { 1.0 - (-d).exp() };
            a.weight.to_f64() * factor
        })
        .sum()
}

/// The full normalization sum `p1 + Σ p2 + p3 + ∫ (1 - e^{-d}) dp4`.
pub fn normalization_sum<W: Weight>(graph: &MetricGraph, v: VertexId, d: &FwData<W>) -> f64 {
    d.p1.to_f64()
        + d.p2_total().to_f64()
        + d.p3.to_f64()
        + jump_normalization_mass(graph, v, &d.p4)
}

/// Structural checks for one vertex's data (signs, incidence, atom targets).
pub fn validate_structure<W: Weight>(
    graph: &MetricGraph,
    v: VertexId,
    d: &FwData<W>,
) -> Result<(), FwError> {
    for (component, w) in [("p1", &d.p1), ("p3", &d.p3)] {
        if w.to_f64() < 0.0 {
            return Err(FwError::NegativeWeight {
                component,
                value: w.to_f64(),
            });
        }
    }
    for (edge, w) in &d.p2 {
        if w.to_f64() < 0.0 {
            return Err(FwError::NegativeWeight {
                component: "p2",
                value: w.to_f64(),
            });
        }
        if !graph.incident_edges(v).contains(edge) {
            return Err(FwError::NonIncidentEdge {
                vertex: graph.vertex_name(v).to_string(),
                edge: graph.edge(*edge).name.clone(),
            });
        }
    }
    let owner = GraphPoint::Vertex(v);
    for a in d.p4.atoms() {
        if a.weight.to_f64() <= 0.0 {
            return Err(FwError::NonPositiveAtom);
        }
        if a.target == owner {
            return Err(FwError::AtomAtOwner);
        }
    }
    Ok(())
}

/// Full validation: structure, normalization within [`NORM_TOL`], and the
/// supported-regime check. Vertices with no reflection and no stickiness are
/// admissible only as pure killing (the pure-jump regime would require an
/// infinite jump measure).
pub fn validate_data<W: Weight>(graph: &MetricGraph, v: VertexId, d: &FwData<W>) -> Result<(), FwError> {
    validate_structure(graph, v, d)?;
    let sum = normalization_sum(graph, v, d);
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(FwError::NotNormalized { sum });
    }
    // Jumps onto auxiliary absorbing points are killing bookkeeping and are
    // exempt: the construction converts pure killing into exactly this form.
    if d.p2_total().is_zero()
        && d.p3.is_zero()
        && d.p4.atoms().iter().any(|a| !a.target.is_aux())
    {
        return Err(FwError::PureJumpUnsupported);
    }
    Ok(())
}

/// Scales raw non-negative data so the normalization sum equals 1. Returns
/// the data together with the normalizing factor `c0`.
pub fn normalize(
    raw: &FwData<f64>,
    graph: &MetricGraph,
    v: VertexId,
) -> Result<(FwData<f64>, f64), FwError> {
    validate_structure(graph, v, raw)?;
    let sum = normalization_sum(graph, v, raw);
    if sum <= 0.0 {
        return Err(FwError::DegenerateData);
    }
    let c0 = 1.0 / sum;
    Ok((raw.map_weights(|w| w * c0), c0))
}

/// The local/far split of one vertex's data at radius `delta`: jumps inside
/// the open ball stay as jumps, everything else (including atoms exactly at
/// distance `delta`) is absorbed into the extended killing weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitLocal<W> {
    pub q1: W,
    pub q4_local: JumpMeasure<W>,
    pub p4_far: JumpMeasure<W>,
}

pub fn split_local<W: Weight>(
    d: &FwData<W>,
    graph: &MetricGraph,
    v: VertexId,
    delta: f64,
) -> Result<SplitLocal<W>, FwError> {
    let min_len = graph.min_incident_length(v);
    if !(delta > 0.0) || delta >= min_len {
        return Err(FwError::DeltaTooLarge {
            vertex: graph.vertex_name(v).to_string(),
            delta,
            len: min_len,
        });
    }
    let from = GraphPoint::Vertex(v);
    let (q4_local, p4_far) = d.p4.partition(|g| graph.distance(&from, g) < delta);
    let q1 = d.p1.clone() + p4_far.total_mass();
    Ok(SplitLocal {
        q1,
        q4_local,
        p4_far,
    })
}

/// Killing on an absorbing point set: jump mass into `F` becomes killing
/// weight, the remaining jump measure is the restriction to the complement.
pub fn kill_transform<W: Weight>(d: &FwData<W>, f_set: &PointSet) -> FwData<W> {
    let (on_f, rest) = d.p4.partition(|g| f_set.contains(g));
    FwData {
        p1: d.p1.clone() + on_f.total_mass(),
        p2: d.p2.clone(),
        p3: d.p3.clone(),
        p4: rest,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReviveOutcome {
    Applied,
    /// Nothing to revive: the killing weight was already zero.
    NoKillingMass,
}

/// Instant revival with a probability kernel: the killing weight becomes an
/// additional jump portion distributed by `kappa`.
pub fn revive_transform<W: Weight>(
    d: &FwData<W>,
    kappa: &JumpMeasure<W>,
) -> Result<(FwData<W>, ReviveOutcome), FwError> {
    if d.p1.is_zero() {
        return Ok((d.clone(), ReviveOutcome::NoKillingMass));
    }
    let mass = kappa.total_mass().to_f64();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(FwError::KernelNotProbability { mass });
    }
    let added = kappa.scaled(&d.p1);
    Ok((
        FwData {
            p1: W::zero(),
            p2: d.p2.clone(),
            p3: d.p3.clone(),
            p4: d.p4.merged(&added),
        },
        ReviveOutcome::Applied,
    ))
}

/// A boundary-data assignment: one [`FwData`] per vertex of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FwAssignment<W = f64> {
    data: Vec<FwData<W>>,
}

impl<W: Weight> FwAssignment<W> {
    pub fn new(graph: &MetricGraph, data: Vec<FwData<W>>) -> Result<FwAssignment<W>, FwError> {
        if data.len() != graph.vertex_count() {
            return Err(FwError::AssignmentSizeMismatch {
                got: data.len(),
                expected: graph.vertex_count(),
            });
        }
        Ok(FwAssignment { data })
    }

    pub fn get(&self, v: VertexId) -> &FwData<W> {
        &self.data[v.0 as usize]
    }

    pub fn get_mut(&mut self, v: VertexId) -> &mut FwData<W> {
        &mut self.data[v.0 as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (VertexId, &FwData<W>)> {
        self.data
            .iter()
            .enumerate()
            .map(|(i, d)| (VertexId(i as u32), d))
    }

    pub fn map_weights<V: Weight>(&self, f: impl Fn(&W) -> V + Copy) -> FwAssignment<V> {
        FwAssignment {
            data: self.data.iter().map(|d| d.map_weights(f)).collect(),
        }
    }

    pub fn validate(&self, graph: &MetricGraph) -> Result<(), FwError> {
        for (v, d) in self.iter() {
            validate_data(graph, v, d)?;
        }
        Ok(())
    }
}

/// Restricts an assignment on the parent graph to one side of a
/// decomposition, remapping reflection keys onto shadow edges and pushing
/// local atoms through the inverse point map. Atoms must lie inside the
/// side's subgraph (aux targets pass through unchanged).
pub fn restrict_assignment<W: Weight>(
    dec: &SubgraphDecomposition,
    parent: &MetricGraph,
    fw: &FwAssignment<W>,
    side: Side,
) -> Result<FwAssignment<W>, FwError> {
    let sub = dec.graph(side);
    let mut data = Vec::with_capacity(sub.vertex_count());
    for cv in sub.vertex_ids() {
        let pv = dec.vertex_to_parent(side, cv);
        let d = fw.get(pv);
        let mut p2 = BTreeMap::new();
        for (edge, w) in &d.p2 {
            let child_edge = if let Some(kept) = dec.edge_from_parent(side, *edge) {
                kept
            } else if let Some(shadow) = dec.part(side).shadow_by_parent.get(edge) {
                *shadow
            } else {
                return Err(FwError::NonIncidentEdge {
                    vertex: parent.vertex_name(pv).to_string(),
                    edge: parent.edge(*edge).name.clone(),
                });
            };
            p2.insert(child_edge, w.clone());
        }
        let p4 = d
            .p4
            .map_targets(|g| dec.phi_point(side, g, parent))?;
        data.push(FwData {
            p1: d.p1.clone(),
            p2,
            p3: d.p3.clone(),
            p4,
        });
    }
    FwAssignment::new(sub, data)
}

/// Gluing of boundary data (the symbolic counterpart of pasting the two
/// subprocesses): reflection weights on shadow edges are reassigned to the
/// original internal edges and jump atoms are pushed forward through the
/// point map. Requires killing-free input data.
pub fn glue_transform<W: Weight>(
    dec: &SubgraphDecomposition,
    parent: &MetricGraph,
    fw_neg: &FwAssignment<W>,
    fw_pos: &FwAssignment<W>,
) -> Result<FwAssignment<W>, FwError> {
    let mut data = vec![FwData::default(); parent.vertex_count()];
    for side in Side::BOTH {
        let fw = match side {
            Side::Neg => fw_neg,
            Side::Pos => fw_pos,
        };
        let sub = dec.graph(side);
        if fw.data.len() != sub.vertex_count() {
            return Err(FwError::AssignmentSizeMismatch {
                got: fw.data.len(),
                expected: sub.vertex_count(),
            });
        }
        for (cv, d) in fw.iter() {
            let pv = dec.vertex_to_parent(side, cv);
            if !d.p1.is_zero() {
                return Err(FwError::KillingInGlueInput {
                    vertex: sub.vertex_name(cv).to_string(),
                    p1: d.p1.to_f64(),
                });
            }
            let mut p2 = BTreeMap::new();
            for (edge, w) in &d.p2 {
                let parent_point = dec.psi_point(
                    side,
                    &GraphPoint::EdgePoint {
                        edge: *edge,
                        x: f64::MIN_POSITIVE,
                    },
                )?;
                let GraphPoint::EdgePoint { edge: pe, .. } = parent_point else {
                    unreachable!()
                };
                p2.insert(pe, w.clone());
            }
            let p4 = d.p4.map_targets(|g| dec.psi_point(side, g))?;
            data[pv.0 as usize] = FwData {
                p1: W::zero(),
                p2,
                p3: d.p3.clone(),
                p4,
            };
        }
    }
    FwAssignment::new(parent, data)
}

/// Labels for the staged boundary-data sequence of the construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageLabel {
    /// Restriction of jumps to the local balls, far mass folded into `q1`.
    LocalSplit,
    /// Killing converted into jumps onto the per-vertex fake cemeteries.
    FakeCemetery,
    /// The same data reassembled through the decomposition machinery.
    Glued,
    /// Killed on the fake cemeteries: `q1` restored.
    KilledFakeCemeteries,
    /// Revived with the global kernels: far jumps and the global point.
    GlobalRevive,
    /// Killed on the global point: the target data.
    Final,
}

impl StageLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::LocalSplit => "local_split",
            StageLabel::FakeCemetery => "fake_cemetery",
            StageLabel::Glued => "glued",
            StageLabel::KilledFakeCemeteries => "killed_fake_cemeteries",
            StageLabel::GlobalRevive => "global_revive",
            StageLabel::Final => "final",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceStage<W = f64> {
    pub label: StageLabel,
    pub assignment: FwAssignment<W>,
    /// Normalizing factors of the local data, recorded at the split stage
    /// (the simulation backend scales its star data by these).
    pub c0: Option<Vec<f64>>,
}

/// Runs the full staged boundary-data sequence for a target assignment and
/// per-vertex split radii. The final stage equals the target: exactly for
/// rational weights, within rounding for `f64`.
pub fn pipeline_trace<W: Weight>(
    graph: &MetricGraph,
    target: &FwAssignment<W>,
    delta: &[f64],
) -> Result<Vec<TraceStage<W>>, FwError> {
    assert_eq!(delta.len(), graph.vertex_count(), "one delta per vertex");
    let mut stages = Vec::new();

    // Stage 1: local split. Also computes the revival kernels and c0 values
    // needed later.
    let mut split_data = Vec::new();
    let mut kernels: Vec<Option<JumpMeasure<W>>> = Vec::new();
    let mut c0s = Vec::new();
    for (v, d) in target.iter() {
        let split = split_local(d, graph, v, delta[v.0 as usize]).map_err(|e| FwError::Stage {
            stage: "local_split",
            vertex: graph.vertex_name(v).to_string(),
            message: e.to_string(),
        })?;
        let local = FwData {
            p1: split.q1.clone(),
            p2: d.p2.clone(),
            p3: d.p3.clone(),
            p4: split.q4_local.clone(),
        };
        c0s.push(1.0 / normalization_sum(graph, v, &local));
        if split.q1.is_zero() {
            kernels.push(None);
        } else {
            let mut kappa = split.p4_far.scaled(&(W::one() / split.q1.clone()));
            if !d.p1.is_zero() {
                kappa.insert(
                    GraphPoint::Aux(AuxKey::Global),
                    d.p1.clone() / split.q1.clone(),
                );
            }
            kernels.push(Some(kappa));
        }
        split_data.push(local);
    }
    let split_assignment = FwAssignment::new(graph, split_data)?;
    stages.push(TraceStage {
        label: StageLabel::LocalSplit,
        assignment: split_assignment.clone(),
        c0: Some(c0s),
    });

    // Stage 2: fake cemeteries. Kill weight q1 becomes a jump onto the
    // per-vertex auxiliary point.
    let mut cemetery_data = Vec::new();
    for (v, d) in split_assignment.iter() {
        let kappa = JumpMeasure::dirac(GraphPoint::Aux(AuxKey::VertexCemetery(
            graph.vertex_name(v).to_string(),
        )));
        let (revived, _) = revive_transform(d, &kappa).map_err(|e| FwError::Stage {
            stage: "fake_cemetery",
            vertex: graph.vertex_name(v).to_string(),
            message: e.to_string(),
        })?;
        cemetery_data.push(revived);
    }
    let cemetery_assignment = FwAssignment::new(graph, cemetery_data)?;
    stages.push(TraceStage {
        label: StageLabel::FakeCemetery,
        assignment: cemetery_assignment.clone(),
        c0: None,
    });

    // Stage 3: glued form, computed by actually pushing the data down the
    // one-vertex-peeling recursion and gluing it back up.
    let glued = glued_roundtrip(graph, &cemetery_assignment).map_err(|e| FwError::Stage {
        stage: "glued",
        vertex: String::new(),
        message: e.to_string(),
    })?;
    stages.push(TraceStage {
        label: StageLabel::Glued,
        assignment: glued.clone(),
        c0: None,
    });

    // Stage 4: kill on the fake cemeteries.
    let cemeteries = PointSet::vertex_cemeteries(graph);
    let killed_data: Vec<FwData<W>> = glued
        .data
        .iter()
        .map(|d| kill_transform(d, &cemeteries))
        .collect();
    let killed = FwAssignment::new(graph, killed_data)?;
    stages.push(TraceStage {
        label: StageLabel::KilledFakeCemeteries,
        assignment: killed.clone(),
        c0: None,
    });

    // Stage 5: revive with the global kernels.
    let mut revived_data = Vec::new();
    for (v, d) in killed.iter() {
        match &kernels[v.0 as usize] {
            Some(kappa) => {
                let (r, _) = revive_transform(d, kappa).map_err(|e| FwError::Stage {
                    stage: "global_revive",
                    vertex: graph.vertex_name(v).to_string(),
                    message: e.to_string(),
                })?;
                revived_data.push(r);
            }
            None => revived_data.push(d.clone()),
        }
    }
    let revived = FwAssignment::new(graph, revived_data)?;
    stages.push(TraceStage {
        label: StageLabel::GlobalRevive,
        assignment: revived.clone(),
        c0: None,
    });

    // Stage 6: kill on the global point.
    let global = PointSet::global_cemetery();
    let final_data: Vec<FwData<W>> = revived
        .data
        .iter()
        .map(|d| kill_transform(d, &global))
        .collect();
    let final_assignment = FwAssignment::new(graph, final_data)?;
    stages.push(TraceStage {
        label: StageLabel::Final,
        assignment: final_assignment,
        c0: None,
    });

    Ok(stages)
}

/// Pushes an assignment down the one-vertex-peeling recursion and glues it
/// back together. The result must equal the input; running it through the
/// actual maps exercises the same bookkeeping the trajectory pipeline uses.
fn glued_roundtrip<W: Weight>(
    graph: &MetricGraph,
    fw: &FwAssignment<W>,
) -> Result<FwAssignment<W>, FwError> {
    if graph.vertex_count() <= 1 {
        return Ok(fw.clone());
    }
    let last = VertexId(graph.vertex_count() as u32 - 1);
    let dec = decompose(graph, &[last])?;
    let mut sides = Vec::new();
    for side in Side::BOTH {
        let sub_fw = restrict_assignment(&dec, graph, fw, side)?;
        sides.push(glued_roundtrip(dec.graph(side), &sub_fw)?);
    }
    let pos = sides.pop().unwrap();
    let neg = sides.pop().unwrap();
    glue_transform(&dec, graph, &neg, &pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        ExternalEdgeDescription, GraphDescription, InternalEdgeDescription, MetricGraph,
    };

    fn one_vertex_star(external: &[&str]) -> MetricGraph {
        MetricGraph::from_description(&GraphDescription {
            vertices: vec!["v".into()],
            internal_edges: vec![],
            external_edges: external
                .iter()
                .map(|id| ExternalEdgeDescription {
                    id: (*id).into(),
                    from: "v".into(),
                })
                .collect(),
        })
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        let g = one_vertex_star(&["e"]);
        let v = g.vertex("v").unwrap();
        let e = g.edge_by_name("e").unwrap();

        let already = FwData::new(0.0, [(e, 1.0)], 0.0, JumpMeasure::empty());
        let (d, c0) = normalize(&already, &g, v).unwrap();
        assert_eq!(c0, 1.0);
        assert_eq!(d, already);

        let raw = FwData::new(1.0, [(e, 1.0)], 0.0, JumpMeasure::empty());
        let (d, c0) = normalize(&raw, &g, v).unwrap();
        assert_eq!(c0, 0.5);
        assert_eq!(d.p1, 0.5);
        assert_eq!(d.p2[&e], 0.5);

        // Atom at distance ln 2 contributes weight * (1 - 1/2).
        let atom = GraphPoint::EdgePoint {
            edge: e,
            x: std::f64::consts::LN_2,
        };
        let raw = FwData::new(
            0.0,
            [(e, 1.0)],
            0.0,
            JumpMeasure::from_atoms([(atom, 2.0)]),
        );
        let (_, c0) = normalize(&raw, &g, v).unwrap();
        assert!((c0 - 0.5).abs() < 1e-15);

        let zero = FwData::new(0.0, [], 0.0, JumpMeasure::empty());
        assert!(matches!(
            normalize(&zero, &g, v),
            Err(FwError::DegenerateData)
        ));
    }

    #[test]
    fn split_local_examples() {
        let g = one_vertex_star(&["e"]);
        let v = g.vertex("v").unwrap();
        let e = g.edge_by_name("e").unwrap();

        let empty = FwData::new(0.1, [(e, 0.9)], 0.0, JumpMeasure::empty());
        let s = split_local(&empty, &g, v, 1.0).unwrap();
        assert_eq!(s.q1, 0.1);
        assert!(s.q4_local.is_empty() && s.p4_far.is_empty());

        let near = GraphPoint::EdgePoint { edge: e, x: 0.2 };
        let far = GraphPoint::EdgePoint { edge: e, x: 5.0 };
        let d = FwData::new(
            0.1,
            [(e, 0.5)],
            0.0,
            JumpMeasure::from_atoms([(near.clone(), 0.3), (far.clone(), 0.4)]),
        );
        let s = split_local(&d, &g, v, 1.0).unwrap();
        assert!((s.q1 - 0.5).abs() < 1e-15);
        assert_eq!(s.q4_local.atoms().len(), 1);
        assert_eq!(s.q4_local.atoms()[0].target, near);
        assert_eq!(s.p4_far.atoms()[0].target, far);
        // Mass conservation.
        let total = d.p4.total_mass();
        assert_eq!(s.q4_local.total_mass() + s.p4_far.total_mass(), total);

        // Atom exactly at distance delta goes to the far part (open ball).
        let at_delta = GraphPoint::EdgePoint { edge: e, x: 1.0 };
        let d = FwData::new(
            0.0,
            [(e, 0.5)],
            0.0,
            JumpMeasure::from_atoms([(at_delta, 0.5)]),
        );
        let s = split_local(&d, &g, v, 1.0).unwrap();
        assert!(s.q4_local.is_empty());
        assert_eq!(s.p4_far.total_mass(), 0.5);
    }

    #[test]
    fn split_local_rejects_large_delta() {
        let g = MetricGraph::from_description(&GraphDescription {
            vertices: vec!["a".into(), "b".into()],
            internal_edges: vec![InternalEdgeDescription {
                id: "i".into(),
                from: "a".into(),
                to: "b".into(),
                length: 0.5,
            }],
            external_edges: vec![],
        })
        .unwrap();
        let v = g.vertex("a").unwrap();
        let d = FwData::new(1.0, [], 0.0, JumpMeasure::empty());
        assert!(matches!(
            split_local(&d, &g, v, 0.5),
            Err(FwError::DeltaTooLarge { .. })
        ));
    }

    #[test]
    fn kill_transform_examples() {
        let g = one_vertex_star(&["e"]);
        let e = g.edge_by_name("e").unwrap();
        let boxed = GraphPoint::Aux(AuxKey::VertexCemetery("v".into()));
        let gpt = GraphPoint::EdgePoint { edge: e, x: 2.0 };
        let d = FwData::new(
            0.1,
            [(e, 0.4)],
            0.0,
            JumpMeasure::from_atoms([(boxed.clone(), 0.3), (gpt.clone(), 0.2)]),
        );
        let f = PointSet::new(vec![boxed.clone()]);
        let killed = kill_transform(&d, &f);
        assert!((killed.p1 - 0.4).abs() < 1e-15);
        assert_eq!(killed.p4.atoms().len(), 1);
        assert_eq!(killed.p4.atoms()[0].target, gpt);

        // Disjoint set leaves the data unchanged.
        let f = PointSet::new(vec![GraphPoint::Aux(AuxKey::Global)]);
        assert_eq!(kill_transform(&d, &f), d);

        // Killing on all atoms empties the measure.
        let f = PointSet::new(vec![boxed, gpt]);
        let killed = kill_transform(&d, &f);
        assert!((killed.p1 - 0.6).abs() < 1e-15);
        assert!(killed.p4.is_empty());
    }

    #[test]
    fn revive_transform_examples() {
        let g = one_vertex_star(&["e"]);
        let e = g.edge_by_name("e").unwrap();
        let square = GraphPoint::Aux(AuxKey::Global);
        let h = GraphPoint::EdgePoint { edge: e, x: 3.0 };

        let d = FwData::new(0.4, [(e, 0.6)], 0.0, JumpMeasure::empty());
        let (r, out) = revive_transform(&d, &JumpMeasure::dirac(square.clone())).unwrap();
        assert_eq!(out, ReviveOutcome::Applied);
        assert_eq!(r.p1, 0.0);
        assert_eq!(r.p4.atoms()[0].weight, 0.4);

        let kappa = JumpMeasure::from_atoms([(square.clone(), 0.25), (h.clone(), 0.75)]);
        let (r, _) = revive_transform(&d, &kappa).unwrap();
        assert!((r.p4.mass_on(&PointSet::new(vec![square])) - 0.1).abs() < 1e-15);
        assert!((r.p4.mass_on(&PointSet::new(vec![h.clone()])) - 0.3).abs() < 1e-15);

        // Kernel atom coinciding with an existing target merges weights.
        let d = FwData::new(
            0.4,
            [(e, 0.4)],
            0.0,
            JumpMeasure::from_atoms([(h.clone(), 0.2)]),
        );
        let (r, _) = revive_transform(&d, &JumpMeasure::dirac(h.clone())).unwrap();
        assert_eq!(r.p4.atoms().len(), 1);
        assert!((r.p4.atoms()[0].weight - 0.6).abs() < 1e-15);

        // p1 = 0 is a no-op.
        let d = FwData::new(0.0, [(e, 1.0)], 0.0, JumpMeasure::empty());
        let (r, out) = revive_transform(&d, &JumpMeasure::dirac(h)).unwrap();
        assert_eq!(out, ReviveOutcome::NoKillingMass);
        assert_eq!(r, d);
    }

    #[test]
    fn kill_and_revive_preserve_normalization_at_infinite_distance() {
        // Atoms on aux points contribute their full weight to the
        // normalization sum, exactly like killing weight, so killing on them
        // and reviving onto them both keep the sum at 1.
        let g = one_vertex_star(&["e"]);
        let v = g.vertex("v").unwrap();
        let e = g.edge_by_name("e").unwrap();
        let boxed = GraphPoint::Aux(AuxKey::VertexCemetery("v".into()));
        let d = FwData::new(
            0.2,
            [(e, 0.5)],
            0.0,
            JumpMeasure::from_atoms([(boxed.clone(), 0.3)]),
        );
        assert!((normalization_sum(&g, v, &d) - 1.0).abs() < 1e-15);
        let killed = kill_transform(&d, &PointSet::new(vec![boxed.clone()]));
        assert!((normalization_sum(&g, v, &killed) - 1.0).abs() < 1e-15);
        let (revived, _) = revive_transform(&killed, &JumpMeasure::dirac(boxed)).unwrap();
        assert!((normalization_sum(&g, v, &revived) - 1.0).abs() < 1e-15);
    }

    fn two_vertex_graph() -> MetricGraph {
        MetricGraph::from_description(&GraphDescription {
            vertices: vec!["a".into(), "b".into()],
            internal_edges: vec![InternalEdgeDescription {
                id: "i".into(),
                from: "a".into(),
                to: "b".into(),
                length: 1.0,
            }],
            external_edges: vec![
                ExternalEdgeDescription {
                    id: "ea".into(),
                    from: "a".into(),
                },
                ExternalEdgeDescription {
                    id: "eb".into(),
                    from: "b".into(),
                },
            ],
        })
        .unwrap()
    }

    #[test]
    fn glue_reassigns_shadow_reflection_and_pushes_atoms() {
        let g = two_vertex_graph();
        let i = g.edge_by_name("i").unwrap();
        let b = g.vertex("b").unwrap();
        let dec = decompose(&g, &[b]).unwrap();

        // Build killing-free data on the parent with reflection on the
        // crossing edge and an atom on it; restrict then glue must recover it.
        let atom = GraphPoint::EdgePoint { edge: i, x: 0.25 };
        let mk = |edge_self: &str, vertex: &str| {
            let es = g.edge_by_name(edge_self).unwrap();
            FwData::new(
                0.0,
                [(es, 0.4), (i, 0.4)],
                0.1,
                JumpMeasure::from_atoms([(atom.clone(), if vertex == "a" { 0.3 } else { 0.2 })]),
            )
        };
        let fw = FwAssignment::new(&g, vec![mk("ea", "a"), mk("eb", "b")]).unwrap();
        let neg = restrict_assignment(&dec, &g, &fw, Side::Neg).unwrap();
        let pos = restrict_assignment(&dec, &g, &fw, Side::Pos).unwrap();

        // Side +1 sees the crossing atom at the reversed coordinate.
        let sub_pos = dec.graph(Side::Pos);
        let vb = sub_pos.vertex("b").unwrap();
        let shadow_atom = &pos.get(vb).p4.atoms()[0];
        let GraphPoint::EdgePoint { x, .. } = shadow_atom.target else {
            panic!()
        };
        assert!((x - 0.75).abs() < 1e-15);

        let glued = glue_transform(&dec, &g, &neg, &pos).unwrap();
        assert_eq!(glued, fw);
    }

    #[test]
    fn glue_without_shadow_edges_passes_through() {
        let g = MetricGraph::from_description(&GraphDescription {
            vertices: vec!["a".into(), "b".into()],
            internal_edges: vec![],
            external_edges: vec![
                ExternalEdgeDescription {
                    id: "ea".into(),
                    from: "a".into(),
                },
                ExternalEdgeDescription {
                    id: "eb".into(),
                    from: "b".into(),
                },
            ],
        })
        .unwrap();
        let dec = decompose(&g, &[g.vertex("b").unwrap()]).unwrap();
        let ea = g.edge_by_name("ea").unwrap();
        let eb = g.edge_by_name("eb").unwrap();
        let fw = FwAssignment::new(
            &g,
            vec![
                FwData::new(0.0, [(ea, 1.0)], 0.0, JumpMeasure::empty()),
                FwData::new(0.0, [(eb, 0.5)], 0.5, JumpMeasure::empty()),
            ],
        )
        .unwrap();
        let neg = restrict_assignment(&dec, &g, &fw, Side::Neg).unwrap();
        let pos = restrict_assignment(&dec, &g, &fw, Side::Pos).unwrap();
        assert_eq!(glue_transform(&dec, &g, &neg, &pos).unwrap(), fw);
    }

    #[test]
    fn glue_rejects_killing() {
        let g = two_vertex_graph();
        let dec = decompose(&g, &[g.vertex("b").unwrap()]).unwrap();
        let sub = dec.graph(Side::Neg);
        let bad = FwAssignment::new(
            sub,
            vec![FwData::new(0.5, [], 0.5, JumpMeasure::empty())],
        )
        .unwrap();
        let ok = FwAssignment::new(
            dec.graph(Side::Pos),
            vec![FwData::new(0.0, [], 1.0, JumpMeasure::empty())],
        )
        .unwrap();
        assert!(matches!(
            glue_transform(&dec, &g, &bad, &ok),
            Err(FwError::KillingInGlueInput { .. })
        ));
    }

    #[test]
    fn pipeline_trace_local_only_is_identity_chain() {
        let g = one_vertex_star(&["e"]);
        let e = g.edge_by_name("e").unwrap();
        let near = GraphPoint::EdgePoint { edge: e, x: 0.2 };
        let fw = FwAssignment::new(
            &g,
            vec![FwData::new(
                0.0,
                [(e, 0.9)],
                0.0,
                JumpMeasure::from_atoms([(near, 0.1 / (1.0 - (-0.2f64).exp()))]),
            )],
        )
        .unwrap();
        // Make the data exactly normalized before tracing.
        let (d, _) = normalize(fw.get(VertexId(0)), &g, VertexId(0)).unwrap();
        let fw = FwAssignment::new(&g, vec![d]).unwrap();
        let stages = pipeline_trace(&g, &fw, &[1.0]).unwrap();
        assert_eq!(stages.len(), 6);
        // With no killing and no far atoms every stage carries the target.
        for stage in &stages {
            assert_eq!(stage.assignment, fw, "stage {:?}", stage.label);
        }
        // c0 = 1 for already-normalized local data.
        let c0 = stages[0].c0.as_ref().unwrap();
        assert!((c0[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pipeline_trace_restores_target_with_far_atoms() {
        let g = two_vertex_graph();
        let i = g.edge_by_name("i").unwrap();
        let ea = g.edge_by_name("ea").unwrap();
        let eb = g.edge_by_name("eb").unwrap();
        let va = g.vertex("a").unwrap();
        let vb = g.vertex("b").unwrap();
        // Vertex a: killing, reflection, and a far atom near b.
        let far = GraphPoint::EdgePoint { edge: i, x: 0.9 };
        let raw_a = FwData::new(
            0.2,
            [(ea, 0.4), (i, 0.3)],
            0.05,
            JumpMeasure::from_atoms([(far, 0.25)]),
        );
        let raw_b = FwData::new(0.0, [(eb, 0.5), (i, 0.5)], 0.1, JumpMeasure::empty());
        let (da, _) = normalize(&raw_a, &g, va).unwrap();
        let (db, _) = normalize(&raw_b, &g, vb).unwrap();
        let target = FwAssignment::new(&g, vec![da, db]).unwrap();
        let stages = pipeline_trace(&g, &target, &[0.45, 0.45]).unwrap();
        let final_stage = &stages[5];
        assert_eq!(final_stage.label, StageLabel::Final);
        // f64 route: equality within rounding.
        for (v, d) in final_stage.assignment.iter() {
            let t = target.get(v);
            assert!((d.p1 - t.p1).abs() < 1e-12);
            assert!((d.p3 - t.p3).abs() < 1e-12);
            for (k, w) in &d.p2 {
                assert!((w - t.p2[k]).abs() < 1e-12);
            }
            assert_eq!(d.p4.atoms().len(), t.p4.atoms().len());
            for (x, y) in d.p4.atoms().iter().zip(t.p4.atoms()) {
                assert_eq!(x.target, y.target);
                assert!((x.weight - y.weight).abs() < 1e-12);
            }
        }
        // Killed stage restores q1: vertex a's killing is p1 + far mass.
        let killed = &stages[3];
        let far_mass = target.get(va).p4.total_mass();
        assert!((killed.assignment.get(va).p1 - (target.get(va).p1 + far_mass)).abs() < 1e-12);
    }

    #[test]
    fn pipeline_trace_exact_in_rationals() {
        let g = two_vertex_graph();
        let i = g.edge_by_name("i").unwrap();
        let ea = g.edge_by_name("ea").unwrap();
        let eb = g.edge_by_name("eb").unwrap();
        let far = GraphPoint::EdgePoint { edge: i, x: 0.9 };
        // Deliberately non-normalized rational data: the trace algebra never
        // requires normalization.
        let da = FwData::new(
            0.125,
            [(ea, 0.5), (i, 0.25)],
            0.0625,
            JumpMeasure::from_atoms([(far, 0.3)]),
        );
        let db = FwData::new(0.25, [(eb, 0.75), (i, 0.5)], 0.125, JumpMeasure::empty());
        let target_f = FwAssignment::new(&g, vec![da, db]).unwrap();
        let target: FwAssignment<BigRational> =
            target_f.map_weights(|w| BigRational::from_f64(*w));
        let stages = pipeline_trace(&g, &target, &[0.45, 0.45]).unwrap();
        assert_eq!(stages[5].assignment, target);
    }
}
