//! Statistical verification harness: closed-form first-passage oracles,
//! empirical recovery of boundary data from simulated exits, and two-sample
//! tests for backend equivalence.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::fw::{jump_normalization_mass, FwData, JumpMeasure};
use crate::graph::{EdgeId, GraphPoint, VertexId};
use crate::pipeline::ProcessGenerator;
use crate::sampler::{EventKind, SimError};
use crate::stream::RandomStream;

/// Outcome of one statistical check.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub pass: bool,
    pub level: f64,
    pub samples: Vec<usize>,
    pub runtime_ms: u128,
    pub detail: String,
}

impl TestReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialization")
    }
}

impl fmt::Display for TestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<44} {:>10.5} {:>8} {:>6} {:>7} ms  {}",
            self.name,
            self.statistic,
            self.p_value
                .map(|p| format!("{p:.4}"))
                .unwrap_or_else(|| "-".into()),
            if self.pass { "pass" } else { "FAIL" },
            self.runtime_ms,
            self.detail
        )
    }
}

/// Closed-form Laplace functional of the interval exit:
/// `E_x[e^{-α τ_0}; τ_0 < τ_R] = sinh(√(2α)(R-x)) / sinh(√(2α) R)`,
/// and mirrored for the upper endpoint.
pub fn sinh_exit_functional(alpha: f64, x: f64, r: f64, lower: bool) -> f64 {
    let c = (2.0 * alpha).sqrt();
    let y = if lower { r - x } else { x };
    if alpha == 0.0 {
        return y / r;
    }
    (c * y).sinh() / (c * r).sinh()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_unstable_by(|p, q| p.total_cmp(q));
    ys.sort_unstable_by(|p, q| p.total_cmp(q));
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    d
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ (-1)^{k-1} e^{-2 k² λ²}`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, thiserror::Error)]
pub enum StatError {
    #[error("empty sample")]
    EmptySample,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64], level: f64) -> Result<TestReport, StatError> {
    let started = Instant::now();
    if a.is_empty() || b.is_empty() {
        return Err(StatError::EmptySample);
    }
    let d = ks_statistic(a, b);
    let n_eff = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let p = kolmogorov_tail(n_eff.sqrt() * d);
    Ok(TestReport {
        name: "ks_two_sample".into(),
        statistic: d,
        p_value: Some(p),
        pass: p >= level,
        level,
        samples: vec![a.len(), b.len()],
        runtime_ms: started.elapsed().as_millis(),
        detail: format!("D = {d:.5}"),
    })
}

/// Chi-square homogeneity test on aligned category counts of two samples.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64], level: f64) -> Result<TestReport, StatError> {
    let started = Instant::now();
    assert_eq!(a.len(), b.len(), "category vectors must align");
    let ta: u64 = a.iter().sum();
    let tb: u64 = b.iter().sum();
    if ta == 0 || tb == 0 {
        return Err(StatError::EmptySample);
    }
    let total = (ta + tb) as f64;
    let mut stat = 0.0;
    let mut dof: i64 = -1;
    for k in 0..a.len() {
        let col = (a[k] + b[k]) as f64;
        if col == 0.0 {
            continue;
        }
        dof += 1;
        let ea = col * ta as f64 / total;
        let eb = col * tb as f64 / total;
        stat += (a[k] as f64 - ea).powi(2) / ea + (b[k] as f64 - eb).powi(2) / eb;
    }
    let p = if dof <= 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat)
    };
    Ok(TestReport {
        name: "chi_square_homogeneity".into(),
        statistic: stat,
        p_value: Some(p),
        pass: p >= level,
        level,
        samples: vec![ta as usize, tb as usize],
        runtime_ms: started.elapsed().as_millis(),
        detail: format!("dof = {}", dof.max(0)),
    })
}

/// How one path first left the ball around a vertex. Categories are keyed
/// by the exit *position*, not the producing event kind, so the two backends
/// (whose skeletons use different event kinds for the same transition) fall
/// into comparable buckets.
#[derive(Debug, Clone, PartialEq)]
pub enum ExitCategory {
    /// Exit through an edge at distance exactly epsilon (a shell placement).
    Edge(EdgeId),
    Kill,
    /// Any other exit location: jump targets, vertex arrivals.
    Location(GraphPoint),
    /// Horizon reached without leaving the ball.
    Trapped,
}

#[derive(Debug, Clone)]
pub struct ExitSample {
    pub time: f64,
    pub category: ExitCategory,
}

/// Runs `n` paths from a vertex until they first leave the epsilon-ball (or
/// die, or exhaust the internal horizon) and records time and category.
///
/// The recovery formulas of [`empirical_exit_law`] assume `eps` matches the
/// generator's own shell radius; for larger radii the samples are still
/// well-defined skeleton functionals (used for backend comparisons).
pub fn exit_samples(
    p: &dyn ProcessGenerator,
    v: VertexId,
    eps: f64,
    n: usize,
    stream: &RandomStream,
) -> Result<Vec<ExitSample>, SimError> {
    let graph = p.graph().clone();
    let center = GraphPoint::Vertex(v);
    let threshold = eps * (1.0 - 1e-12);
    let stop_graph = graph.clone();
    let stop = move |pos: &GraphPoint| stop_graph.distance(&center, pos) >= threshold;
    // Exits happen within the first few events; the horizon only bounds
    // pathological configurations (traps are detected on their first event).
    let horizon = (1e3 * eps * eps).max(1.0);
    let start = GraphPoint::Vertex(v);
    let shell_tol = 1e-9 * eps.max(1.0);
    (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut s = stream.child(k);
            let traj = p.run_stopped(&start, horizon, &mut s, Some(&stop))?;
            let last = traj.last();
            let category = match last.kind {
                EventKind::Kill => ExitCategory::Kill,
                EventKind::Horizon => ExitCategory::Trapped,
                _ => match &last.position {
                    GraphPoint::EdgePoint { edge, .. }
                        if (graph.distance(&GraphPoint::Vertex(v), &last.position) - eps).abs()
                            <= shell_tol =>
                    {
                        ExitCategory::Edge(*edge)
                    }
                    other => ExitCategory::Location(other.clone()),
                },
            };
            Ok(ExitSample {
                time: last.t,
                category,
            })
        })
        .collect()
}

/// Recovered boundary data with rough per-component standard errors.
#[derive(Debug, Clone)]
pub struct RecoveredData {
    pub p1: (f64, f64),
    pub p2: BTreeMap<EdgeId, (f64, f64)>,
    pub p3: (f64, f64),
    pub jumps: Vec<(GraphPoint, f64, f64)>,
    /// Set when paths overwhelmingly fail to leave the ball (p3 -> infinity).
    pub trap: bool,
}

/// Empirical exit-law estimate at one vertex: outcome frequencies, the mean
/// exit time, and the boundary data recovered by inverting the first-order
/// epsilon-shell contracts (edge frequencies scale with p2, kill and jump
/// frequencies with `ε p1` and `ε w`, the excess mean exit time with p3).
#[derive(Debug, Clone)]
pub struct ExitLawEstimate {
    pub vertex: VertexId,
    pub eps: f64,
    pub paths: usize,
    pub mean_exit_time: f64,
    pub exit_time_se: f64,
    pub edge_freq: BTreeMap<EdgeId, (f64, f64)>,
    pub kill_freq: (f64, f64),
    pub jump_freq: Vec<(GraphPoint, f64, f64)>,
    pub trapped_fraction: f64,
    pub recovered: RecoveredData,
}

pub fn empirical_exit_law(
    p: &dyn ProcessGenerator,
    v: VertexId,
    eps: f64,
    n: usize,
    stream: &RandomStream,
) -> Result<ExitLawEstimate, SimError> {
    let samples = exit_samples(p, v, eps, n, stream)?;
    let graph = p.graph().clone();
    let nf = n as f64;
    let binom_se = |f: f64| (f * (1.0 - f) / nf).sqrt();

    let mut edge_counts: BTreeMap<EdgeId, usize> = BTreeMap::new();
    let mut jump_counts: Vec<(GraphPoint, usize)> = Vec::new();
    let mut kills = 0usize;
    let mut trapped = 0usize;
    let (mut t_sum, mut t_sq) = (0.0, 0.0);
    for s in &samples {
        t_sum += s.time;
        t_sq += s.time * s.time;
        match &s.category {
            ExitCategory::Edge(e) => *edge_counts.entry(*e).or_insert(0) += 1,
            ExitCategory::Kill => kills += 1,
            ExitCategory::Trapped => trapped += 1,
            ExitCategory::Location(g) => {
                match jump_counts.iter_mut().find(|(target, _)| target == g) {
                    Some((_, c)) => *c += 1,
                    None => jump_counts.push((g.clone(), 1)),
                }
            }
        }
    }
    jump_counts.sort_by(|(a, _), (b, _)| a.canonical_cmp(b));
    let mean_exit_time = t_sum / nf;
    let exit_time_se = ((t_sq / nf - mean_exit_time * mean_exit_time).max(0.0) / nf).sqrt();

    let edge_freq: BTreeMap<EdgeId, (f64, f64)> = edge_counts
        .iter()
        .map(|(e, c)| {
            let f = *c as f64 / nf;
            (*e, (f, binom_se(f)))
        })
        .collect();
    let kill_f = kills as f64 / nf;
    let kill_freq = (kill_f, binom_se(kill_f));
    let jump_freq: Vec<(GraphPoint, f64, f64)> = jump_counts
        .iter()
        .map(|(g, c)| {
            let f = *c as f64 / nf;
            (g.clone(), f, binom_se(f))
        })
        .collect();
    let trapped_fraction = trapped as f64 / nf;

    // Invert the first-order contracts, then renormalize to FW scale.
    let trap = trapped_fraction > 0.5;
    let p2_scale: f64 = edge_freq.values().map(|(f, _)| f).sum();
    let u1 = (kill_freq.0 / eps, kill_freq.1 / eps);
    let u4: Vec<(GraphPoint, f64, f64)> = jump_freq
        .iter()
        .map(|(g, f, se)| (g.clone(), f / eps, se / eps))
        .collect();
    let u3 = (
        ((mean_exit_time - eps * eps) / eps * p2_scale).max(0.0),
        exit_time_se / eps * p2_scale,
    );
    let norm_measure = JumpMeasure::from_atoms(u4.iter().map(|(g, f, _)| (g.clone(), *f)));
    let jump_norm = jump_normalization_mass(&graph, v, &norm_measure);
    let total = u1.0 + p2_scale + u3.0 + jump_norm;
    let scale = if total > 0.0 && !trap { 1.0 / total } else { 1.0 };
    let recovered = RecoveredData {
        p1: (u1.0 * scale, u1.1 * scale),
        p2: edge_freq
            .iter()
            .map(|(e, (f, se))| (*e, (f * scale, se * scale)))
            .collect(),
        p3: if trap {
            (f64::INFINITY, f64::INFINITY)
        } else {
            (u3.0 * scale, u3.1 * scale)
        },
        jumps: u4
            .iter()
            .map(|(g, f, se)| (g.clone(), f * scale, se * scale))
            .collect(),
        trap,
    };

    Ok(ExitLawEstimate {
        vertex: v,
        eps,
        paths: n,
        mean_exit_time,
        exit_time_se,
        edge_freq,
        kill_freq,
        jump_freq,
        trapped_fraction,
        recovered,
    })
}

/// Compares the empirical Laplace functionals `Ê[e^{-α τ}; exit side]` of a
/// generator started inside an internal edge against the closed-form sinh
/// expressions, at three standard errors per side.
pub fn laplace_exit_check(
    p: &dyn ProcessGenerator,
    edge: EdgeId,
    x: f64,
    alpha: f64,
    n: usize,
    stream: &RandomStream,
) -> Result<TestReport, StatError> {
    let started = Instant::now();
    let graph = p.graph().clone();
    let e = graph.edge(edge);
    let r = e.length;
    assert!(!e.is_external(), "interval checks need an internal edge");
    assert!(x > 0.0 && x < r, "start must be strictly inside the edge");
    let (lo, hi) = (e.from, e.to.unwrap());
    let stop = move |pos: &GraphPoint| matches!(pos, GraphPoint::Vertex(v) if *v == lo || *v == hi);
    let horizon = 50.0 * r * r;
    let start = GraphPoint::EdgePoint { edge, x };
    let results: Result<Vec<(bool, f64)>, SimError> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut s = stream.child(k);
            let traj = p.run_stopped(&start, horizon, &mut s, Some(&stop))?;
            let last = traj.last();
            let lower = last.position == GraphPoint::Vertex(lo);
            Ok((lower, last.t))
        })
        .collect();
    let results = results?;
    let nf = n as f64;
    let mut worst_z = 0.0f64;
    let mut detail = String::new();
    for lower in [true, false] {
        let target = sinh_exit_functional(alpha, x, r, lower);
        let (mut sum, mut sq) = (0.0, 0.0);
        for (side_lower, t) in &results {
            let val = if *side_lower == lower {
                (-alpha * t).exp()
            } else {
                0.0
            };
            sum += val;
            sq += val * val;
        }
        let mean = sum / nf;
        let se = ((sq / nf - mean * mean).max(0.0) / nf).sqrt();
        let z = (mean - target).abs() / se.max(1e-300);
        worst_z = worst_z.max(z);
        detail.push_str(&format!(
            "{}: {:.5} vs {:.5} (z={:.2}) ",
            if lower { "lo" } else { "hi" },
            mean,
            target,
            z
        ));
    }
    Ok(TestReport {
        name: format!("laplace_exit[{} x={x} a={alpha}]", e.name),
        statistic: worst_z,
        p_value: None,
        pass: worst_z <= 3.0,
        level: 3.0,
        samples: vec![n],
        runtime_ms: started.elapsed().as_millis(),
        detail,
    })
}

/// A per-edge quadratic test function around a vertex: its value at the
/// vertex, directional slope and curvature per incident edge, and a constant
/// value assumed at far jump targets (the default keeps jumps neutral).
#[derive(Debug, Clone)]
pub struct TestFunctionSpec {
    pub value: f64,
    pub slope: BTreeMap<EdgeId, f64>,
    pub curvature: BTreeMap<EdgeId, f64>,
    pub far_value: f64,
}

impl TestFunctionSpec {
    pub fn constant(value: f64) -> TestFunctionSpec {
        TestFunctionSpec {
            value,
            slope: BTreeMap::new(),
            curvature: BTreeMap::new(),
            far_value: value,
        }
    }

    fn eval(
        &self,
        graph: &crate::graph::MetricGraph,
        v: VertexId,
        category: &ExitCategory,
        eps: f64,
    ) -> f64 {
        match category {
            ExitCategory::Kill => 0.0,
            ExitCategory::Trapped => self.value,
            ExitCategory::Edge(e) => {
                let s = self.slope.get(e).copied().unwrap_or(0.0);
                let c = self.curvature.get(e).copied().unwrap_or(0.0);
                self.value + s * eps + 0.5 * c * eps * eps
            }
            ExitCategory::Location(g) => {
                // Local landing points use the quadratic; anything farther
                // takes the declared far value.
                let d = graph.distance(&GraphPoint::Vertex(v), g);
                if let GraphPoint::EdgePoint { edge, .. } = g {
                    if d <= 2.0 * eps {
                        let s = self.slope.get(edge).copied().unwrap_or(0.0);
                        let c = self.curvature.get(edge).copied().unwrap_or(0.0);
                        return self.value + s * d + 0.5 * c * d * d;
                    }
                }
                self.far_value
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualPrediction {
    Finite(f64),
    /// First-order mass does not cancel and no stickiness damps it: the
    /// residual diverges like 1/eps with this sign.
    Divergent(f64),
}

#[derive(Debug, Clone)]
pub struct ResidualEstimate {
    /// (eps, estimate, standard error) along the schedule.
    pub per_eps: Vec<(f64, f64, f64)>,
    pub extrapolated: f64,
    pub extrapolated_se: f64,
    pub prediction: ResidualPrediction,
    pub report: TestReport,
}

/// A backend constructor per shell radius: estimators sweeping an epsilon
/// schedule rebuild the generator at each scale, since the shell scheme only
/// exposes exit data at its own resolution.
pub type GeneratorFactory<'a> =
    dyn Fn(f64) -> Result<std::sync::Arc<dyn ProcessGenerator>, SimError> + Sync + 'a;

/// Estimates the Dynkin ratio `[Ê_v f(X_{τ_ε}) - f(v)] / Ê_v[τ_ε]` along an
/// epsilon schedule, Richardson-extrapolates the two smallest values, and
/// compares against the first-order prediction from the configured data:
/// with stickiness the limit is `κ_f / p3` for
/// `κ_f = -p1 f(v) + Σ p2^l f_l'(v) + Σ w_k (f(g_k) - f(v))`; without it the
/// limit is `Σ p2^l f_l''(v) / (2 Σ p2)` provided `κ_f = 0`, and divergent
/// otherwise.
pub fn generator_residual(
    make: &GeneratorFactory,
    f: &TestFunctionSpec,
    d: &FwData<f64>,
    v: VertexId,
    eps_schedule: &[f64],
    n: usize,
    stream: &RandomStream,
) -> Result<ResidualEstimate, StatError> {
    let started = Instant::now();
    assert!(
        eps_schedule.len() >= 2,
        "need at least two epsilon values to extrapolate"
    );
    let mut graph = None;
    let mut per_eps = Vec::new();
    for (i, &eps) in eps_schedule.iter().enumerate() {
        let p = make(eps)?;
        let graph = graph.get_or_insert_with(|| p.graph().clone()).clone();
        let samples = exit_samples(p.as_ref(), v, eps, n, &stream.child(i as u64))?;
        let nf = samples.len() as f64;
        let (mut num_sum, mut num_sq, mut t_sum) = (0.0, 0.0, 0.0);
        for s in &samples {
            let val = f.eval(&graph, v, &s.category, eps) - f.value;
            num_sum += val;
            num_sq += val * val;
            t_sum += s.time;
        }
        let num_mean = num_sum / nf;
        let num_se = ((num_sq / nf - num_mean * num_mean).max(0.0) / nf).sqrt();
        let t_mean = t_sum / nf;
        let m = num_mean / t_mean;
        let se = num_se / t_mean;
        per_eps.push((eps, m, se));
    }
    let graph = graph.expect("schedule is non-empty");
    // Richardson on the two smallest epsilon values (the schedule is given
    // in decreasing order).
    let k = per_eps.len();
    let (e2, m2, se2) = per_eps[k - 2];
    let (e1, m1, se1) = per_eps[k - 1];
    assert!(e1 < e2, "epsilon schedule must be strictly decreasing");
    let r = e2 / e1;
    let extrapolated = (r * m1 - m2) / (r - 1.0);
    let extrapolated_se = (r * se1 + se2) / (r - 1.0);

    // First-order prediction from the configured boundary data.
    let p2_total = d.p2_total();
    let mut kappa = -d.p1 * f.value;
    for (e, w) in &d.p2 {
        kappa += w * f.slope.get(e).copied().unwrap_or(0.0);
    }
    for a in d.p4.atoms() {
        let val = f.eval(&graph, v, &ExitCategory::Location(a.target.clone()), e1);
        kappa += a.weight * (val - f.value);
    }
    let prediction = if d.p3 > 0.0 {
        ResidualPrediction::Finite(kappa / d.p3)
    } else if kappa.abs() < 1e-9 {
        let curvature_term: f64 = d
            .p2
            .iter()
            .map(|(e, w)| w * f.curvature.get(e).copied().unwrap_or(0.0))
            .sum::<f64>()
            / (2.0 * p2_total);
        ResidualPrediction::Finite(curvature_term)
    } else {
        ResidualPrediction::Divergent(kappa.signum())
    };
    let (pass, statistic, detail) = match prediction {
        ResidualPrediction::Finite(pred) => {
            // Three standard errors plus an O(eps) scheme-bias allowance.
            let band = 3.0 * extrapolated_se + 1.5 * e1 * (1.0 + pred.abs()) * p2_total.max(1.0);
            (
                (extrapolated - pred).abs() <= band,
                extrapolated - pred,
                format!("extrapolated {extrapolated:.5} vs predicted {pred:.5} (band {band:.5})"),
            )
        }
        ResidualPrediction::Divergent(sign) => {
            let grows = m1.abs() > m2.abs() - 3.0 * (se1 + se2);
            let sign_ok = m1 * sign > 0.0;
            (
                grows && sign_ok,
                m1,
                format!("divergent prediction, m({e1}) = {m1:.5}, m({e2}) = {m2:.5}"),
            )
        }
    };
    let report = TestReport {
        name: format!("generator_residual[v{}]", v.0),
        statistic,
        p_value: None,
        pass,
        level: 3.0,
        samples: vec![n; eps_schedule.len()],
        runtime_ms: started.elapsed().as_millis(),
        detail,
    };
    Ok(ResidualEstimate {
        per_eps,
        extrapolated,
        extrapolated_se,
        prediction,
        report,
    })
}

/// Lifetime samples (kill times, with non-killed paths reported as the
/// horizon) of `n` paths from a common start.
pub fn lifetime_samples(
    p: &dyn ProcessGenerator,
    start: &GraphPoint,
    horizon: f64,
    n: usize,
    stream: &RandomStream,
) -> Result<Vec<f64>, SimError> {
    (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut s = stream.child(k);
            let traj = p.run(start, horizon, &mut s)?;
            Ok(traj.lifetime().unwrap_or(horizon))
        })
        .collect()
}

/// Aligns two exit-sample sets on a common category list and returns the
/// per-category counts, for chi-square comparisons.
pub fn category_counts(a: &[ExitSample], b: &[ExitSample]) -> (Vec<u64>, Vec<u64>) {
    let mut categories: Vec<ExitCategory> = Vec::new();
    let find = |c: &ExitCategory, categories: &mut Vec<ExitCategory>| -> usize {
        match categories.iter().position(|k| k == c) {
            Some(i) => i,
            None => {
                categories.push(c.clone());
                categories.len() - 1
            }
        }
    };
    let mut ca: Vec<u64> = Vec::new();
    let mut cb: Vec<u64> = Vec::new();
    for s in a {
        let i = find(&s.category, &mut categories);
        if i >= ca.len() {
            ca.resize(i + 1, 0);
            cb.resize(i + 1, 0);
        }
        ca[i] += 1;
    }
    for s in b {
        let i = find(&s.category, &mut categories);
        if i >= ca.len() {
            ca.resize(i + 1, 0);
            cb.resize(i + 1, 0);
        }
        cb[i] += 1;
    }
    (ca, cb)
}

/// Runs the KS test on exit times and the chi-square test on exit categories
/// of two generators from the same vertex.
pub fn backend_equivalence_at_vertex(
    a: &dyn ProcessGenerator,
    b: &dyn ProcessGenerator,
    v: VertexId,
    eps: f64,
    n: usize,
    level: f64,
    stream: &RandomStream,
) -> Result<(TestReport, TestReport), StatError> {
    let sa = exit_samples(a, v, eps, n, &stream.child(0))?;
    let sb = exit_samples(b, v, eps, n, &stream.child(1))?;
    let ta: Vec<f64> = sa.iter().map(|s| s.time).collect();
    let tb: Vec<f64> = sb.iter().map(|s| s.time).collect();
    let mut ks = ks_two_sample(&ta, &tb, level)?;
    ks.name = format!("backend_ks_exit_time[v{}]", v.0);
    let (ca, cb) = category_counts(&sa, &sb);
    let mut chi = chi_square_homogeneity(&ca, &cb, level)?;
    chi.name = format!("backend_chi2_categories[v{}]", v.0);
    Ok((ks, chi))
}
