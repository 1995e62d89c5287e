//! Command-line front end: configuration ingestion, run orchestration and
//! result emission.
//!
//! Exit codes: 0 on success, 1 on runtime failure (including failed
//! verification tests), 2 on configuration or validation failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use num_rational::BigRational;
use rayon::prelude::*;

use graphbm::config::{
    build_config, decomposition_to_json, trace_to_json, Backend, BuiltConfig,
    ConfigDoc, ConfigError, Overrides,
};
use graphbm::fw::{pipeline_trace, Weight};
use graphbm::graph::{decompose, validate_graph, GraphPoint, VertexId};
use graphbm::pipeline::{construct_paper_pipeline, ProcessGenerator};
use graphbm::sampler::DirectGenerator;
use graphbm::stats::{
    backend_equivalence_at_vertex, laplace_exit_check, empirical_exit_law, TestReport,
};
use graphbm::stream::RandomStream;

#[derive(Parser)]
#[command(
    name = "graphbm",
    about = "Monte Carlo simulation of Brownian motions on metric graphs with non-local vertex conditions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration: graph structure, boundary data, parameters.
    Validate(CommonArgs),
    /// Sample trajectories and write them as CSV files plus a summary.
    Simulate(CommonArgs),
    /// Run the statistical verification harness on the configured graph.
    Verify(CommonArgs),
    /// Emit the staged boundary-data sequence as JSON.
    FwTrace(TraceArgs),
    /// Print the subgraph decomposition as JSON.
    Decompose(DecomposeArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON configuration document.
    #[arg(long)]
    config: PathBuf,
    /// Seed override (the run seed must come from here or the document).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of paths override.
    #[arg(long)]
    paths: Option<usize>,
    /// Shell radius override.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Time horizon override.
    #[arg(long)]
    horizon: Option<f64>,
    /// Backend selector: direct, pipeline or both.
    #[arg(long)]
    backend: Option<String>,
    /// Output directory (overrides the document's `run.out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the path pool (0 = all cores). Results are
    /// independent of this setting.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Carry the stage weights in exact rational arithmetic and assert exact
    /// closure of the final stage.
    #[arg(long)]
    exact_rational: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated vertex names forming the +1 cell (default: the last
    /// vertex, as in the one-vertex peeling).
    #[arg(long)]
    part: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    };
    std::process::exit(code);
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Io(std::io::Error),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate(args) => {
            init_workers(args.workers);
            cmd_validate(&args)
        }
        Command::Simulate(args) => {
            init_workers(args.workers);
            cmd_simulate(&args)
        }
        Command::Verify(args) => {
            init_workers(args.workers);
            cmd_verify(&args)
        }
        Command::FwTrace(args) => {
            init_workers(args.common.workers);
            cmd_fw_trace(&args)
        }
        Command::Decompose(args) => {
            init_workers(args.common.workers);
            cmd_decompose(&args)
        }
    }
}

fn init_workers(workers: usize) {
    if workers > 0 {
        // Ignore failure: the global pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn load_doc(path: &Path) -> Result<ConfigDoc, CliError> {
    let text = fs::read_to_string(path)?;
    Ok(ConfigDoc::from_json(&text)?)
}

fn overrides(args: &CommonArgs) -> Result<Overrides, CliError> {
    let backend = match &args.backend {
        Some(s) => Some(Backend::parse(s)?),
        None => None,
    };
    Ok(Overrides {
        seed: args.seed,
        paths: args.paths,
        epsilon: args.epsilon,
        horizon: args.horizon,
        backend,
    })
}

fn build(args: &CommonArgs) -> Result<(ConfigDoc, BuiltConfig), CliError> {
    let doc = load_doc(&args.config)?;
    let built = build_config(&doc, &overrides(args)?)?;
    Ok((doc, built))
}

fn out_dir(args: &CommonArgs, doc: &ConfigDoc) -> PathBuf {
    args.out
        .clone()
        .or_else(|| doc.run.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_validate(args: &CommonArgs) -> Result<i32, CliError> {
    let doc = load_doc(&args.config)?;
    let report = validate_graph(&doc.graph);
    if !report.is_ok() {
        for v in &report.violations {
            println!("violation: {v}");
        }
        println!("invalid: {} violation(s)", report.violations.len());
        return Ok(2);
    }
    match build_config(&doc, &overrides(args)?) {
        Ok(built) => {
            println!(
                "ok: {} vertices, {} edges, epsilon {}, horizon {}",
                built.graph.vertex_count(),
                built.graph.edge_ids().count(),
                built.params.epsilon,
                built.params.horizon
            );
            // Epsilon feasibility against the graph and delta values.
            let half_min = built.graph.min_edge_length() / 2.0;
            let min_delta = built
                .params
                .delta
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if built.params.epsilon >= half_min || built.params.epsilon > 0.5 * min_delta {
                println!(
                    "invalid: epsilon {} exceeds feasibility bound (half-min-edge {}, half-min-delta {})",
                    built.params.epsilon,
                    half_min,
                    0.5 * min_delta
                );
                return Ok(2);
            }
            Ok(0)
        }
        Err(e) => {
            println!("invalid: {e}");
            Ok(2)
        }
    }
}

fn make_generator(
    built: &BuiltConfig,
    backend: Backend,
) -> Result<Arc<dyn ProcessGenerator>, CliError> {
    match backend {
        Backend::Direct => Ok(Arc::new(
            DirectGenerator::new(built.graph.clone(), built.fw.clone(), built.params.epsilon)
                .map_err(|e| CliError::Runtime(e.to_string()))?,
        )),
        Backend::Pipeline => Ok(Arc::new(
            construct_paper_pipeline(
                built.graph.clone(),
                built.fw.clone(),
                &built.params.delta,
                built.params.epsilon,
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        )),
        Backend::Both => unreachable!("resolved by the caller"),
    }
}

fn default_start(_built: &BuiltConfig) -> GraphPoint {
    GraphPoint::Vertex(VertexId(0))
}

fn cmd_simulate(args: &CommonArgs) -> Result<i32, CliError> {
    let (doc, built) = build(args)?;
    let out = out_dir(args, &doc);
    fs::create_dir_all(&out)?;
    let backends: Vec<Backend> = match built.params.backend {
        Backend::Both => vec![Backend::Direct, Backend::Pipeline],
        one => vec![one],
    };
    let start = default_start(&built);
    let mut manifest = serde_json::Map::new();
    manifest.insert("seed".into(), serde_json::json!(built.params.seed));
    manifest.insert("paths".into(), serde_json::json!(built.params.paths));
    let mut summary = serde_json::Map::new();
    for (b_idx, backend) in backends.iter().enumerate() {
        let generator = make_generator(&built, *backend)?;
        let root = RandomStream::new(built.params.seed).child(b_idx as u64);
        let trajectories: Result<Vec<_>, _> = (0..built.params.paths as u64)
            .into_par_iter()
            .map(|k| {
                let mut s = root.child(k);
                generator.run(&start, built.params.horizon, &mut s)
            })
            .collect();
        let trajectories = trajectories.map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut files = Vec::new();
        let mut counts: std::collections::BTreeMap<&'static str, u64> = Default::default();
        let mut lifetime_sum = 0.0;
        let mut kills = 0u64;
        for (k, traj) in trajectories.iter().enumerate() {
            let name = format!("traj_{}_{k:06}.csv", backend.as_str());
            let mut buf = Vec::new();
            traj.write_csv(&built.graph, &mut buf)?;
            fs::write(out.join(&name), buf)?;
            files.push(name);
            for e in &traj.events {
                *counts.entry(e.kind.as_str()).or_insert(0) += 1;
            }
            match traj.lifetime() {
                Some(t) => {
                    kills += 1;
                    lifetime_sum += t;
                }
                None => lifetime_sum += built.params.horizon,
            }
        }
        summary.insert(
            backend.as_str().into(),
            serde_json::json!({
                "event_counts": counts,
                "paths": built.params.paths,
                "kills": kills,
                "mean_lifetime": lifetime_sum / built.params.paths.max(1) as f64,
            }),
        );
        manifest.insert(
            format!("files_{}", backend.as_str()),
            serde_json::json!(files),
        );
    }
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(summary)).unwrap(),
    )?;
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(manifest)).unwrap(),
    )?;
    println!(
        "wrote {} path(s) per backend to {}",
        built.params.paths,
        out.display()
    );
    Ok(0)
}

fn recovery_report(
    built: &BuiltConfig,
    generator: &dyn ProcessGenerator,
    v: VertexId,
    n: usize,
    stream: &RandomStream,
) -> Result<TestReport, CliError> {
    let started = std::time::Instant::now();
    let eps = built.params.epsilon;
    let graph = &built.graph;
    let d = built.fw.get(v);
    let est = empirical_exit_law(generator, v, eps, n, stream)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let p2_total = d.p2_total();
    let mut worst: f64 = 0.0;
    let mut pass = true;
    let mut detail = String::new();
    let band = |se: f64| 3.0 * se + 1.5 * eps * p2_total.max(0.1);
    if p2_total > 0.0 {
        for (e, w) in &d.p2 {
            let (rec, se) = est.recovered.p2.get(e).copied().unwrap_or((0.0, 0.0));
            let dev = (rec - w).abs();
            pass &= dev <= band(se);
            worst = worst.max(dev / band(se).max(1e-300));
            detail.push_str(&format!("p2[{}]={rec:.4}/{w:.4} ", graph.edge(*e).name));
        }
        let (rec, se) = est.recovered.p1;
        let dev = (rec - d.p1).abs();
        pass &= dev <= band(se);
        detail.push_str(&format!("p1={rec:.4}/{:.4} ", d.p1));
        let (rec3, se3) = est.recovered.p3;
        let dev3 = (rec3 - d.p3).abs();
        pass &= dev3 <= band(se3);
        detail.push_str(&format!("p3={rec3:.4}/{:.4} ", d.p3));
        for a in d.p4.atoms() {
            let found = est
                .recovered
                .jumps
                .iter()
                .find(|(g, _, _)| g == &a.target)
                .map(|(_, f, se)| (*f, *se))
                .unwrap_or((0.0, 0.0));
            let dev = (found.0 - a.weight).abs();
            pass &= dev <= band(found.1);
            detail.push_str(&format!("w={:.4}/{:.4} ", found.0, a.weight));
        }
    } else if est.recovered.trap {
        let should_trap = d.p1 == 0.0 && d.p4.is_empty();
        pass &= should_trap;
        detail.push_str("trap regime");
    } else {
        // Hold-and-jump or pure-kill vertex: compare the categorical split
        // and the mean holding time.
        let mass = d.p1 + d.p4.total_mass();
        let kill_target = if mass > 0.0 { d.p1 / mass } else { 0.0 };
        let dev = (est.kill_freq.0 - kill_target).abs();
        pass &= dev <= 3.0 * est.kill_freq.1 + 1e-9;
        detail.push_str(&format!("kill={:.4}/{kill_target:.4} ", est.kill_freq.0));
        if d.p3 > 0.0 && mass > 0.0 {
            let hold_target = d.p3 / mass;
            let devh = (est.mean_exit_time - hold_target).abs();
            pass &= devh <= 4.0 * est.exit_time_se;
            detail.push_str(&format!(
                "hold={:.4}/{hold_target:.4} ",
                est.mean_exit_time
            ));
        }
    }
    Ok(TestReport {
        name: format!("fw_recovery[{}]", graph.vertex_name(v)),
        statistic: worst,
        p_value: None,
        pass,
        level: 3.0,
        samples: vec![n],
        runtime_ms: started.elapsed().as_millis(),
        detail,
    })
}

fn cmd_verify(args: &CommonArgs) -> Result<i32, CliError> {
    let (doc, built) = build(args)?;
    let out = out_dir(args, &doc);
    fs::create_dir_all(&out)?;
    // The harness needs at least a moderate sample size.
    let n = built.params.paths.max(1000);
    let mut reports: Vec<TestReport> = Vec::new();
    let root = RandomStream::new(built.params.seed);

    let backends: Vec<Backend> = match built.params.backend {
        Backend::Both => vec![Backend::Direct, Backend::Pipeline],
        one => vec![one],
    };
    let mut generators = Vec::new();
    for (i, b) in backends.iter().enumerate() {
        generators.push((b.as_str(), make_generator(&built, *b)?, i as u64));
    }

    // Interval exit laws on every internal edge, per backend and alpha.
    for (label, generator, tag) in &generators {
        for edge in built.graph.edge_ids() {
            if built.graph.edge(edge).is_external() {
                continue;
            }
            let r = built.graph.edge(edge).length;
            for (ai, &alpha) in built.params.alpha.iter().enumerate() {
                let stream = root.child(100 + tag * 40 + ai as u64).child(edge.0 as u64);
                let mut report =
                    laplace_exit_check(generator.as_ref(), edge, r / 2.0, alpha, n, &stream)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                report.name = format!("{label}:{}", report.name);
                reports.push(report);
            }
        }
    }

    // Boundary-data recovery at every vertex, per backend.
    for (label, generator, tag) in &generators {
        for v in built.graph.vertex_ids() {
            let stream = root.child(200 + *tag).child(v.0 as u64);
            let mut report = recovery_report(&built, generator.as_ref(), v, n, &stream)?;
            report.name = format!("{label}:{}", report.name);
            reports.push(report);
        }
    }

    // Backend equivalence when both are selected.
    if built.params.backend == Backend::Both {
        let ball = (0.45 * built.graph.min_edge_length()).min(0.2);
        let vertices: Vec<VertexId> = built.graph.vertex_ids().take(2).collect();
        for v in vertices {
            let stream = root.child(300).child(v.0 as u64);
            let (ks, chi) = backend_equivalence_at_vertex(
                generators[0].1.as_ref(),
                generators[1].1.as_ref(),
                v,
                ball,
                n,
                0.01,
                &stream,
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            reports.push(ks);
            reports.push(chi);
        }
    }

    // Symbolic closure of the staged sequence.
    {
        let started = std::time::Instant::now();
        let stages = pipeline_trace(&built.graph, &built.fw, &built.params.delta)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let final_assignment = &stages.last().unwrap().assignment;
        let mut worst: f64 = 0.0;
        for (v, d) in final_assignment.iter() {
            let t = built.fw.get(v);
            worst = worst.max((d.p1 - t.p1).abs());
            worst = worst.max((d.p3 - t.p3).abs());
            for (e, w) in &d.p2 {
                worst = worst.max((w - t.p2[e]).abs());
            }
        }
        reports.push(TestReport {
            name: "fw_trace_closure".into(),
            statistic: worst,
            p_value: None,
            pass: worst < 1e-12,
            level: 1e-12,
            samples: vec![built.graph.vertex_count()],
            runtime_ms: started.elapsed().as_millis(),
            detail: "final stage vs target".into(),
        });
    }

    let mut all_pass = true;
    println!(
        "{:<44} {:>10} {:>8} {:>6} {:>10}",
        "test", "statistic", "p", "pass", "runtime"
    );
    for r in &reports {
        println!("{r}");
        all_pass &= r.pass;
    }
    let json_lines: Vec<String> = reports.iter().map(|r| r.to_json_line()).collect();
    fs::write(out.join("verify_reports.jsonl"), json_lines.join("\n") + "\n")?;
    println!();
    for line in &json_lines {
        println!("{line}");
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_fw_trace(args: &TraceArgs) -> Result<i32, CliError> {
    let (_, built) = build(&args.common)?;
    if args.exact_rational {
        let target = built.fw.map_weights(|w| BigRational::from_f64(*w));
        let stages = pipeline_trace(&built.graph, &target, &built.params.delta)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let exact = stages.last().unwrap().assignment == target;
        println!(
            "{}",
            serde_json::to_string_pretty(&trace_to_json(&built.graph, &stages, true)).unwrap()
        );
        if !exact {
            eprintln!("error: final stage differs from the target assignment");
            return Ok(1);
        }
    } else {
        let stages = pipeline_trace(&built.graph, &built.fw, &built.params.delta)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        println!(
            "{}",
            serde_json::to_string_pretty(&trace_to_json(&built.graph, &stages, false)).unwrap()
        );
    }
    Ok(0)
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<i32, CliError> {
    let (_, built) = build(&args.common)?;
    let pos: Vec<VertexId> = match &args.part {
        Some(names) => names
            .split(',')
            .map(|name| built.graph.vertex(name.trim()))
            .collect::<Result<_, _>>()
            .map_err(ConfigError::from)?,
        None => vec![VertexId(built.graph.vertex_count() as u32 - 1)],
    };
    let dec = decompose(&built.graph, &pos).map_err(ConfigError::from)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&decomposition_to_json(&built.graph, &dec)).unwrap()
    );
    Ok(0)
}
