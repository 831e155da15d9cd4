//! End-to-end orchestration: motion analysis, partitioning, per-submap geometry,
//! registration, pose-graph optimization, trajectory composition and evaluation.

mod config;
mod replay;

pub use config::{LoopMode, Mode, PipelineConfig, ReplayInputs};
pub use replay::{generate, request_key, GenerateSummary, ReplayProvider};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::io::{self, LoopCandidate};
use crate::metrics::{MetricReport, Trajectory};
use crate::motion::{FrameFlowStats, MotionProfile};
use crate::oracle::{
    generate_world, ContextRole, GeometryProvider, GroundTruthWorld, InferenceRequest, SubmapGeometry,
    SyntheticProvider, WorldConfig,
};
use crate::partition::{
    compose_submaps, partition_sequence, retrieve_loop_candidates, BaseSegment, CompositionWarning, LoopHit,
    PartitionParams, Submap,
};
use crate::posegraph::{compose_global_trajectory, optimize_graph, OptimizeReport, PoseGraph};
use crate::registration::{
    loop_anchor, register_submaps, select_overlap_anchor, AnchorSpec, EdgeKind, RegistrationParams, Sim3Edge,
};

#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl FnOnce() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl FnOnce() -> f64 {
    || 0.0
}

/// Where loop candidates come from.
#[derive(Debug, Clone)]
pub enum LoopSource {
    None,
    /// Per-frame positions for proximity retrieval.
    Positions(Vec<Vector3<f64>>),
    Candidates(Vec<LoopCandidate>),
}

/// Output of the motion and partitioning stages.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    pub profile: MotionProfile,
    pub keyframes: Vec<usize>,
    pub segments: Vec<BaseSegment>,
    pub submaps: Vec<Submap>,
    pub warnings: Vec<CompositionWarning>,
    pub loop_candidates: Vec<LoopCandidate>,
}

impl FrontEnd {
    /// Submap whose base segment holds `frame`.
    pub fn owner(&self, frame: usize) -> Option<usize> {
        self.submaps.iter().position(|s| s.base.keyframes.binary_search(&frame).is_ok())
    }
}

fn retrieve_all(segments: &[BaseSegment], positions: &[Vector3<f64>], params: &PartitionParams) -> Result<Vec<LoopCandidate>> {
    let mut out = Vec::new();
    for k in 2..segments.len() {
        let history: Vec<(usize, Vector3<f64>)> = segments[..k - 1]
            .iter()
            .flat_map(|s| s.keyframes.iter())
            .map(|&f| positions.get(f).map(|p| (f, *p)))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::invalid("loop retrieval positions do not cover every keyframe"))?;
        for &q in &segments[k].keyframes {
            let position = positions.get(q).ok_or_else(|| Error::invalid("missing query position"))?;
            if let Some(h) = retrieve_loop_candidates(q, position, &history, params) {
                out.push(LoopCandidate { segment: k, historical_keyframe: h, query_keyframe: q });
                break;
            }
        }
    }
    Ok(out)
}

/// Motion classification, keyframe selection, slicing, loop retrieval and composition.
pub fn front_end(
    stats: &[FrameFlowStats],
    config: &PipelineConfig,
    loops: &LoopSource,
    times: &mut Vec<(&'static str, f64)>,
) -> Result<FrontEnd> {
    let timer = stopwatch();
    let profile = MotionProfile::from_stats(stats, &config.motion).map_err(|e| e.at_stage("motion"))?;
    times.push(("motion", timer()));

    let timer = stopwatch();
    let mut params = config.partition;
    if let Some(reuse) = config.loop_mode.reuse() {
        params.loop_reuse_mode = reuse;
    }
    let flow_means: Vec<f64> = stats.iter().map(|s| s.mean_flow_mag).collect();
    let segments = partition_sequence(&profile.states, &flow_means, &params).map_err(|e| e.at_stage("partition"))?;
    let keyframes: Vec<usize> = segments.iter().flat_map(|s| s.keyframes.iter().copied()).collect();
    let loop_candidates = match (config.loop_mode, loops) {
        (LoopMode::Off, _) | (_, LoopSource::None) => Vec::new(),
        (_, LoopSource::Positions(p)) => retrieve_all(&segments, p, &params).map_err(|e| e.at_stage("partition"))?,
        (_, LoopSource::Candidates(c)) => c.clone(),
    };
    let mut hits = BTreeMap::new();
    for c in &loop_candidates {
        hits.insert(c.segment, LoopHit { historical_keyframe: c.historical_keyframe, query_keyframe: c.query_keyframe });
    }
    let (submaps, warnings) = compose_submaps(&segments, &params, &hits).map_err(|e| e.at_stage("partition"))?;
    times.push(("partition", timer()));
    Ok(FrontEnd { profile, keyframes, segments, submaps, warnings, loop_candidates })
}

fn historical_request(front: &FrontEnd, submap: &Submap) -> Result<Option<InferenceRequest>> {
    let (Some(&h), Some(&q)) = (submap.loop_frames.first(), submap.reinfer_in_history.first()) else {
        return Ok(None);
    };
    let m = front.owner(h).ok_or_else(|| Error::DataIntegrity(format!("loop frame {h} has no owning submap")))?;
    let mut frames = front.submaps[m].frames();
    if !frames.contains(&q) {
        frames.push(q);
    }
    Ok(Some(InferenceRequest { submap_id: m, frames, role: ContextRole::LoopHistorical, contaminated_by: Some(submap.id) }))
}

/// Every geometry inference the registration stage will need.
pub fn geometry_requests(front: &FrontEnd) -> Result<Vec<InferenceRequest>> {
    let mut requests = Vec::new();
    for s in &front.submaps {
        requests.push(InferenceRequest::new(s.id, s.frames(), ContextRole::Preceding));
        if s.id > 0 {
            requests.push(InferenceRequest::new(s.id, s.frames(), ContextRole::Succeeding));
        }
    }
    for s in &front.submaps {
        if let Some(r) = historical_request(front, s)? {
            requests.push(r);
        }
    }
    Ok(requests)
}

fn pool_map<T: Sync, U: Send>(threads: usize, items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Result<Vec<U>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
        Ok(pool.install(|| items.par_iter().map(&f).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(items.iter().map(f).collect())
    }
}

pub fn infer_all(
    provider: &dyn GeometryProvider,
    requests: &[InferenceRequest],
    threads: usize,
) -> Result<BTreeMap<String, SubmapGeometry>> {
    let results = pool_map(threads, requests, |r| provider.infer(r).map(|g| (request_key(r), g)))?;
    let mut out = BTreeMap::new();
    for r in results {
        let (k, g) = r?;
        g.validate()?;
        out.insert(k, g);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct EdgeJob {
    kind: EdgeKind,
    key_i: String,
    key_j: String,
    anchor: AnchorSpec,
}

fn plan_edges(front: &FrontEnd, params: &RegistrationParams) -> Result<Vec<EdgeJob>> {
    let mut jobs = Vec::new();
    for pair in front.submaps.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        jobs.push(EdgeJob {
            kind: EdgeKind::Odometry,
            key_i: request_key(&InferenceRequest::new(a.id, a.frames(), ContextRole::Preceding)),
            key_j: request_key(&InferenceRequest::new(b.id, b.frames(), ContextRole::Succeeding)),
            anchor: select_overlap_anchor(&a.overlap_frames, params.anchor_window)?,
        });
    }
    for s in &front.submaps {
        let Some(&h) = s.loop_frames.first() else { continue };
        let current = request_key(&InferenceRequest::new(s.id, s.frames(), ContextRole::Preceding));
        let job = match historical_request(front, s)? {
            Some(hist) => EdgeJob {
                kind: EdgeKind::Loop,
                key_i: request_key(&hist),
                key_j: current,
                anchor: loop_anchor(vec![h, s.reinfer_in_history[0]])?,
            },
            None => {
                let m = front.owner(h).ok_or_else(|| Error::DataIntegrity(format!("loop frame {h} has no owning submap")))?;
                let hist = &front.submaps[m];
                EdgeJob {
                    kind: EdgeKind::Loop,
                    key_i: request_key(&InferenceRequest::new(m, hist.frames(), ContextRole::Preceding)),
                    key_j: current,
                    anchor: loop_anchor(vec![h])?,
                }
            }
        };
        jobs.push(job);
    }
    Ok(jobs)
}

/// A registration that could not produce a transform.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    pub reason: String,
}

/// Everything produced by one pipeline execution.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub mode: Mode,
    pub stamps: Vec<f64>,
    pub stats: Vec<FrameFlowStats>,
    pub front: FrontEnd,
    pub edges: Vec<Sim3Edge>,
    pub failed_edges: Vec<FailedEdge>,
    pub initial_graph: PoseGraph,
    pub graph: PoseGraph,
    pub optimize: OptimizeReport,
    pub keyframe_ids: Vec<usize>,
    pub initial_trajectory: Trajectory,
    pub trajectory: Trajectory,
    pub reference: Option<Trajectory>,
    pub initial_metrics: Option<MetricReport>,
    pub metrics: Option<MetricReport>,
    pub stage_times: Vec<(&'static str, f64)>,
}

impl PipelineRun {
    pub fn report(&self) -> PipelineReport {
        let accepted = self.edges.iter().filter(|e| e.accepted).count();
        PipelineReport {
            mode: self.mode,
            frames: self.stats.len(),
            keyframes: self.front.keyframes.len(),
            submaps: self.front.submaps.len(),
            edges_total: self.edges.len() + self.failed_edges.len(),
            edges_accepted: accepted,
            edges_rejected: self.edges.len() - accepted + self.failed_edges.len(),
            registration_failures: self.failed_edges.len(),
            loop_edges_accepted: self.edges.iter().filter(|e| e.accepted && e.kind == EdgeKind::Loop).count(),
            initial_ate_m: self.initial_metrics.as_ref().map(|m| m.ate_rmse_m),
            metrics: self.metrics.clone(),
            reference_path_length_m: self.reference.as_ref().map(Trajectory::path_length),
            stage_times: self.stage_times.clone(),
            artifacts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub mode: Mode,
    pub frames: usize,
    pub keyframes: usize,
    pub submaps: usize,
    pub edges_total: usize,
    pub edges_accepted: usize,
    pub edges_rejected: usize,
    pub registration_failures: usize,
    pub loop_edges_accepted: usize,
    pub initial_ate_m: Option<f64>,
    pub metrics: Option<MetricReport>,
    pub reference_path_length_m: Option<f64>,
    pub stage_times: Vec<(&'static str, f64)>,
    pub artifacts: Vec<PathBuf>,
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Synthetic => "synthetic",
            Mode::Replay => "replay",
        };
        writeln!(f, "mode={mode}")?;
        writeln!(f, "frames={}", self.frames)?;
        writeln!(f, "keyframes={}", self.keyframes)?;
        writeln!(f, "submaps={}", self.submaps)?;
        writeln!(f, "edges_total={}", self.edges_total)?;
        writeln!(f, "edges_accepted={}", self.edges_accepted)?;
        writeln!(f, "edges_rejected={}", self.edges_rejected)?;
        writeln!(f, "registration_failures={}", self.registration_failures)?;
        writeln!(f, "loop_edges_accepted={}", self.loop_edges_accepted)?;
        if let Some(len) = self.reference_path_length_m {
            writeln!(f, "reference_path_length_m={len}")?;
        }
        if let Some(a) = self.initial_ate_m {
            writeln!(f, "initial_ate_rmse_m={a}")?;
        }
        if let Some(m) = &self.metrics {
            write!(f, "{m}")?;
        }
        for (stage, t) in &self.stage_times {
            writeln!(f, "time_{stage}_s={t:.6}")?;
        }
        for a in &self.artifacts {
            writeln!(f, "artifact={}", a.display())?;
        }
        Ok(())
    }
}

/// Text artifacts accumulated while the pipeline runs.
#[derive(Debug, Default, Clone)]
pub struct Artifacts {
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn put(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn files(&self) -> &[(String, String)] {
        &self.files
    }

    /// Writes every accumulated file, appending `suffix` to the names.
    pub fn flush(&self, dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        self.files
            .iter()
            .map(|(name, contents)| {
                let path = dir.join(format!("{name}{suffix}"));
                io::write_text(&path, contents)?;
                Ok(path)
            })
            .collect()
    }
}

/// Per-frame observations feeding the pipeline.
pub struct Inputs {
    pub stats: Vec<FrameFlowStats>,
    pub stamps: Vec<f64>,
    pub loops: LoopSource,
    pub reference: Option<Trajectory>,
}

impl Inputs {
    pub fn from_world(world: &GroundTruthWorld) -> Result<Self> {
        Ok(Self {
            stats: world.flow_stats().to_vec(),
            stamps: (0..world.len()).map(|i| world.timestamp(i)).collect(),
            loops: LoopSource::Positions(world.positions()),
            reference: Some(Trajectory::uniform(world.poses().to_vec(), world.config().frame_interval)?),
        })
    }
}

/// Runs every stage after input loading against an arbitrary geometry provider.
pub fn execute_with(
    config: &PipelineConfig,
    inputs: Inputs,
    provider: &dyn GeometryProvider,
    artifacts: &mut Artifacts,
    mut stage_times: Vec<(&'static str, f64)>,
) -> Result<PipelineRun> {
    config.validate()?;
    let Inputs { stats, stamps, loops, reference } = inputs;
    artifacts.put("flow_stats.csv", io::write_flow_stats(&stats, &stamps)?);
    let front = front_end(&stats, config, &loops, &mut stage_times)?;
    artifacts.put("partition.csv", io::write_partition(&front.submaps));
    artifacts.put("loop_candidates.csv", io::write_loop_candidates(&front.loop_candidates));
    if front.submaps.is_empty() {
        return Err(Error::invalid("no keyframes were selected").at_stage("partition"));
    }

    let timer = stopwatch();
    let requests = geometry_requests(&front).map_err(|e| e.at_stage("geometry"))?;
    let geometries = infer_all(provider, &requests, config.threads).map_err(|e| e.at_stage("geometry"))?;
    stage_times.push(("geometry", timer()));

    let timer = stopwatch();
    let jobs = plan_edges(&front, &config.registration).map_err(|e| e.at_stage("registration"))?;
    let results = pool_map(config.threads, &jobs, |job| -> Result<Sim3Edge> {
        let gi = geometries.get(&job.key_i).ok_or_else(|| Error::DataIntegrity(format!("no geometry for {}", job.key_i)))?;
        let gj = geometries.get(&job.key_j).ok_or_else(|| Error::DataIntegrity(format!("no geometry for {}", job.key_j)))?;
        register_submaps(gi, gj, &job.anchor, &config.registration).map(|(edge, _)| edge)
    })
    .map_err(|e| e.at_stage("registration"))?;
    let mut edges = Vec::new();
    let mut failed_edges = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(e) => edges.push(e),
            Err(e @ Error::DataIntegrity(_)) => return Err(e.at_stage("registration")),
            Err(e) => {
                let from = geometries[&job.key_i].submap_id;
                let to = geometries[&job.key_j].submap_id;
                failed_edges.push(FailedEdge { from, to, kind: job.kind, reason: e.to_string() });
            }
        }
    }
    stage_times.push(("registration", timer()));
    artifacts.put("edges.csv", io::write_edges(&edges));

    let timer = stopwatch();
    let initial_graph = PoseGraph::new(front.submaps.len(), edges.clone(), 0).map_err(|e| e.at_stage("optimization"))?;
    let (graph, optimize) =
        optimize_graph(&initial_graph, config.graph_huber, &config.lm).map_err(|e| e.at_stage("optimization"))?;
    stage_times.push(("optimization", timer()));
    artifacts.put("graph.csv", io::write_graph(graph.nodes()));
    artifacts.put("optimize_report.txt", optimize.to_string());

    let timer = stopwatch();
    let parts: Vec<(Submap, SubmapGeometry)> = front
        .submaps
        .iter()
        .map(|s| {
            let key = request_key(&InferenceRequest::new(s.id, s.frames(), ContextRole::Preceding));
            (s.clone(), geometries[&key].clone())
        })
        .collect();
    let stamp = |f: usize| stamps[f];
    let (keyframe_ids, trajectory) =
        compose_global_trajectory(&graph, &parts, stamp).map_err(|e| e.at_stage("composition"))?;
    let (_, initial_trajectory) =
        compose_global_trajectory(&initial_graph, &parts, stamp).map_err(|e| e.at_stage("composition"))?;
    stage_times.push(("composition", timer()));
    artifacts.put(format!("trajectory.{}", config.format.extension()), match config.format {
        io::TrajectoryFormat::Tum => io::to_tum(&trajectory),
        io::TrajectoryFormat::Kitti => io::to_kitti(&trajectory),
    });

    let timer = stopwatch();
    let (initial_metrics, metrics) = match &reference {
        Some(r) => (
            Some(MetricReport::evaluate(&initial_trajectory, r, &config.segment_lengths).map_err(|e| e.at_stage("evaluation"))?),
            Some(MetricReport::evaluate(&trajectory, r, &config.segment_lengths).map_err(|e| e.at_stage("evaluation"))?),
        ),
        None => (None, None),
    };
    stage_times.push(("evaluation", timer()));
    if let Some(m) = &metrics {
        artifacts.put("metrics.txt", m.to_string());
    }

    Ok(PipelineRun {
        mode: config.mode,
        stamps,
        stats,
        front,
        edges,
        failed_edges,
        initial_graph,
        graph,
        optimize,
        keyframe_ids,
        initial_trajectory,
        trajectory,
        reference,
        initial_metrics,
        metrics,
        stage_times,
    })
}

fn replay_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let r = &config.replay;
    let path = r.flow_stats.as_ref().ok_or_else(|| Error::Config("replay mode needs replay.flow_stats".into()))?;
    let (stats, stamps) = io::read_flow_stats(&std::fs::read_to_string(path)?)?;
    let loops = match &r.loop_candidates {
        Some(p) => LoopSource::Candidates(io::read_loop_candidates(&std::fs::read_to_string(p)?)?),
        None => LoopSource::None,
    };
    let reference = match &r.reference {
        Some(p) => Some(io::load_trajectory(p, io::TrajectoryFormat::Tum)?),
        None => None,
    };
    Ok(Inputs { stats, stamps, loops, reference })
}

/// Motion analysis and partitioning only, with their artifacts.
pub fn partition_stage(config: &PipelineConfig) -> Result<(FrontEnd, Artifacts)> {
    config.validate()?;
    let inputs = match config.mode {
        Mode::Synthetic => {
            let world = generate_world(&WorldConfig { tau_flow: config.motion.tau_flow, ..config.world.clone() })
                .map_err(|e| e.at_stage("world"))?;
            Inputs::from_world(&world)?
        }
        Mode::Replay => replay_inputs(config)?,
    };
    let mut artifacts = Artifacts::default();
    artifacts.put("flow_stats.csv", io::write_flow_stats(&inputs.stats, &inputs.stamps)?);
    let front = front_end(&inputs.stats, config, &inputs.loops, &mut Vec::new())?;
    artifacts.put("partition.csv", io::write_partition(&front.submaps));
    artifacts.put("loop_candidates.csv", io::write_loop_candidates(&front.loop_candidates));
    Ok((front, artifacts))
}

/// Executes the configured pipeline; file reads happen before any stage timer starts.
pub fn execute(config: &PipelineConfig, artifacts: &mut Artifacts) -> Result<PipelineRun> {
    config.validate()?;
    match config.mode {
        Mode::Synthetic => {
            let timer = stopwatch();
            let world = generate_world(&WorldConfig { tau_flow: config.motion.tau_flow, ..config.world.clone() })
                .map_err(|e| e.at_stage("world"))?;
            let times = vec![("world", timer())];
            let provider = SyntheticProvider::new(&world, config.corruption)?.with_f32_output(config.f32_geometry);
            execute_with(config, Inputs::from_world(&world)?, &provider, artifacts, times)
        }
        Mode::Replay => {
            let inputs = replay_inputs(config)?;
            let dir = config
                .replay
                .geometry_dir
                .as_ref()
                .ok_or_else(|| Error::Config("replay mode needs replay.geometry_dir".into()))?;
            let provider = ReplayProvider::load(dir)?;
            execute_with(config, inputs, &provider, artifacts, Vec::new())
        }
    }
}

/// Executes the pipeline and writes its artifacts to `config.out_dir` (if set). On
/// failure the artifacts produced so far are written with a `.partial` suffix.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    let mut artifacts = Artifacts::default();
    match execute(config, &mut artifacts) {
        Ok(run) => {
            let mut report = run.report();
            if let Some(dir) = &config.out_dir {
                report.artifacts = artifacts.flush(dir, "")?;
                let path = dir.join("report.txt");
                io::write_text(&path, &report.to_string())?;
                report.artifacts.push(path);
            }
            Ok(report)
        }
        Err(e) => {
            if let Some(dir) = &config.out_dir {
                let mut notes = artifacts.clone();
                notes.put("error.txt", format!("{e}\n"));
                notes.flush(dir, ".partial")?;
            }
            Err(e)
        }
    }
}
