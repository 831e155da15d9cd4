use anchor_slam::metrics::{align_sim3, MetricReport, Trajectory, DEFAULT_SEGMENT_LENGTHS};
use anchor_slam::partition::SegmentKind;
use anchor_slam::pipeline::{execute, partition_stage, Artifacts, PipelineConfig};
use anchor_slam::motion::MotionState;
use anchor_slam::{io, Result};
use serde_json::{json, Value};

/// Demo runs are single-threaded and skip filesystem output.
fn config(text: &str) -> Result<PipelineConfig> {
    let mut c = PipelineConfig::parse(text)?;
    c.threads = 1;
    c.out_dir = None;
    Ok(c)
}

fn state_name(s: MotionState) -> &'static str {
    match s {
        MotionState::Static => "static",
        MotionState::Linear => "linear",
        MotionState::Turning => "turning",
    }
}

fn kind_name(k: SegmentKind) -> &'static str {
    match k {
        SegmentKind::Turning => "turning",
        SegmentKind::Linear => "linear",
        SegmentKind::StaticBridge => "static_bridge",
    }
}

fn xyz(t: &Trajectory) -> Value {
    t.positions().iter().map(|p| json!([p.x, p.y, p.z])).collect()
}

fn metrics(m: &MetricReport) -> Value {
    json!({
        "ate_rmse_m": m.ate_rmse_m,
        "drift_pct": m.drift_pct,
        "matched_poses": m.matched_poses,
        "segments_evaluated": m.segments_evaluated,
    })
}

pub fn partition_preview(config_text: &str) -> Result<String> {
    let c = config(config_text)?;
    let world = anchor_slam::oracle::generate_world(&c.world)?;
    let (front, _) = partition_stage(&c)?;
    let submaps: Vec<Value> = front
        .submaps
        .iter()
        .map(|s| {
            json!({
                "id": s.id,
                "kind": kind_name(s.base.kind),
                "keyframes": s.base.keyframes,
                "overlap": s.overlap_frames,
                "loops": s.loop_frames,
            })
        })
        .collect();
    let positions: Value = world.positions().iter().map(|p| json!([p.x, p.y, p.z])).collect();
    Ok(json!({
        "frames": front.profile.states.len(),
        "positions": positions,
        "states": front.profile.states.iter().map(|&s| state_name(s)).collect::<Vec<_>>(),
        "turning_score": front.profile.smoothed_turn,
        "static_ratio": front.profile.smoothed_static,
        "keyframes": front.keyframes,
        "submaps": submaps,
        "loop_candidates": front.loop_candidates.len(),
    })
    .to_string())
}

pub fn run_slam(config_text: &str) -> Result<String> {
    let c = config(config_text)?;
    let run = execute(&c, &mut Artifacts::default())?;
    let (reference, reference_tum, initial, optimized) = match &run.reference {
        Some(r) => {
            let r = r.subset(&run.keyframe_ids);
            let init = run.initial_trajectory.transformed(&align_sim3(&run.initial_trajectory, &r)?);
            let opt = run.trajectory.transformed(&align_sim3(&run.trajectory, &r)?);
            (xyz(&r), json!(io::to_tum(&r)), xyz(&init), xyz(&opt))
        }
        None => (Value::Null, Value::Null, xyz(&run.initial_trajectory), xyz(&run.trajectory)),
    };
    let edges: Vec<Value> = run
        .edges
        .iter()
        .map(|e| json!({ "from": e.from, "to": e.to, "loop": e.kind == anchor_slam::registration::EdgeKind::Loop, "accepted": e.accepted, "inlier_ratio": e.inlier_ratio }))
        .collect();
    let report = run.report();
    Ok(json!({
        "reference": reference,
        "initial": initial,
        "optimized": optimized,
        "submap_of_keyframe": run.keyframe_ids.iter().map(|&k| run.front.owner(k)).collect::<Vec<_>>(),
        "edges": edges,
        "initial_metrics": run.initial_metrics.as_ref().map(metrics),
        "metrics": run.metrics.as_ref().map(metrics),
        "path_length_m": report.reference_path_length_m,
        "lm_iterations": run.optimize.iterations,
        "tum": io::to_tum(&run.trajectory),
        "reference_tum": reference_tum,
    })
    .to_string())
}

pub fn evaluate_tum(estimate: &str, reference: &str) -> Result<String> {
    let est = io::parse_tum(estimate)?;
    let reference = io::parse_tum(reference)?;
    let report = MetricReport::evaluate(&est, &reference, &DEFAULT_SEGMENT_LENGTHS)?;
    let mut v = metrics(&report);
    v["unmatched_poses"] = json!(report.unmatched_poses);
    Ok(v.to_string())
}
