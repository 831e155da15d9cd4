use anchor_slam::io::{self, TrajectoryFormat};
use anchor_slam::oracle::{straight_line, CorruptionConfig};
use anchor_slam::pipeline::{execute, generate, run_pipeline, Artifacts, LoopMode, Mode, PipelineConfig};
use anchor_slam::Error;

fn straight_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.world.trajectory = straight_line(300.0, 180);
    c.corruption = CorruptionConfig::none();
    c.loop_mode = LoopMode::Off;
    c
}

#[test]
fn noiseless_straight_line_is_exact() {
    let run = execute(&straight_config(), &mut Artifacts::default()).unwrap();
    assert!(run.front.submaps.len() >= 3);
    assert!(!run.edges.is_empty());
    for e in &run.edges {
        assert!(e.accepted);
        assert_eq!(e.inlier_ratio, 1.0);
    }
    let ate = run.metrics.unwrap().ate_rmse_m;
    assert!(ate < 1e-6, "ate {ate}");
}

#[test]
fn report_accounting_is_consistent() {
    let mut c = PipelineConfig::default();
    c.world.seed = 3;
    let run = execute(&c, &mut Artifacts::default()).unwrap();
    let r = run.report();
    assert_eq!(r.edges_accepted + r.edges_rejected, r.edges_total);
    assert_eq!(r.submaps, run.front.submaps.len());
    assert!(r.loop_edges_accepted >= 1);
    assert!(r.stage_times.iter().all(|(_, t)| *t >= 0.0));
    let names: Vec<&str> = r.stage_times.iter().map(|(n, _)| *n).collect();
    assert_eq!(names, ["world", "motion", "partition", "geometry", "registration", "optimization", "composition", "evaluation"]);
}

#[test]
fn loop_closure_reduces_error_tenfold() {
    let mut c = PipelineConfig::default();
    c.world.seed = 11;
    let run = execute(&c, &mut Artifacts::default()).unwrap();
    let before = run.initial_metrics.unwrap().ate_rmse_m;
    let after = run.metrics.unwrap().ate_rmse_m;
    assert!(after <= 0.1 * before, "{after} vs {before}");
}

#[test]
fn runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in [1usize, 1, 4].into_iter().enumerate() {
        let mut c = PipelineConfig::default();
        c.world.seed = 5;
        c.threads = threads;
        c.out_dir = Some(dir.path().join(format!("run{i}")));
        run_pipeline(&c).unwrap();
        let out = c.out_dir.unwrap();
        let read = |n: &str| std::fs::read(out.join(n)).unwrap();
        outputs.push((read("trajectory.tum"), read("edges.csv"), read("graph.csv")));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = PipelineConfig::default();
    c.format = TrajectoryFormat::Kitti;
    c.out_dir = Some(dir.path().to_path_buf());
    let report = run_pipeline(&c).unwrap();
    for name in [
        "trajectory.kitti",
        "flow_stats.csv",
        "partition.csv",
        "loop_candidates.csv",
        "edges.csv",
        "graph.csv",
        "optimize_report.txt",
        "metrics.txt",
        "report.txt",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    assert_eq!(report.artifacts.len(), 9);
    let traj = io::load_trajectory(&dir.path().join("trajectory.kitti"), TrajectoryFormat::Kitti).unwrap();
    assert_eq!(traj.len(), report.keyframes);
    let edges = io::read_edges(&std::fs::read_to_string(dir.path().join("edges.csv")).unwrap()).unwrap();
    assert_eq!(edges.len(), report.edges_total - report.registration_failures);
}

#[test]
fn replay_reproduces_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [LoopMode::Unidirectional, LoopMode::Bidirectional] {
        let mut c = PipelineConfig::default();
        c.world.seed = 8;
        c.loop_mode = mode;
        c.f32_geometry = true;
        c.corruption.reinjection_contamination = 0.5;
        let out = dir.path().join(mode.to_string());
        let summary = generate(&c, &out).unwrap();
        assert!(summary.geometry_files >= 2 * summary.submaps - 1);

        let synthetic = execute(&c, &mut Artifacts::default()).unwrap();
        let replay_config = PipelineConfig::load(&summary.replay_config).unwrap();
        assert_eq!(replay_config.mode, Mode::Replay);
        let replay = execute(&replay_config, &mut Artifacts::default()).unwrap();

        assert_eq!(io::to_tum(&replay.trajectory), io::to_tum(&synthetic.trajectory));
        assert_eq!(replay.edges, synthetic.edges);
        assert_eq!(replay.front.submaps, synthetic.front.submaps);
        let (a, b) = (replay.metrics.unwrap(), synthetic.metrics.unwrap());
        assert!((a.ate_rmse_m - b.ate_rmse_m).abs() < 1e-9);
    }
}

#[test]
fn replay_with_missing_geometry_flushes_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let c = PipelineConfig::default();
    let summary = generate(&c, &dir.path().join("data")).unwrap();
    std::fs::remove_file(dir.path().join("data/geometry/submap0001_succ.pmap")).unwrap();
    std::fs::remove_file(dir.path().join("data/geometry/submap0001_succ.poses")).unwrap();

    let mut replay = PipelineConfig::load(&summary.replay_config).unwrap();
    replay.out_dir = Some(dir.path().join("out"));
    let err = run_pipeline(&replay).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(*stage, "geometry");
            assert!(matches!(**source, Error::DataIntegrity(_)), "{source}");
        }
        other => panic!("unexpected error {other}"),
    }
    let out = dir.path().join("out");
    assert!(out.join("flow_stats.csv.partial").is_file());
    assert!(out.join("partition.csv.partial").is_file());
    assert!(out.join("error.txt.partial").is_file());
    assert!(!out.join("trajectory.tum").exists());
}

#[test]
fn replay_rejects_mismatched_loop_mode() {
    let dir = tempfile::tempdir().unwrap();
    let summary = generate(&PipelineConfig::default(), dir.path()).unwrap();
    let mut replay = PipelineConfig::load(&summary.replay_config).unwrap();
    replay.loop_mode = LoopMode::Bidirectional;
    assert!(execute(&replay, &mut Artifacts::default()).is_err());
}

#[test]
fn replay_config_requires_inputs() {
    let mut c = PipelineConfig::default();
    c.mode = Mode::Replay;
    assert!(matches!(execute(&c, &mut Artifacts::default()), Err(Error::Config(_))));
}

mod config {
    
    
    
    use anchor_slam::error::Error;
    
    
    
    
    
    
    use anchor_slam::registration::HuberDelta;
    use anchor_slam::pipeline::*;

    #[test]
    fn defaults_roundtrip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&c.to_config_string()).unwrap(), c);
    }

    #[test]
    fn paper_defaults() {
        let c = PipelineConfig::default();
        assert_eq!((c.motion.tau_flow, c.motion.tau_static, c.motion.tau_turn), (0.7, 0.6, 5.0));
        assert_eq!((c.partition.tau_palx, c.registration.tau_conf), (15.0, 0.5));
        assert_eq!((c.partition.n_max, c.partition.n_ovlp), (12, 5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        match PipelineConfig::parse("motion.tau_flow = 0.5\nmotion.tau_statc = 0.1\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("tau_statc"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn values_apply() {
        let c = PipelineConfig::parse("# comment\nworld.seed = 7\npipeline.loop_mode = bi\nregistration.huber = fixed:0.2\n").unwrap();
        assert_eq!(c.world.seed, 7);
        assert_eq!(c.loop_mode, LoopMode::Bidirectional);
        assert_eq!(c.registration.huber, HuberDelta::Fixed(0.2));
        assert!(PipelineConfig::parse("world.seed 7\n").is_err());
        assert!(PipelineConfig::parse("world.seed = x\n").is_err());
    }
}
