mod world {
    use nalgebra::Vector3;
    
    
    
    
    use anchor_slam::motion::MotionState;
    use anchor_slam::oracle::*;
    use std::f64::consts::FRAC_PI_2;

    fn config(trajectory: Vec<Primitive>) -> WorldConfig {
        WorldConfig { trajectory, ..WorldConfig::default() }
    }

    #[test]
    fn stop_is_static() {
        let w = generate_world(&config(vec![Primitive::Stop { frames: 50 }])).unwrap();
        assert_eq!(w.len(), 50);
        assert!(w.poses().windows(2).all(|p| p[0] == p[1]));
        for s in w.flow_stats() {
            assert!(s.static_ratio_raw >= 0.99);
            assert!(s.mean_flow_mag <= 0.01);
        }
    }

    #[test]
    fn straight_is_uniform() {
        let w = generate_world(&config(straight_line(100.0, 100))).unwrap();
        for p in w.poses().windows(2) {
            let step = (p[1].translation.vector - p[0].translation.vector).norm();
            assert!((step - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn arc_closed_form() {
        let w = generate_world(&config(vec![Primitive::Arc { radius: 20.0, sweep: FRAC_PI_2, frames: 45 }])).unwrap();
        let last = w.poses().last().unwrap();
        assert!((heading(last) - FRAC_PI_2).abs() < 1e-9);
        // Left quarter turn from the origin heading +x ends at (r, r).
        assert!((last.translation.vector - Vector3::new(20.0, 20.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn camera_looks_along_heading() {
        let w = generate_world(&config(straight_line(10.0, 5))).unwrap();
        let p = w.pose(0);
        assert!((p.rotation * Vector3::z() - Vector3::x()).norm() < 1e-15);
        assert!((p.rotation * Vector3::x() + Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn determinism() {
        let a = generate_world(&config(square_loop())).unwrap();
        let b = generate_world(&config(square_loop())).unwrap();
        assert_eq!(a.flow_stats(), b.flow_stats());
        assert_eq!(a.gt_points(37), b.gt_points(37));
    }

    #[test]
    fn square_loop_margins() {
        let w = generate_world(&config(square_loop())).unwrap();
        let p = anchor_slam::motion::MotionParams::default();
        for (s, state) in w.flow_stats().iter().zip(w.gt_states()) {
            match state {
                MotionState::Static => assert!(s.static_ratio_raw >= 0.99),
                MotionState::Turning => {
                    assert!(s.turning_score_raw >= 2.0 * p.tau_turn, "{s:?}");
                    assert!(s.static_ratio_raw <= p.tau_static / 2.0, "{s:?}");
                }
                MotionState::Linear => {
                    assert!(s.static_ratio_raw <= p.tau_static / 2.0, "{s:?}");
                    assert!(s.turning_score_raw <= p.tau_turn / 2.0, "{s:?}");
                }
            }
        }
        let len = w.path_length();
        assert!((1250.0..1350.0).contains(&len), "path length {len}");
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_world(&WorldConfig { width: 0, ..WorldConfig::default() }).is_err());
        assert!(generate_world(&config(vec![])).is_err());
        assert!(generate_world(&config(vec![Primitive::Stop { frames: 1 }])).is_err());
    }

    #[test]
    fn primitive_parsing() {
        let t = parse_trajectory("straight:250:100, arc:50:1.5:8, stop:20").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(parse_trajectory(&format_trajectory(&t)).unwrap(), t);
        assert!(Primitive::parse("arc:50:8").is_err());
        assert!(Primitive::parse("jump:3").is_err());
    }
}

mod provider {
    
    
    use nalgebra::{Point3, Rotation3, Vector3};
    
    
    
    use anchor_slam::geometry::{Pose, Sim3};
    use anchor_slam::oracle::*;
    use anchor_slam::geometry::umeyama;
    use anchor_slam::oracle::{generate_world, straight_line, WorldConfig};

    fn world() -> GroundTruthWorld {
        generate_world(&WorldConfig { trajectory: straight_line(40.0, 20), seed: 3, ..WorldConfig::default() }).unwrap()
    }

    fn local_truth(world: &GroundTruthWorld, origin: usize, frame: usize) -> Vec<Vector3<f64>> {
        let inv = world.pose(origin).inverse();
        world.gt_points(frame).iter().map(|p| (inv * Point3::from(*p)).coords).collect()
    }

    #[test]
    fn zero_corruption_is_ground_truth() {
        let w = world();
        let provider = SyntheticProvider::new(&w, CorruptionConfig::none()).unwrap();
        assert_eq!(provider.gauge(0), Sim3::identity());
        let g = provider.infer(&InferenceRequest::new(0, vec![4, 5, 6], ContextRole::Preceding)).unwrap();
        g.validate().unwrap();
        assert_eq!(g.local_poses[0], Pose::identity());
        for (slot, &frame) in g.frames.iter().enumerate() {
            let truth = local_truth(&w, 4, frame);
            for (i, (p, t)) in g.points[slot].iter().zip(&truth).enumerate() {
                if !g.sky[slot][i] {
                    assert!((p - t).norm() <= 1e-9 * t.norm(), "{p} vs {t}");
                }
            }
            let pose = w.pose(4).inverse() * w.pose(frame);
            assert!((g.local_poses[slot].translation.vector - pose.translation.vector).norm() < 1e-12);
        }
    }

    #[test]
    fn gauge_is_recovered() {
        let w = world();
        let gauge = Sim3::new(1.2, Rotation3::from_euler_angles(0.01, -0.02, 0.03), Vector3::new(0.4, -0.1, 0.2)).unwrap();
        let provider = SyntheticProvider::new(&w, CorruptionConfig::none()).unwrap().with_gauge(2, gauge);
        let g = provider.infer(&InferenceRequest::new(2, vec![8, 9], ContextRole::Preceding)).unwrap();
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for (slot, &frame) in g.frames.iter().enumerate() {
            for ((p, t), &s) in g.points[slot].iter().zip(local_truth(&w, 8, frame)).zip(&g.sky[slot]) {
                if !s {
                    src.push(t);
                    dst.push(*p);
                }
            }
        }
        let est = umeyama(&src, &dst).unwrap();
        assert!(est.max_abs_diff(&gauge) < 1e-9, "{est} vs {gauge}");
    }

    #[test]
    fn drawn_gauge_respects_bounds() {
        let w = world();
        let c = CorruptionConfig::default();
        let provider = SyntheticProvider::new(&w, c).unwrap();
        for k in 0..200 {
            let g = provider.gauge(k);
            assert!(anchor_slam::geometry::so3::angle(g.rotation()) <= c.gauge_rot_max + 1e-12);
            assert!(g.scale() > 0.0);
        }
        assert_ne!(provider.gauge(0), provider.gauge(1));
    }

    #[test]
    fn outliers_have_low_confidence() {
        let w = world();
        let c = CorruptionConfig { outlier_fraction: 0.3, point_noise_rel: 0.01, confidence_noise: 0.1, ..CorruptionConfig::none() };
        let mut good_runs = 0;
        for seed in 0..100u64 {
            let w = generate_world(&WorldConfig { seed, ..w.config().clone() }).unwrap();
            let provider = SyntheticProvider::new(&w, c).unwrap();
            let (g, out) = provider.infer_traced(&InferenceRequest::new(0, vec![3], ContextRole::Preceding)).unwrap();
            let mut conf: Vec<f64> = g.confidence[0].iter().zip(&g.sky[0]).filter(|(_, &s)| !s).map(|(&c, _)| c).collect();
            conf.sort_by(f64::total_cmp);
            let p30 = conf[(0.3 * (conf.len() - 1) as f64).floor() as usize];
            let flagged: Vec<f64> = g.confidence[0].iter().zip(&out[0]).filter(|(_, &o)| o).map(|(&c, _)| c).collect();
            let below = flagged.iter().filter(|&&v| v < p30).count();
            if below as f64 >= 0.9 * flagged.len() as f64 {
                good_runs += 1;
            }
        }
        assert!(good_runs >= 95, "{good_runs}/100 runs");
    }

    #[test]
    fn context_bias_direction() {
        let w = world();
        let c = CorruptionConfig { context_bias_beta: 0.1, ..CorruptionConfig::none() };
        let provider = SyntheticProvider::new(&w, c).unwrap();
        let frames = vec![5];
        let pre = provider.infer(&InferenceRequest::new(0, frames.clone(), ContextRole::Preceding)).unwrap();
        let post = provider.infer(&InferenceRequest::new(0, frames.clone(), ContextRole::Succeeding)).unwrap();
        let hist = provider.infer(&InferenceRequest::new(0, frames, ContextRole::LoopHistorical)).unwrap();
        let truth = local_truth(&w, 5, 5);
        let i = w.config().width * 30 + 10;
        assert!(pre.points[0][i].norm() < truth[i].norm());
        assert!(post.points[0][i].norm() > truth[i].norm());
        assert!((hist.points[0][i] - truth[i]).norm() < 1e-9);
    }

    #[test]
    fn deterministic_and_role_dependent() {
        let w = world();
        let provider = SyntheticProvider::new(&w, CorruptionConfig::default()).unwrap();
        let req = InferenceRequest::new(1, vec![2, 3, 4], ContextRole::Succeeding);
        assert_eq!(provider.infer(&req).unwrap(), provider.infer(&req).unwrap());
        let other = InferenceRequest { role: ContextRole::Preceding, ..req.clone() };
        assert_ne!(provider.infer(&req).unwrap().points, provider.infer(&other).unwrap().points);
    }

    #[test]
    fn loop_historical_keeps_original_gauge() {
        let w = world();
        let provider = SyntheticProvider::new(&w, CorruptionConfig { point_noise_rel: 0.0, outlier_fraction: 0.0, ..CorruptionConfig::default() }).unwrap();
        let own = provider.infer(&InferenceRequest::new(3, vec![10, 11], ContextRole::Preceding)).unwrap();
        let hist = provider.infer(&InferenceRequest::new(3, vec![10, 11, 17], ContextRole::LoopHistorical)).unwrap();
        assert_eq!(own.local_poses[1], hist.local_poses[1]);
    }

    #[test]
    fn contamination_moves_gauge() {
        let w = world();
        let c = CorruptionConfig { reinjection_contamination: 0.5, ..CorruptionConfig::none() };
        let provider = SyntheticProvider::new(&w, CorruptionConfig { gauge_scale_sigma: 0.1, ..c }).unwrap();
        let clean = InferenceRequest::new(0, vec![1, 2], ContextRole::LoopHistorical);
        let dirty = InferenceRequest { contaminated_by: Some(4), ..clean.clone() };
        let a = provider.infer(&clean).unwrap();
        let b = provider.infer(&dirty).unwrap();
        let expected = (provider.gauge(0).scale().ln() + provider.gauge(4).scale().ln()) / 2.0;
        let ratio = b.points[0][500].norm() / a.points[0][500].norm();
        assert!(a.points[0][500] != b.points[0][500]);
        assert!((ratio.ln() - (expected - provider.gauge(0).scale().ln())).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_requests() {
        let w = world();
        let provider = SyntheticProvider::new(&w, CorruptionConfig::none()).unwrap();
        assert!(provider.infer(&InferenceRequest::new(0, vec![], ContextRole::Preceding)).is_err());
        assert!(provider.infer(&InferenceRequest::new(0, vec![1, 1], ContextRole::Preceding)).is_err());
        assert!(provider.infer(&InferenceRequest::new(0, vec![99], ContextRole::Preceding)).is_err());
        assert!(SyntheticProvider::new(&w, CorruptionConfig { outlier_fraction: 0.5, ..CorruptionConfig::none() }).is_err());
    }
}
