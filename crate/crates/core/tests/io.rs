mod trajectory {
    
    
    
    use nalgebra::{UnitQuaternion, Vector3};
    use anchor_slam::error::Error;
    use anchor_slam::geometry::Pose;
    
    use anchor_slam::io::*;

    #[test]
    fn tum_identity_line() {
        let t = parse_tum("# header\n0.0 1 2 3 0 0 0 1\n").unwrap();
        assert_eq!(t.poses()[0].translation.vector, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t.poses()[0].rotation, UnitQuaternion::identity());
    }

    #[test]
    fn kitti_identity_line() {
        let t = parse_kitti("1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(t.poses()[0], Pose::identity());
        assert_eq!(t.stamps(), &[0.0]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_tum("0 1 2 3 0 0 0 1\n\n1 1 2 x 0 0 0 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_kitti("1 0 0 0 0 1 0 0 0 0 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quaternion_tolerance() {
        assert!(parse_tum("0 0 0 0 0 0 0 1.0005\n").is_ok());
        assert!(matches!(parse_tum("0 0 0 0 0 0 0 1.01\n"), Err(Error::Data(_))));
    }
}

mod pmap {
    
    use nalgebra::Vector3;
    
    use anchor_slam::io::*;

    fn sample() -> PointMapContainer {
        let frame = |o: f64| PmapFrame {
            points: (0..6).map(|i| Vector3::new(i as f64 + o, -0.5, 2.25)).collect(),
            confidence: (0..6).map(|i| i as f64 * 0.125).collect(),
            sky: (0..6).map(|i| i < 2).collect(),
        };
        PointMapContainer { height: 2, width: 3, frames: vec![frame(0.0), frame(10.0)] }
    }

    #[test]
    fn roundtrip_is_exact_for_f32_values() {
        let c = sample();
        let mut bytes = Vec::new();
        write_pmap(&mut bytes, &c).unwrap();
        assert_eq!(bytes.len(), 18 + 2 * 6 * 17);
        assert_eq!(&bytes[..4], b"PMAP");
        assert_eq!(read_pmap(bytes.as_slice()).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = Vec::new();
        write_pmap(&mut bytes, &sample()).unwrap();
        assert!(read_pmap(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_pmap(bad.as_slice()).is_err());
        bytes.push(0);
        assert!(read_pmap(bytes.as_slice()).is_err());
    }
}

mod tables {
    
    
    
    
    use nalgebra::{UnitQuaternion, Vector3};
    
    use anchor_slam::geometry::{Pose, Sim3};
    use anchor_slam::motion::FrameFlowStats;
    
    
    use anchor_slam::registration::Sim3Edge;
    use anchor_slam::io::*;
    use anchor_slam::registration::EdgeKind;

    #[test]
    fn flow_stats_roundtrip() {
        let stats = vec![
            FrameFlowStats { frame_index: 0, mean_flow_mag: 0.1, static_ratio_raw: 1.0 / 3.0, turning_score_raw: 7.25 },
            FrameFlowStats { frame_index: 1, mean_flow_mag: 1e-7, static_ratio_raw: 0.0, turning_score_raw: 0.0 },
        ];
        let text = write_flow_stats(&stats, &[0.0, 0.1]).unwrap();
        assert_eq!(read_flow_stats(&text).unwrap(), (stats, vec![0.0, 0.1]));
        assert!(read_flow_stats("frame,x\n").is_err());
    }

    #[test]
    fn edge_roundtrip() {
        let t = Sim3::new(1.25, nalgebra::Rotation3::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let edges = vec![Sim3Edge { from: 2, to: 7, kind: EdgeKind::Loop, transform: t, inlier_ratio: 0.75, accepted: true }];
        let back = read_edges(&write_edges(&edges)).unwrap();
        assert_eq!(back[0].from, 2);
        assert_eq!(back[0].kind, EdgeKind::Loop);
        assert!(back[0].transform.max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn pose_sidecar_is_bit_exact() {
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1);
        let p = Pose::from_parts(Vector3::new(0.1, 1.0 / 3.0, -7.0).into(), q);
        let (frames, poses) = read_pose_sidecar(&write_pose_sidecar(&[4], &[p])).unwrap();
        assert_eq!(frames, vec![4]);
        assert_eq!(poses[0], p);
    }

    #[test]
    fn loop_candidates_roundtrip() {
        let c = vec![LoopCandidate { segment: 9, historical_keyframe: 40, query_keyframe: 512 }];
        assert_eq!(read_loop_candidates(&write_loop_candidates(&c)).unwrap(), c);
    }
}

mod roundtrip {
    use anchor_slam::io::{load_trajectory, save_trajectory, TrajectoryFormat};
    use anchor_slam::metrics::{yaw_pose, Trajectory};

    fn hundred_poses() -> Trajectory {
        let poses = (0..100)
            .map(|i| {
                let k = i as f64;
                let mut p = yaw_pose(3.0 * k.cos(), 2.0 * k, 0.1 * k.sin(), 0.07 * k);
                p.rotation = nalgebra::UnitQuaternion::from_euler_angles(0.3 * k.sin(), -0.2 * k.cos(), 0.0) * p.rotation;
                p
            })
            .collect();
        Trajectory::new((0..100).map(|i| i as f64).collect(), poses).unwrap()
    }

    #[test]
    fn save_then_load_preserves_poses() {
        let dir = tempfile::tempdir().unwrap();
        let t = hundred_poses();
        for format in [TrajectoryFormat::Tum, TrajectoryFormat::Kitti] {
            let path = dir.path().join(format!("t.{}", format.extension()));
            save_trajectory(&path, &t, format).unwrap();
            let back = load_trajectory(&path, format).unwrap();
            assert_eq!(back.len(), 100);
            for (a, b) in t.poses().iter().zip(back.poses()) {
                assert!((a.translation.vector - b.translation.vector).amax() < 1e-9);
                assert!((a.rotation.to_rotation_matrix().matrix() - b.rotation.to_rotation_matrix().matrix()).amax() < 1e-9);
            }
            for (a, b) in t.stamps().iter().zip(back.stamps()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
