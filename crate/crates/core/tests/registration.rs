use anchor_slam::geometry::{so3, Rotation3, Sim3, Vector3};
use anchor_slam::registration::{
    build_valid_mask, estimate_robust_sim3, robust_sim3, HuberDelta, ValidMask,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n).map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect()
}

fn truth() -> Sim3 {
    Sim3::new(2.0, Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()), Vector3::new(5.0, 0.0, -1.0)).unwrap()
}

/// Replaces `fraction` of `dst` by points drawn uniformly from its bounding box.
fn contaminate(rng: &mut ChaCha8Rng, dst: &mut [Vector3<f64>], fraction: f64) -> usize {
    let lo = dst.iter().fold(Vector3::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = dst.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let k = (fraction * dst.len() as f64).round() as usize;
    for p in dst.iter_mut().take(k) {
        *p = Vector3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(lo.z..hi.z));
    }
    k
}

#[test]
fn outlier_monte_carlo() {
    let s = truth();
    let mut ok = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = cloud(&mut rng, 2000);
        let mut dst: Vec<_> = src.iter().map(|x| s.apply(x)).collect();
        contaminate(&mut rng, &mut dst, 0.3);
        let fit = robust_sim3(&src, &dst, HuberDelta::default(), 20).unwrap();
        assert!(fit.cost_history.windows(2).all(|c| c[1] <= c[0]), "cost increased: {:?}", fit.cost_history);
        let t = fit.transform;
        let rot_err = so3::angle(&(t.rotation().inverse() * s.rotation())).to_degrees();
        let scale_err = (t.scale() / s.scale() - 1.0).abs();
        if rot_err < 0.1 && scale_err < 1e-3 && (fit.inlier_ratio - 0.7).abs() <= 0.05 {
            ok += 1;
        }
    }
    assert!(ok >= 48, "{ok}/50");
}

#[test]
fn operation_count_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let big = cloud(&mut rng, 4000);
    let per_pixel: Vec<f64> = [500, 1000, 2000, 4000]
        .iter()
        .map(|&n| {
            let p = &big[..n];
            let fit = robust_sim3(p, p, HuberDelta::default(), 20).unwrap();
            fit.operations as f64 / n as f64
        })
        .collect();
    assert!(per_pixel.iter().all(|&c| c == per_pixel[0]), "{per_pixel:?}");
}

#[test]
fn mask_conjunction_per_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 48 * 64;
    let ci: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let cj: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let sky: Vec<bool> = (0..n).map(|i| i < 256 || rng.random_bool(0.05)).collect();
    let mask = build_valid_mask(&ci, &cj, &sky, 0.5).unwrap();
    let mut ground: Vec<f64> = (0..n).filter(|&i| !sky[i]).map(|i| ci[i].min(cj[i])).collect();
    ground.sort_by(f64::total_cmp);
    let q = ground[((ground.len() - 1) as f64 * 0.5).floor() as usize];
    for i in 0..n {
        assert_eq!(mask.valid[i], !sky[i] && ci[i].min(cj[i]) > q);
    }
    assert_eq!(mask.count, mask.valid.iter().filter(|&&v| v).count());
}

fn arb_sim3() -> impl Strategy<Value = Sim3> {
    (0.3f64..3.0, prop::array::uniform3(-1.5f64..1.5), prop::array::uniform3(-10.0f64..10.0))
        .prop_map(|(s, r, t)| Sim3::new(s, so3::exp(&Vector3::from(r)), Vector3::from(t)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swapped_inputs_give_inverse(s in arb_sim3(), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = cloud(&mut rng, 300);
        let q: Vec<_> = p.iter().map(|x| s.apply(x)).collect();
        let mask = ValidMask { valid: vec![true; p.len()], count: p.len() };
        let fwd = estimate_robust_sim3(&p, &q, &mask, HuberDelta::default(), 20).unwrap();
        let bwd = estimate_robust_sim3(&q, &p, &mask, HuberDelta::default(), 20).unwrap();
        prop_assert!(fwd.transform.inverse().max_abs_diff(&bwd.transform) < 1e-6);
    }

    #[test]
    fn scale_equivariance(s in arb_sim3(), k in 0.1f64..10.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = cloud(&mut rng, 300);
        let q: Vec<_> = p.iter().map(|x| s.apply(x)).collect();
        let mask = ValidMask { valid: vec![true; p.len()], count: p.len() };
        let base = estimate_robust_sim3(&p, &q, &mask, HuberDelta::default(), 20).unwrap().transform;
        let pk: Vec<_> = p.iter().map(|x| x * k).collect();
        let qk: Vec<_> = q.iter().map(|x| x * k).collect();
        let scaled = estimate_robust_sim3(&pk, &qk, &mask, HuberDelta::default(), 20).unwrap().transform;
        prop_assert!((scaled.rotation().matrix() - base.rotation().matrix()).amax() < 1e-9);
        prop_assert!((scaled.scale() - base.scale()).abs() < 1e-9 * base.scale());
        prop_assert!((scaled.translation() - base.translation() * k).amax() < 1e-9 * k.max(1.0) * 10.0);
    }

    #[test]
    fn irls_cost_never_increases(seed in 0u64..10_000, frac in 0.0f64..0.45, noise in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = truth();
        let p = cloud(&mut rng, 400);
        let mut q: Vec<_> = p.iter().map(|x| s.apply(x) + Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * noise).collect();
        contaminate(&mut rng, &mut q, frac);
        let fit = robust_sim3(&p, &q, HuberDelta::default(), 20).unwrap();
        for c in fit.cost_history.windows(2) {
            prop_assert!(c[1] <= c[0]);
        }
    }
}



mod basic {
    use nalgebra::Vector3;
    use anchor_slam::error::Error;
    use anchor_slam::geometry::Sim3;

    use anchor_slam::registration::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect()
    }

    fn all_valid(n: usize) -> ValidMask {
        ValidMask { valid: vec![true; n], count: n }
    }

    #[test]
    fn anchor_selection() {
        assert_eq!(select_overlap_anchor(&[10, 11, 12, 13, 14], 1).unwrap().frames, vec![12]);
        assert_eq!(select_overlap_anchor(&[7], 3).unwrap().frames, vec![7]);
        assert_eq!(select_overlap_anchor(&[4, 5, 6, 7], 2).unwrap().frames, vec![5, 6]);
        assert_eq!(select_overlap_anchor(&[10, 11, 12, 13, 14], 3).unwrap().frames, vec![11, 12, 13]);
        assert!(matches!(select_overlap_anchor(&[], 3), Err(Error::MissingAnchor(_))));
    }

    #[test]
    fn mask_examples() {
        let sky = build_valid_mask(&[1.0; 4], &[1.0; 4], &[true; 4], 0.5).unwrap();
        assert_eq!(sky.count, 0);
        let uniform = build_valid_mask(&[0.7; 4], &[0.9; 4], &[false; 4], 0.5).unwrap();
        assert_eq!(uniform.count, 0);
        let m = build_valid_mask(&[1.0, 2.0, 3.0, 4.0], &[5.0, 2.0, 3.5, 4.0], &[false; 4], 0.5).unwrap();
        assert_eq!(m.valid, vec![false, false, true, true]);
    }

    #[test]
    fn identity_registration() {
        let p = cloud(200, 1);
        let fit = estimate_robust_sim3(&p, &p, &all_valid(p.len()), HuberDelta::default(), 20).unwrap();
        assert!(fit.transform.max_abs_diff(&Sim3::identity()) < 1e-12);
        assert_eq!(fit.inlier_ratio, 1.0);
    }

    #[test]
    fn noiseless_recovery_in_one_iteration() {
        let truth = Sim3::new(2.0, Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()), Vector3::new(5.0, 0.0, -1.0)).unwrap();
        let p = cloud(2000, 2);
        let q: Vec<_> = p.iter().map(|x| truth.apply(x)).collect();
        let fit = estimate_robust_sim3(&p, &q, &all_valid(p.len()), HuberDelta::default(), 20).unwrap();
        assert!(fit.transform.max_abs_diff(&truth) < 1e-9 * 5.0);
        assert_eq!(fit.iterations, 1);
        assert_eq!(fit.inlier_ratio, 1.0);
    }

    #[test]
    fn too_few_pixels() {
        let p = cloud(9, 3);
        assert!(matches!(
            estimate_robust_sim3(&p, &p, &all_valid(9), HuberDelta::default(), 20),
            Err(Error::InsufficientCorrespondences { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn verification_boundary() {
        let edge = Sim3Edge { from: 0, to: 1, kind: EdgeKind::Odometry, transform: Sim3::identity(), inlier_ratio: 0.9, accepted: false };
        assert!(verify_constraint(edge.clone(), 0.5).accepted);
        assert!(!verify_constraint(Sim3Edge { inlier_ratio: 0.3, ..edge.clone() }, 0.5).accepted);
        let at = verify_constraint(Sim3Edge { inlier_ratio: 0.5, ..edge }, 0.5);
        assert!(at.accepted);
        assert_eq!(at.transform, Sim3::identity());
    }

    #[test]
    fn huber_mode_parsing() {
        assert_eq!("mad".parse::<HuberDelta>().unwrap(), HuberDelta::default());
        assert_eq!("fixed:0.5".parse::<HuberDelta>().unwrap(), HuberDelta::Fixed(0.5));
        assert!("fixed:-1".parse::<HuberDelta>().is_err());
        assert!("cauchy".parse::<HuberDelta>().is_err());
    }
}
