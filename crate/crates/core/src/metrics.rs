//! Trajectory evaluation: Sim(3)-aligned ATE and segment-based translation drift.

use std::fmt;

use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{umeyama, Pose, Sim3};

pub const ASSOCIATION_WINDOW: f64 = 0.05;
pub const DEFAULT_SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Timestamped rigid poses, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::invalid("timestamp and pose counts differ"));
        }
        if let Some(i) = stamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!("timestamps not strictly increasing at index {}", i + 1)));
        }
        if stamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("non-finite timestamp".into()));
        }
        Ok(Self { stamps, poses })
    }

    /// Poses sampled every `interval` seconds starting at zero.
    pub fn uniform(poses: Vec<Pose>, interval: f64) -> Result<Self> {
        let stamps = (0..poses.len()).map(|i| i as f64 * interval).collect();
        Self::new(stamps, poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.translation.vector).collect()
    }

    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].translation.vector - w[0].translation.vector).norm()).sum()
    }

    /// Applies a similarity to every pose: rotations are pre-multiplied, positions mapped.
    pub fn transformed(&self, s: &Sim3) -> Trajectory {
        let q = s.quaternion();
        let poses = self
            .poses
            .iter()
            .map(|p| Pose::from_parts(s.apply(&p.translation.vector).into(), q * p.rotation))
            .collect();
        Trajectory { stamps: self.stamps.clone(), poses }
    }

    pub fn subset(&self, indices: &[usize]) -> Trajectory {
        Trajectory {
            stamps: indices.iter().map(|&i| self.stamps[i]).collect(),
            poses: indices.iter().map(|&i| self.poses[i]).collect(),
        }
    }
}

/// Nearest-timestamp one-to-one matches `(estimate index, reference index)`.
pub fn associate(estimate: &Trajectory, reference: &Trajectory, window: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut last_ref: Option<usize> = None;
    let rs = reference.stamps();
    for (i, &t) in estimate.stamps().iter().enumerate() {
        let k = rs.partition_point(|&r| r < t);
        let best = [k.checked_sub(1), (k < rs.len()).then_some(k)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (rs[a] - t).abs().total_cmp(&(rs[b] - t).abs()));
        if let Some(j) = best {
            if (rs[j] - t).abs() <= window && last_ref.is_none_or(|l| j > l) {
                pairs.push((i, j));
                last_ref = Some(j);
            }
        }
    }
    pairs
}

fn matched_positions(estimate: &Trajectory, reference: &Trajectory) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    let pairs = associate(estimate, reference, ASSOCIATION_WINDOW);
    if pairs.len() < 3 {
        return Err(Error::InsufficientAssociation { needed: 3, got: pairs.len() });
    }
    Ok((
        pairs.iter().map(|&(i, _)| estimate.poses()[i].translation.vector).collect(),
        pairs.iter().map(|&(_, j)| reference.poses()[j].translation.vector).collect(),
    ))
}

/// Similarity between collinear point sets: the minimal rotation taking the source
/// line direction onto the destination one.
fn align_collinear(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Sim3> {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vector3<f64>>() / n;
    let md = dst.iter().sum::<Vector3<f64>>() / n;
    let axis = |pts: &[Vector3<f64>], m: &Vector3<f64>| {
        let cov = pts.iter().fold(nalgebra::Matrix3::zeros(), |c, p| c + (p - m) * (p - m).transpose());
        let eig = cov.symmetric_eigen();
        let (i, _) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        eig.eigenvectors.column(i).into_owned()
    };
    let a = axis(src, &ms);
    let mut b = axis(dst, &md);
    let proj_s: Vec<f64> = src.iter().map(|p| (p - ms).dot(&a)).collect();
    let proj_d: Vec<f64> = dst.iter().map(|p| (p - md).dot(&b)).collect();
    let cross: f64 = proj_s.iter().zip(&proj_d).map(|(x, y)| x * y).sum();
    if cross < 0.0 {
        b = -b;
    }
    let var_s: f64 = proj_s.iter().map(|x| x * x).sum();
    if !(var_s > 0.0) {
        return Err(Error::DegenerateGeometry("estimate positions have zero spread".into()));
    }
    let scale = cross.abs() / var_s;
    let rotation = UnitQuaternion::rotation_between(&a, &b)
        .unwrap_or_else(|| {
            let ortho = a.cross(&Vector3::x()).try_normalize(1e-6).unwrap_or_else(|| a.cross(&Vector3::y()).normalize());
            UnitQuaternion::from_axis_angle(&Unit::new_normalize(ortho), std::f64::consts::PI)
        })
        .to_rotation_matrix();
    Sim3::new(scale, rotation, md - rotation * ms * scale)
}

/// Similarity mapping the estimate onto the reference, fitted on associated positions.
pub fn align_sim3(estimate: &Trajectory, reference: &Trajectory) -> Result<Sim3> {
    let (src, dst) = matched_positions(estimate, reference)?;
    match umeyama(&src, &dst) {
        Err(Error::DegenerateGeometry(_)) => align_collinear(&src, &dst),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    pub alignment: Sim3,
    pub matched: usize,
    pub unmatched: usize,
}

pub fn ate(estimate: &Trajectory, reference: &Trajectory) -> Result<AteResult> {
    let alignment = align_sim3(estimate, reference)?;
    let (src, dst) = matched_positions(estimate, reference)?;
    let sq: f64 = src.iter().zip(&dst).map(|(x, y)| (alignment.apply(x) - y).norm_squared()).sum();
    Ok(AteResult {
        rmse: (sq / src.len() as f64).sqrt(),
        alignment,
        matched: src.len(),
        unmatched: estimate.len() - src.len(),
    })
}

pub fn ate_rmse(estimate: &Trajectory, reference: &Trajectory) -> Result<f64> {
    ate(estimate, reference).map(|a| a.rmse)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftResult {
    pub percent: f64,
    pub segments: usize,
}

/// Mean relative translation error over reference-arc-length segments, in percent.
/// `None` when the reference is shorter than every segment length.
pub fn translation_drift(estimate: &Trajectory, reference: &Trajectory, segment_lengths: &[f64]) -> Result<Option<DriftResult>> {
    if segment_lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("segment lengths must be positive"));
    }
    let pairs = associate(estimate, reference, ASSOCIATION_WINDOW);
    if pairs.len() < 2 {
        return Err(Error::InsufficientAssociation { needed: 2, got: pairs.len() });
    }
    let est: Vec<&Pose> = pairs.iter().map(|&(i, _)| &estimate.poses()[i]).collect();
    let rf: Vec<&Pose> = pairs.iter().map(|&(_, j)| &reference.poses()[j]).collect();
    let mut dist = vec![0.0];
    for w in rf.windows(2) {
        dist.push(dist.last().unwrap() + (w[1].translation.vector - w[0].translation.vector).norm());
    }
    let total = *dist.last().unwrap();
    let lengths: Vec<f64> = segment_lengths.iter().copied().filter(|&l| l <= total).collect();
    if lengths.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..rf.len() {
        for &len in &lengths {
            let target = dist[i] + len;
            let j = i + dist[i..].partition_point(|&d| d < target);
            if j >= rf.len() {
                continue;
            }
            let d_ref = rf[i].rotation.inverse() * (rf[j].translation.vector - rf[i].translation.vector);
            let d_est = est[i].rotation.inverse() * (est[j].translation.vector - est[i].translation.vector);
            sum += (d_est - d_ref).norm() / len;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    Ok(Some(DriftResult { percent: 100.0 * sum / count as f64, segments: count }))
}

/// Flat key-value metric summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ate_rmse_m: f64,
    pub drift_pct: Option<f64>,
    pub matched_poses: usize,
    pub unmatched_poses: usize,
    pub segments_evaluated: usize,
}

impl MetricReport {
    /// ATE after Sim(3) alignment, and drift measured on the aligned estimate.
    pub fn evaluate(estimate: &Trajectory, reference: &Trajectory, segment_lengths: &[f64]) -> Result<Self> {
        let a = ate(estimate, reference)?;
        let drift = translation_drift(&estimate.transformed(&a.alignment), reference, segment_lengths)?;
        Ok(Self {
            ate_rmse_m: a.rmse,
            drift_pct: drift.map(|d| d.percent),
            matched_poses: a.matched,
            unmatched_poses: a.unmatched,
            segments_evaluated: drift.map_or(0, |d| d.segments),
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ate_rmse_m={}", self.ate_rmse_m)?;
        match self.drift_pct {
            Some(d) => writeln!(f, "drift_pct={d}")?,
            None => writeln!(f, "drift_pct=n/a")?,
        }
        writeln!(f, "matched_poses={}", self.matched_poses)?;
        writeln!(f, "unmatched_poses={}", self.unmatched_poses)?;
        writeln!(f, "segments_evaluated={}", self.segments_evaluated)
    }
}

/// Rigid helper for tests and demos: heading-only rotation about z.
pub fn yaw_pose(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
    Pose::from_parts(Vector3::new(x, y, z).into(), UnitQuaternion::from_rotation_matrix(&Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)))
}
