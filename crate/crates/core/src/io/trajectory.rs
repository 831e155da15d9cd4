use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use super::{content_lines, parse_field, write_text};
use crate::error::{Error, Result};
use crate::geometry::{so3, Pose};
use crate::metrics::Trajectory;

const QUATERNION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Tum,
    Kitti,
}

impl FromStr for TrajectoryFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tum" => Ok(TrajectoryFormat::Tum),
            "kitti" => Ok(TrajectoryFormat::Kitti),
            _ => Err(Error::Config(format!("unknown trajectory format `{s}`"))),
        }
    }
}

impl TrajectoryFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TrajectoryFormat::Tum => "tum",
            TrajectoryFormat::Kitti => "kitti",
        }
    }
}

/// `timestamp tx ty tz qx qy qz qw` per line.
pub fn to_tum(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for (t, p) in trajectory.stamps().iter().zip(trajectory.poses()) {
        let v = p.translation.vector;
        let q = p.rotation.quaternion();
        writeln!(out, "{t} {} {} {} {} {} {} {}", v.x, v.y, v.z, q.i, q.j, q.k, q.w).unwrap();
    }
    out
}

/// Accepts a quaternion within tolerance of unit norm and renormalizes it.
pub(crate) fn unit_quaternion(x: f64, y: f64, z: f64, w: f64, line: usize) -> Result<UnitQuaternion<f64>> {
    let q = Quaternion::new(w, x, y, z);
    let norm = q.norm();
    if !((norm - 1.0).abs() <= QUATERNION_TOLERANCE) {
        return Err(Error::Data(format!("line {line}: quaternion norm {norm} is not within {QUATERNION_TOLERANCE} of 1")));
    }
    Ok(if norm == 1.0 { UnitQuaternion::new_unchecked(q) } else { UnitQuaternion::from_quaternion(q) })
}

pub fn parse_tum(text: &str) -> Result<Trajectory> {
    let mut stamps = Vec::new();
    let mut poses = Vec::new();
    for (line, content) in content_lines(text) {
        let mut tok = content.split_whitespace();
        let mut vals = [0.0f64; 8];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = parse_field(tok.next(), line, &format!("field {}", i + 1))?;
        }
        if tok.next().is_some() {
            return Err(Error::Parse { line, message: "expected 8 fields".into() });
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse { line, message: "non-finite value".into() });
        }
        let q = unit_quaternion(vals[4], vals[5], vals[6], vals[7], line)?;
        stamps.push(vals[0]);
        poses.push(Pose::from_parts(Vector3::new(vals[1], vals[2], vals[3]).into(), q));
    }
    Trajectory::new(stamps, poses)
}

/// Row-major 3×4 pose per line.
pub fn to_kitti(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for p in trajectory.poses() {
        let r = p.rotation.to_rotation_matrix();
        let m = r.matrix();
        let t = p.translation.vector;
        for row in 0..3 {
            if row > 0 {
                out.push(' ');
            }
            write!(out, "{} {} {} {}", m[(row, 0)], m[(row, 1)], m[(row, 2)], t[row]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Timestamps are the line ordinal (frame index).
pub fn parse_kitti(text: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (line, content) in content_lines(text) {
        let vals: Vec<f64> = content
            .split_whitespace()
            .enumerate()
            .map(|(i, t)| parse_field(Some(t), line, &format!("field {}", i + 1)))
            .collect::<Result<_>>()?;
        if vals.len() != 12 {
            return Err(Error::Parse { line, message: format!("expected 12 fields, got {}", vals.len()) });
        }
        let m = Matrix3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]);
        if (m * m.transpose() - Matrix3::identity()).amax() > QUATERNION_TOLERANCE {
            return Err(Error::Data(format!("line {line}: rotation block is not orthonormal")));
        }
        let r = if (m * m.transpose() - Matrix3::identity()).amax() > 1e-12 {
            so3::orthonormalize(&m)?
        } else {
            Rotation3::from_matrix_unchecked(m)
        };
        poses.push(Pose::from_parts(
            Vector3::new(vals[3], vals[7], vals[11]).into(),
            UnitQuaternion::from_rotation_matrix(&r),
        ));
    }
    let stamps = (0..poses.len()).map(|i| i as f64).collect();
    Trajectory::new(stamps, poses)
}

pub fn save_trajectory(path: &Path, trajectory: &Trajectory, format: TrajectoryFormat) -> Result<()> {
    let text = match format {
        TrajectoryFormat::Tum => to_tum(trajectory),
        TrajectoryFormat::Kitti => to_kitti(trajectory),
    };
    write_text(path, &text)
}

pub fn load_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    match format {
        TrajectoryFormat::Tum => parse_tum(&text),
        TrajectoryFormat::Kitti => parse_kitti(&text),
    }
}
